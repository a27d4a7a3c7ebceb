//! Scalar activations shared by FFN experts and modulated (activated) routers.

use serde::{Deserialize, Serialize};

/// Activation kind. `Poly(p)` is the monomial z^p with integer p >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Gelu,
    Poly(u32),
}

impl Activation {
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Gelu => z * std_normal_cdf(z),
            Activation::Poly(p) => z.powi(p as i32),
        }
    }

    /// First derivative.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Gelu => std_normal_cdf(z) + z * std_normal_pdf(z),
            Activation::Poly(p) => {
                if p == 0 {
                    0.0
                } else {
                    f64::from(p) * z.powi(p as i32 - 1)
                }
            }
        }
    }

    pub fn label(self) -> String {
        match self {
            Activation::Sigmoid => "sigmoid".into(),
            Activation::Tanh => "tanh".into(),
            Activation::Gelu => "gelu".into(),
            Activation::Poly(p) => format!("poly({p})"),
        }
    }
}

/// Overflow-safe logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF via erf.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
