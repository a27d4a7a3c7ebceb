//! Expert functions: affine experts on the raw input and single-hidden-unit
//! FFN experts on the direction x/|x|.

use crate::activation::Activation;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Threshold below which an input is treated as the origin when normalizing.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// A single expert. `Linear` is a*x + b on the raw input; `Ffn` is
/// c * act(a*u + b) with u = x/|x| (u = 0 when |x| < 1e-12).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExpertSpec {
    Linear {
        a: Vec<f64>,
        b: f64,
    },
    Ffn {
        a: Vec<f64>,
        b: f64,
        c: f64,
        activation: Activation,
    },
}

impl ExpertSpec {
    pub fn dimension(&self) -> usize {
        match self {
            ExpertSpec::Linear { a, .. } | ExpertSpec::Ffn { a, .. } => a.len(),
        }
    }

    /// Number of free parameters: d+1 for linear (a, b), d+2 for FFN (a, b, c).
    pub fn param_count(&self) -> usize {
        match self {
            ExpertSpec::Linear { a, .. } => a.len() + 1,
            ExpertSpec::Ffn { a, .. } => a.len() + 2,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            ExpertSpec::Linear { .. } => "linear",
            ExpertSpec::Ffn { .. } => "ffn",
        }
    }

    /// True when both experts have the same kind, dimension, and activation,
    /// i.e. their parameter vectors are directly comparable.
    pub fn same_kind(&self, other: &ExpertSpec) -> bool {
        match (self, other) {
            (ExpertSpec::Linear { a, .. }, ExpertSpec::Linear { a: a2, .. }) => {
                a.len() == a2.len()
            }
            (
                ExpertSpec::Ffn { a, activation, .. },
                ExpertSpec::Ffn {
                    a: a2,
                    activation: act2,
                    ..
                },
            ) => a.len() == a2.len() && activation == act2,
            _ => false,
        }
    }

    /// Parameter vector in canonical order: a coordinates, then b, then c.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ExpertSpec::Linear { a, b } => {
                let mut v = a.clone();
                v.push(*b);
                v
            }
            ExpertSpec::Ffn { a, b, c, .. } => {
                let mut v = a.clone();
                v.push(*b);
                v.push(*c);
                v
            }
        }
    }

    pub fn set_params(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "expert params",
                expected: self.param_count(),
                got: v.len(),
            });
        }
        match self {
            ExpertSpec::Linear { a, b } => {
                let d = a.len();
                a.copy_from_slice(&v[..d]);
                *b = v[d];
            }
            ExpertSpec::Ffn { a, b, c, .. } => {
                let d = a.len();
                a.copy_from_slice(&v[..d]);
                *b = v[d];
                *c = v[d + 1];
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match self {
            ExpertSpec::Linear { a, b } => a.iter().all(|v| v.is_finite()) && b.is_finite(),
            ExpertSpec::Ffn { a, b, c, .. } => {
                a.iter().all(|v| v.is_finite()) && b.is_finite() && c.is_finite()
            }
        };
        if !finite {
            return Err(Error::NonFinite {
                context: "expert parameters".into(),
            });
        }
        if let ExpertSpec::Ffn {
            activation: Activation::Poly(p),
            ..
        } = self
        {
            if *p == 0 {
                return Err(Error::InvalidArgument {
                    arg: "activation",
                    reason: "poly degree must be >= 1".into(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension());
        match self {
            ExpertSpec::Linear { a, b } => dot(a, x) + b,
            ExpertSpec::Ffn { a, b, c, activation } => {
                let (u, _) = normalized(x);
                c * activation.value(dot(a, &u) + b)
            }
        }
    }

    /// Evaluates the expert and writes d(expert)/d(params) into `grad`
    /// (canonical order a..., b, c). Returns the expert value.
    pub fn eval_with_param_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.param_count());
        match self {
            ExpertSpec::Linear { a, b } => {
                let d = a.len();
                grad[..d].copy_from_slice(x);
                grad[d] = 1.0;
                dot(a, x) + b
            }
            ExpertSpec::Ffn { a, b, c, activation } => {
                let d = a.len();
                let (u, _) = normalized(x);
                let z = dot(a, &u) + b;
                let s = activation.value(z);
                let ds = activation.derivative(z);
                for t in 0..d {
                    grad[t] = c * ds * u[t];
                }
                grad[d] = c * ds;
                grad[d + 1] = s;
                c * s
            }
        }
    }

    /// Partial derivative with respect to a single parameter coordinate
    /// (canonical order). Used by the identifiability set builders.
    pub fn param_partial(&self, x: &[f64], coord: usize) -> f64 {
        let mut grad = vec![0.0; self.param_count()];
        self.eval_with_param_grad(x, &mut grad);
        grad[coord]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Direction of x, with the convention x/|x| = 0 for |x| < 1e-12.
/// Also returns the norm.
pub fn normalized(x: &[f64]) -> (Vec<f64>, f64) {
    let norm = dot(x, x).sqrt();
    if norm < NORMALIZE_EPS {
        (vec![0.0; x.len()], norm)
    } else {
        (x.iter().map(|v| v / norm).collect(), norm)
    }
}
