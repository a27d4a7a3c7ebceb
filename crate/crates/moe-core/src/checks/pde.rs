//! Exact parameter-interaction identities and their residuals.
//!
//! Lifting an expert by its gating factor produces functions whose partial
//! derivatives collide for degenerate expert or router choices: with a
//! linear expert, differentiating the lift in omega and the expert offset b
//! reproduces the derivative in the expert slope a, and with a linear
//! router score the temperature derivative is a multiple of the omega
//! derivative. Each residual below computes the two sides of one identity
//! through separate derivative routes and returns the difference, so a
//! structural collision shows up as a residual at roundoff level while a
//! non-degenerate replacement (normalized-input FFN expert, activated
//! router) pushes it far above it.
//!
//! The flat and hierarchical identities are exact in floating point: both
//! sides reduce to products of the same factors in commuted order. The
//! temperature identity divides by tau on one route and by tau squared on
//! the other, so its residual carries a few ulps of noise; on the audit's
//! probe box it stays below 1e-13, an order under the 1e-12 ceiling the
//! identity regimes are held to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::expert::dot;
use crate::model::{ExpertSpec, Router};
use crate::rng::Stream;

/// Ceiling for residuals in regimes where the identity holds.
pub const IDENTITY_CEILING: f64 = 1e-12;
/// Floor for residuals in regimes where the identity is broken.
pub const VIOLATION_FLOOR: f64 = 1e-3;

/// An expert multiplied by its gating lift, with the analytic partial
/// derivatives the interaction identities compare.
#[derive(Debug, Clone)]
pub struct LiftedExpert {
    pub expert: ExpertSpec,
}

impl LiftedExpert {
    pub fn new(expert: ExpertSpec) -> Result<Self> {
        expert.validate()?;
        Ok(Self { expert })
    }

    fn dim(&self) -> usize {
        self.expert.dimension()
    }

    fn offset_coord(&self) -> usize {
        self.dim()
    }

    /// F(x) = exp(omega.x) * E(x).
    pub fn eval_flat(&self, omega: &[f64], x: &[f64]) -> f64 {
        dot(omega, x).exp() * self.expert.eval(x)
    }

    /// d2F/domega db, one coordinate per entry of x.
    pub fn flat_mixed_omega_offset(&self, omega: &[f64], x: &[f64]) -> Vec<f64> {
        let lifted_db = dot(omega, x).exp() * self.expert.param_partial(x, self.offset_coord());
        x.iter().map(|&xu| xu * lifted_db).collect()
    }

    /// dF/da, one coordinate per entry of the expert slope.
    pub fn flat_slope_grad(&self, omega: &[f64], x: &[f64]) -> Vec<f64> {
        let lift = dot(omega, x).exp();
        (0..self.dim())
            .map(|u| lift * self.expert.param_partial(x, u))
            .collect()
    }

    /// F(x) = exp(pi(x, omega)/tau) * E(x) with pi the router score.
    pub fn eval_temp(&self, omega: &[f64], tau: f64, router: Router, x: &[f64]) -> f64 {
        (Self::score(router, omega, x) / tau).exp() * self.expert.eval(x)
    }

    /// dF/dtau.
    pub fn temp_dtau(&self, omega: &[f64], tau: f64, router: Router, x: &[f64]) -> f64 {
        let pi = Self::score(router, omega, x);
        -pi / (tau * tau) * (pi / tau).exp() * self.expert.eval(x)
    }

    /// dF/domega, one coordinate per router parameter.
    pub fn temp_domega(&self, omega: &[f64], tau: f64, router: Router, x: &[f64]) -> Vec<f64> {
        let pi = Self::score(router, omega, x);
        let f = (pi / tau).exp() * self.expert.eval(x);
        (0..omega.len())
            .map(|u| Self::score_partial(router, omega, x, u) * f / tau)
            .collect()
    }

    /// F(x) = exp(omega.x) * exp(kappa.x) * E(x).
    pub fn eval_hier(&self, omega: &[f64], kappa: &[f64], x: &[f64]) -> f64 {
        dot(omega, x).exp() * dot(kappa, x).exp() * self.expert.eval(x)
    }

    fn hier_mixed_offset(&self, omega: &[f64], kappa: &[f64], x: &[f64]) -> Vec<f64> {
        let lifted_db = dot(omega, x).exp()
            * dot(kappa, x).exp()
            * self.expert.param_partial(x, self.offset_coord());
        x.iter().map(|&xu| xu * lifted_db).collect()
    }

    fn hier_slope_grad(&self, omega: &[f64], kappa: &[f64], x: &[f64]) -> Vec<f64> {
        let lift = dot(omega, x).exp() * dot(kappa, x).exp();
        (0..self.dim())
            .map(|u| lift * self.expert.param_partial(x, u))
            .collect()
    }

    fn score(router: Router, omega: &[f64], x: &[f64]) -> f64 {
        match router {
            Router::Linear => dot(omega, x),
            Router::Activated(act) => act.value(dot(omega, x)),
        }
    }

    fn score_partial(router: Router, omega: &[f64], x: &[f64], u: usize) -> f64 {
        match router {
            Router::Linear => x[u],
            Router::Activated(act) => act.derivative(dot(omega, x)) * x[u],
        }
    }
}

fn norm_of_diff(lhs: &[f64], rhs: &[f64]) -> f64 {
    lhs.iter()
        .zip(rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn check_dims(expert: &ExpertSpec, omega: &[f64], x: &[f64]) -> Result<()> {
    if omega.len() != expert.dimension() || x.len() != expert.dimension() {
        return Err(Error::DimensionMismatch {
            what: "interaction residual input",
            expected: expert.dimension(),
            got: if omega.len() != expert.dimension() {
                omega.len()
            } else {
                x.len()
            },
        });
    }
    Ok(())
}

/// Norm of d2F/domega db - dF/da for F = exp(omega.x) * E(x). Zero in
/// floating point when the expert is linear; strictly positive off the unit
/// sphere for normalized-input FFN experts.
pub fn pde_residual_expert(expert: &ExpertSpec, omega: &[f64], x: &[f64]) -> Result<f64> {
    check_dims(expert, omega, x)?;
    let lifted = LiftedExpert::new(expert.clone())?;
    Ok(norm_of_diff(
        &lifted.flat_mixed_omega_offset(omega, x),
        &lifted.flat_slope_grad(omega, x),
    ))
}

/// [`pde_residual_expert`] specialized to the linear expert a.x + b.
pub fn pde_residual_linear_expert(omega: &[f64], a: &[f64], b: f64, x: &[f64]) -> Result<f64> {
    let expert = ExpertSpec::Linear { a: a.to_vec(), b };
    pde_residual_expert(&expert, omega, x)
}

/// |dF/dtau + (1/tau) omega . dF/domega| for F = exp(pi(x, omega)/tau) E(x).
/// At roundoff for the linear router score; bounded away from zero for an
/// activated router.
pub fn pde_residual_temperature(
    omega: &[f64],
    tau: f64,
    expert: &ExpertSpec,
    router: Router,
    x: &[f64],
) -> Result<f64> {
    check_dims(expert, omega, x)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument {
            arg: "tau",
            reason: format!("temperature must be positive and finite, got {tau}"),
        });
    }
    let lifted = LiftedExpert::new(expert.clone())?;
    let dtau = lifted.temp_dtau(omega, tau, router, x);
    let domega = lifted.temp_domega(omega, tau, router, x);
    Ok((dtau + dot(omega, &domega) / tau).abs())
}

/// Norms of (d2F/domega db - dF/da, d2F/dkappa db - dF/da) for the doubly
/// lifted F = exp(omega.x) exp(kappa.x) E(x), generic expert.
pub fn pde_residual_hierarchical_expert(
    expert: &ExpertSpec,
    omega: &[f64],
    kappa: &[f64],
    x: &[f64],
) -> Result<(f64, f64)> {
    check_dims(expert, omega, x)?;
    check_dims(expert, kappa, x)?;
    let lifted = LiftedExpert::new(expert.clone())?;
    let da = lifted.hier_slope_grad(omega, kappa, x);
    let via_omega = lifted.hier_mixed_offset(omega, kappa, x);
    let via_kappa = lifted.hier_mixed_offset(kappa, omega, x);
    Ok((norm_of_diff(&via_omega, &da), norm_of_diff(&via_kappa, &da)))
}

/// [`pde_residual_hierarchical_expert`] specialized to the linear expert.
pub fn pde_residual_hierarchical(
    omega: &[f64],
    kappa: &[f64],
    a: &[f64],
    b: f64,
    x: &[f64],
) -> Result<(f64, f64)> {
    let expert = ExpertSpec::Linear { a: a.to_vec(), b };
    pde_residual_hierarchical_expert(&expert, omega, kappa, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeRegime {
    /// The identity holds; residuals must stay at or below
    /// [`IDENTITY_CEILING`].
    Identity,
    /// The identity is structurally broken; residuals should clear
    /// [`VIOLATION_FLOOR`] at nearly every probe point.
    Violation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeRegimeReport {
    pub name: String,
    pub regime: PdeRegime,
    pub points: usize,
    pub max_residual: f64,
    pub min_residual: f64,
    /// How many residuals reach [`VIOLATION_FLOOR`].
    pub count_above_floor: usize,
    pub residuals: Vec<f64>,
}

impl PdeRegimeReport {
    fn from_residuals(name: &str, regime: PdeRegime, residuals: Vec<f64>) -> Self {
        let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
        let min_residual = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
        let count_above_floor = residuals.iter().filter(|r| **r >= VIOLATION_FLOOR).count();
        Self {
            name: name.to_string(),
            regime,
            points: residuals.len(),
            max_residual,
            min_residual,
            count_above_floor,
            residuals,
        }
    }

    pub fn passes(&self) -> bool {
        match self.regime {
            PdeRegime::Identity => self.max_residual <= IDENTITY_CEILING,
            // Up to 5% of probe points may sit in a thin exceptional zone.
            PdeRegime::Violation => self.count_above_floor * 20 >= self.points * 19,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeAuditReport {
    pub seed: u64,
    pub regimes: Vec<PdeRegimeReport>,
}

impl PdeAuditReport {
    pub fn all_pass(&self) -> bool {
        self.regimes.iter().all(|r| r.passes())
    }
}

fn sample(stream: &mut Stream, lo: f64, hi: f64, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| stream.uniform_in(lo, hi)).collect()
}

/// Violation-regime expert: normalized-input sigmoid FFN with a slope well
/// off the unit sphere scaling.
fn violation_ffn() -> ExpertSpec {
    ExpertSpec::Ffn {
        a: vec![1.0, -0.7],
        b: 0.5,
        c: 1.5,
        activation: crate::activation::Activation::Sigmoid,
    }
}

/// Run all six probe regimes at 100 points each.
///
/// Probe boxes, chosen so identity regimes stay within roundoff of zero and
/// violation regimes stay boundedly positive:
/// * flat identity: omega in [-1.5,1.5]^2, slope/offset in [-1,1], x in
///   [-1,1]^2; the residual is exact zero.
/// * flat violation: sigmoid FFN expert, omega in [-0.5,0.5]^2, x in
///   [-0.6,0.6]^2; the norm gap between x and its unit direction keeps the
///   residual above the floor.
/// * temperature identity: linear router, omega in [-1,1]^2, tau in
///   [0.8,1.25], linear expert in [-1,1]; residual is a few ulps.
/// * temperature violation: sigmoid router, linear expert with offset 1.5
///   (bounded away from zero), omega in [-1.5,1.5]^2.
/// * hierarchical identity and violation: as the flat regimes with a second
///   gating vector kappa drawn from the same box.
pub fn run_pde_audit(seed: u64) -> PdeAuditReport {
    const POINTS: usize = 100;
    let mut regimes = Vec::new();

    {
        let mut s = Stream::new(seed, "check.pde", &[0]);
        let residuals = (0..POINTS)
            .map(|_| {
                let omega = sample(&mut s, -1.5, 1.5, 2);
                let a = sample(&mut s, -1.0, 1.0, 2);
                let b = s.uniform_in(-1.0, 1.0);
                let x = sample(&mut s, -1.0, 1.0, 2);
                pde_residual_linear_expert(&omega, &a, b, &x).expect("valid probe")
            })
            .collect();
        regimes.push(PdeRegimeReport::from_residuals(
            "linear_expert.identity",
            PdeRegime::Identity,
            residuals,
        ));
    }
    {
        let mut s = Stream::new(seed, "check.pde", &[1]);
        let expert = violation_ffn();
        let residuals = (0..POINTS)
            .map(|_| {
                let omega = sample(&mut s, -0.5, 0.5, 2);
                let x = sample(&mut s, -0.6, 0.6, 2);
                pde_residual_expert(&expert, &omega, &x).expect("valid probe")
            })
            .collect();
        regimes.push(PdeRegimeReport::from_residuals(
            "ffn_expert.violation",
            PdeRegime::Violation,
            residuals,
        ));
    }
    {
        let mut s = Stream::new(seed, "check.pde", &[2]);
        let residuals = (0..POINTS)
            .map(|_| {
                let omega = sample(&mut s, -1.0, 1.0, 2);
                let tau = s.uniform_in(0.8, 1.25);
                let a = sample(&mut s, -1.0, 1.0, 2);
                let b = s.uniform_in(-1.0, 1.0);
                let x = sample(&mut s, -1.0, 1.0, 2);
                let expert = ExpertSpec::Linear { a, b };
                pde_residual_temperature(&omega, tau, &expert, Router::Linear, &x)
                    .expect("valid probe")
            })
            .collect();
        regimes.push(PdeRegimeReport::from_residuals(
            "temperature.identity",
            PdeRegime::Identity,
            residuals,
        ));
    }
    {
        let mut s = Stream::new(seed, "check.pde", &[3]);
        let expert = ExpertSpec::Linear {
            a: vec![0.3, -0.2],
            b: 1.5,
        };
        let router = Router::Activated(crate::activation::Activation::Sigmoid);
        let residuals = (0..POINTS)
            .map(|_| {
                let omega = sample(&mut s, -1.5, 1.5, 2);
                let tau = s.uniform_in(0.8, 1.25);
                let x = sample(&mut s, -1.0, 1.0, 2);
                pde_residual_temperature(&omega, tau, &expert, router, &x).expect("valid probe")
            })
            .collect();
        regimes.push(PdeRegimeReport::from_residuals(
            "temperature.violation",
            PdeRegime::Violation,
            residuals,
        ));
    }
    {
        let mut s = Stream::new(seed, "check.pde", &[4]);
        let residuals = (0..POINTS)
            .map(|_| {
                let omega = sample(&mut s, -1.5, 1.5, 2);
                let kappa = sample(&mut s, -1.5, 1.5, 2);
                let a = sample(&mut s, -1.0, 1.0, 2);
                let b = s.uniform_in(-1.0, 1.0);
                let x = sample(&mut s, -1.0, 1.0, 2);
                let (r1, r2) =
                    pde_residual_hierarchical(&omega, &kappa, &a, b, &x).expect("valid probe");
                r1.max(r2)
            })
            .collect();
        regimes.push(PdeRegimeReport::from_residuals(
            "hierarchical.identity",
            PdeRegime::Identity,
            residuals,
        ));
    }
    {
        let mut s = Stream::new(seed, "check.pde", &[5]);
        let expert = violation_ffn();
        let residuals = (0..POINTS)
            .map(|_| {
                let omega = sample(&mut s, -0.5, 0.5, 2);
                let kappa = sample(&mut s, -0.5, 0.5, 2);
                let x = sample(&mut s, -0.6, 0.6, 2);
                let (r1, r2) = pde_residual_hierarchical_expert(&expert, &omega, &kappa, &x)
                    .expect("valid probe");
                r1.min(r2)
            })
            .collect();
        regimes.push(PdeRegimeReport::from_residuals(
            "hierarchical.violation",
            PdeRegime::Violation,
            residuals,
        ));
    }

    PdeAuditReport { seed, regimes }
}
