//! Mixture-of-experts regression functions.
//!
//! Three gating families share the same expert types:
//!
//! * softmax gating: weights softmax(omega_i . x + beta_i),
//! * dense-to-sparse gating: weights softmax((pi(x, omega_i) + beta_i) / tau)
//!   with a linear or activated router pi and a shared temperature,
//! * hierarchical (two-level) softmax gating: outer weights over groups,
//!   inner weights over each group's atoms, one expert per (group, atom).
//!
//! Every family exposes the same flat free-parameter view (see `params`):
//! evaluation, analytic gradients, packing, and box projection all follow one
//! canonical order, and pinned gating parameters (last atom / last group /
//! last inner atom) are excluded from it.

pub mod expert;
mod flatten;
pub mod json;
pub mod params;

pub use expert::{dot, normalized, ExpertSpec, NORMALIZE_EPS};
pub use params::{GradientVector, ParamEntry, ParamField, ParamLayout};

use crate::activation::Activation;
use crate::error::{Error, Result};

/// Softmax over raw scores, with max subtraction so scores of any magnitude
/// stay finite.
pub fn softmax_weights(scores: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    softmax_weights_into(scores, &mut out);
    out
}

pub fn softmax_weights_into(scores: &[f64], out: &mut [f64]) {
    debug_assert_eq!(scores.len(), out.len());
    debug_assert!(!scores.is_empty());
    let mut max = f64::NEG_INFINITY;
    for &s in scores {
        if s > max {
            max = s;
        }
    }
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        let e = (s - max).exp();
        *o = e;
        total += e;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Router of the dense-to-sparse family: pi(x, omega) = omega . x for
/// `Linear`, sigma(omega . x) for `Activated(sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Router {
    Linear,
    Activated(Activation),
}

impl Router {
    pub fn value(self, omega: &[f64], x: &[f64]) -> f64 {
        let s = dot(omega, x);
        match self {
            Router::Linear => s,
            Router::Activated(act) => act.value(s),
        }
    }

    /// d(pi)/d(omega) = factor * x; returns the factor given omega . x.
    pub fn derivative_factor(self, omega_dot_x: f64) -> f64 {
        match self {
            Router::Linear => 1.0,
            Router::Activated(act) => act.derivative(omega_dot_x),
        }
    }

    pub fn label(self) -> String {
        match self {
            Router::Linear => "linear".into(),
            Router::Activated(act) => format!("activated({})", act.label()),
        }
    }
}

/// One gated atom of the flat families: mixing bias beta, gate direction
/// omega, and an expert.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub beta: f64,
    pub omega: Vec<f64>,
    pub expert: ExpertSpec,
}

/// Inner atom of a hierarchical group: mixing bias nu (serialized as
/// `nu_gate`), gate direction kappa, and an expert.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerAtom {
    pub nu: f64,
    pub kappa: Vec<f64>,
    pub expert: ExpertSpec,
}

/// Outer atom of the hierarchical family: gating (beta, omega) plus the
/// group's inner atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub beta: f64,
    pub omega: Vec<f64>,
    pub inner: Vec<InnerAtom>,
}

/// f_G(x) = sum_i softmax(omega_i . x + beta_i) * expert_i(x).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxMixingMeasure {
    pub atoms: Vec<Atom>,
    /// Last atom's gating is pinned to beta = 0, omega = 0 and excluded from
    /// the free parameters.
    pub pinned_last: bool,
}

/// g_G(x) = sum_i softmax((pi(x, omega_i) + beta_i) / tau) * expert_i(x).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseToSparseMixingMeasure {
    pub atoms: Vec<Atom>,
    pub tau: f64,
    pub router: Router,
    pub pinned_last: bool,
}

/// h_G(x) = sum_g W_g(x) sum_t V_{t|g}(x) * expert_{g,t}(x) with softmax
/// weights at both levels.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalMixingMeasure {
    pub groups: Vec<Group>,
    pub pinned_last_outer: bool,
    /// Pins the last inner atom of every group.
    pub pinned_last_inner: bool,
}

/// Any of the three families, for code that is generic over gating.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingModel {
    Softmax(SoftmaxMixingMeasure),
    DenseToSparse(DenseToSparseMixingMeasure),
    Hierarchical(HierarchicalMixingMeasure),
}

/// Reusable buffers for evaluation and gradients; one per worker thread.
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    scores: Vec<f64>,
    weights: Vec<f64>,
    evals: Vec<f64>,
    outer_scores: Vec<f64>,
    outer_weights: Vec<f64>,
    group_vals: Vec<f64>,
    expert_grad: Vec<f64>,
}

impl EvalScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_flat(&mut self, k: usize, q_max: usize) {
        self.scores.resize(k, 0.0);
        self.weights.resize(k, 0.0);
        self.evals.resize(k, 0.0);
        self.expert_grad.resize(q_max, 0.0);
    }

    fn ensure_hier(&mut self, k1: usize, k2: usize, q_max: usize) {
        self.outer_scores.resize(k1, 0.0);
        self.outer_weights.resize(k1, 0.0);
        self.group_vals.resize(k1, 0.0);
        self.scores.resize(k1 * k2, 0.0);
        self.weights.resize(k1 * k2, 0.0);
        self.evals.resize(k1 * k2, 0.0);
        self.expert_grad.resize(q_max, 0.0);
    }
}

fn validate_gating(atom_idx: usize, beta: f64, omega: &[f64], d: usize) -> Result<()> {
    if omega.len() != d {
        return Err(Error::DimensionMismatch {
            what: "gate direction",
            expected: d,
            got: omega.len(),
        });
    }
    if !beta.is_finite() || !omega.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gating parameters".into(),
        });
    }
    let _ = atom_idx;
    Ok(())
}

fn check_pinned(beta: f64, omega: &[f64], what: &'static str) -> Result<()> {
    if beta != 0.0 || omega.iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidArgument {
            arg: what,
            reason: "pinned atom must have zero gating parameters".into(),
        });
    }
    Ok(())
}

impl SoftmaxMixingMeasure {
    pub fn new(atoms: Vec<Atom>, pinned_last: bool) -> Result<Self> {
        let m = SoftmaxMixingMeasure { atoms, pinned_last };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        validate_atoms(&self.atoms)?;
        if self.pinned_last {
            let last = self.atoms.last().unwrap();
            check_pinned(last.beta, &last.omega, "softmax atoms")?;
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.atoms[0].omega.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut scratch = EvalScratch::new();
        self.eval_with(x, &mut scratch)
    }

    pub fn eval_with(&self, x: &[f64], scratch: &mut EvalScratch) -> f64 {
        debug_assert_eq!(x.len(), self.dimension());
        let k = self.atoms.len();
        scratch.ensure_flat(k, 0);
        for (i, atom) in self.atoms.iter().enumerate() {
            scratch.scores[i] = dot(&atom.omega, x) + atom.beta;
            scratch.evals[i] = atom.expert.eval(x);
        }
        softmax_weights_into(&scratch.scores[..k], &mut scratch.weights[..k]);
        combine(&scratch.weights[..k], &scratch.evals[..k])
    }

    /// Evaluates and writes the gradient with respect to the free parameters
    /// into `out` (layout order). Returns the value.
    pub fn eval_grad_with(&self, x: &[f64], scratch: &mut EvalScratch, out: &mut [f64]) -> f64 {
        let k = self.atoms.len();
        let q_max = self.atoms.iter().map(|a| a.expert.param_count()).max().unwrap();
        scratch.ensure_flat(k, q_max);
        for (i, atom) in self.atoms.iter().enumerate() {
            scratch.scores[i] = dot(&atom.omega, x) + atom.beta;
            scratch.evals[i] = atom.expert.eval(x);
        }
        softmax_weights_into(&scratch.scores[..k], &mut scratch.weights[..k]);
        let f = combine(&scratch.weights[..k], &scratch.evals[..k]);

        let d = self.dimension();
        let mut cursor = 0;
        for (i, atom) in self.atoms.iter().enumerate() {
            let w = scratch.weights[i];
            if !(self.pinned_last && i == k - 1) {
                let excess = w * (scratch.evals[i] - f);
                out[cursor] = excess;
                cursor += 1;
                for u in 0..d {
                    out[cursor + u] = excess * x[u];
                }
                cursor += d;
            }
            let q = atom.expert.param_count();
            atom.expert
                .eval_with_param_grad(x, &mut scratch.expert_grad[..q]);
            for t in 0..q {
                out[cursor + t] = w * scratch.expert_grad[t];
            }
            cursor += q;
        }
        debug_assert_eq!(cursor, out.len());
        f
    }
}

impl DenseToSparseMixingMeasure {
    pub fn new(atoms: Vec<Atom>, tau: f64, router: Router, pinned_last: bool) -> Result<Self> {
        let m = DenseToSparseMixingMeasure {
            atoms,
            tau,
            router,
            pinned_last,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        validate_atoms(&self.atoms)?;
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::InvalidArgument {
                arg: "tau",
                reason: format!("temperature must be finite and positive, got {}", self.tau),
            });
        }
        if self.pinned_last {
            let last = self.atoms.last().unwrap();
            check_pinned(last.beta, &last.omega, "dense-to-sparse atoms")?;
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.atoms[0].omega.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut scratch = EvalScratch::new();
        self.eval_with(x, &mut scratch)
    }

    pub fn eval_with(&self, x: &[f64], scratch: &mut EvalScratch) -> f64 {
        debug_assert_eq!(x.len(), self.dimension());
        let k = self.atoms.len();
        scratch.ensure_flat(k, 0);
        for (i, atom) in self.atoms.iter().enumerate() {
            scratch.scores[i] = (self.router.value(&atom.omega, x) + atom.beta) / self.tau;
            scratch.evals[i] = atom.expert.eval(x);
        }
        softmax_weights_into(&scratch.scores[..k], &mut scratch.weights[..k]);
        combine(&scratch.weights[..k], &scratch.evals[..k])
    }

    pub fn eval_grad_with(&self, x: &[f64], scratch: &mut EvalScratch, out: &mut [f64]) -> f64 {
        let k = self.atoms.len();
        let q_max = self.atoms.iter().map(|a| a.expert.param_count()).max().unwrap();
        scratch.ensure_flat(k, q_max);
        for (i, atom) in self.atoms.iter().enumerate() {
            scratch.scores[i] = (self.router.value(&atom.omega, x) + atom.beta) / self.tau;
            scratch.evals[i] = atom.expert.eval(x);
        }
        softmax_weights_into(&scratch.scores[..k], &mut scratch.weights[..k]);
        let g = combine(&scratch.weights[..k], &scratch.evals[..k]);

        let d = self.dimension();
        let inv_tau = 1.0 / self.tau;
        let mut cursor = 0;
        for (i, atom) in self.atoms.iter().enumerate() {
            let w = scratch.weights[i];
            if !(self.pinned_last && i == k - 1) {
                let excess = w * (scratch.evals[i] - g) * inv_tau;
                out[cursor] = excess;
                cursor += 1;
                let factor = self.router.derivative_factor(dot(&atom.omega, x));
                for u in 0..d {
                    out[cursor + u] = excess * factor * x[u];
                }
                cursor += d;
            }
            let q = atom.expert.param_count();
            atom.expert
                .eval_with_param_grad(x, &mut scratch.expert_grad[..q]);
            for t in 0..q {
                out[cursor + t] = w * scratch.expert_grad[t];
            }
            cursor += q;
        }
        // d(g)/d(tau) = -(1/tau) sum_i w_i s_i (e_i - g), with raw scores s_i.
        let mut tau_grad = 0.0;
        for i in 0..k {
            tau_grad += scratch.weights[i] * scratch.scores[i] * (scratch.evals[i] - g);
        }
        out[cursor] = -inv_tau * tau_grad;
        cursor += 1;
        debug_assert_eq!(cursor, out.len());
        g
    }
}

impl HierarchicalMixingMeasure {
    pub fn new(
        groups: Vec<Group>,
        pinned_last_outer: bool,
        pinned_last_inner: bool,
    ) -> Result<Self> {
        let m = HierarchicalMixingMeasure {
            groups,
            pinned_last_outer,
            pinned_last_inner,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidArgument {
                arg: "groups",
                reason: "hierarchical measure needs at least one group".into(),
            });
        }
        let d = self.groups[0].omega.len();
        let k2 = self.groups[0].inner.len();
        if k2 == 0 {
            return Err(Error::InvalidArgument {
                arg: "groups",
                reason: "every group needs at least one inner atom".into(),
            });
        }
        for (g, group) in self.groups.iter().enumerate() {
            validate_gating(g, group.beta, &group.omega, d)?;
            if group.inner.len() != k2 {
                return Err(Error::InvalidArgument {
                    arg: "groups",
                    reason: format!(
                        "group {g} has {} inner atoms, expected {k2} (uniform inner count)",
                        group.inner.len()
                    ),
                });
            }
            for inner in &group.inner {
                validate_gating(g, inner.nu, &inner.kappa, d)?;
                inner.expert.validate()?;
                if inner.expert.dimension() != d {
                    return Err(Error::DimensionMismatch {
                        what: "expert dimension",
                        expected: d,
                        got: inner.expert.dimension(),
                    });
                }
            }
            if self.pinned_last_inner {
                let last = group.inner.last().unwrap();
                check_pinned(last.nu, &last.kappa, "inner atoms")?;
            }
        }
        if self.pinned_last_outer {
            let last = self.groups.last().unwrap();
            check_pinned(last.beta, &last.omega, "outer groups")?;
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.groups[0].omega.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn inner_count(&self) -> usize {
        self.groups[0].inner.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut scratch = EvalScratch::new();
        self.eval_with(x, &mut scratch)
    }

    pub fn eval_with(&self, x: &[f64], scratch: &mut EvalScratch) -> f64 {
        debug_assert_eq!(x.len(), self.dimension());
        let k1 = self.groups.len();
        let k2 = self.inner_count();
        scratch.ensure_hier(k1, k2, 0);
        self.fill_weights(x, scratch);
        combine(&scratch.outer_weights[..k1], &scratch.group_vals[..k1])
    }

    fn fill_weights(&self, x: &[f64], scratch: &mut EvalScratch) {
        let k1 = self.groups.len();
        let k2 = self.inner_count();
        for (g, group) in self.groups.iter().enumerate() {
            scratch.outer_scores[g] = dot(&group.omega, x) + group.beta;
            let base = g * k2;
            for (t, inner) in group.inner.iter().enumerate() {
                scratch.scores[base + t] = dot(&inner.kappa, x) + inner.nu;
                scratch.evals[base + t] = inner.expert.eval(x);
            }
            let (sc, wt) = (
                &scratch.scores[base..base + k2],
                &mut scratch.weights[base..base + k2],
            );
            softmax_weights_into(sc, wt);
            scratch.group_vals[g] = combine(
                &scratch.weights[base..base + k2],
                &scratch.evals[base..base + k2],
            );
        }
        softmax_weights_into(
            &scratch.outer_scores[..k1],
            &mut scratch.outer_weights[..k1],
        );
    }

    pub fn eval_grad_with(&self, x: &[f64], scratch: &mut EvalScratch, out: &mut [f64]) -> f64 {
        let k1 = self.groups.len();
        let k2 = self.inner_count();
        let q_max = self
            .groups
            .iter()
            .flat_map(|g| g.inner.iter())
            .map(|a| a.expert.param_count())
            .max()
            .unwrap();
        scratch.ensure_hier(k1, k2, q_max);
        self.fill_weights(x, scratch);
        let h = combine(&scratch.outer_weights[..k1], &scratch.group_vals[..k1]);

        let d = self.dimension();
        let mut cursor = 0;
        for (g, group) in self.groups.iter().enumerate() {
            let wg = scratch.outer_weights[g];
            if !(self.pinned_last_outer && g == k1 - 1) {
                let excess = wg * (scratch.group_vals[g] - h);
                out[cursor] = excess;
                cursor += 1;
                for u in 0..d {
                    out[cursor + u] = excess * x[u];
                }
                cursor += d;
            }
            let base = g * k2;
            for (t, inner) in group.inner.iter().enumerate() {
                let v = scratch.weights[base + t];
                if !(self.pinned_last_inner && t == k2 - 1) {
                    let excess = wg * v * (scratch.evals[base + t] - scratch.group_vals[g]);
                    out[cursor] = excess;
                    cursor += 1;
                    for u in 0..d {
                        out[cursor + u] = excess * x[u];
                    }
                    cursor += d;
                }
                let q = inner.expert.param_count();
                inner
                    .expert
                    .eval_with_param_grad(x, &mut scratch.expert_grad[..q]);
                for s in 0..q {
                    out[cursor + s] = wg * v * scratch.expert_grad[s];
                }
                cursor += q;
            }
        }
        debug_assert_eq!(cursor, out.len());
        h
    }
}

fn validate_atoms(atoms: &[Atom]) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidArgument {
            arg: "atoms",
            reason: "mixing measure needs at least one atom".into(),
        });
    }
    let d = atoms[0].omega.len();
    for (i, atom) in atoms.iter().enumerate() {
        validate_gating(i, atom.beta, &atom.omega, d)?;
        atom.expert.validate()?;
        if atom.expert.dimension() != d {
            return Err(Error::DimensionMismatch {
                what: "expert dimension",
                expected: d,
                got: atom.expert.dimension(),
            });
        }
    }
    Ok(())
}

fn combine(weights: &[f64], evals: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..weights.len() {
        acc += weights[i] * evals[i];
    }
    acc
}

impl MixingModel {
    pub fn dimension(&self) -> usize {
        match self {
            MixingModel::Softmax(m) => m.dimension(),
            MixingModel::DenseToSparse(m) => m.dimension(),
            MixingModel::Hierarchical(m) => m.dimension(),
        }
    }

    pub fn family_label(&self) -> &'static str {
        match self {
            MixingModel::Softmax(_) => "softmax",
            MixingModel::DenseToSparse(_) => "dense_to_sparse",
            MixingModel::Hierarchical(_) => "hierarchical",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MixingModel::Softmax(m) => m.validate(),
            MixingModel::DenseToSparse(m) => m.validate(),
            MixingModel::Hierarchical(m) => m.validate(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut scratch = EvalScratch::new();
        self.eval_with(x, &mut scratch)
    }

    pub fn eval_with(&self, x: &[f64], scratch: &mut EvalScratch) -> f64 {
        match self {
            MixingModel::Softmax(m) => m.eval_with(x, scratch),
            MixingModel::DenseToSparse(m) => m.eval_with(x, scratch),
            MixingModel::Hierarchical(m) => m.eval_with(x, scratch),
        }
    }

    pub fn eval_grad_with(&self, x: &[f64], scratch: &mut EvalScratch, out: &mut [f64]) -> f64 {
        match self {
            MixingModel::Softmax(m) => m.eval_grad_with(x, scratch, out),
            MixingModel::DenseToSparse(m) => m.eval_grad_with(x, scratch, out),
            MixingModel::Hierarchical(m) => m.eval_grad_with(x, scratch, out),
        }
    }
}

/// Gradient of the regression function at x with respect to the free
/// parameters, paired with the layout that names each coordinate.
pub fn grad_regression(model: &MixingModel, x: &[f64]) -> Result<GradientVector> {
    if x.len() != model.dimension() {
        return Err(Error::DimensionMismatch {
            what: "input point",
            expected: model.dimension(),
            got: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "input point".into() });
    }
    let layout = model.layout();
    let mut values = vec![0.0; layout.len()];
    let mut scratch = EvalScratch::new();
    model.eval_grad_with(x, &mut scratch, &mut values);
    Ok(GradientVector { values, layout })
}
