//! Least-squares fitting of mixing-measure models.
//!
//! The estimator is multi-start box-constrained least squares. Cold starts
//! are sampled uniformly in the parameter box and first pushed downhill by a
//! cheap diagonally preconditioned gradient phase on a fixed data prefix;
//! the most promising survivors plus any warm start are then refined on the
//! full data by a damped Gauss-Newton loop. Both phases accept a step only
//! if it strictly decreases the objective, so accepted iterates are
//! monotone. The winner is the restart with the smallest final objective,
//! ties broken by restart index, making the whole fit a pure function of
//! `(dataset, shape, config, seed)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    Atom, DenseToSparseMixingMeasure, EvalScratch, ExpertSpec, GradientVector, Group,
    HierarchicalMixingMeasure, InnerAtom, MixingModel, ParamField, ParamLayout, Router,
    SoftmaxMixingMeasure,
};
use crate::rng::Stream;

/// Componentwise parameter bounds, keyed by field kind. Pinned parameters
/// never appear in the free vector, so they are untouched by projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaBox {
    pub beta: (f64, f64),
    pub omega: (f64, f64),
    pub nu: (f64, f64),
    pub kappa: (f64, f64),
    pub expert_a: (f64, f64),
    pub expert_b: (f64, f64),
    pub expert_c: (f64, f64),
    pub tau: (f64, f64),
}

impl Default for ThetaBox {
    fn default() -> Self {
        let sym = (-5.0, 5.0);
        Self {
            beta: sym,
            omega: sym,
            nu: sym,
            kappa: sym,
            expert_a: sym,
            expert_b: sym,
            expert_c: sym,
            tau: (0.1, 10.0),
        }
    }
}

impl ThetaBox {
    pub fn bounds_for(&self, field: &ParamField) -> (f64, f64) {
        match field {
            ParamField::Beta => self.beta,
            ParamField::Omega(_) => self.omega,
            ParamField::Nu => self.nu,
            ParamField::Kappa(_) => self.kappa,
            ParamField::ExpertA(_) => self.expert_a,
            ParamField::ExpertB => self.expert_b,
            ParamField::ExpertC => self.expert_c,
            ParamField::Tau => self.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("beta", self.beta),
            ("omega", self.omega),
            ("nu", self.nu),
            ("kappa", self.kappa),
            ("expert_a", self.expert_a),
            ("expert_b", self.expert_b),
            ("expert_c", self.expert_c),
            ("tau", self.tau),
        ];
        for (name, (lo, hi)) in fields {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(Error::InvalidConfig {
                    reason: format!("theta box for {name}: need finite lo < hi, got [{lo}, {hi}]"),
                });
            }
        }
        if self.tau.0 <= 0.0 {
            return Err(Error::InvalidConfig {
                reason: format!("tau box must be positive, got lower bound {}", self.tau.0),
            });
        }
        Ok(())
    }
}

/// Clip every free parameter into its box.
pub fn project_to_box(values: &mut [f64], layout: &ParamLayout, theta_box: &ThetaBox) {
    for (v, entry) in values.iter_mut().zip(&layout.entries) {
        let (lo, hi) = theta_box.bounds_for(&entry.field);
        *v = v.clamp(lo, hi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// All restarts sampled uniformly in the box.
    Cold,
    /// All restarts start from the (perturbed) reference model.
    Warm,
    /// Restart 0 warm, the rest cold.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Atom budget: atoms for the flat families, inner atoms per group for
    /// the hierarchical family.
    pub k_fit: usize,
    /// Number of restarts.
    pub restarts: usize,
    /// Refinement iteration cap per restart.
    pub max_iters: usize,
    /// Convergence threshold on the projected gradient norm.
    pub grad_tol: f64,
    /// Gradient-phase iterations for each cold start.
    pub explore_iters: usize,
    /// Data prefix length used by the gradient phase.
    pub explore_subsample: usize,
    /// How many cold starts (by screening objective) get full refinement.
    pub refine_top: usize,
    /// Initial step size of the gradient phase.
    pub init_step: f64,
    pub theta_box: ThetaBox,
    pub init_mode: InitMode,
    /// Coefficient c of the warm-start jitter: each free parameter is
    /// perturbed by a Gaussian of scale c * n^(-1/4).
    pub warm_perturbation_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_fit: 2,
            restarts: 10,
            max_iters: 5000,
            grad_tol: 1e-8,
            explore_iters: 150,
            explore_subsample: 4000,
            refine_top: 2,
            init_step: 0.05,
            theta_box: ThetaBox::default(),
            init_mode: InitMode::Mixed,
            warm_perturbation_scale: 0.1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_fit == 0 {
            return Err(Error::InvalidConfig {
                reason: "k_fit must be at least 1".into(),
            });
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig {
                reason: "restarts must be at least 1".into(),
            });
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig {
                reason: format!("grad_tol must be positive, got {}", self.grad_tol),
            });
        }
        if !(self.init_step > 0.0) {
            return Err(Error::InvalidConfig {
                reason: format!("init_step must be positive, got {}", self.init_step),
            });
        }
        if self.max_iters == 0 || self.refine_top == 0 || self.explore_subsample == 0 {
            return Err(Error::InvalidConfig {
                reason: "max_iters, refine_top, and explore_subsample must be positive".into(),
            });
        }
        if !(self.warm_perturbation_scale >= 0.0 && self.warm_perturbation_scale.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "warm_perturbation_scale must be finite and nonnegative, got {}",
                    self.warm_perturbation_scale
                ),
            });
        }
        self.theta_box.validate()
    }
}

/// Expert structure fitted to the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExpertForm {
    Linear,
    Ffn { activation: Activation },
}

impl ExpertForm {
    fn zero_expert(&self, dim: usize) -> ExpertSpec {
        match self {
            ExpertForm::Linear => ExpertSpec::Linear {
                a: vec![0.0; dim],
                b: 0.0,
            },
            ExpertForm::Ffn { activation } => ExpertSpec::Ffn {
                a: vec![0.0; dim],
                b: 0.0,
                c: 0.0,
                activation: *activation,
            },
        }
    }

    pub fn matches(&self, e: &ExpertSpec) -> bool {
        match (self, e) {
            (ExpertForm::Linear, ExpertSpec::Linear { .. }) => true,
            (ExpertForm::Ffn { activation }, ExpertSpec::Ffn { activation: a, .. }) => {
                activation == a
            }
            _ => false,
        }
    }

    pub fn of(e: &ExpertSpec) -> Self {
        match e {
            ExpertSpec::Linear { .. } => ExpertForm::Linear,
            ExpertSpec::Ffn { activation, .. } => ExpertForm::Ffn {
                activation: *activation,
            },
        }
    }
}

/// Structural description of the model being fitted; atom counts come from
/// `FitConfig::k_fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelShape {
    Softmax {
        dim: usize,
        expert: ExpertForm,
    },
    DenseToSparse {
        dim: usize,
        expert: ExpertForm,
        router: Router,
    },
    Hierarchical {
        dim: usize,
        groups: usize,
        expert: ExpertForm,
    },
}

impl ModelShape {
    pub fn dim(&self) -> usize {
        match self {
            ModelShape::Softmax { dim, .. }
            | ModelShape::DenseToSparse { dim, .. }
            | ModelShape::Hierarchical { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidConfig {
                reason: "model shape needs a positive input dimension".into(),
            });
        }
        if let ModelShape::Hierarchical { groups, .. } = self {
            if *groups == 0 {
                return Err(Error::InvalidConfig {
                    reason: "hierarchical shape needs at least one group".into(),
                });
            }
        }
        Ok(())
    }

    /// Shape describing `model` (atom counts dropped).
    pub fn of(model: &MixingModel) -> Self {
        match model {
            MixingModel::Softmax(m) => ModelShape::Softmax {
                dim: m.dimension(),
                expert: ExpertForm::of(&m.atoms[0].expert),
            },
            MixingModel::DenseToSparse(m) => ModelShape::DenseToSparse {
                dim: m.dimension(),
                expert: ExpertForm::of(&m.atoms[0].expert),
                router: m.router,
            },
            MixingModel::Hierarchical(m) => ModelShape::Hierarchical {
                dim: m.dimension(),
                groups: m.num_groups(),
                expert: ExpertForm::of(&m.groups[0].inner[0].expert),
            },
        }
    }

    /// All-zero pinned model with `k_fit` atoms (inner atoms per group for
    /// the hierarchical family). Gating fields of the pinned positions are
    /// zero by construction; tau starts at 1.
    pub fn skeleton(&self, k_fit: usize) -> Result<MixingModel> {
        if k_fit == 0 {
            return Err(Error::InvalidConfig {
                reason: "k_fit must be at least 1".into(),
            });
        }
        Ok(match self {
            ModelShape::Softmax { dim, expert } => {
                let atoms = (0..k_fit)
                    .map(|_| Atom {
                        beta: 0.0,
                        omega: vec![0.0; *dim],
                        expert: expert.zero_expert(*dim),
                    })
                    .collect();
                MixingModel::Softmax(SoftmaxMixingMeasure::new(atoms, true)?)
            }
            ModelShape::DenseToSparse {
                dim,
                expert,
                router,
            } => {
                let atoms = (0..k_fit)
                    .map(|_| Atom {
                        beta: 0.0,
                        omega: vec![0.0; *dim],
                        expert: expert.zero_expert(*dim),
                    })
                    .collect();
                MixingModel::DenseToSparse(DenseToSparseMixingMeasure::new(
                    atoms, 1.0, *router, true,
                )?)
            }
            ModelShape::Hierarchical {
                dim,
                groups,
                expert,
            } => {
                let gs = (0..*groups)
                    .map(|_| Group {
                        beta: 0.0,
                        omega: vec![0.0; *dim],
                        inner: (0..k_fit)
                            .map(|_| InnerAtom {
                                nu: 0.0,
                                kappa: vec![0.0; *dim],
                                expert: expert.zero_expert(*dim),
                            })
                            .collect(),
                    })
                    .collect();
                MixingModel::Hierarchical(HierarchicalMixingMeasure::new(gs, true, true)?)
            }
        })
    }

    /// Check that `reference` can seed a warm start for this shape at the
    /// given budget.
    fn check_reference(&self, reference: &MixingModel, k_fit: usize) -> Result<()> {
        let shape_of_ref = ModelShape::of(reference);
        let compatible = match (self, &shape_of_ref) {
            (
                ModelShape::Hierarchical { dim, groups, expert },
                ModelShape::Hierarchical {
                    dim: rd,
                    groups: rg,
                    expert: re,
                },
            ) => dim == rd && groups == rg && expert == re,
            _ => *self == shape_of_ref,
        };
        if !compatible {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "warm reference shape {shape_of_ref:?} does not match fit shape {self:?}"
                ),
            });
        }
        let have = match reference {
            MixingModel::Hierarchical(m) => m.inner_count(),
            MixingModel::Softmax(m) => m.num_atoms(),
            MixingModel::DenseToSparse(m) => m.num_atoms(),
        };
        if k_fit < have {
            return Err(Error::InvalidConfig {
                reason: format!("k_fit = {k_fit} is below the reference atom count {have}"),
            });
        }
        Ok(())
    }
}

/// Duplicate the first atom until the budget is met. The copies share the
/// first atom's expert, so the regression function is unchanged for any
/// weight assignment; splitting `beta` by `scale * ln(m)` additionally keeps
/// the total cell weight equal to the original. A single pinned atom cannot
/// split its (fixed, zero) weight, so its extra copies carry the smallest
/// in-box weight instead; the function is still exact because the experts
/// are identical.
fn duplicate_atoms(atoms: &[Atom], copies: usize, scale: f64) -> Vec<Atom> {
    if copies <= 1 {
        return atoms.to_vec();
    }
    let mut out = Vec::with_capacity(atoms.len() + copies - 1);
    if atoms.len() == 1 {
        for _ in 0..copies - 1 {
            out.push(Atom {
                beta: -5.0,
                omega: atoms[0].omega.clone(),
                expert: atoms[0].expert.clone(),
            });
        }
        out.push(atoms[0].clone());
        return out;
    }
    let split = atoms[0].beta - scale * (copies as f64).ln();
    for _ in 0..copies {
        out.push(Atom {
            beta: split,
            omega: atoms[0].omega.clone(),
            expert: atoms[0].expert.clone(),
        });
    }
    out.extend(atoms[1..].iter().cloned());
    out
}

fn duplicate_inner(inner: &[InnerAtom], copies: usize) -> Vec<InnerAtom> {
    if copies <= 1 {
        return inner.to_vec();
    }
    let mut out = Vec::with_capacity(inner.len() + copies - 1);
    if inner.len() == 1 {
        for _ in 0..copies - 1 {
            out.push(InnerAtom {
                nu: -5.0,
                kappa: inner[0].kappa.clone(),
                expert: inner[0].expert.clone(),
            });
        }
        out.push(inner[0].clone());
        return out;
    }
    let split = inner[0].nu - (copies as f64).ln();
    for _ in 0..copies {
        out.push(InnerAtom {
            nu: split,
            kappa: inner[0].kappa.clone(),
            expert: inner[0].expert.clone(),
        });
    }
    out.extend(inner[1..].iter().cloned());
    out
}

/// Expand `reference` to the fit budget without changing its regression
/// function (see `duplicate_atoms`).
pub fn expand_to_budget(reference: &MixingModel, k_fit: usize) -> Result<MixingModel> {
    Ok(match reference {
        MixingModel::Softmax(m) => {
            let copies = k_fit + 1 - m.num_atoms();
            MixingModel::Softmax(SoftmaxMixingMeasure::new(
                duplicate_atoms(&m.atoms, copies, 1.0),
                m.pinned_last,
            )?)
        }
        MixingModel::DenseToSparse(m) => {
            let copies = k_fit + 1 - m.num_atoms();
            MixingModel::DenseToSparse(DenseToSparseMixingMeasure::new(
                duplicate_atoms(&m.atoms, copies, m.tau),
                m.tau,
                m.router,
                m.pinned_last,
            )?)
        }
        MixingModel::Hierarchical(m) => {
            let copies = k_fit + 1 - m.inner_count();
            let groups = m
                .groups
                .iter()
                .map(|g| Group {
                    beta: g.beta,
                    omega: g.omega.clone(),
                    inner: duplicate_inner(&g.inner, copies),
                })
                .collect();
            MixingModel::Hierarchical(HierarchicalMixingMeasure::new(
                groups,
                m.pinned_last_outer,
                m.pinned_last_inner,
            )?)
        }
    })
}

fn cold_start(
    shape: &ModelShape,
    k_fit: usize,
    theta_box: &ThetaBox,
    stream: &mut Stream,
) -> Result<MixingModel> {
    let mut model = shape.skeleton(k_fit)?;
    let layout = model.layout();
    let mut v = model.free_params();
    for (val, entry) in v.iter_mut().zip(&layout.entries) {
        let (lo, hi) = theta_box.bounds_for(&entry.field);
        *val = stream.uniform_in(lo, hi);
    }
    model.set_free_params(&v)?;
    Ok(model)
}

fn warm_start(
    reference: &MixingModel,
    k_fit: usize,
    theta_box: &ThetaBox,
    applied_scale: f64,
    stream: &mut Stream,
) -> Result<MixingModel> {
    let mut model = expand_to_budget(reference, k_fit)?;
    let layout = model.layout();
    let mut v = model.free_params();
    if applied_scale > 0.0 {
        for val in v.iter_mut() {
            *val += applied_scale * stream.normal();
        }
    }
    project_to_box(&mut v, &layout, theta_box);
    model.set_free_params(&v)?;
    Ok(model)
}

/// Sum of squared residuals of `model` on `dataset`.
pub fn ls_objective(model: &MixingModel, dataset: &Dataset) -> Result<f64> {
    if model.dimension() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            what: "objective input dimension",
            expected: model.dimension(),
            got: dataset.dim(),
        });
    }
    let mut scratch = EvalScratch::default();
    let mut obj = 0.0;
    for i in 0..dataset.len() {
        let r = dataset.response(i) - model.eval_with(dataset.input(i), &mut scratch);
        obj += r * r;
    }
    Ok(obj)
}

/// Analytic gradient of [`ls_objective`] over the free parameters.
pub fn ls_gradient(model: &MixingModel, dataset: &Dataset) -> Result<GradientVector> {
    if model.dimension() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            what: "objective input dimension",
            expected: model.dimension(),
            got: dataset.dim(),
        });
    }
    let layout = model.layout();
    let p = layout.len();
    let mut scratch = EvalScratch::default();
    let mut row = vec![0.0; p];
    let mut grad = vec![0.0; p];
    for i in 0..dataset.len() {
        let f = model.eval_grad_with(dataset.input(i), &mut scratch, &mut row);
        let r = dataset.response(i) - f;
        for (g, &d) in grad.iter_mut().zip(&row) {
            *g -= 2.0 * r * d;
        }
    }
    Ok(GradientVector {
        values: grad,
        layout,
    })
}

/// Norm of the projected-gradient step: how far one unit step of projected
/// steepest descent would actually move. Zero exactly at a box-constrained
/// stationary point.
fn projected_gradient_norm(
    v: &[f64],
    obj_grad: &[f64],
    layout: &ParamLayout,
    theta_box: &ThetaBox,
) -> f64 {
    let mut sum = 0.0;
    for i in 0..v.len() {
        let (lo, hi) = theta_box.bounds_for(&layout.entries[i].field);
        let moved = (v[i] - obj_grad[i]).clamp(lo, hi);
        let step = v[i] - moved;
        sum += step * step;
    }
    sum.sqrt()
}

/// Streaming pass over the data that fills the Gauss-Newton normal matrix
/// `sum g g^T` (upper triangle mirrored), the right side `sum r g`, and
/// returns the objective. The objective gradient is `-2 * jtr`.
fn accumulate_normal(
    model: &MixingModel,
    dataset: &Dataset,
    scratch: &mut EvalScratch,
    row: &mut [f64],
    jtj: &mut DMatrix<f64>,
    jtr: &mut DVector<f64>,
) -> f64 {
    let p = row.len();
    jtj.fill(0.0);
    jtr.fill(0.0);
    let mut obj = 0.0;
    for i in 0..dataset.len() {
        let f = model.eval_grad_with(dataset.input(i), scratch, row);
        let r = dataset.response(i) - f;
        obj += r * r;
        for u in 0..p {
            let gu = row[u];
            jtr[u] += r * gu;
            for w in u..p {
                jtj[(u, w)] += gu * row[w];
            }
        }
    }
    for u in 0..p {
        for w in 0..u {
            jtj[(u, w)] = jtj[(w, u)];
        }
    }
    obj
}

fn objective_of(values: &[f64], model: &mut MixingModel, dataset: &Dataset) -> Result<f64> {
    model.set_free_params(values)?;
    let mut scratch = EvalScratch::default();
    let mut obj = 0.0;
    for i in 0..dataset.len() {
        let r = dataset.response(i) - model.eval_with(dataset.input(i), &mut scratch);
        obj += r * r;
    }
    Ok(obj)
}

struct PhaseOutcome {
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Diagonally preconditioned projected gradient descent with backtracking.
/// The preconditioner is an exponential moving average of the squared
/// gradient; the search direction is therefore always a descent direction,
/// and a step is accepted only on strict decrease.
fn explore_gradient(
    model: &mut MixingModel,
    dataset: &Dataset,
    config: &FitConfig,
) -> Result<PhaseOutcome> {
    let layout = model.layout();
    let p = layout.len();
    let mut v = model.free_params();
    let mut scratch = EvalScratch::default();
    let mut row = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut ema = vec![0.0; p];
    let rho: f64 = 0.9;
    let mut step = config.init_step;
    let mut obj = objective_of(&v, model, dataset)?;
    if !obj.is_finite() {
        return Ok(PhaseOutcome {
            objective: f64::INFINITY,
            iterations: 0,
            converged: false,
        });
    }
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..config.explore_iters {
        model.set_free_params(&v)?;
        grad.fill(0.0);
        for i in 0..dataset.len() {
            let f = model.eval_grad_with(dataset.input(i), &mut scratch, &mut row);
            let r = dataset.response(i) - f;
            for (g, &d) in grad.iter_mut().zip(&row) {
                *g -= 2.0 * r * d;
            }
        }
        if projected_gradient_norm(&v, &grad, &layout, &config.theta_box) <= config.grad_tol {
            converged = true;
            break;
        }
        let bias = 1.0 - rho.powi(it as i32 + 1);
        let mut direction = vec![0.0; p];
        for j in 0..p {
            ema[j] = rho * ema[j] + (1.0 - rho) * grad[j] * grad[j];
            direction[j] = grad[j] / ((ema[j] / bias).sqrt() + 1e-12);
        }
        let mut accepted = false;
        let mut cand = vec![0.0; p];
        for _ in 0..40 {
            for j in 0..p {
                let (lo, hi) = config.theta_box.bounds_for(&layout.entries[j].field);
                cand[j] = (v[j] - step * direction[j]).clamp(lo, hi);
            }
            let cand_obj = objective_of(&cand, model, dataset)?;
            if cand_obj.is_finite() && cand_obj < obj {
                v.copy_from_slice(&cand);
                obj = cand_obj;
                step = (step * 1.25).min(config.init_step * 20.0);
                accepted = true;
                break;
            }
            step *= 0.5;
            if step < 1e-15 {
                break;
            }
        }
        iterations = it + 1;
        if !accepted {
            break;
        }
    }
    model.set_free_params(&v)?;
    Ok(PhaseOutcome {
        objective: obj,
        iterations,
        converged,
    })
}

/// Damped Gauss-Newton refinement with box projection. Steps solve
/// `(J^T J + lambda diag) delta = J^T r` and are accepted only on strict
/// objective decrease; lambda shrinks on success and grows on rejection.
fn refine_lm(
    model: &mut MixingModel,
    dataset: &Dataset,
    config: &FitConfig,
) -> Result<PhaseOutcome> {
    let layout = model.layout();
    let p = layout.len();
    let mut v = model.free_params();
    let mut scratch = EvalScratch::default();
    let mut row = vec![0.0; p];
    let mut jtj = DMatrix::<f64>::zeros(p, p);
    let mut jtr = DVector::<f64>::zeros(p);
    let mut lambda = 1e-3;
    let mut obj = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    'outer: for it in 0..config.max_iters {
        model.set_free_params(&v)?;
        let now = accumulate_normal(model, dataset, &mut scratch, &mut row, &mut jtj, &mut jtr);
        if !now.is_finite() {
            return Ok(PhaseOutcome {
                objective: f64::INFINITY,
                iterations,
                converged: false,
            });
        }
        obj = now;
        iterations = it + 1;
        let obj_grad: Vec<f64> = jtr.iter().map(|&t| -2.0 * t).collect();
        if projected_gradient_norm(&v, &obj_grad, &layout, &config.theta_box) <= config.grad_tol {
            converged = true;
            break;
        }
        let mut cand = vec![0.0; p];
        loop {
            let mut damped = jtj.clone();
            for j in 0..p {
                let d = jtj[(j, j)].max(1e-12);
                damped[(j, j)] += lambda * d;
            }
            if let Some(chol) = Cholesky::new(damped) {
                let delta = chol.solve(&jtr);
                for j in 0..p {
                    let (lo, hi) = config.theta_box.bounds_for(&layout.entries[j].field);
                    cand[j] = (v[j] + delta[j]).clamp(lo, hi);
                }
                let cand_obj = objective_of(&cand, model, dataset)?;
                if cand_obj.is_finite() && cand_obj < obj {
                    v.copy_from_slice(&cand);
                    obj = cand_obj;
                    lambda = (lambda * 0.3).max(1e-12);
                    break;
                }
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                // No decreasing step exists at working precision.
                break 'outer;
            }
        }
    }
    model.set_free_params(&v)?;
    Ok(PhaseOutcome {
        objective: obj,
        iterations,
        converged,
    })
}

/// Outcome of a multi-start fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub fitted: MixingModel,
    /// Final sum of squared residuals on the full dataset.
    pub objective: f64,
    /// Whether the winning restart reached the gradient tolerance.
    pub converged: bool,
    /// Iterations spent by the winning restart (both phases).
    pub iterations: usize,
    pub winner_restart: usize,
    /// Final objective per restart; unrefined cold starts report their
    /// screening objective, diverged restarts infinity.
    pub per_restart_objectives: Vec<f64>,
}

struct Candidate {
    model: MixingModel,
    screening_obj: f64,
    warm: bool,
    iterations: usize,
}

/// Multi-start box-constrained least squares (see module docs). The warm
/// reference, when given, seeds warm restarts after duplication to the atom
/// budget and Gaussian jitter of scale `warm_perturbation_scale * n^(-1/4)`.
pub fn fit(
    dataset: &Dataset,
    shape: &ModelShape,
    warm_reference: Option<&MixingModel>,
    config: &FitConfig,
    seed: u64,
) -> Result<FitResult> {
    config.validate()?;
    shape.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument {
            arg: "dataset",
            reason: "cannot fit an empty dataset".into(),
        });
    }
    if shape.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            what: "fit input dimension",
            expected: shape.dim(),
            got: dataset.dim(),
        });
    }
    let needs_warm = !matches!(config.init_mode, InitMode::Cold);
    let reference = match (needs_warm, warm_reference) {
        (true, None) => {
            return Err(Error::InvalidConfig {
                reason: "warm or mixed init requires a reference model".into(),
            })
        }
        (true, Some(r)) => {
            shape.check_reference(r, config.k_fit)?;
            Some(r)
        }
        (false, r) => r,
    };
    let applied_scale =
        config.warm_perturbation_scale * (dataset.len() as f64).powf(-0.25);
    let explore_data = dataset.prefix(config.explore_subsample);

    let mut candidates: Vec<Candidate> = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let warm = match config.init_mode {
            InitMode::Cold => false,
            InitMode::Warm => true,
            InitMode::Mixed => restart == 0,
        };
        let mut model = if warm {
            let mut stream = Stream::new(seed, "fit.warm", &[restart as u64]);
            warm_start(
                reference.expect("checked above"),
                config.k_fit,
                &config.theta_box,
                applied_scale,
                &mut stream,
            )?
        } else {
            let mut stream = Stream::new(seed, "fit.cold", &[restart as u64]);
            cold_start(shape, config.k_fit, &config.theta_box, &mut stream)?
        };
        let mut iterations = 0;
        if !warm && config.explore_iters > 0 {
            let outcome = explore_gradient(&mut model, &explore_data, config)?;
            iterations = outcome.iterations;
        }
        let screening_obj = ls_objective(&model, dataset).unwrap_or(f64::INFINITY);
        let screening_obj = if screening_obj.is_finite() {
            screening_obj
        } else {
            f64::INFINITY
        };
        candidates.push(Candidate {
            model,
            screening_obj,
            warm,
            iterations,
        });
    }

    // Refinement set: every warm start plus the best cold starts by
    // screening objective.
    let mut refine = vec![false; candidates.len()];
    let mut cold_order: Vec<usize> = (0..candidates.len())
        .filter(|&i| !candidates[i].warm && candidates[i].screening_obj.is_finite())
        .collect();
    cold_order.sort_by(|&a, &b| {
        candidates[a]
            .screening_obj
            .partial_cmp(&candidates[b].screening_obj)
            .expect("finite objectives")
            .then(a.cmp(&b))
    });
    for &i in cold_order.iter().take(config.refine_top) {
        refine[i] = true;
    }
    for (i, c) in candidates.iter().enumerate() {
        if c.warm && c.screening_obj.is_finite() {
            refine[i] = true;
        }
    }

    let mut per_restart = vec![f64::INFINITY; candidates.len()];
    let mut outcomes: Vec<Option<PhaseOutcome>> = Vec::with_capacity(candidates.len());
    for (i, cand) in candidates.iter_mut().enumerate() {
        if refine[i] {
            let outcome = refine_lm(&mut cand.model, dataset, config)?;
            per_restart[i] = outcome.objective;
            outcomes.push(Some(outcome));
        } else {
            per_restart[i] = cand.screening_obj;
            outcomes.push(None);
        }
    }

    let winner = per_restart
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_finite())
        .min_by(|(ia, a), (ib, b)| a.partial_cmp(b).expect("finite").then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .ok_or(Error::FitFailure {
            reason: "every restart diverged to a non-finite objective".into(),
        })?;

    let winner_cand = candidates.swap_remove(winner);
    // swap_remove disturbed order only at `winner`, which we just removed.
    let (converged, lm_iters) = match &outcomes[winner] {
        Some(o) => (o.converged, o.iterations),
        None => (false, 0),
    };
    Ok(FitResult {
        fitted: winner_cand.model,
        objective: per_restart[winner],
        converged,
        iterations: winner_cand.iterations + lm_iters,
        winner_restart: winner,
        per_restart_objectives: per_restart,
    })
}
