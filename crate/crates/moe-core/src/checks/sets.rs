//! Derivative function families whose linear independence separates experts
//! with polynomial estimation rates from those without.
//!
//! Two families are built here. The expert family collects monomial-weighted
//! parameter derivatives of the expert alone; the router-expert family
//! collects the products of router derivatives and expert derivatives that
//! arise when a learned score is fed through a tempered gate. Independence
//! of the family is the structural condition; [`rank_test`](crate::checks::rank_test)
//! is its numerical surrogate.
//!
//! Derivative enumeration stops at first order in the expert parameters and
//! skips a parameter the expert uses as a pure outer scale. This is
//! deliberate: for every expert built here, two exact identities make the
//! naive second-order family degenerate regardless of parameter values. An
//! expert of the form c*s(z) has each c-derivative proportional to a
//! member already present (and a vanishing second c-derivative), and input
//! normalization forces the trace of the Hessian in a to equal the second
//! b-derivative. Either identity would stamp "dependent" on every such
//! expert and drown the distinction the audit exists to draw, namely whether
//! gating monomials can reproduce first-order expert perturbations. The
//! relations that mark degenerate experts (the duplication of x*dE/db with
//! dE/da for linear experts, and the scaling relation tying E to its own
//! first derivatives for homogeneous activations) live entirely at first
//! order and stay detectable.
//!
//! Independence is a property of the set of functions, so enumeration
//! entries that are the same function of x are merged before testing. Dot-
//! product experts make this unavoidable rather than cosmetic: the gradient
//! in a is parallel to the input direction, hence x_v * dE/da_u and
//! x_u * dE/da_v coincide identically (likewise the router-expert cross
//! products dpi_u * dE/da_v). Without merging, every expert of this shape
//! would be declared dependent by its own symmetry. The degeneracies the
//! audit is after are span relations among distinct functions (a linear
//! expert sits in the span of the monomials; homogeneous activations
//! satisfy an Euler relation) and those survive the merge untouched.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::model::expert::{dot, normalized};
use crate::model::{ExpertSpec, Router};
use crate::rng::Stream;

/// One scalar function of x, carrying a label for diagnostics.
pub struct SetFunction {
    pub label: String,
    pub f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl SetFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl std::fmt::Debug for SetFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SetFunction")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

/// A family of scalar functions evaluated on a common input box.
#[derive(Debug)]
pub struct FunctionSet {
    pub functions: Vec<SetFunction>,
    pub dim: usize,
    /// Componentwise evaluation box, used by the rank test to draw points.
    pub lo: f64,
    pub hi: f64,
}

impl FunctionSet {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.functions.iter().map(|f| f.label.as_str()).collect()
    }
}

/// Monomials x^v with |v| <= 2: the empty product, every coordinate, and
/// every coordinate pair u <= v.
fn monomials(dim: usize, max_degree: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![("1".to_string(), Vec::new())];
    if max_degree >= 1 {
        for u in 0..dim {
            out.push((format!("x{u}"), vec![u]));
        }
    }
    if max_degree >= 2 {
        for u in 0..dim {
            for v in u..dim {
                let label = if u == v {
                    format!("x{u}^2")
                } else {
                    format!("x{u}*x{v}")
                };
                out.push((label, vec![u, v]));
            }
        }
    }
    out
}

fn monomial_value(x: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&u| x[u]).product()
}

/// Expert parameters enumerated for derivatives: the slope block a and the
/// offset b. The outer scale of an FFN expert is excluded (see module docs).
fn derivative_coords(expert: &ExpertSpec) -> Vec<(String, usize)> {
    let d = expert.dimension();
    let mut coords: Vec<(String, usize)> = (0..d).map(|u| (format!("a{u}"), u)).collect();
    coords.push(("b".to_string(), d));
    coords
}

fn check_distinct_experts(experts: &[ExpertSpec]) -> Result<()> {
    if experts.is_empty() {
        return Err(Error::InvalidArgument {
            arg: "experts",
            reason: "need at least one expert".into(),
        });
    }
    for e in experts {
        e.validate()?;
        if !e.same_kind(&experts[0]) {
            return Err(Error::FamilyMismatch {
                expected: experts[0].kind_label(),
                got: e.kind_label(),
            });
        }
        if e.dimension() != experts[0].dimension() {
            return Err(Error::DimensionMismatch {
                what: "expert input dimension",
                expected: experts[0].dimension(),
                got: e.dimension(),
            });
        }
    }
    for i in 0..experts.len() {
        for j in i + 1..experts.len() {
            if experts[i].params() == experts[j].params() {
                return Err(Error::InvalidArgument {
                    arg: "experts",
                    reason: format!("experts {i} and {j} have identical parameters"),
                });
            }
        }
    }
    Ok(())
}

/// Merge enumeration entries that are the same function of x up to
/// rounding (set semantics; module docs explain why symmetric structures
/// repeat entries). Functions are compared on a fixed probe grid and
/// merged only when they agree to near machine precision, so genuine
/// near-dependences are left to the rank test. A merged entry keeps every
/// constituent label, joined with " = ". Identically-zero entries are
/// never merged; a zero function is a real dependence, not a repeat.
fn merge_duplicate_functions(
    functions: Vec<SetFunction>,
    dim: usize,
    lo: f64,
    hi: f64,
) -> Vec<SetFunction> {
    const PROBE_POINTS: usize = 64;
    const MERGE_TOL: f64 = 1e-11;
    let mut rng = Stream::new(0, "check.dedup", &[]);
    let mut grid = vec![0.0f64; PROBE_POINTS * dim];
    for p in grid.iter_mut() {
        *p = rng.uniform_in(lo, hi);
    }
    let mut kept: Vec<SetFunction> = Vec::with_capacity(functions.len());
    let mut kept_values: Vec<(Vec<f64>, f64)> = Vec::with_capacity(functions.len());
    for f in functions {
        let values: Vec<f64> = grid.chunks_exact(dim).map(|x| f.eval(x)).collect();
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut duplicate_of = None;
        if scale > 0.0 {
            for (i, (existing, other_scale)) in kept_values.iter().enumerate() {
                if *other_scale == 0.0 {
                    continue;
                }
                let bound = MERGE_TOL * scale.max(*other_scale);
                if values
                    .iter()
                    .zip(existing)
                    .all(|(a, b)| (a - b).abs() <= bound)
                {
                    duplicate_of = Some(i);
                    break;
                }
            }
        }
        match duplicate_of {
            Some(i) => {
                kept[i].label.push_str(" = ");
                kept[i].label.push_str(&f.label);
            }
            None => {
                kept.push(f);
                kept_values.push((values, scale));
            }
        }
    }
    kept
}

/// Family of monomial-weighted expert derivatives x^v * dE/d(eta) over all
/// experts, with total order |v| + |derivative| <= 2 and derivatives of
/// first order (module docs explain the cutoff). Entries coinciding as
/// functions are merged.
pub fn build_strong_identifiability_set(experts: &[ExpertSpec]) -> Result<FunctionSet> {
    check_distinct_experts(experts)?;
    let dim = experts[0].dimension();
    let mut functions = Vec::new();
    for (j, expert) in experts.iter().enumerate() {
        for (mono_label, mono) in monomials(dim, 2) {
            let e = expert.clone();
            let idx = mono.clone();
            functions.push(SetFunction {
                label: format!("{mono_label} * E @ eta{j}"),
                f: Box::new(move |x| monomial_value(x, &idx) * e.eval(x)),
            });
        }
        for (coord_label, coord) in derivative_coords(expert) {
            for (mono_label, mono) in monomials(dim, 1) {
                let e = expert.clone();
                let idx = mono.clone();
                functions.push(SetFunction {
                    label: format!("{mono_label} * dE/d{coord_label} @ eta{j}"),
                    f: Box::new(move |x| monomial_value(x, &idx) * e.param_partial(x, coord)),
                });
            }
        }
    }
    Ok(FunctionSet {
        functions: merge_duplicate_functions(functions, dim, -1.0, 1.0),
        dim,
        lo: -1.0,
        hi: 1.0,
    })
}

fn router_score(router: Router, omega: &[f64], x: &[f64]) -> f64 {
    match router {
        Router::Linear => dot(omega, x),
        Router::Activated(act) => act.value(dot(omega, x)),
    }
}

fn router_partial(router: Router, omega: &[f64], x: &[f64], u: usize) -> f64 {
    match router {
        Router::Linear => x[u],
        Router::Activated(act) => act.derivative(dot(omega, x)) * x[u],
    }
}

/// Second router derivative by a central difference of the analytic first
/// derivative. Identically zero for the linear router, so callers skip it
/// there.
fn router_second_partial(router: Router, omega: &[f64], x: &[f64], u: usize, v: usize) -> f64 {
    let h = 1e-4 * omega[v].abs().max(1.0);
    let mut hi = omega.to_vec();
    hi[v] += h;
    let mut lo = omega.to_vec();
    lo[v] -= h;
    (router_partial(router, &hi, x, u) - router_partial(router, &lo, x, u)) / (2.0 * h)
}

/// Family of router-derivative and expert-derivative products over all
/// atom pairs: E, pi*E, dpi*E, dpi*dpi*E, d2pi*E, pi*dpi*E, dE, pi*dE,
/// dpi*dE. Expert derivatives are first order (module docs); the second
/// router derivative is kept except for the linear router, where it
/// vanishes identically.
pub fn build_algebraic_independence_set(
    router: Router,
    omegas: &[Vec<f64>],
    experts: &[ExpertSpec],
) -> Result<FunctionSet> {
    check_distinct_experts(experts)?;
    if omegas.len() != experts.len() {
        return Err(Error::DimensionMismatch {
            what: "router parameter count",
            expected: experts.len(),
            got: omegas.len(),
        });
    }
    let dim = experts[0].dimension();
    for w in omegas {
        if w.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "router parameter dimension",
                expected: dim,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "router parameters".into(),
            });
        }
    }
    for i in 0..omegas.len() {
        for j in i + 1..omegas.len() {
            if omegas[i] == omegas[j] {
                return Err(Error::InvalidArgument {
                    arg: "omegas",
                    reason: format!("router parameters {i} and {j} are identical"),
                });
            }
        }
    }

    let mut functions: Vec<SetFunction> = Vec::new();
    let mut push = |label: String, f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>| {
        functions.push(SetFunction { label, f });
    };
    for (j, (omega, expert)) in omegas.iter().zip(experts).enumerate() {
        {
            let e = expert.clone();
            push(format!("E @ pair{j}"), Box::new(move |x| e.eval(x)));
        }
        {
            let e = expert.clone();
            let w = omega.clone();
            push(
                format!("pi * E @ pair{j}"),
                Box::new(move |x| router_score(router, &w, x) * e.eval(x)),
            );
        }
        for u in 0..dim {
            let e = expert.clone();
            let w = omega.clone();
            push(
                format!("dpi/dw{u} * E @ pair{j}"),
                Box::new(move |x| router_partial(router, &w, x, u) * e.eval(x)),
            );
        }
        for u in 0..dim {
            for v in u..dim {
                let e = expert.clone();
                let w = omega.clone();
                push(
                    format!("dpi/dw{u} * dpi/dw{v} * E @ pair{j}"),
                    Box::new(move |x| {
                        router_partial(router, &w, x, u)
                            * router_partial(router, &w, x, v)
                            * e.eval(x)
                    }),
                );
            }
        }
        if router != Router::Linear {
            for u in 0..dim {
                for v in u..dim {
                    let e = expert.clone();
                    let w = omega.clone();
                    push(
                        format!("d2pi/dw{u}.dw{v} * E @ pair{j}"),
                        Box::new(move |x| router_second_partial(router, &w, x, u, v) * e.eval(x)),
                    );
                }
            }
        }
        for u in 0..dim {
            let e = expert.clone();
            let w = omega.clone();
            push(
                format!("pi * dpi/dw{u} * E @ pair{j}"),
                Box::new(move |x| {
                    router_score(router, &w, x) * router_partial(router, &w, x, u) * e.eval(x)
                }),
            );
        }
        for (coord_label, coord) in derivative_coords(expert) {
            {
                let e = expert.clone();
                push(
                    format!("dE/d{coord_label} @ pair{j}"),
                    Box::new(move |x| e.param_partial(x, coord)),
                );
            }
            {
                let e = expert.clone();
                let w = omega.clone();
                push(
                    format!("pi * dE/d{coord_label} @ pair{j}"),
                    Box::new(move |x| router_score(router, &w, x) * e.param_partial(x, coord)),
                );
            }
            for u in 0..dim {
                let e = expert.clone();
                let w = omega.clone();
                push(
                    format!("dpi/dw{u} * dE/d{coord_label} @ pair{j}"),
                    Box::new(move |x| {
                        router_partial(router, &w, x, u) * e.param_partial(x, coord)
                    }),
                );
            }
        }
    }
    Ok(FunctionSet {
        functions: merge_duplicate_functions(functions, dim, -1.0, 1.0),
        dim,
        lo: -1.0,
        hi: 1.0,
    })
}

/// A named independence audit with its expected verdict.
pub struct AuditCase {
    pub name: String,
    pub set: FunctionSet,
    pub expect_independent: bool,
}

fn ffn(a: Vec<f64>, b: f64, c: f64, activation: Activation) -> ExpertSpec {
    ExpertSpec::Ffn {
        a,
        b,
        c,
        activation,
    }
}

/// The catalogue of audit cases the `check` command and the acceptance
/// tests run: normalized-input FFN experts with sigmoid, tanh, and GELU
/// activations are expected independent; linear and polynomial experts
/// dependent; an activated router paired with a differently activated FFN
/// expert independent; linear and polynomial router-expert pairs dependent.
pub fn identifiability_cases() -> Result<Vec<AuditCase>> {
    let a1 = vec![2.0, -1.4];
    let a2 = vec![1.4, 1.6];
    let w1 = vec![1.2, -0.8];
    let w2 = vec![0.3, 0.9];
    let mut cases = Vec::new();

    for act in [Activation::Sigmoid, Activation::Tanh, Activation::Gelu] {
        let experts = vec![
            ffn(a1.clone(), 0.5, 1.5, act),
            ffn(a2.clone(), -0.4, -1.2, act),
        ];
        cases.push(AuditCase {
            name: format!("expert_ffn_{act:?}").to_lowercase(),
            set: build_strong_identifiability_set(&experts)?,
            expect_independent: true,
        });
    }
    cases.push(AuditCase {
        name: "expert_linear".into(),
        set: build_strong_identifiability_set(&[
            ExpertSpec::Linear {
                a: a1.clone(),
                b: 0.5,
            },
            ExpertSpec::Linear {
                a: a2.clone(),
                b: -0.4,
            },
        ])?,
        expect_independent: false,
    });
    cases.push(AuditCase {
        name: "expert_ffn_poly2".into(),
        set: build_strong_identifiability_set(&[
            ffn(a1.clone(), 0.5, 1.5, Activation::Poly(2)),
            ffn(a2.clone(), -0.4, -1.2, Activation::Poly(2)),
        ])?,
        expect_independent: false,
    });

    cases.push(AuditCase {
        name: "router_sigmoid_expert_tanh".into(),
        set: build_algebraic_independence_set(
            Router::Activated(Activation::Sigmoid),
            &[w1.clone(), w2.clone()],
            &[
                ffn(a1.clone(), 0.5, 1.5, Activation::Tanh),
                ffn(a2.clone(), -0.4, -1.2, Activation::Tanh),
            ],
        )?,
        expect_independent: true,
    });
    cases.push(AuditCase {
        name: "router_linear_expert_linear".into(),
        set: build_algebraic_independence_set(
            Router::Linear,
            &[w1.clone(), w2.clone()],
            &[
                ExpertSpec::Linear {
                    a: a1.clone(),
                    b: 0.5,
                },
                ExpertSpec::Linear {
                    a: a2.clone(),
                    b: -0.4,
                },
            ],
        )?,
        expect_independent: false,
    });
    cases.push(AuditCase {
        name: "router_poly_expert_poly".into(),
        set: build_algebraic_independence_set(
            Router::Activated(Activation::Poly(2)),
            &[w1, w2],
            &[
                ffn(a1, 0.5, 1.5, Activation::Poly(3)),
                ffn(a2, -0.4, -1.2, Activation::Poly(3)),
            ],
        )?,
        expect_independent: false,
    });
    Ok(cases)
}

/// Normalized input shared by the expert closures; exposed for tests that
/// hand-build comparison functions.
pub fn unit_direction(x: &[f64]) -> Vec<f64> {
    normalized(x).0
}
