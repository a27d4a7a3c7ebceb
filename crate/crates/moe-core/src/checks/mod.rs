//! Numerical audits of the model structure: linear-independence tests for
//! expert and router derivative families, residuals of exact
//! parameter-interaction identities, and explicit slow-loss mixing-measure
//! sequences with closed-form losses and L2-ratio probes.

pub mod adversarial;
pub mod pde;
pub mod probe;
pub mod rank;
pub mod sets;

pub use adversarial::{
    adversarial_sequence_hierarchical, adversarial_sequence_linear,
    adversarial_sequence_temperature, closed_form_l2r, closed_form_l3r, closed_form_l6r,
};
pub use pde::{
    pde_residual_expert, pde_residual_hierarchical, pde_residual_hierarchical_expert,
    pde_residual_linear_expert, pde_residual_temperature, run_pde_audit, LiftedExpert,
    PdeAuditReport, PdeRegime,
};
pub use probe::{l2_distance, l2_ratio_probe, RatioRow};
pub use rank::{rank_test, RankVerdict};
pub use sets::{
    build_algebraic_independence_set, build_strong_identifiability_set, identifiability_cases,
    AuditCase, FunctionSet, SetFunction,
};
