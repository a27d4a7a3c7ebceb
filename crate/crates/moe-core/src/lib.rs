//! Core library for the mixture-of-experts numerical laboratory.
//!
//! The crate is organized bottom-up:
//!
//! * [`rng`] deterministic seed derivation and sampling streams
//! * [`activation`] scalar nonlinearities shared by experts and routers
//! * [`model`] regression functions, parameter layouts, analytic gradients
//! * [`data`] synthetic dataset generation and the least-squares objective
//! * [`voronoi`] partition-based parameter-space losses
//! * [`fitting`] multi-start box-constrained least-squares estimation
//! * [`checks`] identifiability probes, PDE residuals, adversarial sequences
//! * [`harness`] experiment configs, sweeps, slope fits, and reports

pub mod activation;
pub mod checks;
pub mod data;
pub mod error;
pub mod fitting;
pub mod harness;
pub mod model;
pub mod rng;
pub mod voronoi;

pub use activation::Activation;
pub use checks::{
    adversarial_sequence_hierarchical, adversarial_sequence_linear,
    adversarial_sequence_temperature, closed_form_l2r, closed_form_l3r, closed_form_l6r,
    identifiability_cases, l2_distance, l2_ratio_probe, rank_test, run_pde_audit, AuditCase,
    FunctionSet, PdeAuditReport, RankVerdict, RatioRow,
};
pub use data::{generate_dataset, sample_inputs, Dataset, InputDistribution};
pub use error::{Error, Result};
pub use fitting::{
    expand_to_budget, fit, ls_gradient, ls_objective, project_to_box, ExpertForm, FitConfig,
    FitResult, InitMode, ModelShape, ThetaBox,
};
pub use model::{
    grad_regression, Atom, DenseToSparseMixingMeasure, EvalScratch, ExpertSpec, GradientVector,
    Group, HierarchicalMixingMeasure, InnerAtom, MixingModel, ParamEntry, ParamField, ParamLayout,
    Router, SoftmaxMixingMeasure,
};
pub use rng::{derive_seed, Stream};
pub use voronoi::{LossReport, VoronoiPartition};
