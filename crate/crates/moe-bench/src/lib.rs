//! Shared fixtures for the criterion benches: one truth per model family
//! (taken from the shipped scenario presets) and a small perturbation
//! helper so loss benches compare distinct models.

use moe_core::harness::preset;
use moe_core::{Dataset, InputDistribution, MixingModel};

pub fn softmax_truth() -> MixingModel {
    preset("softmax_ffn_exact").unwrap().truth
}

pub fn dense_to_sparse_truth() -> MixingModel {
    preset("d2s_router_exact").unwrap().truth
}

pub fn hierarchical_truth() -> MixingModel {
    preset("hier_ffn_exact").unwrap().truth
}

/// Shift every free parameter by `scale` times its index hash, a cheap
/// deterministic perturbation that keeps the model valid.
pub fn perturbed(model: &MixingModel, scale: f64) -> MixingModel {
    let mut out = model.clone();
    let mut v = out.free_params();
    for (i, p) in v.iter_mut().enumerate() {
        *p += scale * (0.3 + 0.1 * (i % 7) as f64);
    }
    out.set_free_params(&v).unwrap();
    out
}

pub fn input_points(model: &MixingModel, count: usize, seed: u64) -> Vec<f64> {
    let dist = InputDistribution::unit_box(model.dimension());
    moe_core::sample_inputs(&dist, count, seed).unwrap()
}

pub fn dataset_for(model: &MixingModel, n: usize, seed: u64) -> Dataset {
    let dist = InputDistribution::unit_box(model.dimension());
    moe_core::generate_dataset(model, &dist, n, 0.01, seed).unwrap()
}
