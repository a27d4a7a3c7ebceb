//! End-to-end cost of the pieces a sweep replicate is made of: one small
//! multi-start fit, the parameter losses, and the Monte Carlo function
//! distance.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use moe_bench::{dataset_for, dense_to_sparse_truth, hierarchical_truth, perturbed, softmax_truth};
use moe_core::voronoi::{loss_l1, loss_l4, loss_l5, max_param_error};
use moe_core::{fit, FitConfig, InitMode, InputDistribution, MixingModel, ModelShape};

fn bench_fit(c: &mut Criterion) {
    let truth = softmax_truth();
    let dataset = dataset_for(&truth, 500, 13);
    let shape = ModelShape::of(&truth);
    let config = FitConfig {
        restarts: 2,
        max_iters: 60,
        explore_iters: 30,
        explore_subsample: 500,
        refine_top: 1,
        init_mode: InitMode::Mixed,
        ..FitConfig::default()
    };
    c.bench_function("fit_softmax_ffn_n500", |b| {
        b.iter(|| fit(black_box(&dataset), &shape, Some(&truth), &config, 17).unwrap())
    });
}

fn loss_value(fitted: &MixingModel, truth: &MixingModel) -> f64 {
    match (fitted, truth) {
        (MixingModel::Softmax(f), MixingModel::Softmax(t)) => loss_l1(f, t).unwrap().value,
        (MixingModel::DenseToSparse(f), MixingModel::DenseToSparse(t)) => {
            loss_l4(f, t).unwrap().value
        }
        (MixingModel::Hierarchical(f), MixingModel::Hierarchical(t)) => {
            loss_l5(f, t).unwrap().value
        }
        _ => unreachable!("bench pairs share a family"),
    }
}

fn bench_losses(c: &mut Criterion) {
    let pairs = [
        ("L1_softmax", softmax_truth()),
        ("L4_dense_to_sparse", dense_to_sparse_truth()),
        ("L5_hierarchical", hierarchical_truth()),
    ];
    let mut group = c.benchmark_group("voronoi_loss");
    for (name, truth) in &pairs {
        let fitted = perturbed(truth, 0.05);
        group.bench_function(*name, |b| {
            b.iter(|| loss_value(black_box(&fitted), truth))
        });
    }
    group.finish();

    let truth = softmax_truth();
    let fitted = perturbed(&truth, 0.05);
    c.bench_function("max_param_error", |b| {
        b.iter(|| max_param_error(black_box(&fitted), &truth).unwrap())
    });
}

fn bench_l2_distance(c: &mut Criterion) {
    let truth = softmax_truth();
    let fitted = perturbed(&truth, 0.05);
    let dist = InputDistribution::unit_box(truth.dimension());
    c.bench_function("l2_distance_20k_points", |b| {
        b.iter(|| moe_core::l2_distance(black_box(&fitted), &truth, &dist, 20_000, 5).unwrap())
    });
}

criterion_group!(benches, bench_fit, bench_losses, bench_l2_distance);
criterion_main!(benches);
