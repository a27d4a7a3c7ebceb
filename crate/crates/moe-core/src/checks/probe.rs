//! Monte Carlo probe of the L2 distance between regression functions along
//! a mixing-measure sequence, reported as a ratio against a parameter loss.
//!
//! For the adversarial sequences in [`super::adversarial`] the ratio
//! `||f_G_n - f_truth||_L2 / loss(G_n, truth)` tends to zero, which is the
//! numerical witness that no bound of the form `loss <= C * distance` can
//! hold for these model classes. The probe shares one fixed input sample
//! across the whole grid so that rows differ only through the sequence.

use rayon::prelude::*;

use crate::data::InputDistribution;
use crate::error::{Error, Result};
use crate::model::{EvalScratch, MixingModel};

/// Points per parallel work unit. Fixed so the chunk sums, and therefore
/// the final left-to-right fold, are identical under any thread count.
const CHUNK: usize = 4096;

/// One grid entry of the distance-to-loss probe.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RatioRow {
    pub n: u64,
    pub l2_distance: f64,
    pub loss: f64,
    /// `l2_distance / loss`; absent when the loss is exactly zero.
    pub ratio: Option<f64>,
}

fn sample_probe_points(dist: &InputDistribution, mc_points: usize, seed: u64) -> Result<Vec<f64>> {
    dist.validate()?;
    if mc_points < 10_000 {
        return Err(Error::InvalidArgument {
            arg: "mc_points",
            reason: format!("need at least 10000 Monte Carlo points, got {mc_points}"),
        });
    }
    let mut rng = crate::rng::Stream::new(seed, "probe.l2", &[]);
    let mut points = vec![0.0f64; mc_points * dist.dim];
    for p in points.iter_mut() {
        *p = rng.uniform_in(dist.lo, dist.hi);
    }
    Ok(points)
}

/// Gaps whose mean square falls below `RESOLUTION_ULPS^2 * eps^2` times the
/// mean square of the functions themselves are indistinguishable from exact
/// function equality: two different evaluation orders of the same function
/// already disagree by a few ulps per point. Such gaps are reported as zero
/// rather than as rounding noise, which would otherwise masquerade as a
/// tiny genuine distance.
const RESOLUTION_ULPS: f64 = 32.0;

/// Mean squared gap between two regression functions over a flat point
/// buffer, chunked so the fold order is independent of the thread count.
/// Snaps to exactly zero below the floating-point resolution floor.
fn mean_square_gap(a: &MixingModel, b: &MixingModel, dim: usize, points: &[f64]) -> Result<f64> {
    let chunk_sums: Vec<(f64, f64)> = points
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let mut scratch = EvalScratch::default();
            let mut gap = 0.0;
            let mut scale = 0.0;
            for x in chunk.chunks_exact(dim) {
                let fa = a.eval_with(x, &mut scratch);
                let fb = b.eval_with(x, &mut scratch);
                let diff = fa - fb;
                gap += diff * diff;
                scale += 0.5 * (fa * fa + fb * fb);
            }
            (gap, scale)
        })
        .collect();
    let count = (points.len() / dim) as f64;
    let mean_sq = chunk_sums.iter().map(|s| s.0).sum::<f64>() / count;
    let mean_scale = chunk_sums.iter().map(|s| s.1).sum::<f64>() / count;
    if !mean_sq.is_finite() || !mean_scale.is_finite() {
        return Err(Error::NonFinite {
            context: "L2 distance probe".into(),
        });
    }
    let floor = (RESOLUTION_ULPS * f64::EPSILON).powi(2) * mean_scale;
    Ok(if mean_sq <= floor { 0.0 } else { mean_sq })
}

/// Monte Carlo estimate of `sqrt(E[(f_a(X) - f_b(X))^2])` over `dist`.
///
/// Draws `mc_points` points (at least 10_000) once from a stream keyed by
/// `seed`, so the estimate is a pure function of its arguments. Estimates
/// below the floating-point resolution floor come back as exactly zero;
/// see [`RESOLUTION_ULPS`].
pub fn l2_distance(
    a: &MixingModel,
    b: &MixingModel,
    dist: &InputDistribution,
    mc_points: usize,
    seed: u64,
) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            what: "L2 distance operands",
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    if dist.dim != a.dimension() {
        return Err(Error::DimensionMismatch {
            what: "L2 distance input distribution",
            expected: a.dimension(),
            got: dist.dim,
        });
    }
    let points = sample_probe_points(dist, mc_points, seed)?;
    Ok(mean_square_gap(a, b, dist.dim, &points)?.sqrt())
}

/// Evaluate `sqrt(E[(f_G_n(X) - f_truth(X))^2])` by Monte Carlo and divide
/// by `loss(G_n, truth)` for each `n` in the grid.
///
/// The same `mc_points` sample (at least 10_000 points, drawn once from
/// `dist` with the given seed) is reused for every row.
pub fn l2_ratio_probe<S, L>(
    sequence: S,
    truth: &MixingModel,
    loss: L,
    n_grid: &[u64],
    dist: &InputDistribution,
    mc_points: usize,
    seed: u64,
) -> Result<Vec<RatioRow>>
where
    S: Fn(u64) -> Result<MixingModel>,
    L: Fn(&MixingModel, &MixingModel) -> Result<f64>,
{
    truth.validate()?;
    dist.validate()?;
    if dist.dim != truth.dimension() {
        return Err(Error::DimensionMismatch {
            what: "probe input distribution",
            expected: truth.dimension(),
            got: dist.dim,
        });
    }
    if n_grid.is_empty() {
        return Err(Error::InvalidArgument {
            arg: "n_grid",
            reason: "need at least one sequence index".into(),
        });
    }

    let dim = dist.dim;
    let points = sample_probe_points(dist, mc_points, seed)?;

    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let candidate = sequence(n)?;
        candidate.validate()?;
        if candidate.dimension() != dim {
            return Err(Error::DimensionMismatch {
                what: "sequence element",
                expected: dim,
                got: candidate.dimension(),
            });
        }
        let l2_distance = mean_square_gap(&candidate, truth, dim, &points)?.sqrt();
        let loss_value = loss(&candidate, truth)?;
        let ratio = if loss_value == 0.0 {
            None
        } else {
            Some(l2_distance / loss_value)
        };
        rows.push(RatioRow {
            n,
            l2_distance,
            loss: loss_value,
            ratio,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::adversarial::{adversarial_sequence_linear, closed_form_l2r};
    use crate::model::{Atom, ExpertSpec, SoftmaxMixingMeasure};
    use crate::voronoi::loss_l1;

    fn truth() -> SoftmaxMixingMeasure {
        SoftmaxMixingMeasure::new(
            vec![
                Atom {
                    beta: 0.4,
                    omega: vec![1.2, -0.8],
                    expert: ExpertSpec::Linear {
                        a: vec![1.0, -0.5],
                        b: 0.3,
                    },
                },
                Atom {
                    beta: 0.0,
                    omega: vec![0.0, 0.0],
                    expert: ExpertSpec::Linear {
                        a: vec![-0.7, 0.9],
                        b: -0.2,
                    },
                },
            ],
            true,
        )
        .unwrap()
    }

    fn l1_loss(candidate: &MixingModel, reference: &MixingModel) -> Result<f64> {
        match (candidate, reference) {
            (MixingModel::Softmax(c), MixingModel::Softmax(t)) => {
                Ok(loss_l1(c, t)?.value)
            }
            _ => unreachable!("probe tests use the softmax family only"),
        }
    }

    #[test]
    fn truth_against_itself_has_zero_distance_and_no_ratio() {
        let t = MixingModel::Softmax(truth());
        let rows = l2_ratio_probe(
            |_| Ok(t.clone()),
            &t,
            l1_loss,
            &[1, 2],
            &InputDistribution::unit_box(2),
            10_000,
            7,
        )
        .unwrap();
        for row in rows {
            assert_eq!(row.l2_distance, 0.0);
            assert_eq!(row.loss, 0.0);
            assert!(row.ratio.is_none());
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let t = MixingModel::Softmax(truth());
        let err = l2_ratio_probe(
            |_| Ok(t.clone()),
            &t,
            l1_loss,
            &[1],
            &InputDistribution::unit_box(2),
            9_999,
            7,
        );
        assert!(err.is_err());
    }

    #[test]
    fn probe_is_deterministic() {
        let t = MixingModel::Softmax(truth());
        let run = || {
            l2_ratio_probe(
                |n| Ok(MixingModel::Softmax(
                    adversarial_sequence_linear(&truth(), n, 1.0).unwrap(),
                )),
                &t,
                |c, r| match (c, r) {
                    (MixingModel::Softmax(c), MixingModel::Softmax(t)) => {
                        crate::voronoi::loss_l2r(c, t, 1.0).map(|l| l.value)
                    }
                    _ => unreachable!(),
                },
                &[10, 100],
                &InputDistribution::unit_box(2),
                20_000,
                42,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.l2_distance.to_bits(), rb.l2_distance.to_bits());
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        }
    }

    #[test]
    fn split_sequence_ratio_collapses_with_n() {
        let t = MixingModel::Softmax(truth());
        let rows = l2_ratio_probe(
            |n| Ok(MixingModel::Softmax(
                adversarial_sequence_linear(&truth(), n, 1.0).unwrap(),
            )),
            &t,
            |c, r| match (c, r) {
                (MixingModel::Softmax(c), MixingModel::Softmax(t)) => {
                    crate::voronoi::loss_l2r(c, t, 1.0).map(|l| l.value)
                }
                _ => unreachable!(),
            },
            &[10, 1000],
            &InputDistribution::unit_box(2),
            50_000,
            3,
        )
        .unwrap();
        let r10 = rows[0].ratio.unwrap();
        let r1000 = rows[1].ratio.unwrap();
        assert!(
            r1000 <= 0.1 * r10,
            "ratio should collapse: {r10} at n=10 vs {r1000} at n=1000"
        );
        for row in &rows {
            let expected = closed_form_l2r(&truth(), row.n, 1.0).unwrap();
            assert!((row.loss - expected).abs() <= 1e-10 * expected);
        }
    }

    #[test]
    fn function_preserving_rewrite_measures_exactly_zero() {
        // The temperature drift keeps omega/tau and the cell weights exact,
        // so the gating function is unchanged while the parameters move.
        // The probe must report a zero distance, not per-point rounding
        // noise, even though the two models evaluate through different
        // arithmetic.
        use crate::checks::adversarial::adversarial_sequence_temperature;
        use crate::model::{DenseToSparseMixingMeasure, Router};
        let base =
            DenseToSparseMixingMeasure::new(truth().atoms, 1.5, Router::Linear, true).unwrap();
        let t = MixingModel::DenseToSparse(base.clone());
        let rows = l2_ratio_probe(
            |n| {
                Ok(MixingModel::DenseToSparse(
                    adversarial_sequence_temperature(&base, n, 1.0, 2).unwrap(),
                ))
            },
            &t,
            |c, r| match (c, r) {
                (MixingModel::DenseToSparse(c), MixingModel::DenseToSparse(t)) => {
                    crate::voronoi::loss_l3r(c, t, 1.0).map(|l| l.value)
                }
                _ => unreachable!(),
            },
            &[10, 1000],
            &InputDistribution::unit_box(2),
            20_000,
            5,
        )
        .unwrap();
        for row in &rows {
            assert_eq!(row.l2_distance, 0.0, "rewrite at n={} is exact", row.n);
            assert!(row.loss > 0.0);
            assert_eq!(row.ratio, Some(0.0));
        }
    }

    #[test]
    fn distance_scales_linearly_under_small_offsets() {
        // Perturbing one expert offset by t makes the L2 distance behave
        // like c*t, so distance/t is stable across three decades of t.
        let t_model = MixingModel::Softmax(truth());
        let sequence = |n: u64| -> Result<MixingModel> {
            let mut g = truth();
            let step = 1.0 / n as f64;
            if let ExpertSpec::Linear { b, .. } = &mut g.atoms[0].expert {
                *b += step;
            }
            Ok(MixingModel::Softmax(g))
        };
        let rows = l2_ratio_probe(
            sequence,
            &t_model,
            |c, r| match (c, r) {
                (MixingModel::Softmax(c), MixingModel::Softmax(t)) => {
                    Ok(loss_l1(c, t)?.value)
                }
                _ => unreachable!(),
            },
            &[10, 100, 1000],
            &InputDistribution::unit_box(2),
            30_000,
            11,
        )
        .unwrap();
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio.unwrap()).collect();
        for pair in ratios.windows(2) {
            let quotient = pair[0] / pair[1];
            assert!(
                quotient > 0.1 && quotient < 10.0,
                "first-order ratios should be stable, got {ratios:?}"
            );
        }
    }
}
