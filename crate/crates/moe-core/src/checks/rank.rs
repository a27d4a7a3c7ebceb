//! Numerical surrogate for linear independence of a function family.
//!
//! Functions are sampled at uniform points in the family's box; the sampled
//! matrix is column-normalized and its singular value spread decides the
//! verdict. Exact dependence drives sigma_min to roundoff; genuinely
//! independent families observed in this crate sit many orders above the
//! default tolerance. A pass is evidence of independence on the sampled
//! box, not a proof.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::checks::sets::FunctionSet;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Outcome of [`rank_test`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankVerdict {
    pub independent: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub num_points: usize,
    pub tolerance: f64,
    /// When dependent: coefficients of a vanishing combination, scaled so
    /// the largest magnitude is one, paired with function labels.
    pub null_combination: Option<Vec<(String, f64)>>,
}

/// Decide independence of `set` by evaluating at `num_points` uniform
/// points and thresholding sigma_min/sigma_max of the column-normalized
/// sample matrix against `tolerance`.
pub fn rank_test(
    set: &FunctionSet,
    num_points: usize,
    seed: u64,
    tolerance: f64,
) -> Result<RankVerdict> {
    if set.is_empty() {
        return Err(Error::InvalidArgument {
            arg: "set",
            reason: "cannot rank an empty function set".into(),
        });
    }
    if num_points < 2 * set.len() {
        return Err(Error::InvalidArgument {
            arg: "num_points",
            reason: format!(
                "need at least {} points for {} functions, got {num_points}",
                2 * set.len(),
                set.len()
            ),
        });
    }
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::InvalidArgument {
            arg: "tolerance",
            reason: format!("tolerance must lie in (0, 1), got {tolerance}"),
        });
    }

    let p = set.len();
    let mut stream = Stream::new(seed, "check.rank", &[]);
    let mut matrix = DMatrix::<f64>::zeros(num_points, p);
    let mut x = vec![0.0; set.dim];
    for i in 0..num_points {
        for c in x.iter_mut() {
            *c = stream.uniform_in(set.lo, set.hi);
        }
        for (j, f) in set.functions.iter().enumerate() {
            let v = f.eval(&x);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("function \"{}\" at a rank-test point", f.label),
                });
            }
            matrix[(i, j)] = v;
        }
    }

    // Column normalization makes the verdict invariant to rescaling any
    // single function. A column that vanishes at every sample is already a
    // dependent member; report it directly.
    let mut column_norms = vec![0.0; p];
    for j in 0..p {
        let norm = matrix.column(j).norm();
        column_norms[j] = norm;
        if norm == 0.0 {
            let combo = (0..p)
                .map(|k| {
                    (
                        set.functions[k].label.clone(),
                        if k == j { 1.0 } else { 0.0 },
                    )
                })
                .collect();
            return Ok(RankVerdict {
                independent: false,
                sigma_min: 0.0,
                sigma_max: 1.0,
                num_points,
                tolerance,
                null_combination: Some(combo),
            });
        }
        for i in 0..num_points {
            matrix[(i, j)] /= norm;
        }
    }

    let svd = matrix.svd(false, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let sigma_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let independent = sigma_min / sigma_max > tolerance;
    let null_combination = if independent {
        None
    } else {
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let (min_idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| {
                if s < acc.1 {
                    (i, s)
                } else {
                    acc
                }
            });
        // Map the null direction back to coefficients on the raw
        // functions, then scale the largest magnitude to one.
        let row = v_t.row(min_idx);
        let raw: Vec<f64> = row
            .iter()
            .zip(&column_norms)
            .map(|(&c, &norm)| c / norm)
            .collect();
        let scale = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let combo = set
            .functions
            .iter()
            .zip(&raw)
            .map(|(f, &c)| (f.label.clone(), if scale > 0.0 { c / scale } else { c }))
            .collect();
        Some(combo)
    };
    Ok(RankVerdict {
        independent,
        sigma_min,
        sigma_max,
        num_points,
        tolerance,
        null_combination,
    })
}
