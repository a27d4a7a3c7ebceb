//! Log-log rate estimation: ordinary least squares on `(ln n, ln median)`
//! plus the order statistics the sweep report is built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted decay rate of a loss against sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// OLS slope of `ln median` against `ln n`; a loss behaving like
    /// `c * n^p` comes out as `p` exactly.
    pub slope: f64,
    /// OLS intercept, i.e. `ln c` for an exact power law.
    pub intercept: f64,
    /// Coefficient of determination; 1.0 when the medians are collinear in
    /// log-log space, and 1.0 by convention when they are all equal.
    pub r_squared: f64,
    pub used_points: usize,
    /// Points dropped because the median was not finite and positive.
    pub excluded_points: usize,
}

/// Least-squares slope of `ln median` against `ln n`.
///
/// Points whose median is zero, negative, or non-finite carry no log-scale
/// information and are excluded (counted in the result). At least two
/// surviving points with distinct `n` are required.
pub fn estimate_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    let mut excluded = 0usize;
    for &(n, m) in points {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::SlopeEstimation {
                reason: format!("sample size {n} is not a positive finite number"),
            });
        }
        if m.is_finite() && m > 0.0 {
            xs.push(n.ln());
            ys.push(m.ln());
        } else {
            excluded += 1;
        }
    }
    let k = xs.len();
    if k < 2 {
        return Err(Error::SlopeEstimation {
            reason: format!(
                "need at least two positive finite medians, kept {k} of {}",
                points.len()
            ),
        });
    }
    let mean_x = xs.iter().sum::<f64>() / k as f64;
    let mean_y = ys.iter().sum::<f64>() / k as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::SlopeEstimation {
            reason: "all surviving points share one sample size".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let e = y - (intercept + slope * x);
        ss_res += e * e;
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        used_points: k,
        excluded_points: excluded,
    })
}

/// Median by total order on `f64` (NaN sorts last); `None` on empty input.
/// Even-length inputs average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some(0.5 * (sorted[mid - 1] + sorted[mid]))
    }
}

/// Tukey hinges `(q1, q2, q3)`: the halves used for the outer quartiles
/// include the middle element when the length is odd. `None` on empty input.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let q2 = median(&sorted)?;
    let half = sorted.len().div_ceil(2);
    let q1 = median(&sorted[..half])?;
    let q3 = median(&sorted[sorted.len() - half..])?;
    Some((q1, q2, q3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_recovers_exponent_and_constant() {
        let grid = [10.0f64, 100.0, 1000.0, 10000.0];
        let points: Vec<(f64, f64)> = grid.iter().map(|&n| (n, 3.7 * n.powf(-0.5))).collect();
        let fit = estimate_slope(&points).unwrap();
        assert!((fit.slope - (-0.5)).abs() <= 1e-12, "slope {}", fit.slope);
        assert!(
            (fit.intercept - 3.7f64.ln()).abs() <= 1e-12,
            "intercept {}",
            fit.intercept
        );
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        assert_eq!(fit.used_points, 4);
        assert_eq!(fit.excluded_points, 0);
    }

    #[test]
    fn constant_medians_give_zero_slope() {
        let points: Vec<(f64, f64)> = [100.0, 1000.0, 10000.0]
            .iter()
            .map(|&n| (n, 0.25))
            .collect();
        let fit = estimate_slope(&points).unwrap();
        assert!(fit.slope.abs() <= 1e-15, "slope {}", fit.slope);
        assert!((fit.r_squared - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn log_over_n_rate_lands_between_half_and_two_fifths() {
        // sqrt(log n / n) medians on the standard grid: slower than n^{-1/2}
        // but well below n^{-2/5} in fitted slope.
        let grid = [1000.0f64, 3000.0, 10000.0, 30000.0, 100000.0];
        let points: Vec<(f64, f64)> =
            grid.iter().map(|&n| (n, (n.ln() / n).sqrt())).collect();
        let fit = estimate_slope(&points).unwrap();
        assert!(
            (fit.slope - (-0.44468487247144639)).abs() <= 1e-9,
            "slope {}",
            fit.slope
        );
        assert!(fit.slope > -0.5 && fit.slope < -0.40);
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn degenerate_medians_are_excluded_not_fatal() {
        let points = vec![
            (100.0, 0.5),
            (1000.0, f64::NAN),
            (10000.0, 0.0),
            (100000.0, -3.0),
            (1000000.0, 0.05),
        ];
        let fit = estimate_slope(&points).unwrap();
        assert_eq!(fit.used_points, 2);
        assert_eq!(fit.excluded_points, 3);
        let exact = (0.05f64.ln() - 0.5f64.ln()) / (1_000_000.0f64.ln() - 100.0f64.ln());
        assert!((fit.slope - exact).abs() <= 1e-12);
    }

    #[test]
    fn too_few_surviving_points_is_an_error() {
        assert!(matches!(
            estimate_slope(&[(100.0, 1.0)]),
            Err(Error::SlopeEstimation { .. })
        ));
        assert!(matches!(
            estimate_slope(&[(100.0, 1.0), (1000.0, f64::NAN)]),
            Err(Error::SlopeEstimation { .. })
        ));
        // One distinct n value: no spread to regress on.
        assert!(matches!(
            estimate_slope(&[(100.0, 1.0), (100.0, 2.0)]),
            Err(Error::SlopeEstimation { .. })
        ));
        // Nonpositive n is a caller bug, not a data artifact.
        assert!(matches!(
            estimate_slope(&[(0.0, 1.0), (100.0, 2.0)]),
            Err(Error::SlopeEstimation { .. })
        ));
    }

    #[test]
    fn median_and_quartiles_follow_the_hinge_convention() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0]), Some((1.5, 2.5, 3.5)));
        assert_eq!(
            quartiles(&[5.0, 4.0, 3.0, 2.0, 1.0]),
            Some((2.0, 3.0, 4.0))
        );
        assert_eq!(quartiles(&[7.0]), Some((7.0, 7.0, 7.0)));
    }
}
