//! Voronoi partitions of fitted atoms against ground-truth atoms, and the
//! family of parameter-space losses built on those partitions.
//!
//! Cell assignment is nearest ground-truth atom in Euclidean norm on the
//! designated coordinate block; ties go to the lowest truth index. Weight
//! mismatch sums run over every truth atom, so an empty cell still
//! contributes its `|0 - w*_j|` term; parameter-discrepancy sums over an
//! empty cell are vacuously zero.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    Atom, DenseToSparseMixingMeasure, ExpertSpec, HierarchicalMixingMeasure, MixingModel,
    SoftmaxMixingMeasure,
};

/// Flat partition: `cells[j]` lists the fitted atom indices whose nearest
/// truth atom is `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoronoiPartition {
    pub cells: Vec<Vec<usize>>,
    /// Coordinate block the distance was computed on.
    pub metric: &'static str,
}

impl VoronoiPartition {
    pub fn num_fitted(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }
}

/// Inner partition for one fitted group: its inner atoms assigned to the
/// inner truth atoms of the truth group owning the fitted group's outer cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerPartition {
    pub fitted_group: usize,
    pub truth_group: usize,
    pub cells: Vec<Vec<usize>>,
}

/// Two-level partition: outer cells on gate directions, then one inner
/// partition per fitted group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierarchicalPartition {
    pub outer: VoronoiPartition,
    /// Indexed by fitted group.
    pub inner: Vec<InnerPartition>,
}

/// Partition attached to a loss report.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum PartitionReport {
    Flat(VoronoiPartition),
    TwoLevel(HierarchicalPartition),
}

/// A computed loss value with its named breakdown terms. The breakdown sums
/// to `value` exactly: `value` is defined as the ordered sum of the terms.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub name: String,
    pub value: f64,
    pub terms: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub partition: PartitionReport,
}

impl LossReport {
    fn from_terms(
        name: &str,
        terms: Vec<(String, f64)>,
        r: Option<f64>,
        partition: PartitionReport,
    ) -> Self {
        let value = terms.iter().map(|(_, v)| v).sum();
        Self {
            name: name.to_string(),
            value,
            terms,
            r,
            partition,
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }

    /// CSV-friendly record: name, r (empty if none), value, then
    /// `term=value` pairs joined by `;`.
    pub fn csv_record(&self) -> Vec<String> {
        let breakdown = self
            .terms
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        vec![
            self.name.clone(),
            self.r.map(|r| r.to_string()).unwrap_or_default(),
            self.value.to_string(),
            breakdown,
        ]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Nearest-truth assignment on raw coordinate vectors. Strictly-less
/// comparison keeps the first (lowest-index) truth atom on ties.
fn assign_cells(fitted: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    for (j, tj) in truth.iter().enumerate() {
        for (l, tl) in truth.iter().enumerate().skip(j + 1) {
            if tj == tl {
                return Err(Error::DuplicateTruthAtoms { left: j, right: l });
            }
        }
    }
    let mut cells = vec![Vec::new(); truth.len()];
    for (i, f) in fitted.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = sq_dist(f, &truth[0]);
        for (j, t) in truth.iter().enumerate().skip(1) {
            let d = sq_dist(f, t);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        cells[best].push(i);
    }
    Ok(cells)
}

fn check_expert_compat<'a>(
    fitted: impl Iterator<Item = &'a ExpertSpec>,
    truth: impl Iterator<Item = &'a ExpertSpec> + Clone,
) -> Result<&'a ExpertSpec> {
    let mut truth_iter = truth.clone();
    let reference = truth_iter.next().ok_or(Error::InvalidArgument {
        arg: "truth",
        reason: "truth measure has no atoms".into(),
    })?;
    for e in truth.skip(1).chain(fitted) {
        if !reference.same_kind(e) {
            return Err(Error::FamilyMismatch {
                expected: reference.kind_label(),
                got: e.kind_label(),
            });
        }
    }
    Ok(reference)
}

fn require_linear<'a>(experts: impl Iterator<Item = &'a ExpertSpec>) -> Result<()> {
    for e in experts {
        if !matches!(e, ExpertSpec::Linear { .. }) {
            return Err(Error::FamilyMismatch {
                expected: "linear",
                got: e.kind_label(),
            });
        }
    }
    Ok(())
}

fn require_r(r: f64) -> Result<()> {
    if !r.is_finite() || r < 1.0 {
        return Err(Error::InvalidArgument {
            arg: "r",
            reason: format!("exponent must be finite and >= 1, got {r}"),
        });
    }
    Ok(())
}

/// Atom coordinate vector `(omega, expert params)` used by the flat cells.
fn flat_theta(atom: &Atom) -> Vec<f64> {
    let mut v = atom.omega.clone();
    v.extend(atom.expert.params());
    v
}

/// Partition fitted atoms against truth atoms on the `(omega, expert)`
/// block shared by the non-hierarchical families.
pub fn voronoi_cells(fitted: &[Atom], truth: &[Atom]) -> Result<VoronoiPartition> {
    check_expert_compat(
        fitted.iter().map(|a| &a.expert),
        truth.iter().map(|a| &a.expert),
    )?;
    let f: Vec<Vec<f64>> = fitted.iter().map(flat_theta).collect();
    let t: Vec<Vec<f64>> = truth.iter().map(flat_theta).collect();
    if let (Some(fv), Some(tv)) = (f.first(), t.first()) {
        if fv.len() != tv.len() {
            return Err(Error::DimensionMismatch {
                what: "atom coordinate block",
                expected: tv.len(),
                got: fv.len(),
            });
        }
    }
    Ok(VoronoiPartition {
        cells: assign_cells(&f, &t)?,
        metric: "omega+expert",
    })
}

/// Two-level partition: outer cells on the gate directions alone, then each
/// fitted group's inner atoms against the inner atoms of the truth group
/// that owns the fitted group's outer cell, on the `(kappa, expert)` block.
pub fn voronoi_cells_hierarchical(
    fitted: &HierarchicalMixingMeasure,
    truth: &HierarchicalMixingMeasure,
) -> Result<HierarchicalPartition> {
    if fitted.num_groups() != truth.num_groups() {
        return Err(Error::DimensionMismatch {
            what: "hierarchical group count",
            expected: truth.num_groups(),
            got: fitted.num_groups(),
        });
    }
    check_expert_compat(
        fitted
            .groups
            .iter()
            .flat_map(|g| g.inner.iter().map(|a| &a.expert)),
        truth
            .groups
            .iter()
            .flat_map(|g| g.inner.iter().map(|a| &a.expert)),
    )?;
    let f_omega: Vec<Vec<f64>> = fitted.groups.iter().map(|g| g.omega.clone()).collect();
    let t_omega: Vec<Vec<f64>> = truth.groups.iter().map(|g| g.omega.clone()).collect();
    let outer_cells = assign_cells(&f_omega, &t_omega)?;

    let mut owner = vec![0usize; fitted.num_groups()];
    for (j1, cell) in outer_cells.iter().enumerate() {
        for &i1 in cell {
            owner[i1] = j1;
        }
    }
    let mut inner = Vec::with_capacity(fitted.num_groups());
    for (i1, group) in fitted.groups.iter().enumerate() {
        let j1 = owner[i1];
        let f_theta: Vec<Vec<f64>> = group
            .inner
            .iter()
            .map(|a| {
                let mut v = a.kappa.clone();
                v.extend(a.expert.params());
                v
            })
            .collect();
        let t_theta: Vec<Vec<f64>> = truth.groups[j1]
            .inner
            .iter()
            .map(|a| {
                let mut v = a.kappa.clone();
                v.extend(a.expert.params());
                v
            })
            .collect();
        inner.push(InnerPartition {
            fitted_group: i1,
            truth_group: j1,
            cells: assign_cells(&f_theta, &t_theta)?,
        });
    }
    Ok(HierarchicalPartition {
        outer: VoronoiPartition {
            cells: outer_cells,
            metric: "omega",
        },
        inner,
    })
}

fn weight_mismatch(cells: &[Vec<usize>], fitted_w: &[f64], truth_w: &[f64]) -> f64 {
    cells
        .iter()
        .enumerate()
        .map(|(j, cell)| {
            let s: f64 = cell.iter().map(|&i| fitted_w[i]).sum();
            (s - truth_w[j]).abs()
        })
        .sum()
}

/// Loss on the plain softmax family: weight mismatch plus first-power
/// parameter terms on singleton cells and squared terms on larger cells.
pub fn loss_l1(fitted: &SoftmaxMixingMeasure, truth: &SoftmaxMixingMeasure) -> Result<LossReport> {
    let part = voronoi_cells(&fitted.atoms, &truth.atoms)?;
    let fw: Vec<f64> = fitted.atoms.iter().map(|a| a.beta.exp()).collect();
    let tw: Vec<f64> = truth.atoms.iter().map(|a| a.beta.exp()).collect();
    let wm = weight_mismatch(&part.cells, &fw, &tw);
    let mut singleton = 0.0;
    let mut multi = 0.0;
    for (j, cell) in part.cells.iter().enumerate() {
        let t_atom = &truth.atoms[j];
        let t_eta = t_atom.expert.params();
        if cell.len() == 1 {
            let i = cell[0];
            let d_omega = l2_diff(&fitted.atoms[i].omega, &t_atom.omega);
            let d_eta = l2_diff(&fitted.atoms[i].expert.params(), &t_eta);
            singleton += fw[i] * (d_omega + d_eta);
        } else if cell.len() > 1 {
            for &i in cell {
                let d_omega = l2_diff(&fitted.atoms[i].omega, &t_atom.omega);
                let d_eta = l2_diff(&fitted.atoms[i].expert.params(), &t_eta);
                multi += fw[i] * (d_omega * d_omega + d_eta * d_eta);
            }
        }
    }
    Ok(LossReport::from_terms(
        "L1",
        vec![
            ("weight_mismatch".into(), wm),
            ("singleton_cells".into(), singleton),
            ("multi_cells".into(), multi),
        ],
        None,
        PartitionReport::Flat(part),
    ))
}

/// r-th power loss on the softmax family with linear experts; no cell
/// cardinality split, separate gate/slope/intercept terms.
pub fn loss_l2r(
    fitted: &SoftmaxMixingMeasure,
    truth: &SoftmaxMixingMeasure,
    r: f64,
) -> Result<LossReport> {
    require_r(r)?;
    require_linear(
        fitted
            .atoms
            .iter()
            .chain(&truth.atoms)
            .map(|a| &a.expert),
    )?;
    let part = voronoi_cells(&fitted.atoms, &truth.atoms)?;
    let fw: Vec<f64> = fitted.atoms.iter().map(|a| a.beta.exp()).collect();
    let tw: Vec<f64> = truth.atoms.iter().map(|a| a.beta.exp()).collect();
    let wm = weight_mismatch(&part.cells, &fw, &tw);
    let mut omega_t = 0.0;
    let mut a_t = 0.0;
    let mut b_t = 0.0;
    for (j, cell) in part.cells.iter().enumerate() {
        let (ta, tb) = linear_parts(&truth.atoms[j].expert);
        for &i in cell {
            let (fa, fb) = linear_parts(&fitted.atoms[i].expert);
            omega_t += fw[i] * l2_diff(&fitted.atoms[i].omega, &truth.atoms[j].omega).powf(r);
            a_t += fw[i] * l2_diff(&fa, &ta).powf(r);
            b_t += fw[i] * (fb - tb).abs().powf(r);
        }
    }
    Ok(LossReport::from_terms(
        "L2r",
        vec![
            ("weight_mismatch".into(), wm),
            ("omega_terms".into(), omega_t),
            ("a_terms".into(), a_t),
            ("b_terms".into(), b_t),
        ],
        Some(r),
        PartitionReport::Flat(part),
    ))
}

fn linear_parts(e: &ExpertSpec) -> (Vec<f64>, f64) {
    match e {
        ExpertSpec::Linear { a, b } => (a.clone(), *b),
        ExpertSpec::Ffn { .. } => unreachable!("linearity checked by caller"),
    }
}

/// r-th power loss on the tempered family: weights `exp(beta/tau)`, with the
/// temperature discrepancy entering every atom term.
pub fn loss_l3r(
    fitted: &DenseToSparseMixingMeasure,
    truth: &DenseToSparseMixingMeasure,
    r: f64,
) -> Result<LossReport> {
    require_r(r)?;
    let part = voronoi_cells(&fitted.atoms, &truth.atoms)?;
    let fw: Vec<f64> = fitted
        .atoms
        .iter()
        .map(|a| (a.beta / fitted.tau).exp())
        .collect();
    let tw: Vec<f64> = truth
        .atoms
        .iter()
        .map(|a| (a.beta / truth.tau).exp())
        .collect();
    let wm = weight_mismatch(&part.cells, &fw, &tw);
    let d_tau = (fitted.tau - truth.tau).abs().powf(r);
    let mut omega_t = 0.0;
    let mut tau_t = 0.0;
    let mut eta_t = 0.0;
    for (j, cell) in part.cells.iter().enumerate() {
        let t_atom = &truth.atoms[j];
        let t_eta = t_atom.expert.params();
        for &i in cell {
            omega_t += fw[i] * l2_diff(&fitted.atoms[i].omega, &t_atom.omega).powf(r);
            tau_t += fw[i] * d_tau;
            eta_t += fw[i] * l2_diff(&fitted.atoms[i].expert.params(), &t_eta).powf(r);
        }
    }
    Ok(LossReport::from_terms(
        "L3r",
        vec![
            ("weight_mismatch".into(), wm),
            ("omega_terms".into(), omega_t),
            ("tau_terms".into(), tau_t),
            ("eta_terms".into(), eta_t),
        ],
        Some(r),
        PartitionReport::Flat(part),
    ))
}

/// Tempered-family loss with the cardinality split: first powers on
/// singleton cells plus squared terms over every cell.
pub fn loss_l4(
    fitted: &DenseToSparseMixingMeasure,
    truth: &DenseToSparseMixingMeasure,
) -> Result<LossReport> {
    let part = voronoi_cells(&fitted.atoms, &truth.atoms)?;
    let fw: Vec<f64> = fitted
        .atoms
        .iter()
        .map(|a| (a.beta / fitted.tau).exp())
        .collect();
    let tw: Vec<f64> = truth
        .atoms
        .iter()
        .map(|a| (a.beta / truth.tau).exp())
        .collect();
    let wm = weight_mismatch(&part.cells, &fw, &tw);
    let d_tau = (fitted.tau - truth.tau).abs();
    let mut singleton = 0.0;
    let mut squared = 0.0;
    for (j, cell) in part.cells.iter().enumerate() {
        let t_atom = &truth.atoms[j];
        let t_eta = t_atom.expert.params();
        for &i in cell {
            let d_omega = l2_diff(&fitted.atoms[i].omega, &t_atom.omega);
            let d_eta = l2_diff(&fitted.atoms[i].expert.params(), &t_eta);
            if cell.len() == 1 {
                singleton += fw[i] * (d_omega + d_tau + d_eta);
            }
            squared += fw[i] * (d_omega * d_omega + d_tau * d_tau + d_eta * d_eta);
        }
    }
    Ok(LossReport::from_terms(
        "L4",
        vec![
            ("weight_mismatch".into(), wm),
            ("singleton_first_power".into(), singleton),
            ("all_cells_squared".into(), squared),
        ],
        None,
        PartitionReport::Flat(part),
    ))
}

/// Two-level loss: outer weight mismatch, first-power outer gate shifts,
/// inner cardinality-split parameter terms and inner weight mismatch, both
/// nested under the fitted outer weights.
pub fn loss_l5(
    fitted: &HierarchicalMixingMeasure,
    truth: &HierarchicalMixingMeasure,
) -> Result<LossReport> {
    let part = voronoi_cells_hierarchical(fitted, truth)?;
    let fw: Vec<f64> = fitted.groups.iter().map(|g| g.beta.exp()).collect();
    let tw: Vec<f64> = truth.groups.iter().map(|g| g.beta.exp()).collect();
    let outer_wm = weight_mismatch(&part.outer.cells, &fw, &tw);
    let mut outer_omega = 0.0;
    let mut inner_singleton = 0.0;
    let mut inner_multi = 0.0;
    let mut inner_wm = 0.0;
    for (j1, cell) in part.outer.cells.iter().enumerate() {
        for &i1 in cell {
            outer_omega += fw[i1] * l2_diff(&fitted.groups[i1].omega, &truth.groups[j1].omega);
            let ip = &part.inner[i1];
            debug_assert_eq!(ip.truth_group, j1);
            let f_inner = &fitted.groups[i1].inner;
            let t_inner = &truth.groups[j1].inner;
            let f_nu: Vec<f64> = f_inner.iter().map(|a| a.nu.exp()).collect();
            let t_nu: Vec<f64> = t_inner.iter().map(|a| a.nu.exp()).collect();
            inner_wm += fw[i1] * weight_mismatch(&ip.cells, &f_nu, &t_nu);
            for (j2, icell) in ip.cells.iter().enumerate() {
                let t_atom = &t_inner[j2];
                let t_eta = t_atom.expert.params();
                for &i2 in icell {
                    let d_kappa = l2_diff(&f_inner[i2].kappa, &t_atom.kappa);
                    let d_eta = l2_diff(&f_inner[i2].expert.params(), &t_eta);
                    if icell.len() == 1 {
                        inner_singleton += fw[i1] * f_nu[i2] * (d_kappa + d_eta);
                    } else {
                        inner_multi +=
                            fw[i1] * f_nu[i2] * (d_kappa * d_kappa + d_eta * d_eta);
                    }
                }
            }
        }
    }
    Ok(LossReport::from_terms(
        "L5",
        vec![
            ("outer_weight_mismatch".into(), outer_wm),
            ("outer_omega_terms".into(), outer_omega),
            ("inner_singleton_cells".into(), inner_singleton),
            ("inner_multi_cells".into(), inner_multi),
            ("inner_weight_mismatch".into(), inner_wm),
        ],
        None,
        PartitionReport::TwoLevel(part),
    ))
}

/// Two-level r-th power loss for linear experts: no cardinality split,
/// separate gate/slope/intercept powers inside every inner cell.
pub fn loss_l6r(
    fitted: &HierarchicalMixingMeasure,
    truth: &HierarchicalMixingMeasure,
    r: f64,
) -> Result<LossReport> {
    require_r(r)?;
    require_linear(
        fitted
            .groups
            .iter()
            .chain(&truth.groups)
            .flat_map(|g| g.inner.iter().map(|a| &a.expert)),
    )?;
    let part = voronoi_cells_hierarchical(fitted, truth)?;
    let fw: Vec<f64> = fitted.groups.iter().map(|g| g.beta.exp()).collect();
    let tw: Vec<f64> = truth.groups.iter().map(|g| g.beta.exp()).collect();
    let outer_wm = weight_mismatch(&part.outer.cells, &fw, &tw);
    let mut outer_omega = 0.0;
    let mut inner_param = 0.0;
    let mut inner_wm = 0.0;
    for (j1, cell) in part.outer.cells.iter().enumerate() {
        for &i1 in cell {
            outer_omega +=
                fw[i1] * l2_diff(&fitted.groups[i1].omega, &truth.groups[j1].omega).powf(r);
            let ip = &part.inner[i1];
            let f_inner = &fitted.groups[i1].inner;
            let t_inner = &truth.groups[j1].inner;
            let f_nu: Vec<f64> = f_inner.iter().map(|a| a.nu.exp()).collect();
            let t_nu: Vec<f64> = t_inner.iter().map(|a| a.nu.exp()).collect();
            inner_wm += fw[i1] * weight_mismatch(&ip.cells, &f_nu, &t_nu);
            for (j2, icell) in ip.cells.iter().enumerate() {
                let t_atom = &t_inner[j2];
                let (ta, tb) = linear_parts(&t_atom.expert);
                for &i2 in icell {
                    let (fa, fb) = linear_parts(&f_inner[i2].expert);
                    let d_kappa = l2_diff(&f_inner[i2].kappa, &t_atom.kappa).powf(r);
                    let d_a = l2_diff(&fa, &ta).powf(r);
                    let d_b = (fb - tb).abs().powf(r);
                    inner_param += fw[i1] * f_nu[i2] * (d_kappa + d_a + d_b);
                }
            }
        }
    }
    Ok(LossReport::from_terms(
        "L6r",
        vec![
            ("outer_weight_mismatch".into(), outer_wm),
            ("outer_omega_terms".into(), outer_omega),
            ("inner_param_terms".into(), inner_param),
            ("inner_weight_mismatch".into(), inner_wm),
        ],
        Some(r),
        PartitionReport::TwoLevel(part),
    ))
}

/// Worst-case per-truth-atom parameter estimation error.
///
/// For each truth atom, every fitted atom in its cell contributes the sum of
/// its gate-direction and expert-parameter distances (plus the temperature
/// gap for the tempered family); an empty cell falls back to the nearest
/// fitted atom so the metric stays finite when a truth atom is missed. The
/// result is the maximum contribution, tracking the slowest-converging atom.
pub fn max_param_error(fitted: &MixingModel, truth: &MixingModel) -> Result<f64> {
    match (fitted, truth) {
        (MixingModel::Softmax(f), MixingModel::Softmax(t)) => {
            let part = voronoi_cells(&f.atoms, &t.atoms)?;
            Ok(flat_max_error(&part.cells, &f.atoms, &t.atoms, 0.0))
        }
        (MixingModel::DenseToSparse(f), MixingModel::DenseToSparse(t)) => {
            let part = voronoi_cells(&f.atoms, &t.atoms)?;
            let d_tau = (f.tau - t.tau).abs();
            Ok(flat_max_error(&part.cells, &f.atoms, &t.atoms, d_tau))
        }
        (MixingModel::Hierarchical(f), MixingModel::Hierarchical(t)) => {
            let part = voronoi_cells_hierarchical(f, t)?;
            let mut worst = 0.0f64;
            for (j1, cell) in part.outer.cells.iter().enumerate() {
                if cell.is_empty() {
                    let nearest = f
                        .groups
                        .iter()
                        .map(|g| l2_diff(&g.omega, &t.groups[j1].omega))
                        .fold(f64::INFINITY, f64::min);
                    worst = worst.max(nearest);
                }
                for &i1 in cell {
                    worst = worst.max(l2_diff(&f.groups[i1].omega, &t.groups[j1].omega));
                }
            }
            for ip in &part.inner {
                let f_inner = &f.groups[ip.fitted_group].inner;
                let t_inner = &t.groups[ip.truth_group].inner;
                for (j2, icell) in ip.cells.iter().enumerate() {
                    let err = |i2: usize| {
                        l2_diff(&f_inner[i2].kappa, &t_inner[j2].kappa)
                            + l2_diff(&f_inner[i2].expert.params(), &t_inner[j2].expert.params())
                    };
                    if icell.is_empty() {
                        let nearest = (0..f_inner.len())
                            .map(err)
                            .fold(f64::INFINITY, f64::min);
                        worst = worst.max(nearest);
                    }
                    for &i2 in icell {
                        worst = worst.max(err(i2));
                    }
                }
            }
            Ok(worst)
        }
        _ => Err(Error::FamilyMismatch {
            expected: truth.family_label(),
            got: fitted.family_label(),
        }),
    }
}

fn flat_max_error(cells: &[Vec<usize>], fitted: &[Atom], truth: &[Atom], d_tau: f64) -> f64 {
    let err = |i: usize, j: usize| {
        l2_diff(&fitted[i].omega, &truth[j].omega)
            + l2_diff(&fitted[i].expert.params(), &truth[j].expert.params())
            + d_tau
    };
    let mut worst = 0.0f64;
    for (j, cell) in cells.iter().enumerate() {
        if cell.is_empty() {
            let nearest = (0..fitted.len())
                .map(|i| err(i, j))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(nearest);
        }
        for &i in cell {
            worst = worst.max(err(i, j));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Group, InnerAtom, Router};
    use approx::assert_abs_diff_eq;

    fn atom(beta: f64, omega: Vec<f64>, a: Vec<f64>, b: f64) -> Atom {
        Atom {
            beta,
            omega,
            expert: ExpertSpec::Linear { a, b },
        }
    }

    fn softmax(atoms: Vec<Atom>) -> SoftmaxMixingMeasure {
        SoftmaxMixingMeasure::new(atoms, false).unwrap()
    }

    #[test]
    fn cells_match_hand_assignment() {
        // Effective 1-d coordinate: omega scalar, identical experts.
        let truth = vec![
            atom(0.0, vec![0.0], vec![0.0], 0.0),
            atom(0.0, vec![1.0], vec![0.0], 0.0),
        ];
        let fitted = vec![
            atom(0.0, vec![0.1], vec![0.0], 0.0),
            atom(0.0, vec![0.9], vec![0.0], 0.0),
            atom(0.0, vec![1.2], vec![0.0], 0.0),
        ];
        let part = voronoi_cells(&fitted, &truth).unwrap();
        assert_eq!(part.cells, vec![vec![0], vec![1, 2]]);
    }

    #[test]
    fn identity_gives_singleton_cells() {
        let truth = vec![
            atom(0.2, vec![0.0, 0.5], vec![1.0, 0.0], 0.0),
            atom(-0.1, vec![1.0, -0.5], vec![0.0, 1.0], 0.5),
        ];
        let part = voronoi_cells(&truth, &truth).unwrap();
        assert_eq!(part.cells, vec![vec![0], vec![1]]);
    }

    #[test]
    fn tie_breaks_to_lowest_truth_index() {
        let truth = vec![
            atom(0.0, vec![0.0], vec![0.0], 0.0),
            atom(0.0, vec![1.0], vec![0.0], 0.0),
        ];
        let fitted = vec![atom(0.0, vec![0.5], vec![0.0], 0.0)];
        let part = voronoi_cells(&fitted, &truth).unwrap();
        assert_eq!(part.cells, vec![vec![0], vec![]]);
    }

    #[test]
    fn duplicate_truth_atoms_rejected() {
        let truth = vec![
            atom(0.0, vec![1.0], vec![0.0], 0.0),
            atom(0.5, vec![1.0], vec![0.0], 0.0),
        ];
        let fitted = vec![atom(0.0, vec![0.5], vec![0.0], 0.0)];
        assert!(matches!(
            voronoi_cells(&fitted, &truth),
            Err(Error::DuplicateTruthAtoms { left: 0, right: 1 })
        ));
    }

    #[test]
    fn mixed_expert_kinds_rejected() {
        let truth = vec![atom(0.0, vec![0.0], vec![0.0], 0.0)];
        let fitted = vec![Atom {
            beta: 0.0,
            omega: vec![0.0],
            expert: ExpertSpec::Ffn {
                a: vec![1.0],
                b: 0.0,
                c: 1.0,
                activation: crate::activation::Activation::Sigmoid,
            },
        }];
        assert!(voronoi_cells(&fitted, &truth).is_err());
    }

    #[test]
    fn l1_zero_at_truth() {
        let truth = softmax(vec![
            atom(0.2, vec![0.3, -0.4], vec![1.0, 0.5], 0.1),
            atom(-0.3, vec![-0.8, 0.2], vec![-0.5, 1.0], -0.2),
        ]);
        let report = loss_l1(&truth, &truth).unwrap();
        assert_eq!(report.value, 0.0);
    }

    #[test]
    fn l1_singleton_first_power_example() {
        let truth = softmax(vec![atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0)]);
        let fitted = softmax(vec![atom(0.0, vec![0.1, 0.0], vec![0.0, 0.0], 0.0)]);
        let report = loss_l1(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(report.value, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(report.term("singleton_cells").unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(report.term("weight_mismatch").unwrap(), 0.0);
    }

    #[test]
    fn l1_multi_cell_squared_example() {
        let truth = softmax(vec![atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0)]);
        let half = 0.5f64.ln();
        let fitted = softmax(vec![
            atom(half, vec![0.1, 0.0], vec![0.0, 0.0], 0.0),
            atom(half, vec![0.1, 0.0], vec![0.0, 0.0], 0.0),
        ]);
        let report = loss_l1(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(report.value, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(report.term("multi_cells").unwrap(), 0.01, epsilon = 1e-15);
        assert!(report.term("weight_mismatch").unwrap() < 1e-15);
    }

    #[test]
    fn l1_empty_cell_keeps_weight_term() {
        let truth = softmax(vec![
            atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0),
            atom(0.5, vec![3.0, 0.0], vec![1.0, 0.0], 1.0),
        ]);
        let fitted = softmax(vec![atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0)]);
        let report = loss_l1(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(report.value, 0.5f64.exp(), epsilon = 1e-15);
    }

    #[test]
    fn l2_monotone_in_r_for_small_perturbations() {
        let truth = softmax(vec![
            atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0),
            atom(0.3, vec![1.0, 1.0], vec![1.0, -1.0], 0.5),
        ]);
        let mut fitted = truth.clone();
        fitted.atoms[0].omega[0] += 0.1;
        fitted.atoms[1].expert = ExpertSpec::Linear {
            a: vec![1.05, -1.0],
            b: 0.45,
        };
        let l21 = loss_l2r(&fitted, &truth, 1.0).unwrap().value;
        let l22 = loss_l2r(&fitted, &truth, 2.0).unwrap().value;
        assert!(l21 >= l22, "L2,1 = {l21} < L2,2 = {l22}");
        assert!(l22 > 0.0);
    }

    #[test]
    fn l2_rejects_ffn_experts() {
        let mk = |_| {
            SoftmaxMixingMeasure::new(
                vec![Atom {
                    beta: 0.0,
                    omega: vec![0.0, 0.0],
                    expert: ExpertSpec::Ffn {
                        a: vec![1.0, 0.0],
                        b: 0.0,
                        c: 1.0,
                        activation: crate::activation::Activation::Tanh,
                    },
                }],
                false,
            )
            .unwrap()
        };
        let m = mk(());
        assert!(loss_l2r(&m, &m, 1.0).is_err());
        assert!(loss_l2r(&softmax(vec![atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0)]), &m, 1.0).is_err());
    }

    #[test]
    fn rejects_exponent_below_one() {
        let m = softmax(vec![atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0)]);
        assert!(loss_l2r(&m, &m, 0.5).is_err());
    }

    fn d2s(atoms: Vec<Atom>, tau: f64) -> DenseToSparseMixingMeasure {
        DenseToSparseMixingMeasure::new(atoms, tau, Router::Linear, false).unwrap()
    }

    #[test]
    fn l3_tau_only_perturbation() {
        // One atom, only tau moved by t: weight mismatch |e^{b/tau} - e^{b/tau*}|
        // plus e^{b/tau} * t^r in the tau block.
        let truth = d2s(vec![atom(0.4, vec![0.5, 0.0], vec![1.0, 0.0], 0.2)], 1.5);
        let mut fitted = truth.clone();
        fitted.tau = 1.7;
        let r = 2.0;
        let report = loss_l3r(&fitted, &truth, r).unwrap();
        let w_f = (0.4f64 / 1.7).exp();
        let w_t = (0.4f64 / 1.5).exp();
        let expect = (w_f - w_t).abs() + w_f * 0.2f64.powf(r);
        assert_abs_diff_eq!(report.value, expect, epsilon = 1e-14);
        assert_abs_diff_eq!(
            report.term("tau_terms").unwrap(),
            w_f * 0.2f64.powf(r),
            epsilon = 1e-14
        );
    }

    #[test]
    fn l4_singleton_contributes_to_both_blocks() {
        let truth = d2s(vec![atom(0.3, vec![0.0, 0.0], vec![0.0, 0.0], 0.0)], 1.5);
        let mut fitted = truth.clone();
        fitted.atoms[0].omega[0] = 0.1;
        let report = loss_l4(&fitted, &truth).unwrap();
        let w = (0.3f64 / 1.5).exp();
        assert_abs_diff_eq!(
            report.term("singleton_first_power").unwrap(),
            w * 0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            report.term("all_cells_squared").unwrap(),
            w * 0.01,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(report.value, w * 0.11, epsilon = 1e-14);
    }

    fn hier_truth() -> HierarchicalMixingMeasure {
        HierarchicalMixingMeasure::new(
            vec![
                Group {
                    beta: 0.0,
                    omega: vec![1.0, 0.0],
                    inner: vec![
                        InnerAtom {
                            nu: 0.0,
                            kappa: vec![0.5, 0.0],
                            expert: ExpertSpec::Linear {
                                a: vec![1.0, 0.0],
                                b: 0.2,
                            },
                        },
                        InnerAtom {
                            nu: 0.0,
                            kappa: vec![-0.5, 0.0],
                            expert: ExpertSpec::Linear {
                                a: vec![0.0, 1.0],
                                b: -0.2,
                            },
                        },
                    ],
                },
                Group {
                    beta: 0.0,
                    omega: vec![-1.0, 0.0],
                    inner: vec![
                        InnerAtom {
                            nu: 0.0,
                            kappa: vec![0.0, 0.5],
                            expert: ExpertSpec::Linear {
                                a: vec![0.5, 0.5],
                                b: 0.0,
                            },
                        },
                        InnerAtom {
                            nu: 0.0,
                            kappa: vec![0.0, -0.5],
                            expert: ExpertSpec::Linear {
                                a: vec![-0.5, 0.5],
                                b: 0.4,
                            },
                        },
                    ],
                },
            ],
            false,
            false,
        )
        .unwrap()
    }

    #[test]
    fn hierarchical_cells_nearest_by_hand() {
        // One truth group; inner truths kappa = 0 and 1 (first coordinate),
        // same experts: fitted inner kappas 0.05, 0.4, 1.1.
        let mk_inner = |k: f64| InnerAtom {
            nu: 0.0,
            kappa: vec![k, 0.0],
            expert: ExpertSpec::Linear {
                a: vec![0.0, 0.0],
                b: 0.0,
            },
        };
        let truth = HierarchicalMixingMeasure::new(
            vec![Group {
                beta: 0.0,
                omega: vec![0.0, 0.0],
                inner: vec![mk_inner(0.0), mk_inner(1.0)],
            }],
            false,
            false,
        )
        .unwrap();
        let fitted = HierarchicalMixingMeasure::new(
            vec![Group {
                beta: 0.0,
                omega: vec![0.0, 0.0],
                inner: vec![mk_inner(0.05), mk_inner(0.4), mk_inner(1.1)],
            }],
            false,
            false,
        )
        .unwrap();
        let part = voronoi_cells_hierarchical(&fitted, &truth).unwrap();
        assert_eq!(part.outer.cells, vec![vec![0]]);
        assert_eq!(part.inner[0].cells, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn hierarchical_group_count_mismatch_rejected() {
        let truth = hier_truth();
        let fitted = HierarchicalMixingMeasure::new(
            vec![truth.groups[0].clone()],
            false,
            false,
        )
        .unwrap();
        assert!(voronoi_cells_hierarchical(&fitted, &truth).is_err());
    }

    #[test]
    fn l5_zero_at_truth_and_single_omega_shift() {
        let truth = hier_truth();
        assert_eq!(loss_l5(&truth, &truth).unwrap().value, 0.0);
        let mut fitted = truth.clone();
        fitted.groups[0].omega[1] += 0.1;
        let report = loss_l5(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(report.value, 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(
            report.term("outer_omega_terms").unwrap(),
            0.1,
            epsilon = 1e-14
        );
    }

    #[test]
    fn l5_inner_duplicate_pair_squared_block() {
        let truth = hier_truth();
        let mut fitted = truth.clone();
        // Group 0: replace the two inner atoms by a duplicate pair sitting
        // 0.1 from inner truth 0, weights one half each; inner truth 1 is
        // then missed, adding its weight-mismatch term e^0 = 1.
        let dup = InnerAtom {
            nu: 0.5f64.ln(),
            kappa: vec![0.6, 0.0],
            expert: truth.groups[0].inner[0].expert.clone(),
        };
        fitted.groups[0].inner = vec![dup.clone(), dup];
        let report = loss_l5(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(
            report.term("inner_multi_cells").unwrap(),
            2.0 * 0.5 * 0.01,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            report.term("inner_weight_mismatch").unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(report.value, 1.01, epsilon = 1e-13);
    }

    #[test]
    fn l6_single_intercept_shift() {
        let truth = hier_truth();
        let mut fitted = truth.clone();
        if let ExpertSpec::Linear { b, .. } = &mut fitted.groups[0].inner[0].expert {
            *b += 0.2;
        }
        let report = loss_l6r(&fitted, &truth, 1.0).unwrap();
        assert_abs_diff_eq!(report.value, 0.2, epsilon = 1e-14);
        assert_abs_diff_eq!(
            report.term("inner_param_terms").unwrap(),
            0.2,
            epsilon = 1e-14
        );
    }

    #[test]
    fn l6_rejects_ffn_inner_experts() {
        let mut truth = hier_truth();
        truth.groups[0].inner[0].expert = ExpertSpec::Ffn {
            a: vec![1.0, 0.0],
            b: 0.0,
            c: 1.0,
            activation: crate::activation::Activation::Sigmoid,
        };
        // Make the fitted side FFN as well so the kind check passes and the
        // linearity requirement is what rejects.
        let fitted = truth.clone();
        assert!(loss_l6r(&fitted, &truth, 1.0).is_err());
    }

    #[test]
    fn breakdown_terms_sum_to_value() {
        let truth = hier_truth();
        let mut fitted = truth.clone();
        fitted.groups[0].omega[0] += 0.05;
        fitted.groups[1].inner[0].kappa[1] -= 0.07;
        fitted.groups[0].beta += 0.02;
        for report in [
            loss_l5(&fitted, &truth).unwrap(),
            loss_l6r(&fitted, &truth, 1.0).unwrap(),
            loss_l6r(&fitted, &truth, 2.0).unwrap(),
        ] {
            let sum: f64 = report.terms.iter().map(|(_, v)| v).sum();
            assert!((sum - report.value).abs() <= 1e-12);
        }
    }

    #[test]
    fn param_error_tracks_worst_atom() {
        let truth = MixingModel::Softmax(softmax(vec![
            atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0),
            atom(0.0, vec![2.0, 0.0], vec![1.0, 1.0], 0.5),
        ]));
        let mut fitted_atoms = vec![
            atom(0.0, vec![0.1, 0.0], vec![0.0, 0.0], 0.0),
            atom(0.0, vec![2.0, 0.3], vec![1.0, 1.0], 0.5),
        ];
        fitted_atoms[1].expert = ExpertSpec::Linear {
            a: vec![1.0, 1.0],
            b: 0.9,
        };
        let fitted = MixingModel::Softmax(softmax(fitted_atoms));
        let err = max_param_error(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(err, 0.3 + 0.4, epsilon = 1e-12);
    }

    #[test]
    fn param_error_family_mismatch() {
        let soft = MixingModel::Softmax(softmax(vec![atom(
            0.0,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            0.0,
        )]));
        let tempered = MixingModel::DenseToSparse(d2s(
            vec![atom(0.0, vec![0.0, 0.0], vec![0.0, 0.0], 0.0)],
            1.0,
        ));
        assert!(max_param_error(&soft, &tempered).is_err());
    }
}
