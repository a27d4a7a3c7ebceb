//! Mixing-measure sequences that drive a parameter loss to zero while the
//! regression functions collapse onto each other even faster.
//!
//! Each builder starts from a truth measure and returns the n-th element of
//! a sequence whose parameter loss is known in closed form. The split
//! constructions duplicate the first atom with offsets of size 1/n in the
//! expert offset and a weight imbalance of size n^-(r+1); the temperature
//! construction shifts every gating vector and the temperature along a
//! direction that cancels at first order. The matching `closed_form_*`
//! functions return the exact loss of the constructed measure, giving an
//! independent check of the partition-loss implementations, and the L2
//! probe over these sequences exhibits the vanishing distance-to-loss
//! ratio that rules out polynomial risk bounds for these model classes.

use crate::error::{Error, Result};
use crate::model::{
    Atom, DenseToSparseMixingMeasure, ExpertSpec, Group, HierarchicalMixingMeasure, InnerAtom,
    Router, SoftmaxMixingMeasure,
};

fn check_n_r(n: u64, r: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument {
            arg: "n",
            reason: "sequence index must be at least 1".into(),
        });
    }
    if !(r.is_finite() && r >= 1.0) {
        return Err(Error::InvalidArgument {
            arg: "r",
            reason: format!("loss exponent must be finite and at least 1, got {r}"),
        });
    }
    Ok(())
}

fn linear_parts(expert: &ExpertSpec) -> Result<(&[f64], f64)> {
    match expert {
        ExpertSpec::Linear { a, b } => Ok((a, *b)),
        other => Err(Error::FamilyMismatch {
            expected: "linear",
            got: other.kind_label(),
        }),
    }
}

/// Split the first truth atom into a pair with expert offsets b +- 1/n and
/// a weight surplus of n^-(r+1); remaining atoms are copied unchanged.
pub fn adversarial_sequence_linear(
    truth: &SoftmaxMixingMeasure,
    n: u64,
    r: f64,
) -> Result<SoftmaxMixingMeasure> {
    check_n_r(n, r)?;
    truth.validate()?;
    let nf = n as f64;
    let mut atoms = Vec::with_capacity(truth.atoms.len() + 1);
    let (a1, b1) = linear_parts(&truth.atoms[0].expert)?;
    let split_weight = 0.5 * truth.atoms[0].beta.exp() + 0.5 * nf.powf(-(r + 1.0));
    for sign in [1.0, -1.0] {
        atoms.push(Atom {
            beta: split_weight.ln(),
            omega: truth.atoms[0].omega.clone(),
            expert: ExpertSpec::Linear {
                a: a1.to_vec(),
                b: b1 + sign / nf,
            },
        });
    }
    for atom in &truth.atoms[1..] {
        linear_parts(&atom.expert)?;
        atoms.push(atom.clone());
    }
    let pinned = truth.pinned_last && truth.atoms.len() >= 2;
    SoftmaxMixingMeasure::new(atoms, pinned)
}

/// Exact parameter loss of [`adversarial_sequence_linear`] at index n:
/// the split weight surplus plus the offset displacement of the doubled
/// first cell.
pub fn closed_form_l2r(truth: &SoftmaxMixingMeasure, n: u64, r: f64) -> Result<f64> {
    check_n_r(n, r)?;
    truth.validate()?;
    let nf = n as f64;
    Ok(nf.powf(-(r + 1.0)) + (truth.atoms[0].beta.exp() + nf.powf(-(r + 1.0))) * nf.powf(-r))
}

/// Shift every gating vector by omega_j/(n tau) and the temperature by 1/n,
/// compensating the gating offsets so each cell keeps its truth weight
/// exactly. `first_cell_copies` atoms are assigned to the first cell (all
/// identical, with the weight split among them); 1 reproduces the
/// exact-budget sequence.
pub fn adversarial_sequence_temperature(
    truth: &DenseToSparseMixingMeasure,
    n: u64,
    r: f64,
    first_cell_copies: usize,
) -> Result<DenseToSparseMixingMeasure> {
    check_n_r(n, r)?;
    truth.validate()?;
    if truth.router != Router::Linear {
        return Err(Error::FamilyMismatch {
            expected: "linear router",
            got: "activated router",
        });
    }
    if first_cell_copies == 0 {
        return Err(Error::InvalidArgument {
            arg: "first_cell_copies",
            reason: "the first cell needs at least one atom".into(),
        });
    }
    let t_n = 1.0 / n as f64;
    let tau_n = truth.tau + t_n;
    let mut atoms = Vec::with_capacity(truth.atoms.len() + first_cell_copies - 1);
    for (j, atom) in truth.atoms.iter().enumerate() {
        let copies = if j == 0 { first_cell_copies } else { 1 };
        let omega: Vec<f64> = atom
            .omega
            .iter()
            .map(|w| w + t_n * w / truth.tau)
            .collect();
        let beta = tau_n * (atom.beta / truth.tau - (copies as f64).ln());
        for _ in 0..copies {
            atoms.push(Atom {
                beta,
                omega: omega.clone(),
                expert: atom.expert.clone(),
            });
        }
    }
    let pinned =
        truth.pinned_last && (truth.atoms.len() >= 2 || first_cell_copies == 1);
    DenseToSparseMixingMeasure::new(atoms, tau_n, truth.router, pinned)
}

/// Exact parameter loss of [`adversarial_sequence_temperature`] at index n.
/// The cell weights match the truth exactly, so only the gating and
/// temperature displacements contribute; the value does not depend on
/// `first_cell_copies` because the split weights shrink in proportion.
pub fn closed_form_l3r(truth: &DenseToSparseMixingMeasure, n: u64, r: f64) -> Result<f64> {
    check_n_r(n, r)?;
    truth.validate()?;
    let t_n = 1.0 / n as f64;
    let mut total = 0.0;
    for atom in &truth.atoms {
        let s_norm = atom
            .omega
            .iter()
            .map(|w| (t_n * w / truth.tau) * (t_n * w / truth.tau))
            .sum::<f64>()
            .sqrt();
        total += (atom.beta / truth.tau).exp() * (s_norm.powf(r) + t_n.powf(r));
    }
    Ok(total)
}

/// Split the first inner atom of every group as in the flat linear
/// construction; the outer level is copied unchanged.
pub fn adversarial_sequence_hierarchical(
    truth: &HierarchicalMixingMeasure,
    n: u64,
    r: f64,
) -> Result<HierarchicalMixingMeasure> {
    check_n_r(n, r)?;
    truth.validate()?;
    let nf = n as f64;
    let mut groups = Vec::with_capacity(truth.groups.len());
    for group in &truth.groups {
        let (a1, b1) = linear_parts(&group.inner[0].expert)?;
        let split_weight = 0.5 * group.inner[0].nu.exp() + 0.5 * nf.powf(-(r + 1.0));
        let mut inner = Vec::with_capacity(group.inner.len() + 1);
        for sign in [1.0, -1.0] {
            inner.push(InnerAtom {
                nu: split_weight.ln(),
                kappa: group.inner[0].kappa.clone(),
                expert: ExpertSpec::Linear {
                    a: a1.to_vec(),
                    b: b1 + sign / nf,
                },
            });
        }
        for atom in &group.inner[1..] {
            linear_parts(&atom.expert)?;
            inner.push(atom.clone());
        }
        groups.push(Group {
            beta: group.beta,
            omega: group.omega.clone(),
            inner,
        });
    }
    let inner_pinned = truth.pinned_last_inner && truth.groups[0].inner.len() >= 2;
    HierarchicalMixingMeasure::new(groups, truth.pinned_last_outer, inner_pinned)
}

/// Exact parameter loss of [`adversarial_sequence_hierarchical`] at index
/// n: per-group inner weight surplus plus the doubled first inner cell's
/// offset displacement, both carried by the outer weights.
pub fn closed_form_l6r(truth: &HierarchicalMixingMeasure, n: u64, r: f64) -> Result<f64> {
    check_n_r(n, r)?;
    truth.validate()?;
    let nf = n as f64;
    let surplus = nf.powf(-(r + 1.0));
    let mut total = 0.0;
    for group in &truth.groups {
        total += group.beta.exp() * surplus;
        total += group.beta.exp() * (group.inner[0].nu.exp() + surplus) * nf.powf(-r);
    }
    Ok(total)
}
