//! Flat parameter layout shared by the gradient, the optimizer, and the box
//! projection.
//!
//! Order: atoms (or groups) in declaration order; within an atom first the
//! gating parameters (beta, omega coordinates; nu, kappa for inner atoms),
//! then the expert fields (a coordinates, b, c); the shared temperature comes
//! last. Pinned gating parameters are excluded.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Which scalar a flat index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamField {
    Beta,
    Omega(usize),
    Nu,
    Kappa(usize),
    ExpertA(usize),
    ExpertB,
    ExpertC,
    Tau,
}

impl ParamField {
    /// True for gating-side fields (mixing weights and routing directions).
    pub fn is_gating(self) -> bool {
        matches!(
            self,
            ParamField::Beta | ParamField::Omega(_) | ParamField::Nu | ParamField::Kappa(_)
        )
    }
}

/// One flat coordinate: the owning group (hierarchical only), the owning atom
/// (absent for the shared temperature and for outer-group gating), and the
/// field within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub group: Option<usize>,
    pub atom: Option<usize>,
    pub field: ParamField,
}

impl fmt::Display for ParamEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(g) = self.group {
            write!(f, "group{g}.")?;
        }
        if let Some(a) = self.atom {
            write!(f, "atom{a}.")?;
        }
        match self.field {
            ParamField::Beta => write!(f, "beta"),
            ParamField::Omega(u) => write!(f, "omega[{u}]"),
            ParamField::Nu => write!(f, "nu"),
            ParamField::Kappa(u) => write!(f, "kappa[{u}]"),
            ParamField::ExpertA(u) => write!(f, "a[{u}]"),
            ParamField::ExpertB => write!(f, "b"),
            ParamField::ExpertC => write!(f, "c"),
            ParamField::Tau => write!(f, "tau"),
        }
    }
}

/// Map from flat indices to model coordinates. Built once per model shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.to_string()).collect()
    }
}

/// Gradient of a regression function with respect to the free parameters,
/// in layout order.
#[derive(Debug, Clone)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_labels() {
        let e = ParamEntry {
            group: None,
            atom: Some(1),
            field: ParamField::Omega(0),
        };
        assert_eq!(e.to_string(), "atom1.omega[0]");
        let t = ParamEntry {
            group: None,
            atom: None,
            field: ParamField::Tau,
        };
        assert_eq!(t.to_string(), "tau");
        let h = ParamEntry {
            group: Some(1),
            atom: Some(2),
            field: ParamField::Kappa(1),
        };
        assert_eq!(h.to_string(), "group1.atom2.kappa[1]");
    }
}
