//! Canonical flat view of the free parameters.
//!
//! The enumeration here is the single source of truth for parameter order;
//! `eval_grad_with` fills its output in the same order, which the gradient
//! oracle tests pin down by finite differences on the packed vector.

use super::params::{ParamEntry, ParamField, ParamLayout};
use super::{
    Atom, DenseToSparseMixingMeasure, ExpertSpec, HierarchicalMixingMeasure, MixingModel,
    SoftmaxMixingMeasure,
};
use crate::error::{Error, Result};

fn expert_fields(expert: &ExpertSpec, group: Option<usize>, atom: usize, out: &mut Vec<ParamEntry>) {
    let d = expert.dimension();
    for u in 0..d {
        out.push(ParamEntry {
            group,
            atom: Some(atom),
            field: ParamField::ExpertA(u),
        });
    }
    out.push(ParamEntry {
        group,
        atom: Some(atom),
        field: ParamField::ExpertB,
    });
    if matches!(expert, ExpertSpec::Ffn { .. }) {
        out.push(ParamEntry {
            group,
            atom: Some(atom),
            field: ParamField::ExpertC,
        });
    }
}

fn flat_layout(atoms: &[Atom], pinned_last: bool, with_tau: bool) -> ParamLayout {
    let k = atoms.len();
    let d = atoms[0].omega.len();
    let mut entries = Vec::new();
    for (i, atom) in atoms.iter().enumerate() {
        if !(pinned_last && i == k - 1) {
            entries.push(ParamEntry {
                group: None,
                atom: Some(i),
                field: ParamField::Beta,
            });
            for u in 0..d {
                entries.push(ParamEntry {
                    group: None,
                    atom: Some(i),
                    field: ParamField::Omega(u),
                });
            }
        }
        expert_fields(&atom.expert, None, i, &mut entries);
    }
    if with_tau {
        entries.push(ParamEntry {
            group: None,
            atom: None,
            field: ParamField::Tau,
        });
    }
    ParamLayout { entries }
}

fn read_expert_field(expert: &ExpertSpec, field: ParamField) -> f64 {
    match (expert, field) {
        (ExpertSpec::Linear { a, .. }, ParamField::ExpertA(u)) => a[u],
        (ExpertSpec::Linear { b, .. }, ParamField::ExpertB) => *b,
        (ExpertSpec::Ffn { a, .. }, ParamField::ExpertA(u)) => a[u],
        (ExpertSpec::Ffn { b, .. }, ParamField::ExpertB) => *b,
        (ExpertSpec::Ffn { c, .. }, ParamField::ExpertC) => *c,
        _ => unreachable!("invalid expert field"),
    }
}

fn write_expert_field(expert: &mut ExpertSpec, field: ParamField, value: f64) {
    match (expert, field) {
        (ExpertSpec::Linear { a, .. }, ParamField::ExpertA(u)) => a[u] = value,
        (ExpertSpec::Linear { b, .. }, ParamField::ExpertB) => *b = value,
        (ExpertSpec::Ffn { a, .. }, ParamField::ExpertA(u)) => a[u] = value,
        (ExpertSpec::Ffn { b, .. }, ParamField::ExpertB) => *b = value,
        (ExpertSpec::Ffn { c, .. }, ParamField::ExpertC) => *c = value,
        _ => unreachable!("invalid expert field"),
    }
}

fn read_atom_field(atom: &Atom, field: ParamField) -> f64 {
    match field {
        ParamField::Beta => atom.beta,
        ParamField::Omega(u) => atom.omega[u],
        other => read_expert_field(&atom.expert, other),
    }
}

fn write_atom_field(atom: &mut Atom, field: ParamField, value: f64) {
    match field {
        ParamField::Beta => atom.beta = value,
        ParamField::Omega(u) => atom.omega[u] = value,
        other => write_expert_field(&mut atom.expert, other, value),
    }
}

fn check_len(layout: &ParamLayout, values: &[f64]) -> Result<()> {
    if values.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            what: "free parameter vector",
            expected: layout.len(),
            got: values.len(),
        });
    }
    Ok(())
}

impl SoftmaxMixingMeasure {
    pub fn layout(&self) -> ParamLayout {
        flat_layout(&self.atoms, self.pinned_last, false)
    }

    pub fn free_param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn get_param(&self, entry: &ParamEntry) -> f64 {
        read_atom_field(&self.atoms[entry.atom.expect("flat entry")], entry.field)
    }

    pub fn free_params(&self) -> Vec<f64> {
        self.layout()
            .entries
            .iter()
            .map(|e| self.get_param(e))
            .collect()
    }

    pub fn set_free_params(&mut self, values: &[f64]) -> Result<()> {
        let layout = self.layout();
        check_len(&layout, values)?;
        for (entry, &v) in layout.entries.iter().zip(values) {
            write_atom_field(&mut self.atoms[entry.atom.unwrap()], entry.field, v);
        }
        Ok(())
    }
}

impl DenseToSparseMixingMeasure {
    pub fn layout(&self) -> ParamLayout {
        flat_layout(&self.atoms, self.pinned_last, true)
    }

    pub fn free_param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn get_param(&self, entry: &ParamEntry) -> f64 {
        if entry.field == ParamField::Tau {
            self.tau
        } else {
            read_atom_field(&self.atoms[entry.atom.expect("flat entry")], entry.field)
        }
    }

    pub fn free_params(&self) -> Vec<f64> {
        self.layout()
            .entries
            .iter()
            .map(|e| self.get_param(e))
            .collect()
    }

    pub fn set_free_params(&mut self, values: &[f64]) -> Result<()> {
        let layout = self.layout();
        check_len(&layout, values)?;
        for (entry, &v) in layout.entries.iter().zip(values) {
            if entry.field == ParamField::Tau {
                self.tau = v;
            } else {
                write_atom_field(&mut self.atoms[entry.atom.unwrap()], entry.field, v);
            }
        }
        Ok(())
    }
}

impl HierarchicalMixingMeasure {
    pub fn layout(&self) -> ParamLayout {
        let k1 = self.groups.len();
        let k2 = self.inner_count();
        let d = self.dimension();
        let mut entries = Vec::new();
        for (g, group) in self.groups.iter().enumerate() {
            if !(self.pinned_last_outer && g == k1 - 1) {
                entries.push(ParamEntry {
                    group: Some(g),
                    atom: None,
                    field: ParamField::Beta,
                });
                for u in 0..d {
                    entries.push(ParamEntry {
                        group: Some(g),
                        atom: None,
                        field: ParamField::Omega(u),
                    });
                }
            }
            for (t, inner) in group.inner.iter().enumerate() {
                if !(self.pinned_last_inner && t == k2 - 1) {
                    entries.push(ParamEntry {
                        group: Some(g),
                        atom: Some(t),
                        field: ParamField::Nu,
                    });
                    for u in 0..d {
                        entries.push(ParamEntry {
                            group: Some(g),
                            atom: Some(t),
                            field: ParamField::Kappa(u),
                        });
                    }
                }
                expert_fields(&inner.expert, Some(g), t, &mut entries);
            }
        }
        ParamLayout { entries }
    }

    pub fn free_param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn get_param(&self, entry: &ParamEntry) -> f64 {
        let group = &self.groups[entry.group.expect("hier entry")];
        match (entry.atom, entry.field) {
            (None, ParamField::Beta) => group.beta,
            (None, ParamField::Omega(u)) => group.omega[u],
            (Some(t), ParamField::Nu) => group.inner[t].nu,
            (Some(t), ParamField::Kappa(u)) => group.inner[t].kappa[u],
            (Some(t), field) => read_expert_field(&group.inner[t].expert, field),
            _ => unreachable!("invalid hierarchical entry"),
        }
    }

    pub fn free_params(&self) -> Vec<f64> {
        self.layout()
            .entries
            .iter()
            .map(|e| self.get_param(e))
            .collect()
    }

    pub fn set_free_params(&mut self, values: &[f64]) -> Result<()> {
        let layout = self.layout();
        check_len(&layout, values)?;
        for (entry, &v) in layout.entries.iter().zip(values) {
            let group = &mut self.groups[entry.group.unwrap()];
            match (entry.atom, entry.field) {
                (None, ParamField::Beta) => group.beta = v,
                (None, ParamField::Omega(u)) => group.omega[u] = v,
                (Some(t), ParamField::Nu) => group.inner[t].nu = v,
                (Some(t), ParamField::Kappa(u)) => group.inner[t].kappa[u] = v,
                (Some(t), field) => write_expert_field(&mut group.inner[t].expert, field, v),
                _ => unreachable!("invalid hierarchical entry"),
            }
        }
        Ok(())
    }
}

impl MixingModel {
    pub fn layout(&self) -> ParamLayout {
        match self {
            MixingModel::Softmax(m) => m.layout(),
            MixingModel::DenseToSparse(m) => m.layout(),
            MixingModel::Hierarchical(m) => m.layout(),
        }
    }

    pub fn free_param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn get_param(&self, entry: &ParamEntry) -> f64 {
        match self {
            MixingModel::Softmax(m) => m.get_param(entry),
            MixingModel::DenseToSparse(m) => m.get_param(entry),
            MixingModel::Hierarchical(m) => m.get_param(entry),
        }
    }

    pub fn free_params(&self) -> Vec<f64> {
        match self {
            MixingModel::Softmax(m) => m.free_params(),
            MixingModel::DenseToSparse(m) => m.free_params(),
            MixingModel::Hierarchical(m) => m.free_params(),
        }
    }

    pub fn set_free_params(&mut self, values: &[f64]) -> Result<()> {
        match self {
            MixingModel::Softmax(m) => m.set_free_params(values),
            MixingModel::DenseToSparse(m) => m.set_free_params(values),
            MixingModel::Hierarchical(m) => m.set_free_params(values),
        }
    }
}
