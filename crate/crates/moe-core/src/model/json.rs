//! JSON form of the mixing measures.
//!
//! Explicit field names, canonical field order (struct declaration order),
//! and unknown keys rejected. The `family` discriminant selects the shape:
//!
//! ```json
//! {"family":"softmax","betas":[0.4,0.0],"omegas":[[1.2,-0.8],[0.0,0.0]],
//!  "experts":[{"kind":"ffn","a":[1.0,-0.7],"b":0.5,"c":1.5,"activation":"sigmoid"}, ...],
//!  "pinned_last":true}
//! ```

use super::{
    Atom, DenseToSparseMixingMeasure, Group, HierarchicalMixingMeasure, InnerAtom, MixingModel,
    Router, SoftmaxMixingMeasure,
};
use crate::activation::Activation;
use crate::error::Error;
use crate::model::ExpertSpec;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RouterJson {
    Linear,
    Activated(Activation),
}

impl From<Router> for RouterJson {
    fn from(r: Router) -> Self {
        match r {
            Router::Linear => RouterJson::Linear,
            Router::Activated(a) => RouterJson::Activated(a),
        }
    }
}

impl From<RouterJson> for Router {
    fn from(r: RouterJson) -> Self {
        match r {
            RouterJson::Linear => Router::Linear,
            RouterJson::Activated(a) => Router::Activated(a),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SoftmaxJson {
    family: String,
    betas: Vec<f64>,
    omegas: Vec<Vec<f64>>,
    experts: Vec<ExpertSpec>,
    pinned_last: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseToSparseJson {
    family: String,
    betas: Vec<f64>,
    omegas: Vec<Vec<f64>>,
    experts: Vec<ExpertSpec>,
    tau: f64,
    router: RouterJson,
    pinned_last: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InnerJson {
    nu_gate: f64,
    kappa: Vec<f64>,
    expert: ExpertSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupJson {
    beta: f64,
    omega: Vec<f64>,
    inner: Vec<InnerJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchicalJson {
    family: String,
    groups: Vec<GroupJson>,
    pinned_last_outer: bool,
    pinned_last_inner: bool,
}

fn atoms_to_parallel(atoms: &[Atom]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<ExpertSpec>) {
    let betas = atoms.iter().map(|a| a.beta).collect();
    let omegas = atoms.iter().map(|a| a.omega.clone()).collect();
    let experts = atoms.iter().map(|a| a.expert.clone()).collect();
    (betas, omegas, experts)
}

fn parallel_to_atoms(
    betas: Vec<f64>,
    omegas: Vec<Vec<f64>>,
    experts: Vec<ExpertSpec>,
) -> Result<Vec<Atom>, Error> {
    if betas.len() != omegas.len() || betas.len() != experts.len() {
        return Err(Error::InvalidArgument {
            arg: "atoms",
            reason: format!(
                "betas, omegas, experts must have equal length (got {}, {}, {})",
                betas.len(),
                omegas.len(),
                experts.len()
            ),
        });
    }
    Ok(betas
        .into_iter()
        .zip(omegas)
        .zip(experts)
        .map(|((beta, omega), expert)| Atom { beta, omega, expert })
        .collect())
}

impl Serialize for MixingModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            MixingModel::Softmax(m) => {
                let (betas, omegas, experts) = atoms_to_parallel(&m.atoms);
                SoftmaxJson {
                    family: "softmax".into(),
                    betas,
                    omegas,
                    experts,
                    pinned_last: m.pinned_last,
                }
                .serialize(serializer)
            }
            MixingModel::DenseToSparse(m) => {
                let (betas, omegas, experts) = atoms_to_parallel(&m.atoms);
                DenseToSparseJson {
                    family: "dense_to_sparse".into(),
                    betas,
                    omegas,
                    experts,
                    tau: m.tau,
                    router: m.router.into(),
                    pinned_last: m.pinned_last,
                }
                .serialize(serializer)
            }
            MixingModel::Hierarchical(m) => {
                let groups = m
                    .groups
                    .iter()
                    .map(|g| GroupJson {
                        beta: g.beta,
                        omega: g.omega.clone(),
                        inner: g
                            .inner
                            .iter()
                            .map(|i| InnerJson {
                                nu_gate: i.nu,
                                kappa: i.kappa.clone(),
                                expert: i.expert.clone(),
                            })
                            .collect(),
                    })
                    .collect();
                HierarchicalJson {
                    family: "hierarchical".into(),
                    groups,
                    pinned_last_outer: m.pinned_last_outer,
                    pinned_last_inner: m.pinned_last_inner,
                }
                .serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for MixingModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        let family = value
            .get("family")
            .and_then(|f| f.as_str())
            .ok_or_else(|| D::Error::custom("model JSON needs a string `family` field"))?
            .to_owned();
        let model = match family.as_str() {
            "softmax" => {
                let dto: SoftmaxJson =
                    serde_json::from_value(value).map_err(D::Error::custom)?;
                let atoms = parallel_to_atoms(dto.betas, dto.omegas, dto.experts)
                    .map_err(D::Error::custom)?;
                MixingModel::Softmax(
                    SoftmaxMixingMeasure::new(atoms, dto.pinned_last).map_err(D::Error::custom)?,
                )
            }
            "dense_to_sparse" => {
                let dto: DenseToSparseJson =
                    serde_json::from_value(value).map_err(D::Error::custom)?;
                let atoms = parallel_to_atoms(dto.betas, dto.omegas, dto.experts)
                    .map_err(D::Error::custom)?;
                MixingModel::DenseToSparse(
                    DenseToSparseMixingMeasure::new(
                        atoms,
                        dto.tau,
                        dto.router.into(),
                        dto.pinned_last,
                    )
                    .map_err(D::Error::custom)?,
                )
            }
            "hierarchical" => {
                let dto: HierarchicalJson =
                    serde_json::from_value(value).map_err(D::Error::custom)?;
                let groups = dto
                    .groups
                    .into_iter()
                    .map(|g| Group {
                        beta: g.beta,
                        omega: g.omega,
                        inner: g
                            .inner
                            .into_iter()
                            .map(|i| InnerAtom {
                                nu: i.nu_gate,
                                kappa: i.kappa,
                                expert: i.expert,
                            })
                            .collect(),
                    })
                    .collect();
                MixingModel::Hierarchical(
                    HierarchicalMixingMeasure::new(
                        groups,
                        dto.pinned_last_outer,
                        dto.pinned_last_inner,
                    )
                    .map_err(D::Error::custom)?,
                )
            }
            other => {
                return Err(D::Error::custom(format!(
                    "unknown model family `{other}` (expected softmax, dense_to_sparse, or hierarchical)"
                )))
            }
        };
        Ok(model)
    }
}
