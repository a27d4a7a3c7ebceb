//! Experiment configuration: which truth, which losses, which sample sizes,
//! and what decay rate each tracked loss is expected to show.

use serde::{Deserialize, Serialize};

use crate::data::InputDistribution;
use crate::error::{Error, Result};
use crate::fitting::{FitConfig, ModelShape};
use crate::model::{ExpertSpec, MixingModel};

/// A loss the sweep evaluates on every fitted replicate.
///
/// `tau_gap` is the temperature block of the tempered loss on its own:
/// `sum_i exp(beta_i / tau) * |tau - tau*|^r` over the fitted atoms. It is
/// tracked separately because under a linear router the temperature is not
/// identifiable and this block is the part that stalls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    L1,
    L2r { r: f64 },
    L3r { r: f64 },
    TauGap { r: f64 },
    L4,
    L5,
    L6r { r: f64 },
    ParamErr,
    RegL2,
}

impl LossSpec {
    /// Value written in the `loss_name` CSV column.
    pub fn csv_name(&self) -> &'static str {
        match self {
            LossSpec::L1 => "L1",
            LossSpec::L2r { .. } => "L2r",
            LossSpec::L3r { .. } => "L3r",
            LossSpec::TauGap { .. } => "tau_gap",
            LossSpec::L4 => "L4",
            LossSpec::L5 => "L5",
            LossSpec::L6r { .. } => "L6r",
            LossSpec::ParamErr => "param_err",
            LossSpec::RegL2 => "reg_l2",
        }
    }

    pub fn r(&self) -> Option<f64> {
        match self {
            LossSpec::L2r { r } | LossSpec::L3r { r } | LossSpec::TauGap { r } | LossSpec::L6r { r } => {
                Some(*r)
            }
            _ => None,
        }
    }
}

/// Expected decay rate of one tracked loss, in log-log slope terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateTarget {
    /// Slope must land in `[lo, hi]`; `target` is the nominal exponent.
    Band { target: f64, lo: f64, hi: f64 },
    /// Loss is expected to decay slower than any tracked polynomial rate:
    /// slope must stay above `min_slope` (closer to zero).
    LogSlow { min_slope: f64 },
}

/// One rate assertion: which loss, and what its slope should do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCheck {
    pub loss: LossSpec,
    pub target: RateTarget,
}

fn default_mc_points() -> usize {
    20_000
}

/// Full description of one rate study. Everything that affects the numbers
/// lives here; execution details (threads, output paths, resume) do not,
/// so equal configs mean byte-equal records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written into every record; also used in file names.
    pub scenario: String,
    pub shape: ModelShape,
    pub truth: MixingModel,
    /// True when the fitted atom budget equals the truth's, the regime where
    /// parametric rates are expected.
    pub exact_specified: bool,
    pub n_grid: Vec<u64>,
    pub replicates: u64,
    pub noise_variance: f64,
    pub input: InputDistribution,
    pub fit: FitConfig,
    pub losses: Vec<LossSpec>,
    #[serde(default)]
    pub rate_checks: Vec<RateCheck>,
    pub master_seed: u64,
    /// Monte Carlo points for the regression-gap loss.
    #[serde(default = "default_mc_points")]
    pub mc_points: usize,
}

fn invalid(reason: String) -> Error {
    Error::InvalidConfig { reason }
}

fn experts_all_linear<'a, I: Iterator<Item = &'a ExpertSpec>>(mut experts: I) -> bool {
    experts.all(|e| matches!(e, ExpertSpec::Linear { .. }))
}

impl ExperimentConfig {
    /// Atom budget of the truth: atoms for the flat families, inner atoms
    /// per group for the hierarchical family.
    pub fn truth_budget(&self) -> usize {
        match &self.truth {
            MixingModel::Softmax(m) => m.num_atoms(),
            MixingModel::DenseToSparse(m) => m.num_atoms(),
            MixingModel::Hierarchical(m) => m.inner_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario.is_empty()
            || !self
                .scenario
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(invalid(format!(
                "scenario `{}` must be nonempty snake_case ascii",
                self.scenario
            )));
        }
        self.shape.validate()?;
        self.truth.validate()?;
        if ModelShape::of(&self.truth) != self.shape {
            return Err(invalid(format!(
                "shape {:?} does not describe the truth (which is {:?})",
                self.shape,
                ModelShape::of(&self.truth)
            )));
        }
        self.input.validate()?;
        if self.input.dim != self.shape.dim() {
            return Err(Error::DimensionMismatch {
                what: "experiment input distribution",
                expected: self.shape.dim(),
                got: self.input.dim,
            });
        }
        if self.n_grid.len() < 2 {
            return Err(invalid("n_grid needs at least two sample sizes".into()));
        }
        if !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("n_grid must be strictly increasing".into()));
        }
        if self.n_grid[0] < 10 {
            return Err(invalid("sample sizes below 10 are not meaningful here".into()));
        }
        if self.replicates == 0 {
            return Err(invalid("need at least one replicate".into()));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(invalid(format!(
                "noise_variance {} must be finite and nonnegative",
                self.noise_variance
            )));
        }
        let budget = self.truth_budget();
        if self.exact_specified && self.fit.k_fit != budget {
            return Err(invalid(format!(
                "exact_specified requires k_fit = {budget}, got {}",
                self.fit.k_fit
            )));
        }
        if self.fit.k_fit < budget {
            return Err(invalid(format!(
                "k_fit = {} is below the truth budget {budget}; under-specified fits are not part of this study",
                self.fit.k_fit
            )));
        }
        if self.losses.is_empty() {
            return Err(invalid("losses must not be empty".into()));
        }
        for (i, a) in self.losses.iter().enumerate() {
            for b in &self.losses[..i] {
                if a == b {
                    return Err(invalid(format!("duplicate loss {a:?}")));
                }
            }
        }
        for loss in &self.losses {
            self.check_loss_compatible(loss)?;
        }
        for check in &self.rate_checks {
            if !self.losses.contains(&check.loss) {
                return Err(invalid(format!(
                    "rate check on {:?} but that loss is not tracked",
                    check.loss
                )));
            }
            match check.target {
                RateTarget::Band { target, lo, hi } => {
                    if !(lo.is_finite() && hi.is_finite() && target.is_finite()) || lo > hi {
                        return Err(invalid(format!(
                            "band [{lo}, {hi}] around {target} is not a valid interval"
                        )));
                    }
                    if target < lo || target > hi {
                        return Err(invalid(format!(
                            "target {target} lies outside its band [{lo}, {hi}]"
                        )));
                    }
                }
                RateTarget::LogSlow { min_slope } => {
                    if !(min_slope.is_finite() && min_slope < 0.0) {
                        return Err(invalid(format!(
                            "min_slope {min_slope} must be finite and negative"
                        )));
                    }
                }
            }
        }
        if self.losses.contains(&LossSpec::RegL2) && self.mc_points < 10_000 {
            return Err(invalid(format!(
                "regression-gap loss needs at least 10000 Monte Carlo points, got {}",
                self.mc_points
            )));
        }
        Ok(())
    }

    fn check_loss_compatible(&self, loss: &LossSpec) -> Result<()> {
        let family = self.truth.family_label();
        let mismatch = |needs: &str| {
            invalid(format!(
                "loss {:?} needs a {needs} truth, scenario `{}` uses {family}",
                loss, self.scenario
            ))
        };
        match (loss, &self.truth) {
            (LossSpec::L1, MixingModel::Softmax(_)) => Ok(()),
            (LossSpec::L1, _) => Err(mismatch("softmax")),
            (LossSpec::L2r { r }, MixingModel::Softmax(m)) => {
                check_r(*r)?;
                if experts_all_linear(m.atoms.iter().map(|a| &a.expert)) {
                    Ok(())
                } else {
                    Err(mismatch("linear-expert softmax"))
                }
            }
            (LossSpec::L2r { .. }, _) => Err(mismatch("linear-expert softmax")),
            (LossSpec::L3r { r } | LossSpec::TauGap { r }, MixingModel::DenseToSparse(_)) => {
                check_r(*r)
            }
            (LossSpec::L3r { .. } | LossSpec::TauGap { .. }, _) => {
                Err(mismatch("dense-to-sparse"))
            }
            (LossSpec::L4, MixingModel::DenseToSparse(_)) => Ok(()),
            (LossSpec::L4, _) => Err(mismatch("dense-to-sparse")),
            (LossSpec::L5, MixingModel::Hierarchical(_)) => Ok(()),
            (LossSpec::L5, _) => Err(mismatch("hierarchical")),
            (LossSpec::L6r { r }, MixingModel::Hierarchical(m)) => {
                check_r(*r)?;
                let experts = m.groups.iter().flat_map(|g| g.inner.iter().map(|t| &t.expert));
                if experts_all_linear(experts) {
                    Ok(())
                } else {
                    Err(mismatch("linear-expert hierarchical"))
                }
            }
            (LossSpec::L6r { .. }, _) => Err(mismatch("linear-expert hierarchical")),
            (LossSpec::ParamErr | LossSpec::RegL2, _) => Ok(()),
        }
    }
}

fn check_r(r: f64) -> Result<()> {
    if r.is_finite() && r >= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("loss order r = {r} must be finite and >= 1")))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Stable fingerprint of a configuration, used to guard resumed sweeps
/// against mixing records from different configs.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(config)?;
    Ok(format!("{:016x}", fnv1a64(json.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Atom, SoftmaxMixingMeasure};

    fn linear_softmax_truth() -> MixingModel {
        MixingModel::Softmax(SoftmaxMixingMeasure {
            atoms: vec![
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
            pinned_last: true,
        })
    }

    fn base_config() -> ExperimentConfig {
        let truth = linear_softmax_truth();
        let mut fit = FitConfig::default();
        fit.k_fit = 2;
        ExperimentConfig {
            scenario: "softmax_linear_demo".into(),
            shape: ModelShape::of(&truth),
            truth,
            exact_specified: true,
            n_grid: vec![100, 300, 1000],
            replicates: 2,
            noise_variance: 0.01,
            input: InputDistribution::unit_box(2),
            fit,
            losses: vec![LossSpec::L1, LossSpec::L2r { r: 1.0 }, LossSpec::ParamErr],
            rate_checks: vec![RateCheck {
                loss: LossSpec::L1,
                target: RateTarget::Band {
                    target: -0.5,
                    lo: -0.65,
                    hi: -0.35,
                },
            }],
            master_seed: 7,
            mc_points: default_mc_points(),
        }
    }

    #[test]
    fn base_config_validates_and_round_trips() {
        let config = base_config();
        config.validate().unwrap();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        assert_eq!(config_hash(&config).unwrap(), config_hash(&back).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value = serde_json::to_value(base_config()).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("replicants".into(), serde_json::json!(3));
        assert!(serde_json::from_value::<ExperimentConfig>(value).is_err());
    }

    #[test]
    fn structural_mistakes_are_caught() {
        let mut c = base_config();
        c.n_grid = vec![1000, 1000];
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.n_grid = vec![1000];
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.replicates = 0;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.scenario = "Mixed Case".into();
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.noise_variance = -1.0;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.fit.k_fit = 3;
        // exact_specified pins the budget to the truth's atom count.
        assert!(c.validate().is_err());
        c.exact_specified = false;
        c.validate().unwrap();
        c.fit.k_fit = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn loss_family_mismatches_are_caught() {
        let mut c = base_config();
        c.losses = vec![LossSpec::L4];
        c.rate_checks.clear();
        assert!(c.validate().is_err());

        // Tempered-family losses need a dense-to-sparse truth.
        let mut c = base_config();
        c.losses = vec![LossSpec::TauGap { r: 1.0 }];
        c.rate_checks.clear();
        assert!(c.validate().is_err());

        // An FFN expert disqualifies the linear-expert loss.
        let mut c = base_config();
        if let MixingModel::Softmax(m) = &mut c.truth {
            m.atoms[0].expert = ExpertSpec::Ffn {
                a: vec![2.0, -1.4],
                b: 0.5,
                c: 1.5,
                activation: crate::activation::Activation::Sigmoid,
            };
        }
        c.shape = ModelShape::of(&c.truth);
        c.losses = vec![LossSpec::L2r { r: 1.0 }];
        c.rate_checks.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn rate_checks_must_reference_tracked_losses() {
        let mut c = base_config();
        c.rate_checks = vec![RateCheck {
            loss: LossSpec::ParamErr,
            target: RateTarget::LogSlow { min_slope: -0.15 },
        }];
        c.validate().unwrap();
        c.rate_checks = vec![RateCheck {
            loss: LossSpec::RegL2,
            target: RateTarget::LogSlow { min_slope: -0.15 },
        }];
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.rate_checks = vec![RateCheck {
            loss: LossSpec::L1,
            target: RateTarget::Band {
                target: -0.9,
                lo: -0.65,
                hi: -0.35,
            },
        }];
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_distinguishes_configs_and_ignores_nothing_semantic() {
        let a = base_config();
        let mut b = base_config();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.master_seed = 8;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn loss_names_match_the_csv_contract() {
        let pairs = [
            (LossSpec::L1, "L1", None),
            (LossSpec::L2r { r: 2.0 }, "L2r", Some(2.0)),
            (LossSpec::L3r { r: 1.0 }, "L3r", Some(1.0)),
            (LossSpec::TauGap { r: 1.0 }, "tau_gap", Some(1.0)),
            (LossSpec::L4, "L4", None),
            (LossSpec::L5, "L5", None),
            (LossSpec::L6r { r: 1.0 }, "L6r", Some(1.0)),
            (LossSpec::ParamErr, "param_err", None),
            (LossSpec::RegL2, "reg_l2", None),
        ];
        for (spec, name, r) in pairs {
            assert_eq!(spec.csv_name(), name);
            assert_eq!(spec.r(), r);
        }
    }
}
