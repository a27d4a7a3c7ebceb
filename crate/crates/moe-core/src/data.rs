//! Synthetic regression data: i.i.d. box-uniform inputs with additive
//! Gaussian noise on top of a mixing-measure regression function.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MixingModel;
use crate::rng::Stream;

/// Input distribution: uniform on the box `[lo, hi]^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDistribution {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
}

impl InputDistribution {
    pub fn new(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        let dist = Self { dim, lo, hi };
        dist.validate()?;
        Ok(dist)
    }

    /// Uniform on `[-1, 1]^dim`.
    pub fn unit_box(dim: usize) -> Self {
        Self {
            dim,
            lo: -1.0,
            hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument {
                arg: "dim",
                reason: "input dimension must be positive".into(),
            });
        }
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo >= self.hi {
            return Err(Error::InvalidArgument {
                arg: "box",
                reason: format!("need finite lo < hi, got [{}, {}]", self.lo, self.hi),
            });
        }
        Ok(())
    }
}

/// A fully materialized dataset: `n` rows of inputs plus scalar responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n x dim` inputs.
    inputs: Vec<f64>,
    responses: Vec<f64>,
    dim: usize,
    pub noise_variance: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        responses: Vec<f64>,
        dim: usize,
        noise_variance: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || inputs.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                what: "dataset inputs",
                expected: dim.max(1),
                got: inputs.len(),
            });
        }
        if inputs.len() / dim != responses.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset responses",
                expected: inputs.len() / dim,
                got: responses.len(),
            });
        }
        Ok(Self {
            inputs,
            responses,
            dim,
            noise_variance,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn response(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Borrow the first `n` rows as a dataset view copy. Used for screening
    /// candidate starts on a deterministic prefix before full refinement.
    pub fn prefix(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n * self.dim].to_vec(),
            responses: self.responses[..n].to_vec(),
            dim: self.dim,
            noise_variance: self.noise_variance,
            seed: self.seed,
        }
    }

    /// CSV dump with header `x_0,..,x_{d-1},y`, one row per sample.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.input(i).iter().map(|v| v.to_string()).collect();
            row.push(self.responses[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }
}

/// Draw `n` i.i.d. inputs from `dist`. Deterministic given `seed`; the
/// stream is separate from the noise stream used by [`generate_dataset`].
pub fn sample_inputs(dist: &InputDistribution, n: usize, seed: u64) -> Result<Vec<f64>> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument {
            arg: "n",
            reason: "need at least one sample".into(),
        });
    }
    let mut stream = Stream::new(seed, "data.inputs", &[]);
    let mut out = Vec::with_capacity(n * dist.dim);
    for _ in 0..n {
        for _ in 0..dist.dim {
            out.push(stream.uniform_in(dist.lo, dist.hi));
        }
    }
    Ok(out)
}

/// Generate a dataset from the ground-truth regression function:
/// `y_i = f(x_i) + eps_i` with `eps_i ~ N(0, noise_variance)`.
pub fn generate_dataset(
    truth: &MixingModel,
    dist: &InputDistribution,
    n: usize,
    noise_variance: f64,
    seed: u64,
) -> Result<Dataset> {
    truth.validate()?;
    if truth.dimension() != dist.dim {
        return Err(Error::DimensionMismatch {
            what: "input distribution dimension",
            expected: truth.dimension(),
            got: dist.dim,
        });
    }
    if !noise_variance.is_finite() || noise_variance < 0.0 {
        return Err(Error::InvalidArgument {
            arg: "noise_variance",
            reason: format!("must be finite and nonnegative, got {noise_variance}"),
        });
    }
    let inputs = sample_inputs(dist, n, seed)?;
    let noise_std = noise_variance.sqrt();
    let mut noise = Stream::new(seed, "data.noise", &[]);
    let mut scratch = crate::model::EvalScratch::default();
    let mut responses = Vec::with_capacity(n);
    for i in 0..n {
        let x = &inputs[i * dist.dim..(i + 1) * dist.dim];
        let mut y = truth.eval_with(x, &mut scratch);
        if noise_std > 0.0 {
            y += noise_std * noise.normal();
        }
        responses.push(y);
    }
    Dataset::new(inputs, responses, dist.dim, noise_variance, seed)
}
