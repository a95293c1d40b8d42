//! Learned stand-ins for the stage operators.
//!
//! Each stage gets a branch-trunk network: the branch encodes the anchor,
//! the input windows (resampled to a fixed grid), the horizon and optionally
//! the phase of periodic laws into `rank × n` coefficients; the trunk maps
//! the normalized coordinate `s` to `rank` basis values. Output `d` at `s` is
//! `Σ_r c_{r,d} τ_r(s) + b_d`, rescaled. With the anchor skip enabled the
//! prediction is `Q + s·(…)`, so `P(0) = Q` holds exactly.

mod io;
mod mlp;
mod train;

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, PairRecord};
use crate::error::{Error, Result};
use crate::interp::resample_linear;
use crate::predictor::{PredictorEvaluator, PredictorProblem, PredictorSolution};
use crate::system::{check_len, SampledWindow};
use mlp::Mlp;

pub use io::{decode_model, encode_model, load_model, serialize_model, MODEL_MAGIC};
pub use train::{
    estimate_epsilon, estimate_epsilon_with, gradient_check, train, train_split, EpochLoss, GradientCheck,
    ModelTemplate, StageTraining, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Everything that fixes the parameter layout of one stage model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub stage: usize,
    pub state_dim: usize,
    /// Number of input windows, `m − stage`.
    pub windows: usize,
    pub ns_in: usize,
    pub ns_out: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub rank: usize,
    pub activation: Activation,
    pub anchor_skip: bool,
    /// Adds `sin`/`cos` of `2π t0 / period` to the branch input.
    pub time_period: Option<f64>,
    pub seed: u64,
}

impl Architecture {
    pub fn branch_inputs(&self) -> usize {
        self.state_dim + self.windows * self.ns_in + 1 + if self.time_period.is_some() { 2 } else { 0 }
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.windows == 0 || self.rank == 0 {
            return Err(Error::invalid("architecture needs n, windows and rank >= 1"));
        }
        if self.ns_in < 2 || self.ns_out < 2 {
            return Err(Error::invalid("architecture grids need at least 2 points"));
        }
        if self.branch_hidden.contains(&0) || self.trunk_hidden.contains(&0) {
            return Err(Error::invalid("hidden layers must have width >= 1"));
        }
        if matches!(self.time_period, Some(p) if !(p.is_finite() && p > 0.0)) {
            return Err(Error::invalid("time period must be finite and > 0"));
        }
        Ok(())
    }

    /// `s_k` of the output grid.
    pub fn output_grid(&self) -> Vec<f64> {
        let h = 1.0 / (self.ns_out - 1) as f64;
        (0..self.ns_out).map(|k| k as f64 * h).collect()
    }
}

/// Offsets into the flat parameter vector. Trainable parameters come first,
/// then the fixed normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub(crate) branch: Mlp,
    pub(crate) trunk: Mlp,
    pub(crate) bias: usize,
    pub(crate) trainable: usize,
    pub(crate) in_mean: usize,
    pub(crate) in_std: usize,
    pub(crate) out_mean: usize,
    pub(crate) out_std: usize,
    pub(crate) target_scale: usize,
    pub(crate) total: usize,
}

impl Layout {
    pub(crate) fn new(arch: &Architecture) -> Self {
        let n = arch.state_dim;
        let bin = arch.branch_inputs();
        let mut sizes = vec![bin];
        sizes.extend(&arch.branch_hidden);
        sizes.push(arch.rank * n);
        let branch = Mlp::new(sizes, 0);
        let mut sizes = vec![1];
        sizes.extend(&arch.trunk_hidden);
        sizes.push(arch.rank);
        let trunk = Mlp::new(sizes, branch.end());
        let bias = trunk.end();
        let trainable = bias + n;
        let in_mean = trainable;
        let in_std = in_mean + bin;
        let out_mean = in_std + bin;
        let out_std = out_mean + n;
        let target_scale = out_std + n;
        Self {
            branch,
            trunk,
            bias,
            trainable,
            in_mean,
            in_std,
            out_mean,
            out_std,
            target_scale,
            total: target_scale + n,
        }
    }
}

/// Normalization constants stored in the parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
    /// Per-dimension spread of the targets; errors are reported in these units.
    pub target_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorModel {
    arch: Architecture,
    layout: Layout,
    params: Vec<f64>,
    /// Trunk outputs on the output grid, `ns_out × rank`.
    trunk_cache: Vec<f64>,
}

impl OperatorModel {
    /// Fresh model with random weights drawn from `arch.seed` and identity
    /// normalization.
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
        layout.branch.init(&mut params, &mut rng);
        layout.trunk.init(&mut params, &mut rng);
        params[layout.in_std..layout.out_mean].fill(1.0);
        params[layout.out_std..layout.total].fill(1.0);
        Self::from_parameters(arch, params)
    }

    pub fn from_parameters(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::ParameterCount {
                expected: layout.total,
                found: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let mut model = Self {
            arch,
            layout,
            params,
            trunk_cache: Vec::new(),
        };
        model.refresh();
        Ok(model)
    }

    fn refresh(&mut self) {
        let mut tape = Vec::new();
        let rank = self.arch.rank;
        let mut cache = Vec::with_capacity(self.arch.ns_out * rank);
        for s in self.arch.output_grid() {
            self.layout.trunk.forward(&self.params, &[s], &mut tape);
            cache.extend_from_slice(&tape[tape.len() - 1]);
        }
        self.trunk_cache = cache;
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn stage(&self) -> usize {
        self.arch.stage
    }

    /// Replaces all parameters (trainable and normalization).
    pub fn set_parameters(&mut self, params: Vec<f64>) -> Result<()> {
        *self = Self::from_parameters(self.arch.clone(), params)?;
        Ok(())
    }

    pub fn set_normalization(&mut self, norm: &Normalization) -> Result<()> {
        let l = &self.layout;
        let n = self.arch.state_dim;
        let bin = self.arch.branch_inputs();
        check_len("input mean", bin, norm.in_mean.len())?;
        check_len("input scale", bin, norm.in_std.len())?;
        check_len("output mean", n, norm.out_mean.len())?;
        check_len("output scale", n, norm.out_std.len())?;
        check_len("target scale", n, norm.target_scale.len())?;
        let mut p = self.params.clone();
        p[l.in_mean..l.in_std].copy_from_slice(&norm.in_mean);
        p[l.in_std..l.out_mean].copy_from_slice(&norm.in_std);
        p[l.out_mean..l.out_std].copy_from_slice(&norm.out_mean);
        p[l.out_std..l.target_scale].copy_from_slice(&norm.out_std);
        p[l.target_scale..l.total].copy_from_slice(&norm.target_scale);
        self.set_parameters(p)
    }

    /// Zeroes the last branch layer so every output equals the bias term.
    pub fn zero_projection(&mut self) {
        let mut p = self.params.clone();
        self.layout.branch.zero_output(&mut p);
        self.params = p;
    }

    pub fn target_scale(&self) -> &[f64] {
        &self.params[self.layout.target_scale..self.layout.total]
    }

    /// Raw (unnormalized) branch input.
    pub(crate) fn raw_features(&self, anchor: &[f64], windows: &[&[f64]], phi: f64, t0: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.arch.branch_inputs());
        x.extend_from_slice(anchor);
        for w in windows {
            if w.len() == self.arch.ns_in {
                x.extend_from_slice(w);
            } else {
                x.extend(resample_linear(w, self.arch.ns_in));
            }
        }
        x.push(phi);
        if let Some(period) = self.arch.time_period {
            let phase = TAU * (t0 / period).fract();
            x.push(phase.sin());
            x.push(phase.cos());
        }
        x
    }

    pub(crate) fn normalize(&self, raw: &mut [f64]) {
        let l = &self.layout;
        let mean = &self.params[l.in_mean..l.in_std];
        let std = &self.params[l.in_std..l.out_mean];
        for ((v, m), s) in raw.iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }

    /// Trajectory rows from a normalized branch input, given the trunk values.
    pub(crate) fn decode(&self, coeffs: &[f64], trunk: &[f64], anchor: &[f64], out: &mut Vec<f64>) {
        let n = self.arch.state_dim;
        let rank = self.arch.rank;
        let l = &self.layout;
        let bias = &self.params[l.bias..l.trainable];
        let mean = &self.params[l.out_mean..l.out_std];
        let std = &self.params[l.out_std..l.target_scale];
        let h = 1.0 / (self.arch.ns_out - 1) as f64;
        out.clear();
        for (k, basis) in trunk.chunks_exact(rank).enumerate() {
            let s = k as f64 * h;
            for d in 0..n {
                let mut y = bias[d];
                for (r, b) in basis.iter().enumerate() {
                    y += coeffs[r * n + d] * b;
                }
                let v = mean[d] + std[d] * y;
                out.push(if self.arch.anchor_skip { anchor[d] + s * v } else { v });
            }
        }
    }

    /// Predicted trajectory (`ns_out × n`) from the anchor, the windows of
    /// inputs `stage..m` (any grid size), the horizon and the time base.
    pub fn predict(&self, anchor: &[f64], windows: &[&[f64]], phi: f64, t0: f64) -> Result<Vec<f64>> {
        check_len("anchor", self.arch.state_dim, anchor.len())?;
        check_len("model windows", self.arch.windows, windows.len())?;
        if windows.iter().any(|w| w.len() < 2) {
            return Err(Error::invalid("model windows need at least 2 samples"));
        }
        let mut x = self.raw_features(anchor, windows, phi, t0);
        self.normalize(&mut x);
        let mut tape = Vec::new();
        self.layout.branch.forward(&self.params, &x, &mut tape);
        let mut out = Vec::with_capacity(self.arch.ns_out * self.arch.state_dim);
        self.decode(&tape[tape.len() - 1], &self.trunk_cache, anchor, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("stage {} model output", self.arch.stage)));
        }
        Ok(out)
    }

    /// Evaluates the model as a predictor operator.
    pub fn infer(&self, anchor: &[f64], windows: &[SampledWindow], phi: f64, t0: f64) -> Result<PredictorSolution> {
        let views: Vec<&[f64]> = windows.iter().map(SampledWindow::values).collect();
        let trajectory = self.predict(anchor, &views, phi, t0)?;
        Ok(PredictorSolution {
            trajectory,
            n: self.arch.state_dim,
            residual: None,
            iterations: 0,
            converged: true,
        })
    }

    pub(crate) fn predict_record(&self, rec: &PairRecord, manifest: &DatasetManifest) -> Result<Vec<f64>> {
        let views: Vec<&[f64]> = rec.windows.iter().map(Vec::as_slice).collect();
        self.predict(&rec.anchor, &views, rec.phi, rec.time + manifest.stage_start(rec.stage))
    }
}

/// Empirical sup-norm error of a predictor on held-out pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    /// Max over records of the max-over-grid Euclidean error.
    pub eps_hat: f64,
    /// Mean squared error per grid point and component.
    pub mean_l2: f64,
    /// Same, with each component divided by the target scale first.
    pub normalized_l2: f64,
    pub records: usize,
}

/// One model per stage behind the evaluator interface.
#[derive(Debug, Clone)]
pub struct NeuralPredictor {
    models: Vec<OperatorModel>,
}

impl NeuralPredictor {
    /// `models[k]` must be the stage-`k` model.
    pub fn new(models: Vec<OperatorModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("need at least one stage model"));
        }
        let m = models.len();
        let n = models[0].arch.state_dim;
        for (k, model) in models.iter().enumerate() {
            let a = &model.arch;
            if a.stage != k || a.windows != m - k || a.state_dim != n {
                return Err(Error::invalid(format!(
                    "model {k} (stage {}, {} windows, n = {}) does not fit a {m}-stage chain with n = {n}",
                    a.stage, a.windows, a.state_dim
                )));
            }
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[OperatorModel] {
        &self.models
    }
}

impl PredictorEvaluator for NeuralPredictor {
    fn name(&self) -> &str {
        "neural"
    }

    fn evaluate(&self, problem: &PredictorProblem<'_>) -> Result<PredictorSolution> {
        let model = self
            .models
            .get(problem.stage)
            .ok_or_else(|| Error::invalid(format!("no model for stage {}", problem.stage)))?;
        check_len("problem state", model.arch.state_dim, problem.anchor.len())?;
        model.infer(&problem.anchor, &problem.windows, problem.phi, problem.t0)
    }
}
