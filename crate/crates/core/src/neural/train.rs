use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Activation, Architecture, EpsilonEstimate, Layout, NeuralPredictor, Normalization, OperatorModel};
use crate::dataset::{split_dataset, DatasetManifest, PairRecord, PredictorDataset};
use crate::error::{Error, Result};
use crate::predictor::PredictorEvaluator;
use crate::rng::derive;
use crate::system::{ControlLawSet, SystemModel};

/// Records per gradient work unit. Fixed so the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine schedule floor.
    pub final_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("training needs epochs >= 1 and batch_size >= 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must be in (0, 1)"));
        }
        let rates_ok = self.learning_rate > 0.0
            && self.final_learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_epsilon > 0.0;
        if !rates_ok {
            return Err(Error::invalid("bad optimizer settings"));
        }
        Ok(())
    }

    fn rate(&self, epoch: usize) -> f64 {
        let progress = epoch as f64 / self.epochs as f64;
        self.final_learning_rate
            + 0.5 * (self.learning_rate - self.final_learning_rate) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Stage-independent part of the architecture; the rest comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelTemplate {
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub rank: usize,
    pub anchor_skip: bool,
    /// Feed the phase of periodic laws to stages that evaluate them.
    pub time_features: bool,
}

impl Default for ModelTemplate {
    fn default() -> Self {
        Self {
            branch_hidden: vec![128, 128],
            trunk_hidden: vec![64, 64],
            rank: 32,
            anchor_skip: true,
            time_features: true,
        }
    }
}

impl ModelTemplate {
    pub fn architecture(&self, manifest: &DatasetManifest, stage: usize, seed: u64) -> Architecture {
        Architecture {
            stage,
            state_dim: manifest.n,
            windows: manifest.m - stage,
            ns_in: manifest.ns_in,
            ns_out: manifest.ns_out,
            branch_hidden: self.branch_hidden.clone(),
            trunk_hidden: self.trunk_hidden.clone(),
            rank: self.rank,
            activation: Activation::Tanh,
            anchor_skip: self.anchor_skip,
            time_period: if self.time_features && stage > 0 {
                manifest.law_period
            } else {
                None
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct StageTraining {
    pub model: OperatorModel,
    pub curve: Vec<EpochLoss>,
    pub epsilon: EpsilonEstimate,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stages: Vec<StageTraining>,
}

impl TrainOutcome {
    pub fn models(&self) -> Vec<OperatorModel> {
        self.stages.iter().map(|s| s.model.clone()).collect()
    }

    pub fn predictor(&self) -> Result<NeuralPredictor> {
        NeuralPredictor::new(self.models())
    }

    /// Largest per-stage `ε̂`.
    pub fn eps_hat(&self) -> f64 {
        self.stages.iter().map(|s| s.epsilon.eps_hat).fold(0.0, f64::max)
    }
}

/// Splits `dataset` per `cfg` and trains one model per stage.
pub fn train(dataset: &PredictorDataset, template: &ModelTemplate, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let (tr, va) = split_dataset(dataset, cfg.validation_fraction, cfg.seed)?;
    train_split(&tr, &va, template, cfg)
}

/// Trains on an existing split.
pub fn train_split(
    train: &PredictorDataset,
    validation: &PredictorDataset,
    template: &ModelTemplate,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let man = &train.manifest;
    let stages = (0..man.m)
        .map(|stage| {
            let arch = template.architecture(man, stage, derive(cfg.seed, 100 + stage as u64));
            train_stage(arch, &train.stage(stage), &validation.stage(stage), man, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome { stages })
}

struct Sample {
    x: Vec<f64>,
    anchor: Vec<f64>,
    target: Vec<f64>,
}

/// Loss-side constants shared by every record.
struct Ctx<'a> {
    arch: &'a Architecture,
    layout: &'a Layout,
    grid: Vec<f64>,
    /// `1 / scale_d²`.
    weight: Vec<f64>,
}

impl<'a> Ctx<'a> {
    fn new(model: &'a OperatorModel) -> Self {
        Self {
            arch: &model.arch,
            layout: &model.layout,
            grid: model.arch.output_grid(),
            weight: model.target_scale().iter().map(|s| 1.0 / (s * s)).collect(),
        }
    }

    fn trunk(&self, params: &[f64]) -> (Vec<Vec<Vec<f64>>>, Vec<f64>) {
        let mut tapes = Vec::with_capacity(self.grid.len());
        let mut values = Vec::with_capacity(self.grid.len() * self.arch.rank);
        for s in &self.grid {
            let mut tape = Vec::new();
            self.layout.trunk.forward(params, &[*s], &mut tape);
            values.extend_from_slice(&tape[tape.len() - 1]);
            tapes.push(tape);
        }
        (tapes, values)
    }

    /// Normalized squared error of one record; adds parameter gradients and
    /// trunk-output gradients when asked.
    fn record(
        &self,
        params: &[f64],
        sample: &Sample,
        trunk: &[f64],
        tape: &mut Vec<Vec<f64>>,
        grads: Option<(&mut [f64], &mut [f64])>,
    ) -> f64 {
        let n = self.arch.state_dim;
        let rank = self.arch.rank;
        let ns = self.grid.len();
        let l = self.layout;
        self.layout.branch.forward(params, &sample.x, tape);
        let coeffs = tape[tape.len() - 1].clone();
        let bias = &params[l.bias..l.trainable];
        let mean = &params[l.out_mean..l.out_std];
        let std = &params[l.out_std..l.target_scale];
        let norm = 1.0 / (ns * n) as f64;
        let mut loss = 0.0;
        let mut g_out = vec![0.0; ns * n];
        for k in 0..ns {
            let s = self.grid[k];
            let basis = &trunk[k * rank..(k + 1) * rank];
            let c = if self.arch.anchor_skip { s } else { 1.0 };
            for d in 0..n {
                let mut y = bias[d];
                for (r, b) in basis.iter().enumerate() {
                    y += coeffs[r * n + d] * b;
                }
                let v = mean[d] + std[d] * y;
                let p = if self.arch.anchor_skip {
                    sample.anchor[d] + s * v
                } else {
                    v
                };
                let e = p - sample.target[k * n + d];
                loss += e * e * self.weight[d] * norm;
                g_out[k * n + d] = 2.0 * e * self.weight[d] * norm * c * std[d];
            }
        }
        if let Some((grads, d_trunk)) = grads {
            let mut d_coeffs = vec![0.0; rank * n];
            for k in 0..ns {
                let basis = &trunk[k * rank..(k + 1) * rank];
                let g = &g_out[k * n..(k + 1) * n];
                for d in 0..n {
                    grads[l.bias + d] += g[d];
                }
                for r in 0..rank {
                    let mut acc = 0.0;
                    for d in 0..n {
                        d_coeffs[r * n + d] += g[d] * basis[r];
                        acc += g[d] * coeffs[r * n + d];
                    }
                    d_trunk[k * rank + r] += acc;
                }
            }
            self.layout.branch.backward(params, tape, &d_coeffs, grads, false);
        }
        loss
    }

    /// Sum of record losses over `batch` and its gradient in `grads`
    /// (length = trainable parameters), overwritten.
    fn batch_gradient(&self, params: &[f64], batch: &[&Sample], grads: &mut [f64]) -> f64 {
        let (tapes, trunk) = self.trunk(params);
        let width = self.layout.trainable;
        let trunk_len = trunk.len();
        let parts: Vec<(f64, Vec<f64>, Vec<f64>)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; width];
                let mut dt = vec![0.0; trunk_len];
                let mut tape = Vec::new();
                let mut loss = 0.0;
                for s in chunk {
                    loss += self.record(params, s, &trunk, &mut tape, Some((&mut g, &mut dt)));
                }
                (loss, g, dt)
            })
            .collect();
        grads.fill(0.0);
        let mut d_trunk = vec![0.0; trunk_len];
        let mut loss = 0.0;
        for (l, g, dt) in parts {
            loss += l;
            grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            d_trunk.iter_mut().zip(&dt).for_each(|(a, b)| *a += b);
        }
        let rank = self.arch.rank;
        for (k, tape) in tapes.iter().enumerate() {
            self.layout
                .trunk
                .backward(params, tape, &d_trunk[k * rank..(k + 1) * rank], grads, false);
        }
        loss
    }

    fn mean_loss(&self, params: &[f64], samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return f64::NAN;
        }
        let (_, trunk) = self.trunk(params);
        let parts: Vec<f64> = samples
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut tape = Vec::new();
                chunk
                    .iter()
                    .map(|s| self.record(params, s, &trunk, &mut tape, None))
                    .sum()
            })
            .collect();
        parts.iter().sum::<f64>() / samples.len() as f64
    }
}

fn check_shapes(arch: &Architecture, records: &[&PairRecord]) -> Result<()> {
    for r in records {
        let ok = r.stage == arch.stage
            && r.anchor.len() == arch.state_dim
            && r.windows.len() == arch.windows
            && r.windows.iter().all(|w| w.len() == arch.ns_in)
            && r.target.len() == arch.ns_out * arch.state_dim;
        if !ok {
            return Err(Error::invalid(format!(
                "record (trajectory {}, t = {}) does not match the stage {} model shapes",
                r.trajectory, r.time, arch.stage
            )));
        }
    }
    Ok(())
}

fn spread(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut count, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        count += 1;
        sum += v;
    }
    if count == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    let std = var.sqrt();
    if std > 1e-8 * mean.abs().max(1.0) {
        (mean, std)
    } else {
        (mean, 1.0)
    }
}

fn fit_normalization(model: &OperatorModel, records: &[&PairRecord], manifest: &DatasetManifest) -> Normalization {
    let arch = &model.arch;
    let n = arch.state_dim;
    let raw: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let views: Vec<&[f64]> = r.windows.iter().map(Vec::as_slice).collect();
            model.raw_features(&r.anchor, &views, r.phi, r.time + manifest.stage_start(r.stage))
        })
        .collect();
    let (in_mean, in_std) = (0..arch.branch_inputs())
        .map(|i| spread(raw.iter().map(move |x| x[i])))
        .unzip();
    let grid = arch.output_grid();
    let (mut out_mean, mut out_std, mut target_scale) = (Vec::new(), Vec::new(), Vec::new());
    for d in 0..n {
        let targets = records
            .iter()
            .flat_map(move |r| (0..arch.ns_out).map(move |k| r.target[k * n + d]));
        let (_, scale) = spread(targets.clone());
        target_scale.push(scale);
        let (mu, sd) = if arch.anchor_skip {
            let grid = &grid;
            spread(
                records
                    .iter()
                    .flat_map(move |r| (1..arch.ns_out).map(move |k| (r.target[k * n + d] - r.anchor[d]) / grid[k])),
            )
        } else {
            spread(targets)
        };
        out_mean.push(mu);
        out_std.push(sd);
    }
    Normalization {
        in_mean,
        in_std,
        out_mean,
        out_std,
        target_scale,
    }
}

fn prepare(model: &OperatorModel, records: &[&PairRecord], manifest: &DatasetManifest) -> Vec<Sample> {
    records
        .iter()
        .map(|r| {
            let views: Vec<&[f64]> = r.windows.iter().map(Vec::as_slice).collect();
            let mut x = model.raw_features(&r.anchor, &views, r.phi, r.time + manifest.stage_start(r.stage));
            model.normalize(&mut x);
            Sample {
                x,
                anchor: r.anchor.clone(),
                target: r.target.clone(),
            }
        })
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
        }
    }
}

fn train_stage(
    arch: Architecture,
    train: &[&PairRecord],
    validation: &[&PairRecord],
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<StageTraining> {
    let stage = arch.stage;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::invalid(format!(
            "stage {stage} needs training and validation records ({} / {})",
            train.len(),
            validation.len()
        )));
    }
    check_shapes(&arch, train)?;
    check_shapes(&arch, validation)?;
    let mut model = OperatorModel::new(arch)?;
    let norm = fit_normalization(&model, train, manifest);
    model.set_normalization(&norm)?;
    let train_set = prepare(&model, train, manifest);
    let val_set = prepare(&model, validation, manifest);

    let ctx = Ctx::new(&model);
    let width = ctx.layout.trainable;
    let mut params = model.params.clone();
    let mut grads = vec![0.0; width];
    let mut adam = Adam {
        m: vec![0.0; width],
        v: vec![0.0; width],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, 1000 + stage as u64));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let loss = ctx.batch_gradient(&params, &batch, &mut grads);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss or gradient in stage {stage}, epoch {epoch} (lr {lr:e})"
                )));
            }
            total += loss;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params[..width], &grads, lr, cfg);
        }
        let validation = ctx.mean_loss(&params, &val_set);
        if !validation.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss in stage {stage}, epoch {epoch}"
            )));
        }
        let row = EpochLoss {
            epoch,
            train: total / train_set.len() as f64,
            validation,
        };
        if epoch % 10 == 0 || epoch + 1 == cfg.epochs {
            log::info!(
                "stage {stage} epoch {epoch}: train {:.3e}, validation {:.3e}",
                row.train,
                row.validation
            );
        }
        curve.push(row);
    }
    model.set_parameters(params)?;
    let owned: Vec<PairRecord> = validation.iter().map(|r| (*r).clone()).collect();
    let epsilon = estimate_epsilon(&model, &owned, manifest)?;
    Ok(StageTraining { model, curve, epsilon })
}

fn summarize(pairs: &[(Vec<f64>, &[f64])], n: usize, scale: &[f64]) -> EpsilonEstimate {
    let mut eps: f64 = 0.0;
    let (mut mse, mut nmse) = (0.0, 0.0);
    for (pred, target) in pairs {
        let ns = target.len() / n;
        let (mut a, mut b) = (0.0, 0.0);
        for (p_row, t_row) in pred.chunks(n).zip(target.chunks(n)) {
            let mut sq = 0.0;
            for d in 0..n {
                let e = p_row[d] - t_row[d];
                sq += e * e;
                b += e * e / (scale[d] * scale[d]);
            }
            a += sq;
            eps = eps.max(sq.sqrt());
        }
        mse += a / (ns * n) as f64;
        nmse += b / (ns * n) as f64;
    }
    let count = pairs.len().max(1) as f64;
    EpsilonEstimate {
        eps_hat: eps,
        mean_l2: mse / count,
        normalized_l2: nmse / count,
        records: pairs.len(),
    }
}

/// `ε̂` of a stage model over the records of its stage in `records`.
pub fn estimate_epsilon(
    model: &OperatorModel,
    records: &[PairRecord],
    manifest: &DatasetManifest,
) -> Result<EpsilonEstimate> {
    let mine: Vec<&PairRecord> = records.iter().filter(|r| r.stage == model.stage()).collect();
    if mine.is_empty() {
        return Err(Error::invalid(format!(
            "no stage {} records to estimate on",
            model.stage()
        )));
    }
    check_shapes(&model.arch, &mine)?;
    let preds = mine
        .par_iter()
        .map(|r| model.predict_record(r, manifest))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(Vec<f64>, &[f64])> = preds
        .into_iter()
        .zip(mine.iter().map(|r| r.target.as_slice()))
        .collect();
    Ok(summarize(&pairs, manifest.n, model.target_scale()))
}

/// `ε̂` of any evaluator over `records`, outputs resampled to the record grid.
/// `scale` defaults to the per-dimension spread of the targets.
pub fn estimate_epsilon_with(
    evaluator: &dyn PredictorEvaluator,
    system: &SystemModel,
    laws: &ControlLawSet,
    manifest: &DatasetManifest,
    records: &[PairRecord],
    scale: Option<&[f64]>,
) -> Result<EpsilonEstimate> {
    if records.is_empty() {
        return Err(Error::invalid("no records to estimate on"));
    }
    let n = manifest.n;
    let preds = records
        .par_iter()
        .map(|r| {
            let problem = r.problem(system, laws, manifest)?;
            Ok(evaluator.evaluate(&problem)?.resampled(manifest.ns_out))
        })
        .collect::<Result<Vec<_>>>()?;
    let fitted: Vec<f64>;
    let scale = match scale {
        Some(s) => s,
        None => {
            fitted = (0..n)
                .map(|d| {
                    spread(
                        records
                            .iter()
                            .flat_map(move |r| r.target.iter().skip(d).step_by(n).copied()),
                    )
                    .1
                })
                .collect();
            &fitted
        }
    };
    let pairs: Vec<(Vec<f64>, &[f64])> = preds
        .into_iter()
        .zip(records.iter().map(|r| r.target.as_slice()))
        .collect();
    Ok(summarize(&pairs, n, scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub draws: usize,
    /// Largest `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)` over draws.
    pub worst_relative: f64,
}

/// Compares analytic gradients with central differences (`h = 1e-5`) on
/// random width-8, depth-2 models, random normalization and random records.
pub fn gradient_check(draws: usize, seed: u64) -> Result<GradientCheck> {
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, draw as u64));
        let n = 2;
        let arch = Architecture {
            stage: 0,
            state_dim: n,
            windows: 2,
            ns_in: 5,
            ns_out: 6,
            branch_hidden: vec![8, 8],
            trunk_hidden: vec![8, 8],
            rank: 3,
            activation: Activation::Tanh,
            anchor_skip: draw % 2 == 0,
            time_period: Some(1.7),
            seed: rng.gen(),
        };
        let mut model = OperatorModel::new(arch)?;
        let bin = model.arch.branch_inputs();
        let mut uniform = |lo: f64, hi: f64, k: usize| (0..k).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>();
        let norm = Normalization {
            in_mean: uniform(-0.5, 0.5, bin),
            in_std: uniform(0.5, 2.0, bin),
            out_mean: uniform(-0.5, 0.5, n),
            out_std: uniform(0.5, 2.0, n),
            target_scale: uniform(0.5, 2.0, n),
        };
        model.set_normalization(&norm)?;
        let mut p = model.params.clone();
        let bias = model.layout.bias;
        p[bias..bias + n].copy_from_slice(&uniform(-0.5, 0.5, n));
        model.set_parameters(p)?;
        let samples: Vec<Sample> = (0..2)
            .map(|_| Sample {
                x: uniform(-1.5, 1.5, bin),
                anchor: uniform(-1.0, 1.0, n),
                target: uniform(-1.0, 1.0, 6 * n),
            })
            .collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let ctx = Ctx::new(&model);
        let width = ctx.layout.trainable;
        let mut analytic = vec![0.0; width];
        let mut scratch = vec![0.0; width];
        ctx.batch_gradient(&model.params, &batch, &mut analytic);
        let mut params = model.params.clone();
        let h = 1e-5;
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for i in 0..width {
            let orig = params[i];
            params[i] = orig + h;
            let up = ctx.batch_gradient(&params, &batch, &mut scratch);
            params[i] = orig - h;
            let down = ctx.batch_gradient(&params, &batch, &mut scratch);
            params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (fd - analytic[i]).powi(2);
            na += analytic[i].powi(2);
            nf += fd * fd;
        }
        let rel = diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-300);
        worst = worst.max(rel);
    }
    Ok(GradientCheck {
        draws,
        worst_relative: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InitialCondition;

    #[test]
    fn gradients_match_differences() {
        let g = gradient_check(10, 5).unwrap();
        assert!(g.worst_relative < 1e-4, "{}", g.worst_relative);
    }

    fn zero_dataset(records: usize) -> PredictorDataset {
        let manifest = DatasetManifest {
            format_version: crate::dataset::DATASET_VERSION,
            system: "zero".into(),
            n: 2,
            m: 1,
            delays: vec![0.5],
            dt: 0.01,
            horizon: 1.0,
            noise: 0.0,
            trajectories: 1,
            stride: 1,
            ns_in: 5,
            ns_out: 4,
            stage_counts: vec![records],
            seed: 0,
            initial: InitialCondition::Origin,
            law_period: None,
            dropped: 0,
        };
        let records = (0..records)
            .map(|i| PairRecord {
                stage: 0,
                trajectory: 0,
                time: i as f64 * 0.01,
                phi: 0.5,
                anchor: vec![0.0; 2],
                windows: vec![vec![(i as f64 * 0.1).sin(); 5]],
                target: vec![0.0; 8],
            })
            .collect();
        PredictorDataset { manifest, records }
    }

    #[test]
    fn zero_targets_are_learned() {
        let ds = zero_dataset(400);
        let template = ModelTemplate {
            branch_hidden: vec![16],
            trunk_hidden: vec![16],
            rank: 4,
            ..ModelTemplate::default()
        };
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 3e-3,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let out = train(&ds, &template, &cfg).unwrap();
        let st = &out.stages[0];
        assert_eq!(st.curve.len(), 50);
        assert!(st.epsilon.mean_l2 < 1e-6, "{:?}", st.epsilon);
        let again = train(&ds, &template, &cfg).unwrap();
        assert_eq!(again.stages[0].model.parameters(), st.model.parameters());
    }
}
