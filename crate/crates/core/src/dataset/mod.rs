//! Predictor training pairs collected from closed-loop rollouts.

pub(crate) mod format;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{simulate_observed, ClosedLoop, SimulationConfig};
use crate::error::{Error, Result};
use crate::predictor::{solve_ode, ExactPredictor, PredictorProblem, SolverConfig};
use crate::rng::derive;
use crate::system::{BoxSet, ControlLawSet, DelayConfig, SampledWindow, SystemModel};

pub use format::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC};

pub const DATASET_VERSION: u32 = 1;

/// One input/output pair of a stage operator.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub stage: usize,
    pub trajectory: u64,
    /// Closed-loop time `t` the pair was taken at.
    pub time: f64,
    pub phi: f64,
    pub anchor: Vec<f64>,
    /// Windows of inputs `stage..m`, `ns_in` samples each.
    pub windows: Vec<Vec<f64>>,
    /// Row-major `ns_out × n`.
    pub target: Vec<f64>,
}

impl PairRecord {
    /// `(trajectory, time, stage)`, unique within a dataset.
    pub fn key(&self) -> (u64, u64, usize) {
        (self.trajectory, self.time.to_bits(), self.stage)
    }

    /// The operator evaluation this record stores the answer to.
    pub fn problem<'a>(
        &self,
        system: &'a SystemModel,
        laws: &'a ControlLawSet,
        manifest: &DatasetManifest,
    ) -> Result<PredictorProblem<'a>> {
        let windows = self
            .windows
            .iter()
            .map(|w| SampledWindow::new(w.clone()))
            .collect::<Result<Vec<_>>>()?;
        let problem = PredictorProblem {
            system,
            laws,
            stage: self.stage,
            anchor: self.anchor.clone(),
            windows,
            phi: self.phi,
            t0: self.time + manifest.stage_start(self.stage),
        };
        problem.validate()?;
        Ok(problem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    Origin,
    Fixed {
        state: Vec<f64>,
    },
    /// Uniform over the box.
    Box(BoxSet),
}

impl InitialCondition {
    pub fn sample<R: rand::Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let x = match self {
            InitialCondition::Origin => vec![0.0; n],
            InitialCondition::Fixed { state } => state.clone(),
            InitialCondition::Box(b) => b.sample(rng),
        };
        crate::system::check_len("initial state", n, x.len())?;
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub system: String,
    pub n: usize,
    pub m: usize,
    pub delays: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub noise: f64,
    pub trajectories: usize,
    pub stride: usize,
    pub ns_in: usize,
    pub ns_out: usize,
    /// Records per stage.
    pub stage_counts: Vec<usize>,
    pub seed: u64,
    pub initial: InitialCondition,
    /// Period of the control laws, when they have one.
    pub law_period: Option<f64>,
    /// Sampled steps whose live prediction failed.
    pub dropped: usize,
}

impl DatasetManifest {
    pub fn stage_start(&self, stage: usize) -> f64 {
        if stage == 0 {
            0.0
        } else {
            self.delays[stage - 1]
        }
    }

    pub fn record_count(&self) -> usize {
        self.stage_counts.iter().sum()
    }

    /// Doubles per stored record.
    pub fn record_width(&self) -> usize {
        4 + self.n + self.m * self.ns_in + self.ns_out * self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorDataset {
    pub manifest: DatasetManifest,
    pub records: Vec<PairRecord>,
}

impl PredictorDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stage(&self, stage: usize) -> Vec<&PairRecord> {
        self.records.iter().filter(|r| r.stage == stage).collect()
    }

    /// Checks every record against the manifest shapes.
    pub fn validate(&self) -> Result<()> {
        let man = &self.manifest;
        let mut counts = vec![0usize; man.m];
        for r in &self.records {
            if r.stage >= man.m {
                return Err(Error::invalid(format!("record stage {} out of range", r.stage)));
            }
            counts[r.stage] += 1;
            let shapes_ok = r.anchor.len() == man.n
                && r.windows.len() == man.m - r.stage
                && r.windows.iter().all(|w| w.len() == man.ns_in)
                && r.target.len() == man.ns_out * man.n;
            if !shapes_ok {
                return Err(Error::invalid(format!(
                    "record (trajectory {}, t = {}, stage {}) does not match the manifest shapes",
                    r.trajectory, r.time, r.stage
                )));
            }
        }
        if counts != man.stage_counts {
            return Err(Error::CountMismatch {
                expected: man.record_count(),
                found: self.records.len(),
            });
        }
        Ok(())
    }

    fn with_records(&self, records: Vec<PairRecord>) -> Self {
        let mut manifest = self.manifest.clone();
        manifest.stage_counts = vec![0; manifest.m];
        for r in &records {
            manifest.stage_counts[r.stage] += 1;
        }
        Self { manifest, records }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub trajectories: usize,
    pub dt: f64,
    pub horizon: f64,
    pub noise: f64,
    pub stride: usize,
    pub seed: u64,
    pub ns_in: usize,
    pub ns_out: usize,
    /// Grid the stored targets are solved on; `ns_out − 1` must divide `target_points − 1`.
    pub target_points: usize,
    pub initial: InitialCondition,
    /// Live predictor settings during the rollouts.
    pub solver: SolverConfig,
    pub max_drop_rate: f64,
    pub parallel: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            trajectories: 100,
            dt: 1e-3,
            horizon: 10.0,
            noise: 0.2,
            stride: 10,
            seed: 0,
            ns_in: 41,
            ns_out: 41,
            target_points: 801,
            initial: InitialCondition::Origin,
            solver: SolverConfig::default(),
            max_drop_rate: 0.01,
            parallel: true,
        }
    }
}

impl RolloutConfig {
    fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.stride == 0 {
            return Err(Error::invalid("rollouts need trajectories >= 1 and stride >= 1"));
        }
        if self.ns_in < 2 || self.ns_out < 2 {
            return Err(Error::invalid("record grids need at least 2 points"));
        }
        if self.target_points < self.ns_out || !(self.target_points - 1).is_multiple_of(self.ns_out - 1) {
            return Err(Error::invalid(format!(
                "target grid of {} points does not contain the {}-point output grid",
                self.target_points, self.ns_out
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid("noise amplitude must be >= 0"));
        }
        self.solver.validate()
    }
}

struct RawRecord {
    stage: usize,
    time: f64,
    anchor: Vec<f64>,
    windows: Vec<Vec<f64>>,
}

/// Runs `cfg.trajectories` closed loops with the fixed-point predictor and a
/// noisy state measurement, and every `cfg.stride` steps stores one pair per
/// stage. Targets are re-solved from the stored windows.
pub fn generate_dataset(
    system: &SystemModel,
    laws: &ControlLawSet,
    delays: &DelayConfig,
    cfg: &RolloutConfig,
) -> Result<PredictorDataset> {
    cfg.validate()?;
    let lp = ClosedLoop::new(system.clone(), laws.clone(), delays.clone(), cfg.dt)?;
    cfg.initial
        .sample(system.state_dim(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let run = |j: usize| rollout(&lp, cfg, j as u64);
    let per_traj: Vec<Result<(Vec<PairRecord>, usize, usize)>> = if cfg.parallel {
        (0..cfg.trajectories).into_par_iter().map(run).collect()
    } else {
        (0..cfg.trajectories).map(run).collect()
    };

    let m = system.input_dim();
    let mut records = Vec::new();
    let mut dropped = 0;
    let mut sampled = 0;
    for r in per_traj {
        let (recs, d, s) = r?;
        records.extend(recs);
        dropped += d;
        sampled += s;
    }
    if sampled > 0 && dropped as f64 > cfg.max_drop_rate * sampled as f64 {
        return Err(Error::Generation(format!(
            "{dropped} of {sampled} sampled steps failed to predict (limit {:.1}%)",
            100.0 * cfg.max_drop_rate
        )));
    }
    let mut stage_counts = vec![0; m];
    for r in &records {
        stage_counts[r.stage] += 1;
    }
    let manifest = DatasetManifest {
        format_version: DATASET_VERSION,
        system: system.name().to_string(),
        n: system.state_dim(),
        m,
        delays: delays.as_slice().to_vec(),
        dt: cfg.dt,
        horizon: cfg.horizon,
        noise: cfg.noise,
        trajectories: cfg.trajectories,
        stride: cfg.stride,
        ns_in: cfg.ns_in,
        ns_out: cfg.ns_out,
        stage_counts,
        seed: cfg.seed,
        initial: cfg.initial.clone(),
        law_period: laws.period(),
        dropped,
    };
    Ok(PredictorDataset { manifest, records })
}

/// Records of one trajectory plus `(dropped, sampled)` step counts.
fn rollout(lp: &ClosedLoop, cfg: &RolloutConfig, traj: u64) -> Result<(Vec<PairRecord>, usize, usize)> {
    let seed = derive(cfg.seed, traj);
    let x0 = cfg
        .initial
        .sample(lp.state_dim(), &mut ChaCha8Rng::seed_from_u64(derive(seed, 1)))?;
    let state = lp.initial_state(&x0, |_, _| 0.0)?;
    let sim = SimulationConfig {
        horizon: cfg.horizon,
        diag_stride: usize::MAX,
        noise: cfg.noise,
        seed: derive(seed, 2),
        record: false,
    };
    let m = lp.input_dim();
    let mut raw = Vec::new();
    let mut window_err = None;
    let mut observed = 0;
    let evaluator = ExactPredictor::fixed_point(cfg.solver);
    let outcome = simulate_observed(lp, state, &evaluator, &sim, |view| {
        if view.step % cfg.stride != 0 || window_err.is_some() {
            return;
        }
        observed += 1;
        for stage in 0..m {
            let windows = (stage..m)
                .map(|j| lp.window(view.state, stage, j).and_then(|w| w.resample(cfg.ns_in)))
                .collect::<Result<Vec<_>>>();
            let windows = match windows {
                Ok(w) => w.into_iter().map(SampledWindow::into_values).collect(),
                Err(e) => {
                    window_err = Some(e);
                    return;
                }
            };
            let anchor = if stage == 0 {
                view.anchor.to_vec()
            } else {
                view.predictions[stage - 1].terminal().to_vec()
            };
            raw.push(RawRecord {
                stage,
                time: view.state.t,
                anchor,
                windows,
            });
        }
    })?;
    if let Some(e) = window_err {
        return Err(e);
    }
    let sampled = outcome.steps.div_ceil(cfg.stride);
    let dropped = sampled - observed;
    if dropped > 0 {
        log::warn!("trajectory {traj}: dropped {dropped} of {sampled} sampled steps");
    }
    let records = raw
        .into_iter()
        .map(|r| {
            let mut rec = PairRecord {
                stage: r.stage,
                trajectory: traj,
                time: r.time,
                phi: lp.delays.stage_horizon(r.stage),
                anchor: r.anchor,
                windows: r.windows,
                target: Vec::new(),
            };
            rec.target = solve_target(&lp.system, &lp.laws, lp.delays.as_slice(), &rec, cfg)?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, dropped, sampled))
}

fn solve_target(
    system: &SystemModel,
    laws: &ControlLawSet,
    delays: &[f64],
    rec: &PairRecord,
    cfg: &RolloutConfig,
) -> Result<Vec<f64>> {
    let windows = rec
        .windows
        .iter()
        .map(|w| SampledWindow::new(w.clone()))
        .collect::<Result<Vec<_>>>()?;
    let problem = PredictorProblem {
        system,
        laws,
        stage: rec.stage,
        anchor: rec.anchor.clone(),
        windows,
        phi: rec.phi,
        t0: rec.time + if rec.stage == 0 { 0.0 } else { delays[rec.stage - 1] },
    };
    let sol = solve_ode(&problem, &SolverConfig::with_ns(cfg.target_points))?;
    if !sol.converged {
        return Err(Error::Generation("target solve did not converge".into()));
    }
    Ok(sol.resampled(cfg.ns_out))
}

/// Random split stratified by stage: a `fraction` share of every stage goes
/// to validation. Both sides keep the original record order.
pub fn split_dataset(
    dataset: &PredictorDataset,
    fraction: f64,
    seed: u64,
) -> Result<(PredictorDataset, PredictorDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut to_val = vec![false; dataset.records.len()];
    for stage in 0..dataset.manifest.m {
        let mut idx: Vec<usize> = (0..dataset.records.len())
            .filter(|&i| dataset.records[i].stage == stage)
            .collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, stage as u64)));
        let n_val = (idx.len() as f64 * fraction).round() as usize;
        for &i in &idx[..n_val] {
            to_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (r, v) in dataset.records.iter().zip(&to_val) {
        if *v {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!(
            "split of {} records with fraction {fraction} leaves one side empty",
            dataset.records.len()
        )));
    }
    Ok((dataset.with_records(train), dataset.with_records(val)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub max_error: f64,
}

/// Re-solves a random `fraction` of the records (at least one) from their
/// stored inputs and reports the largest sup-norm deviation from the stored
/// targets.
pub fn audit_dataset(
    dataset: &PredictorDataset,
    system: &SystemModel,
    laws: &ControlLawSet,
    target_points: usize,
    fraction: f64,
    seed: u64,
) -> Result<AuditReport> {
    let man = &dataset.manifest;
    let mut idx: Vec<usize> = (0..dataset.records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = ((idx.len() as f64 * fraction).ceil() as usize).clamp(1.min(idx.len()), idx.len());
    let errors = idx[..take]
        .par_iter()
        .map(|&i| {
            let rec = &dataset.records[i];
            let problem = rec.problem(system, laws, man)?;
            let sol = solve_ode(&problem, &SolverConfig::with_ns(target_points))?;
            Ok(crate::predictor::sup_distance(
                &sol.resampled(man.ns_out),
                &rec.target,
                man.n,
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AuditReport {
        checked: take,
        max_error: errors.into_iter().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::builtin;

    fn small_cfg() -> RolloutConfig {
        RolloutConfig {
            trajectories: 2,
            dt: 0.01,
            horizon: 0.5,
            noise: 0.05,
            stride: 5,
            seed: 7,
            ns_in: 11,
            ns_out: 11,
            target_points: 201,
            initial: InitialCondition::Box(BoxSet::symmetric(3, 0.5).unwrap()),
            ..RolloutConfig::default()
        }
    }

    #[test]
    fn counts_follow_stride() {
        let b = builtin("unicycle").unwrap();
        let ds = generate_dataset(&b.system, &b.laws, &b.delays, &small_cfg()).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.manifest.stage_counts, vec![20, 20]);
        assert_eq!(ds.manifest.dropped, 0);
        assert_eq!(ds.records[0].windows.len(), 2);
        assert_eq!(ds.records[1].windows.len(), 1);
        assert_eq!(ds.records[1].phi, 0.35);
    }

    #[test]
    fn origin_rollout_has_zero_targets() {
        let b = builtin("unicycle").unwrap();
        let cfg = RolloutConfig {
            noise: 0.0,
            initial: InitialCondition::Origin,
            ..small_cfg()
        };
        let ds = generate_dataset(&b.system, &b.laws, &b.delays, &cfg).unwrap();
        assert!(ds.records.iter().all(|r| r.target.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn parallel_matches_serial() {
        let b = builtin("unicycle").unwrap();
        let par = generate_dataset(&b.system, &b.laws, &b.delays, &small_cfg()).unwrap();
        let cfg = RolloutConfig {
            parallel: false,
            ..small_cfg()
        };
        let ser = generate_dataset(&b.system, &b.laws, &b.delays, &cfg).unwrap();
        assert_eq!(par, ser);
    }

    #[test]
    fn stored_targets_pass_audit() {
        let b = builtin("unicycle").unwrap();
        let ds = generate_dataset(&b.system, &b.laws, &b.delays, &small_cfg()).unwrap();
        let rep = audit_dataset(&ds, &b.system, &b.laws, 201, 1.0, 3).unwrap();
        assert_eq!(rep.checked, 40);
        assert!(rep.max_error < 1e-6, "{}", rep.max_error);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let b = builtin("unicycle").unwrap();
        let ds = generate_dataset(&b.system, &b.laws, &b.delays, &small_cfg()).unwrap();
        let (tr, va) = split_dataset(&ds, 0.25, 1).unwrap();
        assert_eq!(tr.manifest.stage_counts, vec![15, 15]);
        assert_eq!(va.manifest.stage_counts, vec![5, 5]);
        let keys: std::collections::HashSet<_> = tr.records.iter().map(PairRecord::key).collect();
        assert!(va.records.iter().all(|r| !keys.contains(&r.key())));
        let (tr2, _) = split_dataset(&ds, 0.25, 1).unwrap();
        assert_eq!(tr, tr2);
        assert!(split_dataset(&ds, 1.0, 1).is_err());
        assert!(split_dataset(&ds, 0.001, 1).is_err());
    }
}
