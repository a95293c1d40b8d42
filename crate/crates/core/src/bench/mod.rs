//! Benchmarks and experiment drivers: delay-free stability check, seeded
//! closed-loop scenarios, error-injection sweeps and prediction timing.

mod timing;

use std::f64::consts::FRAC_PI_4;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{inject_error, ClosedLoop, ErrorInjector, InjectionMode, SimulationConfig, SimulationOutcome};
use crate::dataset::InitialCondition;
use crate::error::{Error, Result};
use crate::neural::{load_model, NeuralPredictor};
use crate::predictor::{ExactPredictor, PredictorEvaluator, Quadrature, SolverConfig};
use crate::rng::derive;
use crate::system::{BoxSet, ControlLawSet, DelayConfig, SystemModel};
use crate::systems::builtin;

pub use timing::{timing_benchmark, TimingConfig, TimingEntry, TimingReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasReport {
    pub passed: bool,
    pub threshold: f64,
    /// `|X(T)|` per initial condition; infinite when the run blew up.
    pub residuals: Vec<f64>,
    pub diagnostics: Vec<String>,
}

/// Integrates the delay-free loop `Ẋ = f(X, κ(t, X))` with RK4 from every
/// initial condition and passes iff every `|X(T)| < threshold`.
pub fn delay_free_gas_check(
    system: &SystemModel,
    laws: &ControlLawSet,
    initial: &[Vec<f64>],
    horizon: f64,
    dt: f64,
    threshold: f64,
) -> Result<GasReport> {
    if initial.is_empty() {
        return Err(Error::invalid("initial-condition grid is empty"));
    }
    if !(dt > 0.0 && horizon > 0.0 && threshold > 0.0) {
        return Err(Error::invalid("gas check needs dt, horizon and threshold > 0"));
    }
    laws.check_system(system)?;
    let n = system.state_dim();
    let steps = (horizon / dt - 1e-9).ceil() as usize;
    let results: Vec<Result<(f64, Option<String>)>> = initial
        .par_iter()
        .map(|x0| {
            crate::system::check_len("initial state", n, x0.len())?;
            let mut x = x0.clone();
            let rhs = |t: f64, x: &[f64]| system.eval_dynamics(x, &laws.eval_all(t, x));
            for k in 0..steps {
                let t = k as f64 * dt;
                let k1 = rhs(t, &x)?;
                let x2: Vec<f64> = (0..n).map(|d| x[d] + 0.5 * dt * k1[d]).collect();
                let k2 = rhs(t + 0.5 * dt, &x2)?;
                let x3: Vec<f64> = (0..n).map(|d| x[d] + 0.5 * dt * k2[d]).collect();
                let k3 = rhs(t + 0.5 * dt, &x3)?;
                let x4: Vec<f64> = (0..n).map(|d| x[d] + dt * k3[d]).collect();
                let k4 = rhs(t + dt, &x4)?;
                for d in 0..n {
                    x[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Ok((
                        f64::INFINITY,
                        Some(format!("from {x0:?}: non-finite state at t = {}", t + dt)),
                    ));
                }
            }
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let note = (r >= threshold).then(|| format!("from {x0:?}: |X(T)| = {r:.4e} >= {threshold}"));
            Ok((r, note))
        })
        .collect();
    let mut residuals = Vec::with_capacity(initial.len());
    let mut diagnostics = Vec::new();
    for r in results {
        let (v, note) = r?;
        residuals.push(v);
        diagnostics.extend(note);
    }
    Ok(GasReport {
        passed: diagnostics.is_empty(),
        threshold,
        residuals,
        diagnostics,
    })
}

/// `per_axis^dim` points spread uniformly over the box, corners included.
pub fn grid_points(region: &BoxSet, per_axis: usize) -> Vec<Vec<f64>> {
    let dim = region.dim();
    let per_axis = per_axis.max(1);
    let coord = |d: usize, i: usize| {
        if per_axis == 1 {
            0.5 * (region.lo[d] + region.hi[d])
        } else {
            region.lo[d] + (region.hi[d] - region.lo[d]) * i as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for (d, v) in p.iter_mut().enumerate() {
                *v = coord(d, idx % per_axis);
                idx /= per_axis;
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorChoice {
    FixedPoint,
    OdeOracle,
    /// One model file per stage, in stage order.
    Model {
        paths: Vec<String>,
    },
}

/// Builds the evaluator a scenario runs with.
pub fn build_evaluator(choice: &PredictorChoice, quadrature: Quadrature) -> Result<Box<dyn PredictorEvaluator>> {
    let solver = SolverConfig {
        quadrature,
        ..SolverConfig::default()
    };
    Ok(match choice {
        PredictorChoice::FixedPoint => Box::new(ExactPredictor::fixed_point(solver)),
        PredictorChoice::OdeOracle => Box::new(ExactPredictor::ode(solver)),
        PredictorChoice::Model { paths } => {
            let models = paths.iter().map(load_model).collect::<Result<Vec<_>>>()?;
            Box::new(NeuralPredictor::new(models)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: String,
    pub predictor: PredictorChoice,
    pub quadrature: Quadrature,
    /// Overrides the built-in delays.
    pub delays: Option<Vec<f64>>,
    pub dt: f64,
    pub horizon: f64,
    pub noise: f64,
    /// Evaluation box by default; see [`default_initial`].
    pub initial: Option<InitialCondition>,
    pub runs: usize,
    pub seed: u64,
    pub diag_stride: usize,
    pub injection: Option<ErrorInjector>,
    pub max_failure_rate: f64,
    /// Keep per-step trace rows of the first run.
    pub record_first: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            system: "unicycle".into(),
            predictor: PredictorChoice::FixedPoint,
            quadrature: Quadrature::Trapezoid,
            delays: None,
            dt: 1e-3,
            horizon: 10.0,
            noise: 0.0,
            initial: None,
            runs: 25,
            seed: 0,
            diag_stride: 10,
            injection: None,
            max_failure_rate: 0.05,
            record_first: false,
        }
    }
}

/// `[−1, 1]² × [−π/4, π/4]`.
pub fn default_eval_box() -> BoxSet {
    BoxSet {
        lo: vec![-1.0, -1.0, -FRAC_PI_4],
        hi: vec![1.0, 1.0, FRAC_PI_4],
    }
}

/// The evaluation box for three states, `[−1, 1]ⁿ` otherwise.
pub fn default_initial(n: usize) -> InitialCondition {
    if n == 3 {
        InitialCondition::Box(default_eval_box())
    } else {
        InitialCondition::Box(BoxSet {
            lo: vec![-1.0; n],
            hi: vec![1.0; n],
        })
    }
}

impl ScenarioConfig {
    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        let b = builtin(&self.system)?;
        let delays = match &self.delays {
            Some(d) => DelayConfig::new(d.clone())?,
            None => b.delays,
        };
        if !(self.horizon.is_finite() && self.horizon > 0.0) || self.runs == 0 {
            return Err(Error::invalid("scenario needs horizon > 0 and runs >= 1"));
        }
        ClosedLoop::new(b.system, b.laws, delays, self.dt)
    }

    pub fn evaluator(&self) -> Result<Box<dyn PredictorEvaluator>> {
        let base = build_evaluator(&self.predictor, self.quadrature)?;
        Ok(match self.injection {
            Some(inj) if inj.epsilon > 0.0 => Box::new(inject_error(base, inj)),
            _ => base,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub initial_state: Vec<f64>,
    pub residual: f64,
    pub gamma_initial: f64,
    pub gamma_peak: f64,
    pub gamma_final: f64,
    pub failed_steps: usize,
    pub steps: usize,
    pub max_boundary_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub system: String,
    pub predictor: String,
    pub runs: Vec<RunSummary>,
    /// Mean over runs of `Σ_k |X(t_k)| dt`.
    pub residual_mean: f64,
    pub gamma_initial_mean: f64,
    pub gamma_peak_max: f64,
    pub gamma_final_mean: f64,
    pub stage_defect_mean: Vec<f64>,
    pub stage_defect_max: Vec<f64>,
    pub stage_iterations_mean: Vec<f64>,
    pub failure_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub report: ScenarioReport,
    pub outcomes: Vec<SimulationOutcome>,
}

/// Runs `cfg.runs` seeded closed loops. Run `r` draws its initial state and
/// measurement noise from seeds derived from `(cfg.seed, r)`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let lp = cfg.closed_loop()?;
    let evaluator = cfg.evaluator()?;
    let n = lp.state_dim();
    let initial = cfg.initial.clone().unwrap_or_else(|| default_initial(n));
    let starts = (0..cfg.runs)
        .map(|r| {
            let seed = derive(cfg.seed, r as u64);
            let x0 = initial.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))?;
            Ok((seed, x0))
        })
        .collect::<Result<Vec<_>>>()?;
    let outcomes = starts
        .par_iter()
        .enumerate()
        .map(|(r, (seed, x0))| {
            let sim = SimulationConfig {
                horizon: cfg.horizon,
                diag_stride: cfg.diag_stride,
                noise: cfg.noise,
                seed: derive(*seed, 1),
                record: cfg.record_first && r == 0,
            };
            let state = lp.initial_state(x0, |_, _| 0.0)?;
            crate::cascade::simulate(&lp, state, evaluator.as_ref(), &sim)
        })
        .collect::<Result<Vec<_>>>()?;

    let runs: Vec<RunSummary> = starts
        .iter()
        .zip(&outcomes)
        .map(|((seed, x0), o)| RunSummary {
            seed: *seed,
            initial_state: x0.clone(),
            residual: o.residual,
            gamma_initial: o.gamma.initial().unwrap_or(0.0),
            gamma_peak: o.gamma.peak().unwrap_or(0.0),
            gamma_final: o.gamma.last().unwrap_or(0.0),
            failed_steps: o.failed_steps,
            steps: o.steps,
            max_boundary_residual: o.max_boundary_residual,
        })
        .collect();
    let count = runs.len() as f64;
    let m = lp.input_dim();
    let mean_of = |f: &dyn Fn(&SimulationOutcome) -> &Vec<f64>| -> Vec<f64> {
        (0..m)
            .map(|i| outcomes.iter().map(|o| f(o)[i]).sum::<f64>() / count)
            .collect()
    };
    let steps: usize = runs.iter().map(|r| r.steps).sum();
    let failed: usize = runs.iter().map(|r| r.failed_steps).sum();
    let report = ScenarioReport {
        system: cfg.system.clone(),
        predictor: evaluator.name().to_string(),
        residual_mean: runs.iter().map(|r| r.residual).sum::<f64>() / count,
        gamma_initial_mean: runs.iter().map(|r| r.gamma_initial).sum::<f64>() / count,
        gamma_peak_max: runs.iter().map(|r| r.gamma_peak).fold(0.0, f64::max),
        gamma_final_mean: runs.iter().map(|r| r.gamma_final).sum::<f64>() / count,
        stage_defect_mean: mean_of(&|o| &o.stage_defect_mean),
        stage_defect_max: (0..m)
            .map(|i| outcomes.iter().map(|o| o.stage_defect_max[i]).fold(0.0, f64::max))
            .collect(),
        stage_iterations_mean: mean_of(&|o| &o.stage_iterations_mean),
        failure_rate: if steps == 0 { 0.0 } else { failed as f64 / steps as f64 },
        runs,
    };
    if report.failure_rate > cfg.max_failure_rate {
        return Err(Error::Scenario(format!(
            "{failed} of {steps} steps had failed predictions ({:.2}% > {:.2}%)",
            100.0 * report.failure_rate,
            100.0 * cfg.max_failure_rate
        )));
    }
    Ok(ScenarioResult { report, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub gamma_final_mean: f64,
    pub residual_mean: f64,
    /// Every run stayed finite.
    pub bounded: bool,
}

/// Repeats `base` with the predictor output perturbed by each `ε`.
/// A run that blows up counts as unbounded instead of failing the sweep.
pub fn error_injection_sweep(base: &ScenarioConfig, epsilons: &[f64], mode: InjectionMode) -> Result<Vec<SweepRow>> {
    epsilons
        .iter()
        .map(|&epsilon| {
            let cfg = ScenarioConfig {
                injection: Some(ErrorInjector::new(epsilon, mode, base.seed)?),
                max_failure_rate: 1.0,
                ..base.clone()
            };
            match run_scenario(&cfg) {
                Ok(res) => Ok(SweepRow {
                    epsilon,
                    gamma_final_mean: res.report.gamma_final_mean,
                    residual_mean: res.report.residual_mean,
                    bounded: res.outcomes.iter().all(|o| o.final_state.check_finite().is_ok()),
                }),
                Err(Error::NonFinite(_)) => Ok(SweepRow {
                    epsilon,
                    gamma_final_mean: f64::INFINITY,
                    residual_mean: f64::INFINITY,
                    bounded: false,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn origin_stays_put_and_unstable_fails() {
        let b = builtin("unicycle").unwrap();
        let rep = delay_free_gas_check(&b.system, &b.laws, &[vec![0.0; 3]], 5.0, 0.01, 0.1).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.residuals, vec![0.0]);

        let sys = SystemModel::from_fn("unstable", 1, 1, |x, u, out| out[0] = x[0] + u[0]).unwrap();
        let zero = ControlLawSet::new(Arc::new(crate::systems::LinearFeedback { gains: vec![0.0] })).unwrap();
        let rep = delay_free_gas_check(&sys, &zero, &[vec![0.5]], 5.0, 0.01, 0.1).unwrap();
        assert!(!rep.passed);
        assert!(rep.residuals[0] > 70.0);
    }

    #[test]
    fn grid_has_corners() {
        let g = grid_points(&BoxSet::symmetric(3, 1.0).unwrap(), 3);
        assert_eq!(g.len(), 27);
        assert_eq!(g[0], vec![-1.0, -1.0, -1.0]);
        assert_eq!(g[13], vec![0.0, 0.0, 0.0]);
        assert_eq!(g[26], vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn origin_scenario_has_zero_residual() {
        let cfg = ScenarioConfig {
            initial: Some(InitialCondition::Origin),
            runs: 2,
            horizon: 0.5,
            dt: 0.01,
            ..ScenarioConfig::default()
        };
        let res = run_scenario(&cfg).unwrap();
        assert_eq!(res.report.residual_mean, 0.0);
        assert_eq!(res.report.failure_rate, 0.0);
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
            system = "unicycle"
            dt = 0.002
            runs = 3
            predictor = { kind = "model", paths = ["a.nopred", "b.nopred"] }
            initial = { kind = "box", lo = [-1.0, -1.0, -0.5], hi = [1.0, 1.0, 0.5] }
            injection = { epsilon = 0.05 }
        "#;
        let cfg: ScenarioConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.dt, 0.002);
        assert_eq!(cfg.horizon, 10.0);
        assert!(matches!(cfg.predictor, PredictorChoice::Model { ref paths } if paths.len() == 2));
        assert_eq!(cfg.injection.unwrap().mode, InjectionMode::Uniform);
        assert!(toml::from_str::<ScenarioConfig>("bogus = 1").is_err());
    }
}
