use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backstepping_forward, compute_gamma, pde_predictors, CascadeState, ClosedLoop};
use crate::error::{Error, Result};
use crate::predictor::{PredictorEvaluator, PredictorSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Final time `T`.
    pub horizon: f64,
    /// Target-system diagnostics (and trace rows) every this many steps.
    pub diag_stride: usize,
    /// Uniform measurement noise amplitude on the state fed to the predictor.
    pub noise: f64,
    pub seed: u64,
    /// Keep per-step trace rows.
    pub record: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            diag_stride: 10,
            noise: 0.0,
            seed: 0,
            record: false,
        }
    }
}

impl SimulationConfig {
    pub fn steps(&self, dt: f64) -> usize {
        (self.horizon / dt - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSample {
    pub t: f64,
    pub gamma: f64,
    /// Only on diagnostic steps.
    pub gamma_target: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GammaTrace {
    pub samples: Vec<GammaSample>,
}

impl GammaTrace {
    pub fn initial(&self) -> Option<f64> {
        self.samples.first().map(|s| s.gamma)
    }

    pub fn peak(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.gamma).reduce(f64::max)
    }

    pub fn last(&self) -> Option<f64> {
        self.samples.last().map(|s| s.gamma)
    }

    /// `sup_t |Γ_a(t) − Γ_b(t)|` over common samples.
    pub fn sup_distance(&self, other: &GammaTrace) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a.gamma - b.gamma).abs())
            .fold(0.0, f64::max)
    }
}

/// One row of the per-step trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Terminal predictions `P̂_i(t)`, flattened stage by stage.
    pub predictions: Vec<f64>,
    pub gamma: f64,
    pub gamma_target: f64,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub final_state: CascadeState,
    pub gamma: GammaTrace,
    /// `Σ_k |X(t_k)| dt`.
    pub residual: f64,
    pub steps: usize,
    pub failed_steps: usize,
    /// Largest `|r_i(t)|` seen on diagnostic steps.
    pub max_boundary_residual: f64,
    /// Max and mean over steps of the largest predictor defect per stage.
    pub stage_defect_max: Vec<f64>,
    pub stage_defect_mean: Vec<f64>,
    pub stage_iterations_mean: Vec<f64>,
    pub rows: Vec<TraceRow>,
}

impl SimulationOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.failed_steps as f64 / self.steps as f64
        }
    }

    /// Writes the trace as CSV:
    /// `t, X_1..X_n, U_1..U_m, P_i_d, Gamma, Gamma_target, r_1..r_m`.
    pub fn write_csv<W: Write>(&self, out: W, n: usize, m: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|d| format!("X_{d}")));
        header.extend((1..=m).map(|i| format!("U_{i}")));
        for i in 1..=m {
            header.extend((1..=n).map(|d| format!("P_{i}_{d}")));
        }
        header.push("Gamma".into());
        header.push("Gamma_target".into());
        header.extend((1..=m).map(|i| format!("r_{i}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.t];
            rec.extend(&row.x);
            rec.extend(&row.u);
            rec.extend(&row.predictions);
            rec.push(row.gamma);
            rec.push(row.gamma_target);
            rec.extend(&row.residuals);
            w.write_record(rec.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything a per-step observer gets to see before the state advances.
pub struct StepView<'a> {
    pub step: usize,
    pub state: &'a CascadeState,
    pub anchor: &'a [f64],
    pub predictions: &'a [PredictorSolution],
}

/// Runs the closed loop from `state` for `cfg.horizon` seconds.
///
/// A failed prediction holds the previous inputs for that step and is
/// counted; a non-finite plant state aborts.
pub fn simulate(
    lp: &ClosedLoop,
    state: CascadeState,
    evaluator: &dyn PredictorEvaluator,
    cfg: &SimulationConfig,
) -> Result<SimulationOutcome> {
    simulate_observed(lp, state, evaluator, cfg, |_| {})
}

pub(crate) fn simulate_observed<F>(
    lp: &ClosedLoop,
    mut state: CascadeState,
    evaluator: &dyn PredictorEvaluator,
    cfg: &SimulationConfig,
    mut observe: F,
) -> Result<SimulationOutcome>
where
    F: FnMut(&StepView<'_>),
{
    state.check_shape(lp)?;
    state.check_finite()?;
    if cfg.diag_stride == 0 || !(cfg.horizon.is_finite() && cfg.horizon > 0.0) {
        return Err(Error::invalid("simulation needs horizon > 0 and diag_stride >= 1"));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(Error::invalid("noise amplitude must be >= 0"));
    }
    let (n, m) = (lp.state_dim(), lp.input_dim());
    let dt = lp.dt();
    let steps = cfg.steps(dt);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = GammaTrace::default();
    let mut rows = Vec::new();
    let mut residual = 0.0;
    let mut failed = 0;
    let mut max_r: f64 = 0.0;
    let mut defect_max = vec![0.0f64; m];
    let mut defect_sum = vec![0.0; m];
    let mut iter_sum = vec![0.0; m];
    let mut solved = 0usize;

    for step in 0..steps {
        residual += norm(&state.x) * dt;
        let anchor: Vec<f64> = if cfg.noise > 0.0 {
            state
                .x
                .iter()
                .map(|v| v + rng.gen_range(-cfg.noise..=cfg.noise))
                .collect()
        } else {
            state.x.clone()
        };
        let (boundary, predictions) = match lp.predict(&state, &anchor, evaluator) {
            Ok(p) => {
                observe(&StepView {
                    step,
                    state: &state,
                    anchor: &anchor,
                    predictions: &p,
                });
                solved += 1;
                for (i, s) in p.iter().enumerate() {
                    let d = s.residual.unwrap_or(0.0);
                    defect_max[i] = defect_max[i].max(d);
                    defect_sum[i] += d;
                    iter_sum[i] += s.iterations as f64;
                }
                (lp.boundary_inputs(state.t, &p), Some(p))
            }
            Err(e) => {
                log::debug!("prediction failed at t = {}: {e}", state.t);
                failed += 1;
                (state.held.clone(), None)
            }
        };

        let diag = step % cfg.diag_stride == 0;
        let profile = if diag { Some(pde_predictors(lp, &state)?) } else { None };
        for (f, b) in state.fields.iter_mut().zip(&boundary) {
            *f.last_mut().expect("non-empty field") = *b;
        }
        let gamma = state.gamma();
        let mut sample = GammaSample {
            t: state.t,
            gamma,
            gamma_target: None,
        };
        if let Some(p) = profile {
            let ts = backstepping_forward(lp, &state, &p)?;
            let (_, target) = compute_gamma(&state, &ts);
            sample.gamma_target = Some(target);
            let r = ts.residuals();
            max_r = r.iter().fold(max_r, |acc, v| acc.max(v.abs()));
            if cfg.record {
                rows.push(TraceRow {
                    t: state.t,
                    x: state.x.clone(),
                    u: boundary.clone(),
                    predictions: predictions
                        .as_ref()
                        .map(|p| p.iter().flat_map(|s| s.terminal().to_vec()).collect())
                        .unwrap_or_else(|| vec![f64::NAN; n * m]),
                    gamma,
                    gamma_target: target,
                    residuals: r,
                });
            }
        }
        trace.samples.push(sample);
        lp.advance(&mut state, &boundary)?;
    }
    trace.samples.push(GammaSample {
        t: state.t,
        gamma: state.gamma(),
        gamma_target: None,
    });
    let denom = solved.max(1) as f64;
    Ok(SimulationOutcome {
        final_state: state,
        gamma: trace,
        residual,
        steps,
        failed_steps: failed,
        max_boundary_residual: max_r,
        stage_defect_max: defect_max,
        stage_defect_mean: defect_sum.iter().map(|v| v / denom).collect(),
        stage_iterations_mean: iter_sum.iter().map(|v| v / denom).collect(),
        rows,
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
