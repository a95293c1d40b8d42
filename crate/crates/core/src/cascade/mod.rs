//! The closed loop in transport form: the plant ODE driven by one unit-speed
//! transport field per input channel, `u_i(x, t) = U_i(t + x − D_i)` on
//! `x ∈ [0, D_i]`, with boundary `u_i(D_i, t) = κ_i(P̂_i(t))`.
//!
//! Fields live on a grid with the simulation step as spacing, so transport is
//! an exact index shift. The newest boundary sample is resolved by a
//! zero-order hold: predictors at time `t` see `U_i(t − dt)` in place of the
//! value they are about to produce.

mod inject;
mod sim;
mod transform;

use crate::error::{Error, Result};
use crate::predictor::{chain_with, GridSpec, PredictorEvaluator, PredictorSolution};
use crate::system::{check_len, ControlLawSet, DelayConfig, HistoryWindow, SampledWindow, SystemModel};

pub use inject::{inject_error, ErrorInjector, InjectedPredictor, InjectionMode};
pub(crate) use sim::simulate_observed;
pub use sim::{simulate, GammaSample, GammaTrace, SimulationConfig, SimulationOutcome, StepView, TraceRow};
pub use transform::{
    backstepping_forward, backstepping_inverse, compute_gamma, pde_predictors, PdePredictor, TargetState,
};

/// Plant, laws and delays on an aligned grid of spacing `dt`.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub system: SystemModel,
    pub laws: ControlLawSet,
    pub delays: DelayConfig,
    dt: f64,
    cells: Vec<usize>,
}

// tolerance on D_i / dt being an integer
const ALIGN_EPS: f64 = 1e-9;

impl ClosedLoop {
    pub fn new(system: SystemModel, laws: ControlLawSet, delays: DelayConfig, dt: f64) -> Result<Self> {
        laws.check_system(&system)?;
        check_len("delays", system.input_dim(), delays.len())?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let cells = delays
            .as_slice()
            .iter()
            .map(|d| {
                let ratio = d / dt;
                let cells = ratio.round();
                if (ratio - cells).abs() > ALIGN_EPS * ratio.max(1.0) || cells < 1.0 {
                    Err(Error::invalid(format!(
                        "delay {d} is not a positive multiple of the step {dt}"
                    )))
                } else {
                    Ok(cells as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            system,
            laws,
            delays,
            dt,
            cells,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid cells of field `i`, `D_i / dt`.
    pub fn cells(&self, i: usize) -> usize {
        self.cells[i]
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    /// State at `t = 0` with fields filled from the initial inputs
    /// `initial(i, τ)`, `τ ∈ [−D_i, 0)`.
    pub fn initial_state(&self, x0: &[f64], initial: impl Fn(usize, f64) -> f64) -> Result<CascadeState> {
        check_len("initial state", self.state_dim(), x0.len())?;
        let fields: Vec<Vec<f64>> = (0..self.input_dim())
            .map(|i| {
                let n = self.cells[i];
                let mut f: Vec<f64> = (0..n).map(|k| initial(i, (k as f64 - n as f64) * self.dt)).collect();
                f.push(initial(i, -self.dt));
                f
            })
            .collect();
        let held = fields.iter().map(|f| *f.last().expect("non-empty field")).collect();
        let state = CascadeState {
            t: 0.0,
            x: x0.to_vec(),
            fields,
            held,
        };
        state.check_finite()?;
        Ok(state)
    }

    /// Chained predictors of `state` evaluated on field slices, with `anchor`
    /// in place of the state (a measurement, for instance).
    pub fn predict(
        &self,
        state: &CascadeState,
        anchor: &[f64],
        evaluator: &dyn PredictorEvaluator,
    ) -> Result<Vec<PredictorSolution>> {
        chain_with(
            anchor,
            state.t,
            &self.delays,
            &self.system,
            &self.laws,
            GridSpec::Spacing(self.dt),
            evaluator,
            |stage, j, _, _, ns| {
                let window = self.window(state, stage, j)?;
                if window.len() == ns {
                    Ok(window)
                } else {
                    window.resample(ns)
                }
            },
        )
    }

    /// Field `j` over `[D_{stage-1}, D_stage]` as a normalized window, with
    /// the held sample at the field's own boundary.
    pub fn window(&self, state: &CascadeState, stage: usize, j: usize) -> Result<SampledWindow> {
        let lo = if stage == 0 { 0 } else { self.cells[stage - 1] };
        let hi = self.cells[stage];
        let mut values = state.fields[j][lo..=hi].to_vec();
        if hi == self.cells[j] {
            values[hi - lo] = state.held[j];
        }
        SampledWindow::new(values)
    }

    /// Boundary inputs `U_i(t) = κ_i(t + D_i, P̂_i(t))`.
    pub fn boundary_inputs(&self, t: f64, predictions: &[PredictorSolution]) -> Vec<f64> {
        predictions
            .iter()
            .enumerate()
            .map(|(i, p)| self.laws.eval(i, t + self.delays.delay(i), p.terminal()))
            .collect()
    }

    /// Sets the boundary, advances `X` by one RK4 step with the inputs
    /// leaving the fields at `x = 0`, and shifts every field by one cell.
    pub fn advance(&self, state: &mut CascadeState, boundary: &[f64]) -> Result<()> {
        check_len("boundary inputs", self.input_dim(), boundary.len())?;
        for (f, b) in state.fields.iter_mut().zip(boundary) {
            *f.last_mut().expect("non-empty field") = *b;
        }
        let m = self.input_dim();
        let u0: Vec<f64> = state.fields.iter().map(|f| f[0]).collect();
        let u1: Vec<f64> = state.fields.iter().map(|f| f[1]).collect();
        let um: Vec<f64> = (0..m).map(|i| 0.5 * (u0[i] + u1[i])).collect();
        let next = rk4_step(&self.system, &state.x, &u0, &um, &u1, self.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("plant state at t = {}", state.t + self.dt)));
        }
        state.x = next;
        for (f, b) in state.fields.iter_mut().zip(boundary) {
            f.rotate_left(1);
            *f.last_mut().expect("non-empty field") = *b;
        }
        state.held.copy_from_slice(boundary);
        state.t += self.dt;
        Ok(())
    }

    /// One closed-loop step: predict from the held fields, emit the boundary
    /// inputs and advance. `measured` replaces `X` as predictor anchor.
    pub fn step(
        &self,
        state: &mut CascadeState,
        evaluator: &dyn PredictorEvaluator,
        measured: Option<&[f64]>,
    ) -> Result<StepOutput> {
        let anchor = measured.unwrap_or(&state.x).to_vec();
        let predictions = self.predict(state, &anchor, evaluator)?;
        let boundary = self.boundary_inputs(state.t, &predictions);
        self.advance(state, &boundary)?;
        Ok(StepOutput { predictions, boundary })
    }
}

/// Predictions made and inputs emitted by one step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub predictions: Vec<PredictorSolution>,
    pub boundary: Vec<f64>,
}

/// Advances the closed loop by one step (see [`ClosedLoop::step`]).
pub fn step_closed_loop(
    lp: &ClosedLoop,
    state: &mut CascadeState,
    evaluator: &dyn PredictorEvaluator,
) -> Result<StepOutput> {
    lp.step(state, evaluator, None)
}

fn rk4_step(system: &SystemModel, x: &[f64], u0: &[f64], um: &[f64], u1: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    system.eval_into(x, u0, &mut k1);
    for d in 0..n {
        tmp[d] = x[d] + 0.5 * h * k1[d];
    }
    system.eval_into(&tmp, um, &mut k2);
    for d in 0..n {
        tmp[d] = x[d] + 0.5 * h * k2[d];
    }
    system.eval_into(&tmp, um, &mut k3);
    for d in 0..n {
        tmp[d] = x[d] + h * k3[d];
    }
    system.eval_into(&tmp, u1, &mut k4);
    (0..n)
        .map(|d| x[d] + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]))
        .collect()
}

/// Plant state plus transport fields.
///
/// `fields[i][k] = u_i(k·dt, t)` for `k = 0..=N_i`; the last entry is the
/// boundary `u_i(D_i, t)`, which equals `held[i] = U_i(t − dt)` until the
/// step sets the new input.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub t: f64,
    pub x: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub held: Vec<f64>,
}

impl CascadeState {
    pub fn check_finite(&self) -> Result<()> {
        let ok = self.t.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.fields.iter().flatten().all(|v| v.is_finite())
            && self.held.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("cascade state at t = {}", self.t)))
        }
    }

    pub(crate) fn check_shape(&self, lp: &ClosedLoop) -> Result<()> {
        check_len("cascade state", lp.state_dim(), self.x.len())?;
        check_len("transport fields", lp.input_dim(), self.fields.len())?;
        check_len("held inputs", lp.input_dim(), self.held.len())?;
        for (i, f) in self.fields.iter().enumerate() {
            check_len("transport field samples", lp.cells(i) + 1, f.len())?;
        }
        Ok(())
    }

    /// The input histories the fields encode, as a history window at `t`
    /// whose newest sample is the boundary. Samples older than a field's
    /// extent repeat its oldest value.
    pub fn history(&self, dt: f64) -> Result<HistoryWindow> {
        let longest = self.fields.iter().map(|f| f.len() - 1).max().unwrap_or(1);
        let span = longest as f64 * dt;
        let t = self.t;
        HistoryWindow::new(self.fields.len(), dt, span, t, |i, tau| {
            let f = &self.fields[i];
            let back = ((t - tau) / dt).round() as usize;
            let n = f.len() - 1;
            f[n.saturating_sub(back)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{chain_predictors, ExactPredictor, SolverConfig};
    use crate::systems::builtin;

    fn unicycle_loop(dt: f64) -> ClosedLoop {
        let b = builtin("unicycle").unwrap();
        ClosedLoop::new(b.system, b.laws, b.delays, dt).unwrap()
    }

    #[test]
    fn misaligned_step_is_rejected() {
        let b = builtin("unicycle").unwrap();
        assert!(ClosedLoop::new(b.system.clone(), b.laws.clone(), b.delays.clone(), 0.0007).is_err());
        assert!(ClosedLoop::new(b.system, b.laws, b.delays, 0.05).is_ok());
    }

    #[test]
    fn equilibrium_is_preserved() {
        let lp = unicycle_loop(0.01);
        let mut s = lp.initial_state(&[0.0; 3], |_, _| 0.0).unwrap();
        let eval = ExactPredictor::fixed_point(SolverConfig::default());
        for _ in 0..20 {
            step_closed_loop(&lp, &mut s, &eval).unwrap();
        }
        assert!(s.x.iter().all(|v| *v == 0.0));
        assert!(s.fields.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn fields_shift_by_one_cell() {
        let lp = unicycle_loop(0.01);
        let mut s = lp
            .initial_state(&[0.3, -0.2, 0.1], |i, t| (i as f64 + 1.0) * t.sin())
            .unwrap();
        let eval = ExactPredictor::ode(SolverConfig::default());
        let before = s.clone();
        let out = step_closed_loop(&lp, &mut s, &eval).unwrap();
        for i in 0..2 {
            let n = lp.cells(i);
            for k in 0..n - 1 {
                assert_eq!(s.fields[i][k], before.fields[i][k + 1]);
            }
            assert_eq!(s.fields[i][n - 1], out.boundary[i]);
            assert_eq!(s.fields[i][n], out.boundary[i]);
            assert_eq!(s.held[i], out.boundary[i]);
        }
        assert!((s.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn field_chain_matches_history_chain() {
        let lp = unicycle_loop(0.005);
        let mut s = lp
            .initial_state(&[0.5, 0.2, -0.3], |i, t| 0.3 * (t * (i + 2) as f64).cos())
            .unwrap();
        let eval = ExactPredictor::fixed_point(SolverConfig::default());
        for _ in 0..7 {
            step_closed_loop(&lp, &mut s, &eval).unwrap();
        }
        let from_fields = lp.predict(&s, &s.x, &eval).unwrap();
        let hist = s.history(lp.dt()).unwrap();
        let from_history = chain_predictors(
            &s.x,
            &hist,
            &lp.delays,
            &lp.system,
            &lp.laws,
            GridSpec::Spacing(lp.dt()),
            &eval,
        )
        .unwrap();
        for (a, b) in from_fields.iter().zip(&from_history) {
            assert!(a.sup_distance(b) < 1e-12);
        }
    }
}
