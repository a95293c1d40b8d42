use super::{solve_ode, GridSpec, PredictorEvaluator, PredictorProblem, PredictorSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::system::{check_len, shift_window, ControlLawSet, DelayConfig, HistoryWindow, SampledWindow, SystemModel};

/// Chains the stage operators: stage `k` is anchored at the terminal value of
/// stage `k − 1` (at `X` for the first stage) and integrates over
/// `φ = D_k − D_{k-1}`. `window(stage, input, φa, φb, ns)` supplies
/// `T_{φa,φb}(t) U_input` on `ns` points.
#[allow(clippy::too_many_arguments)]
pub fn chain_with<W>(
    x: &[f64],
    t: f64,
    delays: &DelayConfig,
    system: &SystemModel,
    laws: &ControlLawSet,
    grid: GridSpec,
    evaluator: &dyn PredictorEvaluator,
    mut window: W,
) -> Result<Vec<PredictorSolution>>
where
    W: FnMut(usize, usize, f64, f64, usize) -> Result<SampledWindow>,
{
    let m = system.input_dim();
    check_len("delays", m, delays.len())?;
    check_len("state", system.state_dim(), x.len())?;
    let mut anchor = x.to_vec();
    let mut stages = Vec::with_capacity(m);
    for stage in 0..m {
        let phi = delays.stage_horizon(stage);
        let ns = grid.points(phi);
        let windows = (stage..m)
            .map(|j| {
                let (a, b) = delays.window_shift(stage, j);
                window(stage, j, a, b, ns)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_stage(stage))?;
        let problem = PredictorProblem {
            system,
            laws,
            stage,
            anchor,
            windows,
            phi,
            t0: t + delays.stage_start(stage),
        };
        let solution = evaluator.evaluate(&problem).map_err(|e| e.at_stage(stage))?;
        if !solution.converged {
            return Err(Error::NotConverged {
                iterations: solution.iterations,
                change: solution.residual.unwrap_or(f64::NAN),
            }
            .at_stage(stage));
        }
        anchor = solution.terminal().to_vec();
        stages.push(solution);
    }
    Ok(stages)
}

/// Predictor chain at the current time of `history`.
pub fn chain_predictors(
    x: &[f64],
    history: &HistoryWindow,
    delays: &DelayConfig,
    system: &SystemModel,
    laws: &ControlLawSet,
    grid: GridSpec,
    evaluator: &dyn PredictorEvaluator,
) -> Result<Vec<PredictorSolution>> {
    check_len("history channels", system.input_dim(), history.inputs())?;
    chain_with(
        x,
        history.time(),
        delays,
        system,
        laws,
        grid,
        evaluator,
        |_, j, a, b, ns| shift_window(history, j, a, b, ns),
    )
}

/// Initial predictor profile of one stage: `P_k(θ)` on `θ ∈ [−(D_k − D_{k-1}), 0]`.
#[derive(Debug, Clone)]
pub struct InitialProfile {
    pub theta: Vec<f64>,
    pub solution: PredictorSolution,
}

/// Forward-integrates the initial predictor profiles from `X(0)` and the
/// initial input signals `initial(j, τ)`, `τ ∈ [−D_j, 0]`.
pub fn bootstrap_initial(
    x0: &[f64],
    initial: &dyn Fn(usize, f64) -> f64,
    delays: &DelayConfig,
    system: &SystemModel,
    laws: &ControlLawSet,
    grid: GridSpec,
    config: &SolverConfig,
) -> Result<Vec<InitialProfile>> {
    let ode = OdeOnly(*config);
    let stages = chain_with(x0, 0.0, delays, system, laws, grid, &ode, |_, j, a, b, ns| {
        SampledWindow::from_fn(ns, |s| initial(j, -a + (a - b) * s))
    })?;
    Ok(stages
        .into_iter()
        .enumerate()
        .map(|(k, solution)| {
            let phi = delays.stage_horizon(k);
            let ns = solution.ns();
            let theta = (0..ns).map(|i| -phi + phi * i as f64 / (ns - 1) as f64).collect();
            InitialProfile { theta, solution }
        })
        .collect())
}

struct OdeOnly(SolverConfig);

impl PredictorEvaluator for OdeOnly {
    fn name(&self) -> &str {
        "ode-oracle"
    }
    fn evaluate(&self, problem: &PredictorProblem<'_>) -> Result<PredictorSolution> {
        solve_ode(problem, &self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::ExactPredictor;
    use crate::systems::builtin;

    #[test]
    fn single_input_reduces_to_one_stage() {
        let b = builtin("linear1").unwrap();
        let hist = HistoryWindow::new(1, 0.001, 0.5, 0.0, |_, _| 0.0).unwrap();
        let eval = ExactPredictor::ode(SolverConfig::default());
        let out = chain_predictors(
            &[1.0],
            &hist,
            &b.delays,
            &b.system,
            &b.laws,
            GridSpec::Spacing(0.001),
            &eval,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].terminal()[0] - 0.5f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn origin_with_zero_history_predicts_origin() {
        let b = builtin("unicycle").unwrap();
        let hist = HistoryWindow::new(2, 0.001, 0.6, 0.0, |_, _| 0.0).unwrap();
        let eval = ExactPredictor::fixed_point(SolverConfig::default());
        let out = chain_predictors(
            &[0.0; 3],
            &hist,
            &b.delays,
            &b.system,
            &b.laws,
            GridSpec::Spacing(0.001),
            &eval,
        )
        .unwrap();
        assert!(out.iter().all(|s| s.trajectory.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn equal_delays_give_equal_predictions() {
        let b = builtin("linear2").unwrap();
        let delays = DelayConfig::new(vec![0.3, 0.3]).unwrap();
        let hist = HistoryWindow::new(2, 0.001, 0.3, 0.0, |j, t| (j as f64 + 1.0) * t.sin()).unwrap();
        let eval = ExactPredictor::fixed_point(SolverConfig::default());
        let out = chain_predictors(
            &[0.4],
            &hist,
            &delays,
            &b.system,
            &b.laws,
            GridSpec::Spacing(0.001),
            &eval,
        )
        .unwrap();
        assert_eq!(out[1].terminal(), out[0].terminal());
    }

    #[test]
    fn non_convergence_is_stage_tagged() {
        let b = builtin("linear2").unwrap();
        let hist = HistoryWindow::new(2, 0.001, 0.5, 0.0, |_, _| 0.3).unwrap();
        let eval = ExactPredictor::fixed_point(SolverConfig {
            max_iterations: 2,
            ..SolverConfig::default()
        });
        let err = chain_predictors(
            &[1.0],
            &hist,
            &b.delays,
            &b.system,
            &b.laws,
            GridSpec::Spacing(0.01),
            &eval,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Stage { stage: 0, .. }));
    }

    #[test]
    fn bootstrap_scalar_closed_form() {
        let b = builtin("linear1").unwrap();
        let profiles = bootstrap_initial(
            &[0.8],
            &|_, _| 0.0,
            &b.delays,
            &b.system,
            &b.laws,
            GridSpec::Spacing(0.001),
            &SolverConfig::default(),
        )
        .unwrap();
        let p = &profiles[0];
        assert_eq!(p.theta[0], -0.5);
        assert_eq!(p.solution.point(0), &[0.8]);
        for (k, theta) in p.theta.iter().enumerate() {
            let exact = (theta + 0.5).exp() * 0.8;
            assert!((p.solution.point(k)[0] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_equilibrium() {
        let b = builtin("unicycle").unwrap();
        let profiles = bootstrap_initial(
            &[0.0; 3],
            &|_, _| 0.0,
            &b.delays,
            &b.system,
            &b.laws,
            GridSpec::Spacing(0.01),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(profiles.len(), 2);
        assert!(profiles.iter().all(|p| p.solution.trajectory.iter().all(|v| *v == 0.0)));
    }
}
