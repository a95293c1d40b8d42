use std::borrow::Cow;

use super::{PredictorProblem, PredictorSolution, Quadrature, SolverConfig};
use crate::error::{Error, Result};
use crate::interp;

/// Scratch space for evaluating `φ f(P, κ(P), U)` at one grid point.
struct Integrand<'p, 'a> {
    problem: &'p PredictorProblem<'a>,
    inputs: Vec<f64>,
}

impl<'p, 'a> Integrand<'p, 'a> {
    fn new(problem: &'p PredictorProblem<'a>) -> Self {
        Self {
            problem,
            inputs: vec![0.0; problem.system.input_dim()],
        }
    }

    /// `windows(j)` yields the value of window `j` (relative to the stage) at `θ`.
    #[inline]
    fn eval(&mut self, theta: f64, state: &[f64], windows: impl Fn(usize) -> f64, out: &mut [f64]) {
        let p = self.problem;
        let t = p.t0 + p.phi * theta;
        for j in 0..p.stage {
            self.inputs[j] = p.laws.eval(j, t, state);
        }
        for (j, slot) in self.inputs[p.stage..].iter_mut().enumerate() {
            *slot = windows(j);
        }
        p.system.eval_into(state, &self.inputs, out);
        for v in out.iter_mut() {
            *v *= p.phi;
        }
    }
}

fn prepare<'p, 'a>(problem: &'p PredictorProblem<'a>, config: &SolverConfig) -> Result<Cow<'p, PredictorProblem<'a>>> {
    problem.validate()?;
    config.validate()?;
    match config.ns {
        Some(ns) if ns != problem.ns() => Ok(Cow::Owned(problem.resampled(ns)?)),
        _ => Ok(Cow::Borrowed(problem)),
    }
}

fn node_values<'p>(problem: &'p PredictorProblem<'_>, k: usize) -> impl Fn(usize) -> f64 + 'p {
    move |j| problem.windows[j].values()[k]
}

/// Evaluates the integrand at every node of `trajectory` into `g`.
fn integrand_nodes(problem: &PredictorProblem<'_>, trajectory: &[f64], g: &mut [f64]) {
    let n = problem.system.state_dim();
    let ns = problem.ns();
    let h = 1.0 / (ns - 1) as f64;
    let mut integrand = Integrand::new(problem);
    for k in 0..ns {
        integrand.eval(
            k as f64 * h,
            &trajectory[k * n..(k + 1) * n],
            node_values(problem, k),
            &mut g[k * n..(k + 1) * n],
        );
    }
}

/// Cumulative quadrature `out_k = Q + ∫₀^{s_k} g` on the uniform grid.
fn cumulative(anchor: &[f64], g: &[f64], h: f64, rule: Quadrature, out: &mut [f64]) {
    let n = anchor.len();
    let ns = out.len() / n;
    out[..n].copy_from_slice(anchor);
    let cubic = rule == Quadrature::Cubic && ns >= 4;
    for k in 0..ns - 1 {
        for d in 0..n {
            let at = |l: usize| g[l * n + d];
            let piece = if !cubic {
                0.5 * h * (at(k) + at(k + 1))
            } else if k == 0 {
                h / 24.0 * (9.0 * at(0) + 19.0 * at(1) - 5.0 * at(2) + at(3))
            } else if k == ns - 2 {
                h / 24.0 * (at(k - 2) - 5.0 * at(k - 1) + 19.0 * at(k) + 9.0 * at(k + 1))
            } else {
                h / 24.0 * (13.0 * (at(k) + at(k + 1)) - at(k - 1) - at(k + 2))
            };
            out[(k + 1) * n + d] = out[k * n + d] + piece;
        }
    }
}

/// Sup-norm defect of `P(s) − Q − φ ∫₀ˢ f(…)` with `rule` on the window
/// grid. `trajectory` must live on that grid.
pub fn defect(problem: &PredictorProblem<'_>, trajectory: &[f64], rule: Quadrature) -> f64 {
    let n = problem.system.state_dim();
    let ns = problem.ns();
    let h = 1.0 / (ns - 1) as f64;
    let mut g = vec![0.0; ns * n];
    let mut integral = vec![0.0; ns * n];
    integrand_nodes(problem, trajectory, &mut g);
    cumulative(&problem.anchor, &g, h, rule, &mut integral);
    super::sup_distance(trajectory, &integral, n)
}

// Stiff laws put a rounding floor under the iterate change: perturbations are
// amplified roughly like e^{φL} before the iteration contracts them. When the
// change stops improving for this many iterations and sits within
// STALL_FACTOR of the tolerance, the best iterate is accepted.
const STALL_WINDOW: usize = 20;
const STALL_FACTOR: f64 = 1e4;

/// Successive substitution on the discretized integral equation, starting
/// from `P⁰ ≡ Q`.
///
/// Running out of iterations is not an error: the best iterate comes back
/// with `converged = false`. A non-finite iterate is.
pub fn solve_picard(problem: &PredictorProblem<'_>, config: &SolverConfig) -> Result<PredictorSolution> {
    let problem = prepare(problem, config)?;
    let n = problem.system.state_dim();
    let ns = problem.ns();
    let h = 1.0 / (ns - 1) as f64;

    let mut current: Vec<f64> = problem.anchor.iter().copied().cycle().take(ns * n).collect();
    let mut next = vec![0.0; ns * n];
    let mut g = vec![0.0; ns * n];
    let mut best = current.clone();
    let mut best_change = f64::INFINITY;
    let mut best_at = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut within_tolerance = false;

    while iterations < config.max_iterations {
        iterations += 1;
        integrand_nodes(&problem, &current, &mut g);
        cumulative(&problem.anchor, &g, h, config.quadrature, &mut next);
        let change = super::sup_distance(&next, &current, n);
        if !change.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: iterations });
        }
        std::mem::swap(&mut current, &mut next);
        if change < config.tolerance {
            converged = true;
            within_tolerance = true;
            break;
        }
        if change < best_change {
            best_change = change;
            best_at = iterations;
            best.copy_from_slice(&current);
        } else if best_change < config.tolerance * STALL_FACTOR && iterations - best_at >= STALL_WINDOW {
            converged = true;
            log::debug!("Picard stalled at change {best_change:e} after {iterations} iterations");
            break;
        }
    }
    if !converged {
        log::debug!("Picard stopped after {iterations} iterations, best change {best_change:e}");
    }
    if !within_tolerance && best_change.is_finite() {
        current = best;
    }
    let residual = defect(&problem, &current, config.quadrature);
    Ok(PredictorSolution {
        trajectory: current,
        n,
        residual: Some(residual),
        iterations,
        converged,
    })
}

/// Classic fourth-order Runge–Kutta march of `dP/ds = φ f(…)` over the window
/// grid; window values at half steps come from a cubic stencil.
pub fn solve_ode(problem: &PredictorProblem<'_>, config: &SolverConfig) -> Result<PredictorSolution> {
    let problem = prepare(problem, config)?;
    let n = problem.system.state_dim();
    let ns = problem.ns();
    let h = 1.0 / (ns - 1) as f64;

    let mut traj = vec![0.0; ns * n];
    traj[..n].copy_from_slice(&problem.anchor);
    let mut integrand = Integrand::new(&problem);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let windows = &problem.windows;

    for k in 0..ns - 1 {
        let (done, rest) = traj.split_at_mut((k + 1) * n);
        let p = &done[k * n..];
        let theta = k as f64 * h;
        let mid = |j: usize| interp::cubic_midpoint(windows[j].values(), k);

        integrand.eval(theta, p, node_values(&problem, k), &mut k1);
        for d in 0..n {
            tmp[d] = p[d] + 0.5 * h * k1[d];
        }
        integrand.eval(theta + 0.5 * h, &tmp, mid, &mut k2);
        for d in 0..n {
            tmp[d] = p[d] + 0.5 * h * k2[d];
        }
        integrand.eval(theta + 0.5 * h, &tmp, mid, &mut k3);
        for d in 0..n {
            tmp[d] = p[d] + h * k3[d];
        }
        integrand.eval(theta + h, &tmp, node_values(&problem, k + 1), &mut k4);
        for d in 0..n {
            let v = p[d] + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("RK4 predictor at node {}", k + 1)));
            }
            rest[d] = v;
        }
    }
    let residual = defect(&problem, &traj, config.quadrature);
    Ok(PredictorSolution {
        trajectory: traj,
        n,
        residual: Some(residual),
        iterations: 1,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{ControlLawSet, SampledWindow, SystemModel};

    fn scalar() -> (SystemModel, ControlLawSet) {
        (
            SystemModel::from_fn("lin", 1, 1, |x, u, out| out[0] = x[0] + u[0]).unwrap(),
            ControlLawSet::from_fn(1, 1, |_, _, x| -2.0 * x[0]).unwrap(),
        )
    }

    fn problem<'a>(sys: &'a SystemModel, laws: &'a ControlLawSet, q: f64, phi: f64, ns: usize) -> PredictorProblem<'a> {
        PredictorProblem {
            system: sys,
            laws,
            stage: 0,
            anchor: vec![q],
            windows: vec![SampledWindow::constant(0.0, ns).unwrap()],
            phi,
            t0: 0.0,
        }
    }

    #[test]
    fn zero_horizon_is_constant_in_one_iteration() {
        let (sys, laws) = scalar();
        let p = PredictorProblem {
            windows: vec![SampledWindow::from_fn(11, |s| s.sin()).unwrap()],
            ..problem(&sys, &laws, 0.7, 0.0, 11)
        };
        let pic = solve_picard(&p, &SolverConfig::default()).unwrap();
        assert_eq!(pic.iterations, 1);
        assert!(pic.converged);
        assert!(pic.trajectory.iter().all(|v| *v == 0.7));
        let ode = solve_ode(&p, &SolverConfig::default()).unwrap();
        assert!(ode.trajectory.iter().all(|v| *v == 0.7));
    }

    #[test]
    fn equilibrium_stays_at_zero() {
        let (sys, laws) = scalar();
        let p = problem(&sys, &laws, 0.0, 0.4, 21);
        let pic = solve_picard(&p, &SolverConfig::default()).unwrap();
        assert!(pic.trajectory.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exponential_growth_matches_closed_form() {
        let (sys, laws) = scalar();
        let p = problem(&sys, &laws, 1.0, 0.5, 1001);
        let exact = 0.5f64.exp();
        let pic = solve_picard(&p, &SolverConfig::default()).unwrap();
        assert!(pic.converged);
        assert!((pic.terminal()[0] - exact).abs() / exact < 1e-6);
        let ode = solve_ode(&p, &SolverConfig::default()).unwrap();
        assert!((ode.terminal()[0] - exact).abs() / exact < 1e-8);
        assert_eq!(pic.point(0), &[1.0]);
        assert!(pic.residual.unwrap() <= 10.0 * 1e-10);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (sys, laws) = scalar();
        let p = problem(&sys, &laws, 1.0, 2.0, 101);
        let cfg = SolverConfig {
            max_iterations: 3,
            ..SolverConfig::default()
        };
        let sol = solve_picard(&p, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
    }

    #[test]
    fn divergence_is_an_error() {
        let sys = SystemModel::from_fn("cube", 1, 1, |x, u, out| out[0] = x[0].powi(5) * 1e30 + u[0]).unwrap();
        let laws = ControlLawSet::from_fn(1, 1, |_, _, _| 0.0).unwrap();
        let p = problem(&sys, &laws, 1e10, 1.0, 11);
        assert!(matches!(
            solve_picard(&p, &SolverConfig::default()),
            Err(Error::Diverged { .. })
        ));
        assert!(solve_ode(&p, &SolverConfig::default()).is_err());
    }

    #[test]
    fn resampled_grid_is_used() {
        let (sys, laws) = scalar();
        let p = problem(&sys, &laws, 1.0, 0.5, 5);
        let sol = solve_ode(&p, &SolverConfig::with_ns(201)).unwrap();
        assert_eq!(sol.ns(), 201);
    }
}
