//! Invariant suites. Each check returns the measured quantity; `run_suite`
//! compares them against fixed limits.

use std::cell::RefCell;
use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{delay_free_gas_check, grid_points, run_scenario, PredictorChoice, ScenarioConfig};
use crate::cascade::{
    backstepping_forward, backstepping_inverse, pde_predictors, simulate_observed, CascadeState, ClosedLoop,
    SimulationConfig,
};
use crate::error::{Error, Result};
use crate::predictor::{
    lipschitz_bound, solve_ode, solve_picard, ExactPredictor, LipschitzBound, LipschitzBoundInputs, PredictorEvaluator,
    PredictorProblem, Quadrature, SolverConfig,
};
use crate::system::{empirical_lipschitz_law, BoxSet, SampledWindow};
use crate::systems::{builtin, BUILTIN_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleAccuracy {
    pub picard_relative: f64,
    pub ode_relative: f64,
}

/// `ẋ = x + u`, zero input, `Q = 1`, `φ = 0.5` on 1001 points against `e^{0.5}`.
pub fn oracle_accuracy() -> Result<OracleAccuracy> {
    let b = builtin("linear1")?;
    let problem = PredictorProblem {
        system: &b.system,
        laws: &b.laws,
        stage: 0,
        anchor: vec![1.0],
        windows: vec![SampledWindow::constant(0.0, 1001)?],
        phi: 0.5,
        t0: 0.0,
    };
    let exact = 0.5f64.exp();
    let cfg = SolverConfig::default();
    let rel = |v: f64| (v - exact).abs() / exact;
    Ok(OracleAccuracy {
        picard_relative: rel(solve_picard(&problem, &cfg)?.terminal()[0]),
        ode_relative: rel(solve_ode(&problem, &cfg)?.terminal()[0]),
    })
}

const WINDOW_TERMS: usize = 3;

/// Smooth function on `[0, 1]` bounded by `amplitude`.
fn smooth_window<R: Rng>(rng: &mut R, ns: usize, amplitude: f64) -> Result<SampledWindow> {
    let terms: Vec<(f64, f64)> = (1..=WINDOW_TERMS)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0) * amplitude / WINDOW_TERMS as f64,
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    SampledWindow::from_fn(ns, |s| {
        terms
            .iter()
            .enumerate()
            .map(|(k, (a, ph))| a * ((k + 1) as f64 * PI * s + ph).sin())
            .sum()
    })
}

fn state_box(system: &str, n: usize) -> Result<BoxSet> {
    if system == "unicycle" {
        BoxSet::new(vec![-1.0, -1.0, -FRAC_PI_2], vec![1.0, 1.0, FRAC_PI_2])
    } else {
        BoxSet::symmetric(n, 1.0)
    }
}

/// Largest sup-norm gap between the Picard and RK4 solutions over `count`
/// random problems cycling through the built-in systems.
pub fn cross_solver(count: usize, quadrature: Quadrature, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let systems = BUILTIN_NAMES.iter().map(|n| builtin(n)).collect::<Result<Vec<_>>>()?;
    let cfg = SolverConfig {
        quadrature,
        ..SolverConfig::with_ns(1001)
    };
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (name, b) = (BUILTIN_NAMES[i % systems.len()], &systems[i % systems.len()]);
        let m = b.system.input_dim();
        let stage = rng.gen_range(0..m);
        let problem = PredictorProblem {
            system: &b.system,
            laws: &b.laws,
            stage,
            anchor: state_box(name, b.system.state_dim())?.sample(&mut rng),
            windows: (stage..m)
                .map(|_| smooth_window(&mut rng, 1001, 1.0))
                .collect::<Result<_>>()?,
            phi: rng.gen_range(0.0..=1.0),
            t0: rng.gen_range(0.0..10.0),
        };
        let p = solve_picard(&problem, &cfg)?;
        let o = solve_ode(&problem, &cfg)?;
        worst = worst.max(p.sup_distance(&o));
    }
    Ok(worst)
}

fn unicycle_loop(dt: f64) -> Result<ClosedLoop> {
    let b = builtin("unicycle")?;
    ClosedLoop::new(b.system, b.laws, b.delays, dt)
}

/// Largest gap between the transport-form predictors `p_i(D_i, t)` and the
/// chained predictors at `logged` evenly spaced steps of a 10 s unicycle run.
pub fn pde_equivalence(evaluator: &dyn PredictorEvaluator, logged: usize) -> Result<f64> {
    let lp = unicycle_loop(1e-3)?;
    let state = lp.initial_state(&[0.6, -0.5, 0.4], |_, _| 0.0)?;
    let cfg = SimulationConfig {
        horizon: 10.0,
        diag_stride: usize::MAX,
        ..SimulationConfig::default()
    };
    let stride = (cfg.steps(lp.dt()) / logged.max(1)).max(1);
    let worst = RefCell::new(Ok(0.0f64));
    let seen = RefCell::new(0usize);
    simulate_observed(&lp, state, evaluator, &cfg, |view| {
        if view.step % stride != 0 || *seen.borrow() >= logged {
            return;
        }
        *seen.borrow_mut() += 1;
        let mut w = worst.borrow_mut();
        if let Ok(acc) = w.as_mut() {
            match pde_predictors(&lp, view.state) {
                Ok(p) => {
                    for (i, s) in view.predictions.iter().enumerate() {
                        let d = p
                            .at_delay(i)
                            .iter()
                            .zip(s.terminal())
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        *acc = acc.max(d);
                    }
                }
                Err(e) => *w = Err(e),
            }
        }
    })?;
    worst.into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    /// Sup error of `u → w → u` over fields and held samples.
    pub reconstruction: f64,
    /// Largest `|w_i(D_i, t)|` with exact predictions on the boundary.
    pub boundary_residual: f64,
}

fn random_state<R: Rng>(lp: &ClosedLoop, rng: &mut R) -> Result<CascadeState> {
    let x0 = state_box("unicycle", 3)?.sample(rng);
    let coeff: Vec<[f64; 3]> = (0..lp.input_dim())
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let mut s = lp.initial_state(&x0, |i, t| {
        let [a, b, c] = coeff[i];
        0.5 * a + 0.3 * (b * t + c).sin()
    })?;
    let eval = ExactPredictor::ode(SolverConfig::default());
    for _ in 0..rng.gen_range(0..20) {
        let preds = lp.predict(&s, &s.x, &eval)?;
        let boundary = lp.boundary_inputs(s.t, &preds);
        lp.advance(&mut s, &boundary)?;
    }
    Ok(s)
}

/// Backstepping forward/inverse round trip on `count` random reachable
/// cascade states of the unicycle loop.
pub fn backstepping_round_trip(count: usize, seed: u64) -> Result<RoundTrip> {
    let lp = unicycle_loop(5e-3)?;
    let eval = ExactPredictor::ode(SolverConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RoundTrip {
        reconstruction: 0.0,
        boundary_residual: 0.0,
    };
    for _ in 0..count {
        let s = random_state(&lp, &mut rng)?;
        let p = pde_predictors(&lp, &s)?;
        let ts = backstepping_forward(&lp, &s, &p)?;
        let back = backstepping_inverse(&lp, &ts, &s.x)?;
        let pairs = s.fields.iter().flatten().zip(back.fields.iter().flatten());
        for (a, b) in pairs.chain(s.held.iter().zip(&back.held)) {
            out.reconstruction = out.reconstruction.max((a - b).abs());
        }

        let preds = lp.predict(&s, &s.x, &eval)?;
        let boundary = lp.boundary_inputs(s.t, &preds);
        let mut post = s.clone();
        for (f, b) in post.fields.iter_mut().zip(&boundary) {
            *f.last_mut().expect("non-empty field") = *b;
        }
        let ts = backstepping_forward(&lp, &post, &p)?;
        for r in ts.residuals() {
            out.boundary_residual = out.boundary_residual.max(r.abs());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCheck {
    pub system: String,
    pub pairs: usize,
    pub max_ratio: f64,
    pub bound: LipschitzBound,
    pub inputs: LipschitzBoundInputs,
}

/// Bound inputs for a built-in system over its test box with `|U| ≤ 1` and
/// `φ ≤ 1`. Laws without declared constants use a sampled estimate.
pub fn bound_inputs(system: &str) -> Result<LipschitzBoundInputs> {
    let b = builtin(system)?;
    let region = state_box(system, b.system.state_dim())?;
    let (x_bar, u_bar, phi_bar) = (region.norm_bound(), 1.0, 1.0);
    let c_f = b
        .system
        .dynamics()
        .lipschitz(region.abs_bound(), u_bar)
        .ok_or_else(|| Error::invalid(format!("`{system}` declares no Lipschitz constant")))?;
    let c_kappa = match b.laws.lipschitz() {
        Some(c) => c.to_vec(),
        None => {
            let period = b.laws.period().unwrap_or(1.0);
            let times: Vec<f64> = (0..16).map(|k| period * k as f64 / 16.0).collect();
            empirical_lipschitz_law(&b.laws, &region, &times, 400, 7)?
        }
    };
    Ok(LipschitzBoundInputs {
        c_f,
        c_kappa,
        x_bar,
        u_bar,
        phi_bar,
    })
}

/// Largest `‖P(a) − P(b)‖∞ / (|ΔX| + Σ‖ΔU‖∞ + |Δφ|)` over `pairs` random
/// operator inputs. Half the pairs are small perturbations of each other.
pub fn lipschitz_check(system: &str, pairs: usize, seed: u64) -> Result<LipschitzCheck> {
    let b = builtin(system)?;
    let inputs = bound_inputs(system)?;
    let bound = lipschitz_bound(&inputs)?;
    let region = state_box(system, b.system.state_dim())?;
    let m = b.system.input_dim();
    let cfg = SolverConfig::default();
    let ns = 201;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    for i in 0..pairs {
        let stage = rng.gen_range(0..m);
        let t0 = rng.gen_range(0.0..10.0);
        let draw = |rng: &mut ChaCha8Rng| -> Result<(Vec<f64>, Vec<SampledWindow>, f64)> {
            let ws = (stage..m)
                .map(|_| smooth_window(rng, ns, inputs.u_bar))
                .collect::<Result<Vec<_>>>()?;
            Ok((region.sample(rng), ws, rng.gen_range(0.0..=inputs.phi_bar)))
        };
        let a = draw(&mut rng)?;
        let bb = if i % 2 == 0 {
            draw(&mut rng)?
        } else {
            let eps = 1e-3;
            let x = a.0.iter().map(|v| v + eps * rng.gen_range(-1.0..1.0)).collect();
            let ws =
                a.1.iter()
                    .map(|w| {
                        let shift = smooth_window(&mut rng, ns, eps)?;
                        let vals = w.values().iter().zip(shift.values()).map(|(p, q)| p + q).collect();
                        SampledWindow::new(vals)
                    })
                    .collect::<Result<Vec<_>>>()?;
            let phi = (a.2 + eps * rng.gen_range(-1.0..1.0)).clamp(0.0, inputs.phi_bar);
            (x, ws, phi)
        };
        let solve = |(x, ws, phi): &(Vec<f64>, Vec<SampledWindow>, f64)| {
            solve_ode(
                &PredictorProblem {
                    system: &b.system,
                    laws: &b.laws,
                    stage,
                    anchor: x.clone(),
                    windows: ws.clone(),
                    phi: *phi,
                    t0,
                },
                &cfg,
            )
        };
        let (pa, pb) = (solve(&a)?, solve(&bb)?);
        let dx =
            a.0.iter()
                .zip(&bb.0)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
        let du: f64 =
            a.1.iter()
                .zip(&bb.1)
                .map(|(p, q)| {
                    p.values()
                        .iter()
                        .zip(q.values())
                        .map(|(u, v)| (u - v).abs())
                        .fold(0.0, f64::max)
                })
                .sum();
        let den = dx + du + (a.2 - bb.2).abs();
        if den > 0.0 {
            max_ratio = max_ratio.max(pa.sup_distance(&pb) / den);
        }
    }
    Ok(LipschitzCheck {
        system: system.to_string(),
        pairs,
        max_ratio,
        bound,
        inputs,
    })
}

/// Delay-free check of a built-in law on the `3ⁿ` grid over its test box,
/// 30 s, threshold 0.1.
pub fn default_gas_check(system: &str) -> Result<crate::bench::GasReport> {
    let b = builtin(system)?;
    let grid = grid_points(&state_box(system, b.system.state_dim())?, 3);
    delay_free_gas_check(&b.system, &b.laws, &grid, 30.0, 1e-3, 0.1)
}

/// Sup distance between the Γ traces of a fixed-point loop (cubic rule) and
/// an ODE-oracle loop from the same seeded start.
pub fn gamma_agreement(horizon: f64, seed: u64) -> Result<f64> {
    let base = ScenarioConfig {
        runs: 1,
        horizon,
        seed,
        quadrature: Quadrature::Cubic,
        ..ScenarioConfig::default()
    };
    let fp = run_scenario(&base)?;
    let ode = run_scenario(&ScenarioConfig {
        predictor: PredictorChoice::OdeOracle,
        ..base
    })?;
    Ok(fp.outcomes[0].gamma.sup_distance(&ode.outcomes[0].gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub seconds: f64,
}

fn check(name: &str, limit: f64, f: impl FnOnce() -> Result<f64>) -> CheckOutcome {
    let start = Instant::now();
    let value = f().unwrap_or_else(|e| {
        log::error!("{name}: {e}");
        f64::NAN
    });
    CheckOutcome {
        name: name.to_string(),
        value,
        limit,
        passed: value <= limit,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every invariant check. `quick` shrinks sample counts.
pub fn run_suite(quick: bool, seed: u64) -> Vec<CheckOutcome> {
    let scale = |full: usize, small: usize| if quick { small } else { full };
    let mut out = vec![
        check("oracle picard relative error", 1e-6, || {
            Ok(oracle_accuracy()?.picard_relative)
        }),
        check(
            "oracle rk4 relative error",
            1e-8,
            || Ok(oracle_accuracy()?.ode_relative),
        ),
        check("picard (cubic) vs rk4 sup gap", 1e-6, || {
            cross_solver(scale(200, 30), Quadrature::Cubic, seed)
        }),
        check("picard (trapezoid) vs rk4 sup gap", 1e-5, || {
            cross_solver(scale(200, 30), Quadrature::Trapezoid, seed)
        }),
        check("transport vs chained predictors", 1e-6, || {
            pde_equivalence(&ExactPredictor::ode(SolverConfig::default()), scale(100, 20))
        }),
    ];
    let start = Instant::now();
    let rt = backstepping_round_trip(scale(50, 10), seed);
    let rt_seconds = start.elapsed().as_secs_f64();
    let field = |f: fn(&RoundTrip) -> f64| match &rt {
        Ok(r) => Ok(f(r)),
        Err(e) => Err(Error::invalid(e.to_string())),
    };
    out.push(check("backstepping round trip", 1e-6, || field(|r| r.reconstruction)));
    out.push(check("exact boundary residual", 1e-6, || {
        field(|r| r.boundary_residual)
    }));
    let last = out.len();
    out[last - 2].seconds = rt_seconds;
    for name in BUILTIN_NAMES {
        out.push(check(&format!("lipschitz ratio / bound ({name})"), 1.0, || {
            let c = lipschitz_check(name, scale(1000, 100), seed)?;
            Ok(c.max_ratio / c.bound.c_p)
        }));
    }
    out.push(check("gradient check relative error", 1e-4, || {
        Ok(crate::neural::gradient_check(scale(100, 10), seed)?.worst_relative)
    }));
    out.push(check("delay-free unicycle max |X(T)|", 0.1 - f64::EPSILON, || {
        let r = default_gas_check("unicycle")?;
        Ok(r.residuals.iter().cloned().fold(0.0, f64::max))
    }));
    out.push(check("gamma trace fixed-point vs oracle", 1e-4, || {
        gamma_agreement(if quick { 2.0 } else { 10.0 }, seed)
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_closed_form() {
        let a = oracle_accuracy().unwrap();
        assert!(a.picard_relative < 1e-6, "{a:?}");
        assert!(a.ode_relative < 1e-8, "{a:?}");
    }

    #[test]
    fn small_samples_hold() {
        assert!(cross_solver(9, Quadrature::Cubic, 3).unwrap() < 1e-6);
        assert!(cross_solver(9, Quadrature::Trapezoid, 3).unwrap() < 1e-5);
        let rt = backstepping_round_trip(3, 3).unwrap();
        assert!(rt.reconstruction < 1e-6 && rt.boundary_residual < 1e-6, "{rt:?}");
        let c = lipschitz_check("linear2", 20, 3).unwrap();
        assert!(c.max_ratio <= c.bound.c_p, "{c:?}");
    }
}
