//! One PASS/FAIL line per acceptance criterion. `PREDFEED_ACCEPTANCE=1,4,9`
//! restricts the run to the listed criteria.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use predfeed::bench::{
    error_injection_sweep, run_scenario, timing_benchmark, PredictorChoice, ScenarioConfig, TimingConfig,
};
use predfeed::cascade::InjectionMode;
use predfeed::dataset::{generate_dataset, InitialCondition, RolloutConfig};
use predfeed::neural::{gradient_check, serialize_model, ModelTemplate, NeuralPredictor, TrainConfig, TrainOutcome};
use predfeed::predictor::{ExactPredictor, PredictorEvaluator, Quadrature, SolverConfig};
use predfeed::system::BoxSet;
use predfeed::systems::{builtin, BUILTIN_NAMES};
use predfeed::verify;

const ORACLE_PICARD_TOL: f64 = 1e-6;
const ORACLE_RK4_TOL: f64 = 1e-8;
const ORACLE_SECONDS: f64 = 1.0;
const CROSS_PROBLEMS: usize = 200;
const CROSS_TOL: f64 = 1e-6;
const CROSS_SECONDS: f64 = 30.0;
const PDE_STEPS: usize = 100;
const PDE_TOL: f64 = 1e-6;
const ROUND_TRIP_STATES: usize = 50;
const ROUND_TRIP_TOL: f64 = 1e-6;
const LIPSCHITZ_PAIRS: usize = 1000;
const GRADIENT_DRAWS: usize = 100;
const GRADIENT_TOL: f64 = 1e-4;
const TRAIN_VALIDATION_TOL: f64 = 1e-3;
const TRAIN_SECONDS: f64 = 15.0 * 60.0;
const PARITY_RUNS: usize = 25;
const PARITY_TOL: f64 = 0.10;
const PARITY_SECONDS: f64 = 10.0 * 60.0;
const TIMING_FP_GROWTH: f64 = 5.0;
const TIMING_NN_SPREAD: f64 = 2.0;
const TIMING_SPEEDUP: f64 = 1.0;
const SWEEP_EPSILONS: [f64; 4] = [0.0, 0.01, 0.05, 0.1];
const SWEEP_SEEDS: usize = 5;
const SWEEP_BOUNDED_UP_TO: f64 = 0.05;
const SEED: u64 = 0;

struct Tally {
    failed: Vec<usize>,
    ran: usize,
}

impl Tally {
    fn report(&mut self, id: usize, name: &str, passed: bool, detail: String, seconds: f64) {
        self.ran += 1;
        if !passed {
            self.failed.push(id);
        }
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {detail} ({seconds:.1} s)");
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn selected() -> Vec<usize> {
    match std::env::var("PREDFEED_ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        _ => (1..=11).collect(),
    }
}

fn oracle(t: &mut Tally) {
    let (r, secs) = timed(verify::oracle_accuracy);
    match r {
        Ok(a) => t.report(
            1,
            "predictor oracle accuracy",
            a.picard_relative < ORACLE_PICARD_TOL && a.ode_relative < ORACLE_RK4_TOL && secs < ORACLE_SECONDS,
            format!(
                "picard rel {:.2e} (< {ORACLE_PICARD_TOL:.0e}), rk4 rel {:.2e} (< {ORACLE_RK4_TOL:.0e})",
                a.picard_relative, a.ode_relative
            ),
            secs,
        ),
        Err(e) => t.report(1, "predictor oracle accuracy", false, e.to_string(), secs),
    }
}

fn cross_solver(t: &mut Tally) {
    let (cubic, secs) = timed(|| verify::cross_solver(CROSS_PROBLEMS, Quadrature::Cubic, SEED));
    let trap = verify::cross_solver(CROSS_PROBLEMS, Quadrature::Trapezoid, SEED)
        .map(|g| format!("{g:.2e}"))
        .unwrap_or_else(|e| e.to_string());
    match cubic {
        Ok(gap) => t.report(
            2,
            "picard vs rk4 over random problems",
            gap < CROSS_TOL && secs < CROSS_SECONDS,
            format!("cubic sup gap {gap:.2e} (< {CROSS_TOL:.0e}); trapezoid rule gives {trap}"),
            secs,
        ),
        Err(e) => t.report(2, "picard vs rk4 over random problems", false, e.to_string(), secs),
    }
}

fn pde(t: &mut Tally) {
    let fp = ExactPredictor::fixed_point(SolverConfig {
        quadrature: Quadrature::Cubic,
        ..SolverConfig::default()
    });
    let (r, secs) = timed(|| verify::pde_equivalence(&fp, PDE_STEPS));
    let (passed, detail) = match r {
        Ok(gap) => (
            gap < PDE_TOL,
            format!("max gap {gap:.2e} over {PDE_STEPS} steps (< {PDE_TOL:.0e})"),
        ),
        Err(e) => (false, e.to_string()),
    };
    t.report(3, "transport state vs chained predictors", passed, detail, secs);
}

fn round_trip(t: &mut Tally) {
    let (r, secs) = timed(|| verify::backstepping_round_trip(ROUND_TRIP_STATES, SEED));
    let (passed, detail) = match r {
        Ok(rt) => (
            rt.reconstruction < ROUND_TRIP_TOL && rt.boundary_residual < ROUND_TRIP_TOL,
            format!(
                "reconstruction {:.2e}, boundary residual {:.2e} (< {ROUND_TRIP_TOL:.0e})",
                rt.reconstruction, rt.boundary_residual
            ),
        ),
        Err(e) => (false, e.to_string()),
    };
    t.report(4, "backstepping round trip", passed, detail, secs);
}

fn lipschitz(t: &mut Tally) {
    let start = Instant::now();
    let mut passed = true;
    let mut parts = Vec::new();
    for name in BUILTIN_NAMES {
        match verify::lipschitz_check(name, LIPSCHITZ_PAIRS, SEED) {
            Ok(c) => {
                passed &= c.max_ratio <= c.bound.c_p;
                parts.push(format!("{name} {:.3e} <= {:.3e}", c.max_ratio, c.bound.c_p));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    t.report(
        5,
        "operator lipschitz bound",
        passed,
        parts.join(", "),
        start.elapsed().as_secs_f64(),
    );
}

fn gradients(t: &mut Tally) {
    let (r, secs) = timed(|| gradient_check(GRADIENT_DRAWS, SEED));
    let (passed, detail) = match r {
        Ok(g) => (
            g.worst_relative < GRADIENT_TOL,
            format!(
                "worst relative {:.2e} over {GRADIENT_DRAWS} draws (< {GRADIENT_TOL:.0e})",
                g.worst_relative
            ),
        ),
        Err(e) => (false, e.to_string()),
    };
    t.report(6, "gradient check", passed, detail, secs);
}

/// 50 noisy unicycle rollouts of 10 s from a widened box, every 50th step.
fn desk_scale_training() -> predfeed::Result<(TrainOutcome, f64, f64)> {
    let b = builtin("unicycle")?;
    let rollout = RolloutConfig {
        trajectories: 50,
        stride: 50,
        noise: 0.1,
        seed: 1,
        initial: InitialCondition::Box(BoxSet::new(vec![-1.2, -1.2, -1.0], vec![1.2, 1.2, 1.0])?),
        ..RolloutConfig::default()
    };
    let (ds, gen_secs) = timed(|| generate_dataset(&b.system, &b.laws, &b.delays, &rollout));
    let ds = ds?;
    println!(
        "      dataset: {} pairs, {:?} per stage, {gen_secs:.1} s",
        ds.len(),
        ds.manifest.stage_counts
    );
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 64,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let (out, train_secs) = timed(|| predfeed::neural::train(&ds, &ModelTemplate::default(), &cfg));
    Ok((out?, gen_secs, train_secs))
}

fn training(t: &mut Tally, report: bool) -> Option<TrainOutcome> {
    let r = desk_scale_training();
    match r {
        Ok((out, gen_secs, train_secs)) => {
            if report {
                let worst = out.stages.iter().map(|s| s.epsilon.normalized_l2).fold(0.0, f64::max);
                let per_stage: Vec<String> = out
                    .stages
                    .iter()
                    .map(|s| format!("{:.2e}", s.epsilon.normalized_l2))
                    .collect();
                let total = gen_secs + train_secs;
                t.report(
                    7,
                    "desk-scale operator training",
                    worst < TRAIN_VALIDATION_TOL && total < TRAIN_SECONDS,
                    format!(
                        "normalized validation L2 per stage [{}] (< {TRAIN_VALIDATION_TOL:.0e}), eps_hat {:.2e}, generation + training {total:.0} s (< {TRAIN_SECONDS:.0} s)",
                        per_stage.join(", "),
                        out.eps_hat()
                    ),
                    total,
                );
            }
            Some(out)
        }
        Err(e) => {
            if report {
                t.report(7, "desk-scale operator training", false, e.to_string(), 0.0);
            }
            None
        }
    }
}

fn parity(t: &mut Tally, trained: Option<&TrainOutcome>, dir: &Path) {
    let Some(out) = trained else {
        t.report(8, "closed-loop parity", false, "no trained models".into(), 0.0);
        return;
    };
    let mut paths = Vec::new();
    for (k, m) in out.models().iter().enumerate() {
        let p = dir.join(format!("stage{k}.nopred"));
        if let Err(e) = serialize_model(m, &p) {
            t.report(8, "closed-loop parity", false, e.to_string(), 0.0);
            return;
        }
        paths.push(p.to_string_lossy().into_owned());
    }
    let base = ScenarioConfig {
        runs: PARITY_RUNS,
        seed: SEED,
        diag_stride: 100,
        ..ScenarioConfig::default()
    };
    let neural = ScenarioConfig {
        predictor: PredictorChoice::Model { paths },
        ..base.clone()
    };
    let (r, secs) = timed(|| Ok::<_, predfeed::Error>((run_scenario(&base)?.report, run_scenario(&neural)?.report)));
    match r {
        Ok((fp, nn)) => {
            let rel = (nn.residual_mean - fp.residual_mean).abs() / fp.residual_mean;
            t.report(
                8,
                "closed-loop parity",
                rel < PARITY_TOL && secs < PARITY_SECONDS,
                format!(
                    "mean residual fixed-point {:.4}, neural {:.4}, relative gap {rel:.4} (< {PARITY_TOL}), neural failed steps {:.3}%",
                    fp.residual_mean,
                    nn.residual_mean,
                    100.0 * nn.failure_rate
                ),
                secs,
            );
        }
        Err(e) => t.report(8, "closed-loop parity", false, e.to_string(), secs),
    }
}

fn timing(t: &mut Tally, trained: Option<&TrainOutcome>) {
    let Some(nn) = trained.map(|o| o.predictor()) else {
        t.report(9, "timing scaling", false, "no trained models".into(), 0.0);
        return;
    };
    let nn: NeuralPredictor = match nn {
        Ok(p) => p,
        Err(e) => return t.report(9, "timing scaling", false, e.to_string(), 0.0),
    };
    let fp = ExactPredictor::fixed_point(SolverConfig::default());
    let cfg = TimingConfig::default();
    let (r, secs) = timed(|| timing_benchmark(&cfg, &[&fp, &nn]));
    let rep = match r {
        Ok(rep) => rep,
        Err(e) => return t.report(9, "timing scaling", false, e.to_string(), secs),
    };
    let (coarse, fine) = (cfg.dx[0], cfg.dx[cfg.dx.len() - 1]);
    let ms = |imp: &str, dx: f64| rep.mean_ms(imp, dx).unwrap_or(f64::NAN);
    let growth = ms(fp.name(), fine) / ms(fp.name(), coarse);
    let nn_times: Vec<f64> = cfg.dx.iter().map(|&dx| ms(nn.name(), dx)).collect();
    let spread = nn_times.iter().cloned().fold(0.0, f64::max) / nn_times.iter().cloned().fold(f64::INFINITY, f64::min);
    let speedup = ms(fp.name(), fine) / ms(nn.name(), fine);
    t.report(
        9,
        "timing scaling",
        growth >= TIMING_FP_GROWTH && spread < TIMING_NN_SPREAD && speedup >= TIMING_SPEEDUP,
        format!(
            "fixed-point {:.3} -> {:.3} ms ({growth:.1}x, >= {TIMING_FP_GROWTH}x), neural spread {spread:.2}x (< {TIMING_NN_SPREAD}x), speedup at dx {fine} {speedup:.2} (>= {TIMING_SPEEDUP})",
            ms(fp.name(), coarse),
            ms(fp.name(), fine)
        ),
        secs,
    );
}

fn sweep(t: &mut Tally) {
    let base = ScenarioConfig {
        predictor: PredictorChoice::OdeOracle,
        runs: SWEEP_SEEDS,
        seed: SEED,
        diag_stride: 100,
        ..ScenarioConfig::default()
    };
    let (r, secs) = timed(|| error_injection_sweep(&base, &SWEEP_EPSILONS, InjectionMode::Uniform));
    let rows = match r {
        Ok(rows) => rows,
        Err(e) => return t.report(10, "error-injection sweep", false, e.to_string(), secs),
    };
    let monotone = rows.windows(2).all(|w| w[1].gamma_final_mean >= w[0].gamma_final_mean);
    let bounded = rows
        .iter()
        .filter(|r| r.epsilon <= SWEEP_BOUNDED_UP_TO)
        .all(|r| r.bounded);
    let cells: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "eps {} -> {:.4}{}",
                r.epsilon,
                r.gamma_final_mean,
                if r.bounded { "" } else { " (unbounded)" }
            )
        })
        .collect();
    t.report(
        10,
        "error-injection sweep",
        monotone && bounded,
        format!(
            "mean Gamma(T): {}; non-decreasing {monotone}, bounded for eps <= {SWEEP_BOUNDED_UP_TO} {bounded}",
            cells.join(", ")
        ),
        secs,
    );
}

fn run_twice(dir: &Path, args: &[&str], file: &str) -> Result<bool, String> {
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.join(tag);
        let status = Command::new(env!("CARGO_BIN_EXE_predfeed"))
            .arg("--out")
            .arg(&out)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        outputs.push(std::fs::read(out.join(file)).map_err(|e| e.to_string())?);
    }
    Ok(outputs[0] == outputs[1])
}

fn determinism(t: &mut Tally, dir: &Path) {
    let start = Instant::now();
    let sim = run_twice(
        &dir.join("simulate"),
        &["--seed", "7", "simulate", "--runs", "3", "--horizon", "2"],
        "trace.csv",
    );
    let gen = run_twice(
        &dir.join("gen-data"),
        &["--seed", "7", "gen-data", "--traj", "3", "--T", "2", "--stride", "20"],
        "dataset.ndset",
    );
    let (passed, detail) = match (sim, gen) {
        (Ok(a), Ok(b)) => (
            a && b,
            format!("simulate trace identical {a}, gen-data dataset identical {b}"),
        ),
        (Err(e), _) | (_, Err(e)) => (false, e),
    };
    t.report(11, "cli determinism", passed, detail, start.elapsed().as_secs_f64());
}

fn main() {
    let wanted = selected();
    let has = |id: usize| wanted.contains(&id);
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut t = Tally {
        failed: Vec::new(),
        ran: 0,
    };

    if has(1) {
        oracle(&mut t);
    }
    if has(2) {
        cross_solver(&mut t);
    }
    if has(3) {
        pde(&mut t);
    }
    if has(4) {
        round_trip(&mut t);
    }
    if has(5) {
        lipschitz(&mut t);
    }
    if has(6) {
        gradients(&mut t);
    }
    let trained = if has(7) || has(8) || has(9) {
        training(&mut t, has(7))
    } else {
        None
    };
    if has(8) {
        parity(&mut t, trained.as_ref(), dir.path());
    }
    if has(9) {
        timing(&mut t, trained.as_ref());
    }
    if has(10) {
        sweep(&mut t);
    }
    if has(11) {
        determinism(&mut t, dir.path());
    }

    println!("{} of {} criteria passed", t.ran - t.failed.len(), t.ran);
    if !t.failed.is_empty() {
        println!("failed: {:?}", t.failed);
        std::process::exit(1);
    }
}
