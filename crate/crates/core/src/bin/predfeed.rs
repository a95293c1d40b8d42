use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use predfeed::bench::{
    build_evaluator, delay_free_gas_check, error_injection_sweep, grid_points, run_scenario, timing_benchmark,
    PredictorChoice, ScenarioConfig, TimingConfig,
};
use predfeed::cascade::InjectionMode;
use predfeed::dataset::{generate_dataset, read_dataset, write_dataset, RolloutConfig};
use predfeed::neural::{serialize_model, train, EpochLoss, EpsilonEstimate, ModelTemplate, TrainConfig};
use predfeed::predictor::{lipschitz_bound, ExactPredictor, LipschitzBoundInputs, PredictorEvaluator, SolverConfig};
use predfeed::system::BoxSet;
use predfeed::systems::builtin;
use predfeed::verify;
use predfeed::{Error, Result};

#[derive(Parser)]
#[command(
    name = "predfeed",
    version,
    about = "Predictor feedback for multi-input systems with distinct input delays"
)]
struct Cli {
    /// TOML file with optional [scenario], [rollout], [train], [model] and [timing] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out closed loops and store predictor training pairs.
    GenData {
        #[arg(long)]
        system: Option<String>,
        #[arg(long, alias = "traj")]
        trajectories: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, alias = "T")]
        horizon: Option<f64>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one operator model per stage on a stored dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run seeded closed-loop scenarios and write a report and a trace.
    Simulate(SimulateArgs),
    /// Time full predictor chains across grid spacings.
    BenchTiming {
        /// Stage model files, in stage order, to time alongside the solvers.
        #[arg(long, num_args = 1..)]
        model: Vec<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Repeat a scenario with bounded errors injected into the predictor.
    Sweep {
        #[arg(long, num_args = 1.., default_values_t = [0.0, 0.01, 0.05, 0.1])]
        epsilon: Vec<f64>,
        #[arg(long, value_enum, default_value = "uniform")]
        mode: ModeArg,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Run the invariant suites.
    Verify {
        /// Smaller sample counts.
        #[arg(long)]
        quick: bool,
    },
    /// Evaluate the operator Lipschitz bound.
    LipschitzBound(BoundArgs),
    /// Check the delay-free loop on a grid of initial conditions.
    GasCheck {
        #[arg(long, default_value = "unicycle")]
        system: String,
        #[arg(long, default_value_t = 3)]
        per_axis: usize,
        #[arg(long, default_value_t = 30.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    system: Option<String>,
    #[arg(long, value_enum)]
    predictor: Option<PredictorArg>,
    /// Stage model files for `--predictor model`.
    #[arg(long, num_args = 1..)]
    model: Vec<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    diag_stride: Option<usize>,
    /// Injected predictor error amplitude.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct BoundArgs {
    /// Estimate the constants for a built-in system.
    #[arg(long, conflicts_with = "c_f")]
    system: Option<String>,
    #[arg(long, requires = "c_kappa")]
    c_f: Option<f64>,
    #[arg(long, num_args = 1..)]
    c_kappa: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    x_bar: f64,
    #[arg(long, default_value_t = 1.0)]
    u_bar: f64,
    #[arg(long, default_value_t = 1.0)]
    phi_bar: f64,
    /// Random operator input pairs to test against the bound.
    #[arg(long, default_value_t = 0)]
    pairs: usize,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PredictorArg {
    FixedPoint,
    OdeOracle,
    Model,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Uniform,
    Sine,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    scenario: ScenarioConfig,
    rollout: RolloutConfig,
    train: TrainConfig,
    model: ModelTemplate,
    timing: TimingConfig,
}

impl FileConfig {
    fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.scenario.seed = s;
            cfg.rollout.seed = s;
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

#[derive(Serialize)]
struct StageReport {
    stage: usize,
    path: String,
    epsilon: EpsilonEstimate,
    curve: Vec<EpochLoss>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = FileConfig::load(cli.config.as_deref(), cli.seed)?;
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData {
            system,
            trajectories,
            dt,
            horizon,
            stride,
            noise,
        } => {
            if let Some(name) = system {
                cfg.scenario.system = name;
            }
            let r = &mut cfg.rollout;
            r.trajectories = trajectories.unwrap_or(r.trajectories);
            r.dt = dt.unwrap_or(r.dt);
            r.horizon = horizon.unwrap_or(r.horizon);
            r.stride = stride.unwrap_or(r.stride);
            r.noise = noise.unwrap_or(r.noise);
            let b = builtin(&cfg.scenario.system)?;
            let delays = match &cfg.scenario.delays {
                Some(d) => predfeed::system::DelayConfig::new(d.clone())?,
                None => b.delays,
            };
            let ds = generate_dataset(&b.system, &b.laws, &delays, &cfg.rollout)?;
            write_dataset(&ds, out.join("dataset.ndset"))?;
            write_json(&out.join("dataset.json"), &ds.manifest)?;
            println!(
                "{} records ({:?} per stage, {} dropped) -> {}",
                ds.len(),
                ds.manifest.stage_counts,
                ds.manifest.dropped,
                out.join("dataset.ndset").display()
            );
        }
        Command::Train { data, epochs } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            let ds = read_dataset(&data)?;
            let outcome = train(&ds, &cfg.model, &cfg.train)?;
            let mut report = Vec::new();
            for s in &outcome.stages {
                let path = out.join(format!("stage{}.nopred", s.model.stage()));
                serialize_model(&s.model, &path)?;
                println!(
                    "stage {}: validation loss {:.3e}, eps_hat {:.3e} -> {}",
                    s.model.stage(),
                    s.curve.last().map(|c| c.validation).unwrap_or(f64::NAN),
                    s.epsilon.eps_hat,
                    path.display()
                );
                report.push(StageReport {
                    stage: s.model.stage(),
                    path: path.display().to_string(),
                    epsilon: s.epsilon,
                    curve: s.curve.clone(),
                });
            }
            write_json(&out.join("train.json"), &report)?;
        }
        Command::Simulate(args) => {
            let s = &mut cfg.scenario;
            if let Some(v) = args.system {
                s.system = v;
            }
            match args.predictor {
                Some(PredictorArg::FixedPoint) => s.predictor = PredictorChoice::FixedPoint,
                Some(PredictorArg::OdeOracle) => s.predictor = PredictorChoice::OdeOracle,
                Some(PredictorArg::Model) => s.predictor = PredictorChoice::Model { paths: args.model },
                None if !args.model.is_empty() => s.predictor = PredictorChoice::Model { paths: args.model },
                None => {}
            }
            s.runs = args.runs.unwrap_or(s.runs);
            s.horizon = args.horizon.unwrap_or(s.horizon);
            s.noise = args.noise.unwrap_or(s.noise);
            s.diag_stride = args.diag_stride.unwrap_or(s.diag_stride);
            if let Some(eps) = args.epsilon {
                s.injection = Some(predfeed::cascade::ErrorInjector::new(
                    eps,
                    InjectionMode::Uniform,
                    s.seed,
                )?);
            }
            s.record_first = true;
            let res = run_scenario(s)?;
            let lp = s.closed_loop()?;
            res.outcomes[0].write_csv(
                BufWriter::new(File::create(out.join("trace.csv"))?),
                lp.state_dim(),
                lp.input_dim(),
            )?;
            write_json(&out.join("report.json"), &res.report)?;
            let r = &res.report;
            println!(
                "{} / {}: mean summed L2 residual {:.4}, Gamma initial {:.4} peak {:.4} final {:.4e}, failed steps {:.3}%",
                r.system,
                r.predictor,
                r.residual_mean,
                r.gamma_initial_mean,
                r.gamma_peak_max,
                r.gamma_final_mean,
                100.0 * r.failure_rate
            );
        }
        Command::BenchTiming { model, repetitions } => {
            cfg.timing.repetitions = repetitions.unwrap_or(cfg.timing.repetitions);
            let solver = SolverConfig {
                quadrature: cfg.scenario.quadrature,
                ..SolverConfig::default()
            };
            let fp = ExactPredictor::fixed_point(solver);
            let ode = ExactPredictor::ode(solver);
            let neural = if model.is_empty() {
                None
            } else {
                let paths = model.iter().map(|p| p.display().to_string()).collect();
                Some(build_evaluator(&PredictorChoice::Model { paths }, solver.quadrature)?)
            };
            let mut imps: Vec<&dyn PredictorEvaluator> = vec![&fp, &ode];
            if let Some(n) = &neural {
                imps.push(n.as_ref());
            }
            let rep = timing_benchmark(&cfg.timing, &imps)?;
            rep.write_csv(File::create(out.join("timing.csv"))?)?;
            write_json(&out.join("timing.json"), &rep)?;
            for e in &rep.entries {
                println!(
                    "{:<12} dx={:<7} {:>10.4} ms  speedup {:.2}",
                    e.implementation, e.dx, e.mean_ms, e.speedup
                );
            }
        }
        Command::Sweep { epsilon, mode, runs } => {
            let base = ScenarioConfig { runs, ..cfg.scenario };
            let mode = match mode {
                ModeArg::Uniform => InjectionMode::Uniform,
                ModeArg::Sine => InjectionMode::Sine,
            };
            let rows = error_injection_sweep(&base, &epsilon, mode)?;
            write_json(&out.join("sweep.json"), &rows)?;
            for r in &rows {
                println!(
                    "eps={:<6} mean Gamma(T) {:.4e}  residual {:.4}  bounded {}",
                    r.epsilon, r.gamma_final_mean, r.residual_mean, r.bounded
                );
            }
        }
        Command::Verify { quick } => {
            let seed = cli.seed.unwrap_or(0);
            let checks = verify::run_suite(quick, seed);
            write_json(&out.join("verify.json"), &checks)?;
            for c in &checks {
                println!(
                    "[{}] {:<40} {:.3e} (limit {:.1e}, {:.2} s)",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.limit,
                    c.seconds
                );
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::LipschitzBound(args) => {
            let seed = cli.seed.unwrap_or(0);
            if let Some(name) = args.system {
                let check = verify::lipschitz_check(&name, args.pairs.max(2), seed)?;
                println!("{}", serde_json::to_string_pretty(&check)?);
                return Ok(check.max_ratio <= check.bound.c_p);
            }
            let inputs = LipschitzBoundInputs {
                c_f: args
                    .c_f
                    .ok_or_else(|| Error::InvalidArgument("give --system or --c-f".into()))?,
                c_kappa: args.c_kappa,
                x_bar: args.x_bar,
                u_bar: args.u_bar,
                phi_bar: args.phi_bar,
            };
            let bound = lipschitz_bound(&inputs)?;
            println!("{}", serde_json::to_string_pretty(&bound)?);
        }
        Command::GasCheck {
            system,
            per_axis,
            horizon,
            dt,
            threshold,
        } => {
            let b = builtin(&system)?;
            let region = if system == "unicycle" {
                BoxSet::new(
                    vec![-1.0, -1.0, -std::f64::consts::FRAC_PI_2],
                    vec![1.0, 1.0, std::f64::consts::FRAC_PI_2],
                )?
            } else {
                BoxSet::symmetric(b.system.state_dim(), 1.0)?
            };
            let grid = grid_points(&region, per_axis);
            let rep = delay_free_gas_check(&b.system, &b.laws, &grid, horizon, dt, threshold)?;
            write_json(&out.join("gas.json"), &rep)?;
            let worst = rep.residuals.iter().cloned().fold(0.0, f64::max);
            println!(
                "{}: {} initial conditions, max |X(T)| = {worst:.4e} -> {}",
                system,
                grid.len(),
                if rep.passed { "pass" } else { "FAIL" }
            );
            for d in &rep.diagnostics {
                println!("  {d}");
            }
            return Ok(rep.passed);
        }
    }
    Ok(true)
}
