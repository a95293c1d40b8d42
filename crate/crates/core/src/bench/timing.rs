use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{chain_predictors, GridSpec, PredictorEvaluator};
use crate::system::HistoryWindow;
use crate::systems::builtin;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub system: String,
    pub dx: Vec<f64>,
    pub repetitions: usize,
    pub warmup: usize,
    /// State the chain is anchored at; zeros when empty.
    pub state: Vec<f64>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            system: "unicycle".into(),
            dx: vec![0.01, 0.005, 0.001, 0.0005],
            repetitions: 1000,
            warmup: 50,
            state: vec![0.5, -0.4, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub implementation: String,
    pub dx: f64,
    pub mean_ms: f64,
    /// First implementation's time over this one's at the same `dx`.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub system: String,
    pub repetitions: usize,
    pub warmup: usize,
    pub entries: Vec<TimingEntry>,
}

impl TimingReport {
    pub fn mean_ms(&self, implementation: &str, dx: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.implementation == implementation && e.dx == dx)
            .map(|e| e.mean_ms)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["implementation", "dx", "mean_ms", "speedup"])?;
        for e in &self.entries {
            w.write_record([
                e.implementation.clone(),
                e.dx.to_string(),
                e.mean_ms.to_string(),
                e.speedup.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean wall time of one full `chain_predictors` call per implementation and
/// grid spacing, on a fixed smooth input history. Runs on one thread; the
/// first implementation is the speedup reference.
pub fn timing_benchmark(cfg: &TimingConfig, implementations: &[&dyn PredictorEvaluator]) -> Result<TimingReport> {
    if implementations.is_empty() || cfg.dx.is_empty() || cfg.repetitions == 0 {
        return Err(Error::invalid(
            "timing needs implementations, spacings and repetitions >= 1",
        ));
    }
    if cfg.dx.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::invalid(format!("spacings must be > 0: {:?}", cfg.dx)));
    }
    let b = builtin(&cfg.system)?;
    let n = b.system.state_dim();
    let x = if cfg.state.is_empty() {
        vec![0.0; n]
    } else {
        cfg.state.clone()
    };
    crate::system::check_len("timing state", n, x.len())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let mut entries = Vec::new();
    for &dx in &cfg.dx {
        let history = HistoryWindow::new(b.system.input_dim(), dx, b.delays.max(), 0.0, |j, tau| {
            0.3 * (1.5 * tau + j as f64).sin()
        })?;
        let mut reference = None;
        for imp in implementations {
            let call = || chain_predictors(&x, &history, &b.delays, &b.system, &b.laws, GridSpec::Spacing(dx), *imp);
            let mean_ms = pool.install(|| -> Result<f64> {
                for _ in 0..cfg.warmup {
                    std::hint::black_box(call()?);
                }
                let start = Instant::now();
                for _ in 0..cfg.repetitions {
                    std::hint::black_box(call()?);
                }
                Ok(start.elapsed().as_secs_f64() * 1e3 / cfg.repetitions as f64)
            })?;
            let base = *reference.get_or_insert(mean_ms);
            log::info!("{} at dx = {dx}: {mean_ms:.4} ms", imp.name());
            entries.push(TimingEntry {
                implementation: imp.name().to_string(),
                dx,
                mean_ms,
                speedup: base / mean_ms,
            });
        }
    }
    Ok(TimingReport {
        system: cfg.system.clone(),
        repetitions: cfg.repetitions,
        warmup: cfg.warmup,
        entries,
    })
}
