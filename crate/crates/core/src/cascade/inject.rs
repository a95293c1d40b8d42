use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{PredictorEvaluator, PredictorProblem, PredictorSolution};
use crate::rng::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionMode {
    /// Independent uniform draws per call, grid point and component.
    #[default]
    Uniform,
    /// A smooth deterministic disturbance in `s` and the time base.
    Sine,
}

/// Bounded disturbance added to every predictor output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorInjector {
    pub epsilon: f64,
    #[serde(default)]
    pub mode: InjectionMode,
    #[serde(default)]
    pub seed: u64,
}

impl ErrorInjector {
    pub fn new(epsilon: f64, mode: InjectionMode, seed: u64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "injection amplitude must be >= 0, got {epsilon}"
            )));
        }
        Ok(Self { epsilon, mode, seed })
    }

    /// Disturbance rows (`ns × n`) for one call. Each row has Euclidean norm
    /// at most `ε` and row `k` is scaled by `s_k`, so `P(0) = Q` survives.
    pub fn disturbance(&self, stage: usize, t0: f64, ns: usize, n: usize) -> Vec<f64> {
        let bound = self.epsilon / (n as f64).sqrt();
        let h = 1.0 / (ns - 1).max(1) as f64;
        let mut out = vec![0.0; ns * n];
        match self.mode {
            InjectionMode::Uniform => {
                let key = mix(self.seed ^ mix(stage as u64 ^ mix(t0.to_bits())));
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                for (k, row) in out.chunks_mut(n).enumerate() {
                    for v in row {
                        *v = k as f64 * h * bound * rng.gen_range(-1.0..=1.0);
                    }
                }
            }
            InjectionMode::Sine => {
                let phase = (self.seed % 1024) as f64 * 0.1;
                for (k, row) in out.chunks_mut(n).enumerate() {
                    let s = k as f64 * h;
                    for (d, v) in row.iter_mut().enumerate() {
                        let arg = std::f64::consts::TAU * s + 1.3 * d as f64 + 2.0 * t0 + phase + stage as f64;
                        *v = s * bound * arg.sin();
                    }
                }
            }
        }
        out
    }
}

/// Predictor wrapper that perturbs every returned trajectory.
#[derive(Debug, Clone)]
pub struct InjectedPredictor<E> {
    inner: E,
    injector: ErrorInjector,
    name: String,
}

/// Wraps `inner` so each output is perturbed per `injector`.
pub fn inject_error<E: PredictorEvaluator>(inner: E, injector: ErrorInjector) -> InjectedPredictor<E> {
    let name = format!("{}+eps{}", inner.name(), injector.epsilon);
    InjectedPredictor { inner, injector, name }
}

impl<E> InjectedPredictor<E> {
    pub fn injector(&self) -> &ErrorInjector {
        &self.injector
    }
}

impl<E: PredictorEvaluator> PredictorEvaluator for InjectedPredictor<E> {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, problem: &PredictorProblem<'_>) -> Result<PredictorSolution> {
        let mut sol = self.inner.evaluate(problem)?;
        if self.injector.epsilon == 0.0 {
            return Ok(sol);
        }
        let noise = self.injector.disturbance(problem.stage, problem.t0, sol.ns(), sol.n);
        for (v, e) in sol.trajectory.iter_mut().zip(noise) {
            *v += e;
        }
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_by_epsilon() {
        for mode in [InjectionMode::Uniform, InjectionMode::Sine] {
            let inj = ErrorInjector::new(0.05, mode, 3).unwrap();
            for call in 0..10_000 {
                let d = inj.disturbance(call % 2, call as f64 * 1e-3, 5, 3);
                for row in d.chunks(3) {
                    assert!(row.iter().map(|v| v * v).sum::<f64>().sqrt() <= 0.05 + 1e-15);
                }
                assert!(d[..3].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = ErrorInjector::new(0.1, InjectionMode::Uniform, 9).unwrap();
        assert_eq!(a.disturbance(1, 0.25, 11, 3), a.disturbance(1, 0.25, 11, 3));
        let b = ErrorInjector::new(0.1, InjectionMode::Uniform, 10).unwrap();
        assert_ne!(a.disturbance(1, 0.25, 11, 3), b.disturbance(1, 0.25, 11, 3));
        assert!(ErrorInjector::new(-1.0, InjectionMode::Sine, 0).is_err());
    }
}
