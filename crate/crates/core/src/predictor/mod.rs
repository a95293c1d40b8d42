//! Normalized predictor operators and their numerical solution.
//!
//! Stage `k` maps an anchor state `Q`, the windows of inputs `k..m` on the
//! normalized interval `[0, 1]` and a horizon `φ` to the trajectory
//!
//! ```text
//! P(s) = Q + φ ∫₀ˢ f(P(θ), κ₀(P(θ)), …, κ_{k-1}(P(θ)), U_k(θ), …, U_{m-1}(θ)) dθ
//! ```
//!
//! with the laws evaluated at absolute time `t0 + φ θ`.

mod bound;
mod chain;
mod solve;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp;
use crate::system::{check_len, ControlLawSet, SampledWindow, SystemModel};

pub use bound::{lipschitz_bound, LipschitzBound, LipschitzBoundInputs};
pub use chain::{bootstrap_initial, chain_predictors, chain_with, InitialProfile};
pub use solve::{defect, solve_ode, solve_picard};

/// One predictor-operator evaluation request.
#[derive(Debug, Clone)]
pub struct PredictorProblem<'a> {
    pub system: &'a SystemModel,
    pub laws: &'a ControlLawSet,
    pub stage: usize,
    pub anchor: Vec<f64>,
    /// Windows of inputs `stage..m`, all with the same length.
    pub windows: Vec<SampledWindow>,
    pub phi: f64,
    /// Absolute time at `θ = 0`.
    pub t0: f64,
}

impl PredictorProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let m = self.system.input_dim();
        check_len("anchor", self.system.state_dim(), self.anchor.len())?;
        self.laws.check_system(self.system)?;
        if self.stage >= m {
            return Err(Error::invalid(format!("stage {} out of range for m = {m}", self.stage)));
        }
        check_len("predictor windows", m - self.stage, self.windows.len())?;
        let ns = self.windows[0].len();
        if self.windows.iter().any(|w| w.len() != ns) {
            return Err(Error::invalid("predictor windows must share a grid size"));
        }
        if !(self.phi.is_finite() && self.phi >= 0.0) {
            return Err(Error::invalid(format!(
                "horizon must be finite and >= 0, got {}",
                self.phi
            )));
        }
        if self.anchor.iter().any(|v| !v.is_finite()) || !self.t0.is_finite() {
            return Err(Error::invalid("anchor and time base must be finite"));
        }
        Ok(())
    }

    pub fn ns(&self) -> usize {
        self.windows[0].len()
    }

    /// Copy of the problem with every window resampled to `ns` points.
    pub fn resampled(&self, ns: usize) -> Result<Self> {
        let windows = self
            .windows
            .iter()
            .map(|w| w.resample(ns))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            windows,
            anchor: self.anchor.clone(),
            ..*self
        })
    }
}

/// A sampled predictor trajectory on the uniform normalized grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSolution {
    /// Row-major `ns × n` samples.
    pub trajectory: Vec<f64>,
    pub n: usize,
    /// Sup-norm defect of the integral equation; `None` for learned models.
    pub residual: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl PredictorSolution {
    pub fn ns(&self) -> usize {
        self.trajectory.len() / self.n
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.trajectory[k * self.n..(k + 1) * self.n]
    }

    /// `P(1)`.
    pub fn terminal(&self) -> &[f64] {
        self.point(self.ns() - 1)
    }

    /// Linear interpolation at `s ∈ [0, 1]`.
    pub fn at(&self, s: f64) -> Vec<f64> {
        let rows = &self.trajectory;
        let pos = s.clamp(0.0, 1.0) * (self.ns() - 1) as f64;
        let k = (pos.floor() as usize).min(self.ns() - 2);
        let frac = pos - k as f64;
        (0..self.n)
            .map(|d| rows[k * self.n + d] + frac * (rows[(k + 1) * self.n + d] - rows[k * self.n + d]))
            .collect()
    }

    /// Trajectory resampled to `ns` rows.
    pub fn resampled(&self, ns: usize) -> Vec<f64> {
        interp::resample_rows(&self.trajectory, self.n, ns)
    }

    /// `max_k |a(s_k) − b(s_k)|` in the Euclidean norm; both on the same grid.
    pub fn sup_distance(&self, other: &PredictorSolution) -> f64 {
        sup_distance(&self.trajectory, &other.trajectory, self.n)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64], n: usize) -> f64 {
    a.chunks(n)
        .zip(b.chunks(n))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Piecewise-cubic interval weights, fourth order.
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Solve grid size; `None` keeps the grid of the supplied windows.
    pub ns: Option<usize>,
    pub max_iterations: usize,
    pub tolerance: f64,
    #[serde(default)]
    pub quadrature: Quadrature,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            ns: None,
            max_iterations: 200,
            tolerance: 1e-10,
            quadrature: Quadrature::Trapezoid,
        }
    }
}

impl SolverConfig {
    pub fn with_ns(ns: usize) -> Self {
        Self {
            ns: Some(ns),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.ns, Some(ns) if ns < 2) {
            return Err(Error::invalid("solver grid needs at least 2 points"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::invalid("solver needs tolerance > 0 and max_iterations >= 1"));
        }
        Ok(())
    }
}

/// How many points a stage window gets for a given horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSpec {
    Points(usize),
    /// `⌈φ / dx⌉ + 1` points.
    Spacing(f64),
}

impl GridSpec {
    pub fn points(&self, phi: f64) -> usize {
        match *self {
            GridSpec::Points(n) => n.max(2),
            GridSpec::Spacing(dx) => interp::points_for_spacing(phi, dx),
        }
    }
}

/// Anything that can stand in for the predictor operators.
pub trait PredictorEvaluator: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, problem: &PredictorProblem<'_>) -> Result<PredictorSolution>;
}

impl<T: PredictorEvaluator + ?Sized> PredictorEvaluator for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn evaluate(&self, problem: &PredictorProblem<'_>) -> Result<PredictorSolution> {
        (**self).evaluate(problem)
    }
}

impl<T: PredictorEvaluator + ?Sized> PredictorEvaluator for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn evaluate(&self, problem: &PredictorProblem<'_>) -> Result<PredictorSolution> {
        (**self).evaluate(problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedPoint,
    Ode,
}

/// Numerical solution of the predictor operators.
#[derive(Debug, Clone, Copy)]
pub struct ExactPredictor {
    pub method: Method,
    pub config: SolverConfig,
}

impl ExactPredictor {
    pub fn fixed_point(config: SolverConfig) -> Self {
        Self {
            method: Method::FixedPoint,
            config,
        }
    }

    pub fn ode(config: SolverConfig) -> Self {
        Self {
            method: Method::Ode,
            config,
        }
    }
}

impl PredictorEvaluator for ExactPredictor {
    fn name(&self) -> &str {
        match self.method {
            Method::FixedPoint => "fixed-point",
            Method::Ode => "ode-oracle",
        }
    }

    fn evaluate(&self, problem: &PredictorProblem<'_>) -> Result<PredictorSolution> {
        match self.method {
            Method::FixedPoint => solve_picard(problem, &self.config),
            Method::Ode => solve_ode(problem, &self.config),
        }
    }
}
