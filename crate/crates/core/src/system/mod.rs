//! Plants, input delays, feedback laws and input histories.
//!
//! A plant is `Ẋ = f(X, U₁(t − D₁), …, U_m(t − D_m))` with scalar input
//! channels. Channels and stages are indexed from zero throughout the crate;
//! stage `k` of the chained predictor covers the physical horizon
//! `[D_{k-1}, D_k]` ahead of the current time, with `D_{-1} = 0`.

mod history;
mod lipschitz;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use history::{shift_window, HistoryWindow, SampledWindow};
pub use lipschitz::{empirical_lipschitz, empirical_lipschitz_law, pairwise_lipschitz, BoxSet};

/// Right-hand side of a delayed plant.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Writes `f(x, u)` into `out`. Slices have exactly the advertised sizes.
    fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Known Lipschitz constant of `f` over `|x|∞ ≤ x_bound`, `|u|∞ ≤ u_bound`,
    /// in the sense `|Δf| ≤ C (|Δx| + Σ|Δuᵢ|)`.
    fn lipschitz(&self, _x_bound: f64, _u_bound: f64) -> Option<f64> {
        None
    }
}

struct FnDynamics<F> {
    n: usize,
    m: usize,
    f: F,
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.f)(x, u, out)
    }
}

/// A named plant with the equilibrium `f(0, 0) = 0` verified at construction.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    dynamics: Arc<dyn Dynamics>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n", &self.state_dim())
            .field("m", &self.input_dim())
            .finish()
    }
}

impl SystemModel {
    pub fn new(name: impl Into<String>, dynamics: Arc<dyn Dynamics>) -> Result<Self> {
        let name = name.into();
        let (n, m) = (dynamics.state_dim(), dynamics.input_dim());
        if n == 0 || m == 0 {
            return Err(Error::invalid(format!(
                "system `{name}` needs n >= 1 and m >= 1 (got n = {n}, m = {m})"
            )));
        }
        let mut out = vec![f64::NAN; n];
        dynamics.eval(&vec![0.0; n], &vec![0.0; m], &mut out);
        if out.iter().any(|v| *v != 0.0) {
            return Err(Error::invalid(format!(
                "system `{name}` violates f(0, 0) = 0: got {out:?}"
            )));
        }
        Ok(Self { name, dynamics })
    }

    pub fn from_fn<F>(name: impl Into<String>, n: usize, m: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(name, Arc::new(FnDynamics { n, m, f }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    /// Checked evaluation of `f(x, u)`.
    pub fn eval_dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim(), x.len())?;
        check_len("input", self.input_dim(), u.len())?;
        if x.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::invalid("eval_dynamics needs finite arguments"));
        }
        let mut out = vec![0.0; self.state_dim()];
        self.dynamics.eval(x, u, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dynamics of `{}`", self.name)));
        }
        Ok(out)
    }

    #[inline]
    pub(crate) fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.dynamics.eval(x, u, out)
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// Constant input delays `0 < D₁ ≤ … ≤ D_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DelayConfig {
    delays: Vec<f64>,
}

impl DelayConfig {
    pub fn new(delays: Vec<f64>) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::invalid("at least one delay is required"));
        }
        if delays.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::invalid(format!("delays must be finite and > 0: {delays:?}")));
        }
        if delays.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!("delays must be non-decreasing: {delays:?}")));
        }
        Ok(Self { delays })
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delays
    }

    pub fn delay(&self, i: usize) -> f64 {
        self.delays[i]
    }

    pub fn max(&self) -> f64 {
        *self.delays.last().expect("non-empty")
    }

    /// `D_{i,j} = D_i − D_j`.
    pub fn gap(&self, i: usize, j: usize) -> f64 {
        self.delays[i] - self.delays[j]
    }

    /// Start of stage `k` in look-ahead time: `0` for `k = 0`, else `D_{k-1}`.
    pub fn stage_start(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.delays[k - 1]
        }
    }

    /// Horizon of stage `k`: `D_k − D_{k-1}`.
    pub fn stage_horizon(&self, k: usize) -> f64 {
        self.delays[k] - self.stage_start(k)
    }

    /// Shift-operator arguments `(φ_a, φ_b)` of input `j` inside stage `k`:
    /// the window covers `U_j` over `[t − φ_a, t − φ_b]`.
    pub fn window_shift(&self, stage: usize, input: usize) -> (f64, f64) {
        debug_assert!(input >= stage);
        let dj = self.delays[input];
        (dj - self.stage_start(stage), dj - self.delays[stage])
    }
}

impl TryFrom<Vec<f64>> for DelayConfig {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DelayConfig> for Vec<f64> {
    fn from(d: DelayConfig) -> Self {
        d.delays
    }
}

/// Time-dependent state feedback `κⱼ(t, X)` for every input channel.
pub trait ControlLaw: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, channel: usize, t: f64, x: &[f64]) -> f64;
    fn period(&self) -> Option<f64> {
        None
    }
}

struct FnLaw<F> {
    n: usize,
    m: usize,
    f: F,
}

impl<F> ControlLaw for FnLaw<F>
where
    F: Fn(usize, f64, &[f64]) -> f64 + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, channel: usize, t: f64, x: &[f64]) -> f64 {
        (self.f)(channel, t, x)
    }
}

/// The feedback laws of a system together with optional Lipschitz constants.
#[derive(Clone)]
pub struct ControlLawSet {
    law: Arc<dyn ControlLaw>,
    lipschitz: Option<Vec<f64>>,
}

impl fmt::Debug for ControlLawSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlLawSet")
            .field("m", &self.input_dim())
            .field("period", &self.period())
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl ControlLawSet {
    /// Wraps a law, checking `κⱼ(t, 0) = 0` on a handful of times.
    pub fn new(law: Arc<dyn ControlLaw>) -> Result<Self> {
        let zero = vec![0.0; law.state_dim()];
        for &t in &[0.0, 0.37, 1.0, std::f64::consts::PI, 10.0] {
            for j in 0..law.input_dim() {
                let v = law.eval(j, t, &zero);
                if v != 0.0 {
                    return Err(Error::invalid(format!(
                        "control law {j} is not zero at the origin (t = {t}, value {v})"
                    )));
                }
            }
        }
        if let Some(p) = law.period() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::invalid(format!("law period must be positive, got {p}")));
            }
        }
        Ok(Self { law, lipschitz: None })
    }

    pub fn from_fn<F>(n: usize, m: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(Arc::new(FnLaw { n, m, f }))
    }

    pub fn with_lipschitz(mut self, constants: Vec<f64>) -> Result<Self> {
        check_len("law Lipschitz constants", self.input_dim(), constants.len())?;
        if constants.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("Lipschitz constants must be finite and >= 0"));
        }
        self.lipschitz = Some(constants);
        Ok(self)
    }

    pub fn lipschitz(&self) -> Option<&[f64]> {
        self.lipschitz.as_deref()
    }

    pub fn state_dim(&self) -> usize {
        self.law.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.law.input_dim()
    }

    pub fn period(&self) -> Option<f64> {
        self.law.period()
    }

    #[inline]
    pub fn eval(&self, channel: usize, t: f64, x: &[f64]) -> f64 {
        self.law.eval(channel, t, x)
    }

    pub fn eval_all(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (0..self.input_dim()).map(|j| self.law.eval(j, t, x)).collect()
    }

    pub(crate) fn check_system(&self, system: &SystemModel) -> Result<()> {
        check_len("law state dimension", system.state_dim(), self.state_dim())?;
        check_len("law input count", system.input_dim(), self.input_dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_is_enforced() {
        let bad = SystemModel::from_fn("bad", 1, 1, |x, u, out| out[0] = x[0] + u[0] + 1.0);
        assert!(bad.is_err());
        let ok = SystemModel::from_fn("ok", 1, 1, |x, u, out| out[0] = x[0] + u[0]).unwrap();
        assert_eq!(ok.eval_dynamics(&[2.0], &[1.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn eval_dynamics_rejects_bad_shapes_and_nan() {
        let sys = SystemModel::from_fn("lin", 1, 1, |x, u, out| out[0] = x[0] + u[0]).unwrap();
        assert!(matches!(
            sys.eval_dynamics(&[1.0, 2.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(sys.eval_dynamics(&[f64::NAN], &[0.0]).is_err());
        // NaN at the origin counts as a broken equilibrium
        assert!(SystemModel::from_fn("nan", 1, 1, |x, _u, out| out[0] = x[0] / x[0]).is_err());
        let recip = SystemModel::from_fn("recip", 1, 1, |x, _u, out| {
            out[0] = if x[0] == 0.0 { 0.0 } else { 1.0 / (x[0] - 1.0) }
        })
        .unwrap();
        assert!(matches!(recip.eval_dynamics(&[1.0], &[0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn delay_config_orders_and_gaps() {
        assert!(DelayConfig::new(vec![0.5, 0.2]).is_err());
        assert!(DelayConfig::new(vec![0.0, 0.2]).is_err());
        let d = DelayConfig::new(vec![0.25, 0.6]).unwrap();
        assert_eq!(d.gap(1, 1), 0.0);
        assert!((d.gap(1, 0) - 0.35).abs() < 1e-15);
        assert_eq!(d.stage_start(0), 0.0);
        assert_eq!(d.stage_horizon(0), 0.25);
        assert_eq!(d.window_shift(0, 0), (0.25, 0.0));
        // stage 0 sees input 1 over [t - D2, t - D2 + D1]
        let (a, b) = d.window_shift(0, 1);
        assert!((a - 0.6).abs() < 1e-15 && (b - 0.35).abs() < 1e-15);
        assert_eq!(d.window_shift(1, 1), (0.35, 0.0));
    }

    #[test]
    fn law_must_vanish_at_origin() {
        assert!(ControlLawSet::from_fn(1, 1, |_, _, x| 1.0 - x[0]).is_err());
        let law = ControlLawSet::from_fn(1, 1, |_, _, x| -2.0 * x[0]).unwrap();
        assert_eq!(law.eval_all(0.0, &[1.0]), vec![-2.0]);
        assert!(law.clone().with_lipschitz(vec![-1.0]).is_err());
        assert!(law.with_lipschitz(vec![2.0]).is_ok());
    }
}
