//! Built-in plants and feedback laws, selectable by name.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::system::{ControlLaw, ControlLawSet, DelayConfig, Dynamics, SystemModel};

pub const BUILTIN_NAMES: [&str; 3] = ["unicycle", "linear1", "linear2"];

/// Kinematic unicycle `ẋ = U₂ cos θ, ẏ = U₂ sin θ, θ̇ = U₁` with `U₁` the
/// turning rate and `U₂` the forward speed.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unicycle;

impl Dynamics for Unicycle {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }
    #[inline]
    fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        out[0] = u[1] * c;
        out[1] = u[1] * s;
        out[2] = u[0];
    }
    fn lipschitz(&self, _x_bound: f64, u_bound: f64) -> Option<f64> {
        // |Δf| ≤ |ΔU₂| + ū|Δθ| + |ΔU₁|
        Some(u_bound.max(1.0))
    }
}

/// `(ẋ, ẏ, θ̇)` of the unicycle.
pub fn unicycle_dynamics(x: &[f64; 3], u: &[f64; 2]) -> [f64; 3] {
    let mut out = [0.0; 3];
    Unicycle.eval(x, u, &mut out);
    out
}

/// Scalar plant `ẋ = a x + Σ bⱼ uⱼ`.
#[derive(Debug, Clone)]
pub struct LinearScalar {
    pub a: f64,
    pub b: Vec<f64>,
}

impl Dynamics for LinearScalar {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        self.b.len()
    }
    #[inline]
    fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0] + self.b.iter().zip(u).map(|(b, u)| b * u).sum::<f64>();
    }
    fn lipschitz(&self, _x_bound: f64, _u_bound: f64) -> Option<f64> {
        Some(self.b.iter().fold(self.a.abs(), |acc, b| acc.max(b.abs())))
    }
}

/// Time-periodic smooth feedback for the unicycle (Pomet-type).
///
/// With `p = x cos θ + y sin θ` and `q = x sin θ − y cos θ`:
///
/// ```text
/// ω = −a p² cos(w t) − p q (1 + a² cos²(w t)) − θ
/// v = −p + a q (sin(w t) − cos(w t)) + q ω
/// ```
///
/// Channel 0 is the turning rate `ω`, channel 1 the speed `v`.
#[derive(Debug, Clone, Copy)]
pub struct PometLaw {
    pub gain: f64,
    pub frequency: f64,
}

impl Default for PometLaw {
    fn default() -> Self {
        Self {
            gain: 3.5,
            frequency: 3.0,
        }
    }
}

impl PometLaw {
    #[inline]
    pub fn controls(&self, t: f64, x: &[f64]) -> [f64; 2] {
        let (s, c) = x[2].sin_cos();
        let p = x[0] * c + x[1] * s;
        let q = x[0] * s - x[1] * c;
        let (st, ct) = (self.frequency * t).sin_cos();
        let a = self.gain;
        let omega = -a * p * p * ct - p * q * (1.0 + a * a * ct * ct) - x[2];
        let v = -p + a * q * (st - ct) + q * omega;
        [omega, v]
    }
}

impl ControlLaw for PometLaw {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }
    #[inline]
    fn eval(&self, channel: usize, t: f64, x: &[f64]) -> f64 {
        self.controls(t, x)[channel]
    }
    fn period(&self) -> Option<f64> {
        Some(2.0 * PI / self.frequency)
    }
}

/// `κⱼ(x) = −kⱼ x` for a scalar state.
#[derive(Debug, Clone)]
pub struct LinearFeedback {
    pub gains: Vec<f64>,
}

impl ControlLaw for LinearFeedback {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        self.gains.len()
    }
    fn eval(&self, channel: usize, _t: f64, x: &[f64]) -> f64 {
        -self.gains[channel] * x[0]
    }
}

/// A plant bundled with its default feedback laws and delays.
#[derive(Debug, Clone)]
pub struct Builtin {
    pub system: SystemModel,
    pub laws: ControlLawSet,
    pub delays: DelayConfig,
}

fn linear(name: &str, b: Vec<f64>, gains: Vec<f64>, delays: Vec<f64>) -> Result<Builtin> {
    let system = SystemModel::new(name, Arc::new(LinearScalar { a: 1.0, b }))?;
    let lip = gains.iter().map(|g| g.abs()).collect();
    let laws = ControlLawSet::new(Arc::new(LinearFeedback { gains }))?.with_lipschitz(lip)?;
    Ok(Builtin {
        system,
        laws,
        delays: DelayConfig::new(delays)?,
    })
}

/// Looks up a built-in system by name.
pub fn builtin(name: &str) -> Result<Builtin> {
    match name {
        "unicycle" => Ok(Builtin {
            system: SystemModel::new("unicycle", Arc::new(Unicycle))?,
            laws: ControlLawSet::new(Arc::new(PometLaw::default()))?,
            delays: DelayConfig::new(vec![0.25, 0.6])?,
        }),
        "linear1" => linear("linear1", vec![1.0], vec![2.0], vec![0.5]),
        "linear2" => linear("linear2", vec![1.0, 1.0], vec![2.0, 1.0], vec![0.2, 0.5]),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}
