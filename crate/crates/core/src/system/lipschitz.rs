use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ControlLawSet, SystemModel};
use crate::error::{Error, Result};

/// Axis-aligned box `[lo, hi]` in ℝᵈ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        super::check_len("box bounds", lo.len(), hi.len())?;
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b))
        {
            return Err(Error::invalid(format!("bad box bounds {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// `[-r, r]^dim`.
    pub fn symmetric(dim: usize, r: f64) -> Result<Self> {
        Self::new(vec![-r; dim], vec![r; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| if a == b { *a } else { rng.gen_range(*a..=*b) })
            .collect()
    }

    /// Largest Euclidean norm of a point in the box.
    pub fn norm_bound(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute coordinate in the box.
    pub fn abs_bound(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(0.0f64, |acc, (a, b)| acc.max(a.abs()).max(b.abs()))
    }
}

fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Max over all pairs of `|f(a) − f(b)| / (|x_a − x_b| + Σ|u_a − u_b|)`, skipping
/// coincident pairs. Returns `None` when every pair coincides.
pub fn pairwise_lipschitz(points: &[(Vec<f64>, Vec<f64>)], values: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let den = euclid_diff(&points[i].0, &points[j].0) + l1_diff(&points[i].1, &points[j].1);
            if den > 0.0 {
                let ratio = euclid_diff(&values[i], &values[j]) / den;
                best = Some(best.map_or(ratio, |b| b.max(ratio)));
            }
        }
    }
    best
}

/// Sampled lower estimate of the Lipschitz constant `C_f` over `𝒳 × 𝒰ᵐ`.
///
/// Points are drawn sequentially from a seeded stream, so a larger `samples`
/// extends the previous sample set and the estimate never decreases.
pub fn empirical_lipschitz(
    model: &SystemModel,
    states: &BoxSet,
    inputs: &BoxSet,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    super::check_len("state box", model.state_dim(), states.dim())?;
    super::check_len("input box", model.input_dim(), inputs.dim())?;
    if samples < 2 {
        return Err(Error::invalid("empirical Lipschitz estimate needs at least 2 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..samples)
        .map(|_| {
            let x = states.sample(&mut rng);
            let u = inputs.sample(&mut rng);
            (x, u)
        })
        .collect();
    let values = points
        .iter()
        .map(|(x, u)| model.eval_dynamics(x, u))
        .collect::<Result<Vec<_>>>()?;
    pairwise_lipschitz(&points, &values)
        .ok_or_else(|| Error::invalid("degenerate sampling box: all sample pairs coincide"))
}

/// Sampled lower estimate of each law's Lipschitz constant in the state,
/// maximized over `times` (use one period for periodic laws).
pub fn empirical_lipschitz_law(
    laws: &ControlLawSet,
    states: &BoxSet,
    times: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    super::check_len("state box", laws.state_dim(), states.dim())?;
    if samples < 2 || times.is_empty() {
        return Err(Error::invalid("need at least 2 samples and one time"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..samples).map(|_| states.sample(&mut rng)).collect();
    let mut best = vec![0.0f64; laws.input_dim()];
    let mut any = false;
    for &t in times {
        for (j, slot) in best.iter_mut().enumerate() {
            let vals: Vec<f64> = xs.iter().map(|x| laws.eval(j, t, x)).collect();
            for a in 0..xs.len() {
                for b in (a + 1)..xs.len() {
                    let den = euclid_diff(&xs[a], &xs[b]);
                    if den > 0.0 {
                        any = true;
                        *slot = slot.max((vals[a] - vals[b]).abs() / den);
                    }
                }
            }
        }
    }
    if !any {
        return Err(Error::invalid("degenerate sampling box: all sample pairs coincide"));
    }
    Ok(best)
}
