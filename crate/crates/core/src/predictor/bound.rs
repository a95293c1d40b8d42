use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Set bounds and Lipschitz constants entering the operator Lipschitz bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBoundInputs {
    pub c_f: f64,
    /// `C_{κ_i}` for every channel; its length is `m`.
    pub c_kappa: Vec<f64>,
    pub x_bar: f64,
    pub u_bar: f64,
    pub phi_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    pub c_p: f64,
    pub xi: f64,
    pub c_kappa: f64,
}

/// `C_κ = C_f (1 + Σ C_{κᵢ})`,
/// `Ξ = m C_f Ū + C_κ (X̄ + m Φ̄ C_f Ū) e^{Φ̄ C_κ}`,
/// `C_P = max(1, Ξ, Φ̄ C_f) e^{Φ̄ C_κ}`.
pub fn lipschitz_bound(inp: &LipschitzBoundInputs) -> Result<LipschitzBound> {
    let scalars = [inp.c_f, inp.x_bar, inp.u_bar, inp.phi_bar];
    if scalars
        .iter()
        .chain(&inp.c_kappa)
        .any(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(Error::invalid("Lipschitz bound inputs must be finite and non-negative"));
    }
    if inp.c_kappa.is_empty() {
        return Err(Error::invalid("need at least one control law constant"));
    }
    let m = inp.c_kappa.len() as f64;
    let c_kappa = inp.c_f * (1.0 + inp.c_kappa.iter().sum::<f64>());
    let growth = (inp.phi_bar * c_kappa).exp();
    let xi = m * inp.c_f * inp.u_bar + c_kappa * (inp.x_bar + m * inp.phi_bar * inp.c_f * inp.u_bar) * growth;
    let c_p = 1.0f64.max(xi).max(inp.phi_bar * inp.c_f) * growth;
    if !(c_p.is_finite() && xi.is_finite()) {
        return Err(Error::NonFinite(format!(
            "Lipschitz bound overflow (C_kappa = {c_kappa}, exponent {})",
            inp.phi_bar * c_kappa
        )));
    }
    Ok(LipschitzBound { c_p, xi, c_kappa })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(c_f: f64, phi_bar: f64) -> LipschitzBoundInputs {
        LipschitzBoundInputs {
            c_f,
            c_kappa: vec![1.0],
            x_bar: 1.0,
            u_bar: 1.0,
            phi_bar,
        }
    }

    #[test]
    fn collapses_without_dynamics() {
        let b = lipschitz_bound(&inputs(0.0, 1.0)).unwrap();
        assert_eq!((b.c_kappa, b.xi, b.c_p), (0.0, 0.0, 1.0));
    }

    #[test]
    fn unit_inputs_plug_in() {
        let b = lipschitz_bound(&inputs(1.0, 1.0)).unwrap();
        let e2 = 2.0f64.exp();
        assert_eq!(b.c_kappa, 2.0);
        assert!((b.xi - (1.0 + 2.0 * 2.0 * e2)).abs() < 1e-12);
        assert!((b.c_p - b.xi * e2).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_horizon_bound() {
        let mut prev = 0.0;
        for phi in [0.0, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2] {
            let b = lipschitz_bound(&inputs(1.3, phi)).unwrap();
            assert!(b.c_p >= prev);
            prev = b.c_p;
        }
    }

    #[test]
    fn rejects_negative_and_overflow() {
        assert!(lipschitz_bound(&inputs(-1.0, 1.0)).is_err());
        assert!(matches!(lipschitz_bound(&inputs(1e3, 1e3)), Err(Error::NonFinite(_))));
    }
}
