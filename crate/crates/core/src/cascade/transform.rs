use super::{CascadeState, ClosedLoop};
use crate::error::{Error, Result};
use crate::interp;
use crate::system::check_len;

/// Predictor profile `p(x, t)` over `x ∈ [0, D_m]` on the field grid. Stage
/// `i` occupies `[D_{i-1}, D_i]` and hands its end value to the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct PdePredictor {
    pub t: f64,
    /// Row-major `(N_m + 1) × n`.
    pub rows: Vec<f64>,
    pub n: usize,
    cells: Vec<usize>,
}

impl PdePredictor {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.n..(k + 1) * self.n]
    }

    /// `p_i(D_i, t)`.
    pub fn at_delay(&self, i: usize) -> &[f64] {
        self.row(self.cells[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Target-system fields `w_i = u_i − κ_i(p)` on the grids of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub t: f64,
    /// `w_i(k·dt, t)`; the last sample is the boundary residual `r_i`.
    pub fields: Vec<Vec<f64>>,
    /// `U_i(t − dt) − κ_i(p_i(D_i))`: the held boundary seen by the predictors.
    pub held: Vec<f64>,
}

impl TargetState {
    /// `r_i(t) = w_i(D_i, t)`.
    pub fn residuals(&self) -> Vec<f64> {
        self.fields
            .iter()
            .map(|f| *f.last().expect("non-empty field"))
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Pos {
    Node(usize),
    /// Half-way between `l` and `l + 1`.
    Mid(usize),
}

/// Per-stage copies of a family of fields with the held value substituted at
/// each field's own boundary; `slices[k][j - k]` covers `[D_{k-1}, D_k]`.
fn stage_slices(lp: &ClosedLoop, fields: &[Vec<f64>], held: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let m = lp.input_dim();
    (0..m)
        .map(|k| {
            let lo = if k == 0 { 0 } else { lp.cells(k - 1) };
            let hi = lp.cells(k);
            (k..m)
                .map(|j| {
                    let mut s = fields[j][lo..=hi].to_vec();
                    if hi == lp.cells(j) {
                        s[hi - lo] = held[j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn slice_value(slices: &[Vec<Vec<f64>>], lp: &ClosedLoop, stage: usize, j: usize, pos: Pos) -> f64 {
    let lo = if stage == 0 { 0 } else { lp.cells(stage - 1) };
    let s = &slices[stage][j - stage];
    match pos {
        Pos::Node(l) => s[l - lo],
        Pos::Mid(l) => interp::cubic_midpoint(s, l - lo),
    }
}

/// RK4 in `x` over every stage; `input(stage, j, pos, x, state)` gives `u_j`.
fn march<F>(lp: &ClosedLoop, x0: &[f64], mut input: F) -> Result<Vec<f64>>
where
    F: FnMut(usize, usize, Pos, f64, &[f64]) -> f64,
{
    let n = lp.state_dim();
    let m = lp.input_dim();
    let h = lp.dt();
    let total = lp.cells(m - 1);
    let mut rows = vec![0.0; (total + 1) * n];
    rows[..n].copy_from_slice(x0);
    let mut u = vec![0.0; m];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];

    let mut eval = |stage: usize, pos: Pos, x: f64, state: &[f64], u: &mut [f64], out: &mut [f64]| {
        for (j, slot) in u.iter_mut().enumerate() {
            *slot = input(stage, j, pos, x, state);
        }
        lp.system.eval_into(state, u, out);
    };

    for stage in 0..m {
        let lo = if stage == 0 { 0 } else { lp.cells(stage - 1) };
        for l in lo..lp.cells(stage) {
            let x = l as f64 * h;
            let (done, rest) = rows.split_at_mut((l + 1) * n);
            let p = &done[l * n..];
            eval(stage, Pos::Node(l), x, p, &mut u, &mut k1);
            for d in 0..n {
                tmp[d] = p[d] + 0.5 * h * k1[d];
            }
            eval(stage, Pos::Mid(l), x + 0.5 * h, &tmp, &mut u, &mut k2);
            for d in 0..n {
                tmp[d] = p[d] + 0.5 * h * k2[d];
            }
            eval(stage, Pos::Mid(l), x + 0.5 * h, &tmp, &mut u, &mut k3);
            for d in 0..n {
                tmp[d] = p[d] + h * k3[d];
            }
            eval(stage, Pos::Node(l + 1), x + h, &tmp, &mut u, &mut k4);
            for d in 0..n {
                rest[d] = p[d] + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            }
        }
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transport-form predictor".into()));
    }
    Ok(rows)
}

/// Predictors in transport form: `∂_x p = f(p, κ_0(p), …, κ_{i-1}(p), u_i, …, u_m)`
/// on `[D_{i-1}, D_i]`, starting from `p(0) = X`, with laws at time `t + x`.
pub fn pde_predictors(lp: &ClosedLoop, state: &CascadeState) -> Result<PdePredictor> {
    state.check_shape(lp)?;
    let slices = stage_slices(lp, &state.fields, &state.held);
    let t = state.t;
    let rows = march(lp, &state.x, |stage, j, pos, x, p| {
        if j < stage {
            lp.laws.eval(j, t + x, p)
        } else {
            slice_value(&slices, lp, stage, j, pos)
        }
    })?;
    Ok(PdePredictor {
        t,
        rows,
        n: lp.state_dim(),
        cells: (0..lp.input_dim()).map(|i| lp.cells(i)).collect(),
    })
}

fn check_profile(lp: &ClosedLoop, state_t: f64, p: &PdePredictor) -> Result<()> {
    check_len("predictor profile", lp.cells(lp.input_dim() - 1) + 1, p.len())?;
    if p.t != state_t {
        return Err(Error::invalid("predictor profile belongs to a different time"));
    }
    Ok(())
}

/// `w_i(x) = u_i(x) − κ_i(t + x, p(x))`, using the current boundary sample of
/// each field, so `w_i(D_i) = κ_i(P̂_i) − κ_i(P_i)`.
pub fn backstepping_forward(lp: &ClosedLoop, state: &CascadeState, p: &PdePredictor) -> Result<TargetState> {
    state.check_shape(lp)?;
    check_profile(lp, state.t, p)?;
    let t = state.t;
    let h = lp.dt();
    let fields = state
        .fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.iter()
                .enumerate()
                .map(|(l, u)| u - lp.laws.eval(i, t + l as f64 * h, p.row(l)))
                .collect()
        })
        .collect();
    let held = (0..lp.input_dim())
        .map(|i| {
            let l = lp.cells(i);
            state.held[i] - lp.laws.eval(i, t + l as f64 * h, p.row(l))
        })
        .collect();
    Ok(TargetState { t, fields, held })
}

/// Inverts [`backstepping_forward`]: integrates
/// `∂_x π = f(π, κ_0(π), …, w_i + κ_i(π), …)` stage by stage from `π(0) = X`
/// and returns `u_i = w_i + κ_i(π)`.
///
/// The march discretizes a different ODE than the forward transform, which
/// only agree to `O(dt⁴)` on smooth fields; a few defect-correction sweeps
/// through the forward transform then make the round trip exact to rounding.
pub fn backstepping_inverse(lp: &ClosedLoop, ts: &TargetState, x: &[f64]) -> Result<CascadeState> {
    check_len("state", lp.state_dim(), x.len())?;
    check_len("target fields", lp.input_dim(), ts.fields.len())?;
    check_len("target held samples", lp.input_dim(), ts.held.len())?;
    for (i, f) in ts.fields.iter().enumerate() {
        check_len("target field samples", lp.cells(i) + 1, f.len())?;
    }
    let mut state = integrate_inverse(lp, ts, x)?;
    let scale = 1.0 + ts.fields.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for _ in 0..REFINE_SWEEPS {
        let p = pde_predictors(lp, &state)?;
        let again = backstepping_forward(lp, &state, &p)?;
        let mut change: f64 = 0.0;
        for (u, (w, w_again)) in state.fields.iter_mut().zip(ts.fields.iter().zip(&again.fields)) {
            for (u, (a, b)) in u.iter_mut().zip(w.iter().zip(w_again)) {
                *u += a - b;
                change = change.max((a - b).abs());
            }
        }
        for (u, (a, b)) in state.held.iter_mut().zip(ts.held.iter().zip(&again.held)) {
            *u += a - b;
            change = change.max((a - b).abs());
        }
        if !change.is_finite() {
            return Err(Error::NonFinite("inverse transform refinement".into()));
        }
        if change <= REFINE_TOL * scale {
            break;
        }
    }
    Ok(state)
}

const REFINE_SWEEPS: usize = 60;
const REFINE_TOL: f64 = 1e-14;

fn integrate_inverse(lp: &ClosedLoop, ts: &TargetState, x: &[f64]) -> Result<CascadeState> {
    let t = ts.t;
    let h = lp.dt();
    let slices = stage_slices(lp, &ts.fields, &ts.held);
    let rows = march(lp, x, |stage, j, pos, xp, pi| {
        let kappa = lp.laws.eval(j, t + xp, pi);
        if j < stage {
            kappa
        } else {
            slice_value(&slices, lp, stage, j, pos) + kappa
        }
    })?;
    let n = lp.state_dim();
    let row = |l: usize| &rows[l * n..(l + 1) * n];
    let fields = ts
        .fields
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w.iter()
                .enumerate()
                .map(|(l, w)| w + lp.laws.eval(i, t + l as f64 * h, row(l)))
                .collect()
        })
        .collect();
    let held = (0..lp.input_dim())
        .map(|i| {
            let l = lp.cells(i);
            ts.held[i] + lp.laws.eval(i, t + l as f64 * h, row(l))
        })
        .collect();
    Ok(CascadeState {
        t,
        x: x.to_vec(),
        fields,
        held,
    })
}

fn sup(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl CascadeState {
    /// `Γ = |X| + Σ sup_x |u_i(x)|` over the stored grid.
    pub fn gamma(&self) -> f64 {
        euclid(&self.x) + self.fields.iter().map(|f| sup(f)).sum::<f64>()
    }
}

/// `(Γ, Γ̆)` with `Γ̆ = |X| + Σ sup_x |w_i(x)|`.
pub fn compute_gamma(state: &CascadeState, ts: &TargetState) -> (f64, f64) {
    let target = euclid(&state.x) + ts.fields.iter().map(|f| sup(f)).sum::<f64>();
    (state.gamma(), target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ExactPredictor, SolverConfig};
    use crate::systems::builtin;

    fn build(name: &str, dt: f64) -> ClosedLoop {
        let b = builtin(name).unwrap();
        ClosedLoop::new(b.system, b.laws, b.delays, dt).unwrap()
    }

    #[test]
    fn profile_starts_at_state_and_vanishes_at_origin() {
        let lp = build("unicycle", 0.01);
        let s = lp.initial_state(&[0.2, 0.1, -0.4], |i, t| 0.1 * i as f64 * t).unwrap();
        let p = pde_predictors(&lp, &s).unwrap();
        assert_eq!(p.row(0), &s.x[..]);
        let zero = lp.initial_state(&[0.0; 3], |_, _| 0.0).unwrap();
        let p0 = pde_predictors(&lp, &zero).unwrap();
        assert!(p0.rows.iter().all(|v| *v == 0.0));
        let ts = backstepping_forward(&lp, &zero, &p0).unwrap();
        assert!(ts.fields.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(compute_gamma(&zero, &ts), (0.0, 0.0));
    }

    #[test]
    fn scalar_inverse_closed_form() {
        // ẋ = x + u with κ ≡ 0 and w ≡ 0: π(x) = e^x X, so u ≡ 0.
        let sys = crate::system::SystemModel::from_fn("lin", 1, 1, |x, u, o| o[0] = x[0] + u[0]).unwrap();
        let laws = crate::system::ControlLawSet::from_fn(1, 1, |_, _, _| 0.0).unwrap();
        let lp = ClosedLoop::new(sys, laws, crate::system::DelayConfig::new(vec![0.5]).unwrap(), 0.01).unwrap();
        let ts = TargetState {
            t: 0.0,
            fields: vec![vec![0.0; 51]],
            held: vec![0.0],
        };
        let u = backstepping_inverse(&lp, &ts, &[0.7]).unwrap();
        assert!(u.fields[0].iter().all(|v| *v == 0.0));
        let s = lp.initial_state(&[0.7], |_, _| 0.0).unwrap();
        let p = pde_predictors(&lp, &s).unwrap();
        for k in 0..p.len() {
            let exact = 0.7 * (k as f64 * 0.01).exp();
            assert!((p.row(k)[0] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_of_pure_state() {
        let lp = build("unicycle", 0.05);
        let s = lp.initial_state(&[3.0, 4.0, 0.0], |_, _| 0.0).unwrap();
        assert_eq!(s.gamma(), 5.0);
    }

    #[test]
    fn exact_loop_has_zero_boundary_residual() {
        let lp = build("unicycle", 0.005);
        let mut s = lp.initial_state(&[0.4, -0.3, 0.2], |_, _| 0.0).unwrap();
        let eval = ExactPredictor::ode(SolverConfig::default());
        for _ in 0..10 {
            let preds = lp.predict(&s, &s.x, &eval).unwrap();
            let boundary = lp.boundary_inputs(s.t, &preds);
            let p = pde_predictors(&lp, &s).unwrap();
            let mut post = s.clone();
            for (f, b) in post.fields.iter_mut().zip(&boundary) {
                *f.last_mut().unwrap() = *b;
            }
            let ts = backstepping_forward(&lp, &post, &p).unwrap();
            for r in ts.residuals() {
                assert!(r.abs() < 1e-9, "residual {r}");
            }
            lp.advance(&mut s, &boundary).unwrap();
        }
    }
}
