//! C interface to predfeed.
//!
//! Every function returns a [`PfStatus`]; on failure the message is kept per
//! thread and can be read with [`pf_last_error`]. Handles are opaque and must
//! be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use predfeed::bench::{build_evaluator, PredictorChoice};
use predfeed::cascade::{simulate, ClosedLoop, SimulationConfig};
use predfeed::predictor::{
    chain_predictors, lipschitz_bound, GridSpec, LipschitzBoundInputs, PredictorEvaluator, Quadrature,
};
use predfeed::system::HistoryWindow;
use predfeed::systems::{builtin, Builtin};
use predfeed::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotConverged = 4,
    NonFinite = 5,
    UnknownSystem = 6,
    Io = 7,
    Format = 8,
    Checksum = 9,
    Panic = 10,
    Other = 11,
}

fn status_of(e: &Error) -> PfStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::ParameterCount { .. } | Error::CountMismatch { .. } => {
            PfStatus::DimensionMismatch
        }
        Error::InvalidArgument(_) | Error::SpanUnderflow { .. } => PfStatus::InvalidArgument,
        Error::NotConverged { .. } => PfStatus::NotConverged,
        Error::NonFinite(_) | Error::Diverged { .. } => PfStatus::NonFinite,
        Error::UnknownSystem(_) => PfStatus::UnknownSystem,
        Error::Io(_) => PfStatus::Io,
        Error::Format(_) | Error::Version(_) | Error::Json(_) => PfStatus::Format,
        Error::Checksum { .. } => PfStatus::Checksum,
        Error::Stage { source, .. } => status_of(source),
        _ => PfStatus::Other,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(PfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PfStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside predfeed".into());
            PfStatus::Panic
        }
    }
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// A built-in plant with its feedback laws and delays.
pub struct PfSystem {
    inner: Builtin,
}

/// A predictor implementation.
pub struct PfPredictor {
    inner: Box<dyn PredictorEvaluator>,
}

/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_system_new(name: *const c_char, out: *mut *mut PfSystem) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = builtin(read_str(name, "name")?)?;
        *out = Box::into_raw(Box::new(PfSystem { inner }));
        Ok(())
    })
}

/// # Safety
/// `system` must come from `pf_system_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pf_system_free(system: *mut PfSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// State dimension, input count and largest delay.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_system_dims(
    system: *const PfSystem,
    state_dim: *mut usize,
    input_dim: *mut usize,
    max_delay: *mut f64,
) -> PfStatus {
    guard(|| {
        let s = system.as_ref().ok_or_else(|| null("system"))?;
        if state_dim.is_null() || input_dim.is_null() || max_delay.is_null() {
            return Err(null("output"));
        }
        *state_dim = s.inner.system.state_dim();
        *input_dim = s.inner.system.input_dim();
        *max_delay = s.inner.delays.max();
        Ok(())
    })
}

/// `kind`: 0 fixed point (trapezoid), 1 fixed point (cubic), 2 ODE oracle.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_predictor_new(kind: u32, out: *mut *mut PfPredictor) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (choice, quadrature) = match kind {
            0 => (PredictorChoice::FixedPoint, Quadrature::Trapezoid),
            1 => (PredictorChoice::FixedPoint, Quadrature::Cubic),
            2 => (PredictorChoice::OdeOracle, Quadrature::Trapezoid),
            k => {
                return Err(Failure(
                    PfStatus::InvalidArgument,
                    format!("unknown predictor kind {k}"),
                ))
            }
        };
        let inner = build_evaluator(&choice, quadrature)?;
        *out = Box::into_raw(Box::new(PfPredictor { inner }));
        Ok(())
    })
}

/// Loads one model file per stage, in stage order.
///
/// # Safety
/// `paths` must hold `count` NUL-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_predictor_load(
    paths: *const *const c_char,
    count: usize,
    out: *mut *mut PfPredictor,
) -> PfStatus {
    guard(|| {
        if out.is_null() || paths.is_null() {
            return Err(null("paths or out"));
        }
        let paths = slice::from_raw_parts(paths, count)
            .iter()
            .map(|p| read_str(*p, "path").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let inner = build_evaluator(&PredictorChoice::Model { paths }, Quadrature::Trapezoid)?;
        *out = Box::into_raw(Box::new(PfPredictor { inner }));
        Ok(())
    })
}

/// # Safety
/// `predictor` must come from a `pf_predictor_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pf_predictor_free(predictor: *mut PfPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Chained predictions `P_1..P_m` of `state` at the newest history sample.
///
/// `history` is row-major `m × len`: row `j` holds input `j` at times
/// `t_now − (len − 1 − k) dt`. It must cover the largest delay plus two
/// samples. `out` receives `m × n` values.
///
/// # Safety
/// Handles must be valid; buffers must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pf_predict(
    system: *const PfSystem,
    predictor: *const PfPredictor,
    state: *const f64,
    state_len: usize,
    history: *const f64,
    len: usize,
    dt: f64,
    t_now: f64,
    out: *mut f64,
    out_len: usize,
) -> PfStatus {
    guard(|| {
        let s = &system.as_ref().ok_or_else(|| null("system"))?.inner;
        let p = &predictor.as_ref().ok_or_else(|| null("predictor"))?.inner;
        let (n, m) = (s.system.state_dim(), s.system.input_dim());
        let x = read_slice(state, state_len, "state")?;
        let h = read_slice(history, m * len, "history")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != n * m {
            return Err(Error::DimensionMismatch {
                what: "prediction buffer",
                expected: n * m,
                got: out_len,
            }
            .into());
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Failure(PfStatus::InvalidArgument, format!("dt must be > 0, got {dt}")));
        }
        let needed = (s.delays.max() / dt - 1e-9).ceil() as usize + 2;
        if len < needed {
            return Err(Failure(
                PfStatus::InvalidArgument,
                format!("history has {len} samples per input, needs {needed}"),
            ));
        }
        let window = HistoryWindow::new(m, dt, s.delays.max(), t_now, |j, tau| {
            let back = ((t_now - tau) / dt).round() as usize;
            h[j * len + len - 1 - back.min(len - 1)]
        })?;
        let preds = chain_predictors(
            x,
            &window,
            &s.delays,
            &s.system,
            &s.laws,
            GridSpec::Spacing(dt),
            p.as_ref(),
        )?;
        let dst = slice::from_raw_parts_mut(out, out_len);
        for (i, sol) in preds.iter().enumerate() {
            dst[i * n..(i + 1) * n].copy_from_slice(sol.terminal());
        }
        Ok(())
    })
}

/// Closed loop from `x0` with zero initial inputs and no measurement noise.
/// Writes the summed `|X| dt` residual and the final `Γ`.
///
/// # Safety
/// Handles must be valid; `x0` must hold `state_len` values.
#[no_mangle]
pub unsafe extern "C" fn pf_simulate(
    system: *const PfSystem,
    predictor: *const PfPredictor,
    x0: *const f64,
    state_len: usize,
    dt: f64,
    horizon: f64,
    residual: *mut f64,
    gamma_final: *mut f64,
) -> PfStatus {
    guard(|| {
        let s = &system.as_ref().ok_or_else(|| null("system"))?.inner;
        let p = &predictor.as_ref().ok_or_else(|| null("predictor"))?.inner;
        if residual.is_null() || gamma_final.is_null() {
            return Err(null("output"));
        }
        let x = read_slice(x0, state_len, "x0")?;
        let lp = ClosedLoop::new(s.system.clone(), s.laws.clone(), s.delays.clone(), dt)?;
        let state = lp.initial_state(x, |_, _| 0.0)?;
        let cfg = SimulationConfig {
            horizon,
            diag_stride: 10,
            ..SimulationConfig::default()
        };
        let o = simulate(&lp, state, p.as_ref(), &cfg)?;
        *residual = o.residual;
        *gamma_final = o.gamma.last().unwrap_or(0.0);
        Ok(())
    })
}

/// Operator Lipschitz bound: writes `C_P`, `Ξ` and `C_κ`.
///
/// # Safety
/// `c_kappa` must hold `m` values; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_lipschitz_bound(
    c_f: f64,
    c_kappa: *const f64,
    m: usize,
    x_bar: f64,
    u_bar: f64,
    phi_bar: f64,
    c_p: *mut f64,
    xi: *mut f64,
    c_kappa_total: *mut f64,
) -> PfStatus {
    guard(|| {
        if c_p.is_null() || xi.is_null() || c_kappa_total.is_null() {
            return Err(null("output"));
        }
        let inputs = LipschitzBoundInputs {
            c_f,
            c_kappa: read_slice(c_kappa, m, "c_kappa")?.to_vec(),
            x_bar,
            u_bar,
            phi_bar,
        };
        let b = lipschitz_bound(&inputs)?;
        *c_p = b.c_p;
        *xi = b.xi;
        *c_kappa_total = b.c_kappa;
        Ok(())
    })
}
