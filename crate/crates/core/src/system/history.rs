use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::interp;

/// Samples of a scalar function on the normalized grid `s_k = k / (Ns − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWindow {
    values: Vec<f64>,
}

impl SampledWindow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "a sampled window needs at least 2 points, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sampled window contains non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn constant(value: f64, ns: usize) -> Result<Self> {
        Self::new(vec![value; ns])
    }

    pub fn from_fn(ns: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if ns < 2 {
            return Err(Error::invalid("a sampled window needs at least 2 points"));
        }
        let h = 1.0 / (ns - 1) as f64;
        Self::new((0..ns).map(|k| f(k as f64 * h)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Linear interpolation at `s ∈ [0, 1]`.
    pub fn at(&self, s: f64) -> f64 {
        interp::linear_at(&self.values, s * (self.values.len() - 1) as f64)
    }

    pub fn resample(&self, ns: usize) -> Result<Self> {
        if ns < 2 {
            return Err(Error::invalid("cannot resample below 2 points"));
        }
        Ok(Self {
            values: interp::resample_linear(&self.values, ns),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Per-input sample buffers over `[t − span, t]` on a uniform time grid.
///
/// Buffers keep one sample beyond the requested span so that queries at the
/// left boundary never touch the edge of storage.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    dt: f64,
    origin: f64,
    latest: u64,
    capacity: usize,
    buffers: Vec<VecDeque<f64>>,
}

// relative slack on time-to-index conversion
const INDEX_EPS: f64 = 1e-7;

impl HistoryWindow {
    /// Creates buffers for `inputs` channels at current time `t_now`, filled
    /// from `init(channel, τ)` for τ ≤ `t_now`.
    pub fn new(inputs: usize, dt: f64, span: f64, t_now: f64, init: impl Fn(usize, f64) -> f64) -> Result<Self> {
        if inputs == 0 {
            return Err(Error::invalid("history needs at least one channel"));
        }
        if !(dt.is_finite() && dt > 0.0 && span.is_finite() && span > 0.0) {
            return Err(Error::invalid(format!("bad history grid: dt = {dt}, span = {span}")));
        }
        let cells = (span / dt - 1e-9).ceil() as usize;
        let capacity = cells + 2;
        let buffers = (0..inputs)
            .map(|i| {
                (0..capacity)
                    .map(|k| init(i, t_now - (capacity - 1 - k) as f64 * dt))
                    .collect::<VecDeque<f64>>()
            })
            .collect();
        Ok(Self {
            dt,
            origin: t_now,
            latest: 0,
            capacity,
            buffers,
        })
    }

    pub fn inputs(&self) -> usize {
        self.buffers.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of the newest sample.
    pub fn time(&self) -> f64 {
        self.origin + self.latest as f64 * self.dt
    }

    pub fn oldest_time(&self) -> f64 {
        self.time() - (self.capacity - 1) as f64 * self.dt
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends one sample per channel and advances time by `dt`.
    pub fn push(&mut self, values: &[f64]) -> Result<()> {
        super::check_len("history push", self.inputs(), values.len())?;
        for (buf, v) in self.buffers.iter_mut().zip(values) {
            buf.pop_front();
            buf.push_back(*v);
        }
        self.latest += 1;
        Ok(())
    }

    /// Overwrites the newest sample of every channel.
    pub fn set_latest(&mut self, values: &[f64]) -> Result<()> {
        super::check_len("history update", self.inputs(), values.len())?;
        for (buf, v) in self.buffers.iter_mut().zip(values) {
            *buf.back_mut().expect("non-empty buffer") = *v;
        }
        Ok(())
    }

    pub fn latest(&self, channel: usize) -> f64 {
        *self.buffers[channel].back().expect("non-empty buffer")
    }

    pub fn samples(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        self.buffers[channel].iter().copied()
    }

    /// `U_channel(τ)`, linearly interpolated.
    pub fn value(&self, channel: usize, tau: f64) -> Result<f64> {
        if channel >= self.inputs() {
            return Err(Error::invalid(format!("no history channel {channel}")));
        }
        let pos = (tau - self.oldest_time()) / self.dt;
        let last = (self.capacity - 1) as f64;
        let slack = INDEX_EPS * (1.0 + last);
        if !(pos >= -slack && pos <= last + slack) {
            return Err(Error::SpanUnderflow {
                query: tau,
                start: self.oldest_time(),
                end: self.time(),
            });
        }
        let buf = &self.buffers[channel];
        let pos = pos.clamp(0.0, last);
        let k = (pos.floor() as usize).min(self.capacity - 2);
        let frac = pos - k as f64;
        Ok(buf[k] + frac * (buf[k + 1] - buf[k]))
    }
}

/// Shift operator `(T_{φa,φb}(t) U)(s) = U(t − φa + (φa − φb) s)` sampled on
/// `ns` normalized points.
pub fn shift_window(
    history: &HistoryWindow,
    channel: usize,
    phi_a: f64,
    phi_b: f64,
    ns: usize,
) -> Result<SampledWindow> {
    if !(phi_b >= 0.0 && phi_a >= phi_b) {
        return Err(Error::invalid(format!(
            "shift window needs phi_a >= phi_b >= 0, got ({phi_a}, {phi_b})"
        )));
    }
    if ns < 2 {
        return Err(Error::invalid("shift window needs at least 2 points"));
    }
    let t = history.time();
    let width = phi_a - phi_b;
    let h = 1.0 / (ns - 1) as f64;
    let values = (0..ns)
        .map(|k| history.value(channel, t - phi_a + width * (k as f64 * h)))
        .collect::<Result<Vec<_>>>()?;
    SampledWindow::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_history(dt: f64, span: f64, t: f64) -> HistoryWindow {
        HistoryWindow::new(1, dt, span, t, |_, tau| tau).unwrap()
    }

    #[test]
    fn linear_signal_window() {
        let h = ramp_history(0.01, 0.6, 1.0);
        let w = shift_window(&h, 0, 0.6, 0.25, 11).unwrap();
        for (k, v) in w.values().iter().enumerate() {
            let s = k as f64 / 10.0;
            assert!((v - (0.4 + 0.35 * s)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_gap_is_constant() {
        let h = HistoryWindow::new(1, 0.01, 1.0, 2.0, |_, tau| tau.sin()).unwrap();
        let w = shift_window(&h, 0, 0.5, 0.5, 7).unwrap();
        let expected = h.value(0, 1.5).unwrap();
        assert!(w.values().iter().all(|v| *v == expected));
        assert!((expected - 1.5f64.sin()).abs() < 1e-4);
    }

    #[test]
    fn endpoints_match_shift_arguments() {
        let h = HistoryWindow::new(1, 0.003, 1.0, 0.0, |_, tau| (3.0 * tau).cos()).unwrap();
        let w = shift_window(&h, 0, 0.9, 0.12, 33).unwrap();
        assert!((w.values()[0] - h.value(0, -0.9).unwrap()).abs() < 1e-12);
        assert!((w.values()[32] - h.value(0, -0.12).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn span_and_argument_errors() {
        let h = ramp_history(0.01, 0.5, 0.0);
        assert!(matches!(
            shift_window(&h, 0, 0.7, 0.1, 5),
            Err(Error::SpanUnderflow { .. })
        ));
        assert!(shift_window(&h, 0, 0.1, 0.2, 5).is_err());
        assert!(h.value(0, 0.05).is_err());
        // the extra sample past the span is still addressable
        assert!(h.value(0, -0.51).is_ok());
    }

    #[test]
    fn push_advances_time() {
        let mut h = HistoryWindow::new(2, 0.1, 0.3, 0.0, |_, _| 0.0).unwrap();
        assert_eq!(h.capacity(), 5);
        h.push(&[1.0, 2.0]).unwrap();
        h.push(&[3.0, 4.0]).unwrap();
        assert!((h.time() - 0.2).abs() < 1e-15);
        assert!((h.value(1, 0.1).unwrap() - 2.0).abs() < 1e-12);
        assert!((h.value(0, 0.15).unwrap() - 2.0).abs() < 1e-12);
        h.set_latest(&[5.0, 6.0]).unwrap();
        assert_eq!(h.latest(1), 6.0);
        assert!(h.push(&[1.0]).is_err());
    }

    #[test]
    fn history_grid_points_match_shift_operator() {
        // (φa, φb) = (D_i, D_{i-1}) reproduces U(t − D_i + (D_i − D_{i-1}) s) at
        // points where the normalized grid lands on history samples.
        let dt = 0.001;
        let h = HistoryWindow::new(1, dt, 0.6, 3.0, |_, tau| (tau * 7.0).sin() * tau).unwrap();
        let w = shift_window(&h, 0, 0.6, 0.25, 351).unwrap();
        for k in 0..351 {
            let tau = 3.0 - 0.6 + 0.35 * k as f64 / 350.0;
            let exact = (tau * 7.0).sin() * tau;
            assert!((w.values()[k] - exact).abs() < 1e-12);
        }
    }
}
