//! Interpolation helpers on uniform grids.

/// Linear interpolation of uniformly spaced samples at fractional index `pos`.
/// `pos` is clamped to the sampled range.
#[inline]
pub fn linear_at(values: &[f64], pos: f64) -> f64 {
    let last = values.len() - 1;
    if pos <= 0.0 {
        return values[0];
    }
    if pos >= last as f64 {
        return values[last];
    }
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if frac == 0.0 {
        values[k]
    } else {
        values[k] + frac * (values[k + 1] - values[k])
    }
}

/// Value halfway between samples `k` and `k + 1` from a four-point cubic
/// Lagrange stencil (one-sided near the ends). Falls back to the linear
/// midpoint when fewer than four samples exist.
#[inline]
pub fn cubic_midpoint(values: &[f64], k: usize) -> f64 {
    let n = values.len();
    debug_assert!(k + 1 < n);
    if n < 4 {
        return 0.5 * (values[k] + values[k + 1]);
    }
    if k == 0 {
        (5.0 * values[0] + 15.0 * values[1] - 5.0 * values[2] + values[3]) / 16.0
    } else if k + 2 >= n {
        (values[k - 2] - 5.0 * values[k - 1] + 15.0 * values[k] + 5.0 * values[k + 1]) / 16.0
    } else {
        (-values[k - 1] + 9.0 * values[k] + 9.0 * values[k + 1] - values[k + 2]) / 16.0
    }
}

/// Resamples `values` (uniform on [0, 1]) to `ns` uniform points by linear interpolation.
pub fn resample_linear(values: &[f64], ns: usize) -> Vec<f64> {
    if values.len() == ns {
        return values.to_vec();
    }
    let scale = (values.len() - 1) as f64 / (ns - 1) as f64;
    (0..ns).map(|k| linear_at(values, k as f64 * scale)).collect()
}

/// Resamples an `len × dim` row-major trajectory to `ns` rows.
pub fn resample_rows(values: &[f64], dim: usize, ns: usize) -> Vec<f64> {
    let len = values.len() / dim;
    if len == ns {
        return values.to_vec();
    }
    let scale = (len - 1) as f64 / (ns - 1) as f64;
    let mut out = Vec::with_capacity(ns * dim);
    for k in 0..ns {
        let pos = k as f64 * scale;
        let lo = (pos.floor() as usize).min(len - 1);
        let frac = pos - lo as f64;
        for d in 0..dim {
            let a = values[lo * dim + d];
            if frac == 0.0 || lo + 1 == len {
                out.push(a);
            } else {
                out.push(a + frac * (values[(lo + 1) * dim + d] - a));
            }
        }
    }
    out
}

/// Number of grid points covering a horizon `phi` with spacing at most `dx`.
pub fn points_for_spacing(phi: f64, dx: f64) -> usize {
    let cells = (phi / dx - 1e-9).ceil().max(1.0) as usize;
    cells + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_midpoint_exact_for_cubics() {
        let f = |x: f64| 2.0 - x + 0.5 * x * x - 0.25 * x * x * x;
        let vals: Vec<f64> = (0..7).map(|k| f(k as f64)).collect();
        for k in 0..6 {
            let exact = f(k as f64 + 0.5);
            assert!((cubic_midpoint(&vals, k) - exact).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn linear_resampling_keeps_affine_signals() {
        let vals: Vec<f64> = (0..11).map(|k| 0.3 + 0.1 * k as f64).collect();
        let r = resample_linear(&vals, 4);
        for (k, v) in r.iter().enumerate() {
            assert!((v - (0.3 + k as f64 / 3.0)).abs() < 1e-14);
        }
        let rows = resample_rows(&[0.0, 1.0, 2.0, 3.0], 2, 3);
        assert_eq!(rows, vec![0.0, 1.0, 1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn spacing_points() {
        assert_eq!(points_for_spacing(0.25, 0.001), 251);
        assert_eq!(points_for_spacing(0.35, 0.001), 351);
        assert_eq!(points_for_spacing(0.25, 0.01), 26);
        assert_eq!(points_for_spacing(0.0, 0.01), 2);
    }
}
