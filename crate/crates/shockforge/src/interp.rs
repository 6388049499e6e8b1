//! Interpolation and finite-difference kernels shared by the solvers.

/// Uniform-grid piecewise-cubic (4-point Lagrange) interpolation of nodal
/// values; exact for cubic polynomials, O(dx^4) for smooth data.
pub fn cubic_uniform(x0: f64, dx: f64, vals: &[f64], x: f64) -> f64 {
    let n = vals.len();
    debug_assert!(n >= 2);
    let s = (x - x0) / dx;
    if n < 4 {
        let k = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
        let f = s - k as f64;
        return vals[k] * (1.0 - f) + vals[k + 1] * f;
    }
    let k = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
    let w = k.saturating_sub(1).min(n - 4);
    let xi = s - w as f64;
    let m0 = -(xi - 1.0) * (xi - 2.0) * (xi - 3.0) / 6.0;
    let m1 = xi * (xi - 2.0) * (xi - 3.0) / 2.0;
    let m2 = -xi * (xi - 1.0) * (xi - 3.0) / 2.0;
    let m3 = xi * (xi - 1.0) * (xi - 2.0) / 6.0;
    vals[w] * m0 + vals[w + 1] * m1 + vals[w + 2] * m2 + vals[w + 3] * m3
}

/// Derivative of `cubic_uniform` with respect to x.
pub fn cubic_uniform_deriv(x0: f64, dx: f64, vals: &[f64], x: f64) -> f64 {
    let n = vals.len();
    let s = (x - x0) / dx;
    if n < 4 {
        let k = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
        return (vals[k + 1] - vals[k]) / dx;
    }
    let k = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
    let w = k.saturating_sub(1).min(n - 4);
    let xi = s - w as f64;
    let d0 = -(3.0 * xi * xi - 12.0 * xi + 11.0) / 6.0;
    let d1 = (3.0 * xi * xi - 10.0 * xi + 6.0) / 2.0;
    let d2 = -(3.0 * xi * xi - 8.0 * xi + 3.0) / 2.0;
    let d3 = (3.0 * xi * xi - 6.0 * xi + 2.0) / 6.0;
    (vals[w] * d0 + vals[w + 1] * d1 + vals[w + 2] * d2 + vals[w + 3] * d3) / dx
}

/// Cubic Lagrange interpolation on a small window of a nonuniform grid.
/// `xs` must be strictly increasing. Falls back to lower order near the ends.
pub fn cubic_nonuniform(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    debug_assert!(n >= 2);
    if n < 4 {
        return lagrange(xs, ys, x);
    }
    let k = bracket(xs, x);
    let lo = k.saturating_sub(1).min(n - 4);
    lagrange(&xs[lo..lo + 4], &ys[lo..lo + 4], x)
}

pub fn cubic_nonuniform_deriv(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n < 4 {
        return lagrange_deriv(xs, ys, x);
    }
    let k = bracket(xs, x);
    let lo = k.saturating_sub(1).min(n - 4);
    lagrange_deriv(&xs[lo..lo + 4], &ys[lo..lo + 4], x)
}

/// Index k with xs[k] <= x < xs[k+1], clamped to [0, n-2].
pub fn bracket(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    }
}

pub fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let m = xs.len();
    let mut s = 0.0;
    for j in 0..m {
        let mut lj = ys[j];
        for k in 0..m {
            if k != j {
                lj *= (x - xs[k]) / (xs[j] - xs[k]);
            }
        }
        s += lj;
    }
    s
}

pub fn lagrange_deriv(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let m = xs.len();
    let mut s = 0.0;
    for j in 0..m {
        let mut dj = 0.0;
        for l in 0..m {
            if l == j {
                continue;
            }
            let mut p = 1.0 / (xs[j] - xs[l]);
            for k in 0..m {
                if k != j && k != l {
                    p *= (x - xs[k]) / (xs[j] - xs[k]);
                }
            }
            dj += p;
        }
        s += ys[j] * dj;
    }
    s
}

/// Monotonicity-limited cubic Hermite (Fritsch-Carlson) on a nonuniform grid.
/// Avoids overshoot at steep gradients.
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n);
        let mut d = vec![0.0; n - 1];
        for k in 0..n - 1 {
            d[k] = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]);
        }
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for k in 1..n - 1 {
            if d[k - 1] * d[k] <= 0.0 {
                m[k] = 0.0;
            } else {
                let w1 = 2.0 * (xs[k + 1] - xs[k]) + (xs[k] - xs[k - 1]);
                let w2 = (xs[k + 1] - xs[k]) + 2.0 * (xs[k] - xs[k - 1]);
                m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
            }
        }
        // Fritsch-Carlson limiting.
        for k in 0..n - 1 {
            if d[k] == 0.0 {
                m[k] = 0.0;
                m[k + 1] = 0.0;
            } else {
                let a = m[k] / d[k];
                let b = m[k + 1] / d[k];
                let r = a * a + b * b;
                if r > 9.0 {
                    let tau = 3.0 / r.sqrt();
                    m[k] = tau * a * d[k];
                    m[k + 1] = tau * b * d[k];
                }
            }
        }
        MonotoneCubic { xs, ys, slopes: m }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = bracket(&self.xs, x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = ((x - self.xs[k]) / h).clamp(0.0, 1.0);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

/// 4th-order first derivative of uniformly sampled values, one-sided at edges.
pub fn deriv1_o4(vals: &[f64], dx: f64, out: &mut [f64]) {
    let n = vals.len();
    assert!(n >= 7);
    let c = 1.0 / (12.0 * dx);
    for k in 2..n - 2 {
        out[k] = c * (vals[k - 2] - 8.0 * vals[k - 1] + 8.0 * vals[k + 1] - vals[k + 2]);
    }
    // One-sided 4th-order stencils (coefficients /12h).
    out[0] = (-25.0 * vals[0] + 48.0 * vals[1] - 36.0 * vals[2] + 16.0 * vals[3] - 3.0 * vals[4]) / (12.0 * dx);
    out[1] = (-3.0 * vals[0] - 10.0 * vals[1] + 18.0 * vals[2] - 6.0 * vals[3] + vals[4]) / (12.0 * dx);
    out[n - 2] = (3.0 * vals[n - 1] + 10.0 * vals[n - 2] - 18.0 * vals[n - 3] + 6.0 * vals[n - 4] - vals[n - 5]) / (12.0 * dx);
    out[n - 1] = (25.0 * vals[n - 1] - 48.0 * vals[n - 2] + 36.0 * vals[n - 3] - 16.0 * vals[n - 4] + 3.0 * vals[n - 5]) / (12.0 * dx);
}

/// 4th-order second derivative (interior); 2nd order fallback near edges.
pub fn deriv2_o4(vals: &[f64], dx: f64, out: &mut [f64]) {
    let n = vals.len();
    assert!(n >= 7);
    let c = 1.0 / (12.0 * dx * dx);
    for k in 2..n - 2 {
        out[k] = c * (-vals[k - 2] + 16.0 * vals[k - 1] - 30.0 * vals[k] + 16.0 * vals[k + 1] - vals[k + 2]);
    }
    let c2 = 1.0 / (dx * dx);
    out[0] = c2 * (2.0 * vals[0] - 5.0 * vals[1] + 4.0 * vals[2] - vals[3]);
    out[1] = c2 * (vals[0] - 2.0 * vals[1] + vals[2]);
    out[n - 2] = c2 * (vals[n - 3] - 2.0 * vals[n - 2] + vals[n - 1]);
    out[n - 1] = c2 * (2.0 * vals[n - 1] - 5.0 * vals[n - 2] + 4.0 * vals[n - 3] - vals[n - 4]);
}

/// Third derivative, 4th-order central stencil in the interior;
/// 2nd-order central near edges, constant-extrapolated at the outermost nodes.
pub fn deriv3_o4(vals: &[f64], dx: f64, out: &mut [f64]) {
    let n = vals.len();
    assert!(n >= 9);
    let c = 1.0 / (8.0 * dx * dx * dx);
    for k in 3..n - 3 {
        out[k] = c
            * (vals[k - 3] - 8.0 * vals[k - 2] + 13.0 * vals[k - 1] - 13.0 * vals[k + 1]
                + 8.0 * vals[k + 2]
                - vals[k + 3]);
    }
    let c2 = 1.0 / (2.0 * dx * dx * dx);
    for k in [2usize, n - 3] {
        out[k] = c2 * (vals[k + 2] - 2.0 * vals[k + 1] + 2.0 * vals[k - 1] - vals[k - 2]);
    }
    out[0] = out[2];
    out[1] = out[2];
    out[n - 2] = out[n - 3];
    out[n - 1] = out[n - 3];
}

/// Local derivative in t from a few nonuniform samples by quadratic fit.
pub fn deriv_nonuniform(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    let n = ts.len();
    let k = bracket(ts, t);
    let lo = k.saturating_sub(1);
    let hi = (k + 1).min(n - 1);
    lagrange_deriv(&ts[lo..=hi], &ys[lo..=hi], t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_reproduces_cubics() {
        let x0 = 0.0;
        let dx = 0.1;
        let f = |x: f64| 1.0 + 2.0 * x - 0.5 * x * x + 0.25 * x * x * x;
        let vals: Vec<f64> = (0..50).map(|k| f(x0 + dx * k as f64)).collect();
        for &x in &[0.53, 1.07, 3.99, 4.62] {
            assert!((cubic_uniform(x0, dx, &vals, x) - f(x)).abs() < 1e-12);
            let d = 2.0 - x + 0.75 * x * x;
            assert!((cubic_uniform_deriv(x0, dx, &vals, x) - d).abs() < 1e-10);
        }
    }

    #[test]
    fn deriv_stencils_on_polynomial() {
        let dx = 0.05;
        let n = 41;
        let f = |x: f64| x * x * x * x - 2.0 * x * x + x;
        let vals: Vec<f64> = (0..n).map(|k| f(k as f64 * dx)).collect();
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        let mut d3 = vec![0.0; n];
        deriv1_o4(&vals, dx, &mut d1);
        deriv2_o4(&vals, dx, &mut d2);
        deriv3_o4(&vals, dx, &mut d3);
        for k in 0..n {
            let x = k as f64 * dx;
            assert!((d1[k] - (4.0 * x * x * x - 4.0 * x + 1.0)).abs() < 1e-9, "d1 at {k}");
        }
        for k in 2..n - 2 {
            let x = k as f64 * dx;
            assert!((d2[k] - (12.0 * x * x - 4.0)).abs() < 1e-8);
        }
        for k in 3..n - 3 {
            let x = k as f64 * dx;
            assert!((d3[k] - 24.0 * x).abs() < 1e-7, "d3 at {k}: {} vs {}", d3[k], 24.0 * x);
        }
    }

    #[test]
    fn monotone_cubic_no_overshoot() {
        let xs = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = vec![0.0, 0.0, 1.0, 1.0, 1.0];
        let mc = MonotoneCubic::new(xs, ys);
        for k in 0..=400 {
            let x = k as f64 * 0.01;
            let v = mc.eval(x);
            assert!((-1e-12..=1.0 + 1e-12).contains(&v), "overshoot {v} at {x}");
        }
    }

    #[test]
    fn nonuniform_cubic() {
        let xs = vec![0.0, 0.2, 0.5, 1.1, 1.4, 2.0];
        let f = |x: f64| x * x * x - x;
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        for &x in &[0.1, 0.7, 1.3, 1.9] {
            assert!((cubic_nonuniform(&xs, &ys, x) - f(x)).abs() < 1e-12);
            assert!((cubic_nonuniform_deriv(&xs, &ys, x) - (3.0 * x * x - 1.0)).abs() < 1e-10);
        }
    }
}
