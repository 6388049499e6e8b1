//! Least-squares exponent fits on log-log data, with curvature-based trimming
//! of the largest-abscissa decades where the asymptotic regime degrades.

#[derive(Debug, Clone)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub npoints: usize,
    pub trimmed_decades: f64,
}

impl LogLogFit {
    /// Coefficient c in y = c * x^slope.
    pub fn coeff(&self) -> f64 {
        self.intercept.exp()
    }
}

/// Weighted least squares of ln(y) on ln(x). Points with non-positive x or y
/// are dropped. Weights default to 1.
pub fn loglog_fit(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Option<LogLogFit> {
    let mut lx = Vec::with_capacity(xs.len());
    let mut ly = Vec::with_capacity(xs.len());
    let mut w = Vec::with_capacity(xs.len());
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() {
            lx.push(x.ln());
            ly.push(y.ln());
            w.push(weights.map_or(1.0, |ws| ws[k]));
        }
    }
    linear_fit(&lx, &ly, &w).map(|(slope, intercept, se, n)| LogLogFit {
        slope,
        intercept,
        slope_stderr: se,
        npoints: n,
        trimmed_decades: 0.0,
    })
}

/// Log-log fit that detects curvature and, when present, trims up to the two
/// largest decades in x before refitting. The asymptotic laws only hold as
/// x -> 0, so curvature always indicates contamination at the top.
pub fn loglog_fit_trimmed(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    const CURV_TOL: f64 = 0.004;
    let base = loglog_fit(xs, ys, None)?;
    let base_curv = quadratic_curvature(xs, ys).unwrap_or(0.0);
    if base_curv.abs() < CURV_TOL {
        return Some(base);
    }
    let xmax = xs.iter().cloned().filter(|v| *v > 0.0).fold(f64::MIN, f64::max);
    let mut best = base;
    let mut best_curv = base_curv.abs();
    for decades in [1.0, 2.0] {
        let cut = xmax / 10f64.powf(decades);
        let (txs, tys): (Vec<f64>, Vec<f64>) = xs
            .iter()
            .zip(ys)
            .filter(|(&x, &y)| x > 0.0 && x <= cut && y > 0.0)
            .map(|(&x, &y)| (x, y))
            .unzip();
        if txs.len() < 6 {
            break;
        }
        if let Some(mut f) = loglog_fit(&txs, &tys, None) {
            f.trimmed_decades = decades;
            let c = quadratic_curvature(&txs, &tys).unwrap_or(0.0).abs();
            if c < best_curv {
                best = f;
                best_curv = c;
            }
            if c < CURV_TOL {
                break;
            }
        }
    }
    Some(best)
}

fn quadratic_curvature(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 4 {
        return None;
    }
    // Fit ln y = a + b ln x + c (ln x)^2 by normal equations.
    let n = pts.len() as f64;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
        s4 += x * x * x * x;
        t0 += y;
        t1 += x * y;
        t2 += x * x * y;
    }
    let m = crate::linalg::Mat::from_rows(&[
        vec![n, s1, s2],
        vec![s1, s2, s3],
        vec![s2, s3, s4],
    ]);
    let sol = crate::linalg::solve(&m, &[t0, t1, t2])?;
    Some(sol[2])
}

pub fn linear_fit(xs: &[f64], ys: &[f64], w: &[f64]) -> Option<(f64, f64, f64, usize)> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let mx: f64 = xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my: f64 = ys.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        sxx += w[k] * (xs[k] - mx) * (xs[k] - mx);
        sxy += w[k] * (xs[k] - mx) * (ys[k] - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for k in 0..n {
        let r = ys[k] - (intercept + slope * xs[k]);
        ss_res += w[k] * r * r;
    }
    let dof = (n as f64 - 2.0).max(1.0);
    let se = (ss_res / dof / sxx).sqrt();
    Some((slope, intercept, se, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let xs: Vec<f64> = (1..60).map(|k| 10f64.powf(-6.0 + 0.1 * k as f64)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.5 * x.powf(1.5)).collect();
        let f = loglog_fit(&xs, &ys, None).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-10);
        assert!((f.coeff() - 3.5).abs() < 1e-9);
    }

    #[test]
    fn trimming_removes_contaminated_top_decade() {
        // Pure 0.5 power with a strong quadratic correction active at large x.
        let xs: Vec<f64> = (1..80).map(|k| 10f64.powf(-5.0 + 0.06 * k as f64)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.powf(0.5) * (1.0 + 4.0 * x)).collect();
        let f = loglog_fit_trimmed(&xs, &ys).unwrap();
        assert!((f.slope - 0.5).abs() < 0.05, "slope {}", f.slope);
        assert!(f.trimmed_decades > 0.0);
    }
}
