//! Dense linear algebra for small (n <= 6) systems: LU, QR eigenvalues with
//! Newton polish on the characteristic polynomial, inverse iteration, and
//! Householder least squares. Deterministic, no external backend.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, a: vec![0.0; rows * cols] }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut a = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            a.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, a }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self[(i, j)] * x[j];
            }
            out[i] = s;
        }
        out
    }

    /// x^T A as a row vector.
    pub fn vecmat(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for j in 0..self.cols {
                out[j] += xi * self[(i, j)];
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, a: self.a.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: Mat,
    piv: Vec<usize>,
    sign: f64,
    pub singular: bool,
}

pub fn lu_factor(m: &Mat) -> Lu {
    let n = m.rows;
    assert_eq!(n, m.cols);
    let mut lu = m.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let mut singular = false;
    for k in 0..n {
        let mut p = k;
        let mut max = lu[(k, k)].abs();
        for r in k + 1..n {
            let v = lu[(r, k)].abs();
            if v > max {
                max = v;
                p = r;
            }
        }
        if max == 0.0 {
            singular = true;
            continue;
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            piv.swap(k, p);
            sign = -sign;
        }
        let pivot = lu[(k, k)];
        for r in k + 1..n {
            let f = lu[(r, k)] / pivot;
            lu[(r, k)] = f;
            for j in k + 1..n {
                let v = f * lu[(k, j)];
                lu[(r, j)] -= v;
            }
        }
    }
    Lu { lu, piv, sign, singular }
}

impl Lu {
    pub fn det(&self) -> f64 {
        let n = self.lu.rows;
        let mut d = self.sign;
        for i in 0..n {
            d *= self.lu[(i, i)];
        }
        d
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Smallest absolute diagonal entry of U; near-zero means rank deficiency.
    pub fn min_pivot(&self) -> f64 {
        (0..self.lu.rows).map(|i| self.lu[(i, i)].abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_pivot(&self) -> f64 {
        (0..self.lu.rows).map(|i| self.lu[(i, i)].abs()).fold(0.0, f64::max)
    }
}

pub fn solve(m: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let f = lu_factor(m);
    if f.singular || f.min_pivot() == 0.0 {
        return None;
    }
    Some(f.solve(b))
}

pub fn inverse(m: &Mat) -> Option<Mat> {
    let n = m.rows;
    let f = lu_factor(m);
    if f.singular || f.min_pivot() == 0.0 {
        return None;
    }
    let mut inv = Mat::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = f.solve(&e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    Some(inv)
}

pub fn det(m: &Mat) -> f64 {
    lu_factor(m).det()
}

fn shifted(m: &Mat, lambda: f64) -> Mat {
    let mut s = m.clone();
    for i in 0..m.rows {
        s[(i, i)] -= lambda;
    }
    s
}

/// det(A - lambda I), evaluated by LU. Stable for polishing roots.
pub fn char_poly(m: &Mat, lambda: f64) -> f64 {
    det(&shifted(m, lambda))
}

fn householder_hessenberg(a: &mut Mat) {
    let n = a.rows;
    for k in 0..n.saturating_sub(2) {
        let mut alpha = 0.0;
        for i in k + 1..n {
            alpha += a[(i, k)] * a[(i, k)];
        }
        alpha = alpha.sqrt();
        if alpha == 0.0 {
            continue;
        }
        if a[(k + 1, k)] > 0.0 {
            alpha = -alpha;
        }
        let mut v = vec![0.0; n];
        v[k + 1] = a[(k + 1, k)] - alpha;
        for i in k + 2..n {
            v[i] = a[(i, k)];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        // A <- (I - 2vv^T/v^Tv) A (I - 2vv^T/v^Tv)
        for j in 0..n {
            let mut s = 0.0;
            for i in k + 1..n {
                s += v[i] * a[(i, j)];
            }
            let f = 2.0 * s / vtv;
            for i in k + 1..n {
                a[(i, j)] -= f * v[i];
            }
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in k + 1..n {
                s += a[(i, j)] * v[j];
            }
            let f = 2.0 * s / vtv;
            for j in k + 1..n {
                a[(i, j)] -= f * v[j];
            }
        }
    }
}

/// Real eigenvalues of a small matrix by shifted QR on the Hessenberg form.
/// Returns None when a trailing 2x2 block has complex eigenvalues.
pub fn qr_real_eigenvalues(m: &Mat) -> Option<Vec<f64>> {
    let n = m.rows;
    if n == 1 {
        return Some(vec![m[(0, 0)]]);
    }
    let mut h = m.clone();
    householder_hessenberg(&mut h);
    let scale = m.frobenius().max(1e-300);
    let tol = 1e-15 * scale;
    let mut eigs = Vec::with_capacity(n);
    let mut hi = n; // active block is 0..hi
    let mut iter_guard = 0usize;
    while hi > 0 {
        if hi == 1 {
            eigs.push(h[(0, 0)]);
            break;
        }
        // Deflate converged trailing entries.
        if h[(hi - 1, hi - 2)].abs() <= tol * (h[(hi - 1, hi - 1)].abs() + h[(hi - 2, hi - 2)].abs() + tol) {
            eigs.push(h[(hi - 1, hi - 1)]);
            hi -= 1;
            iter_guard = 0;
            continue;
        }
        if hi == 2 || h[(hi - 2, hi - 3)].abs() <= tol * (h[(hi - 2, hi - 2)].abs() + h[(hi - 3, hi - 3)].abs() + tol) {
            // Trailing 2x2 block: solve the quadratic directly.
            let a = h[(hi - 2, hi - 2)];
            let b = h[(hi - 2, hi - 1)];
            let c = h[(hi - 1, hi - 2)];
            let d = h[(hi - 1, hi - 1)];
            let tr = a + d;
            let disc = tr * tr - 4.0 * (a * d - b * c);
            if disc < 0.0 {
                // Complex pair can only arise from a genuinely non-real spectrum
                // (or a pathological rounding case); report failure.
                if disc < -1e-10 * scale * scale {
                    return None;
                }
            }
            let sq = disc.max(0.0).sqrt();
            let l1 = 0.5 * (tr + sq);
            let l2 = 0.5 * (tr - sq);
            eigs.push(l2);
            eigs.push(l1);
            hi -= 2;
            iter_guard = 0;
            continue;
        }
        iter_guard += 1;
        if iter_guard > 200 {
            return None;
        }
        // Wilkinson shift from the trailing 2x2.
        let a = h[(hi - 2, hi - 2)];
        let b = h[(hi - 2, hi - 1)];
        let c = h[(hi - 1, hi - 2)];
        let d = h[(hi - 1, hi - 1)];
        let tr = a + d;
        let disc = tr * tr - 4.0 * (a * d - b * c);
        let shift = if disc >= 0.0 {
            let sq = disc.sqrt();
            let l1 = 0.5 * (tr + sq);
            let l2 = 0.5 * (tr - sq);
            if (l1 - d).abs() < (l2 - d).abs() { l1 } else { l2 }
        } else if iter_guard % 11 == 10 {
            // Exceptional shift to break stagnation.
            d + h[(hi - 1, hi - 2)].abs()
        } else {
            d
        };
        // One explicit shifted QR sweep on the active block via Givens rotations.
        let nb = hi;
        for i in 0..nb {
            h[(i, i)] -= shift;
        }
        let mut cs = vec![0.0; nb];
        let mut sn = vec![0.0; nb];
        for k in 0..nb - 1 {
            let x = h[(k, k)];
            let y = h[(k + 1, k)];
            let r = (x * x + y * y).sqrt();
            let (ck, sk) = if r == 0.0 { (1.0, 0.0) } else { (x / r, y / r) };
            cs[k] = ck;
            sn[k] = sk;
            for j in k..n {
                let hkj = h[(k, j)];
                let hk1j = h[(k + 1, j)];
                h[(k, j)] = ck * hkj + sk * hk1j;
                h[(k + 1, j)] = -sk * hkj + ck * hk1j;
            }
        }
        for k in 0..nb - 1 {
            let (ck, sk) = (cs[k], sn[k]);
            for i in 0..(k + 2).min(nb) {
                let hik = h[(i, k)];
                let hik1 = h[(i, k + 1)];
                h[(i, k)] = ck * hik + sk * hik1;
                h[(i, k + 1)] = -sk * hik + ck * hik1;
            }
        }
        for i in 0..nb {
            h[(i, i)] += shift;
        }
    }
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(eigs)
}

/// Newton polish of an eigenvalue on lambda -> det(A - lambda I).
pub fn polish_eigenvalue(m: &Mat, lambda0: f64) -> f64 {
    let scale = m.frobenius().max(1.0);
    let mut lam = lambda0;
    for _ in 0..4 {
        let f = char_poly(m, lam);
        let h = 1e-7 * scale;
        let fp = (char_poly(m, lam + h) - char_poly(m, lam - h)) / (2.0 * h);
        if fp.abs() < 1e-300 {
            break;
        }
        let step = f / fp;
        if !step.is_finite() {
            break;
        }
        lam -= step;
        if step.abs() < 1e-15 * scale {
            break;
        }
    }
    lam
}

/// Right null-ish vector of (A - lambda I) by inverse iteration.
pub fn eigenvector(m: &Mat, lambda: f64, seed: Option<&[f64]>) -> Option<Vec<f64>> {
    let n = m.rows;
    let scale = m.frobenius().max(1.0);
    // Tiny complex-free regularization keeps the LU nonsingular.
    let mut shift_eps = 1e-13 * scale;
    for _attempt in 0..3 {
        let f = lu_factor(&shifted(m, lambda + shift_eps));
        if f.singular || f.min_pivot() < 1e-300 {
            shift_eps *= 97.0;
            continue;
        }
        let mut x: Vec<f64> = match seed {
            Some(s) => s.to_vec(),
            None => (0..n).map(|k| 1.0 + 0.3 * (k as f64)).collect(),
        };
        let norm0: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in x.iter_mut() {
            *v /= norm0;
        }
        let mut ok = false;
        for _ in 0..5 {
            let y = f.solve(&x);
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !ny.is_finite() || ny == 0.0 {
                break;
            }
            let grew = ny > 1e6;
            x = y.iter().map(|v| v / ny).collect();
            if grew {
                ok = true;
            }
        }
        // Residual check.
        let r = shifted(m, lambda).matvec(&x);
        let rn: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ok || rn < 1e-8 * scale {
            return Some(x);
        }
        shift_eps *= 97.0;
    }
    None
}

/// Least squares min ||Ax - b|| by Householder QR; A consumed. Requires rows >= cols.
pub fn lstsq(mut a: Mat, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = a.rows;
    let n = a.cols;
    assert!(m >= n);
    for k in 0..n {
        let mut alpha = 0.0;
        for i in k..m {
            alpha += a[(i, k)] * a[(i, k)];
        }
        alpha = alpha.sqrt();
        if alpha == 0.0 {
            return None;
        }
        if a[(k, k)] > 0.0 {
            alpha = -alpha;
        }
        let mut v = vec![0.0; m];
        v[k] = a[(k, k)] - alpha;
        for i in k + 1..m {
            v[i] = a[(i, k)];
        }
        let vtv: f64 = v[k..].iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            return None;
        }
        for j in k..n {
            let mut s = 0.0;
            for i in k..m {
                s += v[i] * a[(i, j)];
            }
            let f = 2.0 * s / vtv;
            for i in k..m {
                a[(i, j)] -= f * v[i];
            }
        }
        let mut s = 0.0;
        for i in k..m {
            s += v[i] * b[i];
        }
        let f = 2.0 * s / vtv;
        for i in k..m {
            b[i] -= f * v[i];
        }
    }
    // Back substitution on the upper-triangular n x n block.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[(i, j)] * x[j];
        }
        if a[(i, i)].abs() < 1e-300 {
            return None;
        }
        x[i] = s / a[(i, i)];
    }
    Some(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solve_roundtrip() {
        let m = Mat::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -1.0],
            vec![0.5, -1.0, 5.0],
        ]);
        let b = vec![1.0, 2.0, 3.0];
        let x = solve(&m, &b).unwrap();
        let r = m.matvec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn qr_eigen_diagonal_plus_perturbation() {
        let mut m = Mat::zeros(4, 4);
        let diag = [-2.0, -0.3, 0.7, 1.9];
        for i in 0..4 {
            m[(i, i)] = diag[i];
        }
        m[(0, 2)] = 0.05;
        m[(3, 1)] = -0.07;
        m[(1, 0)] = 0.02;
        let eigs = qr_real_eigenvalues(&m).unwrap();
        for (e, d) in eigs.iter().zip(&diag) {
            let p = polish_eigenvalue(&m, *e);
            assert!((p - d).abs() < 2e-3, "eig {p} vs {d}");
            assert!(char_poly(&m, p).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenvector_residual() {
        let m = Mat::from_rows(&[
            vec![0.0, 1.0],
            vec![2.0, 0.0],
        ]);
        let eigs = qr_real_eigenvalues(&m).unwrap();
        for e in eigs {
            let lam = polish_eigenvalue(&m, e);
            let v = eigenvector(&m, lam, None).unwrap();
            let r = m.matvec(&v);
            for i in 0..2 {
                assert!((r[i] - lam * v[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lstsq_exact_fit() {
        // Fit y = 2 + 3x on 5 points.
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let mut a = Mat::zeros(5, 2);
        let mut b = vec![0.0; 5];
        for (i, x) in xs.iter().enumerate() {
            a[(i, 0)] = 1.0;
            a[(i, 1)] = *x;
            b[i] = 2.0 + 3.0 * x;
        }
        let c = lstsq(a, b).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12);
        assert!((c[1] - 3.0).abs() < 1e-12);
    }
}
