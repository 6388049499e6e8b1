//! Normal-form coordinates u -> w for a chosen genuinely nonlinear field i:
//! the i-th right eigenvector of A(w) becomes parallel to e_i, the i-th
//! column of A(w) collapses to lambda_i e_i, and A(0) is diagonal. Also the
//! lifespan estimate and the blowup seed extracted from the initial data.

use std::io::{Read, Write};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interp;
use crate::linalg::{self, Mat};
use crate::poly::{eval_monomial, eval_monomial_partial, monomials, MultiPoly, Term};
use crate::system::{
    eigen_decompose, eigen_decompose_warm, fd_step, EigenStructure, FluxModel, InitialData,
};

pub const DEFAULT_CHART_BOX: f64 = 0.15;

/// Chart polynomial degree by dimension: high enough that the normal-form
/// residual at |w| ~ 1e-2 sits below 1e-7, capped for the larger systems
/// where the basis grows combinatorially.
pub fn default_chart_degree(n: usize) -> usize {
    match n {
        0..=3 => 6,
        4 => 5,
        _ => 4,
    }
}

/// Family of (n-1) Riemann invariants q_j(u) = zeta_j . u + qtilde_j(u) of
/// the i-th field: grad q_j . r_i = 0 on the chart box.
#[derive(Debug, Clone)]
pub struct RiemannChart {
    pub i: usize,
    pub r_i0: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
    pub qtilde: Vec<MultiPoly>,
    pub u_box: f64,
    pub degree: usize,
}

impl RiemannChart {
    pub fn q(&self, slot: usize, u: &[f64]) -> f64 {
        linalg::dot(&self.zeta[slot], u) + self.qtilde[slot].eval(u)
    }

    pub fn grad_q(&self, slot: usize, u: &[f64], out: &mut [f64]) {
        self.qtilde[slot].grad(u, out);
        for (o, z) in out.iter_mut().zip(&self.zeta[slot]) {
            *o += z;
        }
    }
}

/// The coordinate chart and constant data of the normal form.
#[derive(Clone)]
pub struct NormalizedSystem {
    pub model: FluxModel,
    /// Distinguished field index (0-based).
    pub i: usize,
    pub n: usize,
    pub chart: RiemannChart,
    /// Indices != i in ascending order; slot s of the reduced block holds
    /// component js[s].
    pub js: Vec<usize>,
    /// (n-1) x (n-1) constant diagonalizer of the reduced block at 0.
    pub b_small: Mat,
    /// Constants k_s decoupling the i-th row at 0.
    pub k_consts: Vec<f64>,
    /// d w / d u at 0 and its inverse.
    pub dw_du0: Mat,
    pub du_dw0: Mat,
    /// Eigenvalues at the origin (ascending).
    pub lambda0: Vec<f64>,
    /// Eigenstructure at the origin with the chart's orientation.
    pub eigen0: EigenStructure,
    /// grad_w lambda_j (0) . e_j for each j: the per-field steepening factors.
    pub gn_diag0: Vec<f64>,
}

impl std::fmt::Debug for NormalizedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalizedSystem")
            .field("model", &self.model.label)
            .field("i", &self.i)
            .field("n", &self.n)
            .field("degree", &self.chart.degree)
            .field("u_box", &self.chart.u_box)
            .finish()
    }
}

/// Eigen frame of A(w) at a state w, carried alongside the backing u-frame
/// for warm restarts.
#[derive(Debug, Clone)]
pub struct WFrame {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub eigen_u: EigenStructure,
    pub lambdas: Vec<f64>,
    /// Left eigenvector rows of A(w), biorthonormal with `right_w`.
    pub left_w: Vec<Vec<f64>>,
    pub right_w: Vec<Vec<f64>>,
}

impl WFrame {
    /// p_jk = l_jk / l_jj of A(w); p_ji = 0 for j != i by the normal form.
    pub fn p_coeff(&self, j: usize, k: usize) -> f64 {
        self.left_w[j][k] / self.left_w[j][j]
    }
}

/// Low-discrepancy points in [-box, box]^n (Halton bases 2,3,5,7,11,13).
fn halton_points(n: usize, count: usize, bx: f64) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];
    let mut pts = Vec::with_capacity(count);
    for k in 1..=count {
        let mut p = Vec::with_capacity(n);
        for d in 0..n {
            let base = PRIMES[d];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut idx = k as u64;
            while idx > 0 {
                f /= base as f64;
                r += f * (idx % base) as f64;
                idx /= base;
            }
            p.push((2.0 * r - 1.0) * bx);
        }
        pts.push(p);
    }
    pts
}

/// Construct the (n-1) Riemann invariants of field i by polynomial
/// collocation of the defining transport equation on the chart box.
pub fn riemann_invariants(
    model: &FluxModel,
    i: usize,
    u_box: f64,
    degree: usize,
) -> Result<RiemannChart> {
    let n = model.n;
    assert!(i < n);
    let e0 = eigen_decompose(model, &vec![0.0; n])?;
    let gn0 = crate::system::genuine_nonlinearity(model, i, &vec![0.0; n])?;
    let mut r_i0 = e0.right[i].clone();
    // Orient so the steepening factor is positive (when the field is
    // genuinely nonlinear); unit length.
    if gn0 < -1e-12 {
        for v in r_i0.iter_mut() {
            *v = -*v;
        }
    }
    let nrm = linalg::norm2(&r_i0);
    for v in r_i0.iter_mut() {
        *v /= nrm;
    }

    // Orthonormal basis of r_i0-perp from the standard basis without e_i.
    let mut zeta: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for k in 0..n {
        if k == i {
            continue;
        }
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        let c = linalg::dot(&v, &r_i0);
        linalg::axpy(-c, &r_i0, &mut v);
        for z in &zeta {
            let c = linalg::dot(&v, z);
            linalg::axpy(-c, z, &mut v);
        }
        let nv = linalg::norm2(&v);
        if nv < 1e-10 {
            return Err(Error::SingularConstruction { cond: 1.0 / nv.max(1e-300) });
        }
        for x in v.iter_mut() {
            *x /= nv;
        }
        zeta.push(v);
    }

    if n == 1 {
        return Ok(RiemannChart { i, r_i0, zeta, qtilde: vec![], u_box, degree });
    }

    // Collocation points and the unit i-th eigenvector field on them.
    let basis = monomials(n, 2, degree);
    let npts = (4 * basis.len()).max(400);
    let pts = halton_points(n, npts, u_box);
    let mut ri_at = Vec::with_capacity(npts);
    for p in &pts {
        let e = eigen_decompose_warm(model, p, &e0)?;
        let mut r = e.right[i].clone();
        if linalg::dot(&r, &r_i0) < 0.0 {
            for v in r.iter_mut() {
                *v = -*v;
            }
        }
        let nr = linalg::norm2(&r);
        for v in r.iter_mut() {
            *v /= nr;
        }
        ri_at.push(r);
    }

    // For each invariant: damped least squares on
    //   grad(qtilde)(p) . r_i(p) = -zeta_j . (r_i(p) - r_i0),
    // fitted in box-scaled variables so all basis columns are O(1); tiny
    // Tikhonov rows pick the zero solution for structurally absent monomials.
    let nb = basis.len();
    let damping = 1e-9;
    let mut qtilde = Vec::with_capacity(n - 1);
    for z in &zeta {
        let mut a = Mat::zeros(npts + nb, nb);
        let mut rhs = vec![0.0; npts + nb];
        for (prow, (p, ri)) in pts.iter().zip(&ri_at).enumerate() {
            let xi: Vec<f64> = p.iter().map(|v| v / u_box).collect();
            for (m, exps) in basis.iter().enumerate() {
                let mut s = 0.0;
                for v in 0..n {
                    if exps[v] > 0 {
                        s += eval_monomial_partial(exps, v, &xi) * ri[v];
                    }
                }
                a[(prow, m)] = s / u_box;
            }
            let mut diff = 0.0;
            for v in 0..n {
                diff += z[v] * (ri[v] - r_i0[v]);
            }
            rhs[prow] = -diff;
        }
        for m in 0..nb {
            a[(npts + m, m)] = damping;
        }
        let coeffs = linalg::lstsq(a, rhs).ok_or(Error::SingularConstruction { cond: f64::INFINITY })?;
        let terms: Vec<Term> = basis
            .iter()
            .zip(&coeffs)
            .map(|(e, &c)| {
                let deg: usize = e.iter().map(|&x| x as usize).sum();
                Term { exps: e.clone(), coeff: c / u_box.powi(deg as i32) }
            })
            .collect();
        qtilde.push(MultiPoly::from_terms(n, terms));
    }
    Ok(RiemannChart { i, r_i0, zeta, qtilde, u_box, degree })
}

/// Full normal-form construction for field i.
pub fn build_transform(model: &FluxModel, i: usize) -> Result<NormalizedSystem> {
    build_transform_with(model, i, DEFAULT_CHART_BOX.min(0.5 * model.box_radius), default_chart_degree(model.n))
}

pub fn build_transform_with(
    model: &FluxModel,
    i: usize,
    u_box: f64,
    degree: usize,
) -> Result<NormalizedSystem> {
    let chart = riemann_invariants(model, i, u_box, degree)?;
    finish_from_chart(model, chart)
}

/// Constant data of the normal form from an already-built invariant chart.
fn finish_from_chart(model: &FluxModel, chart: RiemannChart) -> Result<NormalizedSystem> {
    let n = model.n;
    let i = chart.i;
    let zero = vec![0.0; n];
    let mut eigen0 = eigen_decompose(model, &zero)?;
    // Re-orient the origin frame to the chart's r_i0.
    if linalg::dot(&eigen0.right[i], &chart.r_i0) < 0.0 {
        for v in eigen0.right[i].iter_mut() {
            *v = -*v;
        }
        for v in eigen0.left[i].iter_mut() {
            *v = -*v;
        }
    }
    let lambda0 = eigen0.lambdas.clone();
    let js: Vec<usize> = (0..n).filter(|&k| k != i).collect();

    // Intermediate frame at 0: rows zeta_s for the invariant slots, r_i0 for i.
    let f0 = model.jacobian(&zero);
    let mut jrows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        if k == i {
            jrows.push(chart.r_i0.clone());
        } else {
            let s = js.iter().position(|&j| j == k).unwrap();
            jrows.push(chart.zeta[s].clone());
        }
    }
    let jt = Mat::from_rows(&jrows);
    let jt_inv = linalg::inverse(&jt).ok_or(Error::SingularConstruction { cond: f64::INFINITY })?;
    let a_tilde0 = jt.matmul(&f0).matmul(&jt_inv);

    // Reduced block (components != i) and its constant diagonalizer.
    let (b_small, k_consts, cond) = if n == 1 {
        (Mat::zeros(0, 0), vec![], 1.0)
    } else {
        let m = n - 1;
        let mut red = Mat::zeros(m, m);
        for (r, &jr) in js.iter().enumerate() {
            for (c, &jc) in js.iter().enumerate() {
                red[(r, c)] = a_tilde0[(jr, jc)];
            }
        }
        let er = crate::system::eigen_of_matrix(&red, 1e-12, None)?;
        // Rows of B are the left eigenvectors; eigen_of_matrix sorts ascending,
        // matching the ascending lambda over js.
        let b = Mat::from_rows(&er.left);
        // After diagonalization the decoupling constants follow directly:
        // k_s = a_hat_{i,s}(0) / (lambda_js - lambda_i); assemble a_hat row i.
        let b_inv = linalg::inverse(&b).ok_or(Error::SingularConstruction { cond: f64::INFINITY })?;
        // i-th row of A in the hat frame: a_tilde row i restricted to js, times B^-1.
        let mut row_i = vec![0.0; m];
        for (c, &jc) in js.iter().enumerate() {
            row_i[c] = a_tilde0[(i, jc)];
        }
        let row_hat = b_inv.vecmat(&row_i);
        let mut ks = vec![0.0; m];
        let mut cond_min = f64::INFINITY;
        let mut cond_max = 0.0f64;
        for s in 0..m {
            let denom = er.lambdas[s] - lambda0[i];
            cond_min = cond_min.min(denom.abs());
            cond_max = cond_max.max(denom.abs());
            ks[s] = row_hat[s] / denom;
        }
        let cond = cond_max / cond_min.max(1e-300);
        if cond > 1e12 {
            return Err(Error::SingularConstruction { cond });
        }
        (b, ks, cond)
    };
    let _ = cond;

    // Differential at 0 (grad qtilde vanishes there).
    let dw_du0 = assemble_dw_du(&chart, &js, &b_small, &k_consts, &zero, n);
    let du_dw0 = linalg::inverse(&dw_du0).ok_or(Error::SingularConstruction { cond: f64::INFINITY })?;

    // Per-field steepening factors d lambda_j / d w_j at 0.
    let mut gn_diag0 = vec![0.0; n];
    for j in 0..n {
        let mut grad_u = vec![0.0; n];
        let mut up = zero.clone();
        for k in 0..n {
            let h = fd_step(0.0);
            up[k] = h;
            let ep = eigen_decompose_warm(model, &up, &eigen0)?;
            up[k] = -h;
            let em = eigen_decompose_warm(model, &up, &eigen0)?;
            up[k] = 0.0;
            grad_u[k] = (ep.lambdas[j] - em.lambdas[j]) / (2.0 * h);
        }
        // grad_w lambda = grad_u lambda . du/dw; take the e_j component.
        let gw = du_dw0.vecmat(&grad_u);
        gn_diag0[j] = gw[j];
    }

    Ok(NormalizedSystem {
        model: model.clone(),
        i,
        n,
        chart,
        js,
        b_small,
        k_consts,
        dw_du0,
        du_dw0,
        lambda0,
        eigen0,
        gn_diag0,
    })
}

fn assemble_dw_du(
    chart: &RiemannChart,
    js: &[usize],
    b_small: &Mat,
    k_consts: &[f64],
    u: &[f64],
    n: usize,
) -> Mat {
    if n == 1 {
        let mut m = Mat::zeros(1, 1);
        m[(0, 0)] = chart.r_i0[0];
        return m;
    }
    let m = n - 1;
    // Rows of d(q_slot)/du.
    let mut gq = vec![vec![0.0; n]; m];
    for s in 0..m {
        chart.grad_q(s, u, &mut gq[s]);
    }
    // Reduced rows after B.
    let mut rows = vec![vec![0.0; n]; n];
    for s in 0..m {
        let k = js[s];
        for c in 0..n {
            let mut acc = 0.0;
            for s2 in 0..m {
                acc += b_small[(s, s2)] * gq[s2][c];
            }
            rows[k][c] = acc;
        }
    }
    // i-th row: r_i0^T - sum_s k_s * row(js[s]).
    for c in 0..n {
        let mut acc = chart.r_i0[c];
        for s in 0..m {
            acc -= k_consts[s] * rows[js[s]][c];
        }
        rows[chart.i][c] = acc;
    }
    Mat::from_rows(&rows)
}

impl NormalizedSystem {
    /// w(u); total (polynomial) map with w(0) = 0.
    pub fn to_w(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        if n == 1 {
            return vec![self.chart.r_i0[0] * u[0]];
        }
        let m = n - 1;
        let mut q = vec![0.0; m];
        for s in 0..m {
            q[s] = self.chart.q(s, u);
        }
        let mut w = vec![0.0; n];
        for s in 0..m {
            let mut acc = 0.0;
            for s2 in 0..m {
                acc += self.b_small[(s, s2)] * q[s2];
            }
            w[self.js[s]] = acc;
        }
        let mut wi = linalg::dot(&self.chart.r_i0, u);
        for s in 0..m {
            wi -= self.k_consts[s] * w[self.js[s]];
        }
        w[self.i] = wi;
        w
    }

    /// Analytic Jacobian d w / d u at u.
    pub fn dw_du(&self, u: &[f64]) -> Mat {
        assemble_dw_du(&self.chart, &self.js, &self.b_small, &self.k_consts, u, self.n)
    }

    /// Inverse map by Newton on to_w; quadratic convergence on the chart box.
    pub fn to_u(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.to_u_seeded(w, None)
    }

    pub fn to_u_seeded(&self, w: &[f64], seed: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut u = match seed {
            Some(s) => s.to_vec(),
            None => self.du_dw0.matvec(w),
        };
        let scale = 1.0 + linalg::norm_inf(w);
        for _ in 0..30 {
            let r: Vec<f64> = self
                .to_w(&u)
                .iter()
                .zip(w)
                .map(|(a, b)| a - b)
                .collect();
            let rn = linalg::norm_inf(&r);
            if rn < 1e-14 * scale {
                return Ok(u);
            }
            let j = self.dw_du(&u);
            let step = linalg::solve(&j, &r).ok_or(Error::NewtonDivergence {
                residual: rn,
                iters: 0,
            })?;
            for (uk, sk) in u.iter_mut().zip(&step) {
                *uk -= sk;
            }
            if linalg::norm_inf(&u) > 4.0 * self.chart.u_box + 1.0 {
                return Err(Error::OutOfBox {
                    norm: linalg::norm_inf(&u),
                    bound: self.chart.u_box,
                });
            }
        }
        let r: Vec<f64> = self.to_w(&u).iter().zip(w).map(|(a, b)| a - b).collect();
        let rn = linalg::norm_inf(&r);
        if rn < 1e-10 * scale {
            Ok(u)
        } else {
            Err(Error::NewtonDivergence { residual: rn, iters: 30 })
        }
    }

    /// A(w) = (dw/du) F(u(w)) (du/dw); used by the verification report.
    pub fn a_matrix(&self, w: &[f64]) -> Result<Mat> {
        let u = self.to_u(w)?;
        let j = self.dw_du(&u);
        let jinv = linalg::inverse(&j).ok_or(Error::SingularConstruction { cond: f64::INFINITY })?;
        Ok(j.matmul(&self.model.jacobian(&u)).matmul(&jinv))
    }

    /// Eigen frame of A(w) with warm restart support for path continuity.
    pub fn frame_at(&self, w: &[f64], warm: Option<&WFrame>) -> Result<WFrame> {
        let u = self.to_u_seeded(w, warm.map(|f| f.u.as_slice()))?;
        let eigen_u = match warm {
            Some(f) => eigen_decompose_warm(&self.model, &u, &f.eigen_u)?,
            None => {
                let mut e = eigen_decompose(&self.model, &u)?;
                // Anchor orientation to the origin frame of the chart.
                for j in 0..self.n {
                    if linalg::dot(&e.right[j], &self.eigen0.right[j]) < 0.0 {
                        for v in e.right[j].iter_mut() {
                            *v = -*v;
                        }
                        for v in e.left[j].iter_mut() {
                            *v = -*v;
                        }
                    }
                }
                e
            }
        };
        let jm = self.dw_du(&u);
        let jinv = linalg::inverse(&jm).ok_or(Error::SingularConstruction { cond: f64::INFINITY })?;
        let mut left_w = Vec::with_capacity(self.n);
        let mut right_w = Vec::with_capacity(self.n);
        for jdx in 0..self.n {
            left_w.push(jinv.transpose().matvec(&eigen_u.left[jdx]));
            right_w.push(jm.matvec(&eigen_u.right[jdx]));
        }
        Ok(WFrame {
            w: w.to_vec(),
            u,
            lambdas: eigen_u.lambdas.clone(),
            eigen_u,
            left_w,
            right_w,
        })
    }

    /// Leading-order normalized initial profile w0(x) = (dw/du)(0) u0(x).
    pub fn w0_profile(&self, data: &InitialData, x: f64) -> Vec<f64> {
        self.dw_du0.matvec(&data.profile(x))
    }

    /// Content hash for the normal-form cache key.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model.label.as_bytes());
        h.update(self.i.to_le_bytes());
        h.update(self.chart.degree.to_le_bytes());
        h.update(self.chart.u_box.to_le_bytes());
        h.update(self.n.to_le_bytes());
        hex(&h.finalize()[..8])
    }

    /// Versioned binary cache of the chart constants.
    pub fn save_cache(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(b"SFNF1\n")?;
        f.write_all(self.cache_key().as_bytes())?;
        let mut buf = Vec::new();
        push_usize(&mut buf, self.n);
        push_usize(&mut buf, self.i);
        push_usize(&mut buf, self.chart.degree);
        push_f64s(&mut buf, &[self.chart.u_box]);
        push_f64s(&mut buf, &self.chart.r_i0);
        for z in &self.chart.zeta {
            push_f64s(&mut buf, z);
        }
        push_usize(&mut buf, self.chart.qtilde.len());
        for p in &self.chart.qtilde {
            push_usize(&mut buf, p.terms.len());
            for t in &p.terms {
                buf.extend_from_slice(&t.exps);
                push_f64s(&mut buf, &[t.coeff]);
            }
        }
        push_f64s(&mut buf, &self.b_small.a);
        push_f64s(&mut buf, &self.k_consts);
        push_f64s(&mut buf, &self.lambda0);
        push_f64s(&mut buf, &self.gn_diag0);
        f.write_all(&buf)?;
        Ok(())
    }

    /// Rebuild from cache when the key matches; otherwise report None.
    pub fn load_cache(model: &FluxModel, i: usize, path: &std::path::Path) -> Option<NormalizedSystem> {
        let mut f = std::fs::File::open(path).ok()?;
        let mut head = [0u8; 6];
        f.read_exact(&mut head).ok()?;
        if &head != b"SFNF1\n" {
            return None;
        }
        let mut key = [0u8; 16];
        f.read_exact(&mut key).ok()?;
        let mut rest = Vec::new();
        f.read_to_end(&mut rest).ok()?;
        let mut cur = 0usize;
        let n = read_usize(&rest, &mut cur)?;
        let ci = read_usize(&rest, &mut cur)?;
        if n != model.n || ci != i {
            return None;
        }
        let degree = read_usize(&rest, &mut cur)?;
        let u_box = read_f64(&rest, &mut cur)?;
        let mut r_i0 = vec![0.0; n];
        for v in r_i0.iter_mut() {
            *v = read_f64(&rest, &mut cur)?;
        }
        let mut zeta = Vec::with_capacity(n - 1);
        for _ in 0..n.saturating_sub(1) {
            let mut z = vec![0.0; n];
            for v in z.iter_mut() {
                *v = read_f64(&rest, &mut cur)?;
            }
            zeta.push(z);
        }
        let nq = read_usize(&rest, &mut cur)?;
        let mut qtilde = Vec::with_capacity(nq);
        for _ in 0..nq {
            let nt = read_usize(&rest, &mut cur)?;
            let mut terms = Vec::with_capacity(nt);
            for _ in 0..nt {
                let exps = rest.get(cur..cur + n)?.to_vec();
                cur += n;
                let coeff = read_f64(&rest, &mut cur)?;
                terms.push(Term { exps, coeff });
            }
            qtilde.push(MultiPoly::from_terms(n, terms));
        }
        let chart = RiemannChart { i, r_i0, zeta, qtilde, u_box, degree };
        // Reconstruct the constant data from the chart (cheap) to avoid
        // trusting derived fields from disk.
        let rebuilt = finish_from_chart(model, chart).ok()?;
        if rebuilt.cache_key().as_bytes() == key {
            Some(rebuilt)
        } else {
            None
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn push_usize(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u64).to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_usize(buf: &[u8], cur: &mut usize) -> Option<usize> {
    let b = buf.get(*cur..*cur + 8)?;
    *cur += 8;
    Some(u64::from_le_bytes(b.try_into().ok()?) as usize)
}

fn read_f64(buf: &[u8], cur: &mut usize) -> Option<f64> {
    let b = buf.get(*cur..*cur + 8)?;
    *cur += 8;
    Some(f64::from_le_bytes(b.try_into().ok()?))
}

/// Per-property deviations of the normal form on sample states.
#[derive(Debug, Clone)]
pub struct NormalFormReport {
    /// max |lambda(A(w)) - lambda(F(u(w)))| (property 1).
    pub eigenvalue_dev: f64,
    /// max over samples of |a_ji(w)| (j != i) and |a_ii - lambda_i| (property 2).
    pub column_dev: f64,
    /// max angle between the i-th right eigenvector of A(w) and e_i (property 3).
    pub eigvec_angle: f64,
    /// ||A(0) - diag(lambda(0))|| (property 4).
    pub origin_diag_dev: f64,
    /// max |to_u(to_w(u)) - u| / (1 + |u|).
    pub roundtrip_dev: f64,
    pub pass: bool,
}

pub const COLUMN_TOL: f64 = 1e-7;
pub const ANGLE_TOL: f64 = 1e-6;
pub const ORIGIN_TOL: f64 = 1e-8;
pub const ROUNDTRIP_TOL: f64 = 1e-9;

pub fn verify_normal_form(ns: &NormalizedSystem, samples: &[Vec<f64>]) -> NormalFormReport {
    verify_normal_form_with(ns, samples, |w| ns.a_matrix(w))
}

/// Verification against an arbitrary A(w) evaluator (fault-injection entry).
pub fn verify_normal_form_with<F>(
    ns: &NormalizedSystem,
    samples: &[Vec<f64>],
    a_eval: F,
) -> NormalFormReport
where
    F: Fn(&[f64]) -> Result<Mat>,
{
    let n = ns.n;
    let i = ns.i;
    let mut eigenvalue_dev = 0.0f64;
    let mut column_dev = 0.0f64;
    let mut eigvec_angle = 0.0f64;
    let mut roundtrip_dev = 0.0f64;
    for w in samples {
        let Ok(a) = a_eval(w) else { continue };
        let Ok(u) = ns.to_u(w) else { continue };
        let fu = ns.model.jacobian(&u);
        if let (Some(la), Some(lf)) = (
            linalg::qr_real_eigenvalues(&a),
            linalg::qr_real_eigenvalues(&fu),
        ) {
            for (x, y) in la.iter().zip(&lf) {
                eigenvalue_dev = eigenvalue_dev.max((x - y).abs());
            }
            // Property 3 via inverse iteration at the polished i-th eigenvalue.
            let lam_i = linalg::polish_eigenvalue(&a, la[i]);
            if let Some(r) = linalg::eigenvector(&a, lam_i, None) {
                let nr = linalg::norm2(&r);
                let cosang = (r[i] / nr).abs().min(1.0);
                eigvec_angle = eigvec_angle.max(cosang.acos());
            }
            column_dev = column_dev.max((a[(i, i)] - lam_i).abs());
        }
        for j in 0..n {
            if j != i {
                column_dev = column_dev.max(a[(j, i)].abs());
            }
        }
        let wu = ns.to_w(&u);
        let mut dev = 0.0f64;
        for (x, y) in wu.iter().zip(w) {
            dev = dev.max((x - y).abs());
        }
        roundtrip_dev = roundtrip_dev.max(dev / (1.0 + linalg::norm_inf(&u)));
    }
    let a0 = a_eval(&vec![0.0; n]).unwrap_or_else(|_| Mat::zeros(n, n));
    let mut origin_diag_dev = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            let want = if r == c { ns.lambda0[r] } else { 0.0 };
            origin_diag_dev = origin_diag_dev.max((a0[(r, c)] - want).abs());
        }
    }
    let pass = column_dev < COLUMN_TOL
        && eigvec_angle < ANGLE_TOL
        && origin_diag_dev < ORIGIN_TOL
        && roundtrip_dev < ROUNDTRIP_TOL;
    NormalFormReport {
        eigenvalue_dev,
        column_dev,
        eigvec_angle,
        origin_diag_dev,
        roundtrip_dev,
        pass,
    }
}

/// Location and curvature of the steepening-rate minimum driving the blowup.
#[derive(Debug, Clone)]
pub struct BlowupSeed {
    /// argmin of the i-th steepening rate.
    pub x0: f64,
    /// per-field minima N_j = min_x H_j.
    pub n_rates: Vec<f64>,
    /// curvature H_i''(x0) > 0.
    pub hpp: f64,
    /// min_{j != i} N_j - N_i > 0.
    pub margin: f64,
}

pub const LIFESPAN_GRID: usize = 4096;

/// Lifespan estimate T_hat = -1 / (eps * min_j N_j) with
/// H_j(x) = (d lambda_j/d w_j)(0) * (w0^j)'(x) on a dense grid over [a, b].
pub fn lifespan_estimate(ns: &NormalizedSystem, data: &InitialData) -> Result<(f64, BlowupSeed)> {
    let n = ns.n;
    let m = LIFESPAN_GRID;
    let a = data.a;
    let b = data.b;
    let dx = (b - a) / (m as f64 - 1.0);
    // w0 component profiles on the grid.
    let mut w0 = vec![vec![0.0; m]; n];
    for k in 0..m {
        let x = a + dx * k as f64;
        let w = ns.w0_profile(data, x);
        for j in 0..n {
            w0[j][k] = w[j];
        }
    }
    let mut h = vec![vec![0.0; m]; n];
    let mut d = vec![0.0; m];
    for j in 0..n {
        interp::deriv1_o4(&w0[j], dx, &mut d);
        for k in 0..m {
            h[j][k] = ns.gn_diag0[j] * d[k];
        }
    }
    // Per-field minima with 3-point parabolic refinement.
    let mut n_rates = vec![0.0; n];
    let mut arg = vec![0usize; n];
    for j in 0..n {
        let (mut kmin, mut vmin) = (0usize, f64::INFINITY);
        for k in 0..m {
            if h[j][k] < vmin {
                vmin = h[j][k];
                kmin = k;
            }
        }
        let (xr, vr, _) = parabolic_refine(&h[j], a, dx, kmin);
        let _ = xr;
        n_rates[j] = vr;
        arg[j] = kmin;
    }
    let min_rate = n_rates.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_rate >= -1e-14 {
        return Err(Error::NoBlowup { min_rate });
    }
    let t_hat = -1.0 / (data.epsilon * min_rate);

    // Seed from the i-th rate.
    let i = ns.i;
    let ki = arg[i];
    let (x0, _hmin, hpp) = parabolic_refine(&h[i], a, dx, ki);
    // Degeneracy: curvature or multiple near-equal minima clusters.
    let tol_cluster = 1e-6 * (1.0 + n_rates[i].abs());
    let mut clusters = 0usize;
    let mut in_cluster = false;
    for k in 0..m {
        let near = h[i][k] <= n_rates[i] + tol_cluster;
        if near && !in_cluster {
            clusters += 1;
        }
        in_cluster = near;
    }
    if hpp <= 0.0 || clusters > 1 {
        return Err(Error::DegenerateMinimum {
            reason: format!("curvature {hpp:.3e}, {clusters} minimum clusters"),
        });
    }
    let others = (0..n)
        .filter(|&j| j != i)
        .map(|j| n_rates[j])
        .fold(f64::INFINITY, f64::min);
    let margin = others - n_rates[i];
    if margin <= 0.0 {
        return Err(Error::DegenerateMinimum {
            reason: format!("field {i} does not steepen first (margin {margin:.3e})"),
        });
    }
    Ok((t_hat, BlowupSeed { x0, n_rates, hpp, margin }))
}

/// Parabola through (k-1, k, k+1); returns (x*, value, second derivative).
fn parabolic_refine(vals: &[f64], x0: f64, dx: f64, k: usize) -> (f64, f64, f64) {
    let m = vals.len();
    if k == 0 || k == m - 1 {
        let second = if m >= 3 {
            (vals[(k + 1).min(m - 1)] - 2.0 * vals[k] + vals[k.saturating_sub(1)]) / (dx * dx)
        } else {
            0.0
        };
        return (x0 + dx * k as f64, vals[k], second);
    }
    let (ym, y0, yp) = (vals[k - 1], vals[k], vals[k + 1]);
    let denom = ym - 2.0 * y0 + yp;
    let second = denom / (dx * dx);
    if denom.abs() < 1e-300 {
        return (x0 + dx * k as f64, y0, second);
    }
    let delta = 0.5 * (ym - yp) / denom;
    let xs = x0 + dx * (k as f64 + delta);
    let vs = y0 - 0.25 * (ym - yp) * delta;
    (xs, vs, second)
}

/// First-principles lifespan rate in the original coordinates:
/// h_j(x) = (grad lambda_j . r_j)(0) * (l_j(0) . u0'(x)) with l_j . r_j = 1.
/// Independent cross-check of the normalized-coordinates path.
pub fn lifespan_rates_unnormalized(model: &FluxModel, data: &InitialData) -> Result<Vec<f64>> {
    let n = model.n;
    let zero = vec![0.0; n];
    let e0 = eigen_decompose(model, &zero)?;
    let m = LIFESPAN_GRID;
    let dx = (data.b - data.a) / (m as f64 - 1.0);
    let mut out = vec![f64::INFINITY; n];
    // u0 component grids and derivative.
    let mut comps = vec![vec![0.0; m]; n];
    for k in 0..m {
        let u = data.profile(data.a + dx * k as f64);
        for c in 0..n {
            comps[c][k] = u[c];
        }
    }
    let mut dcomp = vec![vec![0.0; m]; n];
    let mut buf = vec![0.0; m];
    for c in 0..n {
        interp::deriv1_o4(&comps[c], dx, &mut buf);
        dcomp[c] = buf.clone();
    }
    for j in 0..n {
        let gn = crate::system::genuine_nonlinearity(model, j, &zero)?;
        for k in 0..m {
            let mut lu = 0.0;
            for c in 0..n {
                lu += e0.left[j][c] * dcomp[c][k];
            }
            let v = gn * lu;
            if v < out[j] {
                out[j] = v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::builtin;
    use crate::system::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_samples(n: usize, count: usize, amp: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| (0..n).map(|_| rng.gen_range(-amp..amp)).collect())
            .collect()
    }

    #[test]
    fn decoupled_model_chart_is_identity() {
        let m = builtin::decoupled_burgers_stack(3);
        let ns = build_transform(&m, 1).unwrap();
        for u in small_samples(3, 50, 0.05, 1) {
            let w = ns.to_w(&u);
            for (a, b) in w.iter().zip(&u) {
                assert!((a - b).abs() < 1e-9, "{w:?} vs {u:?}");
            }
        }
    }

    #[test]
    fn riemann_invariant_residual_small() {
        let m = builtin::euler3(1.4, 1.0, 1.0);
        let chart = riemann_invariants(&m, 2, 0.12, default_chart_degree(3)).unwrap();
        let e0 = eigen_decompose(&m, &[0.0; 3]).unwrap();
        let mut worst = 0.0f64;
        let mut grad = vec![0.0; 3];
        for u in small_samples(3, 200, 0.02, 2) {
            let e = eigen_decompose_warm(&m, &u, &e0).unwrap();
            let mut r = e.right[2].clone();
            if linalg::dot(&r, &chart.r_i0) < 0.0 {
                r.iter_mut().for_each(|v| *v = -*v);
            }
            let nr = linalg::norm2(&r);
            r.iter_mut().for_each(|v| *v /= nr);
            for s in 0..2 {
                chart.grad_q(s, &u, &mut grad);
                worst = worst.max(linalg::dot(&grad, &r).abs());
            }
        }
        assert!(worst < 1e-7, "residual {worst}");
    }

    #[test]
    fn p_system_invariant_matches_classical() {
        // i = first family; the invariant's level sets agree with the
        // classical m - integral of the Lagrangian sound speed.
        let gamma = 2.0;
        let m = builtin::p_system(gamma, 1.0);
        let chart = riemann_invariants(&m, 0, 0.12, default_chart_degree(2)).unwrap();
        let cl_grad = |u: &[f64]| -> Vec<f64> {
            // q_cl = m - int_0^vtil c(1+s) ds, c(v) = sqrt(gamma) v^-(gamma+1)/2
            let v = 1.0 + u[0];
            vec![-(gamma.sqrt() * v.powf(-(gamma + 1.0) / 2.0)), 1.0]
        };
        let mut grad = vec![0.0; 2];
        for u in small_samples(2, 100, 0.05, 3) {
            chart.grad_q(0, &u, &mut grad);
            let g = cl_grad(&u);
            let cross = grad[0] * g[1] - grad[1] * g[0];
            let denom = linalg::norm2(&grad) * linalg::norm2(&g);
            assert!(cross.abs() / denom < 1e-6, "level-set mismatch {}", cross.abs() / denom);
        }
    }

    #[test]
    fn normal_form_properties_synthetic3() {
        let m = builtin::synthetic_n(3, 11);
        let ns = build_transform(&m, 1).unwrap();
        let samples = small_samples(3, 100, 0.01, 4);
        let rep = verify_normal_form(&ns, &samples);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn normal_form_origin_diagonal_p_system() {
        let m = builtin::p_system(2.0, 1.0);
        let ns = build_transform(&m, 0).unwrap();
        let a0 = ns.a_matrix(&[0.0, 0.0]).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let want = if r == c { ns.lambda0[r] } else { 0.0 };
                assert!((a0[(r, c)] - want).abs() < 1e-8, "A(0) = {a0:?}");
            }
        }
    }

    #[test]
    fn fault_injection_breaks_column_property() {
        let m = builtin::synthetic_n(3, 11);
        let ns = build_transform(&m, 1).unwrap();
        let samples = small_samples(3, 20, 0.01, 5);
        let rep = verify_normal_form_with(&ns, &samples, |w| {
            let mut a = ns.a_matrix(w)?;
            a[(0, 1)] += 1e-3;
            Ok(a)
        });
        assert!(!rep.pass);
        assert!(rep.column_dev > 5e-4);
    }

    #[test]
    fn roundtrip_500_states() {
        let m = builtin::euler3(1.4, 1.0, 1.0);
        let ns = build_transform(&m, 2).unwrap();
        for u in small_samples(3, 500, 0.05, 6) {
            let w = ns.to_w(&u);
            let back = ns.to_u(&w).unwrap();
            let err = back
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-9 * (1.0 + linalg::norm_inf(&u)), "err {err}");
        }
    }

    #[test]
    fn lifespan_burgers_exact() {
        let m = builtin::burgers();
        let ns = build_transform(&m, 0).unwrap();
        let data = InitialData::new(
            0.1,
            -std::f64::consts::PI,
            std::f64::consts::PI,
            Arc::new(|x: f64| vec![Shape::NegSin.eval(-std::f64::consts::PI, std::f64::consts::PI, x)]),
        )
        .unwrap();
        let (t_hat, seed) = lifespan_estimate(&ns, &data).unwrap();
        assert!((t_hat - 10.0).abs() < 1e-5, "t_hat {t_hat}");
        assert!(seed.x0.abs() < 1e-6, "x0 {}", seed.x0);
        assert!((seed.n_rates[0] + 1.0).abs() < 1e-6);
        assert!(seed.hpp > 0.0);
    }

    #[test]
    fn lifespan_matches_unnormalized_oracle() {
        let m = builtin::euler3(1.4, 1.0, 1.0);
        let ns = build_transform(&m, 2).unwrap();
        let e0 = eigen_decompose(&m, &[0.0; 3]).unwrap();
        let dir: Vec<f64> = e0.right[2].clone();
        let data = InitialData::new(
            0.05,
            -1.0,
            1.0,
            Arc::new(move |x: f64| {
                let s = Shape::SineBump.eval(-1.0, 1.0, x);
                dir.iter().map(|d| d * s).collect()
            }),
        )
        .unwrap();
        let (_t, seed) = lifespan_estimate(&ns, &data).unwrap();
        let rates_u = lifespan_rates_unnormalized(&m, &data).unwrap();
        for (a, b) in seed.n_rates.iter().zip(&rates_u) {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{:?} vs {:?}", seed.n_rates, rates_u);
        }
    }

    #[test]
    fn linear_system_no_blowup() {
        let c = Mat::from_rows(&[vec![0.1, 1.0], vec![1.0, 0.1]]);
        let m = builtin::linear_system(&c);
        let ns = build_transform(&m, 0).unwrap();
        let data = InitialData::new(
            0.1,
            -1.0,
            1.0,
            Arc::new(|x: f64| {
                let s = Shape::SineBump.eval(-1.0, 1.0, x);
                vec![s, -0.5 * s]
            }),
        )
        .unwrap();
        let res = lifespan_estimate(&ns, &data);
        assert!(matches!(res, Err(Error::NoBlowup { .. })), "{res:?}");
    }

    #[test]
    fn twin_minima_detected_as_degenerate() {
        let m = builtin::burgers();
        let ns = build_transform(&m, 0).unwrap();
        // u0'(x) = -B(x in left third) + 2B(middle) - B(right third):
        // two equal global minima of H by construction.
        let g = |x: f64| -> f64 {
            let b1 = crate::system::smooth_bump((x + 1.0) / 0.4);
            let b2 = crate::system::smooth_bump((x + 0.2) / 0.4);
            let b3 = crate::system::smooth_bump((x - 0.6) / 0.4);
            -b1 + 2.0 * b2 - b3
        };
        // Cumulative integral on a fine table for compact support.
        let m_tab = 4001usize;
        let dx = 2.0 / (m_tab as f64 - 1.0);
        let mut acc = vec![0.0; m_tab];
        for k in 1..m_tab {
            let xl = -1.0 + dx * (k as f64 - 1.0);
            let xr = -1.0 + dx * k as f64;
            acc[k] = acc[k - 1] + 0.5 * dx * (g(xl) + g(xr));
        }
        let table = Arc::new(acc);
        let data = InitialData::new(
            0.1,
            -1.0,
            1.0,
            Arc::new(move |x: f64| {
                vec![crate::interp::cubic_uniform(-1.0, dx, &table, x)]
            }),
        )
        .unwrap();
        let res = lifespan_estimate(&ns, &data);
        assert!(matches!(res, Err(Error::DegenerateMinimum { .. })), "{res:?}");
    }

    #[test]
    fn rescaling_property() {
        let m = builtin::p_system(2.0, 1.0);
        let ns = build_transform(&m, 0).unwrap();
        let dir = eigen_decompose(&m, &[0.0, 0.0]).unwrap().right[0].clone();
        let mk = |c: f64| {
            let dir = dir.clone();
            InitialData::new(
                0.05,
                -1.0,
                1.0,
                Arc::new(move |x: f64| {
                    let s = c * Shape::SineBump.eval(-1.0, 1.0, x);
                    dir.iter().map(|d| d * s).collect()
                }),
            )
            .unwrap()
        };
        let (_, s1) = lifespan_estimate(&ns, &mk(1.0)).unwrap();
        let (_, s2) = lifespan_estimate(&ns, &mk(2.0)).unwrap();
        for (a, b) in s1.n_rates.iter().zip(&s2.n_rates) {
            assert!((2.0 * a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
        assert!((s1.x0 - s2.x0).abs() < 1e-9);
        // eps scaling: t_hat * eps identical across eps by construction.
        let d1 = mk(1.0);
        let (t1, _) = lifespan_estimate(&ns, &d1).unwrap();
        let dir2 = dir.clone();
        let d2 = InitialData::new(0.025, -1.0, 1.0, Arc::new(move |x: f64| {
            let s = Shape::SineBump.eval(-1.0, 1.0, x);
            dir2.iter().map(|d| d * s).collect()
        }))
        .unwrap();
        let (t2, _) = lifespan_estimate(&ns, &d2).unwrap();
        assert!((t1 * 0.05 - t2 * 0.025).abs() < 1e-12);
    }

    #[test]
    fn cache_roundtrip() {
        let m = builtin::p_system(2.0, 1.0);
        let ns = build_transform(&m, 0).unwrap();
        let dir = std::env::temp_dir().join("shockforge-cache-test.bin");
        ns.save_cache(&dir).unwrap();
        let loaded = NormalizedSystem::load_cache(&m, 0, &dir).expect("cache load");
        for u in small_samples(2, 20, 0.05, 9) {
            let a = ns.to_w(&u);
            let b = loaded.to_w(&u);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        std::fs::remove_file(&dir).ok();
    }
}
