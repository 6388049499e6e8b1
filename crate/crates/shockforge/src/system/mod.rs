//! Hyperbolic system definitions: flux, Jacobian, eigenstructure, initial
//! data, and the structural checks (strict hyperbolicity, genuine
//! nonlinearity) the rest of the pipeline relies on.

pub mod builtin;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const HYPERBOLICITY_TOL: f64 = 1e-8;
pub const JACOBIAN_CHECK_TOL: f64 = 1e-6;

type FluxFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> Mat + Send + Sync;

/// A conservation-law system u_t + f(u)_x = 0 on a validity box around the
/// origin. Builtin families shift their physical background state to 0.
#[derive(Clone)]
pub struct FluxModel {
    pub n: usize,
    pub label: String,
    flux: Arc<FluxFn>,
    jacobian: Option<Arc<JacFn>>,
    /// Open box |u_k| < box_radius on which the flux is evaluable.
    pub box_radius: f64,
    pub hyperbolicity_tol: f64,
}

impl std::fmt::Debug for FluxModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FluxModel")
            .field("n", &self.n)
            .field("label", &self.label)
            .field("box_radius", &self.box_radius)
            .finish()
    }
}

impl FluxModel {
    pub fn new(
        n: usize,
        label: impl Into<String>,
        flux: Arc<FluxFn>,
        jacobian: Option<Arc<JacFn>>,
        box_radius: f64,
    ) -> Self {
        FluxModel {
            n,
            label: label.into(),
            flux,
            jacobian,
            box_radius,
            hyperbolicity_tol: HYPERBOLICITY_TOL,
        }
    }

    pub fn flux(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        (self.flux)(u, &mut out);
        out
    }

    pub fn flux_into(&self, u: &[f64], out: &mut [f64]) {
        (self.flux)(u, out);
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Analytic Jacobian when supplied, central finite differences otherwise.
    pub fn jacobian(&self, u: &[f64]) -> Mat {
        match &self.jacobian {
            Some(j) => j(u),
            None => self.fd_jacobian(u),
        }
    }

    pub fn fd_jacobian(&self, u: &[f64]) -> Mat {
        let n = self.n;
        let mut m = Mat::zeros(n, n);
        let mut up = u.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for k in 0..n {
            let h = fd_step(u[k]);
            up[k] = u[k] + h;
            (self.flux)(&up, &mut fp);
            up[k] = u[k] - h;
            (self.flux)(&up, &mut fm);
            up[k] = u[k];
            for r in 0..n {
                m[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        m
    }

    pub fn in_box(&self, u: &[f64]) -> bool {
        u.iter().all(|v| v.abs() < self.box_radius)
    }
}

pub fn fd_step(scale: f64) -> f64 {
    1e-5 * (1.0 + scale.abs())
}

/// Pointwise eigen-decomposition of the flux Jacobian: ascending real
/// eigenvalues, biorthonormal left/right eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenStructure {
    pub lambdas: Vec<f64>,
    /// Row vectors l_j with l_j . r_k = delta_jk.
    pub left: Vec<Vec<f64>>,
    /// Column vectors r_j, max-magnitude component positive (or warm-aligned).
    pub right: Vec<Vec<f64>>,
    pub gap: f64,
}

impl EigenStructure {
    pub fn left_mat(&self) -> Mat {
        Mat::from_rows(&self.left)
    }

    pub fn right_mat(&self) -> Mat {
        let n = self.lambdas.len();
        let mut m = Mat::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                m[(i, j)] = self.right[j][i];
            }
        }
        m
    }
}

/// Eigen-decompose F(u); orientation fixed by the max-magnitude-positive
/// anchor rule. `NonStrictHyperbolicity` when the eigenvalue gap closes.
pub fn eigen_decompose(model: &FluxModel, u: &[f64]) -> Result<EigenStructure> {
    let f = model.jacobian(u);
    eigen_of_matrix(&f, model.hyperbolicity_tol, None)
        .map_err(|e| attach_state(e, u))
}

/// Same as `eigen_decompose` but orients each eigenvector to match `warm`
/// (continuity along a path) instead of the anchor rule.
pub fn eigen_decompose_warm(model: &FluxModel, u: &[f64], warm: &EigenStructure) -> Result<EigenStructure> {
    let f = model.jacobian(u);
    eigen_of_matrix(&f, model.hyperbolicity_tol, Some(warm))
        .map_err(|e| attach_state(e, u))
}

fn attach_state(e: Error, u: &[f64]) -> Error {
    match e {
        Error::NonStrictHyperbolicity { gap, tol, .. } => {
            Error::NonStrictHyperbolicity { gap, tol, state: u.to_vec() }
        }
        other => other,
    }
}

/// Core decomposition of a given matrix (assumed a flux Jacobian at some
/// state). QR iteration for eigenvalues, Newton polish on det(F - lambda I),
/// inverse iteration for the vectors.
pub fn eigen_of_matrix(f: &Mat, tol: f64, warm: Option<&EigenStructure>) -> Result<EigenStructure> {
    let n = f.rows;
    if n == 1 {
        return Ok(EigenStructure {
            lambdas: vec![f[(0, 0)]],
            left: vec![vec![1.0]],
            right: vec![vec![1.0]],
            gap: f64::INFINITY,
        });
    }
    let raw = qr_real_or_err(f, tol)?;
    let mut lambdas: Vec<f64> = raw.iter().map(|&l| linalg::polish_eigenvalue(f, l)).collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut gap = f64::INFINITY;
    for k in 0..n - 1 {
        gap = gap.min(lambdas[k + 1] - lambdas[k]);
    }
    if gap <= tol {
        return Err(Error::NonStrictHyperbolicity { gap, tol, state: vec![] });
    }
    let ft = f.transpose();
    let mut right = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    for j in 0..n {
        let seed_r = warm.map(|w| w.right[j].as_slice());
        let mut r = linalg::eigenvector(f, lambdas[j], seed_r).ok_or(Error::NonStrictHyperbolicity {
            gap,
            tol,
            state: vec![],
        })?;
        let seed_l = warm.map(|w| w.left[j].as_slice());
        let l = linalg::eigenvector(&ft, lambdas[j], seed_l).ok_or(Error::NonStrictHyperbolicity {
            gap,
            tol,
            state: vec![],
        })?;
        orient(&mut r, warm.map(|w| w.right[j].as_slice()));
        let mut l = l;
        let s = linalg::dot(&l, &r);
        if s.abs() < 1e-12 {
            return Err(Error::NonStrictHyperbolicity { gap, tol, state: vec![] });
        }
        for v in l.iter_mut() {
            *v /= s;
        }
        right.push(r);
        left.push(l);
    }
    Ok(EigenStructure { lambdas, left, right, gap })
}

fn qr_real_or_err(f: &Mat, tol: f64) -> Result<Vec<f64>> {
    linalg::qr_real_eigenvalues(f).ok_or(Error::NonStrictHyperbolicity {
        gap: 0.0,
        tol,
        state: vec![],
    })
}

fn orient(r: &mut [f64], warm: Option<&[f64]>) {
    let flip = match warm {
        Some(w) => linalg::dot(r, w) < 0.0,
        None => {
            let mut kmax = 0;
            for (k, v) in r.iter().enumerate() {
                if v.abs() > r[kmax].abs() {
                    kmax = k;
                }
            }
            r[kmax] < 0.0
        }
    };
    if flip {
        for v in r.iter_mut() {
            *v = -*v;
        }
    }
}

/// grad(lambda_j) . r_j at u, gradient by central differences of the
/// eigen-decomposition with warm-started orientation.
pub fn genuine_nonlinearity(model: &FluxModel, j: usize, u: &[f64]) -> Result<f64> {
    assert!(j < model.n, "field index out of range");
    let center = eigen_decompose(model, u)?;
    let mut grad = vec![0.0; model.n];
    let mut up = u.to_vec();
    for k in 0..model.n {
        let h = fd_step(u[k]);
        up[k] = u[k] + h;
        let ep = eigen_decompose_warm(model, &up, &center)?;
        up[k] = u[k] - h;
        let em = eigen_decompose_warm(model, &up, &center)?;
        up[k] = u[k];
        grad[k] = (ep.lambdas[j] - em.lambdas[j]) / (2.0 * h);
    }
    Ok(linalg::dot(&grad, &center.right[j]))
}

/// Max relative deviation between the analytic and finite-difference
/// Jacobians over the sample states; report-only.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub max_rel_dev: f64,
    pub worst_state: Vec<f64>,
    pub worst_entry: (usize, usize),
    pub pass: bool,
}

pub fn validate_jacobian(model: &FluxModel, samples: &[Vec<f64>]) -> JacobianReport {
    assert!(!samples.is_empty(), "need at least one sample state");
    let mut worst = 0.0;
    let mut worst_state = samples[0].clone();
    let mut worst_entry = (0, 0);
    for u in samples {
        let ja = model.jacobian(u);
        let jf = model.fd_jacobian(u);
        let scale = ja.frobenius().max(1.0);
        for r in 0..model.n {
            for c in 0..model.n {
                let dev = (ja[(r, c)] - jf[(r, c)]).abs() / scale;
                if dev > worst {
                    worst = dev;
                    worst_state = u.clone();
                    worst_entry = (r, c);
                }
            }
        }
    }
    JacobianReport {
        max_rel_dev: worst,
        worst_state,
        worst_entry,
        pass: worst < JACOBIAN_CHECK_TOL,
    }
}

/// Smooth compactly supported initial profile x -> u0(x), scaled by epsilon
/// at pipeline entry.
#[derive(Clone)]
pub struct InitialData {
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    profile: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
}

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InitialData")
            .field("epsilon", &self.epsilon)
            .field("support", &(self.a, self.b))
            .finish()
    }
}

impl InitialData {
    pub fn new(
        epsilon: f64,
        a: f64,
        b: f64,
        profile: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
    ) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if a >= b {
            return Err(Error::Config("support interval must satisfy a < b".into()));
        }
        let data = InitialData { epsilon, a, b, profile };
        data.check_support()?;
        Ok(data)
    }

    /// u0(x), identically zero outside [a, b].
    pub fn profile(&self, x: f64) -> Vec<f64> {
        if x <= self.a || x >= self.b {
            let probe = (self.profile)(0.5 * (self.a + self.b));
            return vec![0.0; probe.len()];
        }
        (self.profile)(x)
    }

    fn check_support(&self) -> Result<()> {
        let w = self.b - self.a;
        let mut max_outside = 0.0f64;
        let mut max_inside = 0.0f64;
        for k in 0..64 {
            let s = k as f64 / 63.0;
            let out_lo = (self.profile)(self.a - 1e-9 - s * w);
            let out_hi = (self.profile)(self.b + 1e-9 + s * w);
            for v in out_lo.iter().chain(out_hi.iter()) {
                max_outside = max_outside.max(v.abs());
            }
            let inside = (self.profile)(self.a + 1e-6 + s * (w - 2e-6));
            for v in &inside {
                max_inside = max_inside.max(v.abs());
            }
        }
        if max_outside > 1e-12 {
            return Err(Error::Config(format!(
                "profile does not vanish outside support (max {max_outside:.3e})"
            )));
        }
        if max_inside == 0.0 {
            return Err(Error::Config("profile is identically zero".into()));
        }
        Ok(())
    }
}

/// Smooth scalar shapes used by the builtin profiles.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// -sin(x) restricted to the support interval (the classical test datum;
    /// only C^0 at the endpoints unless the support is a period).
    NegSin,
    /// -sin(2 pi xi) * bump(xi) * (1 + 0.6 (xi - 1/2)) with a C-infinity bump
    /// in xi = (x-a)/(b-a); exactly compactly supported. The tilt breaks the
    /// mirror symmetry so the steepening rate has a unique minimum.
    SineBump,
    /// bump with two equal derivative minima (degenerate-minimum tests).
    TwinTrough,
}

impl Shape {
    pub fn eval(&self, a: f64, b: f64, x: f64) -> f64 {
        if x <= a || x >= b {
            return 0.0;
        }
        match self {
            Shape::NegSin => -(x.sin()),
            Shape::SineBump => {
                let xi = (x - a) / (b - a);
                -(2.0 * std::f64::consts::PI * xi).sin() * smooth_bump(xi) * (1.0 + 0.6 * (xi - 0.5))
            }
            Shape::TwinTrough => {
                let xi = (x - a) / (b - a);
                -(4.0 * std::f64::consts::PI * xi).sin() * smooth_bump(xi)
            }
        }
    }
}

/// C-infinity bump on (0,1): exp(1 - 1/(4 xi (1 - xi))), 1 at xi = 1/2.
pub fn smooth_bump(xi: f64) -> f64 {
    if xi <= 0.0 || xi >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (4.0 * xi * (1.0 - xi))).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::builtin;
    use super::*;

    #[test]
    fn burgers_eigen_scalar() {
        let m = builtin::burgers();
        let e = eigen_decompose(&m, &[0.3]).unwrap();
        assert!((e.lambdas[0] - 0.3).abs() < 1e-14);
        assert_eq!(e.left[0], vec![1.0]);
        assert_eq!(e.right[0], vec![1.0]);
    }

    #[test]
    fn p_system_eigenvalues_match_polynomial_roots() {
        // gamma = 2 at the reference state: lambda = -+ sqrt(-p'(1) * ... )
        // characteristic polynomial of [[0,-1],[p',0]] is l^2 + p'(1) = 0.
        let m = builtin::p_system(2.0, 1.0);
        let e = eigen_decompose(&m, &[0.0, 0.0]).unwrap();
        let expect = (2.0f64).sqrt();
        assert!((e.lambdas[0] + expect).abs() < 1e-10, "{:?}", e.lambdas);
        assert!((e.lambdas[1] - expect).abs() < 1e-10);
        // Polynomial-root oracle: p(l) = det(F - l I) must vanish.
        let f = m.jacobian(&[0.0, 0.0]);
        for l in &e.lambdas {
            assert!(crate::linalg::char_poly(&f, *l).abs() < 1e-10);
        }
        // Biorthonormality.
        for j in 0..2 {
            for k in 0..2 {
                let d = crate::linalg::dot(&e.left[j], &e.right[k]);
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn synthetic3_diagonal_at_origin() {
        let m = builtin::synthetic_n(3, 424242);
        let e = eigen_decompose(&m, &[0.0, 0.0, 0.0]).unwrap();
        let want = [-1.0, 0.0, 1.0];
        for (l, w) in e.lambdas.iter().zip(&want) {
            assert!((l - w).abs() < 1e-9, "{:?}", e.lambdas);
        }
        for j in 0..3 {
            for i in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((e.right[j][i] - want).abs() < 1e-8);
                assert!((e.left[j][i] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigen_sum_matches_trace() {
        let m = builtin::euler3(1.4, 1.0, 1.0);
        let mut rng_state = 123456789u64;
        for _ in 0..50 {
            let mut u = [0.0; 3];
            for v in u.iter_mut() {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = ((rng_state >> 33) as f64 / 2f64.powi(31) - 1.0) * 0.05;
            }
            let e = eigen_decompose(&m, &u).unwrap();
            let f = m.jacobian(&u);
            let sum: f64 = e.lambdas.iter().sum();
            assert!((sum - f.trace()).abs() < 1e-8 * (1.0 + f.trace().abs()));
        }
    }

    #[test]
    fn orientation_path_stable() {
        let m = builtin::euler3(1.4, 1.0, 1.0);
        let mut prev = eigen_decompose(&m, &[0.0, 0.0, 0.0]).unwrap();
        for k in 1..=40 {
            let s = k as f64 / 40.0;
            let u = [0.04 * s, -0.03 * s, 0.05 * s];
            let e = eigen_decompose_warm(&m, &u, &prev).unwrap();
            for j in 0..3 {
                assert!(crate::linalg::dot(&e.right[j], &prev.right[j]) > 0.0);
            }
            prev = e;
        }
    }

    #[test]
    fn genuine_nonlinearity_cases() {
        let b = builtin::burgers();
        let g = genuine_nonlinearity(&b, 0, &[0.0]).unwrap();
        assert!((g - 1.0).abs() < 1e-6);

        // Linear system: constant eigenvalues, zero genuine nonlinearity.
        let lin = builtin::linear_system(&Mat::from_rows(&[
            vec![0.3, 0.1, 0.0],
            vec![0.0, 1.1, 0.05],
            vec![0.02, 0.0, 2.4],
        ]));
        for j in 0..3 {
            let g = genuine_nonlinearity(&lin, j, &[0.01, -0.02, 0.005]).unwrap();
            assert!(g.abs() < 1e-7, "field {j}: {g}");
        }

        // p-system: analytic grad(lambda) . r from the closed-form eigenpair.
        // lambda_pm = -+ sqrt(-p'(v)), r_pm = (-+1, sqrt(-p'(v)))/norm with
        // l . r = 1 normalization; the invariant value is
        // dlambda/dv * r_v where r chosen by the same orientation rule.
        let gamma = 2.0;
        let m = builtin::p_system(gamma, 1.0);
        let e = eigen_decompose(&m, &[0.0, 0.0]).unwrap();
        for j in 0..2 {
            let g = genuine_nonlinearity(&m, j, &[0.0, 0.0]).unwrap();
            // analytic: lambda_j(v) with c(v) = sqrt(gamma) v^-(gamma+1)/2 (at v=1):
            // dlambda/dv = -+ c'(v); GN = (dlambda/dv) * r_v component.
            let c = gamma.sqrt();
            let cp = -c * (gamma + 1.0) / 2.0; // d/dv sqrt(gamma v^-(gamma+1)) at v=1
            let dlam_dv = if e.lambdas[j] < 0.0 { -cp } else { cp };
            let expect = dlam_dv * e.right[j][0];
            assert!((g - expect).abs() < 1e-6, "field {j}: {g} vs {expect}");
        }
    }

    #[test]
    fn jacobian_validation_and_injected_fault() {
        let m = builtin::euler3(1.4, 1.0, 1.0);
        let mut samples = Vec::new();
        let mut state = 99u64;
        for _ in 0..100 {
            let mut u = vec![0.0; 3];
            for v in u.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = ((state >> 33) as f64 / 2f64.powi(31) - 1.0) * 0.05;
            }
            samples.push(u);
        }
        let rep = validate_jacobian(&m, &samples);
        assert!(rep.pass, "max dev {}", rep.max_rel_dev);

        // Deliberately wrong entry must fail and be located.
        let bad = builtin::with_broken_jacobian(&m, (1, 2), 0.1);
        let rep = validate_jacobian(&bad, &samples);
        assert!(!rep.pass);
        assert_eq!(rep.worst_entry, (1, 2));

        // Burgers FD truncation is tiny.
        let b = builtin::burgers();
        let rep = validate_jacobian(&b, &[vec![0.0], vec![0.5], vec![-0.5]]);
        assert!(rep.max_rel_dev < 1e-10);
    }

    #[test]
    fn initial_data_support_enforced() {
        let ok = InitialData::new(
            0.1,
            -1.0,
            1.0,
            Arc::new(|x| vec![Shape::SineBump.eval(-1.0, 1.0, x)]),
        );
        assert!(ok.is_ok());
        let bad = InitialData::new(0.1, -1.0, 1.0, Arc::new(|_| vec![1.0]));
        assert!(bad.is_err());
        let zero = InitialData::new(0.1, -1.0, 1.0, Arc::new(|_| vec![0.0]));
        assert!(zero.is_err());
    }
}
