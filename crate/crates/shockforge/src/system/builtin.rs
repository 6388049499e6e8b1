//! Built-in system families. All non-scalar families are expressed in
//! background-shifted coordinates so the rest state sits at u = 0.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FluxModel;
use crate::linalg::Mat;
use crate::poly::{monomials, MultiPoly, Term};

/// Inviscid Burgers: f(u) = u^2 / 2.
pub fn burgers() -> FluxModel {
    FluxModel::new(
        1,
        "burgers",
        Arc::new(|u: &[f64], out: &mut [f64]| out[0] = 0.5 * u[0] * u[0]),
        Some(Arc::new(|u: &[f64]| {
            let mut m = Mat::zeros(1, 1);
            m[(0, 0)] = u[0];
            m
        })),
        1e6,
    )
}

/// Lagrangian p-system with p(v) = v^-gamma, shifted so the reference state
/// (v_ref, 0) sits at the origin. States are (v - v_ref, m).
pub fn p_system(gamma: f64, v_ref: f64) -> FluxModel {
    let g = gamma;
    let vr = v_ref;
    FluxModel::new(
        2,
        format!("p_system(gamma={g},v_ref={vr})"),
        Arc::new(move |u: &[f64], out: &mut [f64]| {
            let v = vr + u[0];
            out[0] = -u[1];
            out[1] = v.powf(-g) - vr.powf(-g);
        }),
        Some(Arc::new(move |u: &[f64]| {
            let v = vr + u[0];
            let mut m = Mat::zeros(2, 2);
            m[(0, 1)] = -1.0;
            m[(1, 0)] = -g * v.powf(-g - 1.0);
            m
        })),
        0.5 * v_ref,
    )
}

/// Full 1-D Euler in conservative variables (rho, m, E), shifted around the
/// quiescent background (rho0, 0, p0/(gamma-1)).
pub fn euler3(gamma: f64, rho0: f64, p0: f64) -> FluxModel {
    let g = gamma;
    let base = [rho0, 0.0, p0 / (g - 1.0)];
    let base_flux = euler_flux(g, &base);
    FluxModel::new(
        3,
        format!("euler3(gamma={g},rho0={rho0},p0={p0})"),
        Arc::new(move |u: &[f64], out: &mut [f64]| {
            let w = [base[0] + u[0], base[1] + u[1], base[2] + u[2]];
            let f = euler_flux(g, &w);
            for k in 0..3 {
                out[k] = f[k] - base_flux[k];
            }
        }),
        Some(Arc::new(move |u: &[f64]| {
            let rho = base[0] + u[0];
            let m = base[1] + u[1];
            let e = base[2] + u[2];
            let v = m / rho;
            let q = 0.5 * m * v; // kinetic energy density
            let p = (g - 1.0) * (e - q);
            let mut j = Mat::zeros(3, 3);
            j[(0, 1)] = 1.0;
            j[(1, 0)] = 0.5 * (g - 3.0) * v * v;
            j[(1, 1)] = (3.0 - g) * v;
            j[(1, 2)] = g - 1.0;
            j[(2, 0)] = -v * (g * e / rho - (g - 1.0) * v * v);
            j[(2, 1)] = g * e / rho - 1.5 * (g - 1.0) * v * v;
            j[(2, 2)] = g * v;
            let _ = p;
            j
        })),
        0.3 * rho0.min(p0 / (g - 1.0)),
    )
}

fn euler_flux(g: f64, w: &[f64; 3]) -> [f64; 3] {
    let (rho, m, e) = (w[0], w[1], w[2]);
    let v = m / rho;
    let p = (g - 1.0) * (e - 0.5 * m * v);
    [m, m * v + p, (e + p) * v]
}

/// Random smooth cubic perturbation of a fixed diagonal Jacobian at the
/// origin (evenly spread eigenvalues on [-1, 1]); every field genuinely
/// nonlinear. Deterministic for a given seed.
pub fn synthetic_n(n: usize, seed: u64) -> FluxModel {
    assert!((1..=6).contains(&n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f0c_f00d_u64 ^ (n as u64) << 56);
    let mut polys = Vec::with_capacity(n);
    for k in 0..n {
        let lam0 = if n == 1 { 0.0 } else { -1.0 + 2.0 * k as f64 / (n as f64 - 1.0) };
        let mut terms = Vec::new();
        let mut lin = vec![0u8; n];
        lin[k] = 1;
        terms.push(Term { exps: lin, coeff: lam0 });
        // Quadratic self-term pins the genuine nonlinearity of field k at O(1).
        let mut sq = vec![0u8; n];
        sq[k] = 2;
        terms.push(Term { exps: sq, coeff: 0.5 * (0.75 + 0.25 * rng.gen::<f64>()) });
        for exps in monomials(n, 2, 3) {
            if exps.iter().map(|&e| e as usize).sum::<usize>() == 2 && exps[k] == 2 {
                continue; // already placed
            }
            let c: f64 = rng.gen_range(-0.15..0.15);
            terms.push(Term { exps, coeff: c });
        }
        polys.push(MultiPoly::from_terms(n, terms));
    }
    poly_flux(polys, format!("synthetic_{n}(seed={seed})"), 0.4)
}

/// Linear system f(u) = C u (zero genuine nonlinearity everywhere).
pub fn linear_system(c: &Mat) -> FluxModel {
    let n = c.rows;
    let mut polys = Vec::with_capacity(n);
    for r in 0..n {
        let mut terms = Vec::new();
        for j in 0..n {
            if c[(r, j)] != 0.0 {
                let mut e = vec![0u8; n];
                e[j] = 1;
                terms.push(Term { exps: e, coeff: c[(r, j)] });
            }
        }
        polys.push(MultiPoly::from_terms(n, terms));
    }
    poly_flux(polys, "linear".to_string(), 1e6)
}

/// Flux from a polynomial-coefficient table (degree <= 4 monomials), with
/// the analytic Jacobian derived term by term.
pub fn poly_flux(components: Vec<MultiPoly>, label: String, box_radius: f64) -> FluxModel {
    let n = components.len();
    for p in &components {
        assert_eq!(p.nvars, n);
        assert!(p.total_degree() <= 4, "flux table limited to degree 4");
    }
    let jac: Vec<Vec<MultiPoly>> = components
        .iter()
        .map(|p| (0..n).map(|v| p.partial(v)).collect())
        .collect();
    let comps = Arc::new(components);
    let comps2 = comps.clone();
    FluxModel::new(
        n,
        label,
        Arc::new(move |u: &[f64], out: &mut [f64]| {
            for (k, p) in comps.iter().enumerate() {
                out[k] = p.eval(u);
            }
        }),
        Some(Arc::new(move |u: &[f64]| {
            let _ = &comps2;
            let mut m = Mat::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    m[(r, c)] = jac[r][c].eval(u);
                }
            }
            m
        })),
        box_radius,
    )
}

/// Copy of a model with one analytic Jacobian entry perturbed; used to verify
/// that the Jacobian validator localizes faults.
pub fn with_broken_jacobian(model: &FluxModel, entry: (usize, usize), bias: f64) -> FluxModel {
    let inner = model.clone();
    FluxModel::new(
        model.n,
        format!("{}+broken", model.label),
        Arc::new({
            let inner = inner.clone();
            move |u: &[f64], out: &mut [f64]| inner.flux_into(u, out)
        }),
        Some(Arc::new(move |u: &[f64]| {
            let mut j = inner.jacobian(u);
            j[entry] += bias;
            j
        })),
        model.box_radius,
    )
}

/// Decoupled stack of scalar Burgers equations with distinct base speeds;
/// exactly solvable componentwise.
pub fn decoupled_burgers_stack(n: usize) -> FluxModel {
    let mut polys = Vec::with_capacity(n);
    for k in 0..n {
        let lam0 = if n == 1 { 0.0 } else { -1.0 + 2.0 * k as f64 / (n as f64 - 1.0) };
        let mut lin = vec![0u8; n];
        lin[k] = 1;
        let mut sq = vec![0u8; n];
        sq[k] = 2;
        polys.push(MultiPoly::from_terms(
            n,
            vec![Term { exps: lin, coeff: lam0 }, Term { exps: sq, coeff: 0.5 }],
        ));
    }
    poly_flux(polys, format!("decoupled_{n}"), 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{eigen_decompose, validate_jacobian};

    #[test]
    fn poly_flux_jacobian_is_exact() {
        let m = synthetic_n(4, 7);
        let rep = validate_jacobian(&m, &[vec![0.01, -0.02, 0.03, 0.015], vec![0.0; 4]]);
        assert!(rep.max_rel_dev < 1e-9, "dev {}", rep.max_rel_dev);
    }

    #[test]
    fn synthetic_seeds_are_deterministic() {
        let a = synthetic_n(3, 42);
        let b = synthetic_n(3, 42);
        let u = [0.01, 0.02, -0.01];
        assert_eq!(a.flux(&u), b.flux(&u));
    }

    #[test]
    fn euler_eigenvalues_are_acoustic_triple() {
        let g = 1.4;
        let m = euler3(g, 1.0, 1.0);
        let e = eigen_decompose(&m, &[0.0; 3]).unwrap();
        let c = (g * 1.0 / 1.0f64).sqrt();
        assert!((e.lambdas[0] + c).abs() < 1e-9);
        assert!(e.lambdas[1].abs() < 1e-9);
        assert!((e.lambdas[2] - c).abs() < 1e-9);
    }

    #[test]
    fn decoupled_stack_is_componentwise_burgers() {
        let m = decoupled_burgers_stack(3);
        let u = [0.1, -0.05, 0.02];
        let f = m.flux(&u);
        let lam = [-1.0, 0.0, 1.0];
        for k in 0..3 {
            assert!((f[k] - (lam[k] * u[k] + 0.5 * u[k] * u[k])).abs() < 1e-14);
        }
    }
}
