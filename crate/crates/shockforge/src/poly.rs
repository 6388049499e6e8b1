//! Sparse multivariate polynomials over f64, used by the custom flux tables
//! and the normal-form construction.

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub exps: Vec<u8>,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPoly {
    pub nvars: usize,
    pub terms: Vec<Term>,
}

impl MultiPoly {
    pub fn zero(nvars: usize) -> Self {
        MultiPoly { nvars, terms: Vec::new() }
    }

    pub fn from_terms(nvars: usize, terms: Vec<Term>) -> Self {
        let mut p = MultiPoly { nvars, terms };
        p.compress();
        p
    }

    pub fn push(&mut self, exps: Vec<u8>, coeff: f64) {
        assert_eq!(exps.len(), self.nvars);
        self.terms.push(Term { exps, coeff });
    }

    fn compress(&mut self) {
        self.terms.sort_by(|a, b| a.exps.cmp(&b.exps));
        let mut out: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            if let Some(last) = out.last_mut() {
                if last.exps == t.exps {
                    last.coeff += t.coeff;
                    continue;
                }
            }
            out.push(t);
        }
        out.retain(|t| t.coeff != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in &self.terms {
            s += t.coeff * eval_monomial(&t.exps, x);
        }
        s
    }

    /// Gradient at x, written into `grad`.
    pub fn grad(&self, x: &[f64], grad: &mut [f64]) {
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for t in &self.terms {
            for v in 0..self.nvars {
                let e = t.exps[v];
                if e == 0 {
                    continue;
                }
                let mut m = t.coeff * e as f64;
                for (u, &eu) in t.exps.iter().enumerate() {
                    let p = if u == v { eu - 1 } else { eu };
                    m *= powi(x[u], p);
                }
                grad[v] += m;
            }
        }
    }

    pub fn partial(&self, v: usize) -> MultiPoly {
        let mut out = MultiPoly::zero(self.nvars);
        for t in &self.terms {
            let e = t.exps[v];
            if e == 0 {
                continue;
            }
            let mut exps = t.exps.clone();
            exps[v] = e - 1;
            out.push(exps, t.coeff * e as f64);
        }
        out.compress();
        out
    }

    pub fn total_degree(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.exps.iter().map(|&e| e as usize).sum::<usize>())
            .max()
            .unwrap_or(0)
    }
}

pub fn eval_monomial(exps: &[u8], x: &[f64]) -> f64 {
    let mut m = 1.0;
    for (xi, &e) in x.iter().zip(exps) {
        m *= powi(*xi, e);
    }
    m
}

/// d/dx_v of the monomial with the given exponents, at x.
pub fn eval_monomial_partial(exps: &[u8], v: usize, x: &[f64]) -> f64 {
    let e = exps[v];
    if e == 0 {
        return 0.0;
    }
    let mut m = e as f64;
    for (u, &eu) in exps.iter().enumerate() {
        let p = if u == v { eu - 1 } else { eu };
        m *= powi(x[u], p);
    }
    m
}

fn powi(x: f64, e: u8) -> f64 {
    let mut p = 1.0;
    for _ in 0..e {
        p *= x;
    }
    p
}

/// All exponent vectors of `nvars` variables with total degree in [lo, hi],
/// in a deterministic (graded lexicographic) order.
pub fn monomials(nvars: usize, lo: usize, hi: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for d in lo..=hi {
        let mut cur = vec![0u8; nvars];
        gen_degree(nvars, d, 0, &mut cur, &mut out);
    }
    out
}

fn gen_degree(nvars: usize, remaining: usize, var: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if var == nvars - 1 {
        cur[var] = remaining as u8;
        out.push(cur.clone());
        cur[var] = 0;
        return;
    }
    for d in (0..=remaining).rev() {
        cur[var] = d as u8;
        gen_degree(nvars, remaining - d, var + 1, cur, out);
        cur[var] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_grad() {
        // p(x, y) = 3 x^2 y + y^3
        let p = MultiPoly::from_terms(
            2,
            vec![
                Term { exps: vec![2, 1], coeff: 3.0 },
                Term { exps: vec![0, 3], coeff: 1.0 },
            ],
        );
        let x = [2.0, -1.0];
        assert!((p.eval(&x) - (3.0 * 4.0 * -1.0 + -1.0)).abs() < 1e-14);
        let mut g = [0.0; 2];
        p.grad(&x, &mut g);
        assert!((g[0] - 6.0 * 2.0 * -1.0).abs() < 1e-14);
        assert!((g[1] - (3.0 * 4.0 + 3.0)).abs() < 1e-14);
    }

    #[test]
    fn monomial_counts() {
        // Degree 2..4 in 3 vars: 6 + 10 + 15.
        assert_eq!(monomials(3, 2, 4).len(), 31);
        assert_eq!(monomials(1, 0, 4).len(), 5);
    }
}
