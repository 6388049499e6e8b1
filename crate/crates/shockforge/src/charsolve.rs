//! Characteristic-coordinate solvers.
//!
//! `smooth_evolve` marches the system in physical (x, t) coordinates up to a
//! handoff time well before the gradient catastrophe. `solve_blowup_system`
//! continues in characteristic (y, t) coordinates, where the fields stay
//! smooth across the catastrophe: the i-th family reduces to vertical lines,
//! and the other families are transported along the curves
//! dt/dy = K / (lambda_j - lambda_i), which stay regular as K -> 0.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::interp;
use crate::linalg::{self, Mat};
use crate::normalize::{NormalizedSystem, WFrame};
use crate::system::InitialData;

#[derive(Debug, Clone)]
pub struct CharSolveConfig {
    /// Nodes across the handoff image of the support (power of two).
    pub core_nodes: usize,
    /// Extra y-padding beyond the support image, in units of
    /// 2 max|lambda_k(0)| + this additive term.
    pub pad_extra: f64,
    /// Coarse steps from t0 toward the estimated crossing.
    pub coarse_steps: usize,
    /// Absolute step in the medium window around the crossing.
    pub dt_med: f64,
    /// Absolute step in the fine window straddling the crossing.
    pub dt_fine: f64,
    /// Continuation time past the detected crossing.
    pub delta_ext: f64,
    /// Time-to-cross thresholds (absolute) that trigger the medium and fine
    /// windows; the estimate uses min K / (eps |N|).
    pub med_lead: f64,
    pub fine_lead: f64,
    /// Fine window tail after the crossing.
    pub fine_tail: f64,
    /// Store every k-th coarse level.
    pub store_stride_coarse: usize,
    /// Within-step Picard sweeps (2 gives second order).
    pub sweeps: usize,
    /// Hard cap on integration steps.
    pub max_steps: usize,
}

impl Default for CharSolveConfig {
    fn default() -> Self {
        CharSolveConfig {
            core_nodes: 1024,
            pad_extra: 2.0,
            coarse_steps: 320,
            dt_med: 5e-3,
            dt_fine: 5e-4,
            delta_ext: 1.0,
            med_lead: 1.2,
            fine_lead: 0.06,
            fine_tail: 0.06,
            store_stride_coarse: 4,
            sweeps: 2,
            max_steps: 60_000,
        }
    }
}

/// Physical-frame evolution up to the handoff time.
#[derive(Debug, Clone)]
pub struct SmoothPhase {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub t0: f64,
    /// Subsampled snapshots (t, fields) on the way to t0.
    pub t_levels: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    /// w(., t0), length nx * n.
    pub handoff: Vec<f64>,
    pub n: usize,
    /// Support image [a0, b0] of the initial support under the i-th flow.
    pub a0: f64,
    pub b0: f64,
    pub eps: f64,
}

impl SmoothPhase {
    pub fn x_at(&self, k: usize) -> f64 {
        self.x0 + self.dx * k as f64
    }

    pub fn handoff_state(&self, k: usize) -> &[f64] {
        &self.handoff[k * self.n..(k + 1) * self.n]
    }

    /// Interpolated handoff state at x.
    pub fn handoff_at(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        if x < self.x0 || x > self.x_at(self.nx - 1) {
            return out;
        }
        let mut comp = vec![0.0; self.nx];
        for c in 0..self.n {
            for k in 0..self.nx {
                comp[k] = self.handoff[k * self.n + c];
            }
            out[c] = interp::cubic_uniform(self.x0, self.dx, &comp, x);
        }
        out
    }
}

struct LevelFrames {
    frames: Vec<WFrame>,
    /// node * n + family eigenvalues for fast scalar interpolation.
    lam: Vec<f64>,
}

fn compute_frames(
    ns: &NormalizedSystem,
    v: &[f64],
    prev: Option<&LevelFrames>,
) -> Result<LevelFrames> {
    let n = ns.n;
    let nodes = v.len() / n;
    let mut frames = Vec::with_capacity(nodes);
    let mut lam = vec![0.0; nodes * n];
    let mut left_warm: Option<&WFrame> = None;
    for q in 0..nodes {
        let w = &v[q * n..(q + 1) * n];
        let reuse = prev.and_then(|p| {
            let f = &p.frames[q];
            let close = w
                .iter()
                .zip(&f.w)
                .all(|(a, b)| (a - b).abs() < 1e-14 * (1.0 + a.abs()));
            if close {
                Some(f.clone())
            } else {
                None
            }
        });
        let frame = match reuse {
            Some(f) => f,
            None => {
                let warm = prev.map(|p| &p.frames[q]).or(left_warm);
                ns.frame_at(w, warm)?
            }
        };
        for c in 0..n {
            lam[q * n + c] = frame.lambdas[c];
        }
        frames.push(frame);
        left_warm = frames.last();
    }
    Ok(LevelFrames { frames, lam })
}

fn component_slice(v: &[f64], n: usize, c: usize, out: &mut [f64]) {
    for (q, o) in out.iter_mut().enumerate() {
        *o = v[q * n + c];
    }
}

/// CIR update common to both solvers: solve L v_new = [l_k . v_foot] with the
/// left rows evaluated at the vertical midpoint state.
fn cir_solve(
    ns: &NormalizedSystem,
    vbar: &[f64],
    warm: &WFrame,
    feet: &[Vec<f64>],
) -> Result<(Vec<f64>, WFrame)> {
    let n = ns.n;
    let frame = ns.frame_at(vbar, Some(warm))?;
    let mut lmat = Mat::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        for c in 0..n {
            lmat[(k, c)] = frame.left_w[k][c];
        }
        rhs[k] = linalg::dot(&frame.left_w[k], &feet[k]);
    }
    let v_new = linalg::solve(&lmat, &rhs).ok_or(Error::StepFailure {
        t: 0.0,
        reason: "singular characteristic frame".into(),
    })?;
    Ok((v_new, frame))
}

/// Evolve the system in (x, t) from t = 0 to t0 by the characteristic
/// relations l_k(w) dw = 0 along dx/dt = lambda_k(w).
pub fn smooth_evolve(
    ns: &NormalizedSystem,
    data: &InitialData,
    t0: f64,
    t_hat: f64,
    dx: f64,
    dt: f64,
) -> Result<SmoothPhase> {
    if t0 >= 0.9 * t_hat {
        return Err(Error::EarlyCrossing { t0, t: t0, min_k: 0.0 });
    }
    let n = ns.n;
    let lam_min = ns.lambda0[0];
    let lam_max = ns.lambda0[n - 1];
    let margin = 1.0 + 0.2 * (lam_max - lam_min).abs();
    let x_lo = data.a + lam_min * t0 - margin;
    let x_hi = data.b + lam_max * t0 + margin;
    let nx = ((x_hi - x_lo) / dx).ceil() as usize + 1;
    let mut w = vec![0.0; nx * n];
    for k in 0..nx {
        let x = x_lo + dx * k as f64;
        let u: Vec<f64> = data.profile(x).iter().map(|v| v * data.epsilon).collect();
        let wk = ns.to_w(&u);
        w[k * n..(k + 1) * n].copy_from_slice(&wk);
    }

    let steps = (t0 / dt).ceil() as usize;
    let dt = t0 / steps as f64;
    let stride = (steps / 24).max(1);
    let mut t_levels = vec![0.0];
    let mut snapshots = vec![w.clone()];
    let mut frames = compute_frames(ns, &w, None)?;
    let mut t = 0.0;
    let mut comp = vec![0.0; nx];
    for step in 0..steps {
        let mut w_new = w.clone();
        for sweep in 0..2 {
            // Midpoint eigen frames.
            let vbar: Vec<f64> = w.iter().zip(&w_new).map(|(a, b)| 0.5 * (a + b)).collect();
            let fr_bar = if sweep == 0 {
                None
            } else {
                Some(compute_frames(ns, &vbar, Some(&frames))?)
            };
            let fr_eval = fr_bar.as_ref().unwrap_or(&frames);
            // Per-component arrays of the current level for foot interpolation.
            let mut comps_m: Vec<Vec<f64>> = Vec::with_capacity(n);
            for c in 0..n {
                component_slice(&w, n, c, &mut comp);
                comps_m.push(comp.clone());
            }
            let mut lam_new = vec![0.0; nx * n];
            if sweep > 0 {
                // Approximate new-level speeds from the previous sweep result.
                let fr_new = compute_frames(ns, &w_new, Some(&frames))?;
                lam_new.copy_from_slice(&fr_new.lam);
            } else {
                lam_new.copy_from_slice(&frames.lam);
            }
            let mut next = vec![0.0; nx * n];
            for q in 0..nx {
                let x = x_lo + dx * q as f64;
                let mut feet: Vec<Vec<f64>> = Vec::with_capacity(n);
                for fam in 0..n {
                    // Midpoint speed between levels.
                    let lam_m = frames.lam[q * n + fam];
                    let lam_p = lam_new[q * n + fam];
                    let xf_pred = x - dt * 0.5 * (lam_m + lam_p);
                    // One corrector pass on the foot using the old-level field.
                    let lam_foot = if xf_pred >= x_lo && xf_pred <= x_hi {
                        interp::cubic_uniform(x_lo, dx, &comps_m_speed(&frames.lam, n, fam, nx, &mut comp), xf_pred)
                    } else {
                        ns.lambda0[fam]
                    };
                    let xf = x - dt * 0.5 * (lam_foot + lam_p);
                    let mut vf = vec![0.0; n];
                    if xf >= x_lo && xf <= x_hi {
                        for c in 0..n {
                            vf[c] = interp::cubic_uniform(x_lo, dx, &comps_m[c], xf);
                        }
                    }
                    feet.push(vf);
                }
                let vbar_q = &vbar[q * n..(q + 1) * n];
                let (v_new, _) = cir_solve(ns, vbar_q, &fr_eval.frames[q], &feet)?;
                next[q * n..(q + 1) * n].copy_from_slice(&v_new);
            }
            w_new = next;
        }
        // Crossing guard on the i-th family within a step.
        let mut min_spacing = f64::INFINITY;
        for q in 0..nx - 1 {
            let li0 = frames.lam[q * n + ns.i];
            let li1 = frames.lam[(q + 1) * n + ns.i];
            min_spacing = min_spacing.min(dx + dt * (li1 - li0));
        }
        if min_spacing <= 0.0 {
            return Err(Error::EarlyCrossing { t0, t, min_k: min_spacing / dx });
        }
        w = w_new;
        frames = compute_frames(ns, &w, Some(&frames))?;
        t += dt;
        if (step + 1) % stride == 0 || step + 1 == steps {
            t_levels.push(t);
            snapshots.push(w.clone());
        }
    }
    // Support image under the i-th flow: trace a and b through the speeds.
    let a0 = trace_point(ns, &snapshots, &t_levels, x_lo, dx, nx, data.a)?;
    let b0 = trace_point(ns, &snapshots, &t_levels, x_lo, dx, nx, data.b)?;
    Ok(SmoothPhase {
        x0: x_lo,
        dx,
        nx,
        t0,
        t_levels,
        snapshots,
        handoff: w,
        n,
        a0,
        b0,
        eps: data.epsilon,
    })
}

fn comps_m_speed<'a>(lam: &[f64], n: usize, fam: usize, nx: usize, buf: &'a mut Vec<f64>) -> &'a [f64] {
    buf.resize(nx, 0.0);
    for q in 0..nx {
        buf[q] = lam[q * n + fam];
    }
    buf
}

/// Forward-trace an i-characteristic from (x_init, 0) through the stored
/// snapshots to t0.
fn trace_point(
    ns: &NormalizedSystem,
    snapshots: &[Vec<f64>],
    t_levels: &[f64],
    x_lo: f64,
    dx: f64,
    nx: usize,
    x_init: f64,
) -> Result<f64> {
    let n = ns.n;
    let mut x = x_init;
    let mut frame = ns.frame_at(&vec![0.0; n], None)?;
    for lev in 0..t_levels.len() - 1 {
        let dt = t_levels[lev + 1] - t_levels[lev];
        // Midpoint speed from the two snapshots.
        let v0 = sample_state(&snapshots[lev], n, x_lo, dx, nx, x);
        frame = ns.frame_at(&v0, Some(&frame))?;
        let l0 = frame.lambdas[ns.i];
        let xm = x + 0.5 * dt * l0;
        let vm0 = sample_state(&snapshots[lev], n, x_lo, dx, nx, xm);
        let vm1 = sample_state(&snapshots[lev + 1], n, x_lo, dx, nx, xm);
        let vm: Vec<f64> = vm0.iter().zip(&vm1).map(|(a, b)| 0.5 * (a + b)).collect();
        frame = ns.frame_at(&vm, Some(&frame))?;
        x += dt * frame.lambdas[ns.i];
    }
    Ok(x)
}

fn sample_state(w: &[f64], n: usize, x_lo: f64, dx: f64, nx: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if x < x_lo || x > x_lo + dx * (nx as f64 - 1.0) {
        return out;
    }
    let mut comp = vec![0.0; nx];
    for c in 0..n {
        for k in 0..nx {
            comp[k] = w[k * n + c];
        }
        out[c] = interp::cubic_uniform(x_lo, dx, &comp, x);
    }
    out
}

/// Blowup-system fields on the characteristic-plane tensor grid.
#[derive(Debug, Clone)]
pub struct CharGrid {
    pub n: usize,
    pub i_field: usize,
    pub eps: f64,
    pub y0: f64,
    pub dy: f64,
    pub ny: usize,
    pub t0: f64,
    /// Stored level times (monotone, nonuniform).
    pub t: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Characteristic derivative components at stored levels (None on coarse
    /// levels): slot i holds l_i(v) d_y v, slot j != i holds l_j(v) d_t v.
    pub h: Vec<Option<Vec<f64>>>,
    /// First stored time with min_y K <= 0.
    pub t_cross: Option<f64>,
    /// Node range of the support image [a0, b0].
    pub core: (usize, usize),
    pub deriv_order: usize,
    /// Count of lateral boundary fills during transport traces.
    pub boundary_fills: u64,
}

impl CharGrid {
    pub fn y_at(&self, q: usize) -> f64 {
        self.y0 + self.dy * q as f64
    }

    pub fn y_max(&self) -> f64 {
        self.y_at(self.ny - 1)
    }

    pub fn level_min_k(&self, lev: usize) -> f64 {
        self.k[lev].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Interpolate a nodal array in time at t (cubic in the level times).
    fn time_weights(&self, t: f64) -> (usize, [f64; 4]) {
        let nlev = self.t.len();
        let k = interp::bracket(&self.t, t);
        let lo = k.saturating_sub(1).min(nlev.saturating_sub(4));
        let xs = &self.t[lo..(lo + 4).min(nlev)];
        let mut wts = [0.0; 4];
        let m = xs.len();
        for j in 0..m {
            let mut lj = 1.0;
            for l in 0..m {
                if l != j {
                    lj *= (t - xs[l]) / (xs[j] - xs[l]);
                }
            }
            wts[j] = lj;
        }
        (lo, wts)
    }

    /// phi(., t) as a nodal array.
    pub fn phi_slice(&self, t: f64) -> Result<PhiSlice> {
        if t < self.t0 - 1e-12 || t > self.t_end() + 1e-12 {
            return Err(Error::OutOfDomain { x: f64::NAN, t });
        }
        let (lo, w) = self.time_weights(t);
        let m = (self.t.len() - lo).min(4);
        let mut phi = vec![0.0; self.ny];
        let mut k = vec![0.0; self.ny];
        let mut v = vec![0.0; self.ny * self.n];
        for j in 0..m {
            let wj = w[j];
            if wj == 0.0 {
                continue;
            }
            for q in 0..self.ny {
                phi[q] += wj * self.phi[lo + j][q];
                k[q] += wj * self.k[lo + j][q];
            }
            for idx in 0..self.ny * self.n {
                v[idx] += wj * self.v[lo + j][idx];
            }
        }
        Ok(PhiSlice { t, y0: self.y0, dy: self.dy, ny: self.ny, n: self.n, phi, k, v })
    }

    /// All branches (y, state) solving phi(y, t) = x.
    pub fn sample_physical(&self, x: f64, t: f64) -> Result<Vec<(f64, Vec<f64>)>> {
        let slice = self.phi_slice(t)?;
        let roots = slice.roots(x);
        if roots.is_empty() {
            return Err(Error::OutOfDomain { x, t });
        }
        Ok(roots
            .into_iter()
            .map(|y| {
                let state = slice.state_at(y);
                (y, state)
            })
            .collect())
    }

    /// Compact binary snapshot for resume.
    pub fn save_snapshot(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(b"SFCG1\n")?;
        let mut buf = Vec::new();
        for v in [
            self.n as f64,
            self.i_field as f64,
            self.eps,
            self.y0,
            self.dy,
            self.ny as f64,
            self.t0,
            self.t.len() as f64,
            self.core.0 as f64,
            self.core.1 as f64,
            self.t_cross.unwrap_or(f64::NAN),
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for lev in 0..self.t.len() {
            buf.extend_from_slice(&self.t[lev].to_le_bytes());
            for arr in [&self.phi[lev], &self.k[lev], &self.v[lev]] {
                for x in arr.iter() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
            match &self.h[lev] {
                Some(h) => {
                    buf.extend_from_slice(&1.0f64.to_le_bytes());
                    for x in h.iter() {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
                None => buf.extend_from_slice(&0.0f64.to_le_bytes()),
            }
        }
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load_snapshot(path: &std::path::Path) -> Result<CharGrid> {
        let mut f = std::fs::File::open(path)?;
        let mut head = [0u8; 6];
        f.read_exact(&mut head)?;
        if &head != b"SFCG1\n" {
            return Err(Error::Config("bad snapshot magic".into()));
        }
        let mut rest = Vec::new();
        f.read_to_end(&mut rest)?;
        let mut cur = 0usize;
        let mut rd = || -> Result<f64> {
            let b = rest
                .get(cur..cur + 8)
                .ok_or_else(|| Error::Config("truncated snapshot".into()))?;
            cur += 8;
            Ok(f64::from_le_bytes(b.try_into().unwrap()))
        };
        let n = rd()? as usize;
        let i_field = rd()? as usize;
        let eps = rd()?;
        let y0 = rd()?;
        let dy = rd()?;
        let ny = rd()? as usize;
        let t0 = rd()?;
        let nlev = rd()? as usize;
        let core = (rd()? as usize, rd()? as usize);
        let tc = rd()?;
        let mut t = Vec::with_capacity(nlev);
        let mut phi = Vec::with_capacity(nlev);
        let mut k = Vec::with_capacity(nlev);
        let mut v = Vec::with_capacity(nlev);
        let mut h = Vec::with_capacity(nlev);
        for _ in 0..nlev {
            t.push(rd()?);
            let mut p = vec![0.0; ny];
            for x in p.iter_mut() {
                *x = rd()?;
            }
            phi.push(p);
            let mut kk = vec![0.0; ny];
            for x in kk.iter_mut() {
                *x = rd()?;
            }
            k.push(kk);
            let mut vv = vec![0.0; ny * n];
            for x in vv.iter_mut() {
                *x = rd()?;
            }
            v.push(vv);
            let flag = rd()?;
            if flag > 0.5 {
                let mut hh = vec![0.0; ny * n];
                for x in hh.iter_mut() {
                    *x = rd()?;
                }
                h.push(Some(hh));
            } else {
                h.push(None);
            }
        }
        Ok(CharGrid {
            n,
            i_field,
            eps,
            y0,
            dy,
            ny,
            t0,
            t,
            phi,
            k,
            v,
            h,
            t_cross: if tc.is_nan() { None } else { Some(tc) },
            core,
            deriv_order: 4,
            boundary_fills: 0,
        })
    }
}

/// A fixed-time slice of the characteristic grid with root finding on
/// x = phi(y).
#[derive(Debug, Clone)]
pub struct PhiSlice {
    pub t: f64,
    pub y0: f64,
    pub dy: f64,
    pub ny: usize,
    pub n: usize,
    pub phi: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhiSlice {
    pub fn phi_at(&self, y: f64) -> f64 {
        interp::cubic_uniform(self.y0, self.dy, &self.phi, y)
    }

    pub fn k_at(&self, y: f64) -> f64 {
        interp::cubic_uniform(self.y0, self.dy, &self.k, y)
    }

    pub fn dk_dy_at(&self, y: f64) -> f64 {
        interp::cubic_uniform_deriv(self.y0, self.dy, &self.k, y)
    }

    pub fn state_at(&self, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        let mut comp = vec![0.0; self.ny];
        for c in 0..self.n {
            for q in 0..self.ny {
                comp[q] = self.v[q * self.n + c];
            }
            out[c] = interp::cubic_uniform(self.y0, self.dy, &comp, y);
        }
        out
    }

    /// All roots of phi(y) = x by nodal sign scan, bisection bracketing
    /// and Newton polish with the interpolated derivative.
    pub fn roots(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for q in 0..self.ny - 1 {
            let f0 = self.phi[q] - x;
            let f1 = self.phi[q + 1] - x;
            if f0 == 0.0 {
                out.push(self.y0 + self.dy * q as f64);
                continue;
            }
            if f0 * f1 < 0.0 {
                let mut lo = self.y0 + self.dy * q as f64;
                let mut hi = lo + self.dy;
                for _ in 0..12 {
                    let mid = 0.5 * (lo + hi);
                    let fm = self.phi_at(mid) - x;
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if (self.phi_at(lo) - x) * fm < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let mut y = 0.5 * (lo + hi);
                for _ in 0..30 {
                    let f = self.phi_at(y) - x;
                    let d = self.k_at(y);
                    if d.abs() < 1e-14 {
                        break;
                    }
                    let step = f / d;
                    y -= step;
                    y = y.clamp(lo - self.dy, hi + self.dy);
                    if step.abs() < 1e-15 * (1.0 + y.abs()) {
                        break;
                    }
                }
                out.push(y);
            }
        }
        // Last-node exact hit.
        if (self.phi[self.ny - 1] - x).abs() == 0.0 {
            out.push(self.y0 + self.dy * (self.ny as f64 - 1.0));
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + a.abs()));
        out
    }
}

struct StepState {
    phi: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    frames: LevelFrames,
    t: f64,
}

/// Integrate the blowup system from the handoff state through the gradient
/// catastrophe to t_cross + delta_ext (capped by t_end).
pub fn solve_blowup_system(
    ns: &NormalizedSystem,
    handoff: &SmoothPhase,
    t_hat: f64,
    steepening_rate: f64,
    t_end_cap: f64,
    cfg: &CharSolveConfig,
) -> Result<CharGrid> {
    let n = ns.n;
    let i = ns.i;
    let eps_rate = (handoff.eps * steepening_rate.abs()).max(1e-12);
    let lam_abs_max = ns.lambda0.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let pad = 2.0 * lam_abs_max + cfg.pad_extra;
    let a0 = handoff.a0;
    let b0 = handoff.b0;
    let dy = (b0 - a0) / cfg.core_nodes as f64;
    let y_lo = a0 - pad;
    let ny = ((b0 + pad - y_lo) / dy).ceil() as usize + 1;
    let core_lo = ((a0 - y_lo) / dy).floor() as usize;
    let core_hi = ((b0 - y_lo) / dy).ceil() as usize;

    // Initial level: phi = y, K = 1, v from the handoff interpolant.
    let mut v = vec![0.0; ny * n];
    for q in 0..ny {
        let y = y_lo + dy * q as f64;
        let s = handoff.handoff_at(y);
        v[q * n..(q + 1) * n].copy_from_slice(&s);
    }
    let phi: Vec<f64> = (0..ny).map(|q| y_lo + dy * q as f64).collect();
    let kk = vec![1.0; ny];
    let frames = compute_frames(ns, &v, None)?;

    let mut cur = StepState { phi, k: kk, v, frames, t: handoff.t0 };

    let mut grid = CharGrid {
        n,
        i_field: i,
        eps: handoff.eps,
        y0: y_lo,
        dy,
        ny,
        t0: handoff.t0,
        t: vec![cur.t],
        phi: vec![cur.phi.clone()],
        k: vec![cur.k.clone()],
        v: vec![cur.v.clone()],
        h: vec![None],
        t_cross: None,
        core: (core_lo, core_hi),
        deriv_order: 4,
        boundary_fills: 0,
    };

    let dt_coarse = (t_hat - handoff.t0).max(1.0) / cfg.coarse_steps as f64;
    let mut t_cross: Option<f64> = None;
    let mut steps = 0usize;
    let mut store_counter = 0usize;
    // Keep the previous integration level for centered time derivatives.
    let mut prev_lev: Option<(f64, Vec<f64>)> = None;

    loop {
        let min_k = cur.k.iter().cloned().fold(f64::INFINITY, f64::min);
        // Time-to-cross estimate from min K and the steepening rate.
        let remaining = min_k / eps_rate;
        let in_fine = (t_cross.is_none() && remaining <= cfg.fine_lead)
            || t_cross.map_or(false, |tc| cur.t <= tc + cfg.fine_tail);
        let in_med = t_cross.is_some() || remaining <= cfg.med_lead;
        let dt = if in_fine {
            cfg.dt_fine
        } else if in_med {
            cfg.dt_med
        } else {
            // Geometric shrink toward the medium window, never below dt_med.
            dt_coarse.min(0.25 * (remaining - cfg.med_lead).max(0.0) + cfg.dt_med)
        };
        let t_stop = match t_cross {
            Some(tc) => (tc + cfg.delta_ext + 0.02).min(t_end_cap),
            None => t_end_cap,
        };
        if cur.t >= t_stop - 1e-12 {
            break;
        }
        let dt = dt.min(t_stop - cur.t);

        let next = advance_level(ns, &mut grid, &cur, dt, cfg)?;
        steps += 1;
        if steps > cfg.max_steps {
            return Err(Error::StepFailure {
                t: cur.t,
                reason: format!("step budget {} exhausted", cfg.max_steps),
            });
        }
        let new_min_k = next.k.iter().cloned().fold(f64::INFINITY, f64::min);
        if t_cross.is_none() && new_min_k <= 0.0 {
            t_cross = Some(next.t);
            grid.t_cross = Some(next.t);
        }

        // Store policy: all medium/fine levels, strided coarse levels.
        store_counter += 1;
        let store = in_med || in_fine || store_counter % cfg.store_stride_coarse == 0 || {
            // Always store the last level before a regime switch.
            false
        };
        if store {
            grid.t.push(next.t);
            grid.phi.push(next.phi.clone());
            grid.k.push(next.k.clone());
            grid.v.push(next.v.clone());
            let h = if in_med || in_fine {
                Some(h_fields(ns, &next, prev_lev.as_ref(), dy))
            } else {
                None
            };
            grid.h.push(h);
        }
        prev_lev = Some((cur.t, cur.v.clone()));
        cur = next;
    }
    Ok(grid)
}

/// Characteristic derivative components at a level: slot i = l_i(v) d_y v,
/// slot j != i = l_j(v) d_t v (centered over the previous integration level).
fn h_fields(ns: &NormalizedSystem, lev: &StepState, prev: Option<&(f64, Vec<f64>)>, dy: f64) -> Vec<f64> {
    let n = ns.n;
    let ny = lev.v.len() / n;
    let mut out = vec![0.0; ny * n];
    let mut comp = vec![0.0; ny];
    let mut dcomp = vec![vec![0.0; ny]; n];
    for c in 0..n {
        component_slice(&lev.v, n, c, &mut comp);
        interp::deriv1_o4(&comp, dy, &mut dcomp[c]);
    }
    for q in 0..ny {
        let f = &lev.frames.frames[q];
        for fam in 0..n {
            if fam == ns.i {
                let mut s = 0.0;
                for c in 0..n {
                    s += f.left_w[fam][c] * dcomp[c][q];
                }
                out[q * n + fam] = s;
            } else if let Some((tp, vp)) = prev {
                let dt = lev.t - *tp;
                if dt > 0.0 {
                    let mut s = 0.0;
                    for c in 0..n {
                        s += f.left_w[fam][c] * (lev.v[q * n + c] - vp[q * n + c]) / dt;
                    }
                    out[q * n + fam] = s;
                }
            }
        }
    }
    out
}

fn advance_level(
    ns: &NormalizedSystem,
    grid: &mut CharGrid,
    cur: &StepState,
    dt: f64,
    cfg: &CharSolveConfig,
) -> Result<StepState> {
    let n = ns.n;
    let i = ns.i;
    let ny = cur.k.len();
    let y_lo = grid.y0;
    let dy = grid.dy;

    let mut v_new = cur.v.clone();
    let mut lam_new = cur.frames.lam.clone();
    let mut comp = vec![0.0; ny];
    let mut comps_m: Vec<Vec<f64>> = Vec::with_capacity(n);
    for c in 0..n {
        component_slice(&cur.v, n, c, &mut comp);
        comps_m.push(comp.clone());
    }
    let mut lam_m: Vec<Vec<f64>> = Vec::with_capacity(n);
    for fam in 0..n {
        let mut l = vec![0.0; ny];
        for q in 0..ny {
            l[q] = cur.frames.lam[q * n + fam];
        }
        lam_m.push(l);
    }

    for sweep in 0..cfg.sweeps {
        let vbar: Vec<f64> = cur.v.iter().zip(&v_new).map(|(a, b)| 0.5 * (a + b)).collect();
        let fb = compute_frames(ns, &vbar, Some(&cur.frames))?;
        // Midpoint speed fields for the traces (families relative to i).
        let mut lam_mid: Vec<Vec<f64>> = Vec::with_capacity(n);
        for fam in 0..n {
            let mut l = vec![0.0; ny];
            for q in 0..ny {
                l[q] = 0.5 * (lam_m[fam][q] + lam_new[q * n + fam]);
            }
            lam_mid.push(l);
        }
        // Per-component arrays of the tentative new level for clipped feet.
        let mut comps_p: Vec<Vec<f64>> = Vec::with_capacity(n);
        for c in 0..n {
            component_slice(&v_new, n, c, &mut comp);
            comps_p.push(comp.clone());
        }
        let mut next = vec![0.0; ny * n];
        for q in 0..ny {
            let yq = y_lo + dy * q as f64;
            let mut feet: Vec<Vec<f64>> = Vec::with_capacity(n);
            for fam in 0..n {
                if fam == i {
                    feet.push(cur.v[q * n..(q + 1) * n].to_vec());
                    continue;
                }
                let foot = trace_foot(y_lo, dy, ny, &cur.k, &lam_mid[fam], &lam_mid[i], yq, dt);
                let vf = match foot {
                    Foot::OnLevel(yf) => {
                        let mut s = vec![0.0; n];
                        for c in 0..n {
                            s[c] = interp::cubic_uniform(y_lo, dy, &comps_m[c], yf);
                        }
                        s
                    }
                    Foot::InStrip(yf, theta) => {
                        let mut s = vec![0.0; n];
                        for c in 0..n {
                            let a = interp::cubic_uniform(y_lo, dy, &comps_m[c], yf);
                            let b = interp::cubic_uniform(y_lo, dy, &comps_p[c], yf);
                            s[c] = (1.0 - theta) * a + theta * b;
                        }
                        s
                    }
                    Foot::Lateral(edge_q) => {
                        grid.boundary_fills += 1;
                        cur.v[edge_q * n..(edge_q + 1) * n].to_vec()
                    }
                };
                feet.push(vf);
            }
            let vbar_q = &vbar[q * n..(q + 1) * n];
            let (vq, frame) = cir_solve(ns, vbar_q, &fb.frames[q], &feet).map_err(|e| match e {
                Error::StepFailure { reason, .. } => Error::StepFailure { t: cur.t, reason },
                other => other,
            })?;
            next[q * n..(q + 1) * n].copy_from_slice(&vq);
            for c in 0..n {
                lam_new[q * n + c] = frame.lambdas[c];
            }
        }
        v_new = next;
        let _ = sweep;
    }

    let frames_new = compute_frames(ns, &v_new, Some(&cur.frames))?;
    // Trapezoidal updates; K and d_y(phi) stay consistent because both sides
    // apply the same linear-in-field rule.
    let mut lam_i_m = vec![0.0; ny];
    let mut lam_i_p = vec![0.0; ny];
    for q in 0..ny {
        lam_i_m[q] = cur.frames.lam[q * n + i];
        lam_i_p[q] = frames_new.lam[q * n + i];
    }
    let mut d_m = vec![0.0; ny];
    let mut d_p = vec![0.0; ny];
    interp::deriv1_o4(&lam_i_m, dy, &mut d_m);
    interp::deriv1_o4(&lam_i_p, dy, &mut d_p);
    let mut phi_new = cur.phi.clone();
    let mut k_new = cur.k.clone();
    for q in 0..ny {
        phi_new[q] += dt * 0.5 * (lam_i_m[q] + lam_i_p[q]);
        k_new[q] += dt * 0.5 * (d_m[q] + d_p[q]);
    }
    Ok(StepState { phi: phi_new, k: k_new, v: v_new, frames: frames_new, t: cur.t + dt })
}

enum Foot {
    /// Landed on the known level at y.
    OnLevel(f64),
    /// Clipped inside the strip at (y, theta in [0,1] toward the new level).
    InStrip(f64, f64),
    /// Left the padded range; fill from the frozen edge column.
    Lateral(usize),
}

/// Backward trace of the fam-characteristic dt/dy = K/(lambda_fam - lambda_i)
/// from (yq, t+dt) down to the known level. `lam_fam` and `lam_i` are the
/// sweep's midpoint speed fields; K is taken from the known level (it varies
/// by O(eps dt) across one step).
#[allow(clippy::too_many_arguments)]
fn trace_foot(
    y_lo: f64,
    dy: f64,
    ny: usize,
    k_arr: &[f64],
    lam_fam: &[f64],
    lam_i: &[f64],
    yq: f64,
    dt: f64,
) -> Foot {
    let y_hi = y_lo + dy * (ny as f64 - 1.0);
    // theta = 1 at the new level, 0 at the known level.
    let mut y = yq;
    let mut theta = 1.0f64;
    let slope = |y: f64| -> f64 {
        let k = interp::cubic_uniform(y_lo, dy, k_arr, y);
        let a = interp::cubic_uniform(y_lo, dy, lam_fam, y);
        let b = interp::cubic_uniform(y_lo, dy, lam_i, y);
        k / (a - b)
    };
    let mut guard = 0usize;
    loop {
        guard += 1;
        if guard > 600 {
            return Foot::InStrip(y, theta.clamp(0.0, 1.0));
        }
        let tp = slope(y);
        if tp.abs() < 1e-14 {
            return Foot::InStrip(y, theta.clamp(0.0, 1.0));
        }
        // Move in the direction of decreasing t.
        let dir = if tp > 0.0 { -1.0 } else { 1.0 };
        // Sub-step: at most 2 cells, at most a sixth of the remaining drop.
        let drop_want = theta * dt;
        let h_cells = 2.0 * dy;
        let h_drop = drop_want / (6.0 * tp.abs());
        let h = dir * h_cells.min(h_drop.max(1e-3 * dy));
        // RK2 on t(y).
        let tp_mid = slope(y + 0.5 * h);
        let dt_move = tp_mid * h;
        let new_theta = theta + dt_move / dt;
        if new_theta > theta + 1e-14 {
            // Turning point: t starts increasing along the trace; clip here.
            return Foot::InStrip(y, theta.clamp(0.0, 1.0));
        }
        let y_next = y + h;
        if y_next <= y_lo {
            return Foot::Lateral(0);
        }
        if y_next >= y_hi {
            return Foot::Lateral(ny - 1);
        }
        if new_theta <= 0.0 {
            // Crossed the known level: interpolate the crossing in y.
            let frac = theta / (theta - new_theta);
            return Foot::OnLevel(y + h * frac);
        }
        y = y_next;
        theta = new_theta;
    }
}
