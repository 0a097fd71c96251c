//! Marginal-preserving projection by iterative proportional fitting.
//!
//! One sweep rescales along the `x2` axis so the `(X1,Y)` marginal matches its
//! target, then along the `x1` axis for `(X2,Y)`. [`Tape`] records every
//! half-sweep so the gradient can be pulled back through all of them.

use crate::dist::{marginal, Axes, Joint3, Marginal2};
use crate::error::{PidError, Result};

/// Target `(X1,Y)` and `(X2,Y)` marginals, row-major.
#[derive(Debug, Clone)]
pub struct Targets {
    pub(crate) dims: [usize; 3],
    pub(crate) m1: Vec<f64>,
    pub(crate) m2: Vec<f64>,
}

impl Targets {
    pub fn of(p: &Joint3) -> Self {
        Targets { dims: p.dims(), m1: marginal(p, Axes::X1Y).probs, m2: marginal(p, Axes::X2Y).probs }
    }

    pub fn from_marginals(dims: [usize; 3], m1: &Marginal2, m2: &Marginal2) -> Result<Self> {
        let [a, b, c] = dims;
        if m1.axes != Axes::X1Y || m2.axes != Axes::X2Y || m1.dims != [a, c] || m2.dims != [b, c] {
            return Err(PidError::InvalidInput(
                "projection targets must be the (X1,Y) and (X2,Y) marginals matching q".into(),
            ));
        }
        Ok(Targets { dims, m1: m1.probs.clone(), m2: m2.probs.clone() })
    }

    /// Max-abs violation of either marginal by `q`.
    pub fn deviation(&self, q: &[f64]) -> f64 {
        let [a, b, c] = self.dims;
        let mut s1 = vec![0.0; a * c];
        let mut s2 = vec![0.0; b * c];
        for i in 0..a {
            for j in 0..b {
                let base = (i * b + j) * c;
                for k in 0..c {
                    s1[i * c + k] += q[base + k];
                    s2[j * c + k] += q[base + k];
                }
            }
        }
        let d1 = s1.iter().zip(&self.m1).map(|(x, t)| (x - t).abs());
        let d2 = s2.iter().zip(&self.m2).map(|(x, t)| (x - t).abs());
        d1.chain(d2).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Half {
    /// Rescale each `(x1, y)` slice (summing over `x2`).
    MatchX1Y,
    /// Rescale each `(x2, y)` slice (summing over `x1`).
    MatchX2Y,
}

fn ratio(target: f64, sum: f64, index: usize, y: usize) -> Result<f64> {
    if sum > 0.0 {
        Ok(target / sum)
    } else if target > 0.0 {
        Err(PidError::InfeasibleSupport { index, y, target })
    } else {
        Ok(0.0)
    }
}

/// Rescales `q` in place; writes the slice sums into `sums`.
fn half_sweep(q: &mut [f64], t: &Targets, half: Half, sums: &mut Vec<f64>) -> Result<()> {
    let [a, b, c] = t.dims;
    match half {
        Half::MatchX1Y => {
            sums.clear();
            sums.resize(a * c, 0.0);
            for i in 0..a {
                let row = &mut q[i * b * c..(i + 1) * b * c];
                let s = &mut sums[i * c..(i + 1) * c];
                for fiber in row.chunks_exact(c) {
                    for (acc, v) in s.iter_mut().zip(fiber) {
                        *acc += v;
                    }
                }
                let mut r = vec![0.0; c];
                for k in 0..c {
                    r[k] = ratio(t.m1[i * c + k], s[k], i, k)?;
                }
                for fiber in row.chunks_exact_mut(c) {
                    for (v, rk) in fiber.iter_mut().zip(&r) {
                        *v *= rk;
                    }
                }
            }
        }
        Half::MatchX2Y => {
            sums.clear();
            sums.resize(b * c, 0.0);
            for (n, fiber) in q.chunks_exact(c).enumerate() {
                let j = n % b;
                for (acc, v) in sums[j * c..(j + 1) * c].iter_mut().zip(fiber) {
                    *acc += v;
                }
            }
            let mut r = vec![0.0; b * c];
            for j in 0..b {
                for k in 0..c {
                    r[j * c + k] = ratio(t.m2[j * c + k], sums[j * c + k], j, k)?;
                }
            }
            for (n, fiber) in q.chunks_exact_mut(c).enumerate() {
                let j = n % b;
                for (v, rk) in fiber.iter_mut().zip(&r[j * c..(j + 1) * c]) {
                    *v *= rk;
                }
            }
        }
    }
    Ok(())
}

/// Runs `iters` full sweeps on a copy of `q`.
pub fn sinkhorn_project(q: &Joint3, target_m1: &Marginal2, target_m2: &Marginal2, iters: usize) -> Result<Joint3> {
    let t = Targets::from_marginals(q.dims(), target_m1, target_m2)?;
    let mut out = q.probs().to_vec();
    project_in_place(&mut out, &t, iters)?;
    Ok(Joint3::from_parts(q.dims(), out))
}

pub(crate) fn project_in_place(q: &mut [f64], t: &Targets, iters: usize) -> Result<()> {
    let mut sums = Vec::new();
    for _ in 0..iters {
        half_sweep(q, t, Half::MatchX1Y, &mut sums)?;
        half_sweep(q, t, Half::MatchX2Y, &mut sums)?;
    }
    Ok(())
}

/// Sweeps until both marginals hold within `tol` or `max_sweeps` is reached.
/// Returns the final deviation.
pub(crate) fn project_tight(q: &mut [f64], t: &Targets, tol: f64, max_sweeps: usize) -> Result<f64> {
    let mut sums = Vec::new();
    let mut dev = t.deviation(q);
    let mut sweeps = 0;
    while dev > tol && sweeps < max_sweeps {
        half_sweep(q, t, Half::MatchX1Y, &mut sums)?;
        half_sweep(q, t, Half::MatchX2Y, &mut sums)?;
        dev = t.deviation(q);
        sweeps += 1;
    }
    Ok(dev)
}

/// Forward record of an unrolled projection.
#[derive(Debug, Default)]
pub(crate) struct Tape {
    inputs: Vec<Vec<f64>>,
    sums: Vec<Vec<f64>>,
    len: usize,
}

impl Tape {
    /// Projects `q` in place with `iters` sweeps, recording each half-sweep.
    pub fn forward(&mut self, q: &mut [f64], t: &Targets, iters: usize) -> Result<()> {
        let halves = 2 * iters;
        if self.inputs.len() < halves {
            self.inputs.resize_with(halves, Vec::new);
            self.sums.resize_with(halves, Vec::new);
        }
        self.len = halves;
        for h in 0..halves {
            let half = if h % 2 == 0 { Half::MatchX1Y } else { Half::MatchX2Y };
            self.inputs[h].clear();
            self.inputs[h].extend_from_slice(q);
            half_sweep(q, t, half, &mut self.sums[h])?;
        }
        Ok(())
    }

    /// Pulls `grad` (w.r.t. the projected output) back to the projection input.
    pub fn backward(&self, grad: &mut [f64], t: &Targets) {
        let [a, b, c] = t.dims;
        for h in (0..self.len).rev() {
            let q_in = &self.inputs[h];
            let sums = &self.sums[h];
            if h % 2 == 0 {
                // q_out(i,j,k) = q_in(i,j,k) * m1(i,k) / s(i,k)
                for i in 0..a {
                    let lo = i * b * c;
                    let hi = lo + b * c;
                    let mut dot = vec![0.0; c];
                    for (gf, qf) in grad[lo..hi].chunks_exact(c).zip(q_in[lo..hi].chunks_exact(c)) {
                        for k in 0..c {
                            dot[k] += gf[k] * qf[k];
                        }
                    }
                    let mut r = vec![0.0; c];
                    for k in 0..c {
                        let s = sums[i * c + k];
                        if s > 0.0 {
                            r[k] = t.m1[i * c + k] / s;
                            dot[k] /= s;
                        }
                    }
                    for gf in grad[lo..hi].chunks_exact_mut(c) {
                        for k in 0..c {
                            gf[k] = r[k] * (gf[k] - dot[k]);
                        }
                    }
                }
            } else {
                let mut dot = vec![0.0; b * c];
                for (n, (gf, qf)) in grad.chunks_exact(c).zip(q_in.chunks_exact(c)).enumerate() {
                    let j = n % b;
                    for k in 0..c {
                        dot[j * c + k] += gf[k] * qf[k];
                    }
                }
                let mut r = vec![0.0; b * c];
                for idx in 0..b * c {
                    let s = sums[idx];
                    if s > 0.0 {
                        r[idx] = t.m2[idx] / s;
                        dot[idx] /= s;
                    }
                }
                for (n, gf) in grad.chunks_exact_mut(c).enumerate() {
                    let j = n % b;
                    for k in 0..c {
                        let idx = j * c + k;
                        gf[k] = r[idx] * (gf[k] - dot[idx]);
                    }
                }
            }
        }
    }
}
