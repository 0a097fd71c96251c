//! Reference maximizer of `H_q(Y | X1, X2)` over the marginal polytope.
//!
//! Works directly in the coefficient space of adjacent swap tensors
//! `+1, -1, -1, +1` on the 2x2 block `{x1, x1+1} x {x2, x2+1}` of one `y`
//! slice. Adding any combination of them to `p` preserves both pairwise
//! marginals, and they span every marginal-preserving direction. Nothing here
//! touches logits, softmax, Adam or iterative scaling.

use serde::{Deserialize, Serialize};

use crate::dist::{cond_entropy_y_nats, marginal, Axes, Joint3, LN_2, PROB_FLOOR};
use crate::error::{PidError, Result};
use crate::solver::{extract_pid, PidResult};

mod ascent;

pub use ascent::{long_horizon_solve, long_horizon_solve_with, LongHorizonConfig};

/// Largest coefficient count accepted by [`exact_solve`].
pub const EXACT_MAX_DOF: usize = 4;
/// Total grid evaluations allowed in [`exact_solve`].
const GRID_BUDGET: f64 = 4.1e6;
pub const DEFAULT_GRID_POINTS: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    ExactPolytope,
    LongHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub pid: PidResult,
    pub method: OracleMethod,
    /// Maximized H(Y | X1, X2) in bits.
    pub objective_value: f64,
    pub iterations: usize,
}

/// One elementary marginal-preserving direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapTensor {
    pub x1: usize,
    pub x2: usize,
    pub y: usize,
}

impl SwapTensor {
    /// `(flat index, sign)` of the four touched cells.
    pub fn cells(&self, dims: [usize; 3]) -> [(usize, f64); 4] {
        let [_, b, c] = dims;
        let at = |i: usize, j: usize| (i * b + j) * c + self.y;
        [
            (at(self.x1, self.x2), 1.0),
            (at(self.x1, self.x2 + 1), -1.0),
            (at(self.x1 + 1, self.x2), -1.0),
            (at(self.x1 + 1, self.x2 + 1), 1.0),
        ]
    }

    pub fn dense(&self, dims: [usize; 3]) -> Vec<f64> {
        let mut out = vec![0.0; dims.iter().product()];
        for (idx, sign) in self.cells(dims) {
            out[idx] = sign;
        }
        out
    }
}

/// `(|X1|-1)(|X2|-1)` swaps per `y` slice, ordered by `(y, x1, x2)`.
pub fn feasible_basis(p: &Joint3) -> Vec<SwapTensor> {
    let [a, b, c] = p.dims();
    let mut out = Vec::with_capacity(a.saturating_sub(1) * b.saturating_sub(1) * c);
    for y in 0..c {
        for x1 in 0..a.saturating_sub(1) {
            for x2 in 0..b.saturating_sub(1) {
                out.push(SwapTensor { x1, x2, y });
            }
        }
    }
    out
}

pub(crate) fn objective(dims: [usize; 3], q: &[f64]) -> f64 {
    cond_entropy_y_nats(dims, q)
}

pub(crate) fn finish(p: &Joint3, mut q: Vec<f64>, method: OracleMethod, iterations: usize) -> Result<OracleResult> {
    for v in q.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let q = Joint3::from_parts(p.dims(), q);
    let objective_value = objective(p.dims(), q.probs()) / LN_2;
    let mut pid = extract_pid(p, &q)?;
    pid.iters_used = iterations;
    pid.converged = true;
    Ok(OracleResult { pid, method, objective_value, iterations })
}

/// Feasible step interval `[lo, hi]` along one swap from the current `q`.
fn step_interval(q: &[f64], cells: &[(usize, f64); 4]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for &(idx, sign) in cells {
        if sign > 0.0 {
            lo = lo.max(-q[idx]);
        } else {
            hi = hi.min(q[idx]);
        }
    }
    (lo, hi)
}

/// Objective change restricted to the fibers touched by one swap.
fn local_objective(dims: [usize; 3], q: &[f64], cells: &[(usize, f64); 4], delta: f64) -> f64 {
    let c = dims[2];
    let mut total = 0.0;
    for &(idx, sign) in cells {
        let start = idx - idx % c;
        let fiber = &q[start..start + c];
        let moved = idx - start;
        let mut m = 0.0;
        let mut h = 0.0;
        for (k, &v) in fiber.iter().enumerate() {
            let v = if k == moved { (v + sign * delta).max(0.0) } else { v };
            m += v;
            if v > PROB_FLOOR {
                h -= v * v.ln();
            }
        }
        if m > PROB_FLOOR {
            h += m * m.ln();
        }
        total += h;
    }
    total
}

fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..120 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (a + b);
    [lo, hi, mid]
        .into_iter()
        .map(|x| (x, f(x)))
        .fold((mid, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best })
        .0
}

/// Grid search over the Fréchet box of swap coefficients, then cyclic
/// golden-section polish per coefficient. Limited to [`EXACT_MAX_DOF`]
/// coefficients; deterministic for a fixed `grid_points`.
pub fn exact_solve(p: &Joint3, grid_points: usize) -> Result<OracleResult> {
    let dims = p.dims();
    let [_, b, c] = dims;
    let basis = feasible_basis(p);
    let dof = basis.len();
    if dof > EXACT_MAX_DOF {
        return Err(PidError::TooManyDegreesOfFreedom { dof, max: EXACT_MAX_DOF });
    }
    if grid_points < 2 {
        return Err(PidError::InvalidInput("grid_points must be at least 2".into()));
    }

    // Coefficient of swap (i, j, k) equals the change of the prefix mass
    // sum_{i' <= i, j' <= j} q(i', j', k), whose range is the Fréchet band.
    let m1 = marginal(p, Axes::X1Y).probs;
    let m2 = marginal(p, Axes::X2Y).probs;
    let py = marginal(p, Axes::X1Y).sum_first();
    let boxes: Vec<(f64, f64)> = basis
        .iter()
        .map(|s| {
            let k = s.y;
            let rows: f64 = (0..=s.x1).map(|i| m1[i * c + k]).sum();
            let cols: f64 = (0..=s.x2).map(|j| m2[j * c + k]).sum();
            let prefix: f64 =
                (0..=s.x1).flat_map(|i| (0..=s.x2).map(move |j| (i * b + j) * c + k)).map(|idx| p.probs()[idx]).sum();
            let lo = (rows + cols - py[k]).max(0.0) - prefix;
            let hi = rows.min(cols) - prefix;
            (lo, hi.max(lo))
        })
        .collect();

    let per_dim = if dof == 0 {
        1
    } else {
        let cap = GRID_BUDGET.powf(1.0 / dof as f64).floor() as usize;
        grid_points.min(cap).max(2)
    };
    let cell_sets: Vec<_> = basis.iter().map(|s| s.cells(dims)).collect();

    let mut best_q = p.probs().to_vec();
    let mut best_f = objective(dims, &best_q);
    let mut idx = vec![0usize; dof];
    let mut q = vec![0.0; p.len()];
    'grid: loop {
        q.copy_from_slice(p.probs());
        for (d, &n) in idx.iter().enumerate() {
            let (lo, hi) = boxes[d];
            let coef = if per_dim == 1 { lo } else { lo + (hi - lo) * n as f64 / (per_dim - 1) as f64 };
            for &(cell, sign) in &cell_sets[d] {
                q[cell] += sign * coef;
            }
        }
        if q.iter().all(|&v| v >= -1e-15) {
            let f = objective(dims, &q);
            if f > best_f {
                best_f = f;
                best_q.copy_from_slice(&q);
            }
        }
        for d in 0..dof {
            idx[d] += 1;
            if idx[d] < per_dim {
                continue 'grid;
            }
            idx[d] = 0;
        }
        break;
    }

    let mut q = best_q;
    for v in q.iter_mut() {
        *v = v.max(0.0);
    }
    let mut cycles = 0;
    for _ in 0..500 {
        cycles += 1;
        let before = objective(dims, &q);
        for cells in &cell_sets {
            let (lo, hi) = step_interval(&q, cells);
            if !(hi > lo) {
                continue;
            }
            let base = local_objective(dims, &q, cells, 0.0);
            let delta = golden_max(|d| local_objective(dims, &q, cells, d), lo, hi);
            if local_objective(dims, &q, cells, delta) > base {
                for &(cell, sign) in cells {
                    q[cell] = (q[cell] + sign * delta).max(0.0);
                }
            }
        }
        if objective(dims, &q) - before < 1e-15 {
            break;
        }
    }
    finish(p, q, OracleMethod::ExactPolytope, cycles)
}
