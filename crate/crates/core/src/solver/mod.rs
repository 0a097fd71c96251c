//! FastPID: analytical warm start, softmax logits, unrolled Sinkhorn
//! projection and Adam refinement of `H(Y | X1, X2)` over the set of
//! distributions sharing `p`'s `(X1,Y)` and `(X2,Y)` marginals.
//!
//! The maximizer `q*` of that conditional entropy attains every PID optimum at
//! once, so a single solve yields all four atoms:
//! `U1 = I_q*(X1;Y|X2)`, `U2 = I_q*(X2;Y|X1)`, `R = I_p(X1;Y) - U1` and
//! `S = I_p(X1,X2;Y) - R - U1 - U2`.

mod gradcheck;
mod init;
mod project;
mod refine;

pub use gradcheck::grad_check;
pub use init::analytical_init;
pub use project::{sinkhorn_project, Targets};
pub use refine::{refine, refine_from, InitMethod, LogitState, Refinement, LOGIT_FLOOR};

use serde::{Deserialize, Serialize};

use crate::dist::{Entropies, Joint3, LN_2};
use crate::error::{PidError, Result};

/// Marginal violation above which [`extract_pid`] refuses its input.
pub const EXTRACT_TOLERANCE: f64 = 1e-4;

/// Deviation targeted by the final polishing projection.
pub const POLISH_TOLERANCE: f64 = 1e-13;
const POLISH_MAX_SWEEPS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub lr: f64,
    pub tol: f64,
    pub sinkhorn_iter: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 2000,
            lr: 0.1,
            tol: 1e-5,
            sinkhorn_iter: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PidError::InvalidInput(msg.to_string()));
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol must lie in (0, 1)");
        }
        if self.sinkhorn_iter == 0 {
            return bad("sinkhorn_iter must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// Unclamped atoms and solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidDiagnostics {
    pub raw_r: f64,
    pub raw_u1: f64,
    pub raw_u2: f64,
    pub raw_s: f64,
    /// H_q*(Y | X1, X2) in bits.
    pub objective: f64,
    /// Max-abs violation of p's pairwise marginals by `q_star`.
    pub marginal_deviation: f64,
}

/// The four PID atoms in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidResult {
    pub r: f64,
    pub u1: f64,
    pub u2: f64,
    pub s: f64,
    /// I_p(X1, X2; Y)
    pub i_joint: f64,
    pub iters_used: usize,
    pub converged: bool,
    pub diagnostics: PidDiagnostics,
    pub q_star: Joint3,
}

impl PidResult {
    pub fn atoms(&self) -> [f64; 4] {
        [self.r, self.u1, self.u2, self.s]
    }

    /// Mean absolute error of `(R, U1, U2, S)` against a reference.
    pub fn mae(&self, reference: [f64; 4]) -> f64 {
        self.atoms().iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / 4.0
    }
}

/// Negative atoms no larger than this (bits) are rounding and reported as 0.
/// Anything more negative is kept: it means `q_star` is not the maximizer,
/// and hiding it would also break the consistency identities.
pub const NEGATIVE_ATOM_CLAMP: f64 = 1e-7;

fn clamp_rounding(v: f64) -> f64 {
    if v < 0.0 && v >= -NEGATIVE_ATOM_CLAMP {
        0.0
    } else {
        v
    }
}

/// Reads the atoms off a feasible maximizer `q_star`.
pub fn extract_pid(p: &Joint3, q_star: &Joint3) -> Result<PidResult> {
    if p.dims() != q_star.dims() {
        return Err(PidError::InvalidInput(format!(
            "q_star dims {:?} differ from p dims {:?}",
            q_star.dims(),
            p.dims()
        )));
    }
    let deviation = q_star.marginal_deviation(p);
    if !(deviation <= EXTRACT_TOLERANCE) {
        return Err(PidError::MarginalDeviation { deviation, limit: EXTRACT_TOLERANCE });
    }
    let ep = Entropies::of(p);
    let eq = Entropies::of(q_star);
    let i_x1_y = ep.x1 + ep.y - ep.x1y;
    let i_joint = ep.x1x2 + ep.y - ep.x1x2y;
    let u1 = eq.i_x1_y_given_x2();
    let u2 = eq.i_x2_y_given_x1();
    let r = i_x1_y - u1;
    let s = i_joint - r - u1 - u2;
    let bits = |v: f64| v / LN_2;
    let diagnostics = PidDiagnostics {
        raw_r: bits(r),
        raw_u1: bits(u1),
        raw_u2: bits(u2),
        raw_s: bits(s),
        objective: bits(eq.x1x2y - eq.x1x2),
        marginal_deviation: deviation,
    };
    Ok(PidResult {
        r: clamp_rounding(bits(r)),
        u1: clamp_rounding(bits(u1)),
        u2: clamp_rounding(bits(u2)),
        s: clamp_rounding(bits(s)),
        i_joint: bits(i_joint).max(0.0),
        iters_used: 0,
        converged: true,
        diagnostics,
        q_star: q_star.clone(),
    })
}

/// Re-projects `q` until `p`'s marginals hold within [`POLISH_TOLERANCE`].
pub fn polish(p: &Joint3, q: &Joint3) -> Result<Joint3> {
    let mut probs = q.probs().to_vec();
    project::project_tight(&mut probs, &Targets::of(p), POLISH_TOLERANCE, POLISH_MAX_SWEEPS)?;
    Ok(Joint3::from_parts(p.dims(), probs))
}

/// Analytical warm start, refinement, polish, extraction.
pub fn solve(p: &Joint3, cfg: &SolverConfig) -> Result<PidResult> {
    solve_with_init(p, cfg, InitMethod::Analytical)
}

pub fn solve_with_init(p: &Joint3, cfg: &SolverConfig, init: InitMethod) -> Result<PidResult> {
    let refined = refine_from(p, cfg, init)?;
    let q_star = polish(p, &refined.q_star)?;
    let mut out = extract_pid(p, &q_star)?;
    out.iters_used = refined.iters_used;
    out.converged = refined.converged;
    Ok(out)
}
