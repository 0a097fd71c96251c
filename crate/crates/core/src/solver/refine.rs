//! Gradient refinement of the logits.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::init::analytical_init;
use super::project::{project_in_place, Tape, Targets};
use super::SolverConfig;
use crate::dist::{cond_entropy_y_nats, Joint3, LN_2, PROB_FLOOR};
use crate::error::{PidError, Result};
use crate::rng;

/// Floor applied before taking logs of the warm start.
pub const LOGIT_FLOOR: f64 = 1e-12;

/// Starting point of the logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InitMethod {
    /// `log(max(Q_init, 1e-12))` from the conditional-independence proxy.
    #[default]
    Analytical,
    /// All-zero logits.
    Uniform,
    /// Standard-normal logits from the given seed.
    Gaussian { seed: u64 },
}

/// Logits and Adam moments for one refinement run.
#[derive(Debug, Clone)]
pub struct LogitState {
    pub theta: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl LogitState {
    pub fn new(theta: Vec<f64>) -> Self {
        let n = theta.len();
        LogitState { theta, first_moment: vec![0.0; n], second_moment: vec![0.0; n], step: 0 }
    }

    pub fn initial(p: &Joint3, init: InitMethod) -> Self {
        let theta = match init {
            InitMethod::Analytical => analytical_init(p).probs().iter().map(|&q| q.max(LOGIT_FLOOR).ln()).collect(),
            InitMethod::Uniform => vec![0.0; p.len()],
            InitMethod::Gaussian { seed } => {
                let mut r = rng::seeded(seed);
                (0..p.len()).map(|_| StandardNormal.sample(&mut r)).collect()
            }
        };
        LogitState::new(theta)
    }

    /// Bias-corrected Adam update.
    pub fn adam_step(&mut self, grad: &[f64], cfg: &SolverConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((th, m), v), &g) in
            self.theta.iter_mut().zip(self.first_moment.iter_mut()).zip(self.second_moment.iter_mut()).zip(grad)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *th -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Output of [`refine`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub q_star: Joint3,
    /// Number of Adam steps taken.
    pub iters_used: usize,
    pub converged: bool,
    /// H(Y | X1, X2) in bits of each projected iterate, in order.
    pub objective_trace: Vec<f64>,
}

pub(crate) fn softmax_into(theta: &[f64], out: &mut Vec<f64>) {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(theta.iter().map(|&t| (t - max).exp()));
    let z: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= z;
    }
}

/// Gradient of `-H(Y|X1,X2)` (nats) with respect to each cell.
fn neg_cond_entropy_grad(dims: [usize; 3], q: &[f64], grad: &mut [f64]) {
    let c = dims[2];
    for (fiber, g) in q.chunks_exact(c).zip(grad.chunks_exact_mut(c)) {
        let m: f64 = fiber.iter().sum();
        for (gk, &qk) in g.iter_mut().zip(fiber) {
            *gk = if qk > PROB_FLOOR && m > PROB_FLOOR { (qk / m).ln() } else { 0.0 };
        }
    }
}

/// Reusable buffers for evaluating the loss and its gradient.
pub(crate) struct Workspace {
    pub targets: Targets,
    pub sweeps: usize,
    tape: Tape,
    q: Vec<f64>,
    pub projected: Vec<f64>,
    grad: Vec<f64>,
}

impl Workspace {
    pub fn new(targets: Targets, sweeps: usize) -> Self {
        Workspace { targets, sweeps, tape: Tape::default(), q: Vec::new(), projected: Vec::new(), grad: Vec::new() }
    }

    /// Forward pass: softmax then projection. Returns the loss
    /// `-H_{Q_proj}(Y|X1,X2)` in nats; the projection stays in `self.projected`.
    pub fn forward(&mut self, theta: &[f64]) -> Result<f64> {
        softmax_into(theta, &mut self.q);
        self.projected.clear();
        self.projected.extend_from_slice(&self.q);
        self.tape.forward(&mut self.projected, &self.targets, self.sweeps)?;
        Ok(-cond_entropy_y_nats(self.targets.dims, &self.projected))
    }

    /// Backward pass for the most recent forward; returns d loss / d theta.
    pub fn backward(&mut self) -> &[f64] {
        self.grad.clear();
        self.grad.resize(self.projected.len(), 0.0);
        neg_cond_entropy_grad(self.targets.dims, &self.projected, &mut self.grad);
        self.tape.backward(&mut self.grad, &self.targets);
        // softmax: d theta = Q * (g - <Q, g>)
        let dot: f64 = self.q.iter().zip(&self.grad).map(|(q, g)| q * g).sum();
        for (g, &q) in self.grad.iter_mut().zip(&self.q) {
            *g = q * (*g - dot);
        }
        &self.grad
    }
}

/// Refines from the analytical warm start.
pub fn refine(p: &Joint3, cfg: &SolverConfig) -> Result<Refinement> {
    refine_from(p, cfg, InitMethod::Analytical)
}

pub fn refine_from(p: &Joint3, cfg: &SolverConfig, init: InitMethod) -> Result<Refinement> {
    cfg.validate()?;
    let dims = p.dims();
    let mut state = LogitState::initial(p, init);
    let mut ws = Workspace::new(Targets::of(p), cfg.sinkhorn_iter);
    let mut prev: Vec<f64> = Vec::new();
    let mut trace = Vec::new();

    for k in 0..cfg.max_iter {
        let loss = ws.forward(&state.theta)?;
        if !loss.is_finite() {
            return Err(PidError::NonFinite { what: "loss", iteration: k });
        }
        trace.push(-loss / LN_2);
        if k > 0 {
            let change = ws.projected.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change < cfg.tol {
                return Ok(Refinement {
                    q_star: Joint3::from_parts(dims, ws.projected.clone()),
                    iters_used: k,
                    converged: true,
                    objective_trace: trace,
                });
            }
        }
        prev.clear();
        prev.extend_from_slice(&ws.projected);
        let grad = ws.backward();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(PidError::NonFinite { what: "gradient", iteration: k });
        }
        state.adam_step(grad, cfg);
    }

    let mut q = Vec::new();
    softmax_into(&state.theta, &mut q);
    project_in_place(&mut q, &ws.targets, cfg.sinkhorn_iter)?;
    trace.push(cond_entropy_y_nats(dims, &q) / LN_2);
    Ok(Refinement {
        q_star: Joint3::from_parts(dims, q),
        iters_used: cfg.max_iter,
        converged: false,
        objective_trace: trace,
    })
}
