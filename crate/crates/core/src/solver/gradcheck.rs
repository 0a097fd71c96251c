use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use super::project::Targets;
use super::refine::{LogitState, Workspace};
use super::{InitMethod, SolverConfig};
use crate::dist::Joint3;
use crate::error::{PidError, Result};
use crate::rng;

const COORDINATES: usize = 20;
/// Gradient magnitudes below this are compared in absolute terms.
const ABS_FLOOR: f64 = 1e-6;

/// Max relative error between the analytic gradient of `-H_{Q_proj}(Y|X1,X2)`
/// with respect to the logits and central differences with step `h`, over 20
/// random coordinates at a perturbed warm start.
pub fn grad_check(p: &Joint3, cfg: &SolverConfig, h: f64, seed: u64) -> Result<f64> {
    cfg.validate()?;
    if p.dims().iter().any(|&d| d > 4) {
        return Err(PidError::InvalidInput("grad_check is limited to 4x4x4 inputs".into()));
    }
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut theta = LogitState::initial(p, InitMethod::Analytical).theta;
    for t in theta.iter_mut() {
        *t += noise.sample(&mut r);
    }

    let mut ws = Workspace::new(Targets::of(p), cfg.sinkhorn_iter);
    ws.forward(&theta)?;
    let analytic = ws.backward().to_vec();

    let n = theta.len();
    let coords = sample(&mut r, n, COORDINATES.min(n));
    let mut worst: f64 = 0.0;
    for idx in coords {
        let orig = theta[idx];
        theta[idx] = orig + h;
        let up = ws.forward(&theta)?;
        theta[idx] = orig - h;
        let down = ws.forward(&theta)?;
        theta[idx] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[idx].abs().max(numeric.abs()).max(ABS_FLOOR);
        worst = worst.max((analytic[idx] - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_gate, Gate};

    #[test]
    fn coarse_step_is_a_negative_control() {
        let p = crate::dist::build_joint(
            [3, 3, 2],
            &[
                0.05, 0.02, 0.09, 0.01, 0.03, 0.07, 0.08, 0.04, 0.06, 0.02, 0.05, 0.09, 0.01, 0.08, 0.07, 0.04, 0.06,
                0.03,
            ],
        )
        .unwrap();
        let cfg = SolverConfig::default();
        assert!(grad_check(&p, &cfg, 1e-5, 3).unwrap() <= 1e-4);
        assert!(grad_check(&p, &cfg, 1e-1, 3).unwrap() > 1e-4);
    }

    #[test]
    fn xor_gradient_matches_finite_differences() {
        let err = grad_check(&gen_gate(Gate::Xor), &SolverConfig::default(), 1e-5, 11).unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
