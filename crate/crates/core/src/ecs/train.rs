//! Full-batch gradient descent on the cross-entropy of the group-sum classifier.

use serde::{Deserialize, Serialize};

use super::{dot, measure_ecs, smoothed_relu, smoothed_relu_grad, Dataset, EcsSnapshot, SparseSpec, ToyNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "unimodal-1")]
    Unimodal1,
    #[serde(rename = "unimodal-2")]
    Unimodal2,
    #[serde(rename = "joint")]
    Joint,
}

impl TrainMode {
    /// Encoders feeding the classifier (and receiving updates).
    pub fn encoders(self) -> &'static [usize] {
        match self {
            TrainMode::Unimodal1 => &[0],
            TrainMode::Unimodal2 => &[1],
            TrainMode::Joint => &[0, 1],
        }
    }

    pub fn unimodal(r: usize) -> Self {
        if r == 0 {
            TrainMode::Unimodal1
        } else {
            TrainMode::Unimodal2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss at the weights this record describes.
    pub loss: f64,
    pub snapshot: EcsSnapshot,
    pub test_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: TrainMode,
    /// Epoch 0 is the state before training.
    pub records: Vec<EpochRecord>,
    /// Set when the loss became non-finite; training stopped there.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("trajectory always holds epoch 0")
    }
}

/// Logits of one sample under `mode`.
fn logits(nets: &[ToyNet; 2], data: &Dataset, i: usize, mode: TrainMode, spec: &SparseSpec, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &r in mode.encoders() {
        let net = &nets[r];
        let x = data.row(r, i, net.d);
        for (unit, w) in net.w.chunks_exact(net.d).enumerate() {
            out[unit / net.m] += smoothed_relu(dot(w, x), spec.beta, spec.q);
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Mean cross-entropy and, when `grads` is given, its gradient per trained encoder.
fn loss_and_grad(
    nets: &[ToyNet; 2],
    data: &Dataset,
    mode: TrainMode,
    spec: &SparseSpec,
    mut grads: Option<&mut [Vec<f64>; 2]>,
) -> f64 {
    let mut z = vec![0.0; spec.k];
    let mut loss = 0.0;
    let inv_n = 1.0 / data.n as f64;
    for i in 0..data.n {
        logits(nets, data, i, mode, spec, &mut z);
        softmax_in_place(&mut z);
        let y = data.labels[i];
        loss -= z[y].max(f64::MIN_POSITIVE).ln();
        let Some(grads) = grads.as_deref_mut() else { continue };
        z[y] -= 1.0;
        for &r in mode.encoders() {
            let net = &nets[r];
            let x = data.row(r, i, net.d);
            for (unit, w) in net.w.chunks_exact(net.d).enumerate() {
                let coef = z[unit / net.m] * smoothed_relu_grad(dot(w, x), spec.beta, spec.q) * inv_n;
                if coef != 0.0 {
                    let g = &mut grads[r][unit * net.d..(unit + 1) * net.d];
                    for (gk, xk) in g.iter_mut().zip(x) {
                        *gk += coef * xk;
                    }
                }
            }
        }
    }
    loss * inv_n
}

/// Runs `epochs` gradient steps of size `eta` in `mode`, measuring the ECS of
/// both encoders after each one. With `heldout`, the test error is recorded too.
pub fn train(
    nets: &mut [ToyNet; 2],
    data: &Dataset,
    heldout: Option<&Dataset>,
    spec: &SparseSpec,
    mode: TrainMode,
    epochs: usize,
    eta: f64,
) -> Trajectory {
    train_masked(nets, data, heldout, spec, mode, epochs, eta, |_, _| true)
}

/// As [`train`], but at epoch `e` the class-`j` neurons move only when
/// `active(e, j)` holds. The mask sees the snapshot-free epoch index, so callers
/// can freeze classes from their own bookkeeping.
#[allow(clippy::too_many_arguments)]
pub fn train_masked<F: FnMut(usize, usize) -> bool>(
    nets: &mut [ToyNet; 2],
    data: &Dataset,
    heldout: Option<&Dataset>,
    spec: &SparseSpec,
    mode: TrainMode,
    epochs: usize,
    eta: f64,
    mut active: F,
) -> Trajectory {
    let record = |nets: &[ToyNet; 2], epoch: usize, loss: f64| EpochRecord {
        epoch,
        loss,
        snapshot: measure_ecs(nets, data, spec),
        test_error: heldout.map(|h| test_error(nets, mode, h, spec)),
    };
    let mut grads = [vec![0.0; nets[0].w.len()], vec![0.0; nets[1].w.len()]];
    let mut loss = loss_and_grad(nets, data, mode, spec, Some(&mut grads));
    let mut records = vec![record(nets, 0, loss)];
    let mut diverged_at = None;
    for epoch in 1..=epochs {
        for &r in mode.encoders() {
            let block = nets[r].m * nets[r].d;
            for (j, (w, g)) in nets[r].w.chunks_mut(block).zip(grads[r].chunks(block)).enumerate() {
                if active(epoch, j) {
                    for (wk, gk) in w.iter_mut().zip(g) {
                        *wk -= eta * gk;
                    }
                }
            }
        }
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        loss = loss_and_grad(nets, data, mode, spec, Some(&mut grads));
        if !loss.is_finite() || nets.iter().any(|n| n.w.iter().any(|v| !v.is_finite())) {
            diverged_at = Some(epoch);
            break;
        }
        records.push(record(nets, epoch, loss));
    }
    Trajectory { mode, records, diverged_at }
}

/// Mean cross-entropy without updating anything.
pub fn loss(nets: &[ToyNet; 2], data: &Dataset, mode: TrainMode, spec: &SparseSpec) -> f64 {
    loss_and_grad(nets, data, mode, spec, None)
}

/// Classification error of the (fused, in joint mode) model; ties go to the
/// lowest class index.
pub fn test_error(nets: &[ToyNet; 2], mode: TrainMode, heldout: &Dataset, spec: &SparseSpec) -> f64 {
    let mut z = vec![0.0; spec.k];
    let mut wrong = 0usize;
    for i in 0..heldout.n {
        logits(nets, heldout, i, mode, spec, &mut z);
        let pred =
            z.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best }).0;
        if pred != heldout.labels[i] {
            wrong += 1;
        }
    }
    wrong as f64 / heldout.n as f64
}

#[cfg(test)]
mod tests {
    use super::super::World;
    use super::*;

    fn setup(spec: &SparseSpec) -> (World, [ToyNet; 2]) {
        let world = World::new(spec).unwrap();
        let nets = [
            ToyNet::init(spec, world.dict[0].clone(), spec.seed + 11),
            ToyNet::init(spec, world.dict[1].clone(), spec.seed + 12),
        ];
        (world, nets)
    }

    #[test]
    fn zero_step_changes_nothing() {
        let spec = SparseSpec { k: 4, d1: 8, d2: 8, n: 200, ..Default::default() };
        let (world, mut nets) = setup(&spec);
        let before = nets.clone();
        let t = train(&mut nets, &world.train, None, &spec, TrainMode::Joint, 3, 0.0);
        assert_eq!(nets, before);
        assert!(t.records.windows(2).all(|w| w[0].snapshot == w[1].snapshot));
    }

    #[test]
    fn unimodal_training_leaves_the_other_encoder_alone() {
        let spec = SparseSpec { k: 4, d1: 8, d2: 8, n: 200, ..Default::default() };
        let (world, mut nets) = setup(&spec);
        let t = train(&mut nets, &world.train, None, &spec, TrainMode::Unimodal1, 20, 1.0);
        let first = &t.records[0].snapshot;
        for rec in &t.records {
            for j in 0..spec.k {
                assert_eq!(rec.snapshot.lambda[j][1].to_bits(), first.lambda[j][1].to_bits());
            }
        }
        assert_ne!(t.last().snapshot.lambda, first.lambda);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = SparseSpec { k: 3, d1: 4, d2: 5, m: 2, n: 30, sigma0: 0.3, ..Default::default() };
        let (world, nets) = setup(&spec);
        let mut grads = [vec![0.0; nets[0].w.len()], vec![0.0; nets[1].w.len()]];
        loss_and_grad(&nets, &world.train, TrainMode::Joint, &spec, Some(&mut grads));
        let h = 1e-6;
        for r in 0..2 {
            for idx in [0, 3, 7, nets[r].w.len() - 1] {
                let mut plus = nets.clone();
                plus[r].w[idx] += h;
                let mut minus = nets.clone();
                minus[r].w[idx] -= h;
                let fd = (loss(&plus, &world.train, TrainMode::Joint, &spec)
                    - loss(&minus, &world.train, TrainMode::Joint, &spec))
                    / (2.0 * h);
                assert!((fd - grads[r][idx]).abs() < 1e-7, "r={r} idx={idx}: {fd} vs {}", grads[r][idx]);
            }
        }
    }

    #[test]
    fn untrained_nets_are_at_chance() {
        // A single random init can favour some classes, so average over inits.
        let spec = SparseSpec::default();
        let errs: Vec<f64> = (0..10)
            .map(|seed| {
                let (world, nets) = setup(&SparseSpec { seed, ..spec });
                test_error(&nets, TrainMode::Joint, &world.heldout, &spec)
            })
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((mean - (1.0 - 1.0 / spec.k as f64)).abs() < 0.05, "{errs:?}");
    }

    #[test]
    fn easy_regime_is_learned() {
        let spec = SparseSpec { noise_sigma: 0.0, frac_sufficient: [1.0, 1.0], sigma0: 0.1, ..Default::default() };
        let (world, mut nets) = setup(&spec);
        let t = train(&mut nets, &world.train, None, &spec, TrainMode::Joint, 300, 2.0);
        assert!(t.diverged_at.is_none());
        let err = test_error(&nets, TrainMode::Joint, &world.heldout, &spec);
        assert!(err <= 0.01, "{err}");
    }
}
