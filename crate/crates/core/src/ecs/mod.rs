//! Toy sparse-coding simulator of modality competition.
//!
//! Each modality sees `X^r = M^r z^r + xi^r`, where `M^r` has orthonormal
//! columns, `z^r` is nonzero only at the label and `xi^r` is isotropic noise.
//! Each encoder has `m` smoothed-ReLU neurons per class. A fixed group-sum
//! classifier turns the class-`j` neurons into logit `j`; in joint mode the two
//! encoders' features are summed before the classifier.
//!
//! The effective competitive strength (ECS) of modality `r` on class `j` is
//! `lambda = max_l <w_{j,l,r}, M^r_j>_+ * d_{j,r}^(1/(q-2))`, where `d_{j,r}`
//! sums `(z^r_j)^q` over class-`j` samples that are sufficient in modality
//! `r`. Because it needs the true dictionary and codes it can only be measured
//! in simulation.

mod scenario;
mod train;

pub use scenario::{
    calibrate, natural_winner, paired_test_error, run_scenario, run_sweep, setup, PairedErrors, ScenarioConfig,
    ScenarioKind, ScenarioReport, SimTrainer, SweepRow,
};
pub use train::{loss, test_error, train, train_masked, EpochRecord, TrainMode, Trajectory};

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{build_joint, measures, quantize};
use crate::error::{PidError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseSpec {
    /// Number of classes.
    pub k: usize,
    pub d1: usize,
    pub d2: usize,
    /// Neurons per class; each encoder has `k * m`.
    pub m: usize,
    /// Smoothed-ReLU exponent.
    pub q: u32,
    /// Smoothed-ReLU threshold.
    pub beta: f64,
    pub sigma0: f64,
    pub noise_sigma: f64,
    pub z_strong: f64,
    pub z_weak: f64,
    /// Probability that a sample is sufficient, per modality.
    pub frac_sufficient: [f64; 2],
    pub n: usize,
    pub seed: u64,
}

impl Default for SparseSpec {
    fn default() -> Self {
        SparseSpec {
            k: 8,
            d1: 32,
            d2: 32,
            m: 4,
            q: 3,
            beta: 0.2,
            sigma0: 0.01,
            noise_sigma: 0.05,
            z_strong: 1.0,
            z_weak: 0.0,
            frac_sufficient: [0.25, 0.9],
            n: 2048,
            seed: 1,
        }
    }
}

impl SparseSpec {
    pub fn dim(&self, r: usize) -> usize {
        if r == 0 {
            self.d1
        } else {
            self.d2
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PidError::InvalidInput(msg));
        if self.k < 2 {
            return bad(format!("need at least 2 classes, got {}", self.k));
        }
        if self.d1 < self.k || self.d2 < self.k {
            return bad(format!("input dims ({}, {}) cannot hold {} orthonormal columns", self.d1, self.d2, self.k));
        }
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be positive".into());
        }
        if self.q < 3 {
            return bad(format!("q must be at least 3, got {}", self.q));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.sigma0 >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("scales must be nonnegative".into());
        }
        if !(self.z_strong > self.z_weak && self.z_weak >= 0.0) {
            return bad("need z_strong > z_weak >= 0".into());
        }
        if self.frac_sufficient.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("frac_sufficient must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Paired samples for both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub labels: Vec<usize>,
    /// Row-major `n x d_r` inputs per modality.
    pub x: [Vec<f64>; 2],
    /// Code value at the label, `z^r_y`, per modality.
    pub z_label: [Vec<f64>; 2],
    pub sufficient: [Vec<bool>; 2],
}

impl Dataset {
    pub fn row(&self, r: usize, i: usize, d: usize) -> &[f64] {
        &self.x[r][i * d..(i + 1) * d]
    }
}

/// `d x k` matrix with orthonormal columns, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub d: usize,
    pub k: usize,
    pub cols: Vec<f64>,
}

impl Dictionary {
    pub fn random(d: usize, k: usize, seed: u64) -> Result<Self> {
        if d < k {
            return Err(PidError::InvalidInput(format!("cannot fit {k} orthonormal columns in dim {d}")));
        }
        let mut r = rng::seeded(seed);
        let g = DMatrix::<f64>::from_fn(d, k, |_, _| StandardNormal.sample(&mut r));
        let q = g.qr().q();
        Ok(Dictionary { d, k, cols: q.as_slice().to_vec() })
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.d..(j + 1) * self.d]
    }

    /// Largest deviation of `M^T M` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.k {
            for b in 0..self.k {
                let dot = dot(self.col(a), self.col(b));
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The simulated world: both dictionaries plus a training and a held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: SparseSpec,
    pub dict: [Dictionary; 2],
    pub train: Dataset,
    pub heldout: Dataset,
}

impl World {
    pub fn new(spec: &SparseSpec) -> Result<Self> {
        spec.validate()?;
        let dict = [
            Dictionary::random(spec.d1, spec.k, rng::derive_seed(spec.seed, "ecs/dict1"))?,
            Dictionary::random(spec.d2, spec.k, rng::derive_seed(spec.seed, "ecs/dict2"))?,
        ];
        let train = sample(spec, &dict, spec.n, rng::derive_seed(spec.seed, "ecs/train"));
        let heldout = sample(spec, &dict, spec.n, rng::derive_seed(spec.seed, "ecs/heldout"));
        Ok(World { spec: *spec, dict, train, heldout })
    }
}

/// Training set drawn from `spec`, with its dictionaries.
pub fn gen_sparse(spec: &SparseSpec) -> Result<(Dataset, [Dictionary; 2])> {
    let w = World::new(spec)?;
    Ok((w.train, w.dict))
}

fn sample(spec: &SparseSpec, dict: &[Dictionary; 2], n: usize, seed: u64) -> Dataset {
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated noise scale");
    let mut labels = Vec::with_capacity(n);
    let mut x = [Vec::with_capacity(n * spec.d1), Vec::with_capacity(n * spec.d2)];
    let mut z_label = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut sufficient = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..n {
        let y = r.random_range(0..spec.k);
        labels.push(y);
        for m in 0..2 {
            let suff = r.random_bool(spec.frac_sufficient[m]);
            let z = if suff { spec.z_strong } else { spec.z_weak };
            sufficient[m].push(suff);
            z_label[m].push(z);
            for &c in dict[m].col(y) {
                x[m].push(z * c + noise.sample(&mut r));
            }
        }
    }
    Dataset { n, labels, x, z_label, sufficient }
}

/// Zero below 0, `z^q / (q beta^(q-1))` up to `beta`, then linear with slope 1.
pub fn smoothed_relu(z: f64, beta: f64, q: u32) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z <= beta {
        z.powi(q as i32) / (q as f64 * beta.powi(q as i32 - 1))
    } else {
        z - beta * (1.0 - 1.0 / q as f64)
    }
}

pub fn smoothed_relu_grad(z: f64, beta: f64, q: u32) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z <= beta {
        (z / beta).powi(q as i32 - 1)
    } else {
        1.0
    }
}

/// One modality's encoder: `k * m` neurons of input dim `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub k: usize,
    pub m: usize,
    pub d: usize,
    /// Neuron `(j, l)` occupies `w[(j*m + l)*d ..][..d]`.
    pub w: Vec<f64>,
    pub dict: Dictionary,
}

impl ToyNet {
    pub fn init(spec: &SparseSpec, dict: Dictionary, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let d = dict.d;
        let w = (0..spec.k * spec.m * d)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut r);
                spec.sigma0 * g
            })
            .collect::<Vec<f64>>();
        ToyNet { k: spec.k, m: spec.m, d, w, dict }
    }

    pub fn neuron(&self, j: usize, l: usize) -> &[f64] {
        let at = (j * self.m + l) * self.d;
        &self.w[at..at + self.d]
    }

    pub fn neuron_mut(&mut self, j: usize, l: usize) -> &mut [f64] {
        let at = (j * self.m + l) * self.d;
        &mut self.w[at..at + self.d]
    }

    /// `max_l <w_{j,l}, M_j>_+`
    pub fn alignment(&self, j: usize) -> f64 {
        (0..self.m).map(|l| dot(self.neuron(j, l), self.dict.col(j)).max(0.0)).fold(0.0, f64::max)
    }

    /// Neuron activations for one input, length `k * m`.
    pub fn features(&self, x: &[f64], beta: f64, q: u32) -> Vec<f64> {
        self.w.chunks_exact(self.d).map(|w| smoothed_relu(dot(w, x), beta, q)).collect()
    }

    /// Activations for every sample of modality `r`.
    pub fn embed(&self, data: &Dataset, r: usize, beta: f64, q: u32) -> Vec<Vec<f64>> {
        (0..data.n).map(|i| self.features(data.row(r, i, self.d), beta, q)).collect()
    }
}

/// ECS per class and modality (`[j][r]`, with `r = 0` for modality 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcsSnapshot {
    pub lambda: Vec<[f64; 2]>,
    pub alignment: Vec<[f64; 2]>,
    pub signal: Vec<[f64; 2]>,
}

impl EcsSnapshot {
    pub fn classes(&self) -> usize {
        self.lambda.len()
    }

    /// `sum_j lambda[j][r]^q`
    pub fn power_sum(&self, r: usize, q: u32) -> f64 {
        self.lambda.iter().map(|l| l[r].powi(q as i32)).sum()
    }
}

/// `d_{j,r}(D)` for every class and modality.
pub fn data_signal(data: &Dataset, spec: &SparseSpec) -> Vec<[f64; 2]> {
    let mut d = vec![[0.0; 2]; spec.k];
    for i in 0..data.n {
        for r in 0..2 {
            if data.sufficient[r][i] {
                d[data.labels[i]][r] += data.z_label[r][i].powi(spec.q as i32);
            }
        }
    }
    let scale = 1.0 / (data.n as f64 * spec.beta.powi(spec.q as i32 - 1));
    for v in d.iter_mut().flatten() {
        *v *= scale;
    }
    d
}

pub fn measure_ecs(nets: &[ToyNet; 2], data: &Dataset, spec: &SparseSpec) -> EcsSnapshot {
    let exponent = 1.0 / (spec.q as f64 - 2.0);
    let signal: Vec<[f64; 2]> =
        data_signal(data, spec).into_iter().map(|d| [d[0].powf(exponent), d[1].powf(exponent)]).collect();
    let alignment: Vec<[f64; 2]> = (0..spec.k).map(|j| [nets[0].alignment(j), nets[1].alignment(j)]).collect();
    let lambda = alignment.iter().zip(&signal).map(|(a, s)| [a[0] * s[0], a[1] * s[1]]).collect();
    EcsSnapshot { lambda, alignment, signal }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerStatus {
    R1Suppressed,
    R2Suppressed,
    Balanced,
    /// Both strengths are zero.
    BalancedDegenerate,
}

/// Competition status of one class.
pub fn trigger_status(lambda: [f64; 2], beta: f64) -> TriggerStatus {
    let [l1, l2] = lambda;
    if l1 == 0.0 && l2 == 0.0 {
        TriggerStatus::BalancedDegenerate
    } else if l1 * (1.0 + beta) <= l2 {
        TriggerStatus::R1Suppressed
    } else if l2 * (1.0 + beta) <= l1 {
        TriggerStatus::R2Suppressed
    } else {
        TriggerStatus::Balanced
    }
}

pub fn check_trigger(snap: &EcsSnapshot, beta: f64) -> Vec<TriggerStatus> {
    snap.lambda.iter().map(|&l| trigger_status(l, beta)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Amplified,
    Persistent,
    Reversed,
    Breaking,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Amplified, Outcome::Persistent, Outcome::Reversed, Outcome::Breaking];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Amplified => "amplified",
            Outcome::Persistent => "persistent",
            Outcome::Reversed => "reversed",
            Outcome::Breaking => "breaking",
        }
    }
}

/// Label of one class given its strengths before and after Stage I.
///
/// The original winner is the modality with the larger strength before (ties
/// go to modality 2). Inside the band `(1/(1+beta), 1+beta)` the class is
/// breaking; past `1+beta` in the original direction it is amplified if the
/// winner's lead widened and persistent otherwise; past it in the opposite
/// direction it is reversed.
pub fn classify_class(before: [f64; 2], after: [f64; 2], beta: f64) -> Outcome {
    let w = if before[0] > before[1] { 0 } else { 1 };
    let lead = |l: [f64; 2]| l[w] / l[1 - w];
    match trigger_status(after, beta) {
        TriggerStatus::Balanced | TriggerStatus::BalancedDegenerate => Outcome::Breaking,
        TriggerStatus::R1Suppressed if w == 0 => Outcome::Reversed,
        TriggerStatus::R2Suppressed if w == 1 => Outcome::Reversed,
        _ => {
            if lead(after) > lead(before) {
                Outcome::Amplified
            } else {
                Outcome::Persistent
            }
        }
    }
}

pub fn classify_outcome(before: &EcsSnapshot, after: &EcsSnapshot, beta: f64) -> Result<Vec<Outcome>> {
    if before.classes() != after.classes() {
        return Err(PidError::InvalidInput(format!(
            "snapshots cover {} and {} classes",
            before.classes(),
            after.classes()
        )));
    }
    Ok(before.lambda.iter().zip(&after.lambda).map(|(&b, &a)| classify_class(b, a, beta)).collect())
}

/// Most frequent label; ties resolve in [`Outcome::ALL`] order.
pub fn plurality(labels: &[Outcome]) -> Option<Outcome> {
    let mut best: Option<(Outcome, usize)> = None;
    for o in Outcome::ALL {
        let c = labels.iter().filter(|&&l| l == o).count();
        if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
            best = Some((o, c));
        }
    }
    best.map(|(o, _)| o)
}

/// Ranks with ties averaged, 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either series is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// `I(Y; X^r)` in bits: the encoder's activations are quantized into
/// `clusters` symbols and MI is read off the `(symbol, label)` histogram.
pub fn quantized_mi(
    net: &ToyNet,
    data: &Dataset,
    r: usize,
    spec: &SparseSpec,
    clusters: usize,
    seed: u64,
) -> Result<f64> {
    let symbols = quantize(&net.embed(data, r, spec.beta, spec.q), clusters, seed)?;
    let kx = symbols.iter().max().map_or(1, |m| m + 1);
    let mut counts = vec![0.0; kx * spec.k];
    for (&s, &y) in symbols.iter().zip(&data.labels) {
        counts[s * spec.k + y] += 1.0;
    }
    let joint = build_joint([kx, 1, spec.k], &counts)?;
    Ok(measures(&joint).i_x1_y)
}

/// `H(Y) - CE` in bits, where CE is the cross-entropy of the encoder's own
/// classifier: a variational lower bound on `I(Y; X^r)` that reads the model's
/// per-sample uncertainty directly.
pub fn model_mi(nets: &[ToyNet; 2], data: &Dataset, r: usize, spec: &SparseSpec) -> f64 {
    let mut py = vec![0.0; spec.k];
    for &y in &data.labels {
        py[y] += 1.0 / data.n as f64;
    }
    let h_y: f64 = py.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h_y - train::loss(nets, data, TrainMode::unimodal(r), spec)) / std::f64::consts::LN_2
}

/// Association between `I(Y; X^r)` and `sum_j lambda[j][r]^q` over checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiProxyReport {
    /// 1-based modality.
    pub modality: usize,
    pub ecs_power: Vec<f64>,
    /// [`quantized_mi`] per checkpoint.
    pub mi: Vec<f64>,
    /// Spearman correlation of `mi` with `ecs_power`; `None` when either is constant.
    pub rank_correlation: Option<f64>,
    /// [`model_mi`] per checkpoint.
    pub model_mi: Vec<f64>,
    pub model_rank_correlation: Option<f64>,
    pub degenerate: bool,
}

/// Checks the MI proxy on checkpoints `(nets, snapshot)` for modality `r`
/// (0-based), estimating MI on `data`.
pub fn mi_proxy_check(
    checkpoints: &[([ToyNet; 2], EcsSnapshot)],
    data: &Dataset,
    spec: &SparseSpec,
    r: usize,
    clusters: usize,
    seed: u64,
) -> Result<MiProxyReport> {
    if checkpoints.len() < 5 {
        return Err(PidError::InvalidInput(format!("need at least 5 checkpoints, got {}", checkpoints.len())));
    }
    let mut mi = Vec::with_capacity(checkpoints.len());
    let mut model = Vec::with_capacity(checkpoints.len());
    let mut ecs_power = Vec::with_capacity(checkpoints.len());
    for (nets, snap) in checkpoints {
        mi.push(quantized_mi(&nets[r], data, r, spec, clusters, seed)?);
        model.push(model_mi(nets, data, r, spec));
        ecs_power.push(snap.power_sum(r, spec.q));
    }
    let rank_correlation = spearman(&mi, &ecs_power);
    Ok(MiProxyReport {
        modality: r + 1,
        degenerate: rank_correlation.is_none(),
        model_rank_correlation: spearman(&model, &ecs_power),
        ecs_power,
        mi,
        rank_correlation,
        model_mi: model,
    })
}

/// Trains modality `r` alone from a fresh init and keeps `count` checkpoints
/// `every` epochs apart (the first at epoch 0).
pub fn unimodal_checkpoints(
    cfg: &ScenarioConfig,
    seed: u64,
    r: usize,
    count: usize,
    every: usize,
) -> Result<(World, Vec<([ToyNet; 2], EcsSnapshot)>)> {
    let (world, mut nets) = setup(cfg, seed)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push((nets.clone(), measure_ecs(&nets, &world.train, &world.spec)));
        if i + 1 < count {
            let t = train(&mut nets, &world.train, None, &world.spec, TrainMode::unimodal(r), every, cfg.eta);
            if let Some(epoch) = t.diverged_at {
                return Err(PidError::Diverged { epoch });
            }
        }
    }
    Ok((world, out))
}
