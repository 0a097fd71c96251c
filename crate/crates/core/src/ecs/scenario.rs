//! Scripted Stage I scenarios and a simulated trainer for the controller.

use serde::{Deserialize, Serialize};

use super::train::{test_error, train, train_masked, TrainMode, Trajectory};
use super::{
    classify_outcome, measure_ecs, plurality, trigger_status, EcsSnapshot, Outcome, SparseSpec, ToyNet, TriggerStatus,
    World,
};
use crate::error::{PidError, Result};
use crate::rng;
use crate::scheduler::{Modality, Snapshot, TrainerPort};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Pre-train the naturally stronger modality.
    Amplified,
    /// Briefly pre-train the weaker modality.
    Persistent,
    /// Pre-train the weaker modality for far too long.
    Reversed,
    /// Pre-train the weaker modality for the calibrated number of epochs.
    Breaking,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::Amplified, ScenarioKind::Persistent, ScenarioKind::Reversed, ScenarioKind::Breaking];

    pub fn expected(self) -> Outcome {
        match self {
            ScenarioKind::Amplified => Outcome::Amplified,
            ScenarioKind::Persistent => Outcome::Persistent,
            ScenarioKind::Reversed => Outcome::Reversed,
            ScenarioKind::Breaking => Outcome::Breaking,
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = PidError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplified" => Ok(ScenarioKind::Amplified),
            "persistent" => Ok(ScenarioKind::Persistent),
            "reversed" => Ok(ScenarioKind::Reversed),
            "breaking" => Ok(ScenarioKind::Breaking),
            other => Err(PidError::InvalidInput(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub spec: SparseSpec,
    pub eta: f64,
    pub amplify_epochs: usize,
    pub persistent_epochs: usize,
    pub reversed_epochs: usize,
    /// Upper end of the calibration sweep for the breaking scenario.
    pub breaking_max_epochs: usize,
    /// Stage II budget; 0 skips joint training.
    pub joint_epochs: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            spec: SparseSpec::default(),
            eta: 2.0,
            amplify_epochs: 20,
            persistent_epochs: 5,
            reversed_epochs: 300,
            breaking_max_epochs: 300,
            joint_epochs: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(PidError::InvalidInput("eta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Seeded world and freshly initialized encoders.
pub fn setup(cfg: &ScenarioConfig, seed: u64) -> Result<(World, [ToyNet; 2])> {
    cfg.validate()?;
    let spec = SparseSpec { seed: rng::derive_seed(seed, "ecs/world"), ..cfg.spec };
    let world = World::new(&spec)?;
    let nets = [
        ToyNet::init(&spec, world.dict[0].clone(), rng::derive_seed(seed, "ecs/init1")),
        ToyNet::init(&spec, world.dict[1].clone(), rng::derive_seed(seed, "ecs/init2")),
    ];
    Ok((world, nets))
}

/// 0-based index of the modality with the larger total strength.
pub fn natural_winner(snap: &EcsSnapshot) -> usize {
    let total = |r: usize| snap.lambda.iter().map(|l| l[r]).sum::<f64>();
    if total(0) > total(1) {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// 1-based modality that starts out stronger.
    pub winner: usize,
    /// 1-based modality trained during Stage I.
    pub stage1_modality: usize,
    /// Stage I epochs per class.
    pub stage1_epochs: Vec<usize>,
    pub before: EcsSnapshot,
    pub after: EcsSnapshot,
    pub labels: Vec<Outcome>,
    /// Most frequent per-class label.
    pub label: Outcome,
    pub stage1: Trajectory,
    pub joint: Option<Trajectory>,
}

/// Per-class Stage I lengths on the weaker modality `loser`.
///
/// The band condition is a per-class statement, and at random init the classes
/// start from very different alignments, so no single length balances them
/// all. Each class's neurons therefore stop training at the first epoch its
/// strength enters the band around the winner's starting strength; classes
/// that never get there train for all `max` epochs.
pub fn calibrate(nets: &[ToyNet; 2], world: &World, loser: usize, max: usize, eta: f64) -> Vec<usize> {
    let spec = &world.spec;
    let before = measure_ecs(nets, &world.train, spec);
    let winner = 1 - loser;
    let mut stop: Vec<Option<usize>> = vec![None; spec.k];
    let mut cur = nets.clone();
    let in_band = |l: f64, j: usize| {
        let mut pair = [0.0; 2];
        pair[loser] = l;
        pair[winner] = before.lambda[j][winner];
        trigger_status(pair, spec.beta) == TriggerStatus::Balanced
    };
    for j in 0..spec.k {
        if in_band(before.lambda[j][loser], j) {
            stop[j] = Some(0);
        }
    }
    for epoch in 1..=max {
        if stop.iter().all(Option::is_some) {
            break;
        }
        let frozen = stop.clone();
        let t = train_masked(&mut cur, &world.train, None, spec, TrainMode::unimodal(loser), 1, eta, |_, j| {
            frozen[j].is_none()
        });
        if t.diverged_at.is_some() {
            break;
        }
        let snap = &t.last().snapshot;
        for j in 0..spec.k {
            if stop[j].is_none() && in_band(snap.lambda[j][loser], j) {
                stop[j] = Some(epoch);
            }
        }
    }
    stop.into_iter().map(|s| s.unwrap_or(max)).collect()
}

/// Stage I on `loser` with per-class lengths from [`calibrate`].
fn train_calibrated(
    nets: &mut [ToyNet; 2],
    world: &World,
    heldout: Option<&super::Dataset>,
    loser: usize,
    lengths: &[usize],
    eta: f64,
) -> Trajectory {
    let epochs = lengths.iter().copied().max().unwrap_or(0);
    train_masked(nets, &world.train, heldout, &world.spec, TrainMode::unimodal(loser), epochs, eta, |e, j| {
        e <= lengths[j]
    })
}

pub fn run_scenario(kind: ScenarioKind, cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioReport> {
    let (world, mut nets) = setup(cfg, seed)?;
    let spec = world.spec;
    let before = measure_ecs(&nets, &world.train, &spec);
    let winner = natural_winner(&before);
    let loser = 1 - winner;
    let (trained, lengths) = match kind {
        ScenarioKind::Amplified => (winner, vec![cfg.amplify_epochs; spec.k]),
        ScenarioKind::Persistent => (loser, vec![cfg.persistent_epochs; spec.k]),
        ScenarioKind::Reversed => (loser, vec![cfg.reversed_epochs; spec.k]),
        ScenarioKind::Breaking => (loser, calibrate(&nets, &world, loser, cfg.breaking_max_epochs, cfg.eta)),
    };
    let stage1 = train_calibrated(&mut nets, &world, Some(&world.heldout), trained, &lengths, cfg.eta);
    if let Some(epoch) = stage1.diverged_at {
        return Err(PidError::Diverged { epoch });
    }
    let after = stage1.last().snapshot.clone();
    let labels = classify_outcome(&before, &after, spec.beta)?;
    let label = plurality(&labels).expect("at least two classes");
    let joint = (cfg.joint_epochs > 0).then(|| {
        train(&mut nets, &world.train, Some(&world.heldout), &spec, TrainMode::Joint, cfg.joint_epochs, cfg.eta)
    });
    Ok(ScenarioReport {
        scenario: kind,
        seed,
        winner: winner + 1,
        stage1_modality: trained + 1,
        stage1_epochs: lengths,
        before,
        after,
        labels,
        label,
        stage1,
        joint,
    })
}

/// Held-out error after `joint_epochs` of joint training, from the calibrated
/// balanced start and from the untouched (competing) start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedErrors {
    pub seed: u64,
    pub balanced: f64,
    pub competing: f64,
    pub stage1_epochs: Vec<usize>,
}

pub fn paired_test_error(cfg: &ScenarioConfig, joint_epochs: usize, seed: u64) -> Result<PairedErrors> {
    let (world, nets) = setup(cfg, seed)?;
    let spec = world.spec;
    let before = measure_ecs(&nets, &world.train, &spec);
    let loser = 1 - natural_winner(&before);
    let stage1_epochs = calibrate(&nets, &world, loser, cfg.breaking_max_epochs, cfg.eta);
    let mut balanced = nets.clone();
    let t = train_calibrated(&mut balanced, &world, None, loser, &stage1_epochs, cfg.eta);
    if let Some(epoch) = t.diverged_at {
        return Err(PidError::Diverged { epoch });
    }
    let mut competing = nets;
    for n in [&mut balanced, &mut competing] {
        let t = train(n, &world.train, None, &spec, TrainMode::Joint, joint_epochs, cfg.eta);
        if let Some(epoch) = t.diverged_at {
            return Err(PidError::Diverged { epoch });
        }
    }
    Ok(PairedErrors {
        seed,
        balanced: test_error(&balanced, TrainMode::Joint, &world.heldout, &spec),
        competing: test_error(&competing, TrainMode::Joint, &world.heldout, &spec),
        stage1_epochs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epochs: usize,
    pub amplified: usize,
    pub persistent: usize,
    pub reversed: usize,
    pub breaking: usize,
    pub label: Outcome,
}

/// Labels after each Stage I length on the weaker modality, every `step`
/// epochs up to `max_epochs`.
pub fn run_sweep(cfg: &ScenarioConfig, seed: u64, max_epochs: usize, step: usize) -> Result<Vec<SweepRow>> {
    let (world, mut nets) = setup(cfg, seed)?;
    let spec = world.spec;
    let before = measure_ecs(&nets, &world.train, &spec);
    let loser = 1 - natural_winner(&before);
    let t = train(&mut nets, &world.train, None, &spec, TrainMode::unimodal(loser), max_epochs, cfg.eta);
    let step = step.max(1);
    let mut rows = Vec::new();
    for rec in t.records.iter().filter(|r| r.epoch % step == 0) {
        let labels = classify_outcome(&before, &rec.snapshot, spec.beta)?;
        let count = |o: Outcome| labels.iter().filter(|&&l| l == o).count();
        rows.push(SweepRow {
            epochs: rec.epoch,
            amplified: count(Outcome::Amplified),
            persistent: count(Outcome::Persistent),
            reversed: count(Outcome::Reversed),
            breaking: count(Outcome::Breaking),
            label: plurality(&labels).expect("at least two classes"),
        });
    }
    Ok(rows)
}

/// Two toy encoders behind the controller's trainer interface.
#[derive(Debug, Clone)]
pub struct SimTrainer {
    pub world: World,
    pub nets: [ToyNet; 2],
    pub eta: f64,
    pub epochs_trained: [usize; 2],
}

impl SimTrainer {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        let (world, nets) = setup(cfg, seed)?;
        Ok(SimTrainer { world, nets, eta: cfg.eta, epochs_trained: [0, 0] })
    }

    /// Simulated trainers by name: `desk` (imbalanced default) or `balanced`
    /// (equal sufficiency in both modalities).
    pub fn named(name: &str, seed: u64) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        match name {
            "desk" | "default" => {}
            "balanced" => cfg.spec.frac_sufficient = [0.9, 0.9],
            other => return Err(PidError::InvalidInput(format!("unknown simulated trainer {other:?}"))),
        }
        Self::new(&cfg, seed)
    }
}

impl TrainerPort for SimTrainer {
    fn train_one_epoch(&mut self, modality: Modality) -> Result<()> {
        let r = usize::from(modality.index()) - 1;
        let t = train(&mut self.nets, &self.world.train, None, &self.world.spec, TrainMode::unimodal(r), 1, self.eta);
        if t.diverged_at.is_some() {
            return Err(PidError::Diverged { epoch: self.epochs_trained[0] + self.epochs_trained[1] + 1 });
        }
        self.epochs_trained[r] += 1;
        Ok(())
    }

    fn snapshot_embeddings(&self) -> Result<Snapshot> {
        let spec = &self.world.spec;
        Ok(Snapshot {
            m1: self.nets[0].embed(&self.world.train, 0, spec.beta, spec.q),
            m2: self.nets[1].embed(&self.world.train, 1, spec.beta, spec.q),
            labels: self.world.train.labels.clone(),
        })
    }
}
