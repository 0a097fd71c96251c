//! Uniqueness/synergy driven Stage I controller.
//!
//! Every `probe_freq` epochs the controller snapshots both encoders, measures
//! the PID atoms of `(cluster1, cluster2, label)` and then
//!
//! 1. pauses the dominant modality when one uniqueness exceeds the other by
//!    more than `tau_u` (if neither does, the active modality is kept);
//! 2. ends unimodal training once synergy drops below `lambda_s` times its
//!    running peak, provided that peak is positive.
//!
//! Between probes exactly one encoder trains per epoch.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{measures, quantize_embeddings};
use crate::error::{PidError, Result};
use crate::solver::{solve, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Modality {
    One,
    Two,
}

impl Modality {
    pub fn index(self) -> u8 {
        match self {
            Modality::One => 1,
            Modality::Two => 2,
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::One => Modality::Two,
            Modality::Two => Modality::One,
        }
    }
}

impl From<Modality> for u8 {
    fn from(m: Modality) -> u8 {
        m.index()
    }
}

impl TryFrom<u8> for Modality {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Modality::One),
            2 => Ok(Modality::Two),
            other => Err(format!("modality must be 1 or 2, got {other}")),
        }
    }
}

/// Signal the controller reads at each probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// PID atoms from FastPID.
    #[default]
    Pid,
    /// Comparison mode: `I(Y;X1)` and `I(Y;X2)` stand in for the two
    /// uniquenesses and their sum stands in for synergy.
    Mi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub probe_freq: usize,
    pub tau_u: f64,
    pub lambda_s: f64,
    pub epsilon: f64,
    pub max_unimodal_epochs: usize,
    pub initial_modality: Modality,
    pub metric: Metric,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            probe_freq: 5,
            tau_u: 5.0,
            lambda_s: 0.95,
            epsilon: 1e-8,
            max_unimodal_epochs: 100,
            initial_modality: Modality::One,
            metric: Metric::Pid,
        }
    }
}

impl ControllerConfig {
    /// Best thresholds found by the threshold sweep.
    pub fn best() -> Self {
        ControllerConfig { tau_u: 1.5, lambda_s: 0.80, ..Default::default() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "best" => Ok(Self::best()),
            other => Err(PidError::InvalidInput(format!("unknown controller preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PidError::InvalidInput(msg.to_string()));
        if self.probe_freq == 0 {
            return bad("probe_freq must be positive");
        }
        // tau_u = +inf is allowed and disables balancing.
        if !(self.tau_u > 1.0) {
            return bad("tau_u must exceed 1");
        }
        if !(self.lambda_s > 0.0 && self.lambda_s <= 1.0) {
            return bad("lambda_s must lie in (0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Unimodal,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "keep")]
    Keep,
    #[serde(rename = "switch_to_1")]
    SwitchTo1,
    #[serde(rename = "switch_to_2")]
    SwitchTo2,
    #[serde(rename = "transition")]
    Transition,
}

/// Atoms read at one probe, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub u1: f64,
    pub u2: f64,
    pub r: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub epoch: usize,
    pub u1: f64,
    pub u2: f64,
    pub r: f64,
    pub s: f64,
    pub decision: Decision,
    pub active_after: Modality,
}

impl ProbeRecord {
    pub fn measurement(&self) -> Measurement {
        Measurement { u1: self.u1, u2: self.u2, r: self.r, s: self.s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub stage: Stage,
    pub active_modality: Modality,
    pub best_synergy: f64,
    pub epoch: usize,
    pub history: Vec<ProbeRecord>,
}

impl ControllerState {
    pub fn new(cfg: &ControllerConfig) -> Self {
        ControllerState {
            stage: Stage::Unimodal,
            active_modality: cfg.initial_modality,
            best_synergy: -1.0,
            epoch: 0,
            history: Vec::new(),
        }
    }

    /// Applies one probe's measurement, taken at `self.epoch`.
    ///
    /// When the balance rule and the transition rule fire on the same probe the
    /// logged decision is `transition`; `active_after` still reflects the switch.
    pub fn step(&mut self, m: Measurement, cfg: &ControllerConfig) -> Result<Decision> {
        if self.stage == Stage::Joint {
            return Err(PidError::AlreadyTransitioned);
        }
        let mut decision = Decision::Keep;
        if m.u1 / (m.u2 + cfg.epsilon) > cfg.tau_u {
            self.active_modality = Modality::Two;
            decision = Decision::SwitchTo2;
        } else if m.u2 / (m.u1 + cfg.epsilon) > cfg.tau_u {
            self.active_modality = Modality::One;
            decision = Decision::SwitchTo1;
        }
        if m.s < cfg.lambda_s * self.best_synergy && self.best_synergy > 0.0 {
            self.stage = Stage::Joint;
            decision = Decision::Transition;
        }
        self.best_synergy = self.best_synergy.max(m.s);
        self.history.push(ProbeRecord {
            epoch: self.epoch,
            u1: m.u1,
            u2: m.u2,
            r: m.r,
            s: m.s,
            decision,
            active_after: self.active_modality,
        });
        Ok(decision)
    }
}

/// Feeds a measurement trace through a fresh controller, one probe every
/// `probe_freq` epochs, stopping at the transition.
pub fn replay(trace: &[Measurement], cfg: &ControllerConfig) -> Result<ControllerState> {
    cfg.validate()?;
    let mut state = ControllerState::new(cfg);
    for (i, &m) in trace.iter().enumerate() {
        state.epoch = (i + 1) * cfg.probe_freq;
        if state.step(m, cfg)? == Decision::Transition {
            break;
        }
    }
    Ok(state)
}

/// Embeddings of both modalities plus labels, row-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// What the host training system provides.
pub trait TrainerPort {
    fn train_one_epoch(&mut self, modality: Modality) -> Result<()>;

    /// Must not mutate trainer state.
    fn snapshot_embeddings(&self) -> Result<Snapshot>;
}

/// Snapshot, quantize into `k` clusters per modality, solve.
pub fn probe<T: TrainerPort + ?Sized>(
    trainer: &T,
    k: usize,
    solver_cfg: &SolverConfig,
    metric: Metric,
    quantizer_seed: u64,
) -> Result<Measurement> {
    let snap = trainer.snapshot_embeddings()?;
    if snap.labels.is_empty() {
        return Err(PidError::Empty);
    }
    let joint = quantize_embeddings(&snap.m1, &snap.m2, &snap.labels, k, quantizer_seed)?;
    match metric {
        Metric::Pid => {
            let res = solve(&joint, solver_cfg)?;
            Ok(Measurement { u1: res.u1, u2: res.u2, r: res.r, s: res.s })
        }
        Metric::Mi => {
            let m = measures(&joint);
            Ok(Measurement { u1: m.i_x1_y, u2: m.i_x2_y, r: 0.0, s: m.i_x1_y + m.i_x2_y })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLog {
    pub state: ControllerState,
    /// Modality trained in each completed epoch.
    pub trained: Vec<Modality>,
}

/// The unimodal loop with a caller-supplied probe.
///
/// At epoch `e` (1-based) the probe runs first when `e % probe_freq == 0`; a
/// transition ends the loop before that epoch's training.
pub fn run_with_probe<T, F>(trainer: &mut T, cfg: &ControllerConfig, mut probe_fn: F) -> Result<ScheduleLog>
where
    T: TrainerPort + ?Sized,
    F: FnMut(&T, usize) -> Result<Measurement>,
{
    cfg.validate()?;
    let mut state = ControllerState::new(cfg);
    let mut trained = Vec::new();
    for epoch in 1..=cfg.max_unimodal_epochs {
        state.epoch = epoch;
        if epoch % cfg.probe_freq == 0 {
            let m = probe_fn(trainer, epoch).map_err(|e| with_epoch(e, epoch))?;
            if state.step(m, cfg)? == Decision::Transition {
                break;
            }
        }
        trainer.train_one_epoch(state.active_modality).map_err(|e| with_epoch(e, epoch))?;
        trained.push(state.active_modality);
    }
    Ok(ScheduleLog { state, trained })
}

fn with_epoch(e: PidError, epoch: usize) -> PidError {
    match e {
        PidError::Trainer { .. } | PidError::Diverged { .. } => e,
        other => PidError::Trainer { epoch, message: other.to_string() },
    }
}

pub fn run<T: TrainerPort + ?Sized>(
    trainer: &mut T,
    cfg: &ControllerConfig,
    solver_cfg: &SolverConfig,
    k: usize,
    quantizer_seed: u64,
) -> Result<ScheduleLog> {
    solver_cfg.validate()?;
    run_with_probe(trainer, cfg, |t, _| probe(t, k, solver_cfg, cfg.metric, quantizer_seed))
}

/// First line of a probe log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLogHeader {
    pub controller: ControllerConfig,
    pub solver: SolverConfig,
    pub k: usize,
    pub quantizer_seed: u64,
}

/// Header line, then one [`ProbeRecord`] per line.
pub fn write_probe_log<W: Write>(mut w: W, header: &ProbeLogHeader, history: &[ProbeRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, &serde_json::json!({ "header": header }))?;
    w.write_all(b"\n")?;
    for rec in history {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_probe_log(text: &str) -> Result<(ProbeLogHeader, Vec<ProbeRecord>)> {
    #[derive(Deserialize)]
    struct Head {
        header: ProbeLogHeader,
    }
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or(PidError::Empty)?;
    let head: Head = serde_json::from_str(first)?;
    let records = lines.map(serde_json::from_str).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((head.header, records))
}
