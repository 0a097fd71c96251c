//! Scripted-trace replays and scripted trainers through the controller loop.

use pid_core::scheduler::{
    probe, read_probe_log, replay, run, run_with_probe, write_probe_log, ControllerConfig, Decision, Measurement,
    Metric, Modality, ProbeLogHeader, Snapshot, Stage, TrainerPort,
};
use pid_core::solver::SolverConfig;
use pid_core::PidError;

fn m(u1: f64, u2: f64, s: f64) -> Measurement {
    Measurement { u1, u2, r: 0.0, s }
}

fn synergy_trace(values: &[f64]) -> Vec<Measurement> {
    values.iter().map(|&s| m(1.0, 1.0, s)).collect()
}

#[test]
fn decline_from_peak_depends_on_lambda() {
    let trace = synergy_trace(&[0.10, 0.20, 0.30, 0.27]);
    let strict = replay(&trace, &ControllerConfig { lambda_s: 0.95, ..Default::default() }).unwrap();
    assert_eq!(strict.stage, Stage::Joint);
    assert_eq!(strict.history.last().unwrap().decision, Decision::Transition);
    assert_eq!(strict.history.len(), 4);

    let lenient = replay(&trace, &ControllerConfig { lambda_s: 0.80, ..Default::default() }).unwrap();
    assert_eq!(lenient.stage, Stage::Unimodal);
    assert!(lenient.history.iter().all(|r| r.decision == Decision::Keep));
    assert_eq!(lenient.best_synergy, 0.30);
}

#[test]
fn rise_then_fall_transitions_at_the_first_low_probe() {
    let cfg = ControllerConfig::default();
    // Peak 0.5 at probe 4; 0.48 is above 0.95 * 0.5, 0.46 is the first below.
    let trace = synergy_trace(&[0.1, 0.2, 0.4, 0.5, 0.48, 0.46, 0.3, 0.2]);
    let state = replay(&trace, &cfg).unwrap();
    let decisions: Vec<Decision> = state.history.iter().map(|r| r.decision).collect();
    assert_eq!(decisions, [vec![Decision::Keep; 5], vec![Decision::Transition]].concat());
    assert_eq!(state.history.last().unwrap().epoch, 6 * cfg.probe_freq);
}

#[test]
fn no_transition_before_positive_synergy() {
    let cfg = ControllerConfig { lambda_s: 1.0, ..Default::default() };
    let state = replay(&synergy_trace(&[0.0, 0.0, 0.0, 0.0]), &cfg).unwrap();
    assert_eq!(state.stage, Stage::Unimodal);
    assert_eq!(state.history.len(), 4);
    // Negative estimates never count as a positive peak either.
    let state = replay(&synergy_trace(&[-0.2, -0.1, -0.3]), &cfg).unwrap();
    assert_eq!(state.stage, Stage::Unimodal);
}

#[test]
fn alternating_dominance_alternates_the_active_modality() {
    let cfg = ControllerConfig { tau_u: 1.5, ..Default::default() };
    let trace = vec![m(2.0, 1.0, 0.1), m(1.0, 2.0, 0.2), m(3.0, 1.0, 0.3), m(1.0, 1.2, 0.4), m(0.1, 1.0, 0.5)];
    let state = replay(&trace, &cfg).unwrap();
    let got: Vec<(Decision, Modality)> = state.history.iter().map(|r| (r.decision, r.active_after)).collect();
    assert_eq!(
        got,
        vec![
            (Decision::SwitchTo2, Modality::Two),
            (Decision::SwitchTo1, Modality::One),
            (Decision::SwitchTo2, Modality::Two),
            (Decision::Keep, Modality::Two),
            (Decision::SwitchTo1, Modality::One),
        ]
    );
}

#[test]
fn ratio_exactly_at_tau_does_not_switch() {
    let cfg = ControllerConfig { tau_u: 2.0, epsilon: 1e-300, ..Default::default() };
    let state = replay(&[m(2.0, 1.0, 0.1)], &cfg).unwrap();
    assert_eq!(state.history[0].decision, Decision::Keep);
}

/// Records which modality trained in each epoch; embeddings never change.
#[derive(Default)]
struct Recorder {
    trained: Vec<Modality>,
    fail_at: Option<usize>,
}

impl TrainerPort for Recorder {
    fn train_one_epoch(&mut self, modality: Modality) -> pid_core::Result<()> {
        if Some(self.trained.len() + 1) == self.fail_at {
            return Err(PidError::InvalidInput("out of memory".into()));
        }
        self.trained.push(modality);
        Ok(())
    }

    fn snapshot_embeddings(&self) -> pid_core::Result<Snapshot> {
        Ok(Snapshot::default())
    }
}

#[test]
fn zero_budget_does_nothing() {
    let cfg = ControllerConfig { max_unimodal_epochs: 0, ..Default::default() };
    let mut t = Recorder::default();
    let log = run_with_probe(&mut t, &cfg, |_, _| unreachable!()).unwrap();
    assert!(log.state.history.is_empty());
    assert_eq!(log.state.stage, Stage::Unimodal);
    assert!(t.trained.is_empty());
}

#[test]
fn loop_trains_one_modality_per_epoch_and_stops_before_training() {
    let cfg = ControllerConfig { probe_freq: 2, tau_u: 1.5, max_unimodal_epochs: 20, ..Default::default() };
    let script = [m(1.0, 3.0, 0.2), m(1.0, 1.0, 0.4), m(3.0, 1.0, 0.5), m(1.0, 1.0, 0.1)];
    let mut t = Recorder::default();
    let log = run_with_probe(&mut t, &cfg, |_, epoch| Ok(script[epoch / 2 - 1])).unwrap();

    // Probe at epoch 8 transitions, so epochs 1..=7 trained.
    assert_eq!(t.trained.len(), 7);
    assert_eq!(log.trained, t.trained);
    use Modality::*;
    assert_eq!(t.trained, vec![One, One, One, One, One, Two, Two]);
    assert_eq!(log.state.stage, Stage::Joint);
    let epochs: Vec<usize> = log.state.history.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![2, 4, 6, 8]);
}

#[test]
fn trainer_failure_carries_the_epoch() {
    let cfg = ControllerConfig { max_unimodal_epochs: 10, ..Default::default() };
    let mut t = Recorder { fail_at: Some(3), ..Default::default() };
    let err = run_with_probe(&mut t, &cfg, |_, _| Ok(m(1.0, 1.0, 0.1))).unwrap_err();
    match err {
        PidError::Trainer { epoch, message } => {
            assert_eq!(epoch, 3);
            assert!(message.contains("out of memory"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

/// Fixed one-dimensional embeddings whose labels are `gate(x1, x2)`.
struct GateTrainer {
    snap: Snapshot,
}

impl GateTrainer {
    fn new(gate: impl Fn(usize, usize) -> usize) -> Self {
        let mut snap = Snapshot::default();
        for _ in 0..25 {
            for x1 in 0..2 {
                for x2 in 0..2 {
                    snap.m1.push(vec![x1 as f64]);
                    snap.m2.push(vec![x2 as f64]);
                    snap.labels.push(gate(x1, x2));
                }
            }
        }
        GateTrainer { snap }
    }
}

impl TrainerPort for GateTrainer {
    fn train_one_epoch(&mut self, _: Modality) -> pid_core::Result<()> {
        Ok(())
    }

    fn snapshot_embeddings(&self) -> pid_core::Result<Snapshot> {
        Ok(self.snap.clone())
    }
}

#[test]
fn probing_an_xor_trainer_reads_pure_synergy() {
    let t = GateTrainer::new(|a, b| a ^ b);
    let got = probe(&t, 20, &SolverConfig::default(), Metric::Pid, 0).unwrap();
    for (v, want) in [got.r, got.u1, got.u2, got.s].into_iter().zip([0.0, 0.0, 0.0, 1.0]) {
        assert!((v - want).abs() < 1e-3, "{got:?}");
    }
}

#[test]
fn constant_modality_has_no_unique_information() {
    let mut t = GateTrainer::new(|a, _| a);
    t.snap.m2.iter_mut().for_each(|v| v[0] = 0.0);
    let got = probe(&t, 20, &SolverConfig::default(), Metric::Pid, 0).unwrap();
    assert!(got.u2.abs() < 1e-9 && got.r.abs() < 1e-9, "{got:?}");
    assert!((got.u1 - 1.0).abs() < 1e-6);
    let mi = probe(&t, 20, &SolverConfig::default(), Metric::Mi, 0).unwrap();
    assert!((mi.u1 - 1.0).abs() < 1e-9 && mi.u2.abs() < 1e-12 && mi.r == 0.0);
}

#[test]
fn probe_log_replays_to_the_same_decisions() {
    // XOR embeddings give a flat synergy of 1 bit: no switch, no transition.
    let cfg = ControllerConfig { max_unimodal_epochs: 30, ..ControllerConfig::best() };
    let solver = SolverConfig::default();
    let mut t = GateTrainer::new(|a, b| a ^ b);
    let log = run(&mut t, &cfg, &solver, 20, 3).unwrap();
    assert_eq!(log.state.history.len(), 6);
    assert_eq!(log.trained.len(), 30);

    let header = ProbeLogHeader { controller: cfg, solver, k: 20, quantizer_seed: 3 };
    let mut buf = Vec::new();
    write_probe_log(&mut buf, &header, &log.state.history).unwrap();
    let (back_header, back) = read_probe_log(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back_header, header);
    assert_eq!(back, log.state.history);
    let trace: Vec<Measurement> = back.iter().map(|r| r.measurement()).collect();
    assert_eq!(replay(&trace, &back_header.controller).unwrap().history, back);
}
