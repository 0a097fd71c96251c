//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not raised, so the suite always completes. Set
//! `ACCEPTANCE_STRICT=1` to make any FAIL turn into a non-zero exit status.

use std::process::Command;
use std::time::Instant;

use pid_cli::bench::{run_bench, BenchReport, Suite};
use pid_core::dist::{marginal, measures, Axes};
use pid_core::ecs::{
    mi_proxy_check, paired_test_error, run_scenario, unimodal_checkpoints, ScenarioConfig, ScenarioKind,
};
use pid_core::oracle::long_horizon_solve;
use pid_core::scheduler::{replay, ControllerConfig, Decision, Measurement, Modality, Stage};
use pid_core::solver::{grad_check, sinkhorn_project, solve};
use pid_core::synth::gen_dirichlet;
use pid_core::{Joint3, PidResult, SolverConfig};

struct Verdict {
    pass: bool,
    detail: String,
    /// Context printed under the verdict; never affects it.
    supplementary: Option<String>,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into(), supplementary: None }
}

type Check = fn() -> Result<Verdict, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// 1: bitwise gates against the analytic decomposition.
fn bitwise() -> Result<Verdict, String> {
    let start = Instant::now();
    let rep = run_bench(Suite::Bitwise, false).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let mut pass = secs < 5.0;
    let mut parts = Vec::new();
    for row in rep.method("fastpid") {
        let limit = if row.task == "XOR" { 1e-3 } else { 5e-3 };
        pass &= row.mae <= limit;
        parts.push(format!("{} MAE {:.2e} (<= {limit:.0e})", row.task, row.mae));
    }
    Ok(verdict(pass, format!("{}; {secs:.2} s", parts.join(", "))))
}

fn dirichlet_set(shape: [usize; 3], count: u64, base: u64) -> Result<Vec<Joint3>, String> {
    (0..count).map(|i| gen_dirichlet(shape, 1.0, base + i).map_err(err)).collect()
}

const AGREEMENT_SHAPES: [[usize; 3]; 3] = [[4, 4, 3], [8, 8, 4], [8, 8, 8]];

fn agreement(cfg: &SolverConfig) -> Result<(f64, f64, usize, usize), String> {
    let mut worst = 0.0f64;
    let mut fails = 0;
    let mut total = 0;
    let start = Instant::now();
    for (s, shape) in AGREEMENT_SHAPES.into_iter().enumerate() {
        for p in dirichlet_set(shape, 25, 1000 * (s as u64 + 1))? {
            let fast = solve(&p, cfg).map_err(err)?;
            let oracle = long_horizon_solve(&p).map_err(err)?;
            let mae = fast.mae(oracle.pid.atoms());
            worst = worst.max(mae);
            fails += usize::from(mae > 1e-2);
            total += 1;
        }
    }
    Ok((worst, start.elapsed().as_secs_f64(), fails, total))
}

/// 2: FastPID against the long-horizon oracle on random distributions.
fn oracle_agreement() -> Result<Verdict, String> {
    let (worst, secs, fails, total) = agreement(&SolverConfig::default())?;
    let pass = fails == 0 && secs < 120.0;
    let mut v = verdict(
        pass,
        format!("default config: {fails}/{total} instances above MAE 1e-2, worst {worst:.2e}; {secs:.1} s"),
    );
    // Same sweep with a converged projection, for context only.
    let (worst, secs, fails, total) = agreement(&SolverConfig { sinkhorn_iter: 40, ..Default::default() })?;
    v.supplementary = Some(format!("sinkhorn_iter=40: {fails}/{total} above MAE 1e-2, worst {worst:.2e}; {secs:.1} s"));
    Ok(v)
}

fn random_shape(i: u64) -> [usize; 3] {
    [2 + (i % 4) as usize, 2 + (i / 4 % 4) as usize, 2 + (i / 16 % 3) as usize]
}

fn random_solves() -> Result<Vec<(Joint3, PidResult)>, String> {
    (0..200)
        .map(|i| {
            let p = gen_dirichlet(random_shape(i), 1.0, 5000 + i).map_err(err)?;
            let res = solve(&p, &SolverConfig::default()).map_err(err)?;
            Ok((p, res))
        })
        .collect()
}

/// 3: the three consistency identities.
fn identities() -> Result<Verdict, String> {
    let mut worst = 0.0f64;
    for (p, res) in random_solves()? {
        let m = measures(&p);
        worst = worst
            .max((res.r + res.u1 - m.i_x1_y).abs())
            .max((res.r + res.u2 - m.i_x2_y).abs())
            .max((res.r + res.u1 + res.u2 + res.s - m.i_joint).abs());
    }
    Ok(verdict(worst <= 1e-6, format!("200 distributions, worst residual {worst:.2e} (<= 1e-6)")))
}

/// 4: feasibility of q*, before and after one more projection pass.
fn feasibility() -> Result<Verdict, String> {
    let mut loose = 0.0f64;
    let mut tight = 0.0f64;
    for (p, res) in random_solves()? {
        loose = loose.max(res.q_star.marginal_deviation(&p));
        let again =
            sinkhorn_project(&res.q_star, &marginal(&p, Axes::X1Y), &marginal(&p, Axes::X2Y), 1).map_err(err)?;
        tight = tight.max(again.marginal_deviation(&p));
    }
    Ok(verdict(
        loose <= 1e-4 && tight <= 1e-8,
        format!("200 solves, max deviation {loose:.2e} (<= 1e-4), after one pass {tight:.2e} (<= 1e-8)"),
    ))
}

/// 5: analytic gradients against central differences.
fn differentiability() -> Result<Verdict, String> {
    let mut worst = 0.0f64;
    for (s, shape) in [[3, 3, 2], [4, 4, 4]].into_iter().enumerate() {
        for (i, p) in dirichlet_set(shape, 10, 7000 + 100 * s as u64)?.iter().enumerate() {
            worst = worst.max(grad_check(p, &SolverConfig::default(), 1e-5, i as u64).map_err(err)?);
        }
    }
    Ok(verdict(worst <= 1e-4, format!("20 instances, max relative error {worst:.2e} (<= 1e-4)")))
}

/// 6: warm-start iteration counts and the Gaussian-suite timing ordering.
fn warm_start() -> Result<Verdict, String> {
    let ablation = run_bench(Suite::InitAblation, false).map_err(err)?;
    let iters = |rep: &BenchReport, task: &str, method: &str| {
        rep.rows.iter().find(|r| r.task == task && r.method == method).map(|r| r.iterations).unwrap_or(0)
    };
    let mut ordered = true;
    let mut parts = Vec::new();
    for task in ablation.tasks.keys() {
        let a = iters(&ablation, task, "fastpid-analytical");
        let u = iters(&ablation, task, "fastpid-uniform");
        let g = iters(&ablation, task, "fastpid-gaussian");
        ordered &= a < u && a < g;
        parts.push(format!("{task}: {a}/{u}/{g}"));
    }
    let gauss = run_bench(Suite::Gaussian, true).map_err(err)?;
    let mut faster = true;
    let mut times = Vec::new();
    for task in gauss.tasks.keys() {
        let t = |m: &str| gauss.rows.iter().find(|r| &r.task == task && r.method == m).and_then(|r| r.wall_time_s);
        let (f, o) = (t("fastpid").unwrap_or(f64::INFINITY), t("oracle-long").unwrap_or(0.0));
        faster &= f < o;
        times.push(format!("{task}: {f:.3}s vs {o:.3}s"));
    }
    Ok(verdict(
        ordered && faster,
        format!(
            "iterations analytical/uniform/gaussian [{}] ordering {}; FastPID vs oracle [{}] ordering {}",
            parts.join("; "),
            if ordered { "holds" } else { "violated" },
            times.join(", "),
            if faster { "holds" } else { "violated" },
        ),
    ))
}

fn m(u1: f64, u2: f64, s: f64) -> Measurement {
    Measurement { u1, u2, r: 0.0, s }
}

/// 7: scripted traces through the controller.
fn controller_replay() -> Result<Verdict, String> {
    let mut checks = Vec::new();
    let peak = [0.10, 0.20, 0.30, 0.27].map(|s| m(1.0, 1.0, s));
    let at = |lambda_s: f64| replay(&peak, &ControllerConfig { lambda_s, ..Default::default() }).map_err(err);
    checks.push(("0.27 after peak 0.30 transitions at 0.95", at(0.95)?.stage == Stage::Joint));
    checks.push(("and not at 0.80", at(0.80)?.stage == Stage::Unimodal));

    let cfg = ControllerConfig { tau_u: 1.5, ..Default::default() };
    let pauses = replay(&[m(2.0, 1.0, 0.1), m(1.0, 1.6, 0.2), m(1.4, 1.0, 0.3)], &cfg).map_err(err)?;
    let got: Vec<Modality> = pauses.history.iter().map(|r| r.active_after).collect();
    checks.push(("dominant modality paused above tau", got == [Modality::Two, Modality::One, Modality::One]));

    let flat = replay(&[0.0, 0.0, -0.1, 0.0].map(|s| m(1.0, 1.0, s)), &ControllerConfig { lambda_s: 1.0, ..cfg })
        .map_err(err)?;
    checks.push(("no transition before positive synergy", flat.stage == Stage::Unimodal));

    let first =
        replay(&[0.2, 0.5, 0.48, 0.46, 0.1].map(|s| m(1.0, 1.0, s)), &ControllerConfig::default()).map_err(err)?;
    let decisions: Vec<Decision> = first.history.iter().map(|r| r.decision).collect();
    checks.push((
        "transition at the first low probe",
        decisions == [Decision::Keep, Decision::Keep, Decision::Keep, Decision::Transition],
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        format!("{} scripted traces reproduce", checks.len())
    } else {
        format!("mismatch: {}", failed.join(", "))
    };
    Ok(verdict(failed.is_empty(), detail))
}

/// 8: the four Stage I outcomes at K = 8.
fn four_outcomes() -> Result<Verdict, String> {
    let start = Instant::now();
    let cfg = ScenarioConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in ScenarioKind::ALL {
        let mut hits = 0;
        for seed in 0..5 {
            hits += usize::from(run_scenario(kind, &cfg, seed).map_err(err)?.label == kind.expected());
        }
        pass &= hits == 5;
        parts.push(format!("{} {hits}/5", kind.expected().name()));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(verdict(pass && secs < 60.0, format!("K=8: {}; {secs:.1} s", parts.join(", "))))
}

/// Joint-training epochs for the paired comparison.
const JOINT_EPOCHS: usize = 50;

/// 9: balanced versus competing starts on held-out error.
fn test_error_ordering() -> Result<Verdict, String> {
    let cfg = ScenarioConfig::default();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let pair = paired_test_error(&cfg, JOINT_EPOCHS, seed).map_err(err)?;
        wins += usize::from(pair.balanced < pair.competing);
        parts.push(format!("{:.3}<{:.3}", pair.balanced, pair.competing));
    }
    Ok(verdict(wins >= 4, format!("K=8, {JOINT_EPOCHS} joint epochs: balanced wins {wins}/5 [{}]", parts.join(" "))))
}

/// 10: rank association of quantized MI with ECS power.
fn mi_proxy() -> Result<Verdict, String> {
    let cfg = ScenarioConfig::default();
    let mut rhos = Vec::new();
    let mut model = Vec::new();
    for seed in 0..5 {
        for r in 0..2 {
            let (world, cps) = unimodal_checkpoints(&cfg, seed, r, 12, 10).map_err(err)?;
            let rep = mi_proxy_check(&cps, &world.heldout, &world.spec, r, 20, seed).map_err(err)?;
            rhos.push(rep.rank_correlation.unwrap_or(f64::NAN));
            model.push(rep.model_rank_correlation.unwrap_or(f64::NAN));
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = rhos.iter().all(|&r| r >= 0.8);
    let mut v = verdict(
        pass,
        format!(
            "K=8, 12 checkpoints x 5 seeds x 2 modalities, k-means k=20: rho min {:.2} [{}]",
            min(&rhos),
            fmt(&rhos)
        ),
    );
    v.supplementary = Some(format!("cross-entropy MI bound: rho min {:.2} [{}]", min(&model), fmt(&model)));
    Ok(v)
}

/// 11: byte-identical reruns of the binary and the library.
fn determinism() -> Result<Verdict, String> {
    let bin = env!("CARGO_BIN_EXE_pid");
    let dir = tempfile::tempdir().map_err(err)?;
    let xor = dir.path().join("xor.json");
    let xor = xor.to_str().ok_or("non-UTF-8 temp path")?;
    let runs: Vec<Vec<&str>> = vec![
        vec!["gen", "--gate", "xor", "--out", xor],
        vec!["solve", "--input", xor],
        vec!["oracle", "--input", xor, "--method", "long"],
        vec!["compare", "--input", xor],
        vec!["gen", "--gaussian", "--bins-x", "6", "--bins-y", "4", "--samples", "50000", "--seed", "3"],
        vec!["bench", "--suite", "bitwise"],
        vec!["schedule", "--trainer", "sim:desk", "--max-epochs", "20", "--seed", "2"],
        vec!["simulate", "--scenario", "breaking", "--k", "4", "--seed", "1"],
    ];
    let mut differing = Vec::new();
    for args in &runs {
        let mut outs = Vec::new();
        for _ in 0..2 {
            let out = Command::new(bin).args(args).env_remove("PID_SEED").output().map_err(err)?;
            if !out.status.success() {
                return Err(format!("pid {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
            }
            let file = if args.contains(&"--out") { std::fs::read(xor).map_err(err)? } else { Vec::new() };
            outs.push((out.stdout, file));
        }
        if outs[0] != outs[1] {
            differing.push(args[0]);
        }
    }
    let a = serde_json::to_vec(&run_bench(Suite::Bitwise, false).map_err(err)?).map_err(err)?;
    let b = serde_json::to_vec(&run_bench(Suite::Bitwise, false).map_err(err)?).map_err(err)?;
    if a != b {
        differing.push("run_bench");
    }
    let detail = if differing.is_empty() {
        format!("{} commands and the library bench rerun byte-identically", runs.len())
    } else {
        format!("output changed between runs: {}", differing.join(", "))
    };
    Ok(verdict(differing.is_empty(), detail))
}

fn main() {
    let checks: [(&str, Check); 11] = [
        ("bitwise ground truth", bitwise),
        ("oracle agreement", oracle_agreement),
        ("consistency identities", identities),
        ("feasibility", feasibility),
        ("differentiability", differentiability),
        ("warm-start benefit", warm_start),
        ("controller replay", controller_replay),
        ("four outcomes", four_outcomes),
        ("test-error ordering", test_error_ordering),
        ("MI-proxy association", mi_proxy),
        ("determinism", determinism),
    ];
    let mut passed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let v = check().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        passed += usize::from(v.pass);
        println!("criterion {:>2} {}: {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if let Some(extra) = v.supplementary {
            println!("             supplementary: {extra}");
        }
    }
    println!("acceptance: {passed}/{} criteria pass", checks.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < checks.len() {
        std::process::exit(1);
    }
}
