//! Benchmark suites over the synthetic tasks.
//!
//! Each suite is a fixed list of (task, method) rows. Rows run sequentially so
//! wall times are not distorted by contention, and the report keeps suite
//! order, so the numeric content is a pure function of the suite name.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use pid_core::oracle::{exact_solve, long_horizon_solve, DEFAULT_GRID_POINTS};
use pid_core::rng::derive_seed;
use pid_core::solver::solve_with_init;
use pid_core::synth::{gen_gate, gen_gaussian, Gate, GaussianSpec};
use pid_core::{InitMethod, Joint3, OracleResult, PidResult, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Bitwise,
    Gaussian,
    InitAblation,
    RefineAblation,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Bitwise => "bitwise",
            Suite::Gaussian => "gaussian",
            Suite::InitAblation => "init-ablation",
            Suite::RefineAblation => "refine-ablation",
        }
    }
}

/// How a task's distribution is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSpec {
    Gate { gate: Gate },
    Gaussian(GaussianSpec),
}

impl TaskSpec {
    fn build(&self) -> pid_core::Result<Joint3> {
        match self {
            TaskSpec::Gate { gate } => Ok(gen_gate(*gate)),
            TaskSpec::Gaussian(spec) => gen_gaussian(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub task: String,
    pub method: String,
    pub r: f64,
    pub u1: f64,
    pub u2: f64,
    pub s: f64,
    /// Mean absolute atom error against the task's reference.
    pub mae: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: Suite,
    pub version: String,
    pub seeds: Vec<u64>,
    /// What each task's reference is: `ground-truth` or an oracle method.
    pub reference: String,
    pub tasks: BTreeMap<String, TaskSpec>,
    /// Solver settings of every FastPID method.
    pub configs: BTreeMap<String, SolverConfig>,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> pid_core::Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> pid_core::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Rows of one method, in suite order.
    pub fn method<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a BenchRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

fn fastpid_row(task: &str, method: &str, res: &PidResult, reference: [f64; 4], secs: f64) -> BenchRow {
    BenchRow {
        task: task.into(),
        method: method.into(),
        r: res.r,
        u1: res.u1,
        u2: res.u2,
        s: res.s,
        mae: res.mae(reference),
        iterations: res.iters_used,
        converged: res.converged,
        wall_time_s: Some(secs),
    }
}

fn oracle_row(task: &str, res: &OracleResult, reference: [f64; 4], secs: f64) -> BenchRow {
    let method = match res.method {
        pid_core::OracleMethod::ExactPolytope => "oracle-exact",
        pid_core::OracleMethod::LongHorizon => "oracle-long",
    };
    BenchRow { iterations: res.iterations, converged: true, ..fastpid_row(task, method, &res.pid, reference, secs) }
}

fn timed<T>(f: impl FnOnce() -> pid_core::Result<T>) -> pid_core::Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn gaussian(bins_x: usize, seed: u64) -> GaussianSpec {
    GaussianSpec { bins_x, bins_y: 8, seed, ..Default::default() }
}

struct Builder {
    report: BenchReport,
}

impl Builder {
    fn new(suite: Suite, reference: &str) -> Self {
        Builder {
            report: BenchReport {
                suite,
                version: env!("CARGO_PKG_VERSION").into(),
                seeds: Vec::new(),
                reference: reference.into(),
                tasks: BTreeMap::new(),
                configs: BTreeMap::new(),
                rows: Vec::new(),
            },
        }
    }

    fn task(&mut self, name: &str, spec: TaskSpec) -> pid_core::Result<Joint3> {
        if let TaskSpec::Gaussian(g) = &spec {
            if !self.report.seeds.contains(&g.seed) {
                self.report.seeds.push(g.seed);
            }
        }
        let p = spec.build()?;
        self.report.tasks.insert(name.into(), spec);
        Ok(p)
    }

    fn fastpid(
        &mut self,
        p: &Joint3,
        task: &str,
        method: &str,
        cfg: SolverConfig,
        init: InitMethod,
        reference: [f64; 4],
    ) -> pid_core::Result<()> {
        let (res, secs) = timed(|| solve_with_init(p, &cfg, init))?;
        self.report.configs.insert(method.into(), cfg);
        self.report.rows.push(fastpid_row(task, method, &res, reference, secs));
        Ok(())
    }

    /// Long-horizon oracle row; returns its atoms as the task reference.
    fn long(&mut self, p: &Joint3, task: &str) -> pid_core::Result<[f64; 4]> {
        let (res, secs) = timed(|| long_horizon_solve(p))?;
        let atoms = res.pid.atoms();
        self.report.rows.push(oracle_row(task, &res, atoms, secs));
        Ok(atoms)
    }
}

/// Runs one suite. Wall times are kept only when `timing` is set, so that
/// reports without timing are byte-identical across runs.
pub fn run_bench(suite: Suite, timing: bool) -> pid_core::Result<BenchReport> {
    let default = SolverConfig::default();
    let mut b;
    match suite {
        Suite::Bitwise => {
            b = Builder::new(suite, "ground-truth");
            for gate in Gate::ALL {
                let task = gate.name();
                let p = b.task(task, TaskSpec::Gate { gate })?;
                let gt = gate.ground_truth();
                b.fastpid(&p, task, "fastpid", default, InitMethod::Analytical, gt)?;
                let (res, secs) = timed(|| exact_solve(&p, DEFAULT_GRID_POINTS))?;
                b.report.rows.push(oracle_row(task, &res, gt, secs));
            }
        }
        Suite::Gaussian => {
            b = Builder::new(suite, "oracle-long");
            for dx in [8, 16, 32] {
                let task = format!("gaussian-dx{dx}-dy8");
                let p = b.task(&task, TaskSpec::Gaussian(gaussian(dx, 42)))?;
                // The oracle runs first so its atoms can serve as the reference.
                let reference = b.long(&p, &task)?;
                b.fastpid(&p, &task, "fastpid", default, InitMethod::Analytical, reference)?;
            }
        }
        Suite::InitAblation => {
            b = Builder::new(suite, "oracle-long");
            for seed in [42, 43, 44] {
                let task = format!("gaussian-dx16-dy8-seed{seed}");
                let p = b.task(&task, TaskSpec::Gaussian(gaussian(16, seed)))?;
                let reference = b.long(&p, &task)?;
                let inits = [
                    ("fastpid-analytical", InitMethod::Analytical),
                    ("fastpid-uniform", InitMethod::Uniform),
                    ("fastpid-gaussian", InitMethod::Gaussian { seed: derive_seed(seed, "init-ablation/gaussian") }),
                ];
                for (method, init) in inits {
                    b.fastpid(&p, &task, method, default, init, reference)?;
                }
            }
        }
        Suite::RefineAblation => {
            b = Builder::new(suite, "oracle-long");
            let task = "gaussian-dx16-dy8";
            let p = b.task(task, TaskSpec::Gaussian(gaussian(16, 42)))?;
            let reference = b.long(&p, task)?;
            for max_iter in [10, 50, 200, 500, 2000] {
                let cfg = SolverConfig { max_iter, ..default };
                b.fastpid(&p, task, &format!("fastpid-max_iter-{max_iter}"), cfg, InitMethod::Analytical, reference)?;
            }
            for sinkhorn_iter in [1, 5, 10, 20, 40] {
                let cfg = SolverConfig { sinkhorn_iter, ..default };
                let method = format!("fastpid-sinkhorn-{sinkhorn_iter}");
                b.fastpid(&p, task, &method, cfg, InitMethod::Analytical, reference)?;
            }
        }
    }
    if !timing {
        b.report.rows.iter_mut().for_each(|r| r.wall_time_s = None);
    }
    Ok(b.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitwise_report_round_trips() {
        let rep = run_bench(Suite::Bitwise, false).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.rows.iter().all(|r| r.mae <= 5e-3 && r.wall_time_s.is_none()));
        let mut buf = Vec::new();
        rep.write_json(&mut buf).unwrap();
        let back: BenchReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let rep = run_bench(Suite::Bitwise, true).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("task,method,r,u1,u2,s,mae,iterations,converged,wall_time_s"));
    }
}
