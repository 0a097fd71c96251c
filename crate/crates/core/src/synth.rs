//! Synthetic benchmark distributions: exact bitwise gates and seeded
//! Gaussian regression tasks discretized by quantile binning.

use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{build_joint, from_counts, Joint3};
use crate::error::{PidError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Xor,
    And,
    Or,
}

impl Gate {
    pub const ALL: [Gate; 3] = [Gate::Xor, Gate::And, Gate::Or];

    pub fn apply(self, x1: usize, x2: usize) -> usize {
        match self {
            Gate::Xor => x1 ^ x2,
            Gate::And => x1 & x2,
            Gate::Or => x1 | x2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::Xor => "XOR",
            Gate::And => "AND",
            Gate::Or => "OR",
        }
    }

    /// Analytic `(R, U1, U2, S)` in bits, as tabulated for the bitwise suite.
    pub fn ground_truth(self) -> [f64; 4] {
        match self {
            Gate::Xor => [0.0, 0.0, 0.0, 1.0],
            Gate::And | Gate::Or => [0.31, 0.0, 0.0, 0.5],
        }
    }
}

impl std::str::FromStr for Gate {
    type Err = PidError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xor" => Ok(Gate::Xor),
            "and" => Ok(Gate::And),
            "or" => Ok(Gate::Or),
            other => Err(PidError::InvalidInput(format!("unknown gate {other:?}"))),
        }
    }
}

/// Two independent uniform bits and `y = gate(x1, x2)`.
pub fn gen_gate(gate: Gate) -> Joint3 {
    let mut raw = [0.0; 8];
    for x1 in 0..2 {
        for x2 in 0..2 {
            raw[(x1 * 2 + x2) * 2 + gate.apply(x1, x2)] = 0.25;
        }
    }
    build_joint([2, 2, 2], &raw).expect("gate tensor is valid")
}

/// `Y = c1 X1 + c2 X2 + u1 X1^2 + u2 X2^2 + noise`, with `X1, X2 ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianSpec {
    pub n_samples: usize,
    pub c1: f64,
    pub c2: f64,
    pub u1: f64,
    pub u2: f64,
    pub noise_sigma: f64,
    pub bins_x: usize,
    pub bins_y: usize,
    pub seed: u64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            n_samples: 500_000,
            c1: 1.0,
            c2: 0.8,
            u1: 0.5,
            u2: 0.3,
            noise_sigma: 0.5,
            bins_x: 16,
            bins_y: 8,
            seed: 42,
        }
    }
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins_x < 1 || self.bins_y < 1 {
            return Err(PidError::InvalidInput("bin counts must be positive".into()));
        }
        let needed = self.bins_x * self.bins_x * self.bins_y * 10;
        if self.n_samples < needed {
            return Err(PidError::InvalidInput(format!(
                "{} samples cannot fill {}x{}x{} bins (need {needed})",
                self.n_samples, self.bins_x, self.bins_x, self.bins_y
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(PidError::InvalidInput("noise_sigma must be positive".into()));
        }
        let coeffs = [self.c1, self.c2, self.u1, self.u2];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(PidError::InvalidInput("coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Raw draws and their bin indices.
#[derive(Debug, Clone)]
pub struct GaussianSamples {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y_raw: Vec<f64>,
    pub x1_bin: Vec<usize>,
    pub x2_bin: Vec<usize>,
    pub y_bin: Vec<usize>,
}

/// Equal-frequency bins by rank; ties broken by sample index.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = rank * bins / n;
    }
    out
}

pub fn sample_gaussian(spec: &GaussianSpec) -> Result<GaussianSamples> {
    spec.validate()?;
    let mut r = rng::seeded(spec.seed);
    let n = spec.n_samples;
    let (mut x1, mut x2, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut r);
        let b: f64 = StandardNormal.sample(&mut r);
        let e: f64 = StandardNormal.sample(&mut r);
        x1.push(a);
        x2.push(b);
        y.push(spec.c1 * a + spec.c2 * b + spec.u1 * a * a + spec.u2 * b * b + spec.noise_sigma * e);
    }
    let x1_bin = quantile_bins(&x1, spec.bins_x);
    let x2_bin = quantile_bins(&x2, spec.bins_x);
    let y_bin = quantile_bins(&y, spec.bins_y);
    Ok(GaussianSamples { x1, x2, y_raw: y, x1_bin, x2_bin, y_bin })
}

/// Histogram of the binned samples, dims `(bins_x, bins_x, bins_y)`.
pub fn gen_gaussian(spec: &GaussianSpec) -> Result<Joint3> {
    let s = sample_gaussian(spec)?;
    let (bx, by) = (spec.bins_x, spec.bins_y);
    let mut counts = vec![0u64; bx * bx * by];
    for n in 0..spec.n_samples {
        counts[(s.x1_bin[n] * bx + s.x2_bin[n]) * by + s.y_bin[n]] += 1;
    }
    from_counts([bx, bx, by], &counts)
}

/// Random joint drawn from a symmetric Dirichlet with concentration `alpha`.
pub fn gen_dirichlet(dims: [usize; 3], alpha: f64, seed: u64) -> Result<Joint3> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(PidError::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| PidError::InvalidInput(e.to_string()))?;
    let mut r = rng::seeded(seed);
    let raw: Vec<f64> = (0..dims.iter().product::<usize>()).map(|_| gamma.sample(&mut r)).collect();
    build_joint(dims, &raw)
}
