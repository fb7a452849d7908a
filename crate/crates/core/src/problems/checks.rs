//! Sampling checks for cocoercivity of a component and strong monotonicity of
//! the full operator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FiniteSumOperator, ProblemError, Result};
use crate::linalg::{dot, norm_sq};
use crate::rng::{self, streams};

/// Relative slack allowed before a sampled pair counts as a violation.
pub const CHECK_SLACK: f64 = 1e-9;

/// Sampling scales of the test points.
const SCALES: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` for cocoercivity, smallest for strong monotonicity.
    pub worst_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl AssumptionReport {
    fn empty(trials: usize) -> Self {
        Self {
            trials,
            violations: 0,
            worst_ratio: f64::NAN,
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
        }
    }

    fn record_ratio(&mut self, r: f64) {
        self.min_ratio = self.min_ratio.min(r);
        self.max_ratio = self.max_ratio.max(r);
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, or `None` when both sides vanish.
    pub ratio: Option<f64>,
    pub violated: bool,
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Evaluates `‖F_i(u)−F_i(v)‖² ≤ ℓ⟨F_i(u)−F_i(v), u−v⟩` at one pair.
pub fn cocoercivity_pair<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    i: usize,
    ell: f64,
    u: &[f64],
    v: &[f64],
) -> PairOutcome {
    let dim = problem.dim();
    let (mut fu, mut fv) = (vec![0.0; dim], vec![0.0; dim]);
    problem.component_into(i, u, &mut fu);
    problem.component_into(i, v, &mut fv);
    let df = diff(&fu, &fv);
    let dz = diff(u, v);
    let lhs = norm_sq(&df);
    let rhs = ell * dot(&df, &dz);
    if lhs == 0.0 && rhs == 0.0 {
        return PairOutcome {
            lhs,
            rhs,
            ratio: None,
            violated: false,
        };
    }
    let violated = if rhs <= 0.0 {
        lhs > 0.0
    } else {
        lhs > (1.0 + CHECK_SLACK) * rhs
    };
    let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
    PairOutcome {
        lhs,
        rhs,
        ratio: Some(ratio),
        violated,
    }
}

/// Evaluates `⟨F(u)−F(v), u−v⟩ ≥ μ‖u−v‖²` at one pair.
pub fn monotonicity_pair<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    mu: f64,
    u: &[f64],
    v: &[f64],
) -> PairOutcome {
    let dim = problem.dim();
    let (mut fu, mut fv) = (vec![0.0; dim], vec![0.0; dim]);
    problem.full_into(u, &mut fu);
    problem.full_into(v, &mut fv);
    let df = diff(&fu, &fv);
    let dz = diff(u, v);
    let lhs = dot(&df, &dz);
    let rhs = mu * norm_sq(&dz);
    if rhs == 0.0 {
        return PairOutcome {
            lhs,
            rhs,
            ratio: None,
            violated: false,
        };
    }
    PairOutcome {
        lhs,
        rhs,
        ratio: Some(lhs / rhs),
        violated: lhs < (1.0 - CHECK_SLACK) * rhs,
    }
}

fn sample_pairs(dim: usize, trials: usize, seed: u64) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> {
    let mut rng = rng::stream(seed, streams::CHECKER);
    (0..trials).map(move |t| {
        let s = SCALES[t % SCALES.len()];
        let u = (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        let v = (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        (u, v)
    })
}

fn check_inputs(trials: usize, constant: f64) -> Result<()> {
    if trials == 0 {
        return Err(ProblemError::Invalid("trials must be at least 1".into()));
    }
    if !(constant > 0.0) {
        return Err(ProblemError::Invalid(format!("constant must be positive, got {constant}")));
    }
    Ok(())
}

/// Samples `trials` random pairs and tests cocoercivity of component `i`.
pub fn check_cocoercivity<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    i: usize,
    ell: f64,
    trials: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    check_inputs(trials, ell)?;
    let n = problem.n_components();
    if i >= n {
        return Err(ProblemError::IndexOutOfRange { index: i, n });
    }
    let mut report = AssumptionReport::empty(trials);
    for (u, v) in sample_pairs(problem.dim(), trials, seed) {
        let out = cocoercivity_pair(problem, i, ell, &u, &v);
        report.violations += out.violated as usize;
        if let Some(r) = out.ratio {
            report.record_ratio(r);
        }
    }
    report.worst_ratio = report.max_ratio;
    Ok(report)
}

/// Samples `trials` random pairs and tests strong monotonicity of `F`.
pub fn check_strong_monotonicity<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    mu: f64,
    trials: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    check_inputs(trials, mu)?;
    let mut report = AssumptionReport::empty(trials);
    for (u, v) in sample_pairs(problem.dim(), trials, seed) {
        let out = monotonicity_pair(problem, mu, &u, &v);
        report.violations += out.violated as usize;
        if let Some(r) = out.ratio {
            report.record_ratio(r);
        }
    }
    report.worst_ratio = report.min_ratio;
    Ok(report)
}
