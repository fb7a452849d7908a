//! SARAH, SVRG and SGD for finite-sum operator equations `F(z) = 0`.
//!
//! All three share one run contract: a [`SolverConfig`] and a starting point
//! go in, a [`RunRecord`] comes out. Oracle calls are counted exactly through
//! [`Oracle`]; the residual and distance metrics recorded at checkpoints use
//! the problem's uncounted evaluator and consume no randomness, so the
//! checkpoint cadence never changes the iterates.

mod monitor;
mod sarah;
mod sgd;
mod svrg;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{FiniteSumOperator, OracleCounter, Point, ProblemError};

pub use sarah::{run_sarah, sarah_inner_trace, InnerTrace};
pub use sgd::run_sgd;
pub use svrg::run_svrg;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("config is for {got}, but {expected} was requested")]
    MethodMismatch { expected: Method, got: Method },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

pub type Result<T, E = SolveError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sarah,
    Svrg,
    Sgd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sarah, Method::Svrg, Method::Sgd];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sarah => "sarah",
            Method::Svrg => "svrg",
            Method::Sgd => "sgd",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Sarah => "SARAH",
            Method::Svrg => "SVRG",
            Method::Sgd => "SGD",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sarah" => Ok(Method::Sarah),
            "svrg" => Ok(Method::Svrg),
            "sgd" => Ok(Method::Sgd),
            other => Err(format!("unknown method `{other}` (expected sarah, svrg or sgd)")),
        }
    }
}

/// Residual growth factor (relative to the starting residual) that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Step size (`η` for SGD).
    pub gamma: f64,
    /// Inner loop length `K`. For SGD, the number of steps per epoch.
    pub inner_k: usize,
    /// Number of outer epochs `S`.
    pub outer_s: usize,
    pub seed: u64,
    /// Oracle-call interval between metric snapshots.
    pub checkpoint_every: u64,
    /// Hard stop on component calls; a run ends at the last step that fits.
    #[serde(default)]
    pub max_oracle_calls: Option<u64>,
    /// Keep `‖v^k‖²` for every inner step.
    #[serde(default)]
    pub record_inner_norms: bool,
    /// Fill the `elapsed_s` column with wall-clock time. Off by default so
    /// that records are byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

impl SolverConfig {
    pub fn new(method: Method, gamma: f64, inner_k: usize, outer_s: usize, seed: u64) -> Self {
        Self {
            method,
            gamma,
            inner_k,
            outer_s,
            seed,
            checkpoint_every: 1,
            max_oracle_calls: None,
            record_inner_norms: false,
            record_timing: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_outer(mut self, outer_s: usize) -> Self {
        self.outer_s = outer_s;
        self
    }

    pub fn with_checkpoint_every(mut self, every: u64) -> Self {
        self.checkpoint_every = every;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.max_oracle_calls = Some(budget);
        self
    }

    pub fn with_inner_norms(mut self) -> Self {
        self.record_inner_norms = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SolveError::InvalidConfig(m));
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.inner_k < 1 {
            return bad("inner_k must be at least 1".into());
        }
        if self.outer_s < 1 {
            return bad("outer_s must be at least 1".into());
        }
        if self.checkpoint_every < 1 {
            return bad("checkpoint_every must be at least 1".into());
        }
        Ok(())
    }

    /// Component calls one full run would spend without a budget cap.
    pub fn planned_calls(&self, n: usize) -> u64 {
        let (n, k, s) = (n as u64, self.inner_k as u64, self.outer_s as u64);
        match self.method {
            Method::Sarah => s * (n + 2 * (k - 1)),
            Method::Svrg => s * (n + 2 * k),
            Method::Sgd => s * k,
        }
    }
}

/// `⌈x⌉`, ignoring a relative excess of up to `1e-9` caused by round-off in
/// the constants (so that `10·ℓ/μ` with `ℓ = 1000.0000000001` gives `10⁴`).
pub fn ceil_loose(x: f64) -> usize {
    let c = (x * (1.0 - 1e-9)).ceil();
    c.max(1.0) as usize
}

/// Step size `2/(9ℓ)` and inner length `⌈10ℓ/μ⌉` under which each SARAH
/// epoch halves the expected squared residual. The seed is left at 0 for the
/// caller to set.
pub fn theorem_preset<P: FiniteSumOperator + ?Sized>(problem: &P) -> SolverConfig {
    let (ell, mu) = (problem.ell(), problem.mu());
    SolverConfig::new(Method::Sarah, theorem_gamma(ell), ceil_loose(10.0 * ell / mu), 1, 0)
}

pub fn theorem_gamma(ell: f64) -> f64 {
    2.0 / (9.0 * ell)
}

/// Experiment preset: inner length `⌈ℓ/λ⌉` (with `λ = μ`), `S` large enough
/// to exhaust `budget`, checkpoints every `checkpoint_every` calls.
pub fn experiment_preset<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    method: Method,
    gamma: f64,
    budget: u64,
    checkpoint_every: u64,
    seed: u64,
) -> SolverConfig {
    let n = problem.n_components();
    let inner_k = match method {
        Method::Sarah | Method::Svrg => ceil_loose(problem.ell() / problem.mu()),
        Method::Sgd => n,
    };
    let mut cfg = SolverConfig::new(method, gamma, inner_k, 1, seed)
        .with_checkpoint_every(checkpoint_every)
        .with_budget(budget);
    let per_epoch = cfg.planned_calls(n).max(1);
    cfg.outer_s = (budget / per_epoch + 1) as usize;
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: u64,
    pub oracle_calls: u64,
    pub residual_sq: f64,
    /// `‖z − z*‖²`, NaN when the problem carries no exact solution.
    pub dist_sq: f64,
    pub elapsed_s: f64,
}

impl Checkpoint {
    /// Equality of every field except wall-clock time, bit for bit.
    pub fn same_values(&self, other: &Checkpoint) -> bool {
        self.epoch == other.epoch
            && self.oracle_calls == other.oracle_calls
            && self.residual_sq.to_bits() == other.residual_sq.to_bits()
            && self.dist_sq.to_bits() == other.dist_sq.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BudgetExhausted,
    Diverged { oracle_calls: u64, residual_sq: f64 },
    NonFinite { oracle_calls: u64 },
}

impl RunStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. } | RunStatus::NonFinite { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: SolverConfig,
    pub problem_hash: Option<String>,
    pub n_components: usize,
    pub initial_point: Point,
    pub final_point: Point,
    pub checkpoints: Vec<Checkpoint>,
    /// `‖F(z̃^s)‖²` for `s = 0, 1, …` (index 0 is the starting point).
    pub epoch_residual_sq: Vec<f64>,
    pub counter: OracleCounter,
    pub inner_norm_series: Option<Vec<f64>>,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn final_residual_sq(&self) -> f64 {
        self.checkpoints.last().map_or(f64::NAN, |c| c.residual_sq)
    }

    pub fn initial_residual_sq(&self) -> f64 {
        self.epoch_residual_sq.first().copied().unwrap_or(f64::NAN)
    }
}

/// Problems that can name themselves in run records.
pub trait Fingerprint {
    fn fingerprint(&self) -> Option<String> {
        None
    }
}

impl Fingerprint for crate::problems::FiniteSumProblem {
    fn fingerprint(&self) -> Option<String> {
        Some(self.hash().to_string())
    }
}

pub(crate) fn check_start<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    expected: Method,
    z0: &[f64],
) -> Result<()> {
    if config.method != expected {
        return Err(SolveError::MethodMismatch {
            expected,
            got: config.method,
        });
    }
    config.validate()?;
    if z0.len() != problem.dim() {
        return Err(ProblemError::Dimension {
            expected: problem.dim(),
            got: z0.len(),
        }
        .into());
    }
    if let Some(pos) = z0.iter().position(|x| !x.is_finite()) {
        return Err(ProblemError::NonFinite(pos).into());
    }
    Ok(())
}

/// Runs whichever method `config` names.
pub fn run<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    z0: &[f64],
) -> Result<RunRecord> {
    match config.method {
        Method::Sarah => run_sarah(problem, config, z0),
        Method::Svrg => run_svrg(problem, config, z0),
        Method::Sgd => run_sgd(problem, config, z0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub identical: bool,
    /// First checkpoint index whose values differ (or the shorter length when
    /// one series is a prefix of the other).
    pub first_divergence: Option<usize>,
    pub final_point_matches: bool,
}

/// Re-runs `record.config` from `record.initial_point` and compares the
/// outcome bit for bit (wall-clock fields excluded).
pub fn replay_check<P: FiniteSumOperator + Fingerprint + ?Sized>(
    record: &RunRecord,
    problem: &P,
) -> Result<ReplayReport> {
    let again = run(problem, &record.config, &record.initial_point)?;
    Ok(compare_records(record, &again))
}

pub fn compare_records(a: &RunRecord, b: &RunRecord) -> ReplayReport {
    let first_divergence = a
        .checkpoints
        .iter()
        .zip(&b.checkpoints)
        .position(|(x, y)| !x.same_values(y))
        .or_else(|| {
            (a.checkpoints.len() != b.checkpoints.len())
                .then(|| a.checkpoints.len().min(b.checkpoints.len()))
        });
    let final_point_matches = a.final_point.len() == b.final_point.len()
        && a
            .final_point
            .iter()
            .zip(b.final_point.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    ReplayReport {
        identical: first_divergence.is_none() && final_point_matches,
        first_divergence,
        final_point_matches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::identity_problem;

    #[test]
    fn preset_constants() {
        let p = identity_problem(1).unwrap();
        let c = theorem_preset(&p);
        assert_eq!(c.inner_k, 10);
        assert_eq!(c.gamma, 2.0 / 9.0);
        assert_eq!(c.method, Method::Sarah);
    }

    #[test]
    fn loose_ceiling() {
        assert_eq!(ceil_loose(90.0), 90);
        assert_eq!(ceil_loose(10_000.000_000_1), 10_000);
        assert_eq!(ceil_loose(10.5), 11);
        assert_eq!(ceil_loose(0.2), 1);
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::new(Method::Sarah, 0.1, 3, 2, 0);
        assert!(ok.validate().is_ok());
        assert!(SolverConfig { gamma: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { gamma: f64::NAN, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { inner_k: 0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { outer_s: 0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { checkpoint_every: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("SARAH".parse::<Method>().unwrap(), Method::Sarah);
        assert_eq!("sgd".parse::<Method>().unwrap(), Method::Sgd);
        assert!("adam".parse::<Method>().is_err());
    }

    #[test]
    fn planned_calls_match_counting_contract() {
        assert_eq!(SolverConfig::new(Method::Sarah, 1.0, 10, 3, 0).planned_calls(10), 84);
        assert_eq!(SolverConfig::new(Method::Svrg, 1.0, 5, 2, 0).planned_calls(4), 28);
        assert_eq!(SolverConfig::new(Method::Sgd, 1.0, 10, 10, 0).planned_calls(10), 100);
    }
}
