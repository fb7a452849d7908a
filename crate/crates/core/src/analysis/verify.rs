//! Monte-Carlo checks of the SARAH bounds.
//!
//! Expectations over the sampling randomness are estimated by cross-seed
//! means. Lemma-type bounds pass with a ×1.1 allowance for Monte-Carlo error;
//! the per-epoch contraction passes at 0.6 against the exact constant 0.5.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::linalg::norm_sq;
use crate::problems::FiniteSumOperator;
use crate::solvers::{
    ceil_loose, run_sarah, sarah_inner_trace, theorem_preset, Fingerprint,
    InnerTrace, Method, RunRecord, RunStatus, SolverConfig,
};

/// Multiplicative allowance on the lemma bounds.
pub const LEMMA_SLACK: f64 = 1.1;
/// Per-epoch contraction factor of the squared residual.
pub const THEOREM_BOUND: f64 = 0.5;
/// Pass threshold for estimated per-epoch ratios.
pub const THEOREM_THRESHOLD: f64 = 0.6;
/// Floor multiplier: an epoch is at the floor below `FLOOR_FACTOR·ε²·scale`.
const FLOOR_FACTOR: f64 = 1e3;

/// Residual level below which round-off dominates, for squared residuals of
/// size `scale`.
pub fn floor_threshold(scale: f64) -> f64 {
    FLOOR_FACTOR * f64::EPSILON * f64::EPSILON * scale
}

/// Scale of the round-off carried by a SARAH epoch ending near `z`: the
/// larger of the residual scale `max(‖F(z⁰)‖², ‖F(0)‖²)` and
/// `K·(1/n)Σᵢ‖F_i(z)‖²`, since the recursive direction accumulates one
/// rounding error of size `ε‖F_i‖` per inner step.
pub fn round_off_scale<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    z0: &[f64],
    z: &[f64],
    inner_k: usize,
) -> f64 {
    let dim = problem.dim();
    let mut f = vec![0.0; dim];
    problem.full_into(z0, &mut f);
    let r0 = norm_sq(&f);
    problem.full_into(&vec![0.0; dim], &mut f);
    let base = r0.max(norm_sq(&f));
    let n = problem.n_components();
    let components: f64 = (0..n)
        .map(|i| {
            problem.component_into(i, z, &mut f);
            norm_sq(&f)
        })
        .sum::<f64>()
        / n as f64;
    base.max(inner_k as f64 * components)
}

fn traces<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    gamma: f64,
    inner_k: usize,
    seeds: &[u64],
    z0: &[f64],
) -> Vec<InnerTrace> {
    seeds
        .par_iter()
        .map(|&s| sarah_inner_trace(problem, z0, gamma, inner_k, s))
        .collect()
}

fn check_trial_inputs<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    gamma: f64,
    inner_k: usize,
    seeds: &[u64],
    z0: &[f64],
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(AnalysisError::NoSeeds);
    }
    if !(gamma > 0.0) || inner_k < 1 {
        return Err(AnalysisError::Hypothesis(format!(
            "need gamma > 0 and K >= 1, got gamma = {gamma}, K = {inner_k}"
        )));
    }
    if z0.len() != problem.dim() {
        return Err(AnalysisError::Hypothesis(format!(
            "starting point has dimension {}, problem has {}",
            z0.len(),
            problem.dim()
        )));
    }
    let mut f = vec![0.0; problem.dim()];
    problem.full_into(z0, &mut f);
    let r0 = norm_sq(&f);
    if r0 == 0.0 {
        return Err(AnalysisError::Degenerate);
    }
    Ok(r0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub gamma: f64,
    pub inner_k: usize,
    pub seeds: Vec<u64>,
    pub initial_residual_sq: f64,
    /// Estimated `E‖v^k‖²`, `k = 0..=K`.
    pub mean_v_norm_sq: Vec<f64>,
    /// `E‖v^k‖² / ((1−γμ)^k ‖F(z⁰)‖²)`.
    pub ratios: Vec<f64>,
    pub max_violation_ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Estimates `E‖v^k‖²` along one inner loop and compares it with
/// `(1−γμ)^k ‖F(z⁰)‖²` for every `k ≤ K`. Requires `γ ≤ 1/ℓ`.
pub fn verify_lemma1<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    gamma: f64,
    inner_k: usize,
    seeds: &[u64],
    z0: &[f64],
) -> Result<Lemma1Report> {
    if gamma > 1.0 / problem.ell() {
        return Err(AnalysisError::Hypothesis(format!(
            "gamma = {gamma} exceeds 1/ell = {}",
            1.0 / problem.ell()
        )));
    }
    let r0 = check_trial_inputs(problem, gamma, inner_k, seeds, z0)?;
    let traces = traces(problem, gamma, inner_k, seeds, z0);
    let mut mean = vec![0.0; inner_k + 1];
    for t in &traces {
        mean.iter_mut().zip(&t.v_norm_sq).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= seeds.len() as f64);
    let q = 1.0 - gamma * problem.mu();
    let ratios: Vec<f64> = mean
        .iter()
        .enumerate()
        .map(|(k, m)| m / (q.powi(k as i32) * r0))
        .collect();
    let max_violation_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Lemma1Report {
        gamma,
        inner_k,
        seeds: seeds.to_vec(),
        initial_residual_sq: r0,
        mean_v_norm_sq: mean,
        ratios,
        max_violation_ratio,
        threshold: LEMMA_SLACK,
        passed: max_violation_ratio <= LEMMA_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub gamma: f64,
    pub inner_k: usize,
    pub seeds: Vec<u64>,
    pub initial_residual_sq: f64,
    /// Estimated `E‖F(z^K) − v^K‖²`.
    pub mean_drift_sq: f64,
    pub std_drift_sq: f64,
    /// `γℓ/(2−γℓ)`.
    pub bound_factor: f64,
    /// `mean_drift_sq / (bound_factor · ‖F(z⁰)‖²)`.
    pub ratio: f64,
    /// `mean_drift_sq / ‖F(z⁰)‖²`.
    pub relative_drift: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Estimates the gap `E‖F(z^K) − v^K‖²` between the recursive direction and
/// the true operator at the end of an inner loop and compares it with
/// `γℓ/(2−γℓ)·‖F(z⁰)‖²`. Requires `γ < 2/ℓ`.
pub fn verify_lemma2<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    gamma: f64,
    inner_k: usize,
    seeds: &[u64],
    z0: &[f64],
) -> Result<Lemma2Report> {
    let gl = gamma * problem.ell();
    if gl >= 2.0 {
        return Err(AnalysisError::Hypothesis(format!(
            "gamma * ell = {gl} must be below 2"
        )));
    }
    let r0 = check_trial_inputs(problem, gamma, inner_k, seeds, z0)?;
    let traces = traces(problem, gamma, inner_k, seeds, z0);
    let drifts: Vec<f64> = traces.iter().map(|t| t.drift_sq).collect();
    let mean = drifts.iter().sum::<f64>() / drifts.len() as f64;
    let std = if drifts.len() > 1 {
        (drifts.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (drifts.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let bound_factor = gl / (2.0 - gl);
    let ratio = mean / (bound_factor * r0);
    Ok(Lemma2Report {
        gamma,
        inner_k,
        seeds: seeds.to_vec(),
        initial_residual_sq: r0,
        mean_drift_sq: mean,
        std_drift_sq: std,
        bound_factor,
        ratio,
        relative_drift: mean / r0,
        threshold: LEMMA_SLACK,
        passed: ratio <= LEMMA_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub gamma: f64,
    pub inner_k: usize,
    pub outer_s: usize,
    pub seeds: Vec<u64>,
    /// Estimated `E‖F(z̃^s)‖²`, `s = 0..=S`.
    pub mean_epoch_residual_sq: Vec<f64>,
    /// `E‖F(z̃^s)‖² / E‖F(z̃^{s−1})‖²`, `s = 1..=S`.
    pub per_epoch_ratios: Vec<f64>,
    pub theorem_bound: f64,
    pub threshold: f64,
    /// First epoch whose mean residual is at the numeric floor.
    pub floor_epoch: Option<usize>,
    pub floor_level: f64,
    /// Largest ratio among epochs that end above the floor.
    pub max_pre_floor_ratio: f64,
    pub passed: bool,
}

/// Runs SARAH with the convergence preset over `seeds` for `outer_s` epochs
/// and estimates the per-epoch contraction of the squared residual.
pub fn verify_theorem1<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    seeds: &[u64],
    outer_s: usize,
    z0: &[f64],
) -> Result<ContractionReport> {
    let config = theorem_preset(problem).with_outer(outer_s);
    verify_theorem1_with(problem, &config, seeds, z0)
}

/// As [`verify_theorem1`], with an explicit config that must carry the
/// preset step size and inner length.
pub fn verify_theorem1_with<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    seeds: &[u64],
    z0: &[f64],
) -> Result<ContractionReport> {
    let preset = theorem_preset(problem);
    if config.method != Method::Sarah {
        return Err(AnalysisError::PresetMismatch(format!(
            "method must be SARAH, got {}",
            config.method
        )));
    }
    if (config.gamma - preset.gamma).abs() > 1e-12 * preset.gamma {
        return Err(AnalysisError::PresetMismatch(format!(
            "gamma must be 2/(9 ell) = {}, got {}",
            preset.gamma, config.gamma
        )));
    }
    if config.inner_k != preset.inner_k {
        return Err(AnalysisError::PresetMismatch(format!(
            "K must be ceil(10 ell/mu) = {}, got {}",
            preset.inner_k, config.inner_k
        )));
    }
    check_trial_inputs(problem, config.gamma, config.inner_k, seeds, z0)?;
    let mut f = vec![0.0; problem.dim()];
    problem.full_into(z0, &mut f);
    let r0 = norm_sq(&f);
    if r0 <= floor_threshold(round_off_scale(problem, z0, z0, 0)) {
        return Err(AnalysisError::Degenerate);
    }

    let base = SolverConfig {
        max_oracle_calls: None,
        record_inner_norms: false,
        record_timing: false,
        checkpoint_every: u64::MAX,
        ..config.clone()
    };
    let records: Vec<RunRecord> = seeds
        .par_iter()
        .map(|&s| run_sarah(problem, &base.clone().with_seed(s), z0))
        .collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = records.iter().find(|r| r.status.is_failure()) {
        log::warn!("seed {} stopped early: {:?}", bad.config.seed, bad.status);
    }

    let epochs = records
        .iter()
        .map(|r| r.epoch_residual_sq.len())
        .min()
        .unwrap_or(0);
    let mean: Vec<f64> = (0..epochs)
        .map(|s| records.iter().map(|r| r.epoch_residual_sq[s]).sum::<f64>() / records.len() as f64)
        .collect();
    let per_epoch_ratios: Vec<f64> = mean.windows(2).map(|w| w[1] / w[0]).collect();
    let floor_level = floor_threshold(round_off_scale(problem, z0, &records[0].final_point, config.inner_k));
    let floor_epoch = mean.iter().position(|&m| m < floor_level);
    let considered = floor_epoch.map_or(per_epoch_ratios.len(), |e| e.saturating_sub(1));
    let max_pre_floor_ratio = per_epoch_ratios[..considered]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let all_completed = records.iter().all(|r| r.status == RunStatus::Completed);
    Ok(ContractionReport {
        gamma: config.gamma,
        inner_k: config.inner_k,
        outer_s: config.outer_s,
        seeds: seeds.to_vec(),
        mean_epoch_residual_sq: mean,
        per_epoch_ratios,
        theorem_bound: THEOREM_BOUND,
        threshold: THEOREM_THRESHOLD,
        floor_epoch,
        floor_level,
        max_pre_floor_ratio,
        passed: all_completed && considered > 0 && max_pre_floor_ratio <= THEOREM_THRESHOLD,
    })
}

/// Epochs a theorem-preset SARAH run from `z0` with `seed` needs before its
/// residual drops below the numeric floor, capped at `max_epochs`.
pub fn epochs_to_floor<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    z0: &[f64],
    seed: u64,
    max_epochs: usize,
) -> Result<usize> {
    let mut s = 8.min(max_epochs).max(1);
    loop {
        let cfg = SolverConfig {
            checkpoint_every: u64::MAX,
            ..theorem_preset(problem).with_seed(seed).with_outer(s)
        };
        let r = run_sarah(problem, &cfg, z0)?;
        let floor = floor_threshold(round_off_scale(problem, z0, &r.final_point, cfg.inner_k));
        if let Some(e) = r.epoch_residual_sq.iter().position(|&x| x < floor) {
            return Ok(e);
        }
        if s >= max_epochs || r.status.is_failure() {
            return Ok(s);
        }
        s = (2 * s).min(max_epochs);
    }
}

/// Outer epochs needed to go from `initial_sq` to `eps²` when every epoch
/// halves the squared residual: `⌈log₂(initial_sq/ε²)⌉`.
pub fn epochs_needed(initial_sq: f64, eps: f64) -> u64 {
    let l = (initial_sq / (eps * eps)).log2();
    if l <= 0.0 {
        0
    } else {
        l.ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub epsilon: f64,
    pub initial_residual_sq: f64,
    pub epochs_needed: u64,
    /// `(n + 2(⌈10ℓ/μ⌉−1)) · ⌈log₂(‖F(z⁰)‖²/ε²)⌉`.
    pub predicted_calls: u64,
    /// First checkpoint at which `‖F‖² ≤ ε²`.
    pub actual_calls: Option<u64>,
    /// `actual / predicted`.
    pub ratio: Option<f64>,
    pub reachable: bool,
    /// Calls recorded by the run's counter.
    pub counted_calls: u64,
    /// `S·(n + 2(K−1))` for the configured run.
    pub expected_total_calls: u64,
    pub count_matches: bool,
}

/// Compares the oracle complexity predicted for the convergence preset with
/// what a SARAH record actually spent to reach `‖F‖² ≤ ε²`.
pub fn complexity_audit<P: FiniteSumOperator + ?Sized>(
    record: &RunRecord,
    problem: &P,
    epsilon: f64,
) -> Result<ComplexityReport> {
    if record.config.method != Method::Sarah {
        return Err(AnalysisError::PresetMismatch(format!(
            "complexity audit needs a SARAH record, got {}",
            record.config.method
        )));
    }
    if !(epsilon > 0.0) {
        return Err(AnalysisError::Hypothesis(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = problem.n_components() as u64;
    let k = ceil_loose(10.0 * problem.ell() / problem.mu()) as u64;
    let initial = record
        .checkpoints
        .first()
        .map_or(f64::NAN, |c| c.residual_sq);
    let epochs = epochs_needed(initial, epsilon);
    let predicted_calls = (n + 2 * (k - 1)) * epochs;
    let target = epsilon * epsilon;
    let actual_calls = record
        .checkpoints
        .iter()
        .find(|c| c.residual_sq <= target)
        .map(|c| c.oracle_calls);
    let expected_total_calls = record.config.planned_calls(problem.n_components());
    let counted_calls = record.counter.component_calls;
    let count_matches = match record.status {
        RunStatus::Completed => counted_calls == expected_total_calls,
        _ => counted_calls <= expected_total_calls,
    };
    Ok(ComplexityReport {
        epsilon,
        initial_residual_sq: initial,
        epochs_needed: epochs,
        predicted_calls,
        actual_calls,
        ratio: actual_calls.map(|a| a as f64 / predicted_calls.max(1) as f64),
        reachable: actual_calls.is_some(),
        counted_calls,
        expected_total_calls,
        count_matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::identity_problem;

    #[test]
    fn halving_epochs() {
        assert_eq!(epochs_needed(1.0, 2f64.powi(-5)), 10);
        assert_eq!(epochs_needed(1.0, 2.0), 0);
    }

    #[test]
    fn lemma1_scalar_geometric_decay() {
        let p = identity_problem(1).unwrap();
        let r = verify_lemma1(&p, 0.5, 6, &[1, 2], &[1.0, 1.0]).unwrap();
        assert_eq!(r.ratios[0], 1.0);
        for (k, ratio) in r.ratios.iter().enumerate() {
            // (1/4)^k / (1/2)^k
            assert!((ratio - 0.5f64.powi(k as i32)).abs() < 1e-15);
        }
        assert!(r.passed);
    }

    #[test]
    fn lemma_hypotheses_enforced() {
        let p = identity_problem(1).unwrap();
        assert!(matches!(
            verify_lemma1(&p, 1.5, 3, &[1], &[1.0, 1.0]),
            Err(AnalysisError::Hypothesis(_))
        ));
        assert!(matches!(
            verify_lemma2(&p, 2.0, 3, &[1], &[1.0, 1.0]),
            Err(AnalysisError::Hypothesis(_))
        ));
        assert!(matches!(
            verify_lemma1(&p, 0.5, 3, &[], &[1.0, 1.0]),
            Err(AnalysisError::NoSeeds)
        ));
        assert!(matches!(
            verify_lemma1(&p, 0.5, 3, &[1], &[0.0, 0.0]),
            Err(AnalysisError::Degenerate)
        ));
    }

    #[test]
    fn theorem_scalar_closed_form() {
        let p = identity_problem(1).unwrap();
        let r = verify_theorem1(&p, &[1, 2, 3], 4, &[1.0, -1.0]).unwrap();
        let expected = (1.0 - 2.0 / 9.0f64).powi(20);
        for ratio in &r.per_epoch_ratios {
            assert!((ratio - expected).abs() < 1e-12 * expected);
        }
        assert!(r.passed);
        assert!(expected < THEOREM_BOUND);
    }

    #[test]
    fn theorem_rejects_non_preset_and_degenerate() {
        let p = identity_problem(1).unwrap();
        let cfg = SolverConfig::new(Method::Sarah, 1.0, 10, 2, 0);
        assert!(matches!(
            verify_theorem1_with(&p, &cfg, &[1], &[1.0, 1.0]),
            Err(AnalysisError::PresetMismatch(_))
        ));
        assert!(matches!(
            verify_theorem1(&p, &[1], 2, &[0.0, 0.0]),
            Err(AnalysisError::Degenerate)
        ));
    }
}
