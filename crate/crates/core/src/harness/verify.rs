use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Regime};
use super::{HarnessError, Result};
use crate::analysis::{
    complexity_audit, epochs_to_floor, verify_lemma1, verify_lemma2, verify_theorem1_with,
    AnalysisError, LEMMA_SLACK, THEOREM_THRESHOLD,
};
use crate::linalg::{norm_sq, spectral_norm, LinalgError, SPECTRAL_TOL};
use crate::problems::{
    check_cocoercivity, check_strong_monotonicity, generate_bilinear, FiniteSumOperator,
    FiniteSumProblem, CHECK_SLACK,
};
use crate::solvers::{run_sarah, theorem_preset, SolverConfig};

/// Upper bound on epochs spent looking for the numeric floor.
const MAX_FLOOR_EPOCHS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub regime: Option<Regime>,
    pub check: String,
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
    /// Informational rows are reported but do not affect the verdict.
    pub gating: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
    pub seeds: Vec<u64>,
    pub passed: bool,
}

impl VerifyReport {
    fn from_rows(rows: Vec<CheckRow>, seeds: Vec<u64>) -> Self {
        let passed = rows.iter().all(|r| r.passed || !r.gating);
        Self { rows, seeds, passed }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| r.gating && !r.passed)
    }

    /// Plain-text pass/fail table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:<36} {:>13} {:>13}  {}",
            "regime", "check", "measured", "bound", "result"
        );
        for r in &self.rows {
            let verdict = match (r.gating, r.passed) {
                (false, _) => "info",
                (true, true) => "PASS",
                (true, false) => "FAIL",
            };
            let regime = r.regime.map_or("-", |g| g.as_str());
            let _ = writeln!(
                out,
                "{:<8} {:<36} {:>13.6e} {:>13.6e}  {}",
                regime, r.check, r.measured, r.bound, verdict
            );
        }
        let _ = writeln!(out, "overall: {}", if self.passed { "PASS" } else { "FAIL" });
        out
    }
}

/// Cocoercivity constant of one bilinear component, `λ + ‖A_i‖₂²/λ`.
fn component_ell(problem: &FiniteSumProblem, i: usize) -> Result<f64> {
    let c = &problem.components()[i];
    let s = match spectral_norm(c.matrix(), SPECTRAL_TOL) {
        Ok(s) => s,
        Err(LinalgError::ZeroMatrix) => 0.0,
        Err(e) => return Err(crate::problems::ProblemError::from(e).into()),
    };
    // The power iteration stops at a relative residual of SPECTRAL_TOL, so
    // widen slightly to stay an upper bound.
    Ok(c.lambda() + (s * (1.0 + SPECTRAL_TOL)).powi(2) / c.lambda())
}

/// Runs the assumption checkers and every bound check on one problem.
pub fn verify_problem(
    problem: &FiniteSumProblem,
    config: &ExperimentConfig,
    regime: Option<Regime>,
) -> Result<Vec<CheckRow>> {
    let row = |check: &str, measured: f64, bound: f64, passed: bool, detail: String| CheckRow {
        regime,
        check: check.to_string(),
        measured,
        bound,
        passed,
        gating: true,
        detail,
    };
    let mut rows = Vec::new();
    let dim = problem.dim();
    let z0 = vec![0.0; dim];
    let seeds: Vec<u64> = (0..config.verify_seeds as u64).collect();
    let check_seed = config.generator_seed;

    let mono = check_strong_monotonicity(problem, problem.mu(), config.verify_trials, check_seed)?;
    rows.push(row(
        "strong monotonicity (mu)",
        mono.min_ratio,
        1.0 - CHECK_SLACK,
        mono.passed(),
        format!(
            "{} pairs, ratio range [{:.12}, {:.12}], {} violations",
            mono.trials, mono.min_ratio, mono.max_ratio, mono.violations
        ),
    ));

    if let Some(sol) = problem.exact_solution() {
        let r = problem.residual_sq(sol).sqrt();
        let tol = problem.solution_tolerance();
        rows.push(row("exact solution residual", r, tol, r <= tol, "||F(z*)||".into()));
    }

    let n = problem.n_components();
    let per_component = (config.verify_trials / n).max(1);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_scale = 0.0f64;
    let mut violations = 0;
    for i in 0..n {
        let ell_i = component_ell(problem, i)?;
        worst_scale = worst_scale.max(ell_i / problem.ell());
        let rep = check_cocoercivity(problem, i, ell_i, per_component, check_seed.wrapping_add(i as u64))?;
        worst = worst.max(rep.worst_ratio);
        violations += rep.violations;
    }
    rows.push(row(
        "component cocoercivity (own ell_i)",
        worst,
        1.0 + CHECK_SLACK,
        violations == 0,
        format!("{n} components x {per_component} pairs, {violations} violations"),
    ));
    rows.push(CheckRow {
        gating: false,
        passed: worst_scale <= 1.0 + CHECK_SLACK,
        ..row(
            "max_i ell_i / ell",
            worst_scale,
            1.0,
            true,
            "per-component constant relative to the aggregate ell".into(),
        )
    });

    let preset = theorem_preset(problem);
    let (gamma, k) = (preset.gamma, preset.inner_k);
    info!("lemma checks: gamma = {gamma:.4e}, K = {k}, {} seeds", seeds.len());
    let l1 = verify_lemma1(problem, gamma, k, &seeds, &z0)?;
    rows.push(row(
        "lemma 1: E|v^k|^2 / bound",
        l1.max_violation_ratio,
        LEMMA_SLACK,
        l1.passed,
        format!("max over k = 0..={k}"),
    ));
    let l2 = verify_lemma2(problem, gamma, k, &seeds, &z0)?;
    rows.push(row(
        "lemma 2: E|F(z^K)-v^K|^2 / bound",
        l2.ratio,
        LEMMA_SLACK,
        l2.passed,
        format!(
            "bound factor {:.6}, relative drift {:.4e} (std {:.3e})",
            l2.bound_factor,
            l2.relative_drift,
            l2.std_drift_sq / l2.initial_residual_sq
        ),
    ));

    let mut config_t = preset.clone();
    if let Some(c) = config.theorem_gamma {
        config_t.gamma = c / problem.ell();
    }
    // Reject a non-preset step before spending any runs on the pilot.
    verify_theorem1_with(problem, &config_t, &seeds[..1], &z0).map(|_| ()).or_else(|e| match e {
        AnalysisError::PresetMismatch(_) => Err(e),
        _ => Ok(()),
    })?;
    let pilot = epochs_to_floor(problem, &z0, seeds[0], MAX_FLOOR_EPOCHS)?;
    let outer_s = (pilot + 2).min(MAX_FLOOR_EPOCHS);
    info!("contraction check: {outer_s} epochs");
    let th = verify_theorem1_with(problem, &config_t.with_outer(outer_s), &seeds, &z0)?;
    rows.push(row(
        "theorem 1: max pre-floor epoch ratio",
        th.max_pre_floor_ratio,
        THEOREM_THRESHOLD,
        th.passed,
        format!(
            "{} epochs, floor reached at {:?}",
            th.per_epoch_ratios.len(),
            th.floor_epoch
        ),
    ));

    let mut f = vec![0.0; dim];
    problem.full_into(&z0, &mut f);
    let epsilon = config.epsilon * norm_sq(&f).sqrt();
    let per_epoch = (n + 2 * (k - 1)) as u64;
    let audit_cfg = SolverConfig {
        checkpoint_every: (per_epoch / 20).max(1),
        ..preset.with_seed(seeds[0]).with_outer(outer_s)
    };
    let record = run_sarah(problem, &audit_cfg, &z0)?;
    let audit = complexity_audit(&record, problem, epsilon)?;
    let within = audit.actual_calls.is_some_and(|a| a <= audit.predicted_calls);
    rows.push(row(
        "complexity: actual / predicted calls",
        audit.ratio.unwrap_or(f64::INFINITY),
        1.0,
        audit.reachable && audit.count_matches && within,
        format!(
            "predicted {}, actual {:?}, counter {} of {} expected",
            audit.predicted_calls, audit.actual_calls, audit.counted_calls, audit.expected_total_calls
        ),
    ));
    Ok(rows)
}

pub fn verify_regime(config: &ExperimentConfig, regime: Regime) -> Result<Vec<CheckRow>> {
    let problem = generate_bilinear(&config.generator_spec(regime))?;
    verify_problem(&problem, config, Some(regime))
}

/// Runs the verification suite for every configured regime, prints the
/// table and writes `verify_report.json` under the output directory.
pub fn verify_cli(config: &ExperimentConfig) -> Result<VerifyReport> {
    config.validate()?;
    let mut rows = Vec::new();
    for &regime in &config.regimes {
        rows.extend(verify_regime(config, regime)?);
    }
    let report = VerifyReport::from_rows(rows, (0..config.verify_seeds as u64).collect());
    print!("{}", report.table());
    for f in report.failures() {
        eprintln!(
            "failed: {} measured {:.6e} against bound {:.6e} ({})",
            f.check, f.measured, f.bound, f.detail
        );
    }
    write_report(&report, &config.output_dir)?;
    Ok(report)
}

fn write_report(report: &VerifyReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join("verify_report.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| HarnessError::format(&path, e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::GeneratorSpec;

    #[test]
    fn scalar_problem_passes_quickly() {
        let p = generate_bilinear(&GeneratorSpec::new(1, 1, 1.0, 100.0, 5)).unwrap();
        let config = ExperimentConfig {
            n: 1,
            d: 1,
            verify_seeds: 4,
            verify_trials: 200,
            ..ExperimentConfig::default()
        };
        let t = std::time::Instant::now();
        let rows = verify_problem(&p, &config, None).unwrap();
        let report = VerifyReport::from_rows(rows, vec![]);
        assert!(report.passed, "{}", report.table());
        assert!(t.elapsed().as_secs_f64() < 1.0);
    }

    #[test]
    fn non_preset_theorem_step_rejected() {
        let p = generate_bilinear(&GeneratorSpec::new(1, 1, 1.0, 100.0, 5)).unwrap();
        let config = ExperimentConfig {
            verify_seeds: 2,
            verify_trials: 10,
            theorem_gamma: Some(1.0),
            ..ExperimentConfig::default()
        };
        let err = verify_problem(&p, &config, None).unwrap_err();
        assert!(matches!(err, HarnessError::Analysis(AnalysisError::PresetMismatch(_))));
        assert_eq!(err.exit_code(), 2);
    }
}
