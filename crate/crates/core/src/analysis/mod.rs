//! Cross-seed aggregation of run records and empirical checks of the SARAH
//! convergence bounds.

mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solvers::{Method, RunRecord, SolveError};

pub use verify::{
    complexity_audit, epochs_needed, epochs_to_floor, floor_threshold, round_off_scale, verify_lemma1, verify_lemma2,
    verify_theorem1, verify_theorem1_with, ComplexityReport, ContractionReport, Lemma1Report,
    Lemma2Report, LEMMA_SLACK, THEOREM_BOUND, THEOREM_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no records to aggregate")]
    Empty,
    #[error("records are not homogeneous: {0}")]
    Heterogeneous(String),
    #[error("outside the bound's hypothesis: {0}")]
    Hypothesis(String),
    #[error("degenerate input: initial residual is already at the numeric floor")]
    Degenerate,
    #[error("config does not match the convergence preset: {0}")]
    PresetMismatch(String),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// Pointwise cross-seed statistics of a set of homogeneous runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub method: Method,
    pub gamma: f64,
    pub inner_k: usize,
    pub outer_s: usize,
    pub problem_hash: Option<String>,
    pub grid: Vec<u64>,
    pub mean_residual_sq: Vec<f64>,
    /// Sample standard deviation (`n − 1` denominator); zero for one seed.
    pub std_residual_sq: Vec<f64>,
    pub mean_dist_sq: Vec<f64>,
    pub n_seeds: usize,
}

impl AggregateStats {
    pub fn final_mean_residual_sq(&self) -> f64 {
        self.mean_residual_sq.last().copied().unwrap_or(f64::NAN)
    }

    /// Re-samples the series onto `grid` by carrying the last observation
    /// forward. Grid points before the first observation take the first value.
    pub fn aligned(&self, grid: &[u64]) -> AggregateStats {
        let idx = locf_indices(&self.grid, grid);
        let pick = |s: &[f64]| idx.iter().map(|&i| s[i]).collect::<Vec<_>>();
        AggregateStats {
            grid: grid.to_vec(),
            mean_residual_sq: pick(&self.mean_residual_sq),
            std_residual_sq: pick(&self.std_residual_sq),
            mean_dist_sq: pick(&self.mean_dist_sq),
            ..self.clone()
        }
    }
}

/// For each target, the index of the last source point `≤ target`.
fn locf_indices(source: &[u64], targets: &[u64]) -> Vec<usize> {
    targets
        .iter()
        .map(|&t| source.partition_point(|&s| s <= t).saturating_sub(1))
        .collect()
}

/// Mean over values in a canonical order, so that the result does not depend
/// on the order of the records.
fn canonical_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Cross-seed mean and sample standard deviation of residual and distance.
///
/// Records must share method, step size, loop lengths and problem. Series
/// are aligned on the union of their checkpoint positions by carrying the
/// last observation forward, which is the identity when all runs
/// checkpointed at the same oracle counts.
pub fn aggregate(records: &[RunRecord]) -> Result<AggregateStats> {
    let first = records.first().ok_or(AnalysisError::Empty)?;
    let c0 = &first.config;
    for r in &records[1..] {
        let c = &r.config;
        let mismatch = if c.method != c0.method {
            Some("method")
        } else if c.gamma.to_bits() != c0.gamma.to_bits() {
            Some("gamma")
        } else if c.inner_k != c0.inner_k {
            Some("inner_k")
        } else if c.outer_s != c0.outer_s {
            Some("outer_s")
        } else if r.problem_hash != first.problem_hash {
            Some("problem hash")
        } else {
            None
        };
        if let Some(field) = mismatch {
            return Err(AnalysisError::Heterogeneous(format!("{field} differs")));
        }
    }

    let mut grid: Vec<u64> = records
        .iter()
        .flat_map(|r| r.checkpoints.iter().map(|c| c.oracle_calls))
        .collect();
    grid.sort_unstable();
    grid.dedup();

    let aligned: Vec<Vec<usize>> = records
        .iter()
        .map(|r| {
            let calls: Vec<u64> = r.checkpoints.iter().map(|c| c.oracle_calls).collect();
            locf_indices(&calls, &grid)
        })
        .collect();

    let mut mean_residual_sq = Vec::with_capacity(grid.len());
    let mut std_residual_sq = Vec::with_capacity(grid.len());
    let mut mean_dist_sq = Vec::with_capacity(grid.len());
    let mut res = vec![0.0; records.len()];
    let mut dist = vec![0.0; records.len()];
    for g in 0..grid.len() {
        for (j, (r, idx)) in records.iter().zip(&aligned).enumerate() {
            let cp = &r.checkpoints[idx[g]];
            res[j] = cp.residual_sq;
            dist[j] = cp.dist_sq;
        }
        let m = canonical_mean(&mut res);
        std_residual_sq.push(sample_std(&res, m));
        mean_residual_sq.push(m);
        mean_dist_sq.push(canonical_mean(&mut dist));
    }

    Ok(AggregateStats {
        method: c0.method,
        gamma: c0.gamma,
        inner_k: c0.inner_k,
        outer_s: c0.outer_s,
        problem_hash: first.problem_hash.clone(),
        grid,
        mean_residual_sq,
        std_residual_sq,
        mean_dist_sq,
        n_seeds: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{identity_problem, OracleCounter, Point};
    use crate::solvers::{run_sarah, Checkpoint, RunStatus, SolverConfig};

    fn fake(residuals: &[(u64, f64)]) -> RunRecord {
        RunRecord {
            config: SolverConfig::new(Method::Sarah, 0.1, 2, 1, 0),
            problem_hash: Some("h".into()),
            n_components: 1,
            initial_point: Point::zeros(2),
            final_point: Point::zeros(2),
            checkpoints: residuals
                .iter()
                .map(|&(c, r)| Checkpoint {
                    epoch: 0,
                    oracle_calls: c,
                    residual_sq: r,
                    dist_sq: r,
                    elapsed_s: 0.0,
                })
                .collect(),
            epoch_residual_sq: vec![],
            counter: OracleCounter::default(),
            inner_norm_series: None,
            status: RunStatus::Completed,
        }
    }

    #[test]
    fn identical_records_have_zero_spread() {
        let p = identity_problem(1).unwrap();
        let cfg = SolverConfig::new(Method::Sarah, 0.3, 4, 3, 0);
        let r = run_sarah(&p, &cfg, &[1.0, -2.0]).unwrap();
        let s = aggregate(&[r.clone(), r.clone()]).unwrap();
        assert_eq!(s.n_seeds, 2);
        for (g, cp) in r.checkpoints.iter().enumerate() {
            assert_eq!(s.mean_residual_sq[g], cp.residual_sq);
            assert_eq!(s.std_residual_sq[g], 0.0);
        }
    }

    #[test]
    fn two_point_statistics() {
        let s = aggregate(&[fake(&[(0, 1.0)]), fake(&[(0, 3.0)])]).unwrap();
        assert_eq!(s.mean_residual_sq, vec![2.0]);
        assert!((s.std_residual_sq[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn carries_last_observation_forward() {
        let s = aggregate(&[fake(&[(0, 4.0), (10, 2.0)]), fake(&[(0, 4.0), (5, 1.0)])]).unwrap();
        assert_eq!(s.grid, vec![0, 5, 10]);
        assert_eq!(s.mean_residual_sq, vec![4.0, 2.5, 1.5]);
        let a = s.aligned(&[0, 3, 7, 12]);
        assert_eq!(a.mean_residual_sq, vec![4.0, 4.0, 2.5, 1.5]);
    }

    #[test]
    fn rejects_empty_and_heterogeneous() {
        assert!(matches!(aggregate(&[]), Err(AnalysisError::Empty)));
        let a = fake(&[(0, 1.0)]);
        let mut b = fake(&[(0, 1.0)]);
        b.config.gamma = 0.2;
        assert!(matches!(aggregate(&[a.clone(), b]), Err(AnalysisError::Heterogeneous(_))));
        let mut c = fake(&[(0, 1.0)]);
        c.problem_hash = Some("other".into());
        assert!(matches!(aggregate(&[a, c]), Err(AnalysisError::Heterogeneous(_))));
    }
}
