use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Regime};
use super::output::{remove_quietly, write_regime_outputs};
use super::plot::emit_plot;
use super::{HarnessError, Result};
use crate::analysis::{aggregate, AggregateStats};
use crate::problems::{generate_bilinear, FiniteSumOperator, FiniteSumProblem};
use crate::solvers::{experiment_preset, run, Fingerprint, Method, RunRecord};

/// Default step-size candidates in units of `1/ℓ`.
pub fn default_gamma_grid(method: Method) -> &'static [f64] {
    match method {
        Method::Sarah | Method::Svrg => &[2.0 / 9.0, 0.5, 1.0, 2.0],
        Method::Sgd => &[0.01, 0.1, 0.5, 1.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub gamma: f64,
    /// Mean final `‖F‖²` over the tuning seeds; `None` when a run diverged.
    pub mean_final_residual_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub method: Method,
    pub best_gamma: f64,
    pub candidates: Vec<GridCandidate>,
}

/// Relative gap below which two candidates count as tied.
const TIE_TOL: f64 = 1e-12;

/// Picks the step with the smallest mean final residual after `budget`
/// calls. Candidates whose runs diverge are dropped and ties go to the
/// smaller step.
pub fn grid_search<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    method: Method,
    budget: u64,
    checkpoint_every: u64,
    seeds: &[u64],
    gamma_grid: &[f64],
    z0: &[f64],
) -> Result<GridSearch> {
    if gamma_grid.is_empty() {
        return Err(HarnessError::config("gamma_grid", None, "must not be empty".into()));
    }
    if seeds.is_empty() {
        return Err(HarnessError::config("seeds", None, "at least one seed is required".into()));
    }
    let seeds = if gamma_grid.len() == 1 { &seeds[..1] } else { seeds };
    let jobs: Vec<(f64, u64)> = gamma_grid
        .iter()
        .flat_map(|&g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    let finals: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(g, s)| {
            let cfg = experiment_preset(problem, method, g, budget, checkpoint_every, s);
            let r = run(problem, &cfg, z0)?;
            let f = r.final_residual_sq();
            Ok((!r.status.is_failure() && f.is_finite()).then_some(f))
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<GridCandidate> = gamma_grid
        .iter()
        .zip(finals.chunks(seeds.len()))
        .map(|(&gamma, runs)| GridCandidate {
            gamma,
            mean_final_residual_sq: runs
                .iter()
                .copied()
                .sum::<Option<f64>>()
                .map(|s| s / runs.len() as f64),
        })
        .collect();

    let mut order: Vec<&GridCandidate> = candidates.iter().collect();
    order.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    let mut best: Option<(f64, f64)> = None;
    for c in order {
        if let Some(m) = c.mean_final_residual_sq {
            match best {
                Some((_, bm)) if m >= bm * (1.0 - TIE_TOL) => {}
                _ => best = Some((c.gamma, m)),
            }
        }
    }
    let (best_gamma, _) = best.ok_or(HarnessError::AllDiverged { method })?;
    Ok(GridSearch {
        method,
        best_gamma,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSeries {
    pub method: Method,
    pub gamma: f64,
    pub inner_k: usize,
    pub outer_s: usize,
    pub tuning: Vec<GridCandidate>,
    /// Cross-seed statistics on the table's grid.
    pub stats: AggregateStats,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

/// Per-method curves of one problem instance on a shared oracle-call grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub regime: Option<Regime>,
    pub problem_hash: String,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub ell: f64,
    pub mu: f64,
    pub oracle_budget: u64,
    pub checkpoint_every: u64,
    pub seeds: Vec<u64>,
    pub grid: Vec<u64>,
    pub series: Vec<MethodSeries>,
}

impl ComparisonTable {
    pub fn series(&self, method: Method) -> Option<&MethodSeries> {
        self.series.iter().find(|s| s.method == method)
    }

    pub fn final_mean(&self, method: Method) -> Option<f64> {
        self.series(method).map(|s| s.stats.final_mean_residual_sq())
    }
}

/// Multiples of `every` up to `budget`, closed by `budget` itself.
pub(crate) fn common_grid(budget: u64, every: u64) -> Vec<u64> {
    let mut g: Vec<u64> = (0..=budget / every).map(|k| k * every).collect();
    if budget % every != 0 {
        g.push(budget);
    }
    g
}

/// Tunes and runs every configured method on an already generated problem.
pub fn compare_methods(
    problem: &FiniteSumProblem,
    config: &ExperimentConfig,
    regime: Option<Regime>,
    budget: u64,
    checkpoint_every: u64,
) -> Result<ComparisonTable> {
    let z0 = vec![0.0; problem.dim()];
    let grid = common_grid(budget, checkpoint_every);
    let mut series = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let multipliers: Vec<f64> = config
            .gamma_grid
            .clone()
            .unwrap_or_else(|| default_gamma_grid(method).to_vec());
        let gammas: Vec<f64> = multipliers.iter().map(|c| c / problem.ell()).collect();
        let search = grid_search(
            problem,
            method,
            budget,
            checkpoint_every,
            config.tuning_seeds(),
            &gammas,
            &z0,
        )?;
        info!("{method}: tuned step {:.4e}", search.best_gamma);
        let records: Vec<RunRecord> = config
            .seeds
            .par_iter()
            .map(|&s| {
                let mut cfg = experiment_preset(problem, method, search.best_gamma, budget, checkpoint_every, s);
                cfg.record_timing = config.record_timing;
                run(problem, &cfg, &z0)
            })
            .collect::<std::result::Result<_, _>>()?;
        let stats = aggregate(&records)?.aligned(&grid);
        series.push(MethodSeries {
            method,
            gamma: search.best_gamma,
            inner_k: records[0].config.inner_k,
            outer_s: records[0].config.outer_s,
            tuning: search.candidates,
            stats,
            records,
        });
    }
    Ok(ComparisonTable {
        regime,
        problem_hash: problem.hash().to_string(),
        n: problem.n_components(),
        d: problem.d(),
        lambda: problem.lambda(),
        ell: problem.ell(),
        mu: problem.mu(),
        oracle_budget: budget,
        checkpoint_every,
        seeds: config.seeds.clone(),
        grid,
        series,
    })
}

/// Generates the regime's instance and compares the configured methods
/// without writing anything.
pub fn run_regime(config: &ExperimentConfig, regime: Regime) -> Result<ComparisonTable> {
    let problem = generate_bilinear(&config.generator_spec(regime))?;
    info!(
        "{regime}: n = {}, d = {}, ell = {:.4e}, problem {}",
        problem.n_components(),
        problem.d(),
        problem.ell(),
        &problem.hash()[..12]
    );
    compare_methods(
        &problem,
        config,
        Some(regime),
        config.budget(regime),
        config.checkpoint_every(regime),
    )
}

/// Runs every configured regime and writes, under `config.output_dir`, one
/// directory of CSVs per regime plus `figure_<regime>.svg`. Outputs of a
/// regime that fails part-way are removed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ComparisonTable>> {
    config.validate()?;
    let root = &config.output_dir;
    std::fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
    let mut tables = Vec::with_capacity(config.regimes.len());
    for &regime in &config.regimes {
        let table = run_regime(config, regime)?;
        write_regime(&table, root, regime)?;
        tables.push(table);
    }
    Ok(tables)
}

fn write_regime(table: &ComparisonTable, root: &Path, regime: Regime) -> Result<()> {
    let dir = root.join(regime.as_str());
    write_regime_outputs(table, &dir)?;
    let figure = root.join(format!("figure_{regime}.svg"));
    let staged = root.join(format!(".figure_{regime}.svg.partial"));
    let res = emit_plot(table, &staged)
        .and_then(|_| std::fs::rename(&staged, &figure).map_err(|e| HarnessError::io(&figure, e)));
    if res.is_err() {
        remove_quietly(&staged);
        remove_quietly(&dir);
    }
    res
}
