//! CSV and JSON artifacts of an experiment.
//!
//! Layout of one regime directory:
//!
//! ```text
//! manifest.json
//! aggregate_<method>.csv     oracle_calls,mean_residual_sq,std_residual_sq,mean_dist_sq
//! runs/<method>_seed<s>.csv  epoch,oracle_calls,residual_sq,dist_sq,elapsed_s
//! runs/<method>_seed<s>.json
//! ```
//!
//! Reals are written in shortest round-trip form, so the files are
//! byte-identical across repeated runs of one config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Regime;
use super::experiment::{ComparisonTable, GridCandidate, MethodSeries};
use super::{HarnessError, Result};
use crate::analysis::AggregateStats;
use crate::solvers::{Method, RunRecord, RunStatus};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const RUN_HEADER: [&str; 5] = ["epoch", "oracle_calls", "residual_sq", "dist_sq", "elapsed_s"];
const AGGREGATE_HEADER: [&str; 4] = ["oracle_calls", "mean_residual_sq", "std_residual_sq", "mean_dist_sq"];

fn real(x: f64) -> String {
    format!("{x:e}")
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::format(path, e.to_string())
}

/// Sidecar of one run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub method: Method,
    pub gamma: f64,
    pub inner_k: usize,
    pub outer_s: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub oracle_budget: Option<u64>,
    pub problem_hash: Option<String>,
    pub status: RunStatus,
    pub oracle_calls: u64,
    pub full_passes: u64,
}

impl RunMetadata {
    pub fn of(record: &RunRecord) -> Self {
        let c = &record.config;
        Self {
            method: c.method,
            gamma: c.gamma,
            inner_k: c.inner_k,
            outer_s: c.outer_s,
            seed: c.seed,
            checkpoint_every: c.checkpoint_every,
            oracle_budget: c.max_oracle_calls,
            problem_hash: record.problem_hash.clone(),
            status: record.status.clone(),
            oracle_calls: record.counter.component_calls,
            full_passes: record.counter.full_passes,
        }
    }
}

/// Writes a run's checkpoints as CSV.
pub fn write_record_csv(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RUN_HEADER).map_err(|e| csv_err(path, e))?;
    for c in &record.checkpoints {
        w.write_record([
            c.epoch.to_string(),
            c.oracle_calls.to_string(),
            real(c.residual_sq),
            real(c.dist_sq),
            real(c.elapsed_s),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn write_aggregate_csv(stats: &AggregateStats, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(AGGREGATE_HEADER).map_err(|e| csv_err(path, e))?;
    for (i, g) in stats.grid.iter().enumerate() {
        w.write_record([
            g.to_string(),
            real(stats.mean_residual_sq[i]),
            real(stats.std_residual_sq[i]),
            real(stats.mean_dist_sq[i]),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MethodEntry {
    method: Method,
    gamma: f64,
    /// `γ·ℓ`.
    gamma_times_ell: f64,
    inner_k: usize,
    outer_s: usize,
    n_seeds: usize,
    final_mean_residual_sq: f64,
    tuning: Vec<GridCandidate>,
    aggregate: String,
    runs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    tool_version: String,
    regime: Option<Regime>,
    problem_hash: String,
    n: usize,
    d: usize,
    lambda: f64,
    ell: f64,
    mu: f64,
    oracle_budget: u64,
    checkpoint_every: u64,
    seeds: Vec<u64>,
    grid_len: usize,
    methods: Vec<MethodEntry>,
}

fn run_stem(method: Method, seed: u64) -> String {
    format!("{}_seed{seed}", method.as_str())
}

fn aggregate_name(method: Method) -> String {
    format!("aggregate_{}.csv", method.as_str())
}

pub(crate) fn remove_quietly(path: &Path) {
    let _ = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
}

fn staging_path(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    dir.with_file_name(format!(".{name}.partial"))
}

fn write_all(table: &ComparisonTable, dir: &Path) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| HarnessError::io(&runs_dir, e))?;
    let mut methods = Vec::with_capacity(table.series.len());
    for s in &table.series {
        let mut runs = Vec::with_capacity(s.records.len());
        let mut records: Vec<&RunRecord> = s.records.iter().collect();
        records.sort_by_key(|r| r.config.seed);
        for r in records {
            let stem = run_stem(s.method, r.config.seed);
            write_record_csv(r, &runs_dir.join(format!("{stem}.csv")))?;
            write_json(&RunMetadata::of(r), &runs_dir.join(format!("{stem}.json")))?;
            runs.push(format!("runs/{stem}.csv"));
        }
        let aggregate = aggregate_name(s.method);
        write_aggregate_csv(&s.stats, &dir.join(&aggregate))?;
        methods.push(MethodEntry {
            method: s.method,
            gamma: s.gamma,
            gamma_times_ell: s.gamma * table.ell,
            inner_k: s.inner_k,
            outer_s: s.outer_s,
            n_seeds: s.stats.n_seeds,
            final_mean_residual_sq: s.stats.final_mean_residual_sq(),
            tuning: s.tuning.clone(),
            aggregate,
            runs,
        });
    }
    let manifest = Manifest {
        tool: TOOL_NAME.into(),
        tool_version: TOOL_VERSION.into(),
        regime: table.regime,
        problem_hash: table.problem_hash.clone(),
        n: table.n,
        d: table.d,
        lambda: table.lambda,
        ell: table.ell,
        mu: table.mu,
        oracle_budget: table.oracle_budget,
        checkpoint_every: table.checkpoint_every,
        seeds: table.seeds.clone(),
        grid_len: table.grid.len(),
        methods,
    };
    write_json(&manifest, &dir.join("manifest.json"))
}

/// Writes the table's CSVs and manifest into `dir`, replacing any previous
/// contents. Files are staged next to `dir` and moved into place only when
/// everything has been written; on failure nothing is left behind.
pub fn write_regime_outputs(table: &ComparisonTable, dir: &Path) -> Result<()> {
    let staging = staging_path(dir);
    remove_quietly(&staging);
    let res = write_all(table, &staging).and_then(|_| {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        fs::rename(&staging, dir).map_err(|e| HarnessError::io(dir, e))
    });
    if res.is_err() {
        remove_quietly(&staging);
    }
    res
}

fn read_aggregate_csv(path: &Path) -> Result<(Vec<u64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(AGGREGATE_HEADER) {
        return Err(HarnessError::format(path, format!("unexpected header {:?}", header)));
    }
    let (mut grid, mut mean, mut std, mut dist) = (vec![], vec![], vec![], vec![]);
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let field = |j: usize| -> Result<f64> {
            row[j]
                .parse()
                .map_err(|_| HarnessError::format(path, format!("row {}: bad number `{}`", i + 2, &row[j])))
        };
        grid.push(
            row[0]
                .parse()
                .map_err(|_| HarnessError::format(path, format!("row {}: bad count `{}`", i + 2, &row[0])))?,
        );
        mean.push(field(1)?);
        std.push(field(2)?);
        dist.push(field(3)?);
    }
    Ok((grid, mean, std, dist))
}

/// Rebuilds a comparison table (without per-run records) from a regime
/// directory written by [`write_regime_outputs`].
pub fn read_table(dir: &Path) -> Result<ComparisonTable> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::format(&path, e.to_string()))?;
    let mut grid_ref: Option<Vec<u64>> = None;
    let mut series = Vec::with_capacity(m.methods.len());
    for e in m.methods {
        let apath = dir.join(&e.aggregate);
        let (grid, mean, std, dist) = read_aggregate_csv(&apath)?;
        match &grid_ref {
            Some(g) if *g != grid => {
                return Err(HarnessError::format(&apath, "grid differs from the other methods"))
            }
            _ => grid_ref = Some(grid.clone()),
        }
        series.push(MethodSeries {
            method: e.method,
            gamma: e.gamma,
            inner_k: e.inner_k,
            outer_s: e.outer_s,
            tuning: e.tuning,
            stats: AggregateStats {
                method: e.method,
                gamma: e.gamma,
                inner_k: e.inner_k,
                outer_s: e.outer_s,
                problem_hash: Some(m.problem_hash.clone()),
                grid,
                mean_residual_sq: mean,
                std_residual_sq: std,
                mean_dist_sq: dist,
                n_seeds: e.n_seeds,
            },
            records: Vec::new(),
        });
    }
    Ok(ComparisonTable {
        regime: m.regime,
        problem_hash: m.problem_hash,
        n: m.n,
        d: m.d,
        lambda: m.lambda,
        ell: m.ell,
        mu: m.mu,
        oracle_budget: m.oracle_budget,
        checkpoint_every: m.checkpoint_every,
        seeds: m.seeds,
        grid: grid_ref.unwrap_or_default(),
        series,
    })
}
