use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sarah_vi::analysis::AggregateStats;
use sarah_vi::harness::{
    emit_plot, read_table, run_experiment, write_regime_outputs, ComparisonTable, ExperimentConfig,
    MethodSeries, Regime,
};
use sarah_vi::problems::read_problem_file;
use sarah_vi::solvers::Method;

fn tiny_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        regimes: vec![Regime::Small],
        methods: Method::ALL.to_vec(),
        seeds: vec![3, 1, 2],
        oracle_budget: Some(2_500),
        checkpoint_every: Some(100),
        output_dir: out.to_path_buf(),
        n: 4,
        d: 5,
        ..ExperimentConfig::default()
    }
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn experiment_outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = run_experiment(&tiny_config(a.path())).unwrap();
    let tb = run_experiment(&tiny_config(b.path())).unwrap();
    assert_eq!(ta[0].grid, tb[0].grid);
    let fa = read_tree(a.path());
    let fb = read_tree(b.path());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(v == &fb[k], "{} differs", k.display());
    }
    assert!(fa.contains_key(Path::new("figure_small.svg")));
    assert!(fa.contains_key(Path::new("small/runs/sarah_seed1.csv")));
    assert!(fa.contains_key(Path::new("small/runs/sgd_seed3.json")));
    assert!(!fa.keys().any(|k| k.to_string_lossy().contains("partial")));
}

#[test]
fn table_layout_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tables = run_experiment(&tiny_config(dir.path())).unwrap();
    let t = &tables[0];
    // grid: 0, 100, …, 2500
    assert_eq!(t.grid.len(), 26);
    for s in &t.series {
        assert_eq!(s.stats.grid, t.grid);
        assert_eq!(s.stats.n_seeds, 3);
        for r in &s.records {
            let calls = r.counter.component_calls;
            assert!(calls <= 2_500 && calls + 4 >= 2_500, "{}: {calls}", s.method);
        }
        let csv = fs::read_to_string(dir.path().join(format!("small/aggregate_{}.csv", s.method.as_str()))).unwrap();
        assert_eq!(csv.lines().count(), t.grid.len() + 1);
        assert_eq!(csv.lines().next().unwrap(), "oracle_calls,mean_residual_sq,std_residual_sq,mean_dist_sq");
    }
    let run_csv = fs::read_to_string(dir.path().join("small/runs/svrg_seed2.csv")).unwrap();
    assert_eq!(run_csv.lines().next().unwrap(), "epoch,oracle_calls,residual_sq,dist_sq,elapsed_s");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("small/runs/svrg_seed2.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 2);
    assert_eq!(meta["method"], "svrg");
    assert_eq!(meta["problem_hash"], t.problem_hash.as_str());

    let back = read_table(&dir.path().join("small")).unwrap();
    assert_eq!(back.grid, t.grid);
    assert_eq!(back.problem_hash, t.problem_hash);
    for (x, y) in back.series.iter().zip(&t.series) {
        assert_eq!(x.method, y.method);
        assert_eq!(x.gamma, y.gamma);
        assert_eq!(x.stats.mean_residual_sq, y.stats.mean_residual_sq);
    }
}

fn one_series(values: Vec<f64>) -> ComparisonTable {
    let grid: Vec<u64> = (0..values.len() as u64).map(|k| k * 10).collect();
    let stats = AggregateStats {
        method: Method::Sarah,
        gamma: 0.1,
        inner_k: 5,
        outer_s: 3,
        problem_hash: None,
        grid: grid.clone(),
        std_residual_sq: vec![0.0; values.len()],
        mean_dist_sq: values.clone(),
        mean_residual_sq: values,
        n_seeds: 1,
    };
    ComparisonTable {
        regime: None,
        problem_hash: "h".into(),
        n: 1,
        d: 1,
        lambda: 1.0,
        ell: 1.0,
        mu: 1.0,
        oracle_budget: 40,
        checkpoint_every: 10,
        seeds: vec![1],
        grid,
        series: vec![MethodSeries {
            method: Method::Sarah,
            gamma: 0.1,
            inner_k: 5,
            outer_s: 3,
            tuning: vec![],
            stats,
            records: vec![],
        }],
    }
}

#[test]
fn plot_single_series_and_floor_clamp() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.svg");
    emit_plot(&one_series(vec![1.0, 0.1, 0.01, 0.001, 1e-4]), &p1).unwrap();
    let svg = fs::read_to_string(&p1).unwrap();
    assert!(svg.contains("SARAH"));
    assert!(!svg.contains("numeric floor"));

    let p2 = dir.path().join("b.svg");
    emit_plot(&one_series(vec![1.0, 0.1, 0.0, 0.0, 0.0]), &p2).unwrap();
    let svg = fs::read_to_string(&p2).unwrap();
    assert!(svg.contains("numeric floor"));

    // Same input, same bytes.
    let p3 = dir.path().join("c.svg");
    emit_plot(&one_series(vec![1.0, 0.1, 0.0, 0.0, 0.0]), &p3).unwrap();
    assert_eq!(fs::read(&p2).unwrap(), fs::read(&p3).unwrap());

    let mut empty = one_series(vec![1.0]);
    empty.series.clear();
    assert!(emit_plot(&empty, &dir.path().join("d.svg")).is_err());
}

#[test]
fn failed_write_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("small");
    fs::write(&target, "not a directory").unwrap();
    assert!(write_regime_outputs(&one_series(vec![1.0, 0.5]), &target).is_err());
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("small")]);
    assert_eq!(fs::read_to_string(&target).unwrap(), "not a directory");
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sarah-vi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        "version = 1\nregime = \"small\"\nmethods = [\"sarah\"]\nseeds = [1]\nn = 1\nd = 1\noutput_dir = \"{}\"\n{extra}",
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn cli_verify_scalar_smoke_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let t = std::time::Instant::now();
    let out = cli(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(t.elapsed().as_secs_f64() < 5.0);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("overall: PASS"));
    assert!(dir.path().join("out/verify_report.json").exists());
}

#[test]
fn cli_rejects_non_preset_theorem_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "theorem_gamma = 1.0\n");
    let out = cli(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2/(9 ell)"));
}

#[test]
fn cli_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("small", "huge");
    fs::write(&cfg, text).unwrap();
    let out = cli(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("regime") && err.contains("line 2"), "{err}");

    let out = cli(&["run", "--seeds", "7,7", "--budget", "100"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["run", "--regime", "huge"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_run_plot_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("exp");
    let o = out_dir.to_str().unwrap();
    let r = cli(&[
        "run", "--regime", "small", "--method", "sarah,sgd", "--seeds", "1-2", "--budget", "500", "--output", o,
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out_dir.join("figure_small.svg").exists());
    assert!(out_dir.join("small/aggregate_sgd.csv").exists());
    assert!(!out_dir.join("small/aggregate_svrg.csv").exists());

    let svg = dir.path().join("again.svg");
    let r = cli(&["plot", out_dir.join("small").to_str().unwrap(), "--output", svg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read(&svg).unwrap(), fs::read(out_dir.join("figure_small.svg")).unwrap());

    let r = cli(&["generate", "--regime", "small", "--output", o]);
    assert_eq!(r.status.code(), Some(0));
    let p = read_problem_file(&out_dir.join("problem_small.txt")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("small/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["problem_hash"], p.hash());
}
