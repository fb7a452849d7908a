//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use sarah_vi::analysis::{epochs_to_floor, verify_lemma1, verify_lemma2, verify_theorem1};
use sarah_vi::harness::{run_experiment, run_regime, ExperimentConfig, Regime};
use sarah_vi::problems::{
    check_strong_monotonicity, generate_bilinear, identity_problem, FiniteSumOperator,
    FiniteSumProblem, GeneratorSpec,
};
use sarah_vi::solvers::{run, run_sarah, theorem_gamma, theorem_preset, Method, SolverConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// The instance of the small-ℓ criteria: n = 10, d = 100, λ = 1.
fn small_instance() -> FiniteSumProblem {
    generate_bilinear(&ExperimentConfig::default().generator_spec(Regime::Small)).unwrap()
}

fn single_component_instance() -> FiniteSumProblem {
    generate_bilinear(&GeneratorSpec::new(1, 100, 1.0, Regime::Small.target_ell(), 0)).unwrap()
}

fn origin(p: &FiniteSumProblem) -> Vec<f64> {
    vec![0.0; p.dim()]
}

fn seeds(count: u64) -> Vec<u64> {
    (0..count).collect()
}

fn theorem_contraction() -> Outcome {
    let p = small_instance();
    let z0 = origin(&p);
    let pilot = epochs_to_floor(&p, &z0, 0, 128).unwrap();
    let r = verify_theorem1(&p, &seeds(100), pilot + 2, &z0).unwrap();
    let ratios: Vec<String> = r.per_epoch_ratios.iter().map(|x| format!("{x:.3}")).collect();
    outcome(
        r.passed,
        format!(
            "max pre-floor ratio {:.4} <= 0.6 over {} epochs (floor at epoch {}); ratios [{}]",
            r.max_pre_floor_ratio,
            r.per_epoch_ratios.len(),
            r.floor_epoch.map_or("none".to_string(), |e| e.to_string()),
            ratios.join(", ")
        ),
    )
}

fn lemma1_decay() -> Outcome {
    let p = small_instance();
    let preset = theorem_preset(&p);
    let r = verify_lemma1(&p, preset.gamma, preset.inner_k, &seeds(200), &origin(&p)).unwrap();
    let worst_k = r
        .ratios
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let tail = r.ratios.last().copied().unwrap();
    outcome(
        r.passed,
        format!(
            "max_k E|v^k|^2 / ((1-gamma mu)^k |F(z0)|^2) = {:.4} (at k = {worst_k}) <= 1.1; ratio at k = K: {tail:.3e}",
            r.max_violation_ratio
        ),
    )
}

fn lemma2_drift() -> Outcome {
    let p = small_instance();
    let preset = theorem_preset(&p);
    let r = verify_lemma2(&p, preset.gamma, preset.inner_k, &seeds(200), &origin(&p)).unwrap();
    let q = single_component_instance();
    let pq = theorem_preset(&q);
    let r1 = verify_lemma2(&q, pq.gamma, pq.inner_k, &seeds(20), &origin(&q)).unwrap();
    outcome(
        r.passed && r1.relative_drift <= 1e-24,
        format!(
            "drift / bound = {:.4} <= 1.1 (bound factor {:.5}); n = 1 relative drift {:.1e} <= 1e-24",
            r.ratio, r.bound_factor, r1.relative_drift
        ),
    )
}

fn oracle_accounting() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (1usize..40, 1usize..60, 1usize..8, any::<u64>(), any::<u64>());
    let res = runner.run(&strategy, |(n, k, s, seed, gen_seed)| {
        let p = generate_bilinear(&GeneratorSpec::new(n, 4, 1.0, 10.0, gen_seed)).unwrap();
        let cfg = SolverConfig::new(Method::Sarah, 0.5 / p.ell(), k, s, seed);
        let r = run_sarah(&p, &cfg, &origin(&p)).unwrap();
        prop_assert_eq!(r.counter.component_calls, (s * (n + 2 * (k - 1))) as u64);
        Ok(())
    });
    match res {
        Ok(()) => outcome(true, "component calls = S(n + 2(K-1)) on 200 random (n, K, S)".into()),
        Err(e) => outcome(false, format!("counterexample: {e}")),
    }
}

fn figure_ordering() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig {
        regimes: Regime::ALL.to_vec(),
        ..ExperimentConfig::default()
    };
    let mut lines = Vec::new();
    let mut medium_ok = false;
    for regime in Regime::ALL {
        let t = run_regime(&config, regime).unwrap();
        let sarah = t.final_mean(Method::Sarah).unwrap();
        let svrg = t.final_mean(Method::Svrg).unwrap();
        let sgd = t.final_mean(Method::Sgd).unwrap();
        let sgd_curve = &t.series(Method::Sgd).unwrap().stats.mean_residual_sq;
        let sgd_plateau = sgd_curve[sgd_curve.len() / 2..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let ordered = sarah < svrg && svrg < sgd;
        let separated = sgd_plateau >= 10.0 * sarah;
        let tuned_sarah = t.series(Method::Sarah).unwrap().gamma;
        if regime == Regime::Medium {
            medium_ok = ordered && separated && tuned_sarah >= theorem_gamma(t.ell) * (1.0 - 1e-12);
        }
        lines.push(format!(
            "{regime}: SARAH {sarah:.2e} < SVRG {svrg:.2e} < SGD {sgd:.2e} [{}], SGD plateau / SARAH {:.1e}",
            if ordered { "ok" } else { "violated" },
            sgd_plateau / sarah
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        medium_ok && secs < 600.0,
        format!("{}; {secs:.0} s for three regimes", lines.join("; ")),
    )
}

fn assumption_checks() -> Outcome {
    let config = ExperimentConfig::default();
    let mut instances: Vec<(String, FiniteSumProblem)> = Regime::ALL
        .iter()
        .map(|&r| (r.to_string(), generate_bilinear(&config.generator_spec(r)).unwrap()))
        .collect();
    instances.push(("n=1".into(), single_component_instance()));
    let mut ok = true;
    let mut worst_gap = 0.0f64;
    let mut worst_residual = 0.0f64;
    for (_, p) in &instances {
        let r = check_strong_monotonicity(p, p.mu(), 10_000, 1).unwrap();
        let gap = (r.min_ratio - 1.0).abs().max((r.max_ratio - 1.0).abs());
        worst_gap = worst_gap.max(gap);
        let z = p.exact_solution().unwrap();
        let res = p.residual_sq(z).sqrt();
        let f0 = p.residual_sq(&origin(p)).sqrt();
        let tol = 1e-9 * f0.max(1.0);
        worst_residual = worst_residual.max(res / tol);
        ok &= r.passed() && gap <= 1e-9 && res <= tol;
    }
    outcome(
        ok,
        format!(
            "{} instances x 1e4 pairs: max |ratio - 1| = {worst_gap:.1e} <= 1e-9; max |F(z*)| / tol = {worst_residual:.1e} <= 1",
            instances.len()
        ),
    )
}

fn degenerate_equivalence() -> Outcome {
    let p = single_component_instance();
    let z0: Vec<f64> = (0..p.dim()).map(|j| ((j as f64) * 0.61).sin()).collect();
    let gamma = 0.5 / p.ell();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();

    let mut z = z0.clone();
    let mut f = vec![0.0; z.len()];
    let mut identical = true;
    for t in 1..=40 {
        p.full_into(&z, &mut f);
        z.iter_mut().zip(&f).for_each(|(zi, fi)| *zi -= gamma * fi);
        for method in [Method::Sarah, Method::Svrg] {
            let r = run(&p, &SolverConfig::new(method, gamma, t, 1, 9), &z0).unwrap();
            identical &= bits(&r.final_point) == bits(&z);
        }
    }
    let a = run(&p, &SolverConfig::new(Method::Sarah, gamma, 8, 5, 1), &z0).unwrap();
    let b = run(&p, &SolverConfig::new(Method::Svrg, gamma, 8, 5, 2), &z0).unwrap();
    identical &= bits(&a.epoch_residual_sq) == bits(&b.epoch_residual_sq);

    let id = identity_problem(1).unwrap();
    let g = 0.3;
    let mut worst = 0.0f64;
    for k in 1..=60usize {
        let r = run_sarah(&id, &SolverConfig::new(Method::Sarah, g, k, 1, 0), &[1.0, -1.0]).unwrap();
        let exact = (1.0 - g).powi(k as i32);
        let rel = (r.final_point[0] - exact).abs() / exact / (k as f64 * f64::EPSILON);
        worst = worst.max(rel);
    }
    outcome(
        identical && worst <= 2.0,
        format!(
            "n = 1 SARAH/SVRG/deterministic trajectories bit-identical: {identical}; scalar |z_k - (1-gamma)^k| <= {worst:.2} k eps"
        ),
    )
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let config = ExperimentConfig {
            regimes: vec![Regime::Small],
            seeds: vec![4, 5, 6],
            oracle_budget: Some(5_000),
            output_dir: d.path().to_path_buf(),
            n: 10,
            d: 20,
            ..ExperimentConfig::default()
        };
        run_experiment(&config).unwrap();
    }
    let mut files = 0;
    let mut same = true;
    let mut stack = vec![dirs[0].path().to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "csv") {
                let rel = path.strip_prefix(dirs[0].path()).unwrap();
                let other = dirs[1].path().join(rel);
                same &= std::fs::read(&path).unwrap() == std::fs::read(&other).unwrap_or_default();
                files += 1;
            }
        }
    }
    outcome(
        same && files > 0,
        format!("{files} CSV files byte-identical across two executions: {same}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("theorem-1 contraction (small ell, 100 seeds)", theorem_contraction),
        ("lemma-1 decay (200 seeds)", lemma1_decay),
        ("lemma-2 drift (200 seeds; n = 1 exact)", lemma2_drift),
        ("oracle accounting", oracle_accounting),
        ("figure-1 ordering (tuned, 10 seeds)", figure_ordering),
        ("assumption checks", assumption_checks),
        ("degenerate-instance equivalence", degenerate_equivalence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        println!(
            "criterion {} {}: {} ({:.1} s) {}",
            i + 1,
            name,
            if result.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
