use rand::Rng;

use super::monitor::{step, Monitor};
use super::{check_start, Fingerprint, Method, Result, RunRecord, RunStatus, SolverConfig};
use crate::problems::{FiniteSumOperator, Oracle};
use crate::rng;

/// Constant-step SGD `z^{k+1} = z^k − η F_i(z^k)`: `S·K` single-component
/// steps, grouped into `S` epochs of `K` steps for sampling and reporting.
pub fn run_sgd<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    z0: &[f64],
) -> Result<RunRecord> {
    check_start(problem, config, Method::Sgd, z0)?;
    let n = problem.n_components();
    let mut oracle = Oracle::new(problem);
    let mut monitor = Monitor::new(problem, config, z0);
    let mut z = z0.to_vec();
    let mut v = vec![0.0; z.len()];
    let mut status = RunStatus::Completed;
    let mut epoch = 0;

    'outer: for s in 1..=config.outer_s as u64 {
        let mut stream = rng::epoch_stream(config.seed, s);
        for _ in 0..config.inner_k {
            if !monitor.affordable(oracle.counter().component_calls, 1) {
                status = RunStatus::BudgetExhausted;
                break 'outer;
            }
            epoch = s;
            let i = stream.random_range(0..n);
            oracle.component_into(i, &z, &mut v);
            monitor.record_inner_norm(&v);
            step(&mut z, config.gamma, &v);
            if let Err(st) = monitor.observe(s, oracle.counter().component_calls, &z) {
                status = st;
                break 'outer;
            }
        }
        if let Err(st) = monitor.end_epoch(oracle.counter().component_calls, &z) {
            status = st;
            break;
        }
    }
    Ok(monitor.finish(config, epoch, oracle.counter(), z0, z, status))
}
