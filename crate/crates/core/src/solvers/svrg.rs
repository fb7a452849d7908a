use rand::Rng;

use super::monitor::{step, Monitor};
use super::{check_start, Fingerprint, Method, Result, RunRecord, RunStatus, SolverConfig};
use crate::problems::{FiniteSumOperator, Oracle};
use crate::rng;

/// SVRG for operators: each epoch anchors at `w = z̃^{s−1}`, computes `F(w)`
/// once and takes `K` steps along `F_i(z^k) − F_i(w) + F(w)`. A complete
/// epoch costs `n + 2K` calls; the epoch output is the last inner iterate.
pub fn run_svrg<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    z0: &[f64],
) -> Result<RunRecord> {
    check_start(problem, config, Method::Svrg, z0)?;
    let n = problem.n_components();
    let dim = problem.dim();
    let mut oracle = Oracle::new(problem);
    let mut monitor = Monitor::new(problem, config, z0);

    let mut z = z0.to_vec();
    let mut anchor = vec![0.0; dim];
    let mut f_anchor = vec![0.0; dim];
    let mut fi_anchor = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut status = RunStatus::Completed;
    let mut epoch = 0;

    'outer: for s in 1..=config.outer_s as u64 {
        if !monitor.affordable(oracle.counter().component_calls, n as u64) {
            status = RunStatus::BudgetExhausted;
            break;
        }
        epoch = s;
        let mut stream = rng::epoch_stream(config.seed, s);
        anchor.copy_from_slice(&z);
        oracle.full_into(&anchor, &mut f_anchor);
        if let Err(st) = monitor.observe(s, oracle.counter().component_calls, &z) {
            status = st;
            break;
        }
        for _ in 0..config.inner_k {
            if !monitor.affordable(oracle.counter().component_calls, 2) {
                status = RunStatus::BudgetExhausted;
                break 'outer;
            }
            let i = stream.random_range(0..n);
            oracle.component_into(i, &anchor, &mut fi_anchor);
            oracle.component_into(i, &z, &mut v);
            // F_i(z) + (F(w) − F_i(w)); the bracket vanishes exactly when n = 1
            for ((vj, fa), fia) in v.iter_mut().zip(&f_anchor).zip(&fi_anchor) {
                *vj += fa - fia;
            }
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::identity_problem;

    #[test]
    fn identity_matches_deterministic_steps() {
        let p = identity_problem(1).unwrap();
        let cfg = SolverConfig::new(Method::Svrg, 0.5, 2, 1, 0);
        let r = run_svrg(&p, &cfg, &[1.0, 1.0]).unwrap();
        assert_eq!(&*r.final_point, &[0.25, 0.25]);
        assert_eq!(r.counter.component_calls, 1 + 2 * 2);
    }
}
