use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::monitor::{step, Monitor};
use super::{check_start, Fingerprint, Method, Result, RunRecord, RunStatus, SolverConfig};
use crate::linalg::{dist_sq, norm_sq};
use crate::problems::{FiniteSumOperator, Oracle, OracleCounter};
use crate::rng;

/// Iterate and recursive direction of one SARAH inner loop.
struct Inner {
    z: Vec<f64>,
    z_prev: Vec<f64>,
    v: Vec<f64>,
    f_new: Vec<f64>,
    f_old: Vec<f64>,
}

impl Inner {
    fn new(z0: &[f64]) -> Self {
        let dim = z0.len();
        Self {
            z: z0.to_vec(),
            z_prev: vec![0.0; dim],
            v: vec![0.0; dim],
            f_new: vec![0.0; dim],
            f_old: vec![0.0; dim],
        }
    }

    /// `v⁰ = F(z⁰)`, `z¹ = z⁰ − γv⁰`.
    fn start<P: FiniteSumOperator + ?Sized>(&mut self, oracle: &mut Oracle<'_, P>, gamma: f64) {
        oracle.full_into(&self.z, &mut self.v);
        self.z_prev.copy_from_slice(&self.z);
        step(&mut self.z, gamma, &self.v);
    }

    /// `v^k = F_i(z^k) − F_i(z^{k−1}) + v^{k−1}`, `z^{k+1} = z^k − γv^k`.
    ///
    /// Evaluated as `F_i(z^k) + (v^{k−1} − F_i(z^{k−1}))`: when the sampled
    /// component equals the full operator the bracket is exactly zero, so
    /// the direction is `F(z^k)` bit for bit.
    fn step<P: FiniteSumOperator + ?Sized>(&mut self, oracle: &mut Oracle<'_, P>, i: usize, gamma: f64) {
        oracle.component_into(i, &self.z_prev, &mut self.f_old);
        oracle.component_into(i, &self.z, &mut self.f_new);
        for ((v, fo), fnew) in self.v.iter_mut().zip(&self.f_old).zip(&self.f_new) {
            *v = fnew + (*v - fo);
        }
        std::mem::swap(&mut self.z_prev, &mut self.z);
        self.z.copy_from_slice(&self.z_prev);
        step(&mut self.z, gamma, &self.v);
    }

    /// The analysis-only direction `v^K`, evaluated without counting.
    fn closing_direction<P: FiniteSumOperator + ?Sized>(&mut self, problem: &P, i: usize) -> Vec<f64> {
        problem.component_into(i, &self.z_prev, &mut self.f_old);
        problem.component_into(i, &self.z, &mut self.f_new);
        self.v
            .iter()
            .zip(&self.f_old)
            .zip(&self.f_new)
            .map(|((v, fo), fnew)| fnew + (v - fo))
            .collect()
    }
}

#[inline]
fn sample(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// SARAH: each epoch spends one full pass on `v⁰ = F(z̃^{s−1})` and then
/// `K−1` recursive steps of two component calls each, so a complete epoch
/// costs exactly `n + 2(K−1)` calls. The epoch output is `z̃^s = z^K`.
pub fn run_sarah<P: FiniteSumOperator + Fingerprint + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    z0: &[f64],
) -> Result<RunRecord> {
    check_start(problem, config, Method::Sarah, z0)?;
    let n = problem.n_components();
    let mut oracle = Oracle::new(problem);
    let mut monitor = Monitor::new(problem, config, z0);
    let mut inner = Inner::new(z0);
    let mut status = RunStatus::Completed;
    let mut epoch = 0;

    'outer: for s in 1..=config.outer_s as u64 {
        if !monitor.affordable(oracle.counter().component_calls, n as u64) {
            status = RunStatus::BudgetExhausted;
            break;
        }
        epoch = s;
        let mut stream = rng::epoch_stream(config.seed, s);
        inner.start(&mut oracle, config.gamma);
        monitor.record_inner_norm(&inner.v);
        if let Err(st) = monitor.observe(s, oracle.counter().component_calls, &inner.z) {
            status = st;
            break;
        }
        for _ in 1..config.inner_k {
            if !monitor.affordable(oracle.counter().component_calls, 2) {
                status = RunStatus::BudgetExhausted;
                break 'outer;
            }
            let i = sample(&mut stream, n);
            inner.step(&mut oracle, i, config.gamma);
            monitor.record_inner_norm(&inner.v);
            if let Err(st) = monitor.observe(s, oracle.counter().component_calls, &inner.z) {
                status = st;
                break 'outer;
            }
        }
        if let Err(st) = monitor.end_epoch(oracle.counter().component_calls, &inner.z) {
            status = st;
            break;
        }
    }
    Ok(monitor.finish(config, epoch, oracle.counter(), z0, inner.z, status))
}

/// Diagnostics of a single SARAH inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerTrace {
    /// `‖v^k‖²` for `k = 0, …, K`; the last entry is the analysis-only `v^K`.
    pub v_norm_sq: Vec<f64>,
    /// `‖F(z^K) − v^K‖²`.
    pub drift_sq: f64,
    /// `‖F(z⁰)‖²`.
    pub initial_residual_sq: f64,
    /// `‖F(z^K)‖²`.
    pub final_residual_sq: f64,
    pub final_dist_sq: Option<f64>,
    pub final_point: Vec<f64>,
    /// Calls spent by the algorithm itself; the evaluation of `v^K` and
    /// `F(z^K)` is not counted.
    pub counter: OracleCounter,
}

/// Runs the first epoch of SARAH from `z0` (same sampling stream as
/// [`run_sarah`] with this seed) and additionally forms `v^K` using an index
/// drawn at step `K` of the same stream.
pub fn sarah_inner_trace<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    z0: &[f64],
    gamma: f64,
    inner_k: usize,
    seed: u64,
) -> InnerTrace {
    let n = problem.n_components();
    let dim = problem.dim();
    let mut oracle = Oracle::new(problem);
    let mut inner = Inner::new(z0);
    let mut stream = rng::epoch_stream(seed, 1);
    let mut v_norm_sq = Vec::with_capacity(inner_k + 1);

    let mut f = vec![0.0; dim];
    problem.full_into(z0, &mut f);
    let initial_residual_sq = norm_sq(&f);

    inner.start(&mut oracle, gamma);
    v_norm_sq.push(norm_sq(&inner.v));
    for _ in 1..inner_k {
        let i = sample(&mut stream, n);
        inner.step(&mut oracle, i, gamma);
        v_norm_sq.push(norm_sq(&inner.v));
    }
    let i = sample(&mut stream, n);
    let v_last = inner.closing_direction(problem, i);
    v_norm_sq.push(norm_sq(&v_last));

    problem.full_into(&inner.z, &mut f);
    let final_residual_sq = norm_sq(&f);
    let drift_sq = dist_sq(&f, &v_last);
    InnerTrace {
        v_norm_sq,
        drift_sq,
        initial_residual_sq,
        final_residual_sq,
        final_dist_sq: problem.exact_solution().map(|s| dist_sq(&inner.z, s)),
        counter: oracle.counter(),
        final_point: inner.z,
    }
}
