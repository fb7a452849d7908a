use std::time::Instant;

use super::{Checkpoint, Fingerprint, RunRecord, RunStatus, SolverConfig, DIVERGENCE_FACTOR};
use crate::linalg::{dist_sq, norm_sq};
use crate::problems::{FiniteSumOperator, OracleCounter, Point};

/// Records metric snapshots without touching the oracle counter or the
/// sampling streams.
pub(crate) struct Monitor<'a, P: ?Sized> {
    problem: &'a P,
    every: u64,
    budget: Option<u64>,
    next_at: u64,
    initial_residual: f64,
    checkpoints: Vec<Checkpoint>,
    epoch_residuals: Vec<f64>,
    inner_norms: Option<Vec<f64>>,
    start: Option<Instant>,
    scratch: Vec<f64>,
}

impl<'a, P: FiniteSumOperator + Fingerprint + ?Sized> Monitor<'a, P> {
    pub(crate) fn new(problem: &'a P, config: &SolverConfig, z0: &[f64]) -> Self {
        let mut m = Self {
            problem,
            every: config.checkpoint_every,
            budget: config.max_oracle_calls,
            next_at: 0,
            initial_residual: 0.0,
            checkpoints: Vec::new(),
            epoch_residuals: Vec::new(),
            inner_norms: config.record_inner_norms.then(Vec::new),
            start: config.record_timing.then(Instant::now),
            scratch: vec![0.0; problem.dim()],
        };
        m.initial_residual = m.residual(z0);
        m.epoch_residuals.push(m.initial_residual);
        m.push(0, 0, z0, m.initial_residual);
        m.next_at = m.every;
        m
    }

    fn residual(&mut self, z: &[f64]) -> f64 {
        self.problem.full_into(z, &mut self.scratch);
        norm_sq(&self.scratch)
    }

    fn push(&mut self, epoch: u64, calls: u64, z: &[f64], residual_sq: f64) {
        let dist = self
            .problem
            .exact_solution()
            .map_or(f64::NAN, |s| dist_sq(z, s));
        let elapsed_s = self.start.map_or(0.0, |t| t.elapsed().as_secs_f64());
        self.checkpoints.push(Checkpoint {
            epoch,
            oracle_calls: calls,
            residual_sq,
            dist_sq: dist,
            elapsed_s,
        });
    }

    fn judge(&self, calls: u64, residual_sq: f64) -> Result<(), RunStatus> {
        if !residual_sq.is_finite() {
            return Err(RunStatus::NonFinite { oracle_calls: calls });
        }
        if self.initial_residual > 0.0 && residual_sq > DIVERGENCE_FACTOR * self.initial_residual {
            return Err(RunStatus::Diverged {
                oracle_calls: calls,
                residual_sq,
            });
        }
        Ok(())
    }

    /// Whether `cost` more calls still fit in the budget.
    #[inline]
    pub(crate) fn affordable(&self, calls: u64, cost: u64) -> bool {
        self.budget.is_none_or(|b| calls + cost <= b)
    }

    #[inline]
    pub(crate) fn record_inner_norm(&mut self, v: &[f64]) {
        if let Some(series) = self.inner_norms.as_mut() {
            series.push(norm_sq(v));
        }
    }

    /// Called after every step.
    #[inline]
    pub(crate) fn observe(&mut self, epoch: u64, calls: u64, z: &[f64]) -> Result<(), RunStatus> {
        if calls < self.next_at {
            return Ok(());
        }
        let r = self.residual(z);
        self.push(epoch, calls, z, r);
        self.next_at = (calls / self.every + 1) * self.every;
        self.judge(calls, r)
    }

    /// Called once an epoch has produced `z̃^s`.
    pub(crate) fn end_epoch(&mut self, calls: u64, z: &[f64]) -> Result<(), RunStatus> {
        let r = self.residual(z);
        self.epoch_residuals.push(r);
        self.judge(calls, r)
    }

    pub(crate) fn finish(
        mut self,
        config: &SolverConfig,
        epoch: u64,
        counter: OracleCounter,
        z0: &[f64],
        z: Vec<f64>,
        status: RunStatus,
    ) -> RunRecord {
        let last = self.checkpoints.last().map_or(0, |c| c.oracle_calls);
        if counter.component_calls > last {
            let r = self.residual(&z);
            self.push(epoch, counter.component_calls, &z, r);
        }
        RunRecord {
            config: config.clone(),
            problem_hash: self.problem.fingerprint(),
            n_components: self.problem.n_components(),
            initial_point: Point::from_vec_unchecked(z0.to_vec()),
            final_point: Point::from_vec_unchecked(z),
            checkpoints: self.checkpoints,
            epoch_residual_sq: self.epoch_residuals,
            counter,
            inner_norm_series: self.inner_norms,
            status,
        }
    }
}

#[inline]
pub(crate) fn step(z: &mut [f64], gamma: f64, v: &[f64]) {
    for (zi, vi) in z.iter_mut().zip(v) {
        *zi -= gamma * vi;
    }
}
