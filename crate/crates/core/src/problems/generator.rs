use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BilinearComponent, FiniteSumProblem, ProblemError, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, streams};

/// Default weight of the per-component part of each `A_i`.
pub const DEFAULT_SPREAD: f64 = 0.5;

const MAX_ATTEMPTS: usize = 8;
const ELL_REL_TOL: f64 = 0.01;

/// Parameters of a random bilinear instance.
///
/// Each matrix is `A_i = c·(√(1−s)·G + √s·E_i)` with `G` and `E_i` i.i.d.
/// standard normal and `s = spread`; the global scale `c` is chosen so that
/// `‖Ā‖₂²/λ = target_ell`. `spread = 1` gives fully independent matrices,
/// `spread = 0` a single shared matrix. Shifts `a_i`, `b_i` are standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub target_ell: f64,
    pub seed: u64,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_spread() -> f64 {
    DEFAULT_SPREAD
}

impl GeneratorSpec {
    pub fn new(n: usize, d: usize, lambda: f64, target_ell: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            lambda,
            target_ell,
            seed,
            spread: DEFAULT_SPREAD,
        }
    }

    pub fn with_spread(mut self, spread: f64) -> Self {
        self.spread = spread;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ProblemError::Spec(m));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.target_ell >= self.lambda) || !self.target_ell.is_finite() {
            return fail(format!(
                "target_ell ({}) must be at least lambda ({})",
                self.target_ell, self.lambda
            ));
        }
        if !(0.0..=1.0).contains(&self.spread) {
            return fail(format!("spread must lie in [0, 1], got {}", self.spread));
        }
        Ok(())
    }
}

fn normal_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws a bilinear instance, rescales it to the requested `ℓ`, and attaches
/// the exact solution. A pure function of `spec`.
pub fn generate_bilinear(spec: &GeneratorSpec) -> Result<FiniteSumProblem> {
    spec.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        if let Some(problem) = try_generate(spec, attempt as u64 * streams::RETRY_STRIDE)? {
            return Ok(problem);
        }
        log::warn!("zero matrix draw on attempt {attempt}, regenerating");
    }
    Err(ProblemError::ZeroDraw(MAX_ATTEMPTS))
}

fn try_generate(spec: &GeneratorSpec, offset: u64) -> Result<Option<FiniteSumProblem>> {
    let (n, d) = (spec.n, spec.d);
    let shared_w = (1.0 - spec.spread).sqrt();
    let own_w = spec.spread.sqrt();

    let mut shared_rng = rng::stream(spec.seed, streams::SHARED_MATRIX + offset);
    let shared = normal_vec(&mut shared_rng, d * d);
    let mut own_rng = rng::stream(spec.seed, streams::COMPONENT_MATRIX + offset);
    let mut a_rng = rng::stream(spec.seed, streams::SHIFT_A + offset);
    let mut b_rng = rng::stream(spec.seed, streams::SHIFT_B + offset);

    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        let own = normal_vec(&mut own_rng, d * d);
        let m: Vec<f64> = shared
            .iter()
            .zip(&own)
            .map(|(g, e)| shared_w * g + own_w * e)
            .collect();
        raw.push((m, normal_vec(&mut a_rng, d), normal_vec(&mut b_rng, d)));
    }

    let mut mean = vec![0.0; d * d];
    for (m, _, _) in &raw {
        mean.iter_mut().zip(m).for_each(|(s, x)| *s += x);
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    let mean = Matrix::from_row_major(d, d, mean)?;
    if mean.is_zero() {
        return Ok(None);
    }
    let sigma = linalg::spectral_norm(&mean, 1e-12)?;
    let scale = (spec.target_ell * spec.lambda).sqrt() / sigma;

    let components = raw
        .into_iter()
        .map(|(mut m, a, b)| {
            m.iter_mut().for_each(|x| *x *= scale);
            BilinearComponent::new(Matrix::from_row_major(d, d, m)?, a, b, spec.lambda)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut problem = FiniteSumProblem::from_components(components)?;
    let rel = (problem.ell - spec.target_ell).abs() / spec.target_ell;
    if rel > ELL_REL_TOL {
        return Err(ProblemError::Invalid(format!(
            "rescaled ell {} misses target {} by {:.3}%",
            problem.ell,
            spec.target_ell,
            100.0 * rel
        )));
    }
    problem = problem.with_exact_solution()?;
    problem.set_spec(spec.clone());
    Ok(Some(problem))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::FiniteSumOperator;

    #[test]
    fn scalar_case_has_unit_matrix() {
        let p = generate_bilinear(&GeneratorSpec::new(1, 1, 1.0, 1.0, 5)).unwrap();
        let a = p.components()[0].matrix().get(0, 0);
        assert!((a.abs() - 1.0).abs() < 1e-12);
        assert_eq!(p.mu(), 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(generate_bilinear(&GeneratorSpec::new(0, 3, 1.0, 10.0, 1)).is_err());
        assert!(generate_bilinear(&GeneratorSpec::new(2, 3, 1.0, 0.5, 1)).is_err());
        assert!(generate_bilinear(&GeneratorSpec::new(2, 3, -1.0, 10.0, 1)).is_err());
        assert!(generate_bilinear(&GeneratorSpec::new(2, 3, 1.0, 10.0, 1).with_spread(1.5)).is_err());
    }

    #[test]
    fn deterministic() {
        let spec = GeneratorSpec::new(3, 4, 1.0, 50.0, 11);
        let p = generate_bilinear(&spec).unwrap();
        let q = generate_bilinear(&spec).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.hash(), q.hash());
        let r = generate_bilinear(&GeneratorSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(p.hash(), r.hash());
    }
}
