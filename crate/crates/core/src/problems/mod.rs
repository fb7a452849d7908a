//! Finite-sum operators `F(z) = (1/n) Σ F_i(z)` and the bilinear saddle-point
//! family used throughout the experiments.
//!
//! For the regularized bilinear game
//! `g_i(x, y) = xᵀA_i y + a_iᵀx + b_iᵀy + λ/2‖x‖² − λ/2‖y‖²` the component
//! operator is `F_i(x, y) = (A_i y + a_i + λx, λy − A_iᵀx − b_i)`, acting on
//! the joint point `z = (x, y)` of dimension `2d`.

mod checks;
mod generator;
mod io;

use std::fmt;
use std::ops::Deref;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

pub use checks::{
    check_cocoercivity, check_strong_monotonicity, cocoercivity_pair, monotonicity_pair,
    AssumptionReport, PairOutcome, CHECK_SLACK,
};
pub use generator::{generate_bilinear, GeneratorSpec, DEFAULT_SPREAD};
pub use io::{read_problem, read_problem_file, write_problem, write_problem_file};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("component index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: problem has dimension {expected}, point has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("point contains a non-finite entry at position {0}")]
    NonFinite(usize),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("generator produced a zero matrix after {0} attempts")]
    ZeroDraw(usize),
    #[error("stored exact solution has residual {residual:e} above tolerance {tolerance:e}")]
    BadSolution { residual: f64, tolerance: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("problem file: line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("problem file: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ProblemError> = std::result::Result<T, E>;

/// A point in the joint space. For bilinear instances the first `d` entries
/// are `x` and the last `d` are `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(pos) = coords.iter().position(|x| !x.is_finite()) {
            return Err(ProblemError::NonFinite(pos));
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps a buffer produced by the solvers. Callers have already checked
    /// finiteness.
    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        linalg::norm_sq(&self.0)
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

/// Number of component evaluations spent by a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounter {
    /// Every `F_i` evaluation, including the `n` spent by each full pass.
    pub component_calls: u64,
    pub full_passes: u64,
}

impl OracleCounter {
    pub fn new() -> Self {
        Self::default()
    }
}

/// A finite-sum operator `F = (1/n) Σ F_i` on `R^dim`.
///
/// `component_into` and `full_into` are the raw, unchecked and uncounted
/// evaluation paths; solvers go through [`Oracle`], which counts.
pub trait FiniteSumOperator: Sync {
    fn n_components(&self) -> usize;
    fn dim(&self) -> usize;
    /// Cocoercivity constant `ℓ` used for step sizes and loop lengths.
    fn ell(&self) -> f64;
    /// Strong monotonicity constant `μ`.
    fn mu(&self) -> f64;
    fn exact_solution(&self) -> Option<&Point> {
        None
    }

    /// `out = F_i(z)`.
    fn component_into(&self, i: usize, z: &[f64], out: &mut [f64]);

    /// `out = F(z)`. The default averages the components in index order.
    fn full_into(&self, z: &[f64], out: &mut [f64]) {
        average_components(self, z, out);
    }
}

/// `out = (1/n) Σ_i F_i(z)` summed in index order.
pub fn average_components<P: FiniteSumOperator + ?Sized>(problem: &P, z: &[f64], out: &mut [f64]) {
    let n = problem.n_components();
    problem.component_into(0, z, out);
    if n > 1 {
        let mut tmp = vec![0.0; out.len()];
        for i in 1..n {
            problem.component_into(i, z, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
        let inv = n as f64;
        out.iter_mut().for_each(|o| *o /= inv);
    }
}

/// Counted access to a problem's oracles.
pub struct Oracle<'a, P: ?Sized> {
    problem: &'a P,
    counter: OracleCounter,
}

impl<'a, P: FiniteSumOperator + ?Sized> Oracle<'a, P> {
    pub fn new(problem: &'a P) -> Self {
        Self {
            problem,
            counter: OracleCounter::default(),
        }
    }

    pub fn problem(&self) -> &'a P {
        self.problem
    }

    pub fn counter(&self) -> OracleCounter {
        self.counter
    }

    #[inline]
    pub fn component_into(&mut self, i: usize, z: &[f64], out: &mut [f64]) {
        self.counter.component_calls += 1;
        self.problem.component_into(i, z, out);
    }

    /// Full pass through all components: costs `n` component calls.
    pub fn full_into(&mut self, z: &[f64], out: &mut [f64]) {
        self.counter.component_calls += self.problem.n_components() as u64;
        self.counter.full_passes += 1;
        average_components(self.problem, z, out);
    }
}

fn check_dim<P: FiniteSumOperator + ?Sized>(problem: &P, z: &[f64]) -> Result<()> {
    if z.len() != problem.dim() {
        return Err(ProblemError::Dimension {
            expected: problem.dim(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Checked single-component evaluation; adds one call to `counter`.
pub fn eval_component<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    i: usize,
    z: &[f64],
    counter: &mut OracleCounter,
) -> Result<Point> {
    let n = problem.n_components();
    if i >= n {
        return Err(ProblemError::IndexOutOfRange { index: i, n });
    }
    check_dim(problem, z)?;
    let mut out = vec![0.0; problem.dim()];
    problem.component_into(i, z, &mut out);
    counter.component_calls += 1;
    Ok(Point(out))
}

/// Checked full evaluation; adds `n` calls to `counter`.
pub fn eval_full<P: FiniteSumOperator + ?Sized>(
    problem: &P,
    z: &[f64],
    counter: &mut OracleCounter,
) -> Result<Point> {
    check_dim(problem, z)?;
    let mut out = vec![0.0; problem.dim()];
    average_components(problem, z, &mut out);
    counter.component_calls += problem.n_components() as u64;
    counter.full_passes += 1;
    Ok(Point(out))
}

/// One term of the finite-sum bilinear game.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearComponent {
    matrix: Matrix,
    shift_x: Vec<f64>,
    shift_y: Vec<f64>,
    lambda: f64,
}

impl BilinearComponent {
    pub fn new(matrix: Matrix, shift_x: Vec<f64>, shift_y: Vec<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(ProblemError::Invalid(format!("lambda must be positive, got {lambda}")));
        }
        let d = matrix.rows();
        if matrix.cols() != d || shift_x.len() != d || shift_y.len() != d || d == 0 {
            return Err(ProblemError::Invalid(format!(
                "inconsistent component shapes: matrix {}x{}, a {}, b {}",
                matrix.rows(),
                matrix.cols(),
                shift_x.len(),
                shift_y.len()
            )));
        }
        let finite = matrix
            .as_slice()
            .iter()
            .chain(&shift_x)
            .chain(&shift_y)
            .all(|x| x.is_finite());
        if !finite {
            return Err(ProblemError::Invalid("non-finite component data".into()));
        }
        Ok(Self {
            matrix,
            shift_x,
            shift_y,
            lambda,
        })
    }

    /// Half-dimension `d`.
    pub fn d(&self) -> usize {
        self.shift_x.len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn shift_x(&self) -> &[f64] {
        &self.shift_x
    }

    pub fn shift_y(&self) -> &[f64] {
        &self.shift_y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `out = (A y + a + λx, λy − Aᵀx − b)`
    #[inline]
    pub fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        let d = self.d();
        let (x, y) = z.split_at(d);
        let (ox, oy) = out.split_at_mut(d);
        self.matrix.mul_vec_into(y, ox);
        for j in 0..d {
            ox[j] = ox[j] + self.shift_x[j] + self.lambda * x[j];
        }
        self.matrix.mul_transpose_vec_into(x, oy);
        for j in 0..d {
            oy[j] = self.lambda * y[j] - oy[j] - self.shift_y[j];
        }
    }
}

/// A finite-sum bilinear saddle-point problem with its constants.
#[derive(Debug)]
pub struct FiniteSumProblem {
    components: Vec<BilinearComponent>,
    mean: BilinearComponent,
    ell: f64,
    mu: f64,
    exact_solution: Option<Point>,
    spec: Option<GeneratorSpec>,
    hash: OnceLock<String>,
}

impl Clone for FiniteSumProblem {
    fn clone(&self) -> Self {
        Self {
            components: self.components.clone(),
            mean: self.mean.clone(),
            ell: self.ell,
            mu: self.mu,
            exact_solution: self.exact_solution.clone(),
            spec: self.spec.clone(),
            hash: OnceLock::new(),
        }
    }
}

impl PartialEq for FiniteSumProblem {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
            && self.ell.to_bits() == other.ell.to_bits()
            && self.mu.to_bits() == other.mu.to_bits()
            && self.exact_solution == other.exact_solution
            && self.spec == other.spec
    }
}

/// Relative tolerance on `‖F(z*)‖` for a stored exact solution.
pub const SOLUTION_TOL: f64 = 1e-9;

impl FiniteSumProblem {
    /// Builds a problem from explicit components and constants. No exact
    /// solution is attached; see [`FiniteSumProblem::with_exact_solution`].
    pub fn new(components: Vec<BilinearComponent>, ell: f64, mu: f64) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| ProblemError::Invalid("need at least one component".into()))?;
        let d = first.d();
        let lambda = first.lambda();
        for c in &components {
            if c.d() != d || c.lambda().to_bits() != lambda.to_bits() {
                return Err(ProblemError::Invalid(
                    "components disagree on dimension or lambda".into(),
                ));
            }
        }
        if !(mu > 0.0) || !(ell >= mu) || !ell.is_finite() {
            return Err(ProblemError::Invalid(format!(
                "constants must satisfy ell >= mu > 0, got ell = {ell}, mu = {mu}"
            )));
        }
        let mean = mean_component(&components)?;
        Ok(Self {
            components,
            mean,
            ell,
            mu,
            exact_solution: None,
            spec: None,
            hash: OnceLock::new(),
        })
    }

    /// Builds a problem using the bilinear constants `ℓ = ‖Ā‖₂²/λ`, `μ = λ`.
    pub fn from_components(components: Vec<BilinearComponent>) -> Result<Self> {
        let lambda = components
            .first()
            .ok_or_else(|| ProblemError::Invalid("need at least one component".into()))?
            .lambda();
        let mean = mean_component(&components)?;
        let sigma = linalg::spectral_norm(mean.matrix(), 1e-12)?;
        Self::new(components, sigma * sigma / lambda, lambda)
    }

    /// Computes and attaches `z*` with `F(z*) = 0`.
    pub fn with_exact_solution(mut self) -> Result<Self> {
        let z = solve_exact(&self)?;
        self.set_exact_solution(z)?;
        Ok(self)
    }

    pub(crate) fn set_exact_solution(&mut self, z: Point) -> Result<()> {
        check_dim(self, &z)?;
        let tolerance = self.solution_tolerance();
        let residual = self.residual_sq(&z).sqrt();
        if residual > tolerance {
            return Err(ProblemError::BadSolution { residual, tolerance });
        }
        self.exact_solution = Some(z);
        self.hash = OnceLock::new();
        Ok(())
    }

    pub(crate) fn set_spec(&mut self, spec: GeneratorSpec) {
        self.spec = Some(spec);
        self.hash = OnceLock::new();
    }

    /// `10⁻⁹·max(1, ‖F(0)‖)`.
    pub fn solution_tolerance(&self) -> f64 {
        let f0 = self.residual_sq(&vec![0.0; self.dim()]).sqrt();
        SOLUTION_TOL * f0.max(1.0)
    }

    pub fn components(&self) -> &[BilinearComponent] {
        &self.components
    }

    /// The averaged component `(Ā, ā, b̄)`; it evaluates `F` directly.
    pub fn mean_component(&self) -> &BilinearComponent {
        &self.mean
    }

    pub fn lambda(&self) -> f64 {
        self.mean.lambda()
    }

    /// Half-dimension `d` (the joint dimension is `2d`).
    pub fn d(&self) -> usize {
        self.mean.d()
    }

    pub fn spec(&self) -> Option<&GeneratorSpec> {
        self.spec.as_ref()
    }

    /// `‖F(z)‖²` through the uncounted metric route.
    pub fn residual_sq(&self, z: &[f64]) -> f64 {
        let mut out = vec![0.0; z.len()];
        self.full_into(z, &mut out);
        linalg::norm_sq(&out)
    }

    /// Hex SHA-256 of the canonical text serialization.
    pub fn hash(&self) -> &str {
        self.hash.get_or_init(|| {
            let mut buf = Vec::new();
            write_problem(self, &mut buf).expect("writing to a Vec cannot fail");
            let digest = Sha256::digest(&buf);
            digest.iter().map(|b| format!("{b:02x}")).collect()
        })
    }
}

impl FiniteSumOperator for FiniteSumProblem {
    fn n_components(&self) -> usize {
        self.components.len()
    }

    fn dim(&self) -> usize {
        2 * self.mean.d()
    }

    fn ell(&self) -> f64 {
        self.ell
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn exact_solution(&self) -> Option<&Point> {
        self.exact_solution.as_ref()
    }

    #[inline]
    fn component_into(&self, i: usize, z: &[f64], out: &mut [f64]) {
        self.components[i].apply_into(z, out);
    }

    /// Evaluates `F` through the averaged data `(Ā, ā, b̄)`, which costs one
    /// component's work. Agrees with the component average up to round-off.
    fn full_into(&self, z: &[f64], out: &mut [f64]) {
        self.mean.apply_into(z, out);
    }
}

impl fmt::Display for FiniteSumProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bilinear problem n={} d={} lambda={} ell={:.6} mu={}",
            self.n_components(),
            self.d(),
            self.lambda(),
            self.ell,
            self.mu
        )
    }
}

fn mean_component(components: &[BilinearComponent]) -> Result<BilinearComponent> {
    let first = &components[0];
    let d = first.d();
    let n = components.len() as f64;
    let mut m = first.matrix().as_slice().to_vec();
    let mut a = first.shift_x().to_vec();
    let mut b = first.shift_y().to_vec();
    for c in &components[1..] {
        m.iter_mut().zip(c.matrix().as_slice()).for_each(|(s, x)| *s += x);
        a.iter_mut().zip(c.shift_x()).for_each(|(s, x)| *s += x);
        b.iter_mut().zip(c.shift_y()).for_each(|(s, x)| *s += x);
    }
    if components.len() > 1 {
        m.iter_mut().for_each(|x| *x /= n);
        a.iter_mut().for_each(|x| *x /= n);
        b.iter_mut().for_each(|x| *x /= n);
    }
    BilinearComponent::new(Matrix::from_row_major(d, d, m)?, a, b, first.lambda())
}

/// Solves `F(z) = 0` for the affine bilinear operator by LU on the block
/// system `[[λI, Ā], [−Āᵀ, λI]] z = (−ā, b̄)`.
pub fn solve_exact(problem: &FiniteSumProblem) -> Result<Point> {
    let mean = problem.mean_component();
    let d = mean.d();
    let lambda = mean.lambda();
    let dim = 2 * d;
    let mut block = vec![0.0; dim * dim];
    for r in 0..d {
        block[r * dim + r] = lambda;
        block[(d + r) * dim + d + r] = lambda;
        for c in 0..d {
            let v = mean.matrix().get(r, c);
            block[r * dim + d + c] = v;
            block[(d + c) * dim + r] = -v;
        }
    }
    let rhs: Vec<f64> = mean
        .shift_x()
        .iter()
        .map(|x| -x)
        .chain(mean.shift_y().iter().copied())
        .collect();
    let system = Matrix::from_row_major(dim, dim, block)?;
    let z = linalg::lu_solve(&system, &rhs)?;
    let z = Point::new(z)?;
    let tolerance = problem.solution_tolerance();
    let residual = problem.residual_sq(&z).sqrt();
    if residual > tolerance {
        return Err(ProblemError::BadSolution { residual, tolerance });
    }
    Ok(z)
}

/// Scalar-block helper for tests and smoke problems: `d = 1` components
/// `F_i(x, y) = (A y + a + λx, λy − A x − b)`.
pub fn scalar_component(a_mat: f64, a: f64, b: f64, lambda: f64) -> Result<BilinearComponent> {
    BilinearComponent::new(Matrix::from_diag(&[a_mat]), vec![a], vec![b], lambda)
}

/// The identity operator `F(z) = z` on `R^{2d}` with `ℓ = μ = 1`.
pub fn identity_problem(d: usize) -> Result<FiniteSumProblem> {
    let c = BilinearComponent::new(Matrix::zeros(d, d), vec![0.0; d], vec![0.0; d], 1.0)?;
    FiniteSumProblem::new(vec![c], 1.0, 1.0)?.with_exact_solution()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_component_zero_matrix() {
        let p = FiniteSumProblem::new(vec![scalar_component(0.0, 1.0, -1.0, 1.0).unwrap()], 1.0, 1.0)
            .unwrap();
        let mut c = OracleCounter::new();
        let f = eval_component(&p, 0, &[0.0, 0.0], &mut c).unwrap();
        assert_eq!(&*f, &[1.0, 1.0]);
        assert_eq!(c.component_calls, 1);
    }

    #[test]
    fn eval_component_substitution() {
        let p = FiniteSumProblem::new(vec![scalar_component(2.0, 0.0, 0.0, 1.0).unwrap()], 5.0, 1.0)
            .unwrap();
        let mut c = OracleCounter::new();
        let f = eval_component(&p, 0, &[1.0, 1.0], &mut c).unwrap();
        assert_eq!(&*f, &[3.0, -1.0]);
    }

    #[test]
    fn eval_component_errors() {
        let p = identity_problem(1).unwrap();
        let mut c = OracleCounter::new();
        assert!(matches!(
            eval_component(&p, 1, &[0.0, 0.0], &mut c),
            Err(ProblemError::IndexOutOfRange { index: 1, n: 1 })
        ));
        assert!(matches!(
            eval_component(&p, 0, &[0.0], &mut c),
            Err(ProblemError::Dimension { expected: 2, got: 1 })
        ));
        assert!(matches!(
            eval_full(&p, &[0.0, 0.0, 0.0], &mut c),
            Err(ProblemError::Dimension { .. })
        ));
        assert_eq!(c.component_calls, 0);
    }

    #[test]
    fn eval_full_single_term_is_component() {
        let p = FiniteSumProblem::new(vec![scalar_component(1.5, 0.3, -0.7, 2.0).unwrap()], 5.0, 2.0)
            .unwrap();
        let mut c = OracleCounter::new();
        let z = [0.25, -1.5];
        let full = eval_full(&p, &z, &mut c).unwrap();
        let comp = eval_component(&p, 0, &z, &mut c).unwrap();
        assert_eq!(full, comp);
        assert_eq!(c.component_calls, 2);
        assert_eq!(c.full_passes, 1);
    }

    #[test]
    fn eval_full_arithmetic_mean() {
        let comps = vec![
            scalar_component(0.0, 2.0, 0.0, 1.0).unwrap(),
            scalar_component(0.0, 0.0, 0.0, 1.0).unwrap(),
        ];
        let p = FiniteSumProblem::new(comps, 1.0, 1.0).unwrap();
        let mut c = OracleCounter::new();
        let f = eval_full(&p, &[0.0, 0.0], &mut c).unwrap();
        assert_eq!(&*f, &[1.0, 0.0]);
        assert_eq!(c.component_calls, 2);
    }

    #[test]
    fn solve_exact_hand_cases() {
        let p = FiniteSumProblem::new(vec![scalar_component(0.0, 1.0, -1.0, 1.0).unwrap()], 1.0, 1.0)
            .unwrap();
        let z = solve_exact(&p).unwrap();
        assert!((z[0] + 1.0).abs() < 1e-15 && (z[1] + 1.0).abs() < 1e-15);

        let p = FiniteSumProblem::new(vec![scalar_component(1.0, 1.0, 0.0, 1.0).unwrap()], 1.0, 1.0)
            .unwrap();
        let z = solve_exact(&p).unwrap();
        assert!((z[0] + 0.5).abs() < 1e-15 && (z[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_constants_rejected() {
        let c = scalar_component(0.0, 0.0, 0.0, 1.0).unwrap();
        assert!(FiniteSumProblem::new(vec![c.clone()], 0.5, 1.0).is_err());
        assert!(FiniteSumProblem::new(vec![c], 1.0, 0.0).is_err());
        assert!(FiniteSumProblem::new(vec![], 1.0, 1.0).is_err());
        assert!(scalar_component(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn point_rejects_non_finite() {
        assert!(matches!(
            Point::new(vec![0.0, f64::NAN]),
            Err(ProblemError::NonFinite(1))
        ));
    }
}
