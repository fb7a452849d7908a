//! Experiment configuration files.
//!
//! A config is a flat TOML document with a `version` key. Every key is
//! checked; unknown keys are rejected so that a typo never silently falls
//! back to a default.
//!
//! ```toml
//! version = 1
//! regime = "medium"            # or a list: ["small", "medium", "big"]
//! methods = ["sarah", "svrg", "sgd"]
//! seeds = [1, 2, 3]
//! oracle_budget = 100000       # optional, per-regime default
//! gamma_grid = [0.5, 1.0]      # optional, in units of 1/ell
//! ```

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::HarnessError;
use crate::problems::{GeneratorSpec, DEFAULT_SPREAD};
use crate::solvers::Method;

pub const CONFIG_VERSION: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Small,
    Medium,
    Big,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Small, Regime::Medium, Regime::Big];

    /// Target `ℓ = ‖Ā‖₂²/λ`.
    pub fn target_ell(self) -> f64 {
        match self {
            Regime::Small => 1e2,
            Regime::Medium => 1e3,
            Regime::Big => 1e4,
        }
    }

    /// Oracle budget used when the config does not set one.
    pub fn default_budget(self) -> u64 {
        match self {
            Regime::Small => 10_000,
            Regime::Medium => 100_000,
            Regime::Big => 300_000,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Small => "small",
            Regime::Medium => "medium",
            Regime::Big => "big",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(Regime::Small),
            "medium" => Ok(Regime::Medium),
            "big" => Ok(Regime::Big),
            _ => Err(format!("unknown regime `{s}` (expected small, medium or big)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub version: i64,
    pub regimes: Vec<Regime>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// `None` selects [`Regime::default_budget`].
    pub oracle_budget: Option<u64>,
    /// `None` gives 100 checkpoints over the budget.
    pub checkpoint_every: Option<u64>,
    pub output_dir: PathBuf,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub generator_seed: u64,
    pub spread: f64,
    /// Step-size candidates in units of `1/ℓ`; `None` selects the defaults.
    pub gamma_grid: Option<Vec<f64>>,
    /// Leading seeds used by the step-size search.
    pub tune_seeds: usize,
    /// Monte-Carlo trials for the bound checks.
    pub verify_seeds: usize,
    /// Sampled pairs for the assumption checks.
    pub verify_trials: usize,
    /// Step size for the contraction check in units of `1/ℓ`; must equal 2/9.
    pub theorem_gamma: Option<f64>,
    /// Target accuracy of the complexity audit relative to `‖F(z⁰)‖`.
    pub epsilon: f64,
    /// Fill `elapsed_s` with wall-clock time. Timed output is not byte-reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            regimes: vec![Regime::Medium],
            methods: Method::ALL.to_vec(),
            seeds: (1..=10).collect(),
            oracle_budget: None,
            checkpoint_every: None,
            output_dir: PathBuf::from("out"),
            n: 10,
            d: 100,
            lambda: 1.0,
            generator_seed: 0,
            spread: DEFAULT_SPREAD,
            gamma_grid: None,
            tune_seeds: 1,
            verify_seeds: 100,
            verify_trials: 10_000,
            theorem_gamma: None,
            epsilon: 1e-6,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn budget(&self, regime: Regime) -> u64 {
        self.oracle_budget.unwrap_or_else(|| regime.default_budget())
    }

    pub fn checkpoint_every(&self, regime: Regime) -> u64 {
        self.checkpoint_every
            .unwrap_or_else(|| (self.budget(regime) / 100).max(1))
    }

    pub fn generator_spec(&self, regime: Regime) -> GeneratorSpec {
        GeneratorSpec::new(self.n, self.d, self.lambda, regime.target_ell(), self.generator_seed)
            .with_spread(self.spread)
    }

    pub fn tuning_seeds(&self) -> &[u64] {
        &self.seeds[..self.tune_seeds.min(self.seeds.len())]
    }

    /// Checks the invariants that do not depend on where a value came from.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |key: &str, message: String| Err(HarnessError::config(key, None, message));
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version));
        }
        if self.regimes.is_empty() {
            return bad("regime", "at least one regime is required".into());
        }
        if let Some(r) = first_duplicate(&self.regimes) {
            return bad("regime", format!("duplicate regime `{r}`"));
        }
        if self.methods.is_empty() {
            return bad("methods", "at least one method is required".into());
        }
        if let Some(m) = first_duplicate(&self.methods) {
            return bad("methods", format!("duplicate method `{m}`"));
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if let Some(s) = first_duplicate(&self.seeds) {
            return bad("seeds", format!("duplicate seed {s}"));
        }
        if self.n == 0 {
            return bad("n", "must be positive".into());
        }
        if self.d == 0 {
            return bad("d", "must be positive".into());
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad("lambda", format!("must be positive, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.spread) {
            return bad("spread", format!("must lie in [0, 1], got {}", self.spread));
        }
        if let Some(b) = self.oracle_budget {
            if b < self.n as u64 {
                return bad(
                    "oracle_budget",
                    format!("must cover one full pass (n = {}), got {b}", self.n),
                );
            }
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every", "must be positive".into());
        }
        if let Some(g) = &self.gamma_grid {
            if g.is_empty() {
                return bad("gamma_grid", "must not be empty".into());
            }
            if let Some(x) = g.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
                return bad("gamma_grid", format!("entries must be positive, got {x}"));
            }
        }
        if self.tune_seeds == 0 {
            return bad("tune_seeds", "must be positive".into());
        }
        if self.verify_seeds == 0 {
            return bad("verify_seeds", "must be positive".into());
        }
        if self.verify_trials == 0 {
            return bad("verify_trials", "must be positive".into());
        }
        if let Some(g) = self.theorem_gamma {
            if !(g > 0.0) || !g.is_finite() {
                return bad("theorem_gamma", format!("must be positive, got {g}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon", format!("must lie in (0, 1), got {}", self.epsilon));
        }
        for r in &self.regimes {
            if r.target_ell() < self.lambda {
                return bad("lambda", format!("regime {r} needs lambda <= {}", r.target_ell()));
            }
        }
        Ok(())
    }
}

fn first_duplicate<T: PartialEq + Copy>(items: &[T]) -> Option<T> {
    items
        .iter()
        .enumerate()
        .find(|(i, x)| items[..*i].contains(x))
        .map(|(_, x)| *x)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: Spanned<i64>,
    regime: Spanned<OneOrMany>,
    methods: Spanned<Vec<String>>,
    seeds: Spanned<Vec<Spanned<i64>>>,
    oracle_budget: Option<Spanned<i64>>,
    checkpoint_every: Option<Spanned<i64>>,
    output_dir: Option<String>,
    n: Option<Spanned<i64>>,
    d: Option<Spanned<i64>>,
    lambda: Option<Spanned<f64>>,
    generator_seed: Option<Spanned<i64>>,
    spread: Option<Spanned<f64>>,
    gamma_grid: Option<Spanned<Vec<f64>>>,
    tune_seeds: Option<Spanned<i64>>,
    verify_seeds: Option<Spanned<i64>>,
    verify_trials: Option<Spanned<i64>>,
    theorem_gamma: Option<Spanned<f64>>,
    epsilon: Option<Spanned<f64>>,
    record_timing: Option<bool>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a config. Errors name the offending key and, where
/// it is known, the line.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s));
        let message = e.message().to_string();
        let key = message
            .split('`')
            .nth(1)
            .unwrap_or("<document>")
            .to_string();
        HarnessError::config(&key, line, message)
    })?;

    let err = |key: &str, span: Range<usize>, message: String| {
        HarnessError::config(key, Some(line_of(text, span)), message)
    };
    let positive = |key: &str, v: &Option<Spanned<i64>>| -> Result<Option<u64>, HarnessError> {
        match v {
            None => Ok(None),
            Some(s) if *s.get_ref() > 0 => Ok(Some(*s.get_ref() as u64)),
            Some(s) => Err(err(key, s.span(), format!("must be positive, got {}", s.get_ref()))),
        }
    };
    let positive_real = |key: &str, v: &Option<Spanned<f64>>| -> Result<Option<f64>, HarnessError> {
        match v {
            None => Ok(None),
            Some(s) if *s.get_ref() > 0.0 && s.get_ref().is_finite() => Ok(Some(*s.get_ref())),
            Some(s) => Err(err(key, s.span(), format!("must be positive, got {}", s.get_ref()))),
        }
    };

    let defaults = ExperimentConfig::default();
    let regime_span = raw.regime.span();
    let names = match raw.regime.into_inner() {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    };
    let regimes = names
        .iter()
        .map(|s| s.parse::<Regime>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|m| err("regime", regime_span.clone(), m))?;
    let methods = raw
        .methods
        .get_ref()
        .iter()
        .map(|s| s.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|m| err("methods", raw.methods.span(), m.to_string()))?;
    let seeds = raw
        .seeds
        .get_ref()
        .iter()
        .map(|s| {
            u64::try_from(*s.get_ref())
                .map_err(|_| err("seeds", s.span(), format!("seeds must be non-negative, got {}", s.get_ref())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let generator_seed = match &raw.generator_seed {
        None => defaults.generator_seed,
        Some(s) => u64::try_from(*s.get_ref())
            .map_err(|_| err("generator_seed", s.span(), "must be non-negative".into()))?,
    };
    let spread = match &raw.spread {
        None => defaults.spread,
        Some(s) if (0.0..=1.0).contains(s.get_ref()) => *s.get_ref(),
        Some(s) => return Err(err("spread", s.span(), format!("must lie in [0, 1], got {}", s.get_ref()))),
    };
    if let Some(g) = &raw.gamma_grid {
        if g.get_ref().is_empty() || g.get_ref().iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(err("gamma_grid", g.span(), "entries must be positive and the list non-empty".into()));
        }
    }
    if let Some(e) = &raw.epsilon {
        if !(*e.get_ref() > 0.0 && *e.get_ref() < 1.0) {
            return Err(err("epsilon", e.span(), format!("must lie in (0, 1), got {}", e.get_ref())));
        }
    }

    let config = ExperimentConfig {
        version: *raw.version.get_ref(),
        regimes,
        methods,
        seeds,
        oracle_budget: positive("oracle_budget", &raw.oracle_budget)?,
        checkpoint_every: positive("checkpoint_every", &raw.checkpoint_every)?,
        output_dir: raw.output_dir.map(PathBuf::from).unwrap_or(defaults.output_dir),
        n: positive("n", &raw.n)?.map_or(defaults.n, |v| v as usize),
        d: positive("d", &raw.d)?.map_or(defaults.d, |v| v as usize),
        lambda: positive_real("lambda", &raw.lambda)?.unwrap_or(defaults.lambda),
        generator_seed,
        spread,
        gamma_grid: raw.gamma_grid.map(Spanned::into_inner),
        tune_seeds: positive("tune_seeds", &raw.tune_seeds)?.map_or(defaults.tune_seeds, |v| v as usize),
        verify_seeds: positive("verify_seeds", &raw.verify_seeds)?.map_or(defaults.verify_seeds, |v| v as usize),
        verify_trials: positive("verify_trials", &raw.verify_trials)?
            .map_or(defaults.verify_trials, |v| v as usize),
        theorem_gamma: positive_real("theorem_gamma", &raw.theorem_gamma)?,
        epsilon: raw.epsilon.map_or(defaults.epsilon, Spanned::into_inner),
        record_timing: raw.record_timing.unwrap_or(defaults.record_timing),
    };

    if config.version != CONFIG_VERSION {
        return Err(err(
            "version",
            raw.version.span(),
            format!("unsupported version {}, expected {CONFIG_VERSION}", config.version),
        ));
    }
    // Re-run the structural checks, attaching a line where one is available.
    config.validate().map_err(|e| match e {
        HarnessError::Config { key, message, .. } => {
            let line = text
                .lines()
                .position(|l| l.trim_start().starts_with(&key))
                .map(|i| i + 1);
            HarnessError::Config { key, line, message }
        }
        other => other,
    })?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config_str(&text)
}
