use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use sarah_vi::harness::{
    emit_plot, parse_config, read_table, run_experiment, verify_cli, ExperimentConfig, HarnessError,
    Regime,
};
use sarah_vi::problems::{generate_bilinear, write_problem_file, FiniteSumOperator};
use sarah_vi::solvers::Method;

#[derive(Parser)]
#[command(name = "sarah-vi", version, about = "SARAH, SVRG and SGD on finite-sum variational inequalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generated problem instance of each regime to a text file.
    Generate(Common),
    /// Tune, run and compare the methods; write CSVs, manifest and plots.
    Run(Common),
    /// Run the assumption and bound checks; exit 1 if any fails.
    Verify(Common),
    /// Re-render a figure from a regime directory written by `run`.
    Plot {
        /// Regime directory containing manifest.json and aggregate CSVs.
        input: PathBuf,
        /// Output SVG (default: figure_<regime>.svg next to the directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seeds, e.g. `1,2,3` or `1-10`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Oracle-call budget per run.
    #[arg(long)]
    budget: Option<u64>,
    /// Regime(s): small, medium, big (comma separated).
    #[arg(long, value_delimiter = ',')]
    regime: Option<Vec<Regime>>,
    /// Methods: sarah, svrg, sgd (comma separated).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
                let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
                if a > b {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(out))
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &common.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &common.output {
        config.output_dir = o.clone();
    }
    if let Some(s) = &common.seeds {
        config.seeds = s.0.clone();
    }
    if let Some(b) = common.budget {
        config.oracle_budget = Some(b);
    }
    if let Some(r) = &common.regime {
        config.regimes = r.clone();
    }
    if let Some(m) = &common.method {
        config.methods = m.clone();
    }
    config.validate()?;
    Ok(config)
}

fn generate(config: &ExperimentConfig) -> Result<(), HarnessError> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.clone(),
        source: e,
    })?;
    for &regime in &config.regimes {
        let problem = generate_bilinear(&config.generator_spec(regime))?;
        let path = dir.join(format!("problem_{regime}.txt"));
        write_problem_file(&problem, &path)?;
        println!("{}: ell = {:.6e}, hash {}", path.display(), problem.ell(), problem.hash());
    }
    Ok(())
}

fn plot(input: &Path, output: Option<PathBuf>) -> Result<(), HarnessError> {
    let table = read_table(input)?;
    let path = output.unwrap_or_else(|| {
        let name = table.regime.map_or("figure.svg".to_string(), |r| format!("figure_{r}.svg"));
        input.parent().unwrap_or(Path::new(".")).join(name)
    });
    emit_plot(&table, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(c) => load(&c).and_then(|cfg| generate(&cfg)).map(|_| true),
        Command::Run(c) => load(&c).and_then(|cfg| {
            let tables = run_experiment(&cfg)?;
            for t in &tables {
                let regime = t.regime.map_or("-", |r| r.as_str());
                for s in &t.series {
                    println!(
                        "{regime:<7} {:<6} gamma*ell = {:<8.4} final mean ||F||^2 = {:.4e}",
                        s.method.label(),
                        s.gamma * t.ell,
                        s.stats.final_mean_residual_sq()
                    );
                }
            }
            println!("outputs in {}", cfg.output_dir.display());
            Ok(true)
        }),
        Command::Verify(c) => load(&c).and_then(|cfg| verify_cli(&cfg)).map(|r| r.passed),
        Command::Plot { input, output } => plot(&input, output).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
