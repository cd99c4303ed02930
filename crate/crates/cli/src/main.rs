//! `covsteer` command-line front end.
//!
//! Exit status: 0 success, 1 I/O or other failure, 2 configuration error,
//! 3 infeasible or failed solve, 4 a run finished but broke an internal invariant
//! (or a law check failed).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covsteer::scenario::run::{validate_saved, SolutionFile};
use covsteer::scenario::{bundled, run_scenario, write_artifacts, AllocationMode, RunOptions, ScenarioConfig, ScenarioRun};
use covsteer::validation::{self, laws};
use covsteer::Error;

#[derive(Parser)]
#[command(name = "covsteer", version, about = "Chance-constrained covariance steering with iterative risk allocation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Directory for report and CSV artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo seed; overrides the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo sample count; overrides the scenario's.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Only errors on stderr, nothing on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Single solve under the uniform allocation.
    Solve { config: String },
    /// Iterative risk allocation.
    Ira { config: String },
    /// Monte Carlo validation of a saved policy.
    Validate {
        config: String,
        #[arg(long)]
        solution: PathBuf,
    },
    /// Paired validation of two scenarios under common random numbers.
    Compare { first: String, second: String },
    /// Probability-law oracle suite.
    Laws,
    /// List the bundled scenarios.
    List,
}

enum Failure {
    Config(String),
    Infeasible(String),
    Invariant(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::NotPositiveDefinite { .. } | Error::NotPositiveSemidefinite { .. } | Error::Dimension(_) => {
                Failure::Config(e.to_string())
            }
            Error::OutOfRange { .. } | Error::Allocation(_) => Failure::Config(e.to_string()),
            Error::Solve { .. } | Error::FirstSolveInfeasible(_) => Failure::Infeasible(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

/// A path to a scenario file, or the name of a bundled scenario.
fn load_config(spec: &str) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(ScenarioConfig::load(path)?);
    }
    match bundled(spec) {
        Some(cfg) => Ok(cfg?),
        None => Err(Failure::Config(format!("`{spec}` is neither a file nor a bundled scenario"))),
    }
}

fn say(g: &Global, line: impl AsRef<str>) {
    if !g.quiet {
        println!("{}", line.as_ref());
    }
}

fn summarize(g: &Global, run: &ScenarioRun) {
    let b = &run.report.body;
    say(g, format!("scenario      {}", b.name));
    say(g, format!("allocation    {:?}", b.allocation_mode));
    if let Some(t) = b.termination {
        say(g, format!("termination   {t:?} (best iteration {})", b.best_iteration));
    }
    for it in &b.iterations {
        say(g, format!("  iter {:>3}  J = {:.9e}  active = {:>3}  Σδ = {:.6}", it.iteration, it.cost, it.active, it.total_delta));
    }
    say(g, format!("cost          {:.9e}", b.cost));
    let r = &b.validation.risk;
    say(g, format!("joint risk    {:.5} ± {:.5} ({} samples)", r.joint, r.std_err, r.samples));
    say(g, format!("Σ true risk   {:.5}", b.true_risk_sum));
    if let Some(v) = b.terminal_volume {
        say(g, format!("log det Σ_N   {v:.4}"));
    }
    say(g, format!("terminal      mean err {:.2e}, λ_min(Σ_f − Σ_N) {:.2e}", b.terminal_mean_error, b.terminal_lambda_min));
    say(g, format!("max |u|∞      {:.3}", b.validation.max_input_norm));
    if let Some(n) = b.validation.input_violations {
        say(g, format!("input bound   {n} violations"));
    }
}

fn finish_run(g: &Global, run: ScenarioRun) -> Result<(), Failure> {
    summarize(g, &run);
    if let Some(dir) = &g.out {
        write_artifacts(&run, dir)?;
        say(g, format!("artifacts     {}", dir.display()));
    }
    let inv = &run.report.body.invariants;
    if !inv.all() {
        return Err(Failure::Invariant(format!("internal invariant failed: {inv:?}")));
    }
    Ok(())
}

fn options(g: &Global, allocation: Option<AllocationMode>) -> RunOptions {
    RunOptions { allocation, samples: g.samples, seed: g.seed }
}

fn write_json<S: serde::Serialize>(g: &Global, name: &str, value: &S) -> Result<(), Failure> {
    if let Some(dir) = &g.out {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Other(e.to_string()))?;
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Solve { config } => {
            let cfg = load_config(config)?;
            finish_run(g, run_scenario(&cfg, &options(g, Some(AllocationMode::Uniform)))?)
        }
        Command::Ira { config } => {
            let cfg = load_config(config)?;
            finish_run(g, run_scenario(&cfg, &options(g, Some(AllocationMode::Ira)))?)
        }
        Command::Validate { config, solution } => {
            let cfg = load_config(config)?;
            let saved = SolutionFile::load(solution)?;
            let samples = g.samples.unwrap_or(cfg.monte_carlo.samples);
            let seed = g.seed.unwrap_or(cfg.monte_carlo.seed);
            let rep = validate_saved(&cfg, &saved, samples, seed)?;
            say(g, format!("joint risk    {:.5} ± {:.5} ({} samples)", rep.risk.joint, rep.risk.std_err, rep.samples));
            say(g, format!("terminal      mean err {:.2e} (empirical {:.2e})", rep.terminal_mean_error, rep.empirical_terminal_mean_error));
            say(g, format!("max |u|∞      {:.3}", rep.max_input_norm));
            write_json(g, "validation.json", &rep)?;
            match rep.input_violations {
                Some(n) if n > 0 => Err(Failure::Invariant(format!("{n} rollouts violate the input bound"))),
                _ => Ok(()),
            }
        }
        Command::Compare { first, second } => {
            let (ca, cb) = (load_config(first)?, load_config(second)?);
            let (ra, rb) = (run_scenario(&ca, &options(g, None))?, run_scenario(&cb, &options(g, None))?);
            let samples = g.samples.unwrap_or(ca.monte_carlo.samples);
            let seed = g.seed.unwrap_or(ca.monte_carlo.seed);
            let cmp = validation::compare(
                (&ra.scenario.problem, &ra.solution),
                (&rb.scenario.problem, &rb.solution),
                samples,
                seed,
            )?;
            for (name, rep) in [(&ca.name, &cmp.first), (&cb.name, &cmp.second)] {
                say(g, format!("{name:<24} joint risk {:.5} ± {:.5}", rep.risk.joint, rep.risk.std_err));
            }
            say(g, format!("discordant samples: {} first only, {} second only", cmp.discordant.0, cmp.discordant.1));
            write_json(g, "compare.json", &cmp)
        }
        Command::Laws => {
            let rep = laws::probability_law_oracles(g.seed.unwrap_or(1));
            for c in &rep.checks {
                say(g, format!("{} {:<26} {}/{} failed, worst margin {:+.3e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.failures, c.trials, c.worst_margin));
            }
            write_json(g, "laws.json", &rep)?;
            if rep.all_passed() {
                Ok(())
            } else {
                Err(Failure::Invariant("some probability laws failed".into()))
            }
        }
        Command::List => {
            for (name, _) in covsteer::scenario::BUNDLED {
                say(g, *name);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.global.quiet { "error" } else { "warn" })).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (2, m),
                Failure::Infeasible(m) => (3, m),
                Failure::Invariant(m) => (4, m),
                Failure::Other(m) => (1, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
