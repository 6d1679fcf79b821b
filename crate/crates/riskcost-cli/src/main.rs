//! Command-line front end: theory curves, single-instance solves with a
//! cross-solver diff report, full sweeps, and the validation suite.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 completed sweep with failed cells.

mod config_file;

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use riskcost::descent::{run_descent, run_descent_traced, DescentConfig, ProblemInstance};
use riskcost::error::Error as RiskError;
use riskcost::exact::{optimal_portfolio_closed_form, OptimizationOutcome};
use riskcost::experiment::{
    render_table, run_sweep, BracketSource, ExperimentConfig, SolverChoice, SweepResult,
};
use riskcost::market::{
    ensemble_stats, generate_ensemble_for_trial, AssetEnsemble, EnsembleStats,
};
use riskcost::replica::{render_theory_table, theory_rows};
use riskcost::rng::{SeedPlan, SHARED_ENSEMBLE_TRIAL};
use riskcost::scenario::{build_wishart, generate_returns_with, RiskModel};
use riskcost::validation;

use config_file::FileConfig;

#[derive(Parser)]
#[command(
    name = "riskcost",
    version,
    about = "Budget-constrained minimization of investment risk plus purchasing cost"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags shared by all subcommands; each overrides the config file value.
#[derive(Args)]
struct Overrides {
    /// TOML config file (a sweep metadata sidecar also works)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed for all random substreams
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "ETA")]
    eta_min: Option<f64>,
    #[arg(long, global = true, value_name = "ETA")]
    eta_max: Option<f64>,
    #[arg(long, global = true, value_name = "STEP")]
    eta_step: Option<f64>,
    /// Disorder trials per grid point
    #[arg(long, global = true, value_name = "M")]
    trials: Option<usize>,
    /// Number of assets N
    #[arg(long, global = true, value_name = "N")]
    assets: Option<usize>,
    /// Number of return periods p
    #[arg(long, global = true, value_name = "P")]
    periods: Option<usize>,
    /// Solver for sweep cells
    #[arg(long, global = true, value_enum)]
    solver: Option<SolverArg>,
    /// Output directory (default: $RISKCOST_OUT or the working directory)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true, value_name = "K")]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SolverArg {
    Descent,
    ClosedForm,
}

#[derive(Subcommand)]
enum Command {
    /// Write the closed-form theory curves over the η grid
    Theory,
    /// Solve one disorder instance with both solvers and print a diff report
    Solve {
        /// Cost tolerance η for the instance
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        /// Trial index selecting the disorder substreams
        #[arg(long, default_value_t = 0)]
        trial: u32,
        /// Load the asset ensemble from a columnar table instead of
        /// generating it
        #[arg(long, value_name = "PATH")]
        ensemble: Option<PathBuf>,
        /// Write the generated ensemble as a columnar table
        #[arg(long, value_name = "PATH")]
        dump_ensemble: Option<PathBuf>,
        /// Write the return matrix as row/col/value triplets
        #[arg(long, value_name = "PATH")]
        dump_returns: Option<PathBuf>,
        /// Write the Wishart matrix as row/col/value triplets
        #[arg(long, value_name = "PATH")]
        dump_wishart: Option<PathBuf>,
        /// Write a descent trace (iteration, residual, Lagrangian)
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Sample the trace every K iterations
        #[arg(long, default_value_t = 1000, value_name = "K")]
        trace_every: u64,
    },
    /// Run the full sweep: M trials per η, aggregated, with theory columns
    Sweep,
    /// Run the validation checks and print pass/fail lines
    Validate {
        /// Run only checks whose name contains this substring
        #[arg(long, value_name = "NAME")]
        only: Option<String>,
    },
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    version: String,
    seed: u64,
    config_path: Option<String>,
    output_table: String,
    wall_seconds: Option<f64>,
    config: FileConfig,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RiskError>() {
            return match e {
                RiskError::Config(_) | RiskError::Usage(_) | RiskError::Parse(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.overrides.jobs {
        rayon_pool(jobs)?;
    }
    let cfg = resolve_config(&cli.overrides)?;
    let out_dir = output_dir(&cli.overrides);
    let config_path = cli.overrides.config.as_deref();
    match cli.command {
        Command::Theory => cmd_theory(&cfg, &out_dir, config_path),
        Command::Solve {
            eta,
            trial,
            ensemble,
            dump_ensemble,
            dump_returns,
            dump_wishart,
            trace,
            trace_every,
        } => cmd_solve(
            cfg,
            eta,
            trial,
            ensemble.as_deref(),
            dump_ensemble.as_deref(),
            dump_returns.as_deref(),
            dump_wishart.as_deref(),
            trace.as_deref(),
            trace_every,
        ),
        Command::Sweep => cmd_sweep(&cfg, &out_dir, config_path),
        Command::Validate { only } => cmd_validate(only.as_deref()),
    }
}

fn rayon_pool(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("initializing the worker pool")?;
    Ok(())
}

fn resolve_config(overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => config_file::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(eta_min) = overrides.eta_min {
        cfg.eta_min = eta_min;
    }
    if let Some(eta_max) = overrides.eta_max {
        cfg.eta_max = eta_max;
    }
    if let Some(eta_step) = overrides.eta_step {
        cfg.eta_step = eta_step;
    }
    if let Some(trials) = overrides.trials {
        cfg.trials = trials;
    }
    if let Some(assets) = overrides.assets {
        cfg.assets = assets;
    }
    if let Some(periods) = overrides.periods {
        cfg.periods = periods;
    }
    if let Some(solver) = overrides.solver {
        cfg.solver = match solver {
            SolverArg::Descent => SolverChoice::Descent,
            SolverArg::ClosedForm => SolverChoice::ClosedForm,
        };
    }
    // validation happens per subcommand: `solve --ensemble` takes the asset
    // count from the loaded table first
    Ok(cfg)
}

fn output_dir(overrides: &Overrides) -> PathBuf {
    overrides
        .out
        .clone()
        .or_else(|| std::env::var_os("RISKCOST_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    file.write_all(contents.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_manifest(
    path: &Path,
    subcommand: &str,
    cfg: &ExperimentConfig,
    config_path: Option<&Path>,
    output_table: &Path,
    wall_seconds: Option<f64>,
) -> Result<()> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_path: config_path.map(|p| p.display().to_string()),
        output_table: output_table.display().to_string(),
        wall_seconds,
        config: FileConfig::from(cfg),
    };
    let text = toml::to_string_pretty(&manifest).context("serializing the run manifest")?;
    write_file(path, &text)
}

fn theory_bracket_stats(cfg: &ExperimentConfig) -> Result<EnsembleStats> {
    match cfg.theory_brackets {
        BracketSource::Analytic => {
            Ok(EnsembleStats::pareto_coupled(&cfg.pareto_cost, &cfg.pareto_coeff)?)
        }
        BracketSource::Empirical => {
            let plan = SeedPlan::new(cfg.seed);
            let ensemble = generate_ensemble_for_trial(
                &cfg.pareto_cost,
                &cfg.pareto_coeff,
                cfg.assets,
                &plan,
                SHARED_ENSEMBLE_TRIAL,
            )?;
            Ok(ensemble_stats(&ensemble)?)
        }
    }
}

fn cmd_theory(cfg: &ExperimentConfig, out_dir: &Path, config_path: Option<&Path>) -> Result<ExitCode> {
    cfg.validate()?;
    let stats = theory_bracket_stats(cfg)?;
    let rows = theory_rows(&stats, cfg.alpha(), &cfg.eta_grid())?;
    let table_path = out_dir.join("theory.dat");
    write_file(&table_path, &render_theory_table(&rows))?;
    write_manifest(
        &out_dir.join("theory.meta.toml"),
        "theory",
        cfg,
        config_path,
        &table_path,
        None,
    )?;
    println!(
        "wrote {} ({} grid points, alpha = {})",
        table_path.display(),
        rows.len(),
        cfg.alpha()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    mut cfg: ExperimentConfig,
    eta: f64,
    trial: u32,
    ensemble_path: Option<&Path>,
    dump_ensemble: Option<&Path>,
    dump_returns: Option<&Path>,
    dump_wishart: Option<&Path>,
    trace_path: Option<&Path>,
    trace_every: u64,
) -> Result<ExitCode> {
    if !eta.is_finite() || eta < 0.0 {
        bail!(RiskError::Usage(format!(
            "eta must be nonnegative, got {eta}"
        )));
    }
    let plan = SeedPlan::new(cfg.seed);
    let ensemble = match ensemble_path {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let loaded = AssetEnsemble::read_table(std::io::BufReader::new(file))
                .with_context(|| format!("loading ensemble {}", path.display()))?;
            cfg.assets = loaded.len();
            loaded
        }
        None => {
            cfg.validate()?;
            generate_ensemble_for_trial(
                &cfg.pareto_cost,
                &cfg.pareto_coeff,
                cfg.assets,
                &plan,
                trial,
            )?
        }
    };
    cfg.validate()?;
    let cfg = &cfg;
    let n = ensemble.len();
    let returns =
        generate_returns_with(&ensemble, cfg.periods, cfg.return_distribution, &plan, trial)?;

    if let Some(path) = dump_ensemble {
        let mut buffer = Vec::new();
        ensemble.write_table(&mut buffer)?;
        write_file(path, std::str::from_utf8(&buffer).unwrap())?;
    }
    if let Some(path) = dump_returns {
        let mut buffer = Vec::new();
        returns.write_table(&mut buffer)?;
        write_file(path, std::str::from_utf8(&buffer).unwrap())?;
    }

    let wishart = build_wishart(&returns);
    if let Some(path) = dump_wishart {
        let mut buffer = Vec::new();
        wishart.write_table(&mut buffer)?;
        write_file(path, std::str::from_utf8(&buffer).unwrap())?;
    }

    let closed = optimal_portfolio_closed_form(&wishart, &ensemble.costs, eta)?;
    let risk = RiskModel::Dense(wishart);
    let instance = ProblemInstance::new(&risk, &ensemble.costs, eta)?;
    let descended = match trace_path {
        Some(path) => {
            let (outcome, trace) = run_descent_traced(&instance, &cfg.descent, trace_every)?;
            write_file(path, &riskcost::descent::render_trace(&trace))?;
            outcome
        }
        None => run_descent(&instance, &cfg.descent)?,
    };

    print_diff_report(cfg, n, eta, trial, &closed, &descended, &cfg.descent);
    Ok(ExitCode::SUCCESS)
}

fn print_diff_report(
    cfg: &ExperimentConfig,
    n: usize,
    eta: f64,
    trial: u32,
    closed: &OptimizationOutcome,
    descended: &OptimizationOutcome,
    descent_cfg: &DescentConfig,
) {
    let weight_gap = (&closed.portfolio.weights - &descended.portfolio.weights).amax();
    println!(
        "instance: assets={} periods={} alpha={:.6} eta={} trial={} seed={}",
        n,
        cfg.periods,
        cfg.periods as f64 / n as f64,
        eta,
        trial,
        cfg.seed
    );
    println!(
        "descent: rate_w={:.3e} rate_k={:.3e} delta={:.3e}",
        descent_cfg.rate_w, descent_cfg.rate_k, descent_cfg.tolerance
    );
    println!("{:<12} {:>16} {:>16} {:>10}", "metric", "closed-form", "descent", "|gap|");
    let line = |name: &str, a: f64, b: f64| {
        println!(
            "{:<12} {:>16.8e} {:>16.8e} {:>10.2e}",
            name,
            a,
            b,
            (a - b).abs()
        );
    };
    line("epsilon", closed.epsilon, descended.epsilon);
    line("q_w", closed.concentration, descended.concentration);
    line("multiplier", closed.multiplier, descended.multiplier);
    line(
        "budget",
        closed.portfolio.budget_residual(),
        descended.portfolio.budget_residual(),
    );
    println!("{:<12} {:>16} {:>16}", "iterations", closed.iterations, descended.iterations);
    println!("{:<12} {:>16} {:>16.2e}", "final_delta", "-", descended.residual);
    println!("max weight gap: {weight_gap:.3e}");
}

fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path, config_path: Option<&Path>) -> Result<ExitCode> {
    cfg.validate()?;
    let result: SweepResult = run_sweep(cfg)?;
    let table_path = out_dir.join("sweep.dat");
    write_file(&table_path, &render_table(&result))?;

    // theory-only companion over the same grid
    let stats = theory_bracket_stats(cfg)?;
    let rows = theory_rows(&stats, cfg.alpha(), &cfg.eta_grid())?;
    write_file(&out_dir.join("sweep_theory.dat"), &render_theory_table(&rows))?;

    write_manifest(
        &out_dir.join("sweep.meta.toml"),
        "sweep",
        cfg,
        config_path,
        &table_path,
        Some(result.wall_seconds),
    )?;

    println!(
        "wrote {} ({} grid points x {} trials, {:.2}s)",
        table_path.display(),
        result.rows.len(),
        cfg.trials,
        result.wall_seconds
    );
    if result.has_failures() {
        for failure in result.failures.iter().take(10) {
            eprintln!(
                "failed cell: trial {} eta {}: {}",
                failure.trial, failure.eta, failure.message
            );
        }
        eprintln!(
            "{} of {} cells failed; affected rows use fewer trials",
            result.failures.len(),
            cfg.trials * result.rows.len()
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(only: Option<&str>) -> Result<ExitCode> {
    let selected: Vec<_> = validation::CHECKS
        .iter()
        .filter(|(name, _)| only.is_none_or(|filter| name.contains(filter)))
        .collect();
    if selected.is_empty() {
        bail!(RiskError::Usage(format!(
            "no validation check matches {only:?}"
        )));
    }
    let reports: Vec<validation::CriterionReport> =
        selected.iter().map(|(_, check)| check()).collect();
    let mut all_passed = true;
    for report in &reports {
        let verdict = if report.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}", report.name);
        for line in report.details.lines() {
            println!("  {line}");
        }
        all_passed &= report.passed;
    }
    if all_passed {
        println!("all {} checks passed", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("some checks failed");
        Ok(ExitCode::from(1))
    }
}
