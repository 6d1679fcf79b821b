//! The sweep protocol: for each of `M` independent disorder trials, walk the
//! `η` grid (warm-starting the descent solver from the previous optimum),
//! then aggregate per-`η` means and error bars and attach the closed-form
//! theory columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{run_descent_from, DescentConfig, DescentState, ProblemInstance};
use crate::error::{Error, Result};
use crate::exact::{ClosedFormSolver, OptimizationOutcome};
use crate::market::{
    ensemble_stats, generate_ensemble_for_trial, EnsembleStats, ParetoParams,
};
use crate::replica::{predict, ReplicaPrediction};
use crate::rng::{SeedPlan, SHARED_ENSEMBLE_TRIAL};
use crate::scenario::{generate_returns_with, ReturnDistribution, RiskModel};

/// Which optimizer fills the sweep cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    #[default]
    Descent,
    ClosedForm,
}

/// Where the theory columns take their bracket averages from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BracketSource {
    /// Analytic Pareto moments (pure theory curves).
    #[default]
    Analytic,
    /// Bracket averages pooled over the generated ensembles.
    Empirical,
}

/// Full description of one sweep run. The defaults give the reference
/// setting: `N = 1000`, `p = 3000` (`α = 3`), bounded Pareto `(2, 4, 1)` for
/// both costs and variance coefficients, `η` from 0 to 100 in steps of 2,
/// `M = 100` trials, steepest descent with `γ = 10⁻³`, `δ = 10⁻⁶`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub assets: usize,
    pub periods: usize,
    pub pareto_cost: ParetoParams,
    pub pareto_coeff: ParetoParams,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_step: f64,
    pub trials: usize,
    pub solver: SolverChoice,
    pub descent: DescentConfig,
    pub seed: u64,
    /// Redraw the asset ensemble for every trial (the default); when false,
    /// one ensemble is shared and only the returns are redrawn.
    pub redraw_ensemble_per_trial: bool,
    pub return_distribution: ReturnDistribution,
    /// Materialize the Wishart matrix densely only up to this many assets.
    pub dense_cap: usize,
    /// Warm-start each new `η` from the previous optimum (descent solver).
    pub warm_start: bool,
    pub theory_brackets: BracketSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            assets: 1000,
            periods: 3000,
            pareto_cost: ParetoParams {
                power: 2.0,
                lower: 1.0,
                upper: 4.0,
            },
            pareto_coeff: ParetoParams {
                power: 2.0,
                lower: 1.0,
                upper: 4.0,
            },
            eta_min: 0.0,
            eta_max: 100.0,
            eta_step: 2.0,
            trials: 100,
            solver: SolverChoice::Descent,
            descent: DescentConfig::default(),
            seed: 1,
            redraw_ensemble_per_trial: true,
            return_distribution: ReturnDistribution::Gaussian,
            dense_cap: 2000,
            warm_start: true,
            theory_brackets: BracketSource::Analytic,
        }
    }
}

impl ExperimentConfig {
    pub fn alpha(&self) -> f64 {
        self.periods as f64 / self.assets as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.pareto_cost.validate()?;
        self.pareto_coeff.validate()?;
        self.descent.validate()?;
        if self.assets < 2 {
            return Err(Error::Config(format!(
                "assets must be at least 2, got {}",
                self.assets
            )));
        }
        if self.periods <= self.assets {
            return Err(Error::Config(format!(
                "periods ({}) must exceed assets ({}) so that alpha > 1; the quenched \
                 theory columns are undefined otherwise",
                self.periods, self.assets
            )));
        }
        if !(self.eta_min >= 0.0) {
            return Err(Error::Config(format!(
                "eta_min must be nonnegative, got {}",
                self.eta_min
            )));
        }
        if self.eta_max < self.eta_min {
            return Err(Error::Config(format!(
                "eta_max ({}) below eta_min ({})",
                self.eta_max, self.eta_min
            )));
        }
        if !(self.eta_step > 0.0) {
            return Err(Error::Config(format!(
                "eta_step must be positive, got {}",
                self.eta_step
            )));
        }
        if self.trials < 1 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        if self.solver == SolverChoice::ClosedForm && self.assets > self.dense_cap {
            return Err(Error::Config(format!(
                "closed-form solver needs a dense matrix: assets ({}) exceed dense_cap ({})",
                self.assets, self.dense_cap
            )));
        }
        Ok(())
    }

    /// The `η` grid: `eta_min + j·eta_step` for `j = 0..=floor((max−min)/step)`.
    pub fn eta_grid(&self) -> Vec<f64> {
        let count = ((self.eta_max - self.eta_min) / self.eta_step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|j| self.eta_min + j as f64 * self.eta_step)
            .collect()
    }

    /// Theory brackets per configuration; `per_trial` are the empirical
    /// stats gathered during the run.
    fn theory_stats(&self, per_trial: &[EnsembleStats]) -> Result<EnsembleStats> {
        match self.theory_brackets {
            BracketSource::Analytic => {
                EnsembleStats::pareto_coupled(&self.pareto_cost, &self.pareto_coeff)
            }
            BracketSource::Empirical => EnsembleStats::pool(per_trial),
        }
    }
}

/// Mean and dispersion of one observable across trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n−1 denominator); 0 when undefined.
    pub std_dev: f64,
    /// Standard error of the mean; 0 when undefined.
    pub std_err: f64,
    pub count: usize,
    /// False when fewer than two values made the dispersion meaningful.
    pub dispersion_defined: bool,
}

/// Mean and standard error over a non-empty slice.
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Usage("cannot aggregate an empty list".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(Aggregate {
            mean,
            std_dev: 0.0,
            std_err: 0.0,
            count: 1,
            dispersion_defined: false,
        });
    }
    let variance =
        values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let std_dev = variance.sqrt();
    Ok(Aggregate {
        mean,
        std_dev,
        std_err: std_dev / (n as f64).sqrt(),
        count: n,
        dispersion_defined: true,
    })
}

/// One aggregated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub epsilon: Aggregate,
    pub concentration: Aggregate,
    pub theory: ReplicaPrediction,
    /// Trials that produced a value at this `η`.
    pub trials_used: usize,
}

/// A failed `(trial, η)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub trial: u32,
    pub eta: f64,
    pub message: String,
}

/// Aggregated sweep output plus run metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
    /// Wall-clock duration; excluded from the rendered table so that runs
    /// stay byte-identical.
    pub wall_seconds: f64,
}

impl SweepResult {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct CellValue {
    epsilon: f64,
    concentration: f64,
}

/// Outcome of one `(trial, η)` cell, with the full portfolio.
///
/// With the descent solver and warm starts enabled the trial walks the `η`
/// ladder up to the requested point first, exactly as the sweep does, so a
/// sweep cell and `run_trial` agree bit for bit.
pub fn run_trial(cfg: &ExperimentConfig, eta: f64, trial: u32) -> Result<OptimizationOutcome> {
    cfg.validate()?;
    if !(eta >= 0.0) {
        return Err(Error::Usage(format!("eta must be nonnegative, got {eta}")));
    }
    let plan = SeedPlan::new(cfg.seed);
    let mut ladder: Vec<f64> = cfg
        .eta_grid()
        .into_iter()
        .filter(|&grid_eta| grid_eta < eta - 1e-12)
        .collect();
    ladder.push(eta);
    let target = ladder.len() - 1;
    let mut wanted: Option<std::result::Result<OptimizationOutcome, String>> = None;
    trial_ladder(cfg, &plan, trial, &ladder, |index, outcome| {
        if index == target {
            wanted = Some(outcome);
        }
        Ok(())
    })?
    .map_err(|message| tag_cell_error(trial, eta, message))?;
    match wanted {
        Some(Ok(outcome)) => Ok(outcome),
        Some(Err(message)) => Err(tag_cell_error(trial, eta, message)),
        None => Err(Error::Usage("trial produced no outcome".into())),
    }
}

fn tag_cell_error(trial: u32, eta: f64, message: String) -> Error {
    Error::Usage(format!("trial {trial}, eta {eta}: {message}"))
}

/// Walk the `η` ladder for one trial, handing each outcome to `sink`.
///
/// Returns `Ok(Err(message))` when the instance itself could not be built
/// (the sink is not called in that case); per-`η` solver failures are passed
/// to the sink as `Err` and the ladder continues from a cold start.
fn trial_ladder(
    cfg: &ExperimentConfig,
    plan: &SeedPlan,
    trial: u32,
    etas: &[f64],
    mut sink: impl FnMut(usize, std::result::Result<OptimizationOutcome, String>) -> Result<()>,
) -> Result<std::result::Result<EnsembleStats, String>> {
    let ensemble_trial = if cfg.redraw_ensemble_per_trial {
        trial
    } else {
        SHARED_ENSEMBLE_TRIAL
    };
    let setup = (|| -> Result<_> {
        let ensemble = generate_ensemble_for_trial(
            &cfg.pareto_cost,
            &cfg.pareto_coeff,
            cfg.assets,
            plan,
            ensemble_trial,
        )?;
        let stats = ensemble_stats(&ensemble)?;
        let returns = generate_returns_with(
            &ensemble,
            cfg.periods,
            cfg.return_distribution,
            plan,
            trial,
        )?;
        Ok((ensemble, stats, RiskModel::from_returns(returns, cfg.dense_cap)))
    })();
    let (ensemble, stats, risk) = match setup {
        Ok(parts) => parts,
        Err(e) => return Ok(Err(e.to_string())),
    };

    match cfg.solver {
        SolverChoice::ClosedForm => {
            let dense = risk
                .as_dense()
                .ok_or_else(|| Error::Config("closed-form solver needs a dense matrix".into()))?;
            match ClosedFormSolver::new(dense, &ensemble.costs) {
                Ok(solver) => {
                    for (index, &eta) in etas.iter().enumerate() {
                        sink(index, solver.outcome(eta).map_err(|e| e.to_string()))?;
                    }
                }
                Err(e) => {
                    let message = e.to_string();
                    for index in 0..etas.len() {
                        sink(index, Err(message.clone()))?;
                    }
                }
            }
        }
        SolverChoice::Descent => {
            let mut carried: Option<(nalgebra::DVector<f64>, f64)> = None;
            for (index, &eta) in etas.iter().enumerate() {
                let instance = ProblemInstance::new(&risk, &ensemble.costs, eta)
                    .map_err(|e| Error::Usage(e.to_string()))?;
                // the stability estimate depends only on J: run it once
                let descent_cfg = DescentConfig {
                    check_stability: cfg.descent.check_stability && index == 0,
                    ..cfg.descent.clone()
                };
                let state = match (cfg.warm_start, carried.take()) {
                    (true, Some((weights, multiplier))) => {
                        DescentState::warm(weights, multiplier)
                    }
                    _ => DescentState::initial(&descent_cfg, cfg.assets)?,
                };
                match run_descent_from(state, &instance, &descent_cfg) {
                    Ok(outcome) => {
                        carried = Some((
                            outcome.portfolio.weights.clone(),
                            outcome.multiplier,
                        ));
                        sink(index, Ok(outcome))?;
                    }
                    Err(e) => {
                        carried = None;
                        sink(index, Err(e.to_string()))?;
                    }
                }
            }
        }
    }
    Ok(Ok(stats))
}

/// The full protocol: all `(trial, η)` cells, per-`η` aggregation, theory
/// columns. Trials run in parallel; the reduction is in trial order, so the
/// result does not depend on the worker count.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let plan = SeedPlan::new(cfg.seed);
    let etas = cfg.eta_grid();

    struct TrialOutput {
        cells: Vec<std::result::Result<CellValue, String>>,
        stats: Option<EnsembleStats>,
    }

    let trial_outputs: Vec<TrialOutput> = (0..cfg.trials as u32)
        .into_par_iter()
        .map(|trial| {
            let mut cells: Vec<std::result::Result<CellValue, String>> =
                Vec::with_capacity(etas.len());
            let ladder = trial_ladder(cfg, &plan, trial, &etas, |_, outcome| {
                cells.push(outcome.map(|out| CellValue {
                    epsilon: out.epsilon,
                    concentration: out.concentration,
                }));
                Ok(())
            });
            match ladder {
                Ok(Ok(stats)) => TrialOutput {
                    cells,
                    stats: Some(stats),
                },
                Ok(Err(message)) => TrialOutput {
                    cells: vec![Err(message); etas.len()],
                    stats: None,
                },
                Err(e) => TrialOutput {
                    cells: vec![Err(e.to_string()); etas.len()],
                    stats: None,
                },
            }
        })
        .collect();

    let mut failures = Vec::new();
    for (trial, output) in trial_outputs.iter().enumerate() {
        for (j, cell) in output.cells.iter().enumerate() {
            if let Err(message) = cell {
                failures.push(CellFailure {
                    trial: trial as u32,
                    eta: etas[j],
                    message: message.clone(),
                });
            }
        }
    }
    let total_cells = cfg.trials * etas.len();
    if failures.len() * 10 > total_cells {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: total_cells,
        });
    }

    let per_trial_stats: Vec<EnsembleStats> = trial_outputs
        .iter()
        .filter_map(|output| output.stats)
        .collect();
    let theory_stats = cfg.theory_stats(&per_trial_stats)?;
    let alpha = cfg.alpha();

    let mut rows = Vec::with_capacity(etas.len());
    for (j, &eta) in etas.iter().enumerate() {
        let mut eps_values = Vec::with_capacity(cfg.trials);
        let mut qw_values = Vec::with_capacity(cfg.trials);
        for output in &trial_outputs {
            if let Ok(cell) = &output.cells[j] {
                eps_values.push(cell.epsilon);
                qw_values.push(cell.concentration);
            }
        }
        if eps_values.is_empty() {
            return Err(Error::TooManyFailures {
                failed: failures.len(),
                total: total_cells,
            });
        }
        rows.push(SweepRow {
            eta,
            epsilon: aggregate(&eps_values)?,
            concentration: aggregate(&qw_values)?,
            theory: predict(&theory_stats, alpha, eta)?,
            trials_used: eps_values.len(),
        });
    }

    Ok(SweepResult {
        config: cfg.clone(),
        rows,
        failures,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Render the sweep table: one row per `η`, 9 significant digits,
/// gnuplot-ready.
pub fn render_table(result: &SweepResult) -> String {
    let mut out = String::from(
        "# eta eps_mean eps_stderr eps_std qw_mean qw_stderr qw_std \
         eps_replica qw_replica eps_annealed qw_annealed n_trials\n",
    );
    for row in &result.rows {
        out.push_str(&format!(
            "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {}\n",
            row.eta,
            row.epsilon.mean,
            row.epsilon.std_err,
            row.epsilon.std_dev,
            row.concentration.mean,
            row.concentration.std_err,
            row.concentration.std_dev,
            row.theory.epsilon_quenched,
            row.theory.qw_quenched,
            row.theory.epsilon_annealed,
            row.theory.qw_annealed,
            row.trials_used,
        ));
    }
    out
}
