//! The on-disk configuration format: TOML with one section per module,
//! every key optional (absent keys take the reference defaults). Flags
//! override file values. A sweep's metadata sidecar embeds the same layout
//! under `[config]`, so a sidecar can be fed back through `--config`.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use riskcost::descent::DescentConfig;
use riskcost::experiment::{BracketSource, ExperimentConfig, SolverChoice};
use riskcost::market::ParetoParams;
use riskcost::scenario::ReturnDistribution;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub market: MarketSection,
    pub scenario: ScenarioSection,
    pub sweep: SweepSection,
    pub descent: DescentSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSection {
    pub assets: usize,
    pub pareto_cost: ParetoParams,
    pub pareto_coeff: ParetoParams,
    pub redraw_ensemble_per_trial: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub periods: usize,
    pub return_distribution: ReturnDistribution,
    pub dense_cap: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_step: f64,
    pub trials: usize,
    pub solver: SolverChoice,
    pub seed: u64,
    pub warm_start: bool,
    pub theory_brackets: BracketSource,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentSection {
    pub rate_w: f64,
    pub rate_k: f64,
    pub tolerance: f64,
    pub max_iterations: u64,
    pub initial_multiplier: f64,
    pub scale_tolerance_by_assets: bool,
    pub check_stability: bool,
}

impl Default for MarketSection {
    fn default() -> Self {
        let reference = ExperimentConfig::default();
        MarketSection {
            assets: reference.assets,
            pareto_cost: reference.pareto_cost,
            pareto_coeff: reference.pareto_coeff,
            redraw_ensemble_per_trial: reference.redraw_ensemble_per_trial,
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let reference = ExperimentConfig::default();
        ScenarioSection {
            periods: reference.periods,
            return_distribution: reference.return_distribution,
            dense_cap: reference.dense_cap,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        let reference = ExperimentConfig::default();
        SweepSection {
            eta_min: reference.eta_min,
            eta_max: reference.eta_max,
            eta_step: reference.eta_step,
            trials: reference.trials,
            solver: reference.solver,
            seed: reference.seed,
            warm_start: reference.warm_start,
            theory_brackets: reference.theory_brackets,
        }
    }
}

impl Default for DescentSection {
    fn default() -> Self {
        let reference = DescentConfig::default();
        DescentSection {
            rate_w: reference.rate_w,
            rate_k: reference.rate_k,
            tolerance: reference.tolerance,
            max_iterations: reference.max_iterations,
            initial_multiplier: reference.initial_multiplier,
            scale_tolerance_by_assets: reference.scale_tolerance_by_assets,
            check_stability: reference.check_stability,
        }
    }
}

impl From<&ExperimentConfig> for FileConfig {
    fn from(cfg: &ExperimentConfig) -> Self {
        FileConfig {
            market: MarketSection {
                assets: cfg.assets,
                pareto_cost: cfg.pareto_cost,
                pareto_coeff: cfg.pareto_coeff,
                redraw_ensemble_per_trial: cfg.redraw_ensemble_per_trial,
            },
            scenario: ScenarioSection {
                periods: cfg.periods,
                return_distribution: cfg.return_distribution,
                dense_cap: cfg.dense_cap,
            },
            sweep: SweepSection {
                eta_min: cfg.eta_min,
                eta_max: cfg.eta_max,
                eta_step: cfg.eta_step,
                trials: cfg.trials,
                solver: cfg.solver,
                seed: cfg.seed,
                warm_start: cfg.warm_start,
                theory_brackets: cfg.theory_brackets,
            },
            descent: DescentSection {
                rate_w: cfg.descent.rate_w,
                rate_k: cfg.descent.rate_k,
                tolerance: cfg.descent.tolerance,
                max_iterations: cfg.descent.max_iterations,
                initial_multiplier: cfg.descent.initial_multiplier,
                scale_tolerance_by_assets: cfg.descent.scale_tolerance_by_assets,
                check_stability: cfg.descent.check_stability,
            },
        }
    }
}

impl FileConfig {
    pub fn to_experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            assets: self.market.assets,
            periods: self.scenario.periods,
            pareto_cost: self.market.pareto_cost,
            pareto_coeff: self.market.pareto_coeff,
            eta_min: self.sweep.eta_min,
            eta_max: self.sweep.eta_max,
            eta_step: self.sweep.eta_step,
            trials: self.sweep.trials,
            solver: self.sweep.solver,
            descent: DescentConfig {
                rate_w: self.descent.rate_w,
                rate_k: self.descent.rate_k,
                tolerance: self.descent.tolerance,
                max_iterations: self.descent.max_iterations,
                initial_multiplier: self.descent.initial_multiplier,
                initial_weights: None,
                scale_tolerance_by_assets: self.descent.scale_tolerance_by_assets,
                check_stability: self.descent.check_stability,
            },
            seed: self.sweep.seed,
            redraw_ensemble_per_trial: self.market.redraw_ensemble_per_trial,
            return_distribution: self.scenario.return_distribution,
            dense_cap: self.scenario.dense_cap,
            warm_start: self.sweep.warm_start,
            theory_brackets: self.sweep.theory_brackets,
        }
    }
}

/// Load a config file, accepting either a bare config or a metadata sidecar
/// (the `[config]` subtree of a sidecar is used when present).
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))?;
    let config_value = match table.get("config") {
        Some(nested) => nested.clone(),
        None => toml::Value::Table(table),
    };
    let file: FileConfig = config_value
        .try_into()
        .with_context(|| format!("interpreting config {}", path.display()))?;
    Ok(file.to_experiment())
}
