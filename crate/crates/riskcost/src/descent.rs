//! Saddle-point steepest descent on the Lagrange function
//! `L(w, k) = ½wᵀJw + ηcᵀw + k(N − eᵀw)`: descent in the portfolio,
//! ascent in the budget multiplier, both gradients evaluated at the current
//! point (a simultaneous update).

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::OptimizationOutcome;
use crate::scenario::{hamiltonian, Portfolio, RiskModel};

/// Learning rates, stopping rule, and starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    /// Portfolio learning rate `γ_w`.
    pub rate_w: f64,
    /// Multiplier learning rate `γ_k`.
    pub rate_k: f64,
    /// Stopping threshold `δ` on the update magnitude
    /// `Δ = Σ|w_t − w_{t+1}| + |k_t − k_{t+1}|`.
    pub tolerance: f64,
    /// Safety cap on iterations.
    pub max_iterations: u64,
    /// Starting multiplier `k₀`.
    pub initial_multiplier: f64,
    /// Starting portfolio; equal weighting when `None`.
    #[serde(skip)]
    pub initial_weights: Option<DVector<f64>>,
    /// Use `Δ/N < δ` instead of the unnormalized criterion. Off by default:
    /// at large `N` the unnormalized 1-norm is a stringent per-component
    /// test, which is the intended behavior.
    pub scale_tolerance_by_assets: bool,
    /// Estimate `λ_max(J)` by power iteration before running and warn when
    /// `γ_w λ_max ≥ 2` (the divergence threshold).
    pub check_stability: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            rate_w: 1e-3,
            rate_k: 1e-3,
            tolerance: 1e-6,
            max_iterations: 10_000_000,
            initial_multiplier: 1.0,
            initial_weights: None,
            scale_tolerance_by_assets: false,
            check_stability: true,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_w > 0.0) || !(self.rate_k > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("stopping threshold must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("iteration cap must be at least 1".into()));
        }
        if !self.initial_multiplier.is_finite() {
            return Err(Error::Config("initial multiplier must be finite".into()));
        }
        Ok(())
    }
}

/// Current iterate of the coupled dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct DescentState {
    pub iteration: u64,
    pub weights: DVector<f64>,
    pub multiplier: f64,
    /// Update magnitude of the step that produced this state
    /// (`∞` for a fresh state).
    pub residual: f64,
}

impl DescentState {
    /// Fresh state at the configured starting point.
    pub fn initial(cfg: &DescentConfig, n: usize) -> Result<Self> {
        let weights = match &cfg.initial_weights {
            Some(w) => {
                if w.len() != n {
                    return Err(Error::Usage(format!(
                        "initial portfolio has {} weights, instance has {n}",
                        w.len()
                    )));
                }
                w.clone()
            }
            None => DVector::from_element(n, 1.0),
        };
        Ok(DescentState {
            iteration: 0,
            weights,
            multiplier: cfg.initial_multiplier,
            residual: f64::INFINITY,
        })
    }

    /// Continue from a previous solution (warm start), resetting the
    /// iteration counter.
    pub fn warm(weights: DVector<f64>, multiplier: f64) -> Self {
        DescentState {
            iteration: 0,
            weights,
            multiplier,
            residual: f64::INFINITY,
        }
    }
}

/// One minimization instance: risk matrix, costs, cost tolerance.
#[derive(Clone, Copy, Debug)]
pub struct ProblemInstance<'a> {
    pub risk: &'a RiskModel,
    pub costs: &'a [f64],
    pub eta: f64,
}

impl<'a> ProblemInstance<'a> {
    pub fn new(risk: &'a RiskModel, costs: &'a [f64], eta: f64) -> Result<Self> {
        if costs.len() != risk.n() {
            return Err(Error::Usage(format!(
                "dimension mismatch: risk matrix {}, costs {}",
                risk.n(),
                costs.len()
            )));
        }
        if !eta.is_finite() {
            return Err(Error::Usage("cost tolerance must be finite".into()));
        }
        Ok(ProblemInstance { risk, costs, eta })
    }

    pub fn n(&self) -> usize {
        self.risk.n()
    }

    /// `L(w, k)` at a point.
    pub fn lagrangian(&self, weights: &DVector<f64>, multiplier: f64) -> Result<f64> {
        let n = self.n() as f64;
        let h = hamiltonian(weights, self.risk, self.costs, self.eta)?;
        Ok(h + multiplier * (n - weights.sum()))
    }
}

/// Exact gradients of the Lagrange function:
/// `∇_w L = Jw + ηc − ke` and `∂L/∂k = N − eᵀw`.
pub fn lagrangian_gradient(
    weights: &DVector<f64>,
    multiplier: f64,
    risk: &RiskModel,
    costs: &[f64],
    eta: f64,
) -> Result<(DVector<f64>, f64)> {
    let n = risk.n();
    if weights.len() != n || costs.len() != n {
        return Err(Error::Usage(format!(
            "dimension mismatch: risk matrix {n}, weights {}, costs {}",
            weights.len(),
            costs.len()
        )));
    }
    let mut grad_w = risk.apply(weights);
    for i in 0..n {
        grad_w[i] += eta * costs[i] - multiplier;
    }
    let grad_k = n as f64 - weights.sum();
    Ok((grad_w, grad_k))
}

/// One simultaneous update: `w ← w − γ_w ∇_w L`, `k ← k + γ_k ∂L/∂k`, both
/// gradients at the incoming state; the residual is
/// `Δ = Σ|w_t − w_{t+1}| + |k_t − k_{t+1}|`.
pub fn descent_step(
    state: &DescentState,
    cfg: &DescentConfig,
    instance: &ProblemInstance,
) -> Result<DescentState> {
    let (grad_w, grad_k) = lagrangian_gradient(
        &state.weights,
        state.multiplier,
        instance.risk,
        instance.costs,
        instance.eta,
    )?;
    let weights = &state.weights - &grad_w * cfg.rate_w;
    let multiplier = state.multiplier + cfg.rate_k * grad_k;
    let iteration = state.iteration + 1;
    if !multiplier.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Divergence { iteration });
    }
    let mut residual = (multiplier - state.multiplier).abs();
    for i in 0..weights.len() {
        residual += (weights[i] - state.weights[i]).abs();
    }
    Ok(DescentState {
        iteration,
        weights,
        multiplier,
        residual,
    })
}

/// Deterministic power-iteration estimate of `λ_max(J)`.
pub fn estimate_lambda_max(risk: &RiskModel, iterations: usize) -> f64 {
    let n = risk.n();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15);
    let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let norm = v.norm();
    if norm == 0.0 || n == 0 {
        return 0.0;
    }
    v /= norm;
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let jv = risk.apply(&v);
        lambda = v.dot(&jv);
        let norm = jv.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = jv / norm;
    }
    lambda
}

/// Iterate from the default starting point until `Δ < δ` or the cap.
pub fn run_descent(instance: &ProblemInstance, cfg: &DescentConfig) -> Result<OptimizationOutcome> {
    let initial = DescentState::initial(cfg, instance.n())?;
    run_descent_from(initial, instance, cfg)
}

/// Iterate from an explicit state (used for warm starts across `η`).
pub fn run_descent_from(
    initial: DescentState,
    instance: &ProblemInstance,
    cfg: &DescentConfig,
) -> Result<OptimizationOutcome> {
    run_loop(initial, instance, cfg, None)
}

/// Like [`run_descent`], also logging `(iteration, Δ, L)` every
/// `sample_every` iterations.
pub fn run_descent_traced(
    instance: &ProblemInstance,
    cfg: &DescentConfig,
    sample_every: u64,
) -> Result<(OptimizationOutcome, Vec<TraceRow>)> {
    let initial = DescentState::initial(cfg, instance.n())?;
    let mut trace = Vec::new();
    let outcome = run_loop(initial, instance, cfg, Some((sample_every.max(1), &mut trace)))?;
    Ok((outcome, trace))
}

/// One sampled line of the iteration trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub residual: f64,
    pub lagrangian: f64,
}

/// Render trace rows as a columnar text table.
pub fn render_trace(rows: &[TraceRow]) -> String {
    let mut out = String::from("# iteration residual lagrangian\n");
    for row in rows {
        out.push_str(&format!(
            "{} {:.8e} {:.8e}\n",
            row.iteration, row.residual, row.lagrangian
        ));
    }
    out
}

fn run_loop(
    initial: DescentState,
    instance: &ProblemInstance,
    cfg: &DescentConfig,
    mut trace: Option<(u64, &mut Vec<TraceRow>)>,
) -> Result<OptimizationOutcome> {
    cfg.validate()?;
    let n = instance.n();
    if cfg.check_stability {
        let lambda = estimate_lambda_max(instance.risk, 30);
        if cfg.rate_w * lambda >= 2.0 {
            log::warn!(
                "descent likely unstable: rate_w * lambda_max = {:.3e} >= 2",
                cfg.rate_w * lambda
            );
        }
    }
    let divisor = if cfg.scale_tolerance_by_assets {
        n as f64
    } else {
        1.0
    };
    let mut state = initial;
    loop {
        state = descent_step(&state, cfg, instance)?;
        if let Some((every, rows)) = trace.as_mut() {
            if state.iteration.is_multiple_of(*every) {
                rows.push(TraceRow {
                    iteration: state.iteration,
                    residual: state.residual,
                    lagrangian: instance.lagrangian(&state.weights, state.multiplier)?,
                });
            }
        }
        if state.residual / divisor < cfg.tolerance {
            break;
        }
        if state.iteration >= cfg.max_iterations {
            return Err(Error::NonConvergence {
                state: Box::new(state),
            });
        }
    }
    let epsilon =
        hamiltonian(&state.weights, instance.risk, instance.costs, instance.eta)? / n as f64;
    let portfolio = Portfolio::new(state.weights);
    Ok(OptimizationOutcome {
        concentration: portfolio.concentration(),
        epsilon,
        multiplier: state.multiplier,
        iterations: state.iteration,
        residual: state.residual,
        portfolio,
    })
}
