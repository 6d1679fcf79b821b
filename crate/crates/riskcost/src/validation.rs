//! End-to-end checks behind the `validate` CLI subcommand and the
//! acceptance test suite. Each check is deterministic (fixed internal
//! seeds) and reports pass/fail with a short account of the margins.

use std::sync::OnceLock;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::descent::{
    lagrangian_gradient, run_descent_from, DescentConfig, DescentState, ProblemInstance,
};
use crate::exact::{lagrange_epsilon, lagrange_qw, quenched_moments, ClosedFormSolver};
use crate::experiment::{render_table, run_sweep, ExperimentConfig, SolverChoice, SweepResult};
use crate::market::{
    ensemble_stats, generate_ensemble, generate_ensemble_for_trial, inverse_pareto_sample,
    pareto_moment, EnsembleStats, ParetoParams,
};
use crate::replica::{
    annealed_epsilon, cost_statistics, predicted_inverse_moments, replica_epsilon, replica_qw,
    return_variant_epsilon,
};
use crate::rng::{SeedPlan, StreamPurpose};
use crate::scenario::{build_wishart, generate_returns_with, ReturnDistribution, RiskModel};

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CriterionReport {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl CriterionReport {
    fn new(name: &'static str, passed: bool, details: String) -> Self {
        CriterionReport {
            name,
            passed,
            details,
        }
    }
}

fn reference_pareto() -> ParetoParams {
    ParetoParams {
        power: 2.0,
        lower: 1.0,
        upper: 4.0,
    }
}

/// The reduced-scale reproduction run: `N = 250`, `α = 3`, 20 trials,
/// `η ∈ {0, 10, 20, 30, 40, 50}`, closed-form solver.
pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig {
        assets: 250,
        periods: 750,
        eta_min: 0.0,
        eta_max: 50.0,
        eta_step: 10.0,
        trials: 20,
        solver: SolverChoice::ClosedForm,
        seed: 1729,
        ..ExperimentConfig::default()
    }
}

fn reference_sweep() -> &'static SweepResult {
    static SWEEP: OnceLock<SweepResult> = OnceLock::new();
    SWEEP.get_or_init(|| run_sweep(&reference_config()).expect("reference sweep failed"))
}

/// Empirical mean ε(η) within max(3 standard errors, 2% relative) of the
/// closed form at every grid point, in under five minutes.
pub fn sweep_epsilon_matches_theory() -> CriterionReport {
    let sweep = reference_sweep();
    let mut details = String::new();
    let mut passed = true;
    for row in &sweep.rows {
        let theory = row.theory.epsilon_quenched;
        let gap = (row.epsilon.mean - theory).abs();
        let allowed = (3.0 * row.epsilon.std_err).max(0.02 * theory.abs());
        if gap > allowed {
            passed = false;
        }
        details.push_str(&format!(
            "eta {:>5.1}: mean {:.6} theory {:.6} gap {:.2e} allowed {:.2e}\n",
            row.eta, row.epsilon.mean, theory, gap, allowed
        ));
    }
    if sweep.wall_seconds > 300.0 {
        passed = false;
        details.push_str(&format!("run took {:.1}s > 300s\n", sweep.wall_seconds));
    } else {
        details.push_str(&format!("run took {:.2}s\n", sweep.wall_seconds));
    }
    CriterionReport::new("sweep-epsilon-vs-theory", passed, details)
}

/// Empirical mean q_w(η) within max(3 standard errors, 3% relative) of the
/// closed form at every grid point.
pub fn sweep_concentration_matches_theory() -> CriterionReport {
    let sweep = reference_sweep();
    let mut details = String::new();
    let mut passed = true;
    for row in &sweep.rows {
        let theory = row.theory.qw_quenched;
        let gap = (row.concentration.mean - theory).abs();
        let allowed = (3.0 * row.concentration.std_err).max(0.03 * theory.abs());
        if gap > allowed {
            passed = false;
        }
        details.push_str(&format!(
            "eta {:>5.1}: mean {:.6} theory {:.6} gap {:.2e} allowed {:.2e}\n",
            row.eta, row.concentration.mean, theory, gap, allowed
        ));
    }
    CriterionReport::new("sweep-concentration-vs-theory", passed, details)
}

/// Descent and closed-form solvers agree on 20 random instances
/// (`N = 100`, `α = 3`, `η ∈ {0, 2, 10}`): ε within 10⁻⁵, weights within
/// 10⁻⁴ in the max norm.
pub fn solver_cross_validation() -> CriterionReport {
    let pareto = reference_pareto();
    let plan = SeedPlan::new(4242);
    let etas = [0.0, 2.0, 10.0];
    // a tighter stop than the sweep default buys an order of magnitude of
    // margin on the agreement thresholds
    let cfg = DescentConfig {
        tolerance: 1e-7,
        ..DescentConfig::default()
    };
    let outcomes: Vec<(f64, f64)> = (0..20u32)
        .into_par_iter()
        .flat_map_iter(|trial| {
            let ensemble =
                generate_ensemble_for_trial(&pareto, &pareto, 100, &plan, trial).unwrap();
            let x = generate_returns_with(
                &ensemble,
                300,
                ReturnDistribution::Gaussian,
                &plan,
                trial,
            )
            .unwrap();
            let j = build_wishart(&x);
            let closed = ClosedFormSolver::new(&j, &ensemble.costs).unwrap();
            let risk = RiskModel::Dense(j);
            let mut gaps = Vec::with_capacity(etas.len());
            let mut state = DescentState::initial(&cfg, 100).unwrap();
            for (index, &eta) in etas.iter().enumerate() {
                let instance = ProblemInstance::new(&risk, &ensemble.costs, eta).unwrap();
                let step_cfg = DescentConfig {
                    check_stability: index == 0,
                    ..cfg.clone()
                };
                let descended = run_descent_from(state, &instance, &step_cfg).unwrap();
                let exact = closed.outcome(eta).unwrap();
                let eps_gap = (descended.epsilon - exact.epsilon).abs();
                let weight_gap =
                    (&descended.portfolio.weights - &exact.portfolio.weights).amax();
                state = DescentState::warm(
                    descended.portfolio.weights.clone(),
                    descended.multiplier,
                );
                gaps.push((eps_gap, weight_gap));
            }
            gaps
        })
        .collect();
    let worst_eps = outcomes.iter().map(|g| g.0).fold(0.0, f64::max);
    let worst_weight = outcomes.iter().map(|g| g.1).fold(0.0, f64::max);
    let passed = worst_eps <= 1e-5 && worst_weight <= 1e-4;
    CriterionReport::new(
        "solver-cross-validation",
        passed,
        format!(
            "60 cells: worst epsilon gap {worst_eps:.3e} (limit 1e-5), \
             worst weight gap {worst_weight:.3e} (limit 1e-4)\n"
        ),
    )
}

/// At `N = 400`, `α = 3`, one Pareto ensemble, 10 disorder samples: each of
/// the six measured moments within 5% of its prediction, and the predicted
/// moments chained through the finite-`N` formulas reproduce the closed
/// forms to machine precision.
pub fn inverse_moment_identities() -> CriterionReport {
    let pareto = reference_pareto();
    let plan = SeedPlan::new(9001);
    let n = 400usize;
    let ensemble = generate_ensemble(&pareto, &pareto, n, 9001).unwrap();
    let stats = ensemble_stats(&ensemble).unwrap();
    let predicted = predicted_inverse_moments(&stats, 3.0).unwrap();

    let samples: Vec<[f64; 6]> = (0..10u32)
        .into_par_iter()
        .map(|trial| {
            let x = generate_returns_with(
                &ensemble,
                3 * n,
                ReturnDistribution::Gaussian,
                &plan,
                trial,
            )
            .unwrap();
            let j = build_wishart(&x);
            let m = quenched_moments(&j, &ensemble.costs).unwrap();
            [
                m.e_inv_e, m.e_inv_c, m.c_inv_c, m.e_inv2_e, m.e_inv2_c, m.c_inv2_c,
            ]
        })
        .collect();
    let mean = |index: usize| samples.iter().map(|s| s[index]).sum::<f64>() / samples.len() as f64;
    let predictions = [
        predicted.e_inv_e,
        predicted.e_inv_c,
        predicted.c_inv_c,
        predicted.e_inv2_e,
        predicted.e_inv2_c,
        predicted.c_inv2_c,
    ];
    let names = ["eJ-1e", "eJ-1c", "cJ-1c", "eJ-2e", "eJ-2c", "cJ-2c"];
    let mut details = String::new();
    let mut passed = true;
    for i in 0..6 {
        let measured = mean(i);
        let relative = (measured - predictions[i]).abs() / predictions[i].abs();
        if relative > 0.05 {
            passed = false;
        }
        details.push_str(&format!(
            "{}: measured {:.6} predicted {:.6} relative {:.3e}\n",
            names[i], measured, predictions[i], relative
        ));
    }

    let cs = cost_statistics(&stats).unwrap();
    for eta in [0.0, 2.5, 17.0] {
        let eps_gap = (lagrange_epsilon(&predicted, eta).unwrap()
            - replica_epsilon(&stats, &cs, 3.0, eta).unwrap())
        .abs()
            / replica_epsilon(&stats, &cs, 3.0, eta).unwrap().abs();
        let qw_gap = (lagrange_qw(&predicted, eta).unwrap()
            - replica_qw(&stats, &cs, 3.0, eta).unwrap())
        .abs()
            / replica_qw(&stats, &cs, 3.0, eta).unwrap().abs();
        if eps_gap > 1e-12 || qw_gap > 1e-12 {
            passed = false;
        }
        details.push_str(&format!(
            "chain eta {eta}: epsilon rel {eps_gap:.2e}, qw rel {qw_gap:.2e}\n"
        ));
    }
    CriterionReport::new("inverse-moment-identities", passed, details)
}

/// Quenched strictly below annealed on the `(α, η)` grid for the Pareto and
/// two-point ensembles, and the empirical quenched means sit below the
/// annealed curve.
pub fn quenched_annealed_gap() -> CriterionReport {
    let pareto = reference_pareto();
    let ensembles = [
        (
            "pareto",
            EnsembleStats::pareto_coupled(&pareto, &pareto).unwrap(),
        ),
        (
            "two-point",
            EnsembleStats::two_point((1.0, 1.0), (3.0, 2.0)).unwrap(),
        ),
    ];
    let mut passed = true;
    let mut details = String::new();
    for (label, stats) in &ensembles {
        let cs = cost_statistics(stats).unwrap();
        let mut worst_margin = f64::INFINITY;
        for alpha in [1.5, 2.0, 3.0, 5.0] {
            for eta in [0.0, 1.0, 10.0, 50.0] {
                let quenched = replica_epsilon(stats, &cs, alpha, eta).unwrap();
                let annealed = annealed_epsilon(stats, &cs, alpha, eta).unwrap();
                let margin = annealed - quenched;
                worst_margin = worst_margin.min(margin);
                if !(quenched < annealed) {
                    passed = false;
                    details.push_str(&format!(
                        "{label}: alpha {alpha} eta {eta}: {quenched} !< {annealed}\n"
                    ));
                }
            }
        }
        details.push_str(&format!("{label}: smallest gap {worst_margin:.6}\n"));
    }
    let sweep = reference_sweep();
    for row in &sweep.rows {
        if !(row.epsilon.mean < row.theory.epsilon_annealed) {
            passed = false;
            details.push_str(&format!(
                "empirical eta {}: mean {} not below annealed {}\n",
                row.eta, row.epsilon.mean, row.theory.epsilon_annealed
            ));
        }
    }
    details.push_str("empirical means below the annealed curve at every eta\n");
    CriterionReport::new("quenched-annealed-gap", passed, details)
}

/// `η = 0` recovers the costless pair exactly; `ε(η)/η` keeps decreasing
/// past `η = 10²`; the return-and-cost formula at `g = 0` matches the
/// cost-only formula to machine precision.
pub fn limit_recoveries() -> CriterionReport {
    let pareto = reference_pareto();
    let stats = EnsembleStats::pareto_coupled(&pareto, &pareto).unwrap();
    let cs = cost_statistics(&stats).unwrap();
    let mut passed = true;
    let mut details = String::new();

    for alpha in [1.5, 2.0, 3.0, 5.0] {
        let eps = replica_epsilon(&stats, &cs, alpha, 0.0).unwrap();
        let qw = replica_qw(&stats, &cs, alpha, 0.0).unwrap();
        let eps_expected = (alpha - 1.0) / (2.0 * stats.inv_v);
        let qw_expected = 1.0 / (alpha - 1.0) + stats.inv_v2 / (stats.inv_v * stats.inv_v);
        if eps != eps_expected || qw != qw_expected {
            passed = false;
            details.push_str(&format!("eta=0 recovery failed at alpha {alpha}\n"));
        }
    }
    details.push_str("eta=0 recovers the costless formulas exactly\n");

    let mut previous = f64::INFINITY;
    for exponent in 2..8 {
        let eta = 10f64.powi(exponent);
        let ratio = replica_epsilon(&stats, &cs, 3.0, eta).unwrap() / eta;
        if !(ratio < previous) {
            passed = false;
            details.push_str(&format!("cost ratio not decreasing at eta {eta}\n"));
        }
        previous = ratio;
    }
    details.push_str(&format!(
        "epsilon/eta decreasing through eta = 1e7 (last {previous:.3e})\n"
    ));

    let mut worst = 0.0f64;
    for eta in [0.0, 0.5, 3.0, 20.0, 100.0] {
        let with_return = return_variant_epsilon(&stats, 3.0, 0.0, eta).unwrap();
        let plain = replica_epsilon(&stats, &cs, 3.0, eta).unwrap();
        let relative = (with_return - plain).abs() / plain.abs();
        worst = worst.max(relative);
    }
    if worst > 1e-13 {
        passed = false;
    }
    details.push_str(&format!("g=0 reduction: worst relative gap {worst:.2e}\n"));
    CriterionReport::new("limit-recoveries", passed, details)
}

/// Analytic Lagrangian gradients match central finite differences (step
/// 10⁻⁶, directional derivatives) within 10⁻⁶ relative on 50 random
/// `N = 20` instances.
pub fn gradient_finite_difference() -> CriterionReport {
    let pareto = reference_pareto();
    let plan = SeedPlan::new(777);
    let step = 1e-6;
    let mut worst = 0.0f64;
    for trial in 0..50u32 {
        let ensemble = generate_ensemble_for_trial(&pareto, &pareto, 20, &plan, trial).unwrap();
        let x =
            generate_returns_with(&ensemble, 60, ReturnDistribution::Gaussian, &plan, trial)
                .unwrap();
        let risk = RiskModel::Dense(build_wishart(&x));
        let eta = 0.1 * trial as f64;
        let instance = ProblemInstance::new(&risk, &ensemble.costs, eta).unwrap();
        let mut probe = plan.stream(trial, StreamPurpose::Probe);
        let w = DVector::from_fn(20, |_, _| {
            1.0 + 0.5 * (rand::Rng::random::<f64>(&mut probe) - 0.5)
        });
        let k = 1.0 + rand::Rng::random::<f64>(&mut probe);
        let (grad_w, grad_k) = lagrangian_gradient(&w, k, &risk, &ensemble.costs, eta).unwrap();
        for _ in 0..3 {
            let direction = DVector::from_fn(20, |_, _| {
                rand::Rng::random::<f64>(&mut probe) - 0.5
            })
            .normalize();
            let analytic = grad_w.dot(&direction);
            let numeric = (instance.lagrangian(&(&w + &direction * step), k).unwrap()
                - instance.lagrangian(&(&w - &direction * step), k).unwrap())
                / (2.0 * step);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1e-3));
        }
        let numeric_k = (instance.lagrangian(&w, k + step).unwrap()
            - instance.lagrangian(&w, k - step).unwrap())
            / (2.0 * step);
        worst = worst.max((grad_k - numeric_k).abs() / grad_k.abs().max(1e-3));
    }
    CriterionReport::new(
        "gradient-finite-difference",
        worst <= 1e-6,
        format!("worst relative deviation {worst:.3e} (limit 1e-6)\n"),
    )
}

/// One million bounded-Pareto draws: sample `⟨c⟩`, `⟨c⁻¹⟩`, `⟨c⁻²⟩` within
/// three standard errors of the analytic moments.
pub fn sampler_moment_fidelity() -> CriterionReport {
    let pareto = reference_pareto();
    let plan = SeedPlan::new(123_456);
    let mut rng = plan.stream(0, StreamPurpose::Costs);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| inverse_pareto_sample(&pareto, rand::Rng::random::<f64>(&mut rng)).unwrap())
        .collect();
    let mut passed = true;
    let mut details = String::new();
    for (exponent, expected) in [
        (1.0, pareto_moment(&pareto, 1.0).unwrap()),
        (-1.0, 0.625),
        (-2.0, 0.4375),
    ] {
        let powered: Vec<f64> = draws.iter().map(|&c| c.powf(exponent)).collect();
        let m = powered.len() as f64;
        let mean = powered.iter().sum::<f64>() / m;
        let variance =
            powered.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
        let se = (variance / m).sqrt();
        let gap = (mean - expected).abs();
        if gap > 3.0 * se {
            passed = false;
        }
        details.push_str(&format!(
            "<c^{exponent}>: sample {mean:.7} expected {expected:.7} gap {gap:.2e} (3se {:.2e})\n",
            3.0 * se
        ));
    }
    CriterionReport::new("sampler-moment-fidelity", passed, details)
}

/// The same sweep config and seed produce byte-identical tables regardless
/// of the worker count.
pub fn sweep_determinism() -> CriterionReport {
    let cfg = ExperimentConfig {
        assets: 80,
        periods: 240,
        eta_min: 0.0,
        eta_max: 4.0,
        eta_step: 2.0,
        trials: 6,
        solver: SolverChoice::ClosedForm,
        seed: 31337,
        ..ExperimentConfig::default()
    };
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool")
            .install(|| run_sweep(&cfg).expect("sweep"))
    };
    let single = render_table(&run_with(1));
    let multi = render_table(&run_with(3));
    let repeat = render_table(&run_with(3));
    let passed = single == multi && multi == repeat;
    CriterionReport::new(
        "sweep-determinism",
        passed,
        format!(
            "tables byte-identical across worker counts: {}; across reruns: {}\n",
            single == multi,
            multi == repeat
        ),
    )
}

/// A named end-to-end check.
pub type Check = fn() -> CriterionReport;

/// The full checklist, in order, with the function backing each name.
pub const CHECKS: &[(&str, Check)] = &[
    ("sweep-epsilon-vs-theory", sweep_epsilon_matches_theory),
    (
        "sweep-concentration-vs-theory",
        sweep_concentration_matches_theory,
    ),
    ("solver-cross-validation", solver_cross_validation),
    ("inverse-moment-identities", inverse_moment_identities),
    ("quenched-annealed-gap", quenched_annealed_gap),
    ("limit-recoveries", limit_recoveries),
    ("gradient-finite-difference", gradient_finite_difference),
    ("sampler-moment-fidelity", sampler_moment_fidelity),
    ("sweep-determinism", sweep_determinism),
];

/// Run every check in order.
pub fn run_all() -> Vec<CriterionReport> {
    CHECKS.iter().map(|(_, check)| check()).collect()
}
