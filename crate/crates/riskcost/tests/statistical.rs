//! Statistical properties that need full-size runs: descent against the
//! costless closed form, self-averaging with growing `N`, and robustness of
//! the closed forms to the return distribution.

use riskcost::experiment::{run_sweep, ExperimentConfig, SolverChoice};
use riskcost::market::ParetoParams;
use riskcost::scenario::ReturnDistribution;

fn point_mass_unit() -> ParetoParams {
    ParetoParams {
        power: 2.0,
        lower: 1.0,
        upper: 1.0,
    }
}

#[test]
fn descent_reproduces_costless_theory_at_scale() {
    // v = 1 everywhere, η = 0: theory says ε = (α−1)/2 = 1 exactly
    let cfg = ExperimentConfig {
        assets: 500,
        periods: 1500,
        pareto_cost: point_mass_unit(),
        pareto_coeff: point_mass_unit(),
        eta_min: 0.0,
        eta_max: 0.0,
        eta_step: 1.0,
        trials: 20,
        solver: SolverChoice::Descent,
        seed: 60601,
        ..ExperimentConfig::default()
    };
    let result = run_sweep(&cfg).unwrap();
    assert!(!result.has_failures());
    let row = &result.rows[0];
    assert_eq!(row.theory.epsilon_quenched, 1.0);
    let gap = (row.epsilon.mean - 1.0).abs();
    assert!(
        gap <= 3.0 * row.epsilon.std_err,
        "mean {} is {:.2} standard errors from 1.0",
        row.epsilon.mean,
        gap / row.epsilon.std_err
    );
}

#[test]
fn dispersion_shrinks_with_system_size() {
    let base = ExperimentConfig {
        eta_min: 0.0,
        eta_max: 10.0,
        eta_step: 10.0,
        trials: 20,
        solver: SolverChoice::ClosedForm,
        seed: 808,
        ..ExperimentConfig::default()
    };
    let small = run_sweep(&ExperimentConfig {
        assets: 100,
        periods: 300,
        ..base.clone()
    })
    .unwrap();
    let large = run_sweep(&ExperimentConfig {
        assets: 400,
        periods: 1200,
        ..base
    })
    .unwrap();
    for (row_small, row_large) in small.rows.iter().zip(&large.rows) {
        assert_eq!(row_small.eta, row_large.eta);
        assert!(
            row_large.epsilon.std_dev < row_small.epsilon.std_dev,
            "eta {}: std {} at N=400 not below {} at N=100",
            row_small.eta,
            row_large.epsilon.std_dev,
            row_small.epsilon.std_dev
        );
        assert!(row_large.concentration.std_dev < row_small.concentration.std_dev);
    }
}

#[test]
fn closed_forms_hold_under_two_point_returns() {
    // the theory depends on the returns only through mean and variance
    let cfg = ExperimentConfig {
        assets: 250,
        periods: 750,
        eta_min: 0.0,
        eta_max: 20.0,
        eta_step: 10.0,
        trials: 12,
        solver: SolverChoice::ClosedForm,
        return_distribution: ReturnDistribution::TwoPoint,
        seed: 550,
        ..ExperimentConfig::default()
    };
    let result = run_sweep(&cfg).unwrap();
    for row in &result.rows {
        let theory = row.theory.epsilon_quenched;
        let allowed = (3.0 * row.epsilon.std_err).max(0.02 * theory);
        assert!(
            (row.epsilon.mean - theory).abs() <= allowed,
            "eta {}: mean {} vs theory {theory}",
            row.eta,
            row.epsilon.mean
        );
    }
}
