//! Exact minimization of the Lagrange function via linear solves.
//!
//! The optimum under the budget constraint is `w* = J⁻¹(k*e − ηc)` with the
//! multiplier `k*` fixed by `eᵀw* = N`. Everything is expressed through six
//! moments of `J⁻¹` and `J⁻²`, obtained from two symmetric-positive-definite
//! solves; no inverse is ever formed.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scenario::{Portfolio, WishartMatrix};

/// The six bilinear moments `(1/N)·uᵀJ⁻ᵏv` for `u, v ∈ {e, c}` and
/// `k ∈ {1, 2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuenchedMoments {
    /// `(1/N) eᵀJ⁻¹e`
    pub e_inv_e: f64,
    /// `(1/N) eᵀJ⁻¹c`
    pub e_inv_c: f64,
    /// `(1/N) cᵀJ⁻¹c`
    pub c_inv_c: f64,
    /// `(1/N) eᵀJ⁻²e`
    pub e_inv2_e: f64,
    /// `(1/N) eᵀJ⁻²c`
    pub e_inv2_c: f64,
    /// `(1/N) cᵀJ⁻²c`
    pub c_inv2_c: f64,
}

/// Result of one optimization, by either solver.
#[derive(Clone, Debug)]
pub struct OptimizationOutcome {
    pub portfolio: Portfolio,
    /// Lagrange multiplier `k*` of the budget constraint.
    pub multiplier: f64,
    /// Realized risk-with-cost per asset, `H(w*)/N`.
    pub epsilon: f64,
    /// Realized investment concentration `q_w = (1/N) Σ w_i²`.
    pub concentration: f64,
    /// Iterations used (0 for the closed form).
    pub iterations: u64,
    /// Final update residual (0 for the closed form).
    pub residual: f64,
}

/// Relative pivot threshold below which `J` is declared singular.
const PIVOT_RATIO_FLOOR: f64 = 1e-12;

enum Factorization {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(nalgebra::LU<f64, Dyn, Dyn>),
}

/// One factorization of `J`, reused across right-hand sides.
pub struct SpdSolver {
    factorization: Factorization,
    n: usize,
}

impl SpdSolver {
    pub fn new(j: &WishartMatrix) -> Result<Self> {
        let n = j.n();
        match Cholesky::new(j.matrix().clone()) {
            Some(chol) => {
                check_pivots(&chol.l_dirty().diagonal(), 2.0)?;
                Ok(SpdSolver {
                    factorization: Factorization::Cholesky(chol),
                    n,
                })
            }
            None => {
                // a>1 guarantees definiteness only almost surely
                let lu = j.matrix().clone().lu();
                let diag = lu.u().diagonal();
                check_pivots(&diag, 1.0)?;
                let (max, min) = pivot_extremes(&diag, 1.0);
                log::warn!(
                    "Cholesky failed on {n}x{n} matrix; using LU (pivot ratio {:.3e})",
                    min / max
                );
                Ok(SpdSolver {
                    factorization: Factorization::Lu(lu),
                    n,
                })
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.factorization {
            Factorization::Cholesky(chol) => Ok(chol.solve(rhs)),
            Factorization::Lu(lu) => lu
                .solve(rhs)
                .ok_or_else(|| Error::NearSingular("LU solve failed".into())),
        }
    }
}

fn pivot_extremes(diag: &DVector<f64>, exponent: f64) -> (f64, f64) {
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for &d in diag.iter() {
        let pivot = d.abs().powf(exponent);
        max = max.max(pivot);
        min = min.min(pivot);
    }
    (max, min)
}

fn check_pivots(diag: &DVector<f64>, exponent: f64) -> Result<()> {
    let (max, min) = pivot_extremes(diag, exponent);
    if !(max > 0.0) || !min.is_finite() || min < PIVOT_RATIO_FLOOR * max {
        return Err(Error::NearSingular(format!(
            "pivot ratio {:.3e} below {PIVOT_RATIO_FLOOR:.0e}",
            min / max
        )));
    }
    Ok(())
}

fn dims_check(j: &WishartMatrix, costs: &[f64]) -> Result<()> {
    if costs.len() != j.n() {
        return Err(Error::Usage(format!(
            "dimension mismatch: matrix {}, costs {}",
            j.n(),
            costs.len()
        )));
    }
    Ok(())
}

/// The six moments from two solves `J y = e`, `J z = c`; the `J⁻²` forms are
/// the inner products of `y` and `z` (equivalently one more solve each),
/// so `J` is never squared.
pub fn quenched_moments(j: &WishartMatrix, costs: &[f64]) -> Result<QuenchedMoments> {
    dims_check(j, costs)?;
    let solver = SpdSolver::new(j)?;
    Ok(moments_from_solves(&solver, costs)?.0)
}

fn moments_from_solves(
    solver: &SpdSolver,
    costs: &[f64],
) -> Result<(QuenchedMoments, DVector<f64>, DVector<f64>)> {
    let n = solver.n() as f64;
    let e = DVector::from_element(solver.n(), 1.0);
    let c = DVector::from_column_slice(costs);
    let y = solver.solve(&e)?;
    let z = solver.solve(&c)?;
    let moments = QuenchedMoments {
        e_inv_e: e.dot(&y) / n,
        e_inv_c: e.dot(&z) / n,
        c_inv_c: c.dot(&z) / n,
        e_inv2_e: y.dot(&y) / n,
        e_inv2_c: y.dot(&z) / n,
        c_inv2_c: z.dot(&z) / n,
    };
    Ok((moments, y, z))
}

/// Minimal risk-with-cost per asset,
/// `ε = ½(1 + η·m_ec)²/m_ee − ½η²·m_cc` over the `J⁻¹` moments.
pub fn lagrange_epsilon(moments: &QuenchedMoments, eta: f64) -> Result<f64> {
    if !(moments.e_inv_e > 0.0) {
        return Err(Error::NearSingular(format!(
            "eᵀJ⁻¹e/N = {} must be positive",
            moments.e_inv_e
        )));
    }
    let fill = 1.0 + eta * moments.e_inv_c;
    Ok(0.5 * fill * fill / moments.e_inv_e - 0.5 * eta * eta * moments.c_inv_c)
}

/// Investment concentration of the optimum over the six moments.
pub fn lagrange_qw(moments: &QuenchedMoments, eta: f64) -> Result<f64> {
    if !(moments.e_inv_e > 0.0) || !(moments.e_inv2_e > 0.0) {
        return Err(Error::NearSingular(
            "eᵀJ⁻¹e and eᵀJ⁻²e must be positive".into(),
        ));
    }
    let shift = eta * (moments.e_inv_c / moments.e_inv_e - moments.e_inv2_c / moments.e_inv2_e);
    let centered = 1.0 / moments.e_inv_e + shift;
    let spread = moments.c_inv2_c / moments.e_inv2_e
        - (moments.e_inv2_c / moments.e_inv2_e) * (moments.e_inv2_c / moments.e_inv2_e);
    Ok(moments.e_inv2_e * centered * centered + eta * eta * moments.e_inv2_e * spread)
}

/// Reusable closed-form solver: factor once, evaluate any `η`.
pub struct ClosedFormSolver {
    moments: QuenchedMoments,
    y: DVector<f64>,
    z: DVector<f64>,
}

impl ClosedFormSolver {
    pub fn new(j: &WishartMatrix, costs: &[f64]) -> Result<Self> {
        dims_check(j, costs)?;
        let solver = SpdSolver::new(j)?;
        let (moments, y, z) = moments_from_solves(&solver, costs)?;
        Ok(ClosedFormSolver { moments, y, z })
    }

    pub fn moments(&self) -> &QuenchedMoments {
        &self.moments
    }

    /// The optimal portfolio `w* = k*y − ηz` and its scores.
    pub fn outcome(&self, eta: f64) -> Result<OptimizationOutcome> {
        let multiplier = (1.0 + eta * self.moments.e_inv_c) / self.moments.e_inv_e;
        let weights = &self.y * multiplier - &self.z * eta;
        Ok(OptimizationOutcome {
            portfolio: Portfolio::new(weights),
            multiplier,
            epsilon: lagrange_epsilon(&self.moments, eta)?,
            concentration: lagrange_qw(&self.moments, eta)?,
            iterations: 0,
            residual: 0.0,
        })
    }
}

/// One-shot closed-form solve at a single `η`.
pub fn optimal_portfolio_closed_form(
    j: &WishartMatrix,
    costs: &[f64],
    eta: f64,
) -> Result<OptimizationOutcome> {
    ClosedFormSolver::new(j, costs)?.outcome(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{generate_ensemble, ParetoParams};
    use crate::scenario::{build_wishart, generate_returns, hamiltonian, RiskModel};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;

    fn wishart_from(matrix: DMatrix<f64>) -> WishartMatrix {
        // go through the public path: J = XXᵀ with X = sqrt of the target
        // only works for diagonal targets; used for hand instances
        let n = matrix.nrows();
        let x = crate::scenario::ReturnMatrix::from_matrix(matrix.map(|v| v.sqrt())).unwrap();
        let j = build_wishart(&x);
        assert_eq!(j.n(), n);
        j
    }

    fn random_instance(n: usize, alpha: f64, seed: u64) -> (WishartMatrix, Vec<f64>) {
        let params = ParetoParams::new(2.0, 1.0, 4.0).unwrap();
        let ensemble = generate_ensemble(&params, &params, n, seed).unwrap();
        let x = generate_returns(&ensemble, (alpha * n as f64) as usize, seed ^ 0xabc).unwrap();
        (build_wishart(&x), ensemble.costs)
    }

    #[test]
    fn identity_moments_are_all_one() {
        let j = wishart_from(DMatrix::identity(5, 5));
        let m = quenched_moments(&j, &[1.0; 5]).unwrap();
        for value in [m.e_inv_e, m.e_inv_c, m.c_inv_c, m.e_inv2_e, m.e_inv2_c, m.c_inv2_c] {
            assert_relative_eq!(value, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn diagonal_moments_by_hand() {
        let j = wishart_from(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]));
        let m = quenched_moments(&j, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(m.e_inv_e, 0.75, max_relative = 1e-12);
        assert_relative_eq!(m.e_inv2_e, 0.625, max_relative = 1e-12);
        assert_eq!(m.e_inv_c, 0.0);
        assert_eq!(m.c_inv_c, 0.0);
        assert_eq!(m.e_inv2_c, 0.0);
        assert_eq!(m.c_inv2_c, 0.0);
    }

    #[test]
    fn epsilon_examples() {
        let identity = wishart_from(DMatrix::identity(4, 4));
        let m = quenched_moments(&identity, &[1.0; 4]).unwrap();
        assert_relative_eq!(lagrange_epsilon(&m, 1.0).unwrap(), 1.5, max_relative = 1e-12);

        let j2 = wishart_from(DMatrix::identity(2, 2));
        let m2 = quenched_moments(&j2, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(lagrange_epsilon(&m2, 1.0).unwrap(), 0.875, max_relative = 1e-12);

        let diag = wishart_from(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]));
        let md = quenched_moments(&diag, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(
            lagrange_epsilon(&md, 0.0).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn concentration_examples() {
        let identity = wishart_from(DMatrix::identity(3, 3));
        let m = quenched_moments(&identity, &[0.3, 0.6, 0.9]).unwrap();
        assert_relative_eq!(lagrange_qw(&m, 0.0).unwrap(), 1.0, max_relative = 1e-12);

        let diag = wishart_from(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]));
        let md = quenched_moments(&diag, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(
            lagrange_qw(&md, 0.0).unwrap(),
            10.0 / 9.0,
            max_relative = 1e-12
        );

        let j2 = wishart_from(DMatrix::identity(2, 2));
        let m2 = quenched_moments(&j2, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(lagrange_qw(&m2, 1.0).unwrap(), 1.25, max_relative = 1e-12);
    }

    #[test]
    fn closed_form_identity_and_hand_instance() {
        let identity = wishart_from(DMatrix::identity(4, 4));
        let out = optimal_portfolio_closed_form(&identity, &[1.0; 4], 0.0).unwrap();
        assert_relative_eq!(out.multiplier, 1.0, max_relative = 1e-12);
        assert_relative_eq!(out.epsilon, 0.5, max_relative = 1e-12);
        for &w in out.portfolio.weights.iter() {
            assert_relative_eq!(w, 1.0, max_relative = 1e-12);
        }

        let j2 = wishart_from(DMatrix::identity(2, 2));
        let out = optimal_portfolio_closed_form(&j2, &[1.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(out.multiplier, 1.5, max_relative = 1e-12);
        assert_relative_eq!(out.portfolio.weights[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(out.portfolio.weights[1], 1.5, max_relative = 1e-12);

        let diag = wishart_from(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]));
        let out = optimal_portfolio_closed_form(&diag, &[0.0, 0.0], 0.0).unwrap();
        assert_relative_eq!(out.portfolio.weights[0], 4.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(out.portfolio.weights[1], 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn scores_match_realized_portfolio() {
        for seed in [1u64, 2, 3] {
            let (j, costs) = random_instance(80, 3.0, seed);
            let model = RiskModel::Dense(j.clone());
            for eta in [0.0, 0.7, 4.0] {
                let out = optimal_portfolio_closed_form(&j, &costs, eta).unwrap();
                assert!(out.portfolio.is_feasible(None), "budget violated");
                let realized =
                    hamiltonian(&out.portfolio.weights, &model, &costs, eta).unwrap() / 80.0;
                assert_relative_eq!(out.epsilon, realized, max_relative = 1e-8);
                assert_relative_eq!(
                    out.concentration,
                    out.portfolio.concentration(),
                    max_relative = 1e-8
                );
            }
        }
    }

    #[test]
    fn moment_symmetry_e_z_vs_c_y() {
        let (j, costs) = random_instance(60, 3.0, 11);
        let solver = SpdSolver::new(&j).unwrap();
        let n = 60.0;
        let e = DVector::from_element(60, 1.0);
        let c = DVector::from_column_slice(&costs);
        let y = solver.solve(&e).unwrap();
        let z = solver.solve(&c).unwrap();
        assert_relative_eq!(e.dot(&z) / n, c.dot(&y) / n, max_relative = 1e-10);
    }

    #[test]
    fn epsilon_is_concave_in_eta() {
        let (j, costs) = random_instance(60, 3.0, 17);
        let m = quenched_moments(&j, &costs).unwrap();
        let etas: Vec<f64> = (0..40).map(|i| i as f64 * 0.5).collect();
        let eps: Vec<f64> = etas
            .iter()
            .map(|&eta| lagrange_epsilon(&m, eta).unwrap())
            .collect();
        for w in eps.windows(3) {
            let second_difference = w[2] - 2.0 * w[1] + w[0];
            assert!(second_difference <= 1e-9, "not concave: {second_difference}");
        }
    }

    #[test]
    fn pareto_moment_near_inverse_wishart_prediction() {
        // m_ee at alpha = 3 should be close to <v^-1>/(alpha-1)
        let n = 500;
        let (j, costs) = random_instance(n, 3.0, 23);
        let m = quenched_moments(&j, &costs).unwrap();
        let params = ParetoParams::new(2.0, 1.0, 4.0).unwrap();
        let ensemble = generate_ensemble(&params, &params, n, 23).unwrap();
        let stats = crate::market::ensemble_stats(&ensemble).unwrap();
        assert_relative_eq!(m.e_inv_e, stats.inv_v / 2.0, max_relative = 0.05);
    }

    #[test]
    fn optimum_beats_random_feasible_perturbations() {
        let n = 50;
        let (j, costs) = random_instance(n, 3.0, 31);
        let model = RiskModel::Dense(j.clone());
        let eta = 2.0;
        let out = optimal_portfolio_closed_form(&j, &costs, eta).unwrap();
        let h_star = hamiltonian(&out.portfolio.weights, &model, &costs, eta).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            // random direction projected onto the budget hyperplane
            let mut step = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            let mean = step.sum() / n as f64;
            step.apply(|x| *x -= mean);
            let probe = &out.portfolio.weights + step * 0.5;
            let h = hamiltonian(&probe, &model, &costs, eta).unwrap();
            assert!(h >= h_star - 1e-9 * h_star.abs());
        }
    }

    #[test]
    fn rank_deficient_sample_is_rejected() {
        // p < N leaves J rank deficient
        let params = ParetoParams::new(2.0, 1.0, 4.0).unwrap();
        let ensemble = generate_ensemble(&params, &params, 50, 3).unwrap();
        let x = generate_returns(&ensemble, 25, 3).unwrap();
        let j = build_wishart(&x);
        match quenched_moments(&j, &ensemble.costs) {
            Err(Error::NearSingular(_)) => {}
            other => panic!("expected NearSingular, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let j = wishart_from(DMatrix::identity(3, 3));
        assert!(matches!(
            quenched_moments(&j, &[1.0, 2.0]),
            Err(Error::Usage(_))
        ));
    }
}
