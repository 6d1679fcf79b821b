//! Return matrices, the Wishart interaction matrix, and the risk-with-cost
//! objective.
//!
//! Rows index assets. Entries of the return matrix are the rescaled modified
//! returns `x_iμ/√N`, where `x_iμ` is the observed return minus its
//! population mean, so `J = XXᵀ` carries `J_ij = (1/N) Σ_μ x_iμ x_jμ`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::AssetEnsemble;
use crate::rng::{SeedPlan, StreamPurpose};

/// Distribution of the raw returns. Only the first two moments enter the
/// closed forms, so a two-point alternative is kept for robustness tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnDistribution {
    #[default]
    Gaussian,
    /// `x_iμ = ±√v_i` with equal probability.
    TwoPoint,
}

/// The `N × p` matrix of rescaled modified returns.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnMatrix {
    entries: DMatrix<f64>,
}

impl ReturnMatrix {
    /// Wrap an already rescaled `N × p` matrix (entries `x_iμ/√N`).
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() < 1 || entries.ncols() < 1 {
            return Err(Error::Config("return matrix must be non-empty".into()));
        }
        Ok(ReturnMatrix { entries })
    }

    pub fn assets(&self) -> usize {
        self.entries.nrows()
    }

    pub fn periods(&self) -> usize {
        self.entries.ncols()
    }

    /// Period ratio `α = p/N`.
    pub fn alpha(&self) -> f64 {
        self.periods() as f64 / self.assets() as f64
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `J·w` through the factored form `X (Xᵀ w)`, never forming `J`.
    pub fn apply_risk(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.entries * self.entries.tr_mul(w)
    }

    /// `wᵀJw = ‖Xᵀw‖²`.
    pub fn quadratic_form(&self, w: &DVector<f64>) -> f64 {
        self.entries.tr_mul(w).norm_squared()
    }

    /// Dump as `row col value` triplets with a one-line header.
    pub fn write_table<W: Write>(&self, out: &mut W) -> Result<()> {
        write_matrix_table(out, &self.entries)
    }
}

/// Dense symmetric `J = XXᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct WishartMatrix {
    matrix: DMatrix<f64>,
}

impl WishartMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.matrix * w
    }

    pub fn quadratic_form(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.matrix * w))
    }

    pub fn write_table<W: Write>(&self, out: &mut W) -> Result<()> {
        write_matrix_table(out, &self.matrix)
    }
}

/// Either the materialized Wishart matrix or the return matrix it factors
/// through. Products go through `X` when `N` exceeds the dense cap.
#[derive(Clone, Debug)]
pub enum RiskModel {
    Dense(WishartMatrix),
    Factored(ReturnMatrix),
}

impl RiskModel {
    /// Materialize densely only up to `dense_cap` assets.
    pub fn from_returns(x: ReturnMatrix, dense_cap: usize) -> RiskModel {
        if x.assets() <= dense_cap {
            RiskModel::Dense(build_wishart(&x))
        } else {
            RiskModel::Factored(x)
        }
    }

    pub fn n(&self) -> usize {
        match self {
            RiskModel::Dense(j) => j.n(),
            RiskModel::Factored(x) => x.assets(),
        }
    }

    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            RiskModel::Dense(j) => j.apply(w),
            RiskModel::Factored(x) => x.apply_risk(w),
        }
    }

    pub fn quadratic_form(&self, w: &DVector<f64>) -> f64 {
        match self {
            RiskModel::Dense(j) => j.quadratic_form(w),
            RiskModel::Factored(x) => x.quadratic_form(w),
        }
    }

    pub fn as_dense(&self) -> Option<&WishartMatrix> {
        match self {
            RiskModel::Dense(j) => Some(j),
            RiskModel::Factored(_) => None,
        }
    }
}

/// A portfolio over `N` assets; weights are unbounded in sign.
#[derive(Clone, Debug, PartialEq)]
pub struct Portfolio {
    pub weights: DVector<f64>,
}

impl Portfolio {
    pub fn new(weights: DVector<f64>) -> Self {
        Portfolio { weights }
    }

    /// Equal weighting `w = e`, the feasible starting point.
    pub fn ones(n: usize) -> Self {
        Portfolio {
            weights: DVector::from_element(n, 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w_i − N`, the budget violation.
    pub fn budget_residual(&self) -> f64 {
        self.weights.sum() - self.len() as f64
    }

    /// Feasible within `tolerance` (default `10⁻⁶·N`).
    pub fn is_feasible(&self, tolerance: Option<f64>) -> bool {
        let tol = tolerance.unwrap_or(1e-6 * self.len() as f64);
        self.budget_residual().abs() <= tol
    }

    /// Investment concentration `q_w = (1/N) Σ w_i²`.
    pub fn concentration(&self) -> f64 {
        self.weights.norm_squared() / self.len() as f64
    }
}

/// Draw the return matrix for an ensemble: per asset `i`, `p` independent
/// modified returns with mean zero and variance `v_i` (centering uses the
/// population mean, not the sample mean), scaled by `1/√N`.
pub fn generate_returns(ensemble: &AssetEnsemble, periods: usize, seed: u64) -> Result<ReturnMatrix> {
    generate_returns_with(
        ensemble,
        periods,
        ReturnDistribution::Gaussian,
        &SeedPlan::new(seed),
        0,
    )
}

/// Trial-aware variant of [`generate_returns`] with a selectable
/// distribution.
pub fn generate_returns_with(
    ensemble: &AssetEnsemble,
    periods: usize,
    distribution: ReturnDistribution,
    plan: &SeedPlan,
    trial: u32,
) -> Result<ReturnMatrix> {
    ensemble.validate()?;
    if periods < 1 {
        return Err(Error::Config("periods must be at least 1".into()));
    }
    let n = ensemble.len();
    let scale = 1.0 / (n as f64).sqrt();
    let mut rng = plan.stream(trial, StreamPurpose::Returns);
    let mut entries = DMatrix::zeros(n, periods);
    match distribution {
        ReturnDistribution::Gaussian => {
            for i in 0..n {
                let normal = Normal::new(0.0, ensemble.variances[i].sqrt())
                    .map_err(|e| Error::Config(format!("bad variance for asset {i}: {e}")))?;
                for mu in 0..periods {
                    entries[(i, mu)] = normal.sample(&mut rng) * scale;
                }
            }
        }
        ReturnDistribution::TwoPoint => {
            for i in 0..n {
                let magnitude = ensemble.variances[i].sqrt();
                for mu in 0..periods {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    entries[(i, mu)] = sign * magnitude * scale;
                }
            }
        }
    }
    Ok(ReturnMatrix { entries })
}

/// `J = XXᵀ`, symmetrized exactly.
pub fn build_wishart(x: &ReturnMatrix) -> WishartMatrix {
    let mut j = &x.entries * x.entries.transpose();
    // gemm may round the two triangles differently; make J_ij == J_ji exact
    for i in 0..j.nrows() {
        for k in (i + 1)..j.ncols() {
            let avg = 0.5 * (j[(i, k)] + j[(k, i)]);
            j[(i, k)] = avg;
            j[(k, i)] = avg;
        }
    }
    WishartMatrix { matrix: j }
}

/// The investment risk with cost `H(w) = ½ wᵀJw + η cᵀw`.
pub fn hamiltonian(
    weights: &DVector<f64>,
    risk: &RiskModel,
    costs: &[f64],
    eta: f64,
) -> Result<f64> {
    let n = risk.n();
    if weights.len() != n || costs.len() != n {
        return Err(Error::Usage(format!(
            "dimension mismatch: risk matrix {n}, weights {}, costs {}",
            weights.len(),
            costs.len()
        )));
    }
    let cost_term: f64 = costs.iter().zip(weights.iter()).map(|(c, w)| c * w).sum();
    Ok(0.5 * risk.quadratic_form(weights) + eta * cost_term)
}

fn write_matrix_table<W: Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    writeln!(out, "# row col value")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            writeln!(out, "{} {} {:.14e}", i, j, m[(i, j)])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{generate_ensemble, ParetoParams};
    use approx::assert_relative_eq;

    fn pareto_ensemble(n: usize, seed: u64) -> AssetEnsemble {
        let p = ParetoParams::new(2.0, 1.0, 4.0).unwrap();
        generate_ensemble(&p, &p, n, seed).unwrap()
    }

    #[test]
    fn returns_are_deterministic() {
        let e = pareto_ensemble(32, 1);
        let a = generate_returns(&e, 64, 9).unwrap();
        let b = generate_returns(&e, 64, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_asset_sample_variance_matches_ensemble() {
        // sample variance of p Gaussian draws has s.e. ≈ v√(2/(p-1))
        let e = pareto_ensemble(50, 3);
        let p = 3000usize;
        for dist in [ReturnDistribution::Gaussian, ReturnDistribution::TwoPoint] {
            let x = generate_returns_with(&e, p, dist, &SeedPlan::new(17), 0).unwrap();
            let sqrt_n = (e.len() as f64).sqrt();
            for i in 0..e.len() {
                let row: Vec<f64> = (0..p).map(|mu| x.matrix()[(i, mu)] * sqrt_n).collect();
                let mean = row.iter().sum::<f64>() / p as f64;
                let var =
                    row.iter().map(|&r| (r - mean) * (r - mean)).sum::<f64>() / (p as f64 - 1.0);
                let v = e.variances[i];
                let se = v * (2.0 / (p as f64 - 1.0)).sqrt();
                assert!(
                    (var - v).abs() <= 4.0 * se,
                    "asset {i} ({dist:?}): sample variance {var} vs {v}"
                );
            }
        }
    }

    #[test]
    fn zero_returns_give_zero_wishart() {
        let x = ReturnMatrix::from_matrix(DMatrix::zeros(3, 5)).unwrap();
        let j = build_wishart(&x);
        assert_eq!(j.matrix().amax(), 0.0);
    }

    #[test]
    fn hand_built_wishart() {
        // √N·x rows (1,0) and (0,1) at N=2 → J = ½·I
        let sqrt_n = 2.0f64.sqrt();
        let entries = DMatrix::from_row_slice(2, 2, &[1.0 / sqrt_n, 0.0, 0.0, 1.0 / sqrt_n]);
        let j = build_wishart(&ReturnMatrix::from_matrix(entries).unwrap());
        assert_relative_eq!(j.matrix()[(0, 0)], 0.5, max_relative = 1e-15);
        assert_relative_eq!(j.matrix()[(1, 1)], 0.5, max_relative = 1e-15);
        assert_eq!(j.matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn wishart_is_exactly_symmetric() {
        let e = pareto_ensemble(40, 5);
        let x = generate_returns(&e, 120, 5).unwrap();
        let j = build_wishart(&x);
        let diff = (j.matrix() - j.matrix().transpose()).amax();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn factored_apply_matches_dense() {
        let e = pareto_ensemble(60, 8);
        let x = generate_returns(&e, 180, 8).unwrap();
        let j = build_wishart(&x);
        let w = DVector::from_fn(60, |i, _| (i as f64 * 0.37).sin() + 1.0);
        let dense = j.apply(&w);
        let factored = x.apply_risk(&w);
        assert_relative_eq!(
            (dense.clone() - factored).norm() / dense.norm(),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn dense_cap_selects_the_representation() {
        let e = pareto_ensemble(24, 2);
        let x = generate_returns(&e, 72, 2).unwrap();
        assert!(matches!(
            RiskModel::from_returns(x.clone(), 24),
            RiskModel::Dense(_)
        ));
        assert!(matches!(
            RiskModel::from_returns(x, 23),
            RiskModel::Factored(_)
        ));
    }

    #[test]
    fn smallest_eigenvalue_nonnegative() {
        let e = pareto_ensemble(100, 21);
        let x = generate_returns(&e, 300, 21).unwrap();
        let j = build_wishart(&x);
        let eigen = j.matrix().clone().symmetric_eigen();
        let min = eigen.eigenvalues.min();
        assert!(min > 0.0, "alpha=3 sample should be strictly definite, min {min}");
    }

    #[test]
    fn hamiltonian_examples() {
        let identity = RiskModel::Dense(WishartMatrix {
            matrix: DMatrix::identity(2, 2),
        });
        let zero = DVector::zeros(2);
        assert_eq!(hamiltonian(&zero, &identity, &[1.0, 1.0], 5.0).unwrap(), 0.0);

        let e = DVector::from_element(2, 1.0);
        let h = hamiltonian(&e, &identity, &[1.0, 1.0], 1.0).unwrap();
        assert_relative_eq!(h, 3.0, max_relative = 1e-15);

        // η = 0 reduces to the pure risk term
        let h0 = hamiltonian(&e, &identity, &[1.0, 1.0], 0.0).unwrap();
        assert_relative_eq!(h0, 1.0, max_relative = 1e-15);

        assert!(hamiltonian(&DVector::zeros(3), &identity, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn hamiltonian_decomposes_into_risk_plus_cost() {
        // oracle: risk = (1/2N) Σ_μ (Σ_i w_i x_iμ)² from the raw returns
        let e = pareto_ensemble(8, 13);
        let p = 20usize;
        let x = generate_returns(&e, p, 13).unwrap();
        let n = e.len();
        let sqrt_n = (n as f64).sqrt();
        let w = DVector::from_fn(n, |i, _| 1.0 + 0.3 * (i as f64).cos());
        let eta = 1.7;

        let mut risk = 0.0;
        for mu in 0..p {
            let total: f64 = (0..n).map(|i| w[i] * x.matrix()[(i, mu)] * sqrt_n).sum();
            risk += total * total;
        }
        risk /= 2.0 * n as f64;
        let cost: f64 = (0..n).map(|i| w[i] * e.costs[i]).sum();

        let model = RiskModel::Dense(build_wishart(&x));
        let h = hamiltonian(&w, &model, &e.costs, eta).unwrap();
        assert_relative_eq!(h, risk + eta * cost, max_relative = 1e-10);
    }

    #[test]
    fn portfolio_budget_and_concentration() {
        let w = Portfolio::ones(4);
        assert_eq!(w.budget_residual(), 0.0);
        assert!(w.is_feasible(None));
        assert_eq!(w.concentration(), 1.0);

        let skew = Portfolio::new(DVector::from_vec(vec![0.5, 1.5]));
        assert_eq!(skew.budget_residual(), 0.0);
        assert_relative_eq!(skew.concentration(), 1.25, max_relative = 1e-15);

        let off = Portfolio::new(DVector::from_vec(vec![1.0, 1.1]));
        assert!(!off.is_feasible(None));
        assert!(off.is_feasible(Some(0.2)));
    }

    #[test]
    fn matrix_dump_has_header_and_rows() {
        let x = ReturnMatrix::from_matrix(DMatrix::from_element(2, 3, 1.0)).unwrap();
        let mut buf = Vec::new();
        x.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[0].starts_with('#'));
    }
}
