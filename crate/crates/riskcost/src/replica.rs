//! Closed-form predictions for the minimal risk-with-cost per asset and the
//! investment concentration: quenched (optimize per sample, then average)
//! and annealed (average the objective first, then optimize), plus the six
//! inverse-Wishart moment predictions and the risk-with-return variants.
//!
//! All formulas are functions of the bracket averages `⟨f(c,v)⟩` and the
//! period ratio `α = p/N`; quenched results require `α > 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::QuenchedMoments;
use crate::market::EnsembleStats;

/// Bracket-weighted cost statistics entering the closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostStatistics {
    /// `V_c = ⟨c²/v⟩/⟨1/v⟩ − (⟨c/v⟩/⟨1/v⟩)²`
    pub v_c: f64,
    /// `δ_c = ⟨c/v⟩/⟨1/v⟩ − ⟨c/v²⟩/⟨1/v²⟩`
    pub delta_c: f64,
    /// `V_cc = ⟨c²/v²⟩/⟨1/v²⟩ − (⟨c/v²⟩/⟨1/v²⟩)²`
    pub v_cc: f64,
}

/// Quenched and annealed predictions at one `(α, η)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPrediction {
    pub alpha: f64,
    pub eta: f64,
    pub epsilon_quenched: f64,
    pub qw_quenched: f64,
    pub epsilon_annealed: f64,
    pub qw_annealed: f64,
}

/// Order parameters of the replica-symmetric saddle point in the zero
/// temperature limit, exposed as the combinations that stay finite as
/// `β → ∞` (`χ_w, χ_s` vanish like `1/β`; `χ̃_s, q̃_s, k` diverge).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParameters {
    pub chi_w_times_beta: f64,
    pub qw: f64,
    pub chi_s_times_beta: f64,
    pub qs: f64,
    pub chi_w_tilde: f64,
    pub qw_tilde: f64,
    pub chi_s_tilde_over_beta: f64,
    pub qs_tilde_over_beta_sq: f64,
    pub k_over_beta: f64,
}

fn require_brackets(stats: &EnsembleStats) -> Result<()> {
    if !(stats.inv_v > 0.0) || !(stats.inv_v2 > 0.0) {
        return Err(Error::Domain(format!(
            "bracket moments must be positive: <1/v> = {}, <1/v^2> = {}",
            stats.inv_v, stats.inv_v2
        )));
    }
    if !stats.inv_v.is_finite() || !stats.inv_v2.is_finite() {
        return Err(Error::Domain("bracket moments must be finite".into()));
    }
    Ok(())
}

fn require_quenched_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0) {
        return Err(Error::Domain(format!(
            "quenched formulas need period ratio alpha > 1, got {alpha}"
        )));
    }
    // the (alpha-1)^-3 factors blow up on approach to the boundary
    if alpha < 1.0 + 1e-3 {
        log::warn!("period ratio alpha = {alpha} is within 1e-3 of the alpha = 1 boundary");
    }
    Ok(())
}

fn require_annealed_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!(
            "annealed formulas need period ratio alpha > 0, got {alpha}"
        )));
    }
    Ok(())
}

/// The three cost statistics from the bracket moments.
pub fn cost_statistics(stats: &EnsembleStats) -> Result<CostStatistics> {
    require_brackets(stats)?;
    let mean_c_risk = stats.c_inv_v / stats.inv_v;
    let mean_c_conc = stats.c_inv_v2 / stats.inv_v2;
    Ok(CostStatistics {
        v_c: stats.c2_inv_v / stats.inv_v - mean_c_risk * mean_c_risk,
        delta_c: mean_c_risk - mean_c_conc,
        v_cc: stats.c2_inv_v2 / stats.inv_v2 - mean_c_conc * mean_c_conc,
    })
}

/// Quenched minimal risk-with-cost per asset:
/// `ε = (α−1)/(2⟨1/v⟩) + η⟨c/v⟩/⟨1/v⟩ − η²⟨1/v⟩V_c/(2(α−1))`.
pub fn replica_epsilon(
    stats: &EnsembleStats,
    cs: &CostStatistics,
    alpha: f64,
    eta: f64,
) -> Result<f64> {
    require_brackets(stats)?;
    require_quenched_alpha(alpha)?;
    Ok((alpha - 1.0) / (2.0 * stats.inv_v) + eta * stats.c_inv_v / stats.inv_v
        - eta * eta * stats.inv_v * cs.v_c / (2.0 * (alpha - 1.0)))
}

fn cost_correction(stats: &EnsembleStats, cs: &CostStatistics, alpha: f64, eta: f64) -> f64 {
    let am1 = alpha - 1.0;
    eta * eta * stats.inv_v * stats.inv_v * cs.v_c / (am1 * am1 * am1)
        + (2.0 * eta / am1) * (stats.inv_v2 / stats.inv_v) * cs.delta_c
        + eta * eta * stats.inv_v2 * (cs.v_cc + cs.delta_c * cs.delta_c) / (am1 * am1)
}

/// Quenched investment concentration:
/// `q_w = 1/(α−1) + ⟨1/v²⟩/⟨1/v⟩² + C(η)`.
pub fn replica_qw(
    stats: &EnsembleStats,
    cs: &CostStatistics,
    alpha: f64,
    eta: f64,
) -> Result<f64> {
    require_brackets(stats)?;
    require_quenched_alpha(alpha)?;
    Ok(1.0 / (alpha - 1.0)
        + stats.inv_v2 / (stats.inv_v * stats.inv_v)
        + cost_correction(stats, cs, alpha, eta))
}

/// Annealed (expected-objective) counterpart of [`replica_epsilon`]:
/// `ε^OR = α/(2⟨1/v⟩) + η⟨c/v⟩/⟨1/v⟩ − η²⟨1/v⟩V_c/(2α)`.
pub fn annealed_epsilon(
    stats: &EnsembleStats,
    cs: &CostStatistics,
    alpha: f64,
    eta: f64,
) -> Result<f64> {
    require_brackets(stats)?;
    require_annealed_alpha(alpha)?;
    Ok(alpha / (2.0 * stats.inv_v) + eta * stats.c_inv_v / stats.inv_v
        - eta * eta * stats.inv_v * cs.v_c / (2.0 * alpha))
}

/// Annealed investment concentration:
/// `q_w^OR = ⟨1/v²⟩/⟨1/v⟩² + η²⟨1/v²⟩(V_cc + δ_c²)/α² + (2η/α)(⟨1/v²⟩/⟨1/v⟩)δ_c`.
pub fn annealed_qw(
    stats: &EnsembleStats,
    cs: &CostStatistics,
    alpha: f64,
    eta: f64,
) -> Result<f64> {
    require_brackets(stats)?;
    require_annealed_alpha(alpha)?;
    Ok(stats.inv_v2 / (stats.inv_v * stats.inv_v)
        + eta * eta * stats.inv_v2 * (cs.v_cc + cs.delta_c * cs.delta_c) / (alpha * alpha)
        + (2.0 * eta / alpha) * (stats.inv_v2 / stats.inv_v) * cs.delta_c)
}

/// Predicted large-`N` values of the six quenched moments of `J⁻¹`, `J⁻²`.
pub fn predicted_inverse_moments(stats: &EnsembleStats, alpha: f64) -> Result<QuenchedMoments> {
    require_brackets(stats)?;
    require_quenched_alpha(alpha)?;
    let am1 = alpha - 1.0;
    let cube = am1 * am1 * am1;
    let square = am1 * am1;
    Ok(QuenchedMoments {
        e_inv_e: stats.inv_v / am1,
        e_inv_c: stats.c_inv_v / am1,
        c_inv_c: stats.c2_inv_v / am1,
        e_inv2_e: stats.inv_v * stats.inv_v / cube + stats.inv_v2 / square,
        e_inv2_c: stats.inv_v * stats.c_inv_v / cube + stats.c_inv_v2 / square,
        c_inv2_c: stats.inv_v * stats.c2_inv_v / cube + stats.c2_inv_v2 / square,
    })
}

/// Minimal risk with return (mixing degree `g`) and cost (tolerance `η`):
/// the quenched formula with `ηc` replaced by `ηc − gr`.
pub fn return_variant_epsilon(
    stats: &EnsembleStats,
    alpha: f64,
    g: f64,
    eta: f64,
) -> Result<f64> {
    require_brackets(stats)?;
    require_quenched_alpha(alpha)?;
    // ⟨(ηc − gr)²/v⟩ expanded over the stored brackets
    let mixed_sq =
        eta * eta * stats.c2_inv_v - 2.0 * eta * g * stats.cr_inv_v + g * g * stats.r2_inv_v;
    let mixed_mean = (eta * stats.c_inv_v - g * stats.r_inv_v) / stats.inv_v;
    let variance = mixed_sq / stats.inv_v - mixed_mean * mixed_mean;
    Ok((alpha - 1.0) / (2.0 * stats.inv_v) - g * stats.r_inv_v / stats.inv_v
        + eta * stats.c_inv_v / stats.inv_v
        - stats.inv_v * variance / (2.0 * (alpha - 1.0)))
}

/// The full replica-symmetric saddle point in β-stable combinations.
pub fn order_parameters(
    stats: &EnsembleStats,
    cs: &CostStatistics,
    alpha: f64,
    eta: f64,
) -> Result<OrderParameters> {
    require_brackets(stats)?;
    require_quenched_alpha(alpha)?;
    let am1 = alpha - 1.0;
    let ground = 1.0 / stats.inv_v + eta * eta * stats.inv_v * cs.v_c / (am1 * am1);
    Ok(OrderParameters {
        chi_w_times_beta: stats.inv_v / am1,
        qw: replica_qw(stats, cs, alpha, eta)?,
        chi_s_times_beta: 1.0 / am1,
        qs: alpha / am1 * ground,
        chi_w_tilde: 0.0,
        qw_tilde: 0.0,
        chi_s_tilde_over_beta: am1,
        qs_tilde_over_beta_sq: am1 * ground,
        k_over_beta: am1 / stats.inv_v + eta * stats.c_inv_v / stats.inv_v,
    })
}

/// Both predictions at one `(α, η)`.
pub fn predict(stats: &EnsembleStats, alpha: f64, eta: f64) -> Result<ReplicaPrediction> {
    let cs = cost_statistics(stats)?;
    Ok(ReplicaPrediction {
        alpha,
        eta,
        epsilon_quenched: replica_epsilon(stats, &cs, alpha, eta)?,
        qw_quenched: replica_qw(stats, &cs, alpha, eta)?,
        epsilon_annealed: annealed_epsilon(stats, &cs, alpha, eta)?,
        qw_annealed: annealed_qw(stats, &cs, alpha, eta)?,
    })
}

/// Theory curve over an `η` grid.
pub fn theory_rows(stats: &EnsembleStats, alpha: f64, etas: &[f64]) -> Result<Vec<ReplicaPrediction>> {
    etas.iter().map(|&eta| predict(stats, alpha, eta)).collect()
}

/// Columnar text table of a theory curve, 9 significant digits.
pub fn render_theory_table(rows: &[ReplicaPrediction]) -> String {
    let mut out = String::from("# eta eps_quenched qw_quenched eps_annealed qw_annealed\n");
    for r in rows {
        out.push_str(&format!(
            "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e}\n",
            r.eta, r.epsilon_quenched, r.qw_quenched, r.epsilon_annealed, r.qw_annealed
        ));
    }
    out
}
