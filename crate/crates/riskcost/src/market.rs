//! Random investment environments: bounded-Pareto asset attributes and the
//! bracket averages `⟨f(c,v)⟩ = (1/N) Σ f(c_i, v_i)` that feed every closed
//! form.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedPlan, StreamPurpose};

/// Bounded Pareto distribution with density `∝ x^(-power)` on
/// `[lower, upper]`.
///
/// `lower == upper` is accepted as a point mass; `power == 1` is rejected
/// because the normalizer `(1-b)/(u^(1-b) - l^(1-b))` is singular there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoParams {
    pub power: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParetoParams {
    pub fn new(power: f64, lower: f64, upper: f64) -> Result<Self> {
        let params = ParetoParams { power, lower, upper };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.power.is_finite() || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(Error::Config("Pareto parameters must be finite".into()));
        }
        if self.power <= 0.0 {
            return Err(Error::Config(format!(
                "Pareto power must be positive, got {}",
                self.power
            )));
        }
        if self.power == 1.0 {
            return Err(Error::Config(
                "Pareto power 1 is excluded: the normalizer is singular there".into(),
            ));
        }
        if self.lower <= 0.0 {
            return Err(Error::Config(format!(
                "Pareto lower bound must be positive, got {}",
                self.lower
            )));
        }
        if self.upper < self.lower {
            return Err(Error::Config(format!(
                "Pareto upper bound {} below lower bound {}",
                self.upper, self.lower
            )));
        }
        Ok(())
    }

    pub fn is_point_mass(&self) -> bool {
        self.lower == self.upper
    }
}

/// Per-asset attributes of an `N`-asset market: purchasing cost `c_i`,
/// return variance `v_i`, and mean return `r_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetEnsemble {
    pub costs: Vec<f64>,
    pub variances: Vec<f64>,
    pub mean_returns: Vec<f64>,
    /// The coefficients `h_i` when the ensemble was generated with
    /// `v_i = h_i c_i²`; `None` for externally loaded tables.
    pub variance_coeffs: Option<Vec<f64>>,
    /// Whether the coupling `v_i = h_i c_i²`, `r_i = c_i` was used.
    pub coupled: bool,
}

impl AssetEnsemble {
    /// Build from externally supplied columns. Correlated attributes are
    /// fine; only positivity of the variances and equal lengths are checked.
    pub fn from_columns(
        costs: Vec<f64>,
        variances: Vec<f64>,
        mean_returns: Vec<f64>,
    ) -> Result<Self> {
        let ensemble = AssetEnsemble {
            costs,
            variances,
            mean_returns,
            variance_coeffs: None,
            coupled: false,
        };
        ensemble.validate()?;
        Ok(ensemble)
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.costs.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "ensemble needs at least 2 assets, got {n}"
            )));
        }
        if self.variances.len() != n || self.mean_returns.len() != n {
            return Err(Error::Config(
                "ensemble columns have mismatched lengths".into(),
            ));
        }
        if let Some(h) = &self.variance_coeffs {
            if h.len() != n {
                return Err(Error::Config(
                    "ensemble columns have mismatched lengths".into(),
                ));
            }
        }
        if self.variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("all variances must be positive".into()));
        }
        Ok(())
    }

    /// Write as a columnar text table `index c v r` with a one-line header,
    /// 15 significant digits.
    pub fn write_table<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# index cost variance mean_return")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{} {:.14e} {:.14e} {:.14e}",
                i, self.costs[i], self.variances[i], self.mean_returns[i]
            )?;
        }
        Ok(())
    }

    /// Read a table written by [`AssetEnsemble::write_table`] (or any
    /// whitespace-separated `index c v r` file with one header line).
    pub fn read_table<R: BufRead>(reader: R) -> Result<Self> {
        let mut costs = Vec::new();
        let mut variances = Vec::new();
        let mut mean_returns = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if lineno == 0 || trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!(
                    "line {}: expected 4 columns, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {s:?}", lineno + 1)))
            };
            costs.push(parse(fields[1])?);
            variances.push(parse(fields[2])?);
            mean_returns.push(parse(fields[3])?);
        }
        AssetEnsemble::from_columns(costs, variances, mean_returns)
    }
}

/// The bracket moments entering the closed forms. Each field is the
/// per-asset average of the function named by it, e.g. `c2_inv_v2` is
/// `⟨c²/v²⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub inv_v: f64,
    pub inv_v2: f64,
    pub c_inv_v: f64,
    pub c2_inv_v: f64,
    pub c_inv_v2: f64,
    pub c2_inv_v2: f64,
    pub r_inv_v: f64,
    pub r2_inv_v: f64,
    /// Mixed bracket `⟨cr/v⟩`, needed by the risk-with-return-and-cost
    /// formula.
    pub cr_inv_v: f64,
}

impl EnsembleStats {
    /// Analytic brackets for independently Pareto-distributed `c` and `h`
    /// under the coupling `v = h c²`, `r = c`.
    pub fn pareto_coupled(cost: &ParetoParams, coeff: &ParetoParams) -> Result<Self> {
        let h1 = pareto_moment(coeff, -1.0)?;
        let h2 = pareto_moment(coeff, -2.0)?;
        let c_inv_v = h1 * pareto_moment(cost, -1.0)?;
        let c2_inv_v = h1;
        Ok(EnsembleStats {
            inv_v: h1 * pareto_moment(cost, -2.0)?,
            inv_v2: h2 * pareto_moment(cost, -4.0)?,
            c_inv_v,
            c2_inv_v,
            c_inv_v2: h2 * pareto_moment(cost, -3.0)?,
            c2_inv_v2: h2 * pareto_moment(cost, -2.0)?,
            r_inv_v: c_inv_v,
            r2_inv_v: c2_inv_v,
            cr_inv_v: c2_inv_v,
        })
    }

    /// Brackets for a two-point ensemble: half the assets at `(c1, v1)`,
    /// half at `(c2, v2)`, with `r = c`.
    pub fn two_point(a: (f64, f64), b: (f64, f64)) -> Result<Self> {
        let ((c1, v1), (c2, v2)) = (a, b);
        if !(v1 > 0.0) || !(v2 > 0.0) {
            return Err(Error::Domain("all variances must be positive".into()));
        }
        let avg = |f: &dyn Fn(f64, f64) -> f64| 0.5 * (f(c1, v1) + f(c2, v2));
        Ok(EnsembleStats {
            inv_v: avg(&|_, v| 1.0 / v),
            inv_v2: avg(&|_, v| 1.0 / (v * v)),
            c_inv_v: avg(&|c, v| c / v),
            c2_inv_v: avg(&|c, v| c * c / v),
            c_inv_v2: avg(&|c, v| c / (v * v)),
            c2_inv_v2: avg(&|c, v| c * c / (v * v)),
            r_inv_v: avg(&|c, v| c / v),
            r2_inv_v: avg(&|c, v| c * c / v),
            cr_inv_v: avg(&|c, v| c * c / v),
        })
    }

    /// Brackets for the degenerate single-point ensemble `(c, v)` with
    /// `r = c`.
    pub fn constant(c: f64, v: f64) -> Result<Self> {
        Self::two_point((c, v), (c, v))
    }

    /// Pool stats across trials (plain average of each bracket).
    pub fn pool(stats: &[EnsembleStats]) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::Usage("cannot pool an empty stats list".into()));
        }
        let n = stats.len() as f64;
        let mean = |f: &dyn Fn(&EnsembleStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
        Ok(EnsembleStats {
            inv_v: mean(&|s| s.inv_v),
            inv_v2: mean(&|s| s.inv_v2),
            c_inv_v: mean(&|s| s.c_inv_v),
            c2_inv_v: mean(&|s| s.c2_inv_v),
            c_inv_v2: mean(&|s| s.c_inv_v2),
            c2_inv_v2: mean(&|s| s.c2_inv_v2),
            r_inv_v: mean(&|s| s.r_inv_v),
            r2_inv_v: mean(&|s| s.r2_inv_v),
            cr_inv_v: mean(&|s| s.cr_inv_v),
        })
    }
}

/// Inverse-CDF sample of the bounded Pareto distribution:
/// `c = (s·u^(1-b) + (1-s)·l^(1-b))^(1/(1-b))` for a uniform variate
/// `s ∈ [0, 1)`.
pub fn inverse_pareto_sample(params: &ParetoParams, s: f64) -> Result<f64> {
    params.validate()?;
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Usage(format!("uniform variate {s} outside [0, 1)")));
    }
    if params.is_point_mass() {
        return Ok(params.lower);
    }
    let e = 1.0 - params.power;
    let mixed = s * params.upper.powf(e) + (1.0 - s) * params.lower.powf(e);
    Ok(mixed.powf(1.0 / e))
}

/// Analytic moment `⟨cⁿ⟩ = ∫ cⁿ f(c) dc` of the bounded Pareto density,
/// with the logarithmic branch at `n - b + 1 = 0`.
pub fn pareto_moment(params: &ParetoParams, n: f64) -> Result<f64> {
    params.validate()?;
    if params.is_point_mass() {
        return Ok(params.lower.powf(n));
    }
    let (b, l, u) = (params.power, params.lower, params.upper);
    let norm = (1.0 - b) / (u.powf(1.0 - b) - l.powf(1.0 - b));
    let e = n - b + 1.0;
    if e.abs() < 1e-9 {
        Ok(norm * (u / l).ln())
    } else {
        Ok(norm * (u.powf(e) - l.powf(e)) / e)
    }
}

/// Draw an `N`-asset ensemble: `c_i`, `h_i` independent bounded-Pareto,
/// `v_i = h_i c_i²`, `r_i = c_i`.
pub fn generate_ensemble(
    cost: &ParetoParams,
    coeff: &ParetoParams,
    n: usize,
    seed: u64,
) -> Result<AssetEnsemble> {
    generate_ensemble_for_trial(cost, coeff, n, &SeedPlan::new(seed), 0)
}

/// Trial-aware variant of [`generate_ensemble`]; costs and coefficients draw
/// from separate substreams of `plan`.
pub fn generate_ensemble_for_trial(
    cost: &ParetoParams,
    coeff: &ParetoParams,
    n: usize,
    plan: &SeedPlan,
    trial: u32,
) -> Result<AssetEnsemble> {
    cost.validate()?;
    coeff.validate()?;
    if n < 2 {
        return Err(Error::Config(format!(
            "ensemble needs at least 2 assets, got {n}"
        )));
    }
    let mut cost_rng = plan.stream(trial, StreamPurpose::Costs);
    let mut coeff_rng = plan.stream(trial, StreamPurpose::Coeffs);
    let mut costs = Vec::with_capacity(n);
    let mut coeffs = Vec::with_capacity(n);
    for _ in 0..n {
        costs.push(inverse_pareto_sample(cost, cost_rng.random::<f64>())?);
        coeffs.push(inverse_pareto_sample(coeff, coeff_rng.random::<f64>())?);
    }
    let variances: Vec<f64> = costs
        .iter()
        .zip(&coeffs)
        .map(|(&c, &h)| h * c * c)
        .collect();
    let ensemble = AssetEnsemble {
        mean_returns: costs.clone(),
        costs,
        variances,
        variance_coeffs: Some(coeffs),
        coupled: true,
    };
    ensemble.validate()?;
    Ok(ensemble)
}

/// Empirical bracket averages `(1/N) Σ f(c_i, v_i)` of an ensemble.
pub fn ensemble_stats(ensemble: &AssetEnsemble) -> Result<EnsembleStats> {
    ensemble.validate()?;
    let n = ensemble.len() as f64;
    let mut stats = EnsembleStats {
        inv_v: 0.0,
        inv_v2: 0.0,
        c_inv_v: 0.0,
        c2_inv_v: 0.0,
        c_inv_v2: 0.0,
        c2_inv_v2: 0.0,
        r_inv_v: 0.0,
        r2_inv_v: 0.0,
        cr_inv_v: 0.0,
    };
    for i in 0..ensemble.len() {
        let c = ensemble.costs[i];
        let v = ensemble.variances[i];
        let r = ensemble.mean_returns[i];
        let iv = 1.0 / v;
        let iv2 = iv * iv;
        stats.inv_v += iv;
        stats.inv_v2 += iv2;
        stats.c_inv_v += c * iv;
        stats.c2_inv_v += c * c * iv;
        stats.c_inv_v2 += c * iv2;
        stats.c2_inv_v2 += c * c * iv2;
        stats.r_inv_v += r * iv;
        stats.r2_inv_v += r * r * iv;
        stats.cr_inv_v += c * r * iv;
    }
    stats.inv_v /= n;
    stats.inv_v2 /= n;
    stats.c_inv_v /= n;
    stats.c2_inv_v /= n;
    stats.c_inv_v2 /= n;
    stats.c2_inv_v2 /= n;
    stats.r_inv_v /= n;
    stats.r2_inv_v /= n;
    stats.cr_inv_v /= n;
    Ok(stats)
}
