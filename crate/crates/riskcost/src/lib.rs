//! A desk-scale laboratory for the budget-constrained minimization of
//! investment risk plus purchasing cost.
//!
//! A portfolio `w` over `N` assets (short selling allowed, budget
//! `Σ w_i = N`) is scored by the objective `H(w) = ½ wᵀJw + η cᵀw`, where
//! `J` is the Wishart matrix built from observed returns, `c` the per-asset
//! purchasing costs, and `η ≥ 0` the investor's cost tolerance. The crate
//! provides:
//!
//! - [`market`]: bounded-Pareto asset ensembles and their bracket averages;
//! - [`scenario`]: return matrices, Wishart matrices, objective evaluation;
//! - [`exact`]: the closed-form optimum via linear solves (no explicit
//!   inverses) and the six quenched moments behind it;
//! - [`descent`]: saddle-point steepest descent on the Lagrange function;
//! - [`replica`]: closed-form quenched and annealed predictions for the
//!   minimal risk-with-cost per asset and the investment concentration;
//! - [`experiment`]: the η sweep with M disorder trials, aggregation, and
//!   side-by-side theory columns;
//! - [`validation`]: the end-to-end checks backing the `validate` CLI
//!   subcommand and the acceptance test suite.

// guards are written `!(x > 0.0)` so that NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod descent;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod market;
pub mod replica;
pub mod rng;
pub mod scenario;
pub mod validation;

pub use error::{Error, Result};
