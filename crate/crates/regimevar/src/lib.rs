//! Regime-conditional Value-at-Risk and stress scenario design.
//!
//! The library detects latent market regimes from feature vectors with a
//! coordinate-ascent variational fit of a Gaussian-cluster /
//! Dirichlet-category model, reweights historical-simulation P&L by the
//! predicted outcome-category probabilities to produce regime-aware VaR,
//! and designs stress scenarios (target loss plus expected risk-factor
//! shifts) from peak-loss records extracted from history.
//!
//! Modules:
//! - [`market_data`]: CSV panels, feature transforms, historical-simulation
//!   P&L vectors.
//! - [`vi`]: the variational fit and predictive regime/category
//!   probabilities.
//! - [`var`]: P&L bucketing, probability-weighted VaR, and rolling
//!   backtests against historical-simulation and Gaussian baselines.
//! - [`stress`]: peak-loss extraction, category fits, target stress loss,
//!   and conditional risk-factor shifts, with a constrained variant.
//! - [`synth`]: seeded generators for the model's data-generating
//!   processes plus brute-force reference implementations used by tests.
//! - [`config`] / [`commands`]: the configuration file and the `fit`,
//!   `var-backtest`, `stress-design`, `gen-synth` entry points behind the
//!   CLI.

pub mod commands;
pub mod config;
pub mod error;
pub mod market_data;
pub mod math;
pub mod rng;
pub mod stress;
pub mod synth;
pub mod var;
pub mod vi;

pub use error::{Error, Result};
