//! Run configuration: a single TOML file with documented keys, shared by
//! every CLI command. CLI flags (`--seed`, `--out`) override file values.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{FeatureSpec, Portfolio};
use crate::stress::{RiskFactorRule, ShiftConstraint, StressCategorySpec};
use crate::synth::{StressMarketSpec, SyntheticSpec};
use crate::var::{PnlCategorySpec, PnlNormalization};
use crate::vi::CaviOptions;

/// Input data location and CSV schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub panel_csv: PathBuf,
    /// Further CSVs merged onto the date intersection.
    #[serde(default)]
    pub extra_csvs: Vec<PathBuf>,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    /// Value columns to keep; empty keeps every non-date column.
    #[serde(default)]
    pub value_columns: Vec<String>,
}

fn default_date_column() -> String {
    "date".to_string()
}

/// Model-fit settings shared by the VaR and stress pipelines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViSection {
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_dirichlet")]
    pub dirichlet_prior: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Diagonal override of the within-regime feature covariance
    /// (default: per-feature sample variance of the fit window).
    #[serde(default)]
    pub within_variance: Option<Vec<f64>>,
    /// Diagonal override of the regime-center prior covariance
    /// (default: four times the per-feature sample variance).
    #[serde(default)]
    pub mean_prior_variance: Option<Vec<f64>>,
}

fn default_clusters() -> usize {
    3
}
fn default_dirichlet() -> f64 {
    1.0
}
fn default_max_sweeps() -> usize {
    500
}
fn default_rel_tol() -> f64 {
    1e-8
}
fn default_restarts() -> usize {
    2
}

impl Default for ViSection {
    fn default() -> Self {
        Self {
            clusters: default_clusters(),
            dirichlet_prior: default_dirichlet(),
            max_sweeps: default_max_sweeps(),
            rel_tol: default_rel_tol(),
            restarts: default_restarts(),
            within_variance: None,
            mean_prior_variance: None,
        }
    }
}

impl ViSection {
    pub fn cavi_options(&self, seed: u64) -> CaviOptions {
        CaviOptions {
            max_sweeps: self.max_sweeps,
            rel_tol: self.rel_tol,
            restarts: self.restarts,
            seed,
        }
    }
}

/// VaR backtest settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarSection {
    #[serde(default = "default_horizon_days")]
    pub horizon_days: usize,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "default_confidences")]
    pub confidences: Vec<f64>,
    pub categories: PnlCategorySpec,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub gaussian_zero_mean: bool,
}

fn default_horizon_days() -> usize {
    1
}
fn default_lookback() -> usize {
    250
}
fn default_confidences() -> Vec<f64> {
    vec![0.95, 0.975]
}
fn default_stride() -> usize {
    1
}

impl Default for VarSection {
    fn default() -> Self {
        Self {
            horizon_days: default_horizon_days(),
            lookback: default_lookback(),
            confidences: default_confidences(),
            categories: PnlCategorySpec {
                thresholds: vec![-0.8, 0.8],
                normalization: PnlNormalization::TrailingZscore { window: 250 },
            },
            stride: default_stride(),
            gaussian_zero_mean: false,
        }
    }
}

/// Stress-design settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StressSection {
    #[serde(default = "default_max_loss_window")]
    pub max_loss_window: usize,
    #[serde(default = "default_stress_horizon")]
    pub horizon: usize,
    #[serde(default = "default_p_stars")]
    pub p_stars: Vec<f64>,
    #[serde(default = "default_calibration_window")]
    pub calibration_window: usize,
    #[serde(default = "default_stress_clusters")]
    pub clusters: usize,
    #[serde(default = "default_dirichlet")]
    pub dirichlet_prior: f64,
    /// Stress-specific feature set; falls back to the top-level features.
    #[serde(default)]
    pub features: Option<Vec<FeatureSpec>>,
    pub risk_factors: Vec<RiskFactorRule>,
    pub categories: StressCategorySpec,
    #[serde(default)]
    pub constraint: Option<ShiftConstraint>,
    /// Number of trailing as-of dates for a rolling run; absent = one-shot.
    #[serde(default)]
    pub rolling: Option<usize>,
}

fn default_max_loss_window() -> usize {
    15
}
fn default_stress_horizon() -> usize {
    45
}
fn default_p_stars() -> Vec<f64> {
    vec![0.75, 0.95]
}
fn default_calibration_window() -> usize {
    1000
}
fn default_stress_clusters() -> usize {
    4
}

/// Synthetic-data generation settings; exactly one of `var` / `stress`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSection {
    #[serde(default)]
    pub var: Option<SyntheticSpec>,
    #[serde(default)]
    pub stress: Option<StressMarketSpec>,
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
}

fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 1, 1).unwrap()
}

/// Whole-run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub portfolio: Option<Portfolio>,
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub vi: ViSection,
    #[serde(default)]
    pub var: Option<VarSection>,
    #[serde(default)]
    pub stress: Option<StressSection>,
    #[serde(default)]
    pub synth: Option<SynthSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Apply CLI overrides; flags win over file values.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(out) = out {
            self.output_dir = out;
        }
        self
    }

    pub fn data_section(&self) -> Result<&DataSection> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::config("missing [data] section"))
    }

    pub fn portfolio_section(&self) -> Result<&Portfolio> {
        let portfolio = self
            .portfolio
            .as_ref()
            .ok_or_else(|| Error::config("missing [portfolio] section"))?;
        if portfolio.instruments.is_empty() {
            return Err(Error::config("portfolio has no instruments"));
        }
        Ok(portfolio)
    }

    pub fn var_section(&self) -> Result<&VarSection> {
        self.var
            .as_ref()
            .ok_or_else(|| Error::config("missing [var] section"))
    }

    pub fn stress_section(&self) -> Result<&StressSection> {
        self.stress
            .as_ref()
            .ok_or_else(|| Error::config("missing [stress] section"))
    }

    pub fn synth_section(&self) -> Result<&SynthSection> {
        let synth = self
            .synth
            .as_ref()
            .ok_or_else(|| Error::config("missing [synth] section"))?;
        match (&synth.var, &synth.stress) {
            (Some(_), None) | (None, Some(_)) => Ok(synth),
            _ => Err(Error::config("[synth] needs exactly one of `var` / `stress`")),
        }
    }
}
