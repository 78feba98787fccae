//! Entry points behind the CLI subcommands.
//!
//! Every command reads one [`RunConfig`], computes everything in memory,
//! and only then writes its output files, so a failing run leaves no
//! partial artifacts. Each JSON document embeds the resolved config for
//! auditability; the only nondeterministic field is
//! `metadata.generated_at`.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::market_data::{align_intersection, load_panel, CsvSchema, TimeSeriesPanel};
use crate::stress::{self, ScenarioResult, StressConfig};
use crate::synth;
use crate::var::{self, BacktestConfig, VarMethod};
use crate::vi::VariationalStateDoc;

#[derive(Debug, Serialize)]
struct Metadata {
    generated_at: String,
    tool: &'static str,
    version: &'static str,
}

impl Metadata {
    fn now() -> Self {
        Self {
            generated_at: chrono::Utc::now().to_rfc3339(),
            tool: "regimevar",
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Serialize)]
struct Document<'a, T: Serialize> {
    metadata: Metadata,
    config: &'a RunConfig,
    result: T,
}

fn to_json<T: Serialize>(config: &RunConfig, result: T) -> Result<String> {
    let doc = Document {
        metadata: Metadata::now(),
        config,
        result,
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Deferred file writes: everything is computed before anything lands on
/// disk.
struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((self.dir.join(name), contents));
    }

    fn write_all(self) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir).map_err(|source| Error::Io {
            path: self.dir.display().to_string(),
            source,
        })?;
        let mut written = Vec::with_capacity(self.files.len());
        for (path, contents) in self.files {
            std::fs::write(&path, contents).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            written.push(path);
        }
        Ok(written)
    }
}

fn load_input_panel(config: &RunConfig) -> Result<TimeSeriesPanel> {
    let data = config.data_section()?;
    let schema = CsvSchema {
        date_column: data.date_column.clone(),
        value_columns: data.value_columns.clone(),
    };
    let mut panels = vec![load_panel(&data.panel_csv, &schema)?];
    let extra_schema = CsvSchema {
        date_column: data.date_column.clone(),
        value_columns: Vec::new(),
    };
    for extra in &data.extra_csvs {
        panels.push(load_panel(extra, &extra_schema)?);
    }
    if panels.len() == 1 {
        Ok(panels.pop().unwrap())
    } else {
        align_intersection(&panels)
    }
}

fn backtest_config(config: &RunConfig) -> Result<BacktestConfig> {
    let var = config.var_section()?;
    Ok(BacktestConfig {
        features: config.features.clone(),
        portfolio: config.portfolio_section()?.clone(),
        horizon_days: var.horizon_days,
        lookback: var.lookback,
        confidences: var.confidences.clone(),
        category_spec: var.categories.clone(),
        clusters: config.vi.clusters,
        dirichlet_prior: config.vi.dirichlet_prior,
        within_variance: config.vi.within_variance.clone(),
        mean_prior_variance: config.vi.mean_prior_variance.clone(),
        cavi: config.vi.cavi_options(config.seed),
        stride: var.stride,
        gaussian_zero_mean: var.gaussian_zero_mean,
    })
}

fn stress_config(config: &RunConfig, p_star: f64) -> Result<StressConfig> {
    let section = config.stress_section()?;
    Ok(StressConfig {
        features: section
            .features
            .clone()
            .unwrap_or_else(|| config.features.clone()),
        portfolio: config.portfolio_section()?.clone(),
        max_loss_window: section.max_loss_window,
        horizon: section.horizon,
        p_star,
        calibration_window: section.calibration_window,
        clusters: section.clusters,
        category_spec: section.categories.clone(),
        risk_factors: section.risk_factors.clone(),
        constraint: section.constraint.clone(),
        dirichlet_prior: section.dirichlet_prior,
        within_variance: config.vi.within_variance.clone(),
        mean_prior_variance: config.vi.mean_prior_variance.clone(),
        cavi: config.vi.cavi_options(config.seed),
    })
}

#[derive(Debug, Serialize)]
struct FitResult {
    asof: NaiveDate,
    cluster_probs: Vec<f64>,
    category_probs: Vec<f64>,
    state: VariationalStateDoc,
}

/// Fit the model on the trailing window ending at the last panel date.
/// Writes the state document, the ELBO trace, and the in-window regime
/// probability time series.
pub fn cmd_fit(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = load_input_panel(config)?;
    let bt = backtest_config(config)?;
    let asof = *panel.dates().last().expect("load rejects empty panels");
    let fit = var::fit_at(&panel, &bt, asof)?;

    let mut elbo_csv = String::from("sweep,elbo\n");
    for (i, value) in fit.state.elbo_trace.iter().enumerate() {
        elbo_csv.push_str(&format!("{i},{value:.12}\n"));
    }

    let k = fit.hyper.cluster_count();
    let mut probs_csv = String::from("date");
    for k_idx in 1..=k {
        probs_csv.push_str(&format!(",p_cluster{k_idx}"));
    }
    probs_csv.push('\n');
    for (row, date) in fit.window_dates.iter().enumerate() {
        probs_csv.push_str(&date.to_string());
        for k_idx in 0..k {
            probs_csv.push_str(&format!(",{:.10}", fit.state.responsibilities[(row, k_idx)]));
        }
        probs_csv.push('\n');
    }

    let result = FitResult {
        asof,
        cluster_probs: fit.cluster_probs.clone(),
        category_probs: fit.category_probs.clone(),
        state: VariationalStateDoc::from_state(&fit.state),
    };
    let mut outputs = Outputs::new(&config.output_dir);
    outputs.add("state.json", to_json(config, result)?);
    outputs.add("elbo_trace.csv", elbo_csv);
    outputs.add("cluster_probs.csv", probs_csv);
    outputs.write_all()
}

/// Run the rolling VaR backtest and write the report (CSV + JSON) plus a
/// plot-data CSV of realized P&L against each method's VaR track.
pub fn cmd_var_backtest(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = load_input_panel(config)?;
    let bt = backtest_config(config)?;
    let report = var::var_backtest(&panel, &bt)?;

    let mut plot = String::from("date,realized_pnl");
    for &confidence in &bt.confidences {
        for method in [VarMethod::Vi, VarMethod::HistoricalSimulation, VarMethod::Gaussian] {
            plot.push_str(&format!(",{method}_{confidence}"));
        }
    }
    plot.push('\n');
    for entry in &report.entries {
        plot.push_str(&format!("{},{:.10}", entry.date, entry.realized_pnl));
        for &confidence in &bt.confidences {
            for method in [VarMethod::Vi, VarMethod::HistoricalSimulation, VarMethod::Gaussian] {
                let var = entry
                    .estimates
                    .iter()
                    .find(|e| e.method == method && (e.confidence - confidence).abs() < 1e-12)
                    .map(|e| e.var)
                    .unwrap_or(f64::NAN);
                plot.push_str(&format!(",{var:.10}"));
            }
        }
        plot.push('\n');
    }

    let mut outputs = Outputs::new(&config.output_dir);
    outputs.add("var_backtest.csv", report.to_csv());
    outputs.add("var_backtest.json", to_json(config, &report)?);
    outputs.add("var_plot.csv", plot);
    outputs.write_all()
}

fn p_star_tag(p_star: f64) -> String {
    format!("{p_star}").replace('.', "_")
}

#[derive(Debug, Serialize)]
struct RollingRow {
    date: NaiveDate,
    realized_peak_loss: Option<f64>,
    targets: Vec<f64>,
}

/// Design stress scenarios for every configured confidence level; with
/// `rolling` set, also re-design daily over the trailing dates and emit a
/// plot-data CSV of realized peak losses against the target tracks.
pub fn cmd_stress_design(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = load_input_panel(config)?;
    let section = config.stress_section()?;
    if section.p_stars.is_empty() {
        return Err(Error::config("stress p_stars must not be empty"));
    }

    let mut outputs = Outputs::new(&config.output_dir);
    let mut results: Vec<ScenarioResult> = Vec::new();
    for &p_star in &section.p_stars {
        let cfg = stress_config(config, p_star)?;
        let result = stress::design_scenario(&panel, &cfg)?;
        outputs.add(
            &format!("stress_scenario_p{}.json", p_star_tag(p_star)),
            to_json(config, &result)?,
        );
        results.push(result);
    }

    let mut shifts_csv = String::from("p_star,risk_factor,expected_shift\n");
    for result in &results {
        for (factor, shift) in &result.shifts {
            shifts_csv.push_str(&format!("{},{factor},{shift:.10}\n", result.p_star));
        }
    }
    outputs.add("stress_shifts.csv", shifts_csv);

    if let Some(rolling) = section.rolling {
        let rows = rolling_targets(config, &panel, rolling)?;
        let mut csv = String::from("date,realized_peak_loss");
        for &p_star in &section.p_stars {
            csv.push_str(&format!(",target_p{}", p_star_tag(p_star)));
        }
        csv.push('\n');
        for row in rows {
            let realized = row
                .realized_peak_loss
                .map(|v| format!("{v:.10}"))
                .unwrap_or_default();
            csv.push_str(&format!("{},{realized}", row.date));
            for target in row.targets {
                csv.push_str(&format!(",{target:.10}"));
            }
            csv.push('\n');
        }
        outputs.add("stress_rolling.csv", csv);
    }
    outputs.write_all()
}

fn rolling_targets(
    config: &RunConfig,
    panel: &TimeSeriesPanel,
    rolling: usize,
) -> Result<Vec<RollingRow>> {
    let section = config.stress_section()?;
    let portfolio = config.portfolio_section()?;
    let path = portfolio.value_path(panel)?;
    let realized = stress::peak_loss_surface(&path, section.max_loss_window, section.horizon)?;

    let len = panel.len();
    let first = len.saturating_sub(rolling);
    let configs: Vec<StressConfig> = section
        .p_stars
        .iter()
        .map(|&p| stress_config(config, p))
        .collect::<Result<_>>()?;

    let rows: Vec<Option<RollingRow>> = (first..len)
        .into_par_iter()
        .map(|t| {
            let date = panel.dates()[t];
            let mut targets = Vec::with_capacity(configs.len());
            for cfg in &configs {
                match stress::design_scenario_at(panel, cfg, date) {
                    Ok(result) => targets.push(result.target_loss_pnl),
                    Err(_) => return None,
                }
            }
            Some(RollingRow {
                date,
                realized_peak_loss: realized.iter().find(|r| r.anchor == t).map(|r| r.loss),
                targets,
            })
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Serialize)]
struct SynthTruth<'a> {
    kind: &'static str,
    clusters: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    categories: Option<&'a [usize]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    returns: Option<&'a [f64]>,
}

/// Generate a synthetic panel (plus ground truth) loadable by the other
/// commands. Deterministic per seed; same seed, same bytes.
pub fn cmd_gen_synth(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let section = config.synth_section()?;
    let mut outputs = Outputs::new(&config.output_dir);

    if let Some(spec) = &section.var {
        let mut spec = spec.clone();
        spec.seed = config.seed;
        let dataset = synth::gen_var_dataset(&spec)?;
        let panel = synth::var_panel(&dataset, section.start_date)?;
        let truth = SynthTruth {
            kind: "var",
            clusters: &dataset.clusters,
            categories: Some(&dataset.categories),
            returns: Some(&dataset.returns),
        };
        outputs.add("truth.json", to_json(config, truth)?);
        outputs.add("panel.csv", panel.to_csv_string());
        return outputs.write_all();
    }

    let spec = section
        .stress
        .as_ref()
        .expect("synth_section validated one of var/stress");
    let mut spec = spec.clone();
    spec.seed = config.seed;
    let (panel, clusters) = synth::gen_stress_panel(&spec, section.start_date)?;
    let truth = SynthTruth {
        kind: "stress",
        clusters: &clusters,
        categories: None,
        returns: None,
    };
    outputs.add("truth.json", to_json(config, truth)?);
    outputs.add("panel.csv", panel.to_csv_string());
    outputs.write_all()
}
