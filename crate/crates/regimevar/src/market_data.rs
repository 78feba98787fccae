//! Market data ingestion and feature construction.
//!
//! Covers CSV loading into date-aligned panels, calendar intersection,
//! change / rolling z-score / rolling volatility-difference transforms,
//! feature matrix assembly, and historical-simulation P&L vectors for a
//! weighted portfolio.
//!
//! Conventions fixed here and relied on by the rest of the crate:
//! - rolling windows are inclusive of the current observation and span
//!   exactly `window` points;
//! - standard deviations are sample standard deviations (divisor n−1);
//! - a z-score over a window whose std is below 1e-12 is defined as 0;
//! - series are aligned by dropping dates absent from any input, never by
//!   interpolation.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

const ZERO_STD_TOL: f64 = 1e-12;

/// Date-aligned named series of market levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    dates: Vec<NaiveDate>,
    series: BTreeMap<String, Vec<f64>>,
}

impl TimeSeriesPanel {
    /// Build a panel from sorted unique dates and equally long series.
    pub fn new(dates: Vec<NaiveDate>, series: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("panel dates must be strictly increasing"));
        }
        for (name, values) in &series {
            if values.len() != dates.len() {
                return Err(Error::data(format!(
                    "series '{name}' has {} values for {} dates",
                    values.len(),
                    dates.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("series '{name}' contains a non-finite value")));
            }
        }
        Ok(Self { dates, series })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn series_names(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(|s| s.as_str())
    }

    pub fn series(&self, name: &str) -> Result<&[f64]> {
        self.series
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::data(format!("unknown series '{name}'")))
    }

    pub fn date_index(&self, date: NaiveDate) -> Result<usize> {
        self.dates
            .binary_search(&date)
            .map_err(|_| Error::data(format!("date {date} not in panel")))
    }

    /// Copy of the panel with one more series; a no-op when the name is
    /// already present.
    pub fn with_series_if_absent(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        if self.series.contains_key(name) {
            return Ok(self.clone());
        }
        let mut series = self.series.clone();
        series.insert(name.to_string(), values);
        Self::new(self.dates.clone(), series)
    }

    /// Render the panel in the CSV schema accepted by [`load_panel`].
    pub fn to_csv_string(&self) -> String {
        let names: Vec<&String> = self.series.keys().collect();
        let mut out = String::from("date");
        for name in &names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, date) in self.dates.iter().enumerate() {
            out.push_str(&date.format("%Y-%m-%d").to_string());
            for name in &names {
                out.push_str(&format!(",{:.10}", self.series[*name][i]));
            }
            out.push('\n');
        }
        out
    }

    /// Write the panel back to the CSV schema accepted by [`load_panel`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Column mapping for [`load_panel`]: the date column plus the value
/// columns to keep (empty means every other column).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date_column: String,
    #[serde(default)]
    pub value_columns: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date_column: "date".to_string(),
            value_columns: Vec::new(),
        }
    }
}

/// Load a CSV file (header row, ISO-8601 date column, real-valued level
/// columns) into a panel. Rows are sorted by date; duplicate dates are
/// collapsed when their values agree and rejected otherwise. Any
/// unparseable cell is an error naming the offending row.
pub fn load_panel(path: &Path, schema: &CsvSchema) -> Result<TimeSeriesPanel> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.display().to_string(),
            source,
        })?
        .clone();
    let date_idx = headers
        .iter()
        .position(|h| h == schema.date_column)
        .ok_or_else(|| Error::data(format!("missing date column '{}'", schema.date_column)))?;

    let value_cols: Vec<(usize, String)> = if schema.value_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != date_idx)
            .map(|(i, h)| (i, h.to_string()))
            .collect()
    } else {
        schema
            .value_columns
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .map(|i| (i, name.clone()))
                    .ok_or_else(|| Error::data(format!("missing column '{name}'")))
            })
            .collect::<Result<_>>()?
    };
    if value_cols.is_empty() {
        return Err(Error::data("csv has no value columns"));
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2; // header is line 1
        let record = record.map_err(|source| Error::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let date_str = record
            .get(date_idx)
            .ok_or_else(|| Error::data(format!("row {line}: missing date cell")))?;
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
            .map_err(|_| Error::data(format!("row {line}: unparseable date '{date_str}'")))?;
        let mut values = Vec::with_capacity(value_cols.len());
        for (idx, name) in &value_cols {
            let cell = record
                .get(*idx)
                .ok_or_else(|| Error::data(format!("row {line}: missing cell for '{name}'")))?;
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::data(format!("row {line}: unparseable value '{cell}' in column '{name}'"))
            })?;
            if !value.is_finite() {
                return Err(Error::data(format!(
                    "row {line}: non-finite value in column '{name}'"
                )));
            }
            values.push(value);
        }
        rows.push((date, values));
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }

    rows.sort_by_key(|(d, _)| *d);
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); value_cols.len()];
    for (date, values) in rows {
        if dates.last() == Some(&date) {
            let at = dates.len() - 1;
            let conflicting = columns.iter().enumerate().any(|(c, col)| col[at] != values[c]);
            if conflicting {
                return Err(Error::data(format!(
                    "duplicate date {date} with conflicting values"
                )));
            }
            continue;
        }
        dates.push(date);
        for (c, v) in values.into_iter().enumerate() {
            columns[c].push(v);
        }
    }

    let series = value_cols
        .into_iter()
        .map(|(_, name)| name)
        .zip(columns)
        .collect();
    TimeSeriesPanel::new(dates, series)
}

/// Merge panels on the intersection of their date sets. Series names must
/// be disjoint; an empty intersection is an error.
pub fn align_intersection(panels: &[TimeSeriesPanel]) -> Result<TimeSeriesPanel> {
    let Some((first, rest)) = panels.split_first() else {
        return Err(Error::data("align_intersection needs at least one panel"));
    };
    let mut common: Vec<NaiveDate> = first.dates.clone();
    for panel in rest {
        common.retain(|d| panel.dates.binary_search(d).is_ok());
    }
    if common.is_empty() {
        return Err(Error::data("panels have no dates in common"));
    }

    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for panel in panels {
        let keep: Vec<usize> = common.iter().map(|d| panel.date_index(*d)).collect::<Result<_>>()?;
        for (name, values) in &panel.series {
            if series.contains_key(name) {
                return Err(Error::data(format!("series name collision: '{name}'")));
            }
            series.insert(name.clone(), keep.iter().map(|&i| values[i]).collect());
        }
    }
    TimeSeriesPanel::new(common, series)
}

/// How a level change is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeMode {
    /// `v[t] − v[t−lag]`
    Difference,
    /// `v[t]/v[t−lag] − 1`
    Relative,
}

/// Change of a named series over `lag` observations. The first `lag`
/// entries are unavailable (`None`).
pub fn change_series(
    panel: &TimeSeriesPanel,
    name: &str,
    lag: usize,
    mode: ChangeMode,
) -> Result<Vec<Option<f64>>> {
    let values = panel.series(name)?;
    if lag == 0 || lag >= values.len() {
        return Err(Error::data(format!(
            "lag {lag} out of range for series of length {}",
            values.len()
        )));
    }
    let mut out = vec![None; values.len()];
    for t in lag..values.len() {
        let prev = values[t - lag];
        let change = match mode {
            ChangeMode::Difference => values[t] - prev,
            ChangeMode::Relative => {
                if prev == 0.0 {
                    return Err(Error::numeric(format!(
                        "relative change of '{name}' hits a zero level at offset {}",
                        t - lag
                    )));
                }
                values[t] / prev - 1.0
            }
        };
        out[t] = Some(change);
    }
    Ok(out)
}

/// Rolling z-score over a trailing window inclusive of the current value.
/// Entries with insufficient history are unavailable; a window with std
/// below 1e-12 yields a z-score of 0.
pub fn rolling_zscore(values: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if window < 2 {
        return Err(Error::data("rolling z-score window must be at least 2"));
    }
    let mut out = vec![None; values.len()];
    for t in 0..values.len() {
        if t + 1 < window {
            continue;
        }
        let slice = &values[t + 1 - window..=t];
        if slice.iter().any(|v| v.is_none()) {
            continue;
        }
        let vals: Vec<f64> = slice.iter().map(|v| v.unwrap()).collect();
        let std = math::sample_std(&vals);
        out[t] = Some(if std < ZERO_STD_TOL {
            0.0
        } else {
            (vals[window - 1] - math::mean(&vals)) / std
        });
    }
    Ok(out)
}

/// Difference between the sample std of one-step changes over a short
/// trailing window and over a long trailing window.
pub fn rolling_std_diff(
    values: &[f64],
    short_window: usize,
    long_window: usize,
) -> Result<Vec<Option<f64>>> {
    if short_window < 2 || short_window >= long_window {
        return Err(Error::data(
            "rolling std difference requires 2 <= short_window < long_window",
        ));
    }
    let mut changes = vec![None; values.len()];
    for t in 1..values.len() {
        changes[t] = Some(values[t] - values[t - 1]);
    }
    let window_std = |t: usize, window: usize| -> Option<f64> {
        if t + 1 < window + 1 {
            return None;
        }
        let slice = &changes[t + 1 - window..=t];
        if slice.iter().any(|v| v.is_none()) {
            return None;
        }
        let vals: Vec<f64> = slice.iter().map(|v| v.unwrap()).collect();
        Some(math::sample_std(&vals))
    };
    let mut out = vec![None; values.len()];
    for t in 0..values.len() {
        if let (Some(short), Some(long)) = (window_std(t, short_window), window_std(t, long_window))
        {
            out[t] = Some(short - long);
        }
    }
    Ok(out)
}

/// One declared feature column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

/// The transform producing a feature column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Change of a level series over `lag` observations.
    Change {
        series: String,
        lag: usize,
        mode: ChangeMode,
    },
    /// Change over `lag` observations, z-scored over a trailing window.
    ChangeZscore {
        series: String,
        lag: usize,
        mode: ChangeMode,
        window: usize,
    },
    /// Short-window minus long-window std of one-step level changes,
    /// optionally z-scored over `zscore_window`.
    StdDiff {
        series: String,
        short_window: usize,
        long_window: usize,
        #[serde(default)]
        zscore_window: Option<usize>,
    },
    /// z-score of a short rolling average against a trailing window of the
    /// raw series.
    AvgZscore {
        series: String,
        avg_window: usize,
        window: usize,
    },
}

impl FeatureKind {
    fn compute(&self, panel: &TimeSeriesPanel) -> Result<Vec<Option<f64>>> {
        match self {
            FeatureKind::Change { series, lag, mode } => change_series(panel, series, *lag, *mode),
            FeatureKind::ChangeZscore {
                series,
                lag,
                mode,
                window,
            } => {
                let changes = change_series(panel, series, *lag, *mode)?;
                rolling_zscore(&changes, *window)
            }
            FeatureKind::StdDiff {
                series,
                short_window,
                long_window,
                zscore_window,
            } => {
                let diff = rolling_std_diff(panel.series(series)?, *short_window, *long_window)?;
                match zscore_window {
                    Some(w) => rolling_zscore(&diff, *w),
                    None => Ok(diff),
                }
            }
            FeatureKind::AvgZscore {
                series,
                avg_window,
                window,
            } => {
                let values = panel.series(series)?;
                if *avg_window < 1 || *window < 2 {
                    return Err(Error::data("avg z-score needs avg_window >= 1, window >= 2"));
                }
                let mut out = vec![None; values.len()];
                for t in 0..values.len() {
                    if t + 1 < *window || t + 1 < *avg_window {
                        continue;
                    }
                    let long = &values[t + 1 - window..=t];
                    let avg = math::mean(&values[t + 1 - avg_window..=t]);
                    let std = math::sample_std(long);
                    out[t] = Some(if std < ZERO_STD_TOL {
                        0.0
                    } else {
                        (avg - math::mean(long)) / std
                    });
                }
                Ok(out)
            }
        }
    }
}

/// Dense feature matrix restricted to dates where every feature is
/// available.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    /// Row-major: one row of `feature_names.len()` entries per date.
    pub rows: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row_for(&self, date: NaiveDate) -> Option<&[f64]> {
        self.dates
            .binary_search(&date)
            .ok()
            .map(|i| self.rows[i].as_slice())
    }
}

/// Assemble the feature matrix for an ordered feature spec, keeping only
/// the dates where every column is available.
pub fn build_features(panel: &TimeSeriesPanel, specs: &[FeatureSpec]) -> Result<FeatureMatrix> {
    if specs.is_empty() {
        return Err(Error::data("feature spec is empty"));
    }
    let columns: Vec<Vec<Option<f64>>> = specs
        .iter()
        .map(|spec| spec.kind.compute(panel))
        .collect::<Result<_>>()?;

    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for t in 0..panel.len() {
        if columns.iter().all(|col| col[t].is_some()) {
            dates.push(panel.dates[t]);
            rows.push(columns.iter().map(|col| col[t].unwrap()).collect());
        }
    }
    if rows.is_empty() {
        return Err(Error::data("no dates with all features available"));
    }
    Ok(FeatureMatrix {
        dates,
        rows,
        feature_names: specs.iter().map(|s| s.name.clone()).collect(),
    })
}

/// Per-instrument rule converting a risk-factor move into an instrument
/// return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ReturnRule {
    /// `v[end]/v[start] − 1` on a price level series.
    PriceReturn,
    /// `−duration × (y[end] − y[start])` on a yield series in decimal units.
    DurationYield { duration: f64 },
}

impl ReturnRule {
    /// Instrument return for a move of its risk factor from `start` to `end`.
    pub fn window_return(&self, start: f64, end: f64) -> Result<f64> {
        match self {
            ReturnRule::PriceReturn => {
                if start == 0.0 {
                    return Err(Error::numeric("price return over a zero starting level"));
                }
                Ok(end / start - 1.0)
            }
            ReturnRule::DurationYield { duration } => Ok(-duration * (end - start)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instrument {
    /// Panel series carrying the instrument's risk factor.
    pub series: String,
    pub weight: f64,
    #[serde(flatten)]
    pub rule: ReturnRule,
}

/// Weighted instrument basket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Portfolio {
    pub instruments: Vec<Instrument>,
}

impl Portfolio {
    pub fn single(series: &str) -> Self {
        Self {
            instruments: vec![Instrument {
                series: series.to_string(),
                weight: 1.0,
                rule: ReturnRule::PriceReturn,
            }],
        }
    }

    /// Portfolio return for risk-factor moves between two panel rows.
    pub fn window_return(&self, panel: &TimeSeriesPanel, start: usize, end: usize) -> Result<f64> {
        let mut total = 0.0;
        for inst in &self.instruments {
            let series = panel.series(&inst.series)?;
            total += inst.weight * inst.rule.window_return(series[start], series[end])?;
        }
        Ok(total)
    }

    /// Portfolio value path compounded from one-step returns, base 100.
    pub fn value_path(&self, panel: &TimeSeriesPanel) -> Result<Vec<f64>> {
        let mut path = Vec::with_capacity(panel.len());
        let mut value = 100.0;
        path.push(value);
        for t in 1..panel.len() {
            value *= 1.0 + self.window_return(panel, t - 1, t)?;
            path.push(value);
        }
        Ok(path)
    }
}

/// Historical-simulation P&L vector as of one date.
///
/// `pnl[i-1]` (for i = 1..=T, i = 1 most recent) is the portfolio return
/// for risk-factor moves from `horizon_days + i` observations before the
/// as-of date to `i` observations before it.
#[derive(Debug, Clone, PartialEq)]
pub struct HistRetVector {
    pub asof_date: NaiveDate,
    pub horizon_days: usize,
    pub pnl: Vec<f64>,
}

/// Simulated P&L of the current portfolio over the trailing `lookback`
/// windows of `horizon_days` risk-factor moves.
pub fn simulate_hist_returns(
    panel: &TimeSeriesPanel,
    portfolio: &Portfolio,
    horizon_days: usize,
    lookback: usize,
    asof: NaiveDate,
) -> Result<HistRetVector> {
    if horizon_days == 0 || lookback == 0 {
        return Err(Error::data("horizon and lookback must be positive"));
    }
    let t = panel.date_index(asof)?;
    if t < lookback + horizon_days {
        return Err(Error::data(format!(
            "as-of date {asof} needs at least {} prior observations, has {t}",
            lookback + horizon_days
        )));
    }
    let mut pnl = Vec::with_capacity(lookback);
    for i in 1..=lookback {
        pnl.push(portfolio.window_return(panel, t - horizon_days - i, t - i)?);
    }
    Ok(HistRetVector {
        asof_date: asof,
        horizon_days,
        pnl,
    })
}
