//! Stress scenario design from historical peak losses.
//!
//! A peak-loss record for an anchor date is the worst portfolio P&L over
//! any window of at most `max_window` days starting within `horizon` days
//! of the anchor (window fully inside the anchor's horizon), together with
//! the risk-factor shifts over the realizing window. Records are
//! classified into categories on the (loss, key-shift) plane, each
//! category gets a Gaussian loss fit and per-risk-factor bivariate fits,
//! and the predictive category probabilities at the as-of date mix them
//! into a loss distribution. The target loss solves the mixture CDF at
//! 1−p*, and expected shifts follow from the bivariate conditional means.
//!
//! Losses are carried as signed P&L (negative = loss) throughout; reports
//! display magnitudes.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{build_features, ChangeMode, FeatureSpec, Portfolio, TimeSeriesPanel};
use crate::math;
use crate::rng;
use crate::var::redistribute_mass;
use crate::vi;

/// Worst-window record for one anchor index. Indices address the value
/// path (and the panel rows it was computed from).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakLossRecord {
    pub anchor: usize,
    /// Signed portfolio P&L of the realizing window (negative = loss).
    pub loss: f64,
    pub start: usize,
    pub end: usize,
    /// Risk-factor shifts over [start, end], filled by
    /// [`extract_rf_shifts`].
    #[serde(default)]
    pub shifts: BTreeMap<String, f64>,
}

/// Peak-loss records for every anchor with a full horizon.
///
/// For anchor t: starts s range over [t, t+horizon−1]; ends over
/// (s, min(s+max_window, t+horizon)]. Ties break to the earliest start,
/// then the earliest end.
pub fn peak_loss_surface(
    path: &[f64],
    max_window: usize,
    horizon: usize,
) -> Result<Vec<PeakLossRecord>> {
    if max_window == 0 || horizon == 0 {
        return Err(Error::config("window length and horizon must be positive"));
    }
    if path.len() <= horizon {
        return Err(Error::data(format!(
            "value path of length {} cannot host a horizon of {horizon}",
            path.len()
        )));
    }
    let mut records = Vec::with_capacity(path.len() - horizon);
    for anchor in 0..path.len() - horizon {
        let mut best: Option<(f64, usize, usize)> = None;
        for start in anchor..anchor + horizon {
            let end_cap = (start + max_window).min(anchor + horizon);
            // Per-start worst end, earliest end on ties.
            let mut start_best: Option<(f64, usize)> = None;
            for end in start + 1..=end_cap {
                let pnl = path[end] - path[start];
                if start_best.is_none_or(|(v, _)| pnl < v) {
                    start_best = Some((pnl, end));
                }
            }
            if let Some((pnl, end)) = start_best {
                if best.is_none_or(|(v, _, _)| pnl < v) {
                    best = Some((pnl, start, end));
                }
            }
        }
        let (loss, start, end) = best.expect("every anchor has at least one window");
        records.push(PeakLossRecord {
            anchor,
            loss,
            start,
            end,
            shifts: BTreeMap::new(),
        });
    }
    Ok(records)
}

/// Inequality constraint on the shift of one risk factor over a candidate
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConstraint {
    pub factor: String,
    pub mode: ChangeMode,
    pub direction: ConstraintDirection,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintDirection {
    AtLeast,
    AtMost,
}

impl ShiftConstraint {
    pub fn satisfied(&self, shift: f64) -> bool {
        match self.direction {
            ConstraintDirection::AtLeast => shift >= self.threshold,
            ConstraintDirection::AtMost => shift <= self.threshold,
        }
    }

    pub fn describe(&self) -> String {
        let op = match self.direction {
            ConstraintDirection::AtLeast => ">=",
            ConstraintDirection::AtMost => "<=",
        };
        format!("{} shift {} {}", self.factor, op, self.threshold)
    }
}

fn window_shift(levels: &[f64], mode: ChangeMode, start: usize, end: usize) -> Result<f64> {
    if start == end {
        return Ok(0.0);
    }
    match mode {
        ChangeMode::Difference => Ok(levels[end] - levels[start]),
        ChangeMode::Relative => {
            if levels[start] == 0.0 {
                return Err(Error::numeric("relative shift over a zero starting level"));
            }
            Ok(levels[end] / levels[start] - 1.0)
        }
    }
}

/// Constrained surface: anchors whose every candidate window violates the
/// constraint are reported separately instead of yielding a record.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSurface {
    pub records: Vec<PeakLossRecord>,
    pub infeasible_anchors: Vec<usize>,
}

/// Peak-loss records restricted to windows whose key risk-factor shift
/// satisfies the constraint. `path` must align row-for-row with `panel`.
pub fn constrained_peak_loss_surface(
    path: &[f64],
    panel: &TimeSeriesPanel,
    max_window: usize,
    horizon: usize,
    constraint: &ShiftConstraint,
) -> Result<ConstrainedSurface> {
    if max_window == 0 || horizon == 0 {
        return Err(Error::config("window length and horizon must be positive"));
    }
    if path.len() != panel.len() {
        return Err(Error::data("value path and panel must have equal length"));
    }
    if path.len() <= horizon {
        return Err(Error::data(format!(
            "value path of length {} cannot host a horizon of {horizon}",
            path.len()
        )));
    }
    let key = panel.series(&constraint.factor)?;
    let mut records = Vec::new();
    let mut infeasible = Vec::new();
    for anchor in 0..path.len() - horizon {
        let mut best: Option<(f64, usize, usize)> = None;
        for start in anchor..anchor + horizon {
            let end_cap = (start + max_window).min(anchor + horizon);
            let mut start_best: Option<(f64, usize)> = None;
            for end in start + 1..=end_cap {
                if !constraint.satisfied(window_shift(key, constraint.mode, start, end)?) {
                    continue;
                }
                let pnl = path[end] - path[start];
                if start_best.is_none_or(|(v, _)| pnl < v) {
                    start_best = Some((pnl, end));
                }
            }
            if let Some((pnl, end)) = start_best {
                if best.is_none_or(|(v, _, _)| pnl < v) {
                    best = Some((pnl, start, end));
                }
            }
        }
        match best {
            Some((loss, start, end)) => records.push(PeakLossRecord {
                anchor,
                loss,
                start,
                end,
                shifts: BTreeMap::new(),
            }),
            None => infeasible.push(anchor),
        }
    }
    Ok(ConstrainedSurface { records, infeasible_anchors: infeasible })
}

/// One risk factor and how its shift over a window is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFactorRule {
    pub series: String,
    pub mode: ChangeMode,
}

/// Fill each record's per-risk-factor shifts over its realizing window.
pub fn extract_rf_shifts(
    panel: &TimeSeriesPanel,
    mut records: Vec<PeakLossRecord>,
    rules: &[RiskFactorRule],
) -> Result<Vec<PeakLossRecord>> {
    for rule in rules {
        let levels = panel.series(&rule.series)?;
        for record in &mut records {
            if record.end >= levels.len() {
                return Err(Error::data(format!(
                    "record window [{}, {}] runs past series '{}'",
                    record.start, record.end, rule.series
                )));
            }
            let shift = window_shift(levels, rule.mode, record.start, record.end)?;
            record.shifts.insert(rule.series.clone(), shift);
        }
    }
    Ok(records)
}

/// One shift interval [shift_min, shift_max) with its own loss severity
/// cuts; `None` bounds are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftBand {
    #[serde(default)]
    pub shift_min: Option<f64>,
    #[serde(default)]
    pub shift_max: Option<f64>,
    /// Interior severity cuts on the signed-P&L loss axis.
    pub loss_cuts: Vec<f64>,
}

impl ShiftBand {
    fn contains(&self, shift: f64) -> bool {
        self.shift_min.is_none_or(|lo| shift >= lo) && self.shift_max.is_none_or(|hi| shift < hi)
    }

    fn cells(&self) -> usize {
        self.loss_cuts.len() + 1
    }
}

/// Stress categories partitioning the (loss, key-shift) plane: contiguous
/// key-shift bands, each cut into loss severity cells. Without a key
/// factor there is a single band and classification is by loss alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressCategorySpec {
    #[serde(default)]
    pub key_factor: Option<RiskFactorRule>,
    pub bands: Vec<ShiftBand>,
}

impl StressCategorySpec {
    /// Loss-only categories from severity cuts.
    pub fn loss_only(loss_cuts: Vec<f64>) -> Self {
        Self {
            key_factor: None,
            bands: vec![ShiftBand { shift_min: None, shift_max: None, loss_cuts }],
        }
    }

    pub fn category_count(&self) -> usize {
        self.bands.iter().map(ShiftBand::cells).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::config("need at least one shift band"));
        }
        if self.key_factor.is_none() && self.bands.len() != 1 {
            return Err(Error::config("multiple shift bands require a key factor"));
        }
        // Bands must tile the real line in order.
        if self.bands[0].shift_min.is_some() {
            return Err(Error::config("first shift band must be unbounded below"));
        }
        if self.bands[self.bands.len() - 1].shift_max.is_some() {
            return Err(Error::config("last shift band must be unbounded above"));
        }
        for w in self.bands.windows(2) {
            match (w[0].shift_max, w[1].shift_min) {
                (Some(hi), Some(lo)) if hi == lo => {}
                _ => return Err(Error::config("shift bands must be contiguous")),
            }
        }
        for band in &self.bands {
            if band.loss_cuts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("loss cuts must be strictly increasing"));
            }
        }
        Ok(())
    }

    /// Category index of a (loss, key shift) point. Bands come first in
    /// listed order; within a band, cells run from the most severe loss up.
    pub fn classify_point(&self, loss: f64, key_shift: Option<f64>) -> Result<usize> {
        let (band_idx, band) = if self.key_factor.is_none() {
            (0, &self.bands[0])
        } else {
            let shift = key_shift
                .ok_or_else(|| Error::data("record lacks the key risk-factor shift"))?;
            self.bands
                .iter()
                .enumerate()
                .find(|(_, b)| b.contains(shift))
                .ok_or_else(|| Error::data("shift bands do not cover the key shift"))?
        };
        let offset: usize = self.bands[..band_idx].iter().map(ShiftBand::cells).sum();
        let cell = band.loss_cuts.iter().take_while(|c| loss >= **c).count();
        Ok(offset + cell)
    }

    /// Human-readable cell bounds for diagnostics.
    pub fn describe_category(&self, index: usize) -> String {
        let mut offset = 0;
        for band in &self.bands {
            if index < offset + band.cells() {
                let cell = index - offset;
                let lo = if cell == 0 {
                    "-inf".to_string()
                } else {
                    band.loss_cuts[cell - 1].to_string()
                };
                let hi = if cell == band.loss_cuts.len() {
                    "+inf".to_string()
                } else {
                    band.loss_cuts[cell].to_string()
                };
                let shift = match (&self.key_factor, band.shift_min, band.shift_max) {
                    (None, _, _) => String::new(),
                    (Some(k), lo_s, hi_s) => format!(
                        ", {} shift in [{}, {})",
                        k.series,
                        lo_s.map_or("-inf".to_string(), |v| v.to_string()),
                        hi_s.map_or("+inf".to_string(), |v| v.to_string())
                    ),
                };
                return format!("loss in [{lo}, {hi}){shift}");
            }
            offset += band.cells();
        }
        format!("category {index} out of range")
    }
}

/// Assign each record to its stress category.
pub fn classify_stress(
    records: &[PeakLossRecord],
    spec: &StressCategorySpec,
) -> Result<Vec<usize>> {
    spec.validate()?;
    records
        .iter()
        .map(|r| {
            let key_shift = spec
                .key_factor
                .as_ref()
                .and_then(|k| r.shifts.get(&k.series).copied());
            spec.classify_point(r.loss, key_shift)
        })
        .collect()
}

/// Gaussian loss fit for one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryLossGaussian {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Fewer than two records: std is the floor value.
    pub degenerate: bool,
    /// Fewer than five records.
    pub low_confidence: bool,
}

/// Per-category sample mean/std of losses. Categories with no records are
/// `None`; a single-record category gets the floored std and a degeneracy
/// flag. The floor is 1e-6 times the overall loss std.
pub fn fit_category_gaussians(
    records: &[PeakLossRecord],
    labels: &[usize],
    categories: usize,
) -> Result<Vec<Option<CategoryLossGaussian>>> {
    if records.is_empty() {
        return Err(Error::data("no records to fit"));
    }
    if records.len() != labels.len() {
        return Err(Error::data("records and labels must have equal length"));
    }
    let all_losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let floor = (1e-6 * math::sample_std(&all_losses)).max(1e-12);

    let mut per_category: Vec<Vec<f64>> = vec![Vec::new(); categories];
    for (record, &label) in records.iter().zip(labels) {
        if label >= categories {
            return Err(Error::data("label out of range"));
        }
        per_category[label].push(record.loss);
    }
    Ok(per_category
        .into_iter()
        .map(|losses| {
            if losses.is_empty() {
                return None;
            }
            let count = losses.len();
            let std = if count < 2 { floor } else { math::sample_std(&losses).max(floor) };
            Some(CategoryLossGaussian {
                mean: math::mean(&losses),
                std,
                count,
                degenerate: count < 2,
                low_confidence: count < 5,
            })
        })
        .collect())
}

/// Bivariate Gaussian moments of (loss, risk-factor shift) for one
/// category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateFit {
    pub loss_mean: f64,
    pub shift_mean: f64,
    pub loss_var: f64,
    pub shift_var: f64,
    pub cov: f64,
    pub count: usize,
    pub degenerate: bool,
}

impl BivariateFit {
    /// Conditional expected shift given a loss level. Falls back to the
    /// unconditional shift mean when the loss variance is degenerate.
    pub fn conditional_shift(&self, loss: f64) -> f64 {
        if self.loss_var <= 1e-18 {
            return self.shift_mean;
        }
        self.shift_mean + self.cov / self.loss_var * (loss - self.loss_mean)
    }
}

/// Per-category sample moments of (loss, shift) pairs for one risk factor.
pub fn fit_bivariate(
    records: &[PeakLossRecord],
    labels: &[usize],
    categories: usize,
    factor: &str,
) -> Result<Vec<Option<BivariateFit>>> {
    if records.len() != labels.len() {
        return Err(Error::data("records and labels must have equal length"));
    }
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); categories];
    for (record, &label) in records.iter().zip(labels) {
        let shift = record
            .shifts
            .get(factor)
            .ok_or_else(|| Error::data(format!("record lacks shift for '{factor}'")))?;
        pairs[label].0.push(record.loss);
        pairs[label].1.push(*shift);
    }
    Ok(pairs
        .into_iter()
        .map(|(losses, shifts)| {
            if losses.is_empty() {
                return None;
            }
            let count = losses.len();
            let loss_std = math::sample_std(&losses);
            Some(BivariateFit {
                loss_mean: math::mean(&losses),
                shift_mean: math::mean(&shifts),
                loss_var: loss_std * loss_std,
                shift_var: math::sample_std(&shifts).powi(2),
                cov: math::sample_cov(&losses, &shifts),
                count,
                degenerate: count < 2 || loss_std * loss_std <= 1e-18,
            })
        })
        .collect())
}

/// Gaussian mixture over the signed-P&L loss axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GaussianMixture {
    pub fn pdf(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.weights.len() {
            let z = (x - self.means[i]) / self.stds[i];
            total += self.weights[i] * (-0.5 * z * z).exp()
                / (self.stds[i] * (2.0 * std::f64::consts::PI).sqrt());
        }
        total
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (0..self.weights.len())
            .map(|i| self.weights[i] * math::normal_cdf((x - self.means[i]) / self.stds[i]))
            .sum()
    }
}

/// Mix the fitted category Gaussians with the predictive category
/// probabilities. Mass on unfitted categories is redistributed pro rata;
/// the effective simplex actually used is returned alongside.
pub fn loss_distribution(
    cat_probs: &[f64],
    gaussians: &[Option<CategoryLossGaussian>],
) -> Result<(GaussianMixture, Vec<f64>)> {
    if cat_probs.len() != gaussians.len() {
        return Err(Error::data("category probability length mismatch"));
    }
    let available: Vec<bool> = gaussians.iter().map(Option::is_some).collect();
    let effective = redistribute_mass(cat_probs, &available)?;
    let mut mixture = GaussianMixture {
        weights: Vec::new(),
        means: Vec::new(),
        stds: Vec::new(),
    };
    for (j, gaussian) in gaussians.iter().enumerate() {
        if let Some(g) = gaussian {
            if effective[j] > 0.0 {
                mixture.weights.push(effective[j]);
                mixture.means.push(g.mean);
                mixture.stds.push(g.std);
            }
        }
    }
    if mixture.weights.is_empty() {
        return Err(Error::data("no fitted category carries probability mass"));
    }
    Ok((mixture, effective))
}

/// Target loss L* with mixture CDF(L*) = 1−p*: with probability p* the
/// peak loss is less severe than L*. Bisection to 1e-10 relative width.
pub fn target_loss(mixture: &GaussianMixture, p_star: f64) -> Result<f64> {
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(Error::config(format!("p* must be in (0,1), got {p_star}")));
    }
    let target = 1.0 - p_star;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..mixture.weights.len() {
        lo = lo.min(mixture.means[i] - 40.0 * mixture.stds[i]);
        hi = hi.max(mixture.means[i] + 40.0 * mixture.stds[i]);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = mixture.cdf(mid);
        if (c - target).abs() < 1e-13 || hi - lo < 1e-12 * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expected shift per risk factor at the target loss: category-probability
/// weighted bivariate conditional means.
pub fn scenario_shifts(
    effective_probs: &[f64],
    fits: &BTreeMap<String, Vec<Option<BivariateFit>>>,
    target: f64,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (factor, per_category) in fits {
        if per_category.len() != effective_probs.len() {
            return Err(Error::data("bivariate fit length mismatch"));
        }
        let mut shift = 0.0;
        for (j, p) in effective_probs.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let fit = per_category[j].as_ref().ok_or_else(|| {
                Error::data(format!(
                    "category {j} carries probability but has no bivariate fit for '{factor}'"
                ))
            })?;
            shift += p * fit.conditional_shift(target);
        }
        out.insert(factor.clone(), shift);
    }
    Ok(out)
}

/// Full configuration of a scenario design run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StressConfig {
    pub features: Vec<FeatureSpec>,
    pub portfolio: Portfolio,
    /// Maximum loss-window length in business days.
    pub max_loss_window: usize,
    /// Horizon in business days within which the loss window may start (H).
    pub horizon: usize,
    /// Scenario confidence: with probability p* the realized peak loss
    /// should be less severe than the target.
    pub p_star: f64,
    /// Trailing calibration window in observations.
    pub calibration_window: usize,
    pub clusters: usize,
    pub category_spec: StressCategorySpec,
    pub risk_factors: Vec<RiskFactorRule>,
    #[serde(default)]
    pub constraint: Option<ShiftConstraint>,
    pub dirichlet_prior: f64,
    /// Diagonal override of the within-regime feature covariance.
    #[serde(default)]
    pub within_variance: Option<Vec<f64>>,
    /// Diagonal override of the regime-center prior covariance.
    #[serde(default)]
    pub mean_prior_variance: Option<Vec<f64>>,
    pub cavi: vi::CaviOptions,
}

impl StressConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_loss_window == 0 || self.horizon == 0 {
            return Err(Error::config("loss window and horizon must be positive"));
        }
        if !(self.p_star > 0.0 && self.p_star < 1.0) {
            return Err(Error::config("p* must lie strictly in (0,1)"));
        }
        if self.calibration_window <= self.horizon + self.max_loss_window {
            return Err(Error::config(
                "calibration window must exceed horizon + loss window",
            ));
        }
        if self.clusters == 0 {
            return Err(Error::config("need at least one cluster"));
        }
        if self.dirichlet_prior <= 0.0 {
            return Err(Error::config("Dirichlet prior must be positive"));
        }
        if self.features.is_empty() {
            return Err(Error::config("at least one feature required"));
        }
        if self.risk_factors.is_empty() {
            return Err(Error::config("at least one risk factor required"));
        }
        self.category_spec.validate()?;
        if let Some(key) = &self.category_spec.key_factor {
            if !self.risk_factors.iter().any(|r| r.series == key.series) {
                return Err(Error::config(format!(
                    "key risk factor '{}' is not among the configured risk factors",
                    key.series
                )));
            }
        }
        if let Some(c) = &self.constraint {
            if !self.risk_factors.iter().any(|r| r.series == c.factor) {
                return Err(Error::config(format!(
                    "constraint factor '{}' is not among the configured risk factors",
                    c.factor
                )));
            }
        }
        Ok(())
    }
}

/// Per-category fit diagnostics carried into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDiagnostic {
    pub index: usize,
    pub description: String,
    pub count: usize,
    pub fitted: bool,
    pub degenerate: bool,
    pub low_confidence: bool,
}

/// Designed scenario: target loss, expected shifts, and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub asof: NaiveDate,
    pub p_star: f64,
    /// Signed P&L target (negative = loss).
    pub target_loss_pnl: f64,
    /// Displayed magnitude of the target loss.
    pub target_loss_magnitude: f64,
    pub shifts: BTreeMap<String, f64>,
    pub category_probs: Vec<f64>,
    pub effective_category_probs: Vec<f64>,
    pub cluster_probs: Vec<f64>,
    pub categories: Vec<CategoryDiagnostic>,
    pub record_count: usize,
    pub infeasible_anchors: usize,
    #[serde(default)]
    pub constraint: Option<String>,
    pub converged: bool,
}

/// Design a scenario as of the last panel date.
pub fn design_scenario(panel: &TimeSeriesPanel, config: &StressConfig) -> Result<ScenarioResult> {
    let asof = *panel
        .dates()
        .last()
        .ok_or_else(|| Error::data("empty panel"))?;
    design_scenario_at(panel, config, asof)
}

/// Reserved series name for the compounded portfolio value injected into
/// the feature panel.
pub const PORTFOLIO_VALUE_SERIES: &str = "portfolio_value";

/// Design a scenario as of a specific panel date, calibrating on the
/// trailing window ending there. Deterministic for a fixed seed.
pub fn design_scenario_at(
    panel: &TimeSeriesPanel,
    config: &StressConfig,
    asof: NaiveDate,
) -> Result<ScenarioResult> {
    config.validate()?;
    let t_asof = panel.date_index(asof)?;
    let window = config.calibration_window;
    let w_start = (t_asof + 1).checked_sub(window).ok_or_else(|| {
        Error::data(format!(
            "as-of date {asof} lacks the {window}-observation calibration window"
        ))
    })?;
    let horizon = config.horizon;
    if t_asof < w_start + horizon {
        return Err(Error::data("calibration window shorter than the horizon"));
    }

    let path = config.portfolio.value_path(panel)?;
    let feature_panel = panel.with_series_if_absent(PORTFOLIO_VALUE_SERIES, path.clone())?;

    // Records anchored inside the calibration window with a full horizon.
    let last_anchor = t_asof - horizon;
    let (mut records, infeasible_count) = match &config.constraint {
        None => {
            let all = peak_loss_surface(&path, config.max_loss_window, horizon)?;
            (keep_anchor_range(all, w_start, last_anchor), 0usize)
        }
        Some(constraint) => {
            let surface = constrained_peak_loss_surface(
                &path,
                panel,
                config.max_loss_window,
                horizon,
                constraint,
            )?;
            let infeasible = surface
                .infeasible_anchors
                .iter()
                .filter(|a| (w_start..=last_anchor).contains(*a))
                .count();
            (
                keep_anchor_range(surface.records, w_start, last_anchor),
                infeasible,
            )
        }
    };
    if records.len() < 2 {
        return Err(Error::data(format!(
            "only {} usable peak-loss records in the calibration window",
            records.len()
        )));
    }
    records = extract_rf_shifts(panel, records, &config.risk_factors)?;
    let labels = classify_stress(&records, &config.category_spec)?;
    let categories = config.category_spec.category_count();

    // Feature vectors at the record anchors and the as-of date.
    let matrix = build_features(&feature_panel, &config.features)?;
    let mut feature_rows: Vec<Option<DVector<f64>>> = vec![None; panel.len()];
    for (i, date) in matrix.dates.iter().enumerate() {
        feature_rows[panel.date_index(*date)?] = Some(DVector::from_vec(matrix.rows[i].clone()));
    }
    let mut features = Vec::with_capacity(records.len());
    for record in &records {
        match &feature_rows[record.anchor] {
            Some(x) => features.push(x.clone()),
            None => {
                return Err(Error::data(format!(
                    "features unavailable at record anchor {} (insufficient warmup)",
                    record.anchor
                )))
            }
        }
    }
    let x_asof = feature_rows[t_asof]
        .as_ref()
        .ok_or_else(|| Error::data("features unavailable at the as-of date"))?
        .clone();

    // Variational fit on (features, stress category) pairs.
    let seed = rng::child_seed(config.cavi.seed, t_asof as u64);
    let mut center_rng = rng::child(seed, u64::MAX);
    let centers = vi::seed_centers(&features, config.clusters, &mut center_rng);
    let mut hyper = vi::Hyperparams::defaults_from_data(&features, centers, categories)?;
    for alpha in &mut hyper.category_priors {
        alpha.fill(config.dirichlet_prior);
    }
    crate::var::apply_cov_overrides(
        &mut hyper,
        config.within_variance.as_deref(),
        config.mean_prior_variance.as_deref(),
    )?;
    let obs = vi::Observations::new(features, labels.clone())?;
    let opts = vi::CaviOptions { seed, ..config.cavi };
    let state = vi::cavi_fit(&obs, &hyper, &opts)?;
    let category_probs = vi::predictive_category_probs(&x_asof, &hyper, &state)?;
    let cluster_probs = vi::predictive_cluster_probs(&x_asof, &hyper, &state)?;

    // Category fits, loss mixture, target, shifts.
    let gaussians = fit_category_gaussians(&records, &labels, categories)?;
    let (mixture, effective) = loss_distribution(&category_probs, &gaussians)?;
    let target = target_loss(&mixture, config.p_star)?;
    let mut fits = BTreeMap::new();
    for rule in &config.risk_factors {
        fits.insert(
            rule.series.clone(),
            fit_bivariate(&records, &labels, categories, &rule.series)?,
        );
    }
    let shifts = scenario_shifts(&effective, &fits, target)?;

    let diagnostics = (0..categories)
        .map(|j| {
            let g = gaussians[j];
            CategoryDiagnostic {
                index: j,
                description: config.category_spec.describe_category(j),
                count: g.map_or(0, |g| g.count),
                fitted: g.is_some(),
                degenerate: g.is_some_and(|g| g.degenerate),
                low_confidence: g.is_some_and(|g| g.low_confidence),
            }
        })
        .collect();

    Ok(ScenarioResult {
        asof,
        p_star: config.p_star,
        target_loss_pnl: target,
        target_loss_magnitude: -target,
        shifts,
        category_probs,
        effective_category_probs: effective,
        cluster_probs,
        categories: diagnostics,
        record_count: records.len(),
        infeasible_anchors: infeasible_count,
        constraint: config.constraint.as_ref().map(ShiftConstraint::describe),
        converged: state.converged,
    })
}

fn keep_anchor_range(
    records: Vec<PeakLossRecord>,
    first: usize,
    last: usize,
) -> Vec<PeakLossRecord> {
    records
        .into_iter()
        .filter(|r| r.anchor >= first && r.anchor <= last)
        .collect()
}
