//! Probability-weighted historical-simulation VaR.
//!
//! Historical-simulation P&L outcomes are bucketed into outcome categories
//! ([lower, upper) intervals on the raw or z-scored P&L axis). The fitted
//! model's predictive category probabilities then reweight the outcomes:
//! each outcome in category j carries probability p_j/n_j. VaR is the
//! inf-based quantile of that discrete distribution. Baselines: plain
//! historical simulation (uniform weights) and a Gaussian fit to the same
//! simulated returns.

use chrono::NaiveDate;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{
    build_features, simulate_hist_returns, FeatureSpec, HistRetVector, Portfolio, TimeSeriesPanel,
};
use crate::math;
use crate::rng;
use crate::vi;

/// How P&L values are normalized before bucketing or labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "normalization", rename_all = "snake_case")]
pub enum PnlNormalization {
    /// z-score against a trailing window (inclusive of the current value).
    TrailingZscore { window: usize },
    Raw,
}

/// Outcome categories over normalized P&L: `thresholds` are the J−1
/// interior bounds of J contiguous [lower, upper) intervals covering the
/// real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlCategorySpec {
    pub thresholds: Vec<f64>,
    #[serde(flatten)]
    pub normalization: PnlNormalization,
}

impl PnlCategorySpec {
    pub fn category_count(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::config("need at least one category threshold"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("category thresholds must be strictly increasing"));
        }
        if let PnlNormalization::TrailingZscore { window } = self.normalization {
            if window < 2 {
                return Err(Error::config("z-score window must be at least 2"));
            }
        }
        Ok(())
    }

    /// Category of a normalized value; intervals are closed below, open
    /// above.
    pub fn category_of(&self, normalized: f64) -> usize {
        self.thresholds.iter().take_while(|b| normalized >= **b).count()
    }
}

/// Trailing mean and sample std used for z-scoring P&L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrailingStats {
    pub mean: f64,
    pub std: f64,
}

impl TrailingStats {
    pub fn from_values(values: &[f64]) -> Self {
        Self {
            mean: math::mean(values),
            std: math::sample_std(values),
        }
    }

    pub fn zscore(&self, value: f64) -> f64 {
        if self.std < 1e-12 {
            0.0
        } else {
            (value - self.mean) / self.std
        }
    }
}

/// Historical-simulation outcomes split by category, raw P&L units.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCategoryDist {
    pub categories: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl EmpiricalCategoryDist {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Bucket a historical-simulation vector into categories. Empty categories
/// are legal.
pub fn bucket_returns(
    hist: &HistRetVector,
    spec: &PnlCategorySpec,
    stats: &TrailingStats,
) -> Result<EmpiricalCategoryDist> {
    spec.validate()?;
    if hist.pnl.is_empty() {
        return Err(Error::data("empty historical-simulation vector"));
    }
    let j = spec.category_count();
    let mut categories = vec![Vec::new(); j];
    for &pnl in &hist.pnl {
        let value = match spec.normalization {
            PnlNormalization::TrailingZscore { .. } => stats.zscore(pnl),
            PnlNormalization::Raw => pnl,
        };
        categories[spec.category_of(value)].push(pnl);
    }
    let counts = categories.iter().map(|c| c.len()).collect();
    Ok(EmpiricalCategoryDist { categories, counts })
}

/// Label realized forward P&L with its outcome category. `forward_pnl[t]`
/// is `None` where the forward window leaves the sample; labels are `None`
/// there and wherever the trailing normalization window is incomplete.
pub fn label_outcomes(
    forward_pnl: &[Option<f64>],
    spec: &PnlCategorySpec,
) -> Result<Vec<Option<usize>>> {
    spec.validate()?;
    let mut labels = vec![None; forward_pnl.len()];
    for t in 0..forward_pnl.len() {
        let Some(pnl) = forward_pnl[t] else { continue };
        let normalized = match spec.normalization {
            PnlNormalization::Raw => pnl,
            PnlNormalization::TrailingZscore { window } => {
                if t + 1 < window {
                    continue;
                }
                let slice = &forward_pnl[t + 1 - window..=t];
                if slice.iter().any(|v| v.is_none()) {
                    continue;
                }
                let values: Vec<f64> = slice.iter().map(|v| v.unwrap()).collect();
                TrailingStats::from_values(&values).zscore(pnl)
            }
        };
        labels[t] = Some(spec.category_of(normalized));
    }
    Ok(labels)
}

/// Discrete P&L distribution: outcomes with probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPnlDistribution {
    pub outcomes: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Reassign the mass of unavailable entries pro rata across available
/// ones. Falls back to an even split when every available entry has zero
/// probability.
pub fn redistribute_mass(probs: &[f64], available: &[bool]) -> Result<Vec<f64>> {
    assert_eq!(probs.len(), available.len());
    if available.iter().all(|a| *a) {
        return Ok(probs.to_vec());
    }
    let avail_count = available.iter().filter(|a| **a).count();
    if avail_count == 0 {
        return Err(Error::data("no category available to carry probability mass"));
    }
    let avail_sum: f64 = probs
        .iter()
        .zip(available)
        .filter(|(_, a)| **a)
        .map(|(p, _)| *p)
        .sum();
    let out = if avail_sum > 0.0 {
        probs
            .iter()
            .zip(available)
            .map(|(p, a)| if *a { p / avail_sum } else { 0.0 })
            .collect()
    } else {
        available
            .iter()
            .map(|a| if *a { 1.0 / avail_count as f64 } else { 0.0 })
            .collect()
    };
    Ok(out)
}

/// Combine predictive category probabilities with the bucketed outcomes:
/// every outcome in category j receives probability p_j/n_j. Mass on an
/// empty category is redistributed pro rata across nonempty ones.
pub fn weighted_distribution(
    cat_probs: &[f64],
    dist: &EmpiricalCategoryDist,
) -> Result<WeightedPnlDistribution> {
    if cat_probs.len() != dist.counts.len() {
        return Err(Error::data("category probability length mismatch"));
    }
    let sum: f64 = cat_probs.iter().sum();
    if cat_probs.iter().any(|p| *p < -1e-12) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::data("category probabilities must form a simplex"));
    }
    if dist.total() == 0 {
        return Err(Error::data("all categories are empty"));
    }
    let available: Vec<bool> = dist.counts.iter().map(|n| *n > 0).collect();
    let effective = redistribute_mass(cat_probs, &available)?;

    let mut outcomes = Vec::with_capacity(dist.total());
    let mut probabilities = Vec::with_capacity(dist.total());
    for (j, values) in dist.categories.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let per_outcome = effective[j] / values.len() as f64;
        for &v in values {
            outcomes.push(v);
            probabilities.push(per_outcome);
        }
    }
    Ok(WeightedPnlDistribution { outcomes, probabilities })
}

/// Inf-based VaR of a discrete P&L distribution: the smallest loss level
/// `x` (loss = −P&L, reported positive for losses) such that the
/// probability of a strictly larger loss is at most 1−confidence.
pub fn var_quantile(dist: &WeightedPnlDistribution, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config(format!("confidence must be in (0,1), got {confidence}")));
    }
    if dist.outcomes.is_empty() {
        return Err(Error::data("empty distribution"));
    }
    let mut order: Vec<usize> = (0..dist.outcomes.len()).collect();
    order.sort_by(|&a, &b| {
        dist.outcomes[a]
            .partial_cmp(&dist.outcomes[b])
            .expect("outcomes are finite")
    });

    let tail = 1.0 - confidence;
    let mut cum_worse = 0.0;
    let mut answer = -dist.outcomes[order[0]];
    let mut i = 0;
    while i < order.len() {
        let pnl = dist.outcomes[order[i]];
        let mut group_prob = 0.0;
        while i < order.len() && dist.outcomes[order[i]] == pnl {
            group_prob += dist.probabilities[order[i]];
            i += 1;
        }
        if cum_worse <= tail {
            answer = -pnl;
        } else {
            break;
        }
        cum_worse += group_prob;
    }
    Ok(answer)
}

/// Plain historical-simulation VaR: uniform weights over the simulated
/// outcomes.
pub fn hs_var(hist: &HistRetVector, confidence: f64) -> Result<f64> {
    let t = hist.pnl.len();
    if t == 0 {
        return Err(Error::data("empty historical-simulation vector"));
    }
    let dist = WeightedPnlDistribution {
        outcomes: hist.pnl.clone(),
        probabilities: vec![1.0 / t as f64; t],
    };
    var_quantile(&dist, confidence)
}

/// Gaussian VaR calibrated to the simulated returns:
/// −(mean + z_{1−confidence}·std), or −z·std with `zero_mean`.
pub fn gaussian_var(hist: &HistRetVector, confidence: f64, zero_mean: bool) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config(format!("confidence must be in (0,1), got {confidence}")));
    }
    if hist.pnl.len() < 2 {
        return Err(Error::data("need at least two outcomes for a Gaussian fit"));
    }
    let mean = if zero_mean { 0.0 } else { math::mean(&hist.pnl) };
    let std = math::sample_std(&hist.pnl);
    if std < 1e-12 {
        return Ok(-mean);
    }
    let z = math::normal_quantile(1.0 - confidence)?;
    Ok(-(mean + z * std))
}

/// VaR estimation method identifiers used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarMethod {
    Vi,
    HistoricalSimulation,
    Gaussian,
}

impl std::fmt::Display for VarMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VarMethod::Vi => "vi",
            VarMethod::HistoricalSimulation => "historical_simulation",
            VarMethod::Gaussian => "gaussian",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEstimate {
    pub method: VarMethod,
    pub confidence: f64,
    pub var: f64,
    /// True when the realized loss exceeds the estimate.
    pub breach: bool,
}

/// One backtest date: estimates for each method/confidence plus model
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestEntry {
    pub date: NaiveDate,
    /// Realized forward portfolio return over the VaR horizon.
    pub realized_pnl: f64,
    pub estimates: Vec<VarEstimate>,
    pub cluster_probs: Vec<f64>,
    pub category_probs: Vec<f64>,
    pub converged: bool,
}

/// Rolling backtest output. Dates with insufficient history are excluded;
/// per-date failures are recorded and do not stop the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub entries: Vec<BacktestEntry>,
    pub failures: Vec<(NaiveDate, String)>,
}

impl BacktestReport {
    /// Fraction of dates whose realized loss exceeded the estimate.
    pub fn breach_rate(&self, method: VarMethod, confidence: f64) -> Option<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for entry in &self.entries {
            for est in &entry.estimates {
                if est.method == method && (est.confidence - confidence).abs() < 1e-12 {
                    total += 1;
                    hits += usize::from(est.breach);
                }
            }
        }
        (total > 0).then(|| hits as f64 / total as f64)
    }

    /// CSV document: one row per (date, method, confidence).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,method,confidence,var,realized_pnl,breach\n");
        for entry in &self.entries {
            for est in &entry.estimates {
                out.push_str(&format!(
                    "{},{},{},{:.10},{:.10},{}\n",
                    entry.date, est.method, est.confidence, est.var, entry.realized_pnl, est.breach
                ));
            }
        }
        out
    }
}

/// Full configuration of a rolling VaR backtest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub features: Vec<FeatureSpec>,
    pub portfolio: Portfolio,
    /// VaR horizon in business days.
    pub horizon_days: usize,
    /// Trailing observation count for both historical simulation and the
    /// model fit.
    pub lookback: usize,
    pub confidences: Vec<f64>,
    pub category_spec: PnlCategorySpec,
    pub clusters: usize,
    /// Uniform Dirichlet prior weight per category.
    pub dirichlet_prior: f64,
    /// Diagonal override of the within-regime feature covariance; the
    /// default is the fit window's per-feature sample variance.
    pub within_variance: Option<Vec<f64>>,
    /// Diagonal override of the regime-center prior covariance; the
    /// default is four times the per-feature sample variance.
    pub mean_prior_variance: Option<Vec<f64>>,
    pub cavi: vi::CaviOptions,
    /// Refit cadence in business days (1 = daily).
    pub stride: usize,
    pub gaussian_zero_mean: bool,
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_days == 0 || self.lookback < 2 || self.stride == 0 {
            return Err(Error::config("horizon, lookback, and stride must be positive"));
        }
        if self.clusters == 0 {
            return Err(Error::config("need at least one cluster"));
        }
        if self.confidences.is_empty()
            || self.confidences.iter().any(|c| !(*c > 0.0 && *c < 1.0))
        {
            return Err(Error::config("confidences must lie strictly in (0,1)"));
        }
        if self.dirichlet_prior <= 0.0 {
            return Err(Error::config("Dirichlet prior must be positive"));
        }
        self.category_spec.validate()?;
        if self.features.is_empty() {
            return Err(Error::config("at least one feature required"));
        }
        Ok(())
    }
}

/// Fitted-model artifacts for one as-of date.
#[derive(Debug, Clone)]
pub struct FitArtifacts {
    pub asof: NaiveDate,
    pub hyper: vi::Hyperparams,
    pub state: vi::VariationalState,
    /// Dates of the fit-window observations, in row order of the
    /// responsibilities.
    pub window_dates: Vec<NaiveDate>,
    pub cluster_probs: Vec<f64>,
    pub category_probs: Vec<f64>,
}

fn fit_asof(
    config: &BacktestConfig,
    panel: &TimeSeriesPanel,
    feature_rows: &[Option<DVector<f64>>],
    labels: &[Option<usize>],
    t: usize,
) -> Result<FitArtifacts> {
    let d = config.horizon_days;
    let lookback = config.lookback;
    // The fit window covers exactly the observations whose realized P&L
    // values make up the as-of historical-simulation vector, so a
    // single-regime fit with a vanishing Dirichlet prior reproduces plain
    // historical simulation.
    let start = t
        .checked_sub(d + lookback)
        .ok_or_else(|| Error::data("not enough history for the fit window"))?;
    let mut features = Vec::with_capacity(lookback);
    let mut categories = Vec::with_capacity(lookback);
    let mut window_dates = Vec::with_capacity(lookback);
    for s in start..t - d {
        match (&feature_rows[s], labels[s]) {
            (Some(x), Some(label)) => {
                features.push(x.clone());
                categories.push(label);
                window_dates.push(panel.dates()[s]);
            }
            _ => {
                return Err(Error::data(format!(
                    "missing features or label at offset {s} in fit window"
                )))
            }
        }
    }
    let x_asof = feature_rows[t]
        .as_ref()
        .ok_or_else(|| Error::data("features unavailable at as-of date"))?;

    let seed = rng::child_seed(config.cavi.seed, t as u64);
    let mut center_rng = rng::child(seed, u64::MAX);
    let centers = vi::seed_centers(&features, config.clusters, &mut center_rng);
    let mut hyper = vi::Hyperparams::defaults_from_data(
        &features,
        centers,
        config.category_spec.category_count(),
    )?;
    for alpha in &mut hyper.category_priors {
        alpha.fill(config.dirichlet_prior);
    }
    apply_cov_overrides(
        &mut hyper,
        config.within_variance.as_deref(),
        config.mean_prior_variance.as_deref(),
    )?;
    let obs = vi::Observations::new(features, categories)?;
    let opts = vi::CaviOptions { seed, ..config.cavi };
    let state = vi::cavi_fit(&obs, &hyper, &opts)?;

    Ok(FitArtifacts {
        asof: panel.dates()[t],
        cluster_probs: vi::predictive_cluster_probs(x_asof, &hyper, &state)?,
        category_probs: vi::predictive_category_probs(x_asof, &hyper, &state)?,
        window_dates,
        hyper,
        state,
    })
}

/// Replace the model's covariance defaults with configured diagonals.
pub(crate) fn apply_cov_overrides(
    hyper: &mut vi::Hyperparams,
    within: Option<&[f64]>,
    mean_prior: Option<&[f64]>,
) -> Result<()> {
    let n = hyper.dim();
    if let Some(v) = within {
        if v.len() != n || v.iter().any(|x| *x <= 0.0) {
            return Err(Error::config("within_variance must have one positive entry per feature"));
        }
        hyper.within_cov = nalgebra::DMatrix::from_diagonal(&DVector::from_vec(v.to_vec()));
    }
    if let Some(v) = mean_prior {
        if v.len() != n || v.iter().any(|x| *x <= 0.0) {
            return Err(Error::config(
                "mean_prior_variance must have one positive entry per feature",
            ));
        }
        let cov = nalgebra::DMatrix::from_diagonal(&DVector::from_vec(v.to_vec()));
        for c in &mut hyper.mean_prior_covs {
            *c = cov.clone();
        }
    }
    Ok(())
}

/// One-shot fit as of a given panel date with the backtest's window
/// conventions.
pub fn fit_at(
    panel: &TimeSeriesPanel,
    config: &BacktestConfig,
    asof: NaiveDate,
) -> Result<FitArtifacts> {
    config.validate()?;
    let t = panel.date_index(asof)?;
    let len = panel.len();
    let matrix = build_features(panel, &config.features)?;
    let mut feature_rows: Vec<Option<DVector<f64>>> = vec![None; len];
    for (i, date) in matrix.dates.iter().enumerate() {
        feature_rows[panel.date_index(*date)?] = Some(DVector::from_vec(matrix.rows[i].clone()));
    }
    let mut forward_pnl: Vec<Option<f64>> = vec![None; len];
    for s in 0..len.saturating_sub(config.horizon_days) {
        forward_pnl[s] = Some(config.portfolio.window_return(panel, s, s + config.horizon_days)?);
    }
    let labels = label_outcomes(&forward_pnl, &config.category_spec)?;
    fit_asof(config, panel, &feature_rows, &labels, t)
}

/// Rolling daily backtest: for every as-of date with enough history,
/// rebuild the historical-simulation vector, refit the model on the
/// trailing window, and record VaR at each confidence for the model and
/// both baselines along with the realized forward P&L. Deterministic for a
/// fixed seed; dates run in parallel.
pub fn var_backtest(panel: &TimeSeriesPanel, config: &BacktestConfig) -> Result<BacktestReport> {
    config.validate()?;
    if panel.is_empty() {
        return Err(Error::data("empty panel"));
    }
    let len = panel.len();
    let d = config.horizon_days;
    let lookback = config.lookback;
    if len < lookback + 2 * d + 1 {
        return Err(Error::data("panel too short for the configured backtest"));
    }

    let matrix = build_features(panel, &config.features)?;
    let mut feature_rows: Vec<Option<DVector<f64>>> = vec![None; len];
    for (i, date) in matrix.dates.iter().enumerate() {
        feature_rows[panel.date_index(*date)?] = Some(DVector::from_vec(matrix.rows[i].clone()));
    }

    let mut forward_pnl: Vec<Option<f64>> = vec![None; len];
    for t in 0..len.saturating_sub(d) {
        forward_pnl[t] = Some(config.portfolio.window_return(panel, t, t + d)?);
    }
    let labels = label_outcomes(&forward_pnl, &config.category_spec)?;

    // First as-of index with a full fit window: the window starts at
    // t − horizon − lookback and every window observation needs both a
    // feature row and a label.
    let min_feature = feature_rows
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| Error::data("no feature rows available"))?;
    let min_label = labels
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| Error::data("no labeled observations available"))?;
    let first = min_feature.max(min_label) + lookback + d;
    let last = len - 1 - d;
    if first > last {
        return Err(Error::data("panel too short for the configured backtest"));
    }
    let asof_indices: Vec<usize> = (first..=last).step_by(config.stride).collect();

    let results: Vec<(NaiveDate, std::result::Result<BacktestEntry, String>)> = asof_indices
        .par_iter()
        .map(|&t| {
            let date = panel.dates()[t];
            let entry = (|| -> Result<BacktestEntry> {
                let hist = simulate_hist_returns(
                    panel,
                    &config.portfolio,
                    d,
                    lookback,
                    date,
                )?;
                let stats = TrailingStats::from_values(&hist.pnl);
                let dist = bucket_returns(&hist, &config.category_spec, &stats)?;
                let fit = fit_asof(config, panel, &feature_rows, &labels, t)?;
                let weighted = weighted_distribution(&fit.category_probs, &dist)?;
                let realized = forward_pnl[t].expect("forward return exists by construction");

                let mut estimates = Vec::with_capacity(3 * config.confidences.len());
                for &confidence in &config.confidences {
                    let vi_var = var_quantile(&weighted, confidence)?;
                    let hs = hs_var(&hist, confidence)?;
                    let gauss = gaussian_var(&hist, confidence, config.gaussian_zero_mean)?;
                    for (method, var) in [
                        (VarMethod::Vi, vi_var),
                        (VarMethod::HistoricalSimulation, hs),
                        (VarMethod::Gaussian, gauss),
                    ] {
                        estimates.push(VarEstimate {
                            method,
                            confidence,
                            var,
                            breach: -realized > var,
                        });
                    }
                }
                Ok(BacktestEntry {
                    date,
                    realized_pnl: realized,
                    estimates,
                    cluster_probs: fit.cluster_probs,
                    category_probs: fit.category_probs,
                    converged: fit.state.converged,
                })
            })();
            (date, entry.map_err(|e| e.to_string()))
        })
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (date, result) in results {
        match result {
            Ok(entry) => entries.push(entry),
            Err(message) => failures.push((date, message)),
        }
    }
    Ok(BacktestReport { entries, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn hist(pnl: Vec<f64>) -> HistRetVector {
        HistRetVector {
            asof_date: NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
            horizon_days: 1,
            pnl,
        }
    }

    fn zspec(thresholds: Vec<f64>) -> PnlCategorySpec {
        PnlCategorySpec {
            thresholds,
            normalization: PnlNormalization::TrailingZscore { window: 250 },
        }
    }

    #[test]
    fn bucket_counts_with_z_thresholds() {
        // Values whose z-scores under the given stats are −1.0, 0.0, 0.5, 1.2.
        let stats = TrailingStats { mean: 0.0, std: 1.0 };
        let h = hist(vec![-1.0, 0.0, 0.5, 1.2]);
        let dist = bucket_returns(&h, &zspec(vec![-0.8, 0.8]), &stats).unwrap();
        assert_eq!(dist.counts, vec![1, 2, 1]);
        assert_eq!(dist.total(), 4);
    }

    #[test]
    fn bucket_boundary_is_lower_closed() {
        let stats = TrailingStats { mean: 0.0, std: 1.0 };
        let h = hist(vec![0.8, -0.8]);
        let dist = bucket_returns(&h, &zspec(vec![-0.8, 0.8]), &stats).unwrap();
        // 0.8 belongs to the top category, −0.8 to the middle one.
        assert_eq!(dist.counts, vec![0, 1, 1]);
    }

    #[test]
    fn bucket_degenerate_spread() {
        let stats = TrailingStats { mean: 0.0, std: 1.0 };
        let h = hist(vec![0.1, 0.2, -0.1, 0.0]);
        let dist = bucket_returns(&h, &zspec(vec![-0.8, 0.8]), &stats).unwrap();
        assert_eq!(dist.counts, vec![0, 4, 0]);
    }

    #[test]
    fn label_outcomes_direct_cases() {
        let spec = PnlCategorySpec {
            thresholds: vec![-0.8, 0.8],
            normalization: PnlNormalization::Raw,
        };
        let forward = vec![Some(-1.5), Some(0.0), None];
        let labels = label_outcomes(&forward, &spec).unwrap();
        assert_eq!(labels, vec![Some(0), Some(1), None]);
    }

    #[test]
    fn label_outcomes_trailing_window_gates_labels() {
        let spec = PnlCategorySpec {
            thresholds: vec![-0.8, 0.8],
            normalization: PnlNormalization::TrailingZscore { window: 3 },
        };
        let forward = vec![Some(0.1), Some(-0.1), Some(0.3), Some(0.2), None];
        let labels = label_outcomes(&forward, &spec).unwrap();
        assert_eq!(labels[0], None);
        assert_eq!(labels[1], None);
        assert!(labels[2].is_some() && labels[3].is_some());
        assert_eq!(labels[4], None);
    }

    #[test]
    fn weighted_distribution_direct_division() {
        let dist = EmpiricalCategoryDist {
            categories: vec![vec![-3.0, -2.0], vec![0.0; 4], vec![1.0; 4]],
            counts: vec![2, 4, 4],
        };
        let w = weighted_distribution(&[0.5, 0.25, 0.25], &dist).unwrap();
        assert_abs_diff_eq!(w.probabilities[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.probabilities[1], 0.25, epsilon = 1e-15);
        for p in &w.probabilities[2..] {
            assert_abs_diff_eq!(*p, 0.0625, epsilon = 1e-15);
        }
    }

    #[test]
    fn weighted_distribution_recovers_historical_simulation() {
        let dist = EmpiricalCategoryDist {
            categories: vec![vec![-1.0; 2], vec![0.0; 5], vec![2.0; 3]],
            counts: vec![2, 5, 3],
        };
        let w = weighted_distribution(&[0.2, 0.5, 0.3], &dist).unwrap();
        for p in &w.probabilities {
            assert_abs_diff_eq!(*p, 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn weighted_distribution_redistributes_empty_category_mass() {
        let dist = EmpiricalCategoryDist {
            categories: vec![vec![-1.0, -2.0], Vec::new(), vec![1.0]],
            counts: vec![2, 0, 1],
        };
        let w = weighted_distribution(&[0.5, 0.3, 0.2], &dist).unwrap();
        let total: f64 = w.probabilities.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // 0.3 split pro rata over weights 0.5 and 0.2.
        assert_abs_diff_eq!(w.probabilities[0], 0.5 / 0.7 / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.probabilities[2], 0.2 / 0.7, epsilon = 1e-12);
    }

    #[test]
    fn var_quantile_direct_accumulation() {
        let dist = WeightedPnlDistribution {
            outcomes: vec![-10.0, -5.0, 0.0, 5.0],
            probabilities: vec![0.05, 0.05, 0.45, 0.45],
        };
        assert_abs_diff_eq!(var_quantile(&dist, 0.95).unwrap(), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn var_quantile_point_mass() {
        let dist = WeightedPnlDistribution {
            outcomes: vec![-3.0],
            probabilities: vec![1.0],
        };
        for alpha in [0.5, 0.95, 0.999] {
            assert_abs_diff_eq!(var_quantile(&dist, alpha).unwrap(), 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn var_quantile_uniform_250_is_thirteenth_worst() {
        // Uniform outcomes: the left-continuous convention picks the
        // 13th-worst loss at 95%.
        let mut r = rng::from_seed(17);
        use rand::Rng as _;
        let outcomes: Vec<f64> = (0..250).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let dist = WeightedPnlDistribution {
            outcomes: outcomes.clone(),
            probabilities: vec![1.0 / 250.0; 250],
        };
        let got = var_quantile(&dist, 0.95).unwrap();

        // Brute-force CDF scan over candidate loss levels.
        let mut losses: Vec<f64> = outcomes.iter().map(|p| -p).collect();
        losses.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expected = losses[12];
        assert_abs_diff_eq!(got, expected, epsilon = 1e-15);
    }

    #[test]
    fn hs_var_equals_weighted_var_with_empirical_frequencies() {
        let mut r = rng::from_seed(23);
        use rand::Rng as _;
        let pnl: Vec<f64> = (0..200).map(|_| r.random::<f64>() * 0.04 - 0.02).collect();
        let h = hist(pnl.clone());
        let stats = TrailingStats::from_values(&pnl);
        let spec = zspec(vec![-0.8, 0.8]);
        let dist = bucket_returns(&h, &spec, &stats).unwrap();
        let freq: Vec<f64> = dist.counts.iter().map(|n| *n as f64 / 200.0).collect();
        let w = weighted_distribution(&freq, &dist).unwrap();
        for alpha in [0.9, 0.95, 0.975] {
            assert_abs_diff_eq!(
                var_quantile(&w, alpha).unwrap(),
                hs_var(&h, alpha).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn hs_var_point_mass() {
        let h = hist(vec![0.02; 10]);
        assert_abs_diff_eq!(hs_var(&h, 0.95).unwrap(), -0.02, epsilon = 1e-15);
    }

    #[test]
    fn hs_var_matches_sort_oracle() {
        let mut r = rng::from_seed(31);
        use rand::Rng as _;
        let pnl: Vec<f64> = (0..173).map(|_| r.random::<f64>() - 0.5).collect();
        let h = hist(pnl.clone());
        let got = hs_var(&h, 0.95).unwrap();

        // Independent sort-based route.
        let mut sorted = pnl;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tail = 0.05;
        let mut cum = 0.0;
        let mut want = -sorted[0];
        for &p in &sorted {
            if cum <= tail {
                want = -p;
            } else {
                break;
            }
            cum += 1.0 / sorted.len() as f64;
        }
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_var_standard_normal() {
        // Long synthetic sample with sample mean 0 and sample std 1 by
        // construction.
        let n = 1000;
        let mut values: Vec<f64> = (0..n).map(|i| (i as f64 / (n - 1) as f64) * 2.0 - 1.0).collect();
        let m = math::mean(&values);
        let s = math::sample_std(&values);
        for v in &mut values {
            *v = (*v - m) / s;
        }
        let h = hist(values);
        let got = gaussian_var(&h, 0.95, false).unwrap();
        assert_abs_diff_eq!(got, 1.644_853_626_951_472_7, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_var_zero_variance() {
        let h = hist(vec![0.015; 5]);
        assert_abs_diff_eq!(gaussian_var(&h, 0.99, false).unwrap(), -0.015, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_var_translation_equivariance() {
        let base = hist(vec![0.01, -0.02, 0.005, -0.007, 0.013, 0.0]);
        let shifted = hist(base.pnl.iter().map(|p| p + 0.004).collect());
        let a = gaussian_var(&base, 0.95, false).unwrap();
        let b = gaussian_var(&shifted, 0.95, false).unwrap();
        assert_abs_diff_eq!(b, a - 0.004, epsilon = 1e-12);
    }

    #[test]
    fn quantile_monotone_in_confidence() {
        let mut r = rng::from_seed(41);
        use rand::Rng as _;
        let outcomes: Vec<f64> = (0..60).map(|_| r.random::<f64>() - 0.5).collect();
        let mut probs: Vec<f64> = (0..60).map(|_| r.random::<f64>()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        let dist = WeightedPnlDistribution { outcomes, probabilities: probs };
        let mut last = f64::NEG_INFINITY;
        for i in 1..20 {
            let alpha = i as f64 / 20.0;
            let v = var_quantile(&dist, alpha).unwrap();
            assert!(v >= last - 1e-15);
            last = v;
        }
    }

    #[test]
    fn shifting_outcomes_shifts_every_method() {
        let pnl = vec![0.01, -0.03, 0.002, -0.015, 0.02, 0.007, -0.001];
        let c = 0.005;
        let base = hist(pnl.clone());
        let shifted = hist(pnl.iter().map(|p| p + c).collect());
        assert_abs_diff_eq!(
            hs_var(&shifted, 0.95).unwrap(),
            hs_var(&base, 0.95).unwrap() - c,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            gaussian_var(&shifted, 0.95, false).unwrap(),
            gaussian_var(&base, 0.95, false).unwrap() - c,
            epsilon = 1e-12
        );
        // Weighted distribution with raw-threshold bucketing shifts too
        // when the same shift is applied to thresholds, trivially; with
        // fixed category probabilities the quantile shift is exact.
        let dist = WeightedPnlDistribution {
            outcomes: pnl.clone(),
            probabilities: vec![1.0 / pnl.len() as f64; pnl.len()],
        };
        let dist_shifted = WeightedPnlDistribution {
            outcomes: pnl.iter().map(|p| p + c).collect(),
            probabilities: dist.probabilities.clone(),
        };
        assert_abs_diff_eq!(
            var_quantile(&dist_shifted, 0.9).unwrap(),
            var_quantile(&dist, 0.9).unwrap() - c,
            epsilon = 1e-12
        );
    }

    #[test]
    fn more_mass_on_worst_category_never_lowers_var() {
        let dist = EmpiricalCategoryDist {
            categories: vec![vec![-0.05, -0.04, -0.03], vec![0.0; 5], vec![0.02, 0.04]],
            counts: vec![3, 5, 2],
        };
        let mut last = f64::NEG_INFINITY;
        for step in 0..=10 {
            let p0 = 0.05 + 0.9 * step as f64 / 10.0;
            let rest = 1.0 - p0;
            let probs = [p0, rest * 0.7, rest * 0.3];
            let w = weighted_distribution(&probs, &dist).unwrap();
            let v = var_quantile(&w, 0.9).unwrap();
            assert!(v >= last - 1e-12, "VaR dropped from {last} to {v} at p0={p0}");
            last = v;
        }
    }

    #[test]
    fn k1_small_prior_reduces_to_historical_simulation() {
        let mut r = rng::from_seed(53);
        use rand::Rng as _;
        let t = 250;
        let pnl: Vec<f64> = (0..t).map(|_| r.random::<f64>() * 0.06 - 0.03).collect();
        let h = hist(pnl.clone());
        let stats = TrailingStats::from_values(&pnl);
        let spec = zspec(vec![-0.8, 0.8]);
        let dist = bucket_returns(&h, &spec, &stats).unwrap();

        // Single cluster: the Dirichlet posterior mean with prior ε is
        // (n_j+ε)/(T+Jε); each outcome weight becomes that over n_j.
        let eps = 1e-8;
        let probs: Vec<f64> = dist
            .counts
            .iter()
            .map(|n| (*n as f64 + eps) / (t as f64 + 3.0 * eps))
            .collect();
        let w = weighted_distribution(&probs, &dist).unwrap();
        for p in &w.probabilities {
            assert!((p - 1.0 / t as f64).abs() < 1e-6);
        }
        for alpha in [0.95, 0.975] {
            let gap = adjacent_gap(&pnl);
            assert!(
                (var_quantile(&w, alpha).unwrap() - hs_var(&h, alpha).unwrap()).abs() <= gap,
                "VI and HS VaR differ by more than one order statistic"
            );
        }
    }

    fn adjacent_gap(pnl: &[f64]) -> f64 {
        let mut sorted = pnl.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0f64, f64::max)
    }

    fn backtest_panel(len: usize, seed: u64) -> TimeSeriesPanel {
        let spec = crate::synth::SyntheticSpec {
            seed,
            len,
            cluster_weights: vec![0.85, 0.15],
            cluster_means: vec![vec![0.0], vec![2.5]],
            within_cov: vec![vec![1.0]],
            theta: vec![vec![0.05, 0.9, 0.05], vec![0.35, 0.3, 0.35]],
            category_samplers: vec![(-0.02, 0.004), (0.0, 0.004), (0.02, 0.004)],
            schedule: Vec::new(),
        };
        let data = crate::synth::gen_var_dataset(&spec).unwrap();
        crate::synth::var_panel(&data, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap()).unwrap()
    }

    fn backtest_config(lookback: usize, clusters: usize, dirichlet_prior: f64) -> BacktestConfig {
        BacktestConfig {
            features: vec![FeatureSpec {
                name: "x1".into(),
                kind: crate::market_data::FeatureKind::Change {
                    series: "f1".into(),
                    lag: 1,
                    mode: crate::market_data::ChangeMode::Difference,
                },
            }],
            portfolio: crate::market_data::Portfolio::single("portfolio"),
            horizon_days: 1,
            lookback,
            confidences: vec![0.95],
            category_spec: PnlCategorySpec {
                thresholds: vec![-0.011, 0.011],
                normalization: PnlNormalization::Raw,
            },
            clusters,
            dirichlet_prior,
            within_variance: Some(vec![1.0]),
            mean_prior_variance: None,
            cavi: vi::CaviOptions { seed: 3, restarts: 1, max_sweeps: 150, rel_tol: 1e-8 },
            stride: 1,
            gaussian_zero_mean: false,
        }
    }

    #[test]
    fn backtest_row_count_matches_date_arithmetic() {
        let len = 320;
        let lookback = 120;
        let panel = backtest_panel(len, 9);
        let config = backtest_config(lookback, 2, 1.0);
        let report = var_backtest(&panel, &config).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);

        // Independent date arithmetic: the lag-1 features exist from index
        // 1, so the first as-of index is 1 + lookback + horizon; the last
        // needs a realized forward return.
        let d = config.horizon_days;
        let expected = (len - 1 - d) - (1 + lookback + d) + 1;
        assert_eq!(report.entries.len(), expected);
    }

    #[test]
    fn backtest_single_cluster_tiny_prior_matches_hs() {
        let panel = backtest_panel(300, 21);
        let mut config = backtest_config(130, 1, 1e-8);
        config.cavi.restarts = 0;
        let report = var_backtest(&panel, &config).unwrap();
        assert!(report.failures.is_empty());
        assert!(!report.entries.is_empty());
        for entry in &report.entries {
            let vi_var = entry
                .estimates
                .iter()
                .find(|e| e.method == VarMethod::Vi)
                .unwrap()
                .var;
            let hs = entry
                .estimates
                .iter()
                .find(|e| e.method == VarMethod::HistoricalSimulation)
                .unwrap()
                .var;
            assert!(
                (vi_var - hs).abs() < 1e-6,
                "{}: vi {vi_var} vs hs {hs}",
                entry.date
            );
        }
    }

    #[test]
    fn backtest_rejects_empty_panel_config() {
        let panel = backtest_panel(80, 2);
        let config = backtest_config(120, 2, 1.0);
        // Too short for the window arithmetic.
        assert!(var_backtest(&panel, &config).is_err());
        let mut bad = backtest_config(50, 2, 1.0);
        bad.confidences = vec![1.5];
        assert!(matches!(var_backtest(&panel, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn backtest_stride_thins_rows() {
        let panel = backtest_panel(300, 4);
        let mut config = backtest_config(130, 2, 1.0);
        let dense = var_backtest(&panel, &config).unwrap().entries.len();
        config.stride = 5;
        let sparse = var_backtest(&panel, &config).unwrap().entries.len();
        assert_eq!(sparse, dense.div_ceil(5));
    }

    proptest! {
        #[test]
        fn weighted_distribution_mass_is_conserved(seed in 0u64..500) {
            let mut r = rng::from_seed(seed);
            use rand::Rng as _;
            let j = 2 + (seed as usize % 5);
            let mut counts = Vec::new();
            let mut categories = Vec::new();
            for _ in 0..j {
                let n = r.random_range(0..8usize);
                counts.push(n);
                categories.push((0..n).map(|_| r.random::<f64>() - 0.5).collect());
            }
            prop_assume!(counts.iter().sum::<usize>() > 0);
            let mut probs: Vec<f64> = (0..j).map(|_| r.random::<f64>()).collect();
            let sum: f64 = probs.iter().sum();
            for p in &mut probs { *p /= sum; }
            let dist = EmpiricalCategoryDist { categories, counts };
            let w = weighted_distribution(&probs, &dist).unwrap();
            let total: f64 = w.probabilities.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
