//! Seeded synthetic data generators and brute-force reference routines.
//!
//! The generators implement the model's two data-generating processes at
//! desk scale and keep the ground truth (regime and category draws) so
//! recovery can be scored. The brute-force routines are deliberately
//! exhaustive re-implementations used as test oracles; they are only
//! suitable for small inputs.
//!
//! Randomness: ChaCha20 seeded through SplitMix64 (see [`crate::rng`]).
//! Runs are bit-reproducible for a fixed seed.

use chrono::NaiveDate;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{ChangeMode, TimeSeriesPanel};
use crate::rng;
use crate::stress::ShiftConstraint;

/// Business-day calendar (Monday–Friday) of the requested length.
pub fn business_days(start: NaiveDate, len: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(len);
    let mut d = start;
    while out.len() < len {
        if d.format("%u").to_string().parse::<u8>().unwrap() <= 5 {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

/// Scheduled change of generator parameters from a given index on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeShift {
    pub at: usize,
    #[serde(default)]
    pub cluster_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub theta: Option<Vec<Vec<f64>>>,
}

/// Ground-truth parameters of the regime/category generative process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub seed: u64,
    pub len: usize,
    pub cluster_weights: Vec<f64>,
    /// Per-regime feature means (K rows of length n).
    pub cluster_means: Vec<Vec<f64>>,
    /// Shared within-regime feature covariance, row-major n×n.
    pub within_cov: Vec<Vec<f64>>,
    /// Per-regime category proportions (K rows of length J).
    pub theta: Vec<Vec<f64>>,
    /// Per-category portfolio-return sampler (mean, std).
    pub category_samplers: Vec<(f64, f64)>,
    /// Parameter switches beyond the static process, in index order.
    #[serde(default)]
    pub schedule: Vec<RegimeShift>,
}

impl SyntheticSpec {
    pub fn cluster_count(&self) -> usize {
        self.cluster_weights.len()
    }

    pub fn category_count(&self) -> usize {
        self.category_samplers.len()
    }

    pub fn dim(&self) -> usize {
        self.within_cov.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.len == 0 {
            return Err(Error::config("synthetic length must be positive"));
        }
        let k = self.cluster_count();
        let j = self.category_count();
        let n = self.dim();
        if k == 0 || j == 0 || n == 0 {
            return Err(Error::config("cluster, category, and feature counts must be positive"));
        }
        check_simplex(&self.cluster_weights, "cluster weights")?;
        if self.cluster_means.len() != k || self.cluster_means.iter().any(|m| m.len() != n) {
            return Err(Error::config("cluster means must be K rows of length n"));
        }
        if self.theta.len() != k {
            return Err(Error::config("theta must have K rows"));
        }
        for row in &self.theta {
            if row.len() != j {
                return Err(Error::config("theta rows must have J entries"));
            }
            check_simplex(row, "theta row")?;
        }
        if self.category_samplers.iter().any(|(_, s)| *s < 0.0) {
            return Err(Error::config("sampler std must be nonnegative"));
        }
        if self.within_cov.iter().any(|row| row.len() != n) {
            return Err(Error::config("within covariance must be n×n"));
        }
        if cov_cholesky(&self.within_cov).is_none() {
            return Err(Error::config("within covariance must be SPD"));
        }
        if self.schedule.windows(2).any(|w| w[0].at >= w[1].at) {
            return Err(Error::config("schedule must be sorted by index"));
        }
        for shift in &self.schedule {
            if let Some(w) = &shift.cluster_weights {
                check_simplex(w, "scheduled cluster weights")?;
            }
            if let Some(theta) = &shift.theta {
                for row in theta {
                    check_simplex(row, "scheduled theta row")?;
                }
            }
        }
        Ok(())
    }
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{what} must be a simplex")));
    }
    Ok(())
}

fn cov_cholesky(rows: &[Vec<f64>]) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |r, c| rows[r][c]);
    Cholesky::new(m)
}

fn draw_categorical(weights: &[f64], rng: &mut rng::Rng) -> usize {
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Dataset drawn from the regime/category process with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VarDataset {
    pub features: Vec<DVector<f64>>,
    pub clusters: Vec<usize>,
    pub categories: Vec<usize>,
    /// Portfolio returns drawn from the per-category samplers; entry t is
    /// the forward one-step return at t.
    pub returns: Vec<f64>,
}

/// Sample the regime/category process: regime from the (possibly
/// scheduled) weights, features Gaussian around the regime mean, category
/// from the regime's proportions, and a portfolio return from the
/// category's sampler.
pub fn gen_var_dataset(spec: &SyntheticSpec) -> Result<VarDataset> {
    spec.validate()?;
    let mut rng = rng::from_seed(spec.seed);
    let chol = cov_cholesky(&spec.within_cov).expect("validated SPD");
    let n = spec.dim();

    let mut weights = spec.cluster_weights.clone();
    let mut theta = spec.theta.clone();
    let mut schedule = spec.schedule.iter().peekable();

    let mut out = VarDataset {
        features: Vec::with_capacity(spec.len),
        clusters: Vec::with_capacity(spec.len),
        categories: Vec::with_capacity(spec.len),
        returns: Vec::with_capacity(spec.len),
    };
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    for t in 0..spec.len {
        while let Some(shift) = schedule.peek() {
            if shift.at > t {
                break;
            }
            if let Some(w) = &shift.cluster_weights {
                weights = w.clone();
            }
            if let Some(th) = &shift.theta {
                theta = th.clone();
            }
            schedule.next();
        }
        let c = draw_categorical(&weights, &mut rng);
        let z = DVector::from_fn(n, |_, _| std_normal.sample(&mut rng));
        let mean = DVector::from_vec(spec.cluster_means[c].clone());
        let x = &mean + chol.l() * z;
        let d = draw_categorical(&theta[c], &mut rng);
        let (ret_mean, ret_std) = spec.category_samplers[d];
        let ret = if ret_std > 0.0 {
            Normal::new(ret_mean, ret_std).expect("valid normal").sample(&mut rng)
        } else {
            ret_mean
        };
        out.features.push(x);
        out.clusters.push(c);
        out.categories.push(d);
        out.returns.push(ret);
    }
    Ok(out)
}

/// Serializable ground truth accompanying a generated panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub clusters: Vec<usize>,
    pub categories: Vec<usize>,
    pub returns: Vec<f64>,
}

/// Panel representation of a generated dataset: a compounded
/// `portfolio` level series plus one cumulative-sum column per feature,
/// so a lag-1 difference transform recovers the drawn features exactly
/// (from the second date on).
pub fn var_panel(dataset: &VarDataset, start: NaiveDate) -> Result<TimeSeriesPanel> {
    let len = dataset.features.len();
    if len == 0 {
        return Err(Error::data("empty dataset"));
    }
    let n = dataset.features[0].len();
    let dates = business_days(start, len);

    let mut value = vec![100.0; len];
    for t in 1..len {
        value[t] = value[t - 1] * (1.0 + dataset.returns[t - 1]);
    }
    let mut series = std::collections::BTreeMap::new();
    series.insert("portfolio".to_string(), value);
    for f in 0..n {
        let mut cum = Vec::with_capacity(len);
        let mut acc = 0.0;
        for x in &dataset.features {
            acc += x[f];
            cum.push(acc);
        }
        series.insert(format!("f{}", f + 1), cum);
    }
    TimeSeriesPanel::new(dates, series)
}

/// Per-category, per-factor bivariate parameters for the stress process:
/// the loss side comes from the category sampler.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BivariatePair {
    pub shift_mean: f64,
    pub shift_var: f64,
    pub cov: f64,
}

/// Stress dataset with ground truth: losses from the per-category
/// Gaussians and shifts from the bivariate conditionals.
#[derive(Debug, Clone, PartialEq)]
pub struct StressDataset {
    pub features: Vec<DVector<f64>>,
    pub clusters: Vec<usize>,
    pub categories: Vec<usize>,
    pub losses: Vec<f64>,
    /// Per observation, one shift per risk factor.
    pub shifts: Vec<Vec<f64>>,
}

/// Sample the stress process: regime, features, and category as in
/// [`gen_var_dataset`]; then a loss from the category's Gaussian (the
/// sampler doubles as N(mean, std)) and per-factor shifts from the
/// bivariate distribution conditioned on the drawn loss.
pub fn gen_stress_dataset(
    spec: &SyntheticSpec,
    bivariate: &[Vec<BivariatePair>],
) -> Result<StressDataset> {
    spec.validate()?;
    if bivariate.len() != spec.category_count() {
        return Err(Error::config("bivariate parameters must cover every category"));
    }
    let factors = bivariate.first().map_or(0, Vec::len);
    if bivariate.iter().any(|row| row.len() != factors) {
        return Err(Error::config("bivariate parameter rows must have equal length"));
    }
    for (j, row) in bivariate.iter().enumerate() {
        let loss_var = spec.category_samplers[j].1.powi(2);
        for pair in row {
            if pair.shift_var < 0.0 {
                return Err(Error::config("shift variance must be nonnegative"));
            }
            if loss_var > 0.0 && pair.shift_var * loss_var < pair.cov * pair.cov - 1e-12 {
                return Err(Error::config("bivariate covariance violates Cauchy-Schwarz"));
            }
        }
    }

    let base = gen_var_dataset(spec)?;
    let mut rng = rng::child(spec.seed, 0x005f_3e55);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut losses = Vec::with_capacity(spec.len);
    let mut shifts = Vec::with_capacity(spec.len);
    for t in 0..spec.len {
        let j = base.categories[t];
        let (loss_mean, loss_std) = spec.category_samplers[j];
        let loss = if loss_std > 0.0 {
            loss_mean + loss_std * std_normal.sample(&mut rng)
        } else {
            loss_mean
        };
        let mut row = Vec::with_capacity(factors);
        for pair in &bivariate[j] {
            let loss_var = loss_std * loss_std;
            let (cond_mean, cond_var) = if loss_var > 0.0 {
                (
                    pair.shift_mean + pair.cov / loss_var * (loss - loss_mean),
                    (pair.shift_var - pair.cov * pair.cov / loss_var).max(0.0),
                )
            } else {
                (pair.shift_mean, pair.shift_var)
            };
            row.push(cond_mean + cond_var.sqrt() * std_normal.sample(&mut rng));
        }
        losses.push(loss);
        shifts.push(row);
    }
    Ok(StressDataset {
        features: base.features,
        clusters: base.clusters,
        categories: base.categories,
        losses,
        shifts,
    })
}

/// Per-regime daily dynamics of the two-factor stress market.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegimeDynamics {
    pub equity_drift: f64,
    pub equity_vol: f64,
    pub yield_drift: f64,
    pub yield_vol: f64,
    /// Correlation between the equity and yield daily innovations.
    pub correlation: f64,
}

/// Regime-driven equity/yield market generator for end-to-end stress
/// runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StressMarketSpec {
    #[serde(default)]
    pub seed: u64,
    pub len: usize,
    pub cluster_weights: Vec<f64>,
    /// Per-regime feature means; features are emitted as cumulative sums.
    pub feature_means: Vec<Vec<f64>>,
    pub within_cov: Vec<Vec<f64>>,
    pub regimes: Vec<RegimeDynamics>,
    #[serde(default)]
    pub weight_schedule: Vec<(usize, Vec<f64>)>,
    pub start_equity: f64,
    pub start_yield: f64,
}

/// Generate an `spx` price series, a `ust10y` decimal-yield series, and
/// cumulative feature columns, all driven by a latent regime process.
pub fn gen_stress_panel(
    spec: &StressMarketSpec,
    start: NaiveDate,
) -> Result<(TimeSeriesPanel, Vec<usize>)> {
    let k = spec.cluster_weights.len();
    if spec.len < 2 || k == 0 || spec.regimes.len() != k || spec.feature_means.len() != k {
        return Err(Error::config("stress market spec is inconsistent"));
    }
    check_simplex(&spec.cluster_weights, "cluster weights")?;
    let chol = cov_cholesky(&spec.within_cov)
        .ok_or_else(|| Error::config("within covariance must be SPD"))?;
    let n = spec.within_cov.len();

    let mut rng = rng::from_seed(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut weights = spec.cluster_weights.clone();
    let mut schedule = spec.weight_schedule.iter().peekable();

    let mut equity = vec![spec.start_equity];
    let mut yields = vec![spec.start_yield];
    let mut clusters = Vec::with_capacity(spec.len);
    let mut feature_cums: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.len); n];
    let mut acc = vec![0.0; n];

    for t in 0..spec.len {
        while let Some((at, w)) = schedule.peek() {
            if *at > t {
                break;
            }
            weights = w.clone();
            schedule.next();
        }
        let c = draw_categorical(&weights, &mut rng);
        clusters.push(c);

        let z = DVector::from_fn(n, |_, _| std_normal.sample(&mut rng));
        let x = DVector::from_vec(spec.feature_means[c].clone()) + chol.l() * z;
        for f in 0..n {
            acc[f] += x[f];
            feature_cums[f].push(acc[f]);
        }

        if t + 1 < spec.len {
            let dyn_ = spec.regimes[c];
            let e1: f64 = std_normal.sample(&mut rng);
            let e2: f64 = std_normal.sample(&mut rng);
            let rho = dyn_.correlation.clamp(-1.0, 1.0);
            let eq_ret = dyn_.equity_drift + dyn_.equity_vol * e1;
            let dy = dyn_.yield_drift
                + dyn_.yield_vol * (rho * e1 + (1.0 - rho * rho).sqrt() * e2);
            equity.push(equity[t] * (1.0 + eq_ret));
            yields.push((yields[t] + dy).max(1e-4));
        }
    }

    let mut series = std::collections::BTreeMap::new();
    series.insert("spx".to_string(), equity);
    series.insert("ust10y".to_string(), yields);
    for (f, cum) in feature_cums.into_iter().enumerate() {
        series.insert(format!("f{}", f + 1), cum);
    }
    let panel = TimeSeriesPanel::new(business_days(start, spec.len), series)?;
    Ok((panel, clusters))
}

/// Exhaustive peak-loss search for one anchor: every (start, end) with
/// start in [anchor, anchor+horizon), end in (start, min(start+max_window,
/// anchor+horizon)], lexicographic tie-break. `None` when a constraint
/// excludes every window.
pub fn brute_force_peak_loss(
    path: &[f64],
    max_window: usize,
    horizon: usize,
    anchor: usize,
    constraint: Option<(&[f64], &ShiftConstraint)>,
) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for start in anchor..anchor + horizon {
        let end_cap = (start + max_window).min(anchor + horizon);
        for end in start + 1..=end_cap {
            if let Some((levels, c)) = constraint {
                let shift = match c.mode {
                    ChangeMode::Difference => levels[end] - levels[start],
                    ChangeMode::Relative => levels[end] / levels[start] - 1.0,
                };
                if !c.satisfied(shift) {
                    continue;
                }
            }
            let pnl = path[end] - path[start];
            if best.is_none_or(|(v, _, _)| pnl < v) {
                best = Some((pnl, start, end));
            }
        }
    }
    best
}

/// Exhaustive inf-based VaR: for every distinct loss level, sum the
/// probability of strictly larger losses, then take the smallest feasible
/// level. Quadratic; test use only.
pub fn brute_force_weighted_var(outcomes: &[f64], probabilities: &[f64], confidence: f64) -> f64 {
    assert_eq!(outcomes.len(), probabilities.len());
    assert!(!outcomes.is_empty());
    let tail = 1.0 - confidence;
    let mut best: Option<f64> = None;
    for &candidate_pnl in outcomes {
        let loss = -candidate_pnl;
        let worse: f64 = outcomes
            .iter()
            .zip(probabilities)
            .filter(|(o, _)| -**o > loss)
            .map(|(_, p)| *p)
            .sum();
        if worse <= tail && best.is_none_or(|b| loss < b) {
            best = Some(loss);
        }
    }
    best.expect("the worst loss is always feasible")
}

/// Adjusted Rand index between two hard labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |m: usize| (m * m.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&m| choose2(m)).sum();
    let sum_a: f64 = (0..ka)
        .map(|i| choose2(table[i].iter().sum::<usize>()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2((0..ka).map(|i| table[i][j]).sum::<usize>()))
        .sum();
    let expected = sum_a * sum_b / choose2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}

/// L1 distance between two probability vectors.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
