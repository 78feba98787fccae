//! Mean-field variational inference for the latent market-regime model.
//!
//! The model: each observation carries a feature vector and a discrete
//! outcome category. A latent regime (cluster) is drawn from fixed weights;
//! the feature vector is Gaussian around an unknown per-regime mean with a
//! shared within-regime covariance; the category is drawn from per-regime
//! proportions with a Dirichlet prior. Coordinate ascent alternates
//! closed-form updates of the regime responsibilities, the regime-mean
//! Gaussian posteriors, and the Dirichlet category posteriors, and every
//! sweep increases the evidence lower bound.
//!
//! All responsibility and predictive computations run in log space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{digamma, log_sum_exp};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_4;

/// Fixed model priors: regime weights, per-regime mean priors, shared
/// within-regime covariance, and Dirichlet category priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Prior regime weights, a simplex of length K. Not updated by the fit.
    pub cluster_weights: Vec<f64>,
    /// Prior mean of each regime's feature center (K vectors of length n).
    pub mean_priors: Vec<DVector<f64>>,
    /// Prior covariance of each regime's feature center (K SPD matrices).
    pub mean_prior_covs: Vec<DMatrix<f64>>,
    /// Shared within-regime feature covariance (SPD).
    pub within_cov: DMatrix<f64>,
    /// Dirichlet prior over category proportions per regime (K vectors of
    /// length J, all entries positive).
    pub category_priors: Vec<DVector<f64>>,
}

impl Hyperparams {
    pub fn cluster_count(&self) -> usize {
        self.cluster_weights.len()
    }

    pub fn category_count(&self) -> usize {
        self.category_priors.first().map_or(0, |a| a.len())
    }

    pub fn dim(&self) -> usize {
        self.within_cov.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.cluster_count();
        let n = self.dim();
        if k == 0 {
            return Err(Error::config("at least one cluster required"));
        }
        if self.mean_priors.len() != k
            || self.mean_prior_covs.len() != k
            || self.category_priors.len() != k
        {
            return Err(Error::config("hyperparameter lists must all have K entries"));
        }
        let weight_sum: f64 = self.cluster_weights.iter().sum();
        if self.cluster_weights.iter().any(|w| *w <= 0.0) || (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("cluster weights must be positive and sum to 1"));
        }
        if self.within_cov.ncols() != n || cholesky(&self.within_cov).is_none() {
            return Err(Error::config("within-cluster covariance must be SPD"));
        }
        let j = self.category_count();
        if j == 0 {
            return Err(Error::config("at least one category required"));
        }
        for k_idx in 0..k {
            if self.mean_priors[k_idx].len() != n {
                return Err(Error::config("mean prior dimension mismatch"));
            }
            let r0 = &self.mean_prior_covs[k_idx];
            if r0.nrows() != n || r0.ncols() != n || cholesky(r0).is_none() {
                return Err(Error::config(format!("mean prior covariance {k_idx} must be SPD")));
            }
            let alpha = &self.category_priors[k_idx];
            if alpha.len() != j || alpha.iter().any(|a| *a <= 0.0) {
                return Err(Error::config("Dirichlet priors must be positive with J entries"));
            }
        }
        Ok(())
    }

    /// Weak scale-aware defaults: uniform weights, mean priors at the given
    /// centers, mean-prior covariance 4×diag(sample feature variance),
    /// within covariance diag(sample feature variance), and a uniform
    /// Dirichlet prior.
    pub fn defaults_from_data(
        features: &[DVector<f64>],
        centers: Vec<DVector<f64>>,
        categories: usize,
    ) -> Result<Self> {
        let k = centers.len();
        if k == 0 || features.is_empty() {
            return Err(Error::config("need at least one center and one observation"));
        }
        let n = features[0].len();
        let mut variance = DVector::zeros(n);
        let mut mean = DVector::zeros(n);
        for x in features {
            mean += x;
        }
        mean /= features.len() as f64;
        for x in features {
            let d = x - &mean;
            variance += d.component_mul(&d);
        }
        variance /= features.len().max(2) as f64 - 1.0;
        // Guard against constant feature columns.
        let variance = variance.map(|v| if v > 1e-12 { v } else { 1.0 });

        let within = DMatrix::from_diagonal(&variance);
        let prior_cov = DMatrix::from_diagonal(&(4.0 * variance));
        Ok(Self {
            cluster_weights: vec![1.0 / k as f64; k],
            mean_priors: centers,
            mean_prior_covs: vec![prior_cov; k],
            within_cov: within,
            category_priors: vec![DVector::from_element(categories, 1.0); k],
        })
    }
}

/// Paired observations: feature vectors and 0-based category indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub features: Vec<DVector<f64>>,
    pub categories: Vec<usize>,
}

impl Observations {
    pub fn new(features: Vec<DVector<f64>>, categories: Vec<usize>) -> Result<Self> {
        if features.len() != categories.len() {
            return Err(Error::data("features and categories must have equal length"));
        }
        Ok(Self { features, categories })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn validate_against(&self, hyper: &Hyperparams) -> Result<()> {
        let n = hyper.dim();
        let j = hyper.category_count();
        if self.features.iter().any(|x| x.len() != n) {
            return Err(Error::data("feature dimension does not match hyperparameters"));
        }
        if self.categories.iter().any(|d| *d >= j) {
            return Err(Error::data("category index out of range"));
        }
        if self.features.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::data("non-finite feature value"));
        }
        Ok(())
    }
}

/// Fitted variational posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// T×K regime responsibilities; every row is a simplex.
    pub responsibilities: DMatrix<f64>,
    /// Posterior mean of each regime center.
    pub cluster_means: Vec<DVector<f64>>,
    /// Posterior covariance of each regime center (SPD).
    pub cluster_covs: Vec<DMatrix<f64>>,
    /// Posterior Dirichlet parameters per regime (K vectors of length J).
    pub category_dirichlet: Vec<DVector<f64>>,
    /// Evidence lower bound after initialization and after each sweep.
    pub elbo_trace: Vec<f64>,
    /// Whether the relative ELBO change dropped below tolerance.
    pub converged: bool,
}

impl VariationalState {
    /// Posterior mean category proportions for one regime.
    pub fn category_means(&self, cluster: usize) -> DVector<f64> {
        let alpha = &self.category_dirichlet[cluster];
        let total: f64 = alpha.iter().sum();
        alpha / total
    }

    /// Hard regime assignments (argmax responsibility per row).
    pub fn hard_assignments(&self) -> Vec<usize> {
        (0..self.responsibilities.nrows())
            .map(|t| {
                let row = self.responsibilities.row(t);
                let mut best = 0;
                for k in 1..row.ncols() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

fn ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m)
        .ok_or_else(|| Error::numeric(format!("{what} is not positive definite")))?
        .inverse();
    Ok(symmetrize(&inv))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Posterior means and covariances of the regime centers.
pub type ClusterMoments = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

struct HyperCache {
    m_chol: Cholesky<f64, Dyn>,
    m_inv: DMatrix<f64>,
    r0_inv: Vec<DMatrix<f64>>,
}

impl HyperCache {
    fn build(hyper: &Hyperparams) -> Result<Self> {
        let m_chol = cholesky(&hyper.within_cov)
            .ok_or_else(|| Error::numeric("within-cluster covariance is not positive definite"))?;
        let m_inv = symmetrize(&m_chol.inverse());
        let r0_inv = hyper
            .mean_prior_covs
            .iter()
            .map(|r0| spd_inverse(r0, "mean prior covariance"))
            .collect::<Result<_>>()?;
        Ok(Self { m_chol, m_inv, r0_inv })
    }
}

/// Per-regime log-weight terms that do not depend on the observation:
/// log weight + the quadratic/trace penalty of the posterior mean.
fn cluster_log_terms(
    hyper: &Hyperparams,
    cache: &HyperCache,
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let k = hyper.cluster_count();
    let mut m_inv_mu = Vec::with_capacity(k);
    let mut constants = Vec::with_capacity(k);
    for k_idx in 0..k {
        let a = &cache.m_inv * &means[k_idx];
        let quad = means[k_idx].dot(&a);
        let trace = (&cache.m_inv * &covs[k_idx]).trace();
        constants.push(hyper.cluster_weights[k_idx].ln() - 0.5 * (quad + trace));
        m_inv_mu.push(a);
    }
    (m_inv_mu, constants)
}

/// Responsibility update: for every observation, the posterior regime
/// probabilities given the current mean and Dirichlet posteriors.
pub fn update_responsibilities(
    obs: &Observations,
    hyper: &Hyperparams,
    state: &VariationalState,
) -> Result<DMatrix<f64>> {
    obs.validate_against(hyper)?;
    let cache = HyperCache::build(hyper)?;
    update_responsibilities_cached(obs, hyper, &cache, state)
}

fn update_responsibilities_cached(
    obs: &Observations,
    hyper: &Hyperparams,
    cache: &HyperCache,
    state: &VariationalState,
) -> Result<DMatrix<f64>> {
    let k = hyper.cluster_count();
    let j = hyper.category_count();
    let (m_inv_mu, constants) =
        cluster_log_terms(hyper, cache, &state.cluster_means, &state.cluster_covs);

    // Ψ(α̂_kj) − Ψ(Σ_j α̂_kj) per regime and category.
    let mut dig = vec![vec![0.0; j]; k];
    for k_idx in 0..k {
        let alpha = &state.category_dirichlet[k_idx];
        let total = digamma(alpha.iter().sum())?;
        for j_idx in 0..j {
            dig[k_idx][j_idx] = digamma(alpha[j_idx])? - total;
        }
    }

    let mut phi = DMatrix::zeros(obs.len(), k);
    let mut log_w = vec![0.0; k];
    for t in 0..obs.len() {
        let x = &obs.features[t];
        let d = obs.categories[t];
        for k_idx in 0..k {
            let lw = constants[k_idx] + x.dot(&m_inv_mu[k_idx]) + dig[k_idx][d];
            if !lw.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite responsibility log-weight at observation {t}"
                )));
            }
            log_w[k_idx] = lw;
        }
        let lse = log_sum_exp(&log_w);
        for k_idx in 0..k {
            phi[(t, k_idx)] = (log_w[k_idx] - lse).exp();
        }
    }
    Ok(phi)
}

/// Regime-center posterior update. A regime with zero soft mass falls back
/// to its prior exactly.
pub fn update_cluster_moments(
    obs: &Observations,
    hyper: &Hyperparams,
    phi: &DMatrix<f64>,
) -> Result<ClusterMoments> {
    obs.validate_against(hyper)?;
    let cache = HyperCache::build(hyper)?;
    update_cluster_moments_cached(obs, hyper, &cache, phi)
}

fn update_cluster_moments_cached(
    obs: &Observations,
    hyper: &Hyperparams,
    cache: &HyperCache,
    phi: &DMatrix<f64>,
) -> Result<ClusterMoments> {
    let k = hyper.cluster_count();
    let n = hyper.dim();
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for k_idx in 0..k {
        let mass: f64 = (0..obs.len()).map(|t| phi[(t, k_idx)]).sum();
        if mass == 0.0 {
            means.push(hyper.mean_priors[k_idx].clone());
            covs.push(hyper.mean_prior_covs[k_idx].clone());
            continue;
        }
        let mut weighted_sum = DVector::zeros(n);
        for t in 0..obs.len() {
            weighted_sum += phi[(t, k_idx)] * &obs.features[t];
        }
        let precision = &cache.r0_inv[k_idx] + mass * &cache.m_inv;
        let rhs = &cache.r0_inv[k_idx] * &hyper.mean_priors[k_idx] + &cache.m_inv * weighted_sum;
        let chol = cholesky(&precision)
            .ok_or_else(|| Error::numeric("posterior precision lost positive definiteness"))?;
        covs.push(symmetrize(&chol.inverse()));
        means.push(chol.solve(&rhs));
    }
    Ok((means, covs))
}

/// Dirichlet posterior update: prior plus the responsibility-weighted
/// category counts.
pub fn update_dirichlet(
    obs: &Observations,
    hyper: &Hyperparams,
    phi: &DMatrix<f64>,
) -> Result<Vec<DVector<f64>>> {
    obs.validate_against(hyper)?;
    let k = hyper.cluster_count();
    let j = hyper.category_count();
    let mut alpha = hyper.category_priors.clone();
    for t in 0..obs.len() {
        let d = obs.categories[t];
        debug_assert!(d < j);
        for k_idx in 0..k {
            alpha[k_idx][d] += phi[(t, k_idx)];
        }
    }
    Ok(alpha)
}

/// Evidence lower bound of the current variational state. Exactly zero for
/// an empty observation set with the posterior equal to the priors.
pub fn elbo(obs: &Observations, hyper: &Hyperparams, state: &VariationalState) -> Result<f64> {
    obs.validate_against(hyper)?;
    let cache = HyperCache::build(hyper)?;
    elbo_cached(obs, hyper, &cache, state)
}

fn elbo_cached(
    obs: &Observations,
    hyper: &Hyperparams,
    cache: &HyperCache,
    state: &VariationalState,
) -> Result<f64> {
    let k = hyper.cluster_count();
    let j = hyper.category_count();
    let n = hyper.dim() as f64;
    let ln_det_m = ln_det(&cache.m_chol);

    let mut total = 0.0;

    // Expected log prior of the regime centers minus the entropy-bearing
    // term of their variational posterior.
    for k_idx in 0..k {
        let r0_chol = cholesky(&hyper.mean_prior_covs[k_idx])
            .ok_or_else(|| Error::numeric("mean prior covariance is not positive definite"))?;
        let diff = &state.cluster_means[k_idx] - &hyper.mean_priors[k_idx];
        let quad = diff.dot(&(&cache.r0_inv[k_idx] * &diff));
        let trace = (&cache.r0_inv[k_idx] * &state.cluster_covs[k_idx]).trace();
        total += -0.5 * n * LN_2PI - 0.5 * ln_det(&r0_chol) - 0.5 * (quad + trace);

        let r_hat_chol = cholesky(&state.cluster_covs[k_idx])
            .ok_or_else(|| Error::numeric("posterior covariance is not positive definite"))?;
        total += 0.5 * n * LN_2PI + 0.5 * n + 0.5 * ln_det(&r_hat_chol);
    }

    // Dirichlet prior expectation and posterior entropy per regime.
    for k_idx in 0..k {
        let alpha0 = &hyper.category_priors[k_idx];
        let alpha = &state.category_dirichlet[k_idx];
        let sum0: f64 = alpha0.iter().sum();
        let sum: f64 = alpha.iter().sum();
        let dig_sum = digamma(sum)?;

        let mut expected_log_prior = ln_gamma(sum0);
        for j_idx in 0..j {
            expected_log_prior -= ln_gamma(alpha0[j_idx]);
            expected_log_prior += (alpha0[j_idx] - 1.0) * (digamma(alpha[j_idx])? - dig_sum);
        }
        total += expected_log_prior;

        let mut entropy = -ln_gamma(sum) + (sum - j as f64) * dig_sum;
        for j_idx in 0..j {
            entropy += ln_gamma(alpha[j_idx]);
            entropy -= (alpha[j_idx] - 1.0) * digamma(alpha[j_idx])?;
        }
        total += entropy;
    }

    if obs.is_empty() {
        return finite(total);
    }

    let (m_inv_mu, _) = cluster_log_terms(hyper, cache, &state.cluster_means, &state.cluster_covs);
    let mut penalty = vec![0.0; k];
    for k_idx in 0..k {
        let quad = state.cluster_means[k_idx].dot(&m_inv_mu[k_idx]);
        let trace = (&cache.m_inv * &state.cluster_covs[k_idx]).trace();
        penalty[k_idx] = quad + trace;
    }
    let mut dig = vec![vec![0.0; j]; k];
    for k_idx in 0..k {
        let alpha = &state.category_dirichlet[k_idx];
        let dig_sum = digamma(alpha.iter().sum())?;
        for j_idx in 0..j {
            dig[k_idx][j_idx] = digamma(alpha[j_idx])? - dig_sum;
        }
    }

    for t in 0..obs.len() {
        let x = &obs.features[t];
        let d = obs.categories[t];
        let x_m_inv_x = x.dot(&(&cache.m_inv * x));
        for k_idx in 0..k {
            let phi = state.responsibilities[(t, k_idx)];
            if phi == 0.0 {
                continue;
            }
            // log regime prior + expected feature log-likelihood
            // + expected category log-likelihood − responsibility entropy term.
            let log_lik_x = -0.5 * n * LN_2PI - 0.5 * ln_det_m
                - 0.5 * (x_m_inv_x - 2.0 * x.dot(&m_inv_mu[k_idx]) + penalty[k_idx]);
            total += phi
                * (hyper.cluster_weights[k_idx].ln() + log_lik_x + dig[k_idx][d] - phi.ln());
        }
    }
    finite(total)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric("non-finite ELBO"))
    }
}

/// Options for [`cavi_fit`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CaviOptions {
    pub max_sweeps: usize,
    /// Relative tolerance on |ΔELBO|/(1+|ELBO|).
    pub rel_tol: f64,
    /// Number of random-responsibility initializations tried in addition
    /// to the center-seeded one; the best final ELBO wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CaviOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            rel_tol: 1e-8,
            restarts: 2,
            seed: 0,
        }
    }
}

/// One full coordinate sweep in place: responsibilities, then regime
/// moments, then Dirichlet parameters. Does not touch the ELBO trace.
pub fn cavi_sweep(
    obs: &Observations,
    hyper: &Hyperparams,
    state: &mut VariationalState,
) -> Result<()> {
    let cache = HyperCache::build(hyper)?;
    cavi_sweep_cached(obs, hyper, &cache, state)
}

fn cavi_sweep_cached(
    obs: &Observations,
    hyper: &Hyperparams,
    cache: &HyperCache,
    state: &mut VariationalState,
) -> Result<()> {
    state.responsibilities = update_responsibilities_cached(obs, hyper, cache, state)?;
    let (means, covs) = update_cluster_moments_cached(obs, hyper, cache, &state.responsibilities)?;
    state.cluster_means = means;
    state.cluster_covs = covs;
    state.category_dirichlet = update_dirichlet(obs, hyper, &state.responsibilities)?;
    Ok(())
}

/// Fit the variational posterior by coordinate ascent with restarts.
/// Deterministic for a fixed seed. Non-convergence within `max_sweeps` is
/// reported through the `converged` flag, not as an error.
pub fn cavi_fit(
    obs: &Observations,
    hyper: &Hyperparams,
    opts: &CaviOptions,
) -> Result<VariationalState> {
    if obs.is_empty() {
        return Err(Error::data("cannot fit on an empty observation set"));
    }
    hyper.validate()?;
    obs.validate_against(hyper)?;
    let cache = HyperCache::build(hyper)?;

    let mut best: Option<VariationalState> = None;
    for init_idx in 0..=opts.restarts {
        let mut init_rng = rng::child(opts.seed, init_idx as u64);
        let phi0 = if init_idx == 0 {
            seeded_hard_responsibilities(obs, hyper.cluster_count(), &mut init_rng)
        } else {
            random_responsibilities(obs.len(), hyper.cluster_count(), &mut init_rng)
        };
        let state = run_from(obs, hyper, &cache, phi0, opts)?;
        let is_better = match &best {
            None => true,
            Some(b) => state.elbo_trace.last() > b.elbo_trace.last(),
        };
        if is_better {
            best = Some(state);
        }
    }
    Ok(best.expect("at least one initialization runs"))
}

/// Fit from an explicit initial responsibility matrix (no restarts).
pub fn cavi_fit_from(
    obs: &Observations,
    hyper: &Hyperparams,
    phi0: DMatrix<f64>,
    opts: &CaviOptions,
) -> Result<VariationalState> {
    if obs.is_empty() {
        return Err(Error::data("cannot fit on an empty observation set"));
    }
    hyper.validate()?;
    obs.validate_against(hyper)?;
    if phi0.nrows() != obs.len() || phi0.ncols() != hyper.cluster_count() {
        return Err(Error::data("initial responsibilities have the wrong shape"));
    }
    let cache = HyperCache::build(hyper)?;
    run_from(obs, hyper, &cache, phi0, opts)
}

fn run_from(
    obs: &Observations,
    hyper: &Hyperparams,
    cache: &HyperCache,
    phi0: DMatrix<f64>,
    opts: &CaviOptions,
) -> Result<VariationalState> {
    let (means, covs) = update_cluster_moments_cached(obs, hyper, cache, &phi0)?;
    let alpha = update_dirichlet(obs, hyper, &phi0)?;
    let mut state = VariationalState {
        responsibilities: phi0,
        cluster_means: means,
        cluster_covs: covs,
        category_dirichlet: alpha,
        elbo_trace: Vec::new(),
        converged: false,
    };
    let mut current = elbo_cached(obs, hyper, cache, &state)?;
    state.elbo_trace.push(current);

    for _ in 0..opts.max_sweeps {
        cavi_sweep_cached(obs, hyper, cache, &mut state)?;
        let next = elbo_cached(obs, hyper, cache, &state)?;
        state.elbo_trace.push(next);
        if (next - current).abs() / (1.0 + next.abs()) < opts.rel_tol {
            state.converged = true;
            break;
        }
        current = next;
    }
    Ok(state)
}

/// Distance-weighted greedy center seeding over data rows: the first
/// center is a random row, each further center is drawn with probability
/// proportional to the squared distance from the nearest chosen center.
pub fn seed_centers(features: &[DVector<f64>], k: usize, rng: &mut rng::Rng) -> Vec<DVector<f64>> {
    use rand::Rng as _;
    assert!(!features.is_empty() && k > 0);
    let t_len = features.len();
    let mut centers: Vec<DVector<f64>> = vec![features[rng.random_range(0..t_len)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = features
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|c| (x - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = t_len - 1;
            for (i, w) in d2.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..t_len)
        };
        centers.push(features[idx].clone());
    }
    centers
}

/// Center seeding followed by one hard assignment.
fn seeded_hard_responsibilities(
    obs: &Observations,
    k: usize,
    rng: &mut rng::Rng,
) -> DMatrix<f64> {
    let centers = seed_centers(&obs.features, k, rng);
    let t_len = obs.len();
    let mut phi = DMatrix::zeros(t_len, k);
    for t in 0..t_len {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k_idx, c) in centers.iter().enumerate() {
            let d = (&obs.features[t] - c).norm_squared();
            if d < best_d {
                best_d = d;
                best = k_idx;
            }
        }
        phi[(t, best)] = 1.0;
    }
    phi
}

fn random_responsibilities(t_len: usize, k: usize, rng: &mut rng::Rng) -> DMatrix<f64> {
    use rand::Rng as _;
    let mut phi = DMatrix::zeros(t_len, k);
    for t in 0..t_len {
        let mut row: Vec<f64> = (0..k)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let sum: f64 = row.iter().sum();
        for v in &mut row {
            *v /= sum;
        }
        for (k_idx, v) in row.iter().enumerate() {
            phi[(t, k_idx)] = *v;
        }
    }
    phi
}

/// Predictive regime probabilities for a new feature vector (category
/// outcome unknown), in log space.
pub fn predictive_cluster_probs(
    x: &DVector<f64>,
    hyper: &Hyperparams,
    state: &VariationalState,
) -> Result<Vec<f64>> {
    if x.len() != hyper.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("feature vector has wrong dimension or non-finite entries"));
    }
    let cache = HyperCache::build(hyper)?;
    let (m_inv_mu, constants) =
        cluster_log_terms(hyper, &cache, &state.cluster_means, &state.cluster_covs);
    let log_w: Vec<f64> = (0..hyper.cluster_count())
        .map(|k_idx| constants[k_idx] + x.dot(&m_inv_mu[k_idx]))
        .collect();
    let lse = log_sum_exp(&log_w);
    Ok(log_w.iter().map(|lw| (lw - lse).exp()).collect())
}

/// Predictive category probabilities for a new feature vector: posterior
/// Dirichlet means mixed over the predictive regime probabilities.
pub fn predictive_category_probs(
    x: &DVector<f64>,
    hyper: &Hyperparams,
    state: &VariationalState,
) -> Result<Vec<f64>> {
    let cluster_probs = predictive_cluster_probs(x, hyper, state)?;
    let j = hyper.category_count();
    let mut probs = vec![0.0; j];
    for (k_idx, q) in cluster_probs.iter().enumerate() {
        let alpha = &state.category_dirichlet[k_idx];
        let total: f64 = alpha.iter().sum();
        for j_idx in 0..j {
            probs[j_idx] += q * alpha[j_idx] / total;
        }
    }
    Ok(probs)
}

/// Versioned JSON document for a fitted state. Matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariationalStateDoc {
    pub version: u32,
    pub cluster_count: usize,
    pub category_count: usize,
    pub dim: usize,
    pub responsibilities: Vec<Vec<f64>>,
    pub cluster_means: Vec<Vec<f64>>,
    pub cluster_covs: Vec<Vec<Vec<f64>>>,
    pub category_dirichlet: Vec<Vec<f64>>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

pub const STATE_DOC_VERSION: u32 = 1;

impl VariationalStateDoc {
    pub fn from_state(state: &VariationalState) -> Self {
        let k = state.cluster_means.len();
        let dim = state.cluster_means.first().map_or(0, |m| m.len());
        Self {
            version: STATE_DOC_VERSION,
            cluster_count: k,
            category_count: state.category_dirichlet.first().map_or(0, |a| a.len()),
            dim,
            responsibilities: (0..state.responsibilities.nrows())
                .map(|t| state.responsibilities.row(t).iter().copied().collect())
                .collect(),
            cluster_means: state.cluster_means.iter().map(|m| m.iter().copied().collect()).collect(),
            cluster_covs: state
                .cluster_covs
                .iter()
                .map(|c| (0..c.nrows()).map(|r| c.row(r).iter().copied().collect()).collect())
                .collect(),
            category_dirichlet: state
                .category_dirichlet
                .iter()
                .map(|a| a.iter().copied().collect())
                .collect(),
            elbo_trace: state.elbo_trace.clone(),
            converged: state.converged,
        }
    }

    pub fn into_state(self) -> Result<VariationalState> {
        if self.version != STATE_DOC_VERSION {
            return Err(Error::data(format!("unsupported state version {}", self.version)));
        }
        let k = self.cluster_count;
        let responsibilities = DMatrix::from_fn(self.responsibilities.len(), k, |t, k_idx| {
            self.responsibilities[t][k_idx]
        });
        Ok(VariationalState {
            responsibilities,
            cluster_means: self.cluster_means.into_iter().map(DVector::from_vec).collect(),
            cluster_covs: self
                .cluster_covs
                .into_iter()
                .map(|rows| {
                    DMatrix::from_fn(self.dim, self.dim, |r, c| rows[r][c])
                })
                .collect(),
            category_dirichlet: self.category_dirichlet.into_iter().map(DVector::from_vec).collect(),
            elbo_trace: self.elbo_trace,
            converged: self.converged,
        })
    }
}
