//! Full-covariance Gaussian mixture density, EM fitting, and BIC-based
//! component-count selection.
//!
//! All density work happens in the log domain; covariance factorizations go
//! through Cholesky with escalating diagonal jitter so collapsed components
//! cannot poison an entire fit. Fitting is single-threaded by contract:
//! results are reproducible bit for bit given the same seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("covariance matrix is singular (component {component})")]
    SingularCovariance { component: usize },
    #[error("data set is empty")]
    EmptyData,
    #[error("need at least {needed} points to fit {k} components in {dim} dimensions, got {got}")]
    InsufficientData { needed: usize, got: usize, k: usize, dim: usize },
    #[error("component {component} lost all responsibility mass and could not be reinitialized")]
    DegenerateComponent { component: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A weighted mixture of full-covariance Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub dim_labels: Vec<String>,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Checks the structural invariants: weights on the simplex, symmetric
    /// positive-definite covariances, consistent dimensions.
    pub fn validate(&self) -> Result<(), GmmError> {
        let k = self.k();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(GmmError::InvalidArgument(
                "weights, means and covariances must have equal nonzero length".into(),
            ));
        }
        let d = self.dim();
        let wsum: f64 = self.weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(GmmError::InvalidArgument("weights must lie in (0,1] and sum to 1".into()));
        }
        for (idx, (m, s)) in self.means.iter().zip(self.covariances.iter()).enumerate() {
            if m.len() != d || s.nrows() != d || s.ncols() != d {
                return Err(GmmError::InvalidArgument(format!(
                    "component {idx} has inconsistent dimensions"
                )));
            }
            for i in 0..d {
                for j in 0..i {
                    if (s[(i, j)] - s[(j, i)]).abs() > 1e-12 {
                        return Err(GmmError::InvalidArgument(format!(
                            "component {idx} covariance is not symmetric"
                        )));
                    }
                }
            }
            Precision::new(s, idx)?;
        }
        Ok(())
    }
}

/// Trace of an EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Number of EM updates performed.
    pub iterations: usize,
    /// Log-likelihood trace; index 0 is the value under the initial
    /// parameters, each following entry the value after one EM update.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub epsilon: f64,
}

/// How EM parameters are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Distance-weighted seeding on standardized data; the best of
    /// `restarts` independent runs (by final log-likelihood) is kept.
    KmeansPlusPlus { restarts: usize },
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::KmeansPlusPlus { restarts: 5 }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Cholesky factorization of a covariance matrix with the log normalization
/// constant baked in. Falls back to escalating diagonal jitter when the
/// matrix is not numerically positive definite.
pub(crate) struct Precision {
    lower: DMatrix<f64>,
    /// -d/2 * ln(2*pi) - 1/2 * ln|Sigma|
    log_norm: f64,
}

impl Precision {
    pub(crate) fn new(sigma: &DMatrix<f64>, component: usize) -> Result<Self, GmmError> {
        let d = sigma.nrows();
        let mean_diag = sigma.diagonal().iter().sum::<f64>() / d as f64;
        let base_jitter = 1e-6 * mean_diag.abs().max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        for attempt in 0..6 {
            let mut m = sigma.clone();
            if jitter > 0.0 {
                for i in 0..d {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = nalgebra::Cholesky::new(m) {
                let lower = chol.unpack();
                let log_det: f64 = (0..d).map(|i| lower[(i, i)].ln()).sum::<f64>() * 2.0;
                if log_det.is_finite() {
                    return Ok(Self {
                        lower,
                        log_norm: -0.5 * (d as f64) * (2.0 * PI).ln() - 0.5 * log_det,
                    });
                }
            }
            jitter = base_jitter * 10f64.powi(attempt);
        }
        Err(GmmError::SingularCovariance { component })
    }

    /// Solves Sigma x = b through the (possibly jittered) factorization.
    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let d = self.lower.nrows();
        let mut x = b.clone();
        // Forward substitution: L y = b.
        for i in 0..d {
            let mut v = x[i];
            for j in 0..i {
                v -= self.lower[(i, j)] * x[j];
            }
            x[i] = v / self.lower[(i, i)];
        }
        // Backward substitution: L^T x = y.
        for i in (0..d).rev() {
            let mut v = x[i];
            for j in i + 1..d {
                v -= self.lower[(j, i)] * x[j];
            }
            x[i] = v / self.lower[(i, i)];
        }
        x
    }

    /// Log density of N(x; mu, Sigma). `scratch` must have length d.
    pub(crate) fn log_pdf(&self, x: &DVector<f64>, mu: &DVector<f64>, scratch: &mut [f64]) -> f64 {
        let d = self.lower.nrows();
        for i in 0..d {
            scratch[i] = x[i] - mu[i];
        }
        // Forward substitution: solve L z = (x - mu), accumulate |z|^2.
        let mut quad = 0.0;
        for i in 0..d {
            let mut v = scratch[i];
            for j in 0..i {
                v -= self.lower[(i, j)] * scratch[j];
            }
            v /= self.lower[(i, i)];
            scratch[i] = v;
            quad += v * v;
        }
        self.log_norm - 0.5 * quad
    }
}

/// Multivariate Gaussian density at `x`.
pub fn mgd_pdf(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64, GmmError> {
    Ok(mgd_log_pdf(x, mu, sigma)?.exp())
}

/// Log of the multivariate Gaussian density at `x`.
pub fn mgd_log_pdf(
    x: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64, GmmError> {
    if x.len() != mu.len() || sigma.nrows() != x.len() || sigma.ncols() != x.len() {
        return Err(GmmError::InvalidArgument("dimension mismatch".into()));
    }
    let prec = Precision::new(sigma, 0)?;
    let mut scratch = vec![0.0; x.len()];
    Ok(prec.log_pdf(x, mu, &mut scratch))
}

/// Mixture density at `x`.
pub fn gmm_pdf(x: &DVector<f64>, model: &GmmModel) -> Result<f64, GmmError> {
    let prec = precisions(model)?;
    let mut scratch = vec![0.0; model.dim()];
    let mut lw = vec![0.0; model.k()];
    Ok(log_mixture_density(x, model, &prec, &mut scratch, &mut lw).exp())
}

/// Total log-likelihood of `data` under `model` (log-sum-exp stabilized).
pub fn log_likelihood(data: &[DVector<f64>], model: &GmmModel) -> Result<f64, GmmError> {
    if data.is_empty() {
        return Err(GmmError::EmptyData);
    }
    let prec = precisions(model)?;
    let mut scratch = vec![0.0; model.dim()];
    let mut lw = vec![0.0; model.k()];
    let mut total = 0.0;
    for x in data {
        total += log_mixture_density(x, model, &prec, &mut scratch, &mut lw);
    }
    Ok(total)
}

fn precisions(model: &GmmModel) -> Result<Vec<Precision>, GmmError> {
    model
        .covariances
        .iter()
        .enumerate()
        .map(|(k, s)| Precision::new(s, k))
        .collect()
}

/// log sum_k w_k N(x; mu_k, Sigma_k), computed with the usual max shift.
fn log_mixture_density(
    x: &DVector<f64>,
    model: &GmmModel,
    prec: &[Precision],
    scratch: &mut [f64],
    lw: &mut [f64],
) -> f64 {
    for k in 0..model.k() {
        lw[k] = model.weights[k].ln() + prec[k].log_pdf(x, &model.means[k], scratch);
    }
    log_sum_exp(lw)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Fits a K-component mixture by EM.
///
/// Stops at the first update where the log-likelihood gain drops below
/// `epsilon`, or after `max_iter` updates. Identical inputs produce
/// bit-identical results.
pub fn em_fit(
    data: &[DVector<f64>],
    k: usize,
    init: InitStrategy,
    epsilon: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(GmmModel, FitReport), GmmError> {
    if data.is_empty() {
        return Err(GmmError::EmptyData);
    }
    if k == 0 {
        return Err(GmmError::InvalidArgument("k must be >= 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(GmmError::InvalidArgument("epsilon must be > 0".into()));
    }
    let d = data[0].len();
    let needed = k * (d + 1);
    if data.len() < needed {
        return Err(GmmError::InsufficientData { needed, got: data.len(), k, dim: d });
    }
    if data.iter().any(|x| x.len() != d) {
        return Err(GmmError::InvalidArgument("points have inconsistent dimensions".into()));
    }

    let InitStrategy::KmeansPlusPlus { restarts } = init;
    let restarts = restarts.max(1);

    let mut best: Option<(GmmModel, FitReport)> = None;
    for r in 0..restarts {
        let run_seed = derive_seed(seed, &[0x6d6f64656c, r as u64]);
        let initial = seed_model(data, k, run_seed)?;
        let (model, report) = em_run(data, initial, epsilon, max_iter)?;
        let score = *report.loglik_trace.last().unwrap();
        let better = match &best {
            None => true,
            Some((_, b)) => score > *b.loglik_trace.last().unwrap(),
        };
        if better {
            best = Some((model, report));
        }
    }
    Ok(best.unwrap())
}

/// Deterministic seed derivation (splitmix64 over the tag stream).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &t in tags {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(t);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Distance-weighted center seeding on standardized data. Initial
/// covariances are the pooled data covariance; weights are uniform.
fn seed_model(data: &[DVector<f64>], k: usize, seed: u64) -> Result<GmmModel, GmmError> {
    let d = data[0].len();
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-dimension standardization so distance weighting is scale-free.
    let mut mean = vec![0.0; d];
    for x in data {
        for i in 0..d {
            mean[i] += x[i];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for x in data {
        for i in 0..d {
            let c = x[i] - mean[i];
            var[i] += c * c;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();

    let std_point = |idx: usize| -> Vec<f64> {
        (0..d).map(|i| (data[idx][i] - mean[i]) / scale[i]).collect()
    };

    let mut centers: Vec<usize> = Vec::with_capacity(k);
    centers.push(rng.gen_range(0..n));
    let mut dist2 = vec![0.0f64; n];
    let first = std_point(centers[0]);
    for t in 0..n {
        let p = std_point(t);
        dist2[t] = p.iter().zip(first.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    }
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (t, &w) in dist2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = t;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with a center; pick uniformly.
            rng.gen_range(0..n)
        };
        centers.push(next);
        let c = std_point(next);
        for t in 0..n {
            let p = std_point(t);
            let dd: f64 = p.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if dd < dist2[t] {
                dist2[t] = dd;
            }
        }
    }

    let pooled = pooled_covariance(data, &mean);
    Ok(GmmModel {
        dim_labels: default_labels(d),
        weights: vec![1.0 / k as f64; k],
        means: centers.iter().map(|&idx| data[idx].clone()).collect(),
        covariances: vec![pooled; k],
    })
}

fn default_labels(d: usize) -> Vec<String> {
    if d == crate::domain::DIM_LABELS.len() {
        crate::domain::DIM_LABELS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..d).map(|i| format!("x{i}")).collect()
    }
}

/// Biased (1/n) sample covariance around `mean`.
fn pooled_covariance(data: &[DVector<f64>], mean: &[f64]) -> DMatrix<f64> {
    let d = mean.len();
    let n = data.len();
    let mut cov = DMatrix::zeros(d, d);
    for x in data {
        for i in 0..d {
            let ci = x[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += ci * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[(i, j)] /= n as f64;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov
}

fn em_run(
    data: &[DVector<f64>],
    mut model: GmmModel,
    epsilon: f64,
    max_iter: usize,
) -> Result<(GmmModel, FitReport), GmmError> {
    let n = data.len();
    let d = model.dim();
    let k = model.k();
    let mut resp = vec![0.0f64; n * k];
    let mut point_ll = vec![0.0f64; n];
    let mut scratch = vec![0.0f64; d];
    let mut lw = vec![0.0f64; k];

    let mut prec = precisions(&model)?;
    let mut prev_ll = e_step(data, &model, &prec, &mut resp, &mut point_ll, &mut scratch, &mut lw);
    let mut trace = vec![prev_ll];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iter {
        m_step(data, &mut model, &resp, &point_ll)?;
        prec = precisions(&model)?;
        let ll = e_step(data, &model, &prec, &mut resp, &mut point_ll, &mut scratch, &mut lw);
        iterations += 1;
        trace.push(ll);
        if ll - prev_ll < epsilon {
            converged = true;
            break;
        }
        prev_ll = ll;
    }

    Ok((
        model,
        FitReport {
            iterations,
            loglik_trace: trace,
            converged,
            epsilon,
        },
    ))
}

/// Posterior responsibilities for every point; returns the total
/// log-likelihood. `resp` is row-major `n x k`.
fn e_step(
    data: &[DVector<f64>],
    model: &GmmModel,
    prec: &[Precision],
    resp: &mut [f64],
    point_ll: &mut [f64],
    scratch: &mut [f64],
    lw: &mut [f64],
) -> f64 {
    let k = model.k();
    let mut total = 0.0;
    for (t, x) in data.iter().enumerate() {
        for j in 0..k {
            lw[j] = model.weights[j].ln() + prec[j].log_pdf(x, &model.means[j], scratch);
        }
        let lse = log_sum_exp(lw);
        point_ll[t] = lse;
        total += lse;
        for j in 0..k {
            resp[t * k + j] = (lw[j] - lse).exp();
        }
    }
    total
}

/// Weight / mean / covariance updates from the current responsibilities.
/// A component whose responsibility mass underflows to zero is reinitialized
/// at the point the mixture currently explains worst.
fn m_step(
    data: &[DVector<f64>],
    model: &mut GmmModel,
    resp: &[f64],
    point_ll: &[f64],
) -> Result<(), GmmError> {
    let n = data.len();
    let d = model.dim();
    let k = model.k();

    let mut mass = vec![0.0f64; k];
    for t in 0..n {
        for j in 0..k {
            mass[j] += resp[t * k + j];
        }
    }

    for j in 0..k {
        if mass[j] > 0.0 {
            continue;
        }
        // Reinitialize at the worst-explained point with the pooled spread.
        let worst = point_ll
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(idx, _)| idx)
            .ok_or(GmmError::DegenerateComponent { component: j })?;
        let mut mean = vec![0.0; d];
        for x in data {
            for i in 0..d {
                mean[i] += x[i];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        model.means[j] = data[worst].clone();
        model.covariances[j] = pooled_covariance(data, &mean);
        mass[j] = 1.0;
    }

    let mass_total: f64 = mass.iter().sum();
    for j in 0..k {
        model.weights[j] = mass[j] / mass_total;
    }

    for j in 0..k {
        let mut mu = DVector::zeros(d);
        for (t, x) in data.iter().enumerate() {
            let r = resp[t * k + j];
            for i in 0..d {
                mu[i] += r * x[i];
            }
        }
        mu /= mass[j];
        model.means[j] = mu;
    }

    for j in 0..k {
        let mu = model.means[j].clone();
        let mut cov = DMatrix::zeros(d, d);
        for (t, x) in data.iter().enumerate() {
            let r = resp[t * k + j];
            for i in 0..d {
                let ci = x[i] - mu[i];
                for l in 0..=i {
                    cov[(i, l)] += r * ci * (x[l] - mu[l]);
                }
            }
        }
        for i in 0..d {
            for l in 0..=i {
                cov[(i, l)] /= mass[j];
                cov[(l, i)] = cov[(i, l)];
            }
        }
        model.covariances[j] = cov;
    }
    Ok(())
}

/// Bayesian information criterion; lower is better.
///
/// The free-parameter count for K full-covariance components in d dimensions
/// is (K-1) + K*d + K*d*(d+1)/2.
pub fn bic_score(data: &[DVector<f64>], model: &GmmModel) -> Result<f64, GmmError> {
    if data.is_empty() {
        return Err(GmmError::EmptyData);
    }
    let ll = log_likelihood(data, model)?;
    let p = free_parameters(model.k(), model.dim()) as f64;
    Ok(-2.0 * ll + p * (data.len() as f64).ln())
}

pub fn free_parameters(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

/// One (K, BIC) sample of a selection sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicPoint {
    pub k: usize,
    pub bic: f64,
}

/// Fraction below which a BIC improvement no longer justifies a larger K.
pub const DEFAULT_ELBOW_FRACTION: f64 = 0.01;

/// Sweeps `k_range`, fits each candidate, and picks the elbow of the BIC
/// curve: the last K before the relative improvement falls under
/// [`DEFAULT_ELBOW_FRACTION`]. Returns the chosen K and the full curve.
pub fn select_components(
    data: &[DVector<f64>],
    k_range: impl IntoIterator<Item = usize>,
    runs_per_k: usize,
    epsilon: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(usize, Vec<BicPoint>), GmmError> {
    let mut ks: Vec<usize> = k_range.into_iter().collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(GmmError::InvalidArgument("empty K range".into()));
    }
    let mut curve = Vec::with_capacity(ks.len());
    for &k in &ks {
        let (model, _) = em_fit(
            data,
            k,
            InitStrategy::KmeansPlusPlus { restarts: runs_per_k.max(1) },
            epsilon,
            max_iter,
            derive_seed(seed, &[0x62696373, k as u64]),
        )?;
        curve.push(BicPoint { k, bic: bic_score(data, &model)? });
    }

    let mut chosen = None;
    for w in curve.windows(2) {
        let improvement = (w[0].bic - w[1].bic) / w[0].bic.abs().max(f64::MIN_POSITIVE);
        if improvement < DEFAULT_ELBOW_FRACTION {
            chosen = Some(w[0].k);
            break;
        }
    }
    let chosen = chosen.unwrap_or_else(|| {
        curve
            .iter()
            .min_by(|a, b| a.bic.partial_cmp(&b.bic).unwrap_or(std::cmp::Ordering::Equal))
            .map(|p| p.k)
            .unwrap()
    });
    Ok((chosen, curve))
}

/// Serialization document for [`GmmModel`] (covariances row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmModelDoc {
    pub dim_labels: Vec<String>,
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_report: Option<FitReport>,
}

impl GmmModelDoc {
    pub fn from_model(model: &GmmModel, fit_report: Option<FitReport>) -> Self {
        Self {
            dim_labels: model.dim_labels.clone(),
            k: model.k(),
            weights: model.weights.clone(),
            means: model.means.iter().map(|m| m.iter().cloned().collect()).collect(),
            covariances: model
                .covariances
                .iter()
                .map(|s| s.row_iter().flat_map(|r| r.iter().cloned().collect::<Vec<_>>()).collect())
                .collect(),
            fit_report,
        }
    }

    pub fn into_model(self) -> Result<GmmModel, GmmError> {
        let d = self.dim_labels.len();
        if self.weights.len() != self.k || self.means.len() != self.k || self.covariances.len() != self.k {
            return Err(GmmError::InvalidArgument("document arrays disagree with k".into()));
        }
        let means = self
            .means
            .into_iter()
            .map(|m| {
                if m.len() == d {
                    Ok(DVector::from_vec(m))
                } else {
                    Err(GmmError::InvalidArgument("mean dimension mismatch".into()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let covariances = self
            .covariances
            .into_iter()
            .map(|c| {
                if c.len() == d * d {
                    Ok(DMatrix::from_row_slice(d, d, &c))
                } else {
                    Err(GmmError::InvalidArgument("covariance dimension mismatch".into()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = GmmModel {
            dim_labels: self.dim_labels,
            weights: self.weights,
            means,
            covariances,
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn single_model(d: usize) -> GmmModel {
        GmmModel {
            dim_labels: (0..d).map(|i| format!("x{i}")).collect(),
            weights: vec![1.0],
            means: vec![DVector::zeros(d)],
            covariances: vec![DMatrix::identity(d, d)],
        }
    }

    #[test]
    fn standard_normal_at_mode() {
        let p = mgd_pdf(&vec1(0.0), &vec1(0.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(p, 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn identity_2d_at_mode() {
        let p = mgd_pdf(&DVector::zeros(2), &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(p, 1.0 / (2.0 * PI), epsilon = 1e-12);
    }

    #[test]
    fn diagonal_case_matches_direct_evaluation() {
        // Oracle: direct quadratic-form evaluation, written independently of
        // the Cholesky path used by the implementation.
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let mu = DVector::zeros(2);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let det = 4.0f64;
        let quad: f64 = 1.0 * 1.0 / 1.0 + 0.0 * 0.0 / 4.0;
        let oracle = (2.0 * PI).powi(-1) * det.powf(-0.5) * (-0.5 * quad).exp();
        let p = mgd_pdf(&x, &mu, &sigma).unwrap();
        assert_relative_eq!(p, oracle, max_relative = 1e-12);
    }

    #[test]
    fn singular_covariance_is_reported() {
        // Exactly rank-deficient with a zero diagonal: jitter cannot rescue a
        // matrix with a negative eigenvalue of the same magnitude.
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = mgd_pdf(&DVector::zeros(2), &DVector::zeros(2), &sigma);
        assert!(matches!(err, Err(GmmError::SingularCovariance { .. })));
    }

    #[test]
    fn mixture_degenerates_to_single_component() {
        let model = single_model(2);
        let x = DVector::from_vec(vec![0.3, -0.4]);
        let a = gmm_pdf(&x, &model).unwrap();
        let b = mgd_pdf(&x, &model.means[0], &model.covariances[0]).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn equal_duplicate_components_match_single_density() {
        let single = single_model(2);
        let dup = GmmModel {
            dim_labels: single.dim_labels.clone(),
            weights: vec![0.5, 0.5],
            means: vec![single.means[0].clone(), single.means[0].clone()],
            covariances: vec![single.covariances[0].clone(), single.covariances[0].clone()],
        };
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert_relative_eq!(
            gmm_pdf(&x, &dup).unwrap(),
            gmm_pdf(&x, &single).unwrap(),
            max_relative = 1e-13
        );
    }

    fn random_model(k: usize, d: usize, rng: &mut ChaCha8Rng) -> GmmModel {
        let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let means = (0..k)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0)))
            .collect();
        let covariances = (0..k)
            .map(|_| {
                let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
                &a * a.transpose() + DMatrix::identity(d, d) * 0.5
            })
            .collect();
        GmmModel {
            dim_labels: (0..d).map(|i| format!("x{i}")).collect(),
            weights,
            means,
            covariances,
        }
    }

    #[test]
    fn mixture_matches_term_by_term_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = random_model(3, 2, &mut rng);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
            let mut oracle = 0.0;
            for k in 0..3 {
                oracle += model.weights[k]
                    * mgd_pdf(&x, &model.means[k], &model.covariances[k]).unwrap();
            }
            let got = gmm_pdf(&x, &model).unwrap();
            assert_relative_eq!(got, oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_likelihood_single_point_at_mode() {
        let model = single_model(2);
        let ll = log_likelihood(&[DVector::zeros(2)], &model).unwrap();
        assert_relative_eq!(ll, -(2.0 * PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_likelihood_additivity_on_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = random_model(2, 2, &mut rng);
        let data: Vec<_> = (0..20)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0)))
            .collect();
        let mut doubled = data.clone();
        doubled.extend(data.iter().cloned());
        let a = log_likelihood(&data, &model).unwrap();
        let b = log_likelihood(&doubled, &model).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
    }

    #[test]
    fn log_likelihood_matches_naive_per_point_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = random_model(3, 2, &mut rng);
        let data: Vec<_> = (0..50)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-4.0..4.0)))
            .collect();
        let naive: f64 = data.iter().map(|x| gmm_pdf(x, &model).unwrap().ln()).sum();
        let got = log_likelihood(&data, &model).unwrap();
        assert_relative_eq!(got, naive, epsilon = 1e-10);
    }

    #[test]
    fn empty_data_is_an_error() {
        let model = single_model(1);
        assert!(matches!(log_likelihood(&[], &model), Err(GmmError::EmptyData)));
        assert!(matches!(bic_score(&[], &model), Err(GmmError::EmptyData)));
    }

    fn sample_gaussian(
        n: usize,
        mu: &[f64],
        chol_diag: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        let d = mu.len();
        (0..n)
            .map(|_| {
                DVector::from_fn(d, |i, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    mu[i] + chol_diag[i] * z
                })
            })
            .collect()
    }

    #[test]
    fn single_component_fit_recovers_closed_form_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = sample_gaussian(500, &[1.0, -2.0], &[0.7, 1.3], &mut rng);
        let (model, report) = em_fit(
            &data,
            1,
            InitStrategy::KmeansPlusPlus { restarts: 1 },
            DEFAULT_EPSILON,
            DEFAULT_MAX_ITER,
            42,
        )
        .unwrap();
        assert!(report.converged);

        // Closed-form oracle: sample mean and biased (1/n) covariance.
        let n = data.len() as f64;
        let mut mean = DVector::zeros(2);
        for x in &data {
            mean += x;
        }
        mean /= n;
        let mut cov = DMatrix::zeros(2, 2);
        for x in &data {
            let c = x - &mean;
            cov += &c * c.transpose();
        }
        cov /= n;

        for i in 0..2 {
            assert_relative_eq!(model.means[0][i], mean[i], epsilon = 1e-9);
            for j in 0..2 {
                assert_relative_eq!(model.covariances[0][(i, j)], cov[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn loglik_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = sample_gaussian(300, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
        data.extend(sample_gaussian(300, &[4.0, 4.0], &[0.5, 0.5], &mut rng));
        let (_, report) = em_fit(
            &data,
            2,
            InitStrategy::KmeansPlusPlus { restarts: 2 },
            DEFAULT_EPSILON,
            DEFAULT_MAX_ITER,
            9,
        )
        .unwrap();
        for w in report.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "log-likelihood decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn responsibilities_and_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = sample_gaussian(200, &[0.0, 1.0], &[1.0, 2.0], &mut rng);
        let (model, _) = em_fit(
            &data,
            3,
            InitStrategy::KmeansPlusPlus { restarts: 1 },
            DEFAULT_EPSILON,
            50,
            21,
        )
        .unwrap();
        let wsum: f64 = model.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12);

        let prec = precisions(&model).unwrap();
        let mut resp = vec![0.0; data.len() * 3];
        let mut pll = vec![0.0; data.len()];
        let mut scratch = vec![0.0; 2];
        let mut lw = vec![0.0; 3];
        e_step(&data, &model, &prec, &mut resp, &mut pll, &mut scratch, &mut lw);
        for t in 0..data.len() {
            let s: f64 = (0..3).map(|j| resp[t * 3 + j]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_is_deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = sample_gaussian(240, &[0.0, 0.0, 0.0], &[1.0, 0.5, 2.0], &mut rng);
        let run = || {
            em_fit(
                &data,
                2,
                InitStrategy::KmeansPlusPlus { restarts: 3 },
                DEFAULT_EPSILON,
                DEFAULT_MAX_ITER,
                77,
            )
            .unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1.iterations, r2.iterations);
        assert_eq!(r1.loglik_trace, r2.loglik_trace);
        for k in 0..2 {
            assert!(m1.weights[k] == m2.weights[k]);
            assert!(m1.means[k] == m2.means[k]);
            assert!(m1.covariances[k] == m2.covariances[k]);
        }
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let data: Vec<_> = (0..5).map(|i| vec1(i as f64)).collect();
        let err = em_fit(&data, 3, InitStrategy::default(), 1e-10, 10, 0);
        assert!(matches!(err, Err(GmmError::InsufficientData { .. })));
    }

    #[test]
    fn parameter_count_examples() {
        assert_eq!(free_parameters(10, 5), 209);
        assert_eq!(free_parameters(1, 1), 2);
    }

    #[test]
    fn bic_penalty_is_monotone_in_k_at_equal_likelihood() {
        // Two models with identical density (duplicate components) so the
        // likelihood term is exactly shared; only the penalty differs.
        let single = single_model(2);
        let dup = GmmModel {
            dim_labels: single.dim_labels.clone(),
            weights: vec![0.5, 0.5],
            means: vec![single.means[0].clone(), single.means[0].clone()],
            covariances: vec![single.covariances[0].clone(), single.covariances[0].clone()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = sample_gaussian(100, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
        let b1 = bic_score(&data, &single).unwrap();
        let b2 = bic_score(&data, &dup).unwrap();
        assert!(b1 < b2);
    }

    #[test]
    fn selection_returns_one_for_single_gaussian_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let data = sample_gaussian(800, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
        let (k, curve) = select_components(&data, 1..=4, 1, 1e-8, 200, 5).unwrap();
        assert_eq!(k, 1, "curve: {curve:?}");
    }

    #[test]
    fn mgd_pdf_integrates_to_one() {
        // 1-D trapezoid quadrature.
        let mu = vec1(0.3);
        let sigma = DMatrix::from_element(1, 1, 2.0);
        let (lo, hi, steps) = (-12.0f64, 12.0f64, 4000usize);
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += w * mgd_pdf(&vec1(x), &mu, &sigma).unwrap();
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-3, "1-D integral = {integral}");

        // 2-D grid quadrature with a correlated covariance.
        let mu2 = DVector::from_vec(vec![0.0, 0.0]);
        let sigma2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]);
        let (lo2, hi2, steps2) = (-7.0f64, 7.0f64, 220usize);
        let h2 = (hi2 - lo2) / steps2 as f64;
        let mut integral2 = 0.0;
        for i in 0..steps2 {
            for j in 0..steps2 {
                let x = DVector::from_vec(vec![
                    lo2 + h2 * (i as f64 + 0.5),
                    lo2 + h2 * (j as f64 + 0.5),
                ]);
                integral2 += mgd_pdf(&x, &mu2, &sigma2).unwrap();
            }
        }
        integral2 *= h2 * h2;
        assert!((integral2 - 1.0).abs() < 1e-3, "2-D integral = {integral2}");
    }

    #[test]
    fn model_doc_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let model = random_model(2, 3, &mut rng);
        let doc = GmmModelDoc::from_model(&model, None);
        let json = serde_json::to_string(&doc).unwrap();
        let back: GmmModelDoc = serde_json::from_str(&json).unwrap();
        let restored = back.into_model().unwrap();
        assert_eq!(model, restored);
    }
}
