//! Markov layer over the mixture components: mode assignment, transition
//! estimation from mode sequences, the forward mixing-weight recursion over
//! observable states, and conditional-expectation inference of the relative
//! yaw rate.
//!
//! Each mixture component doubles as one hidden mode; emissions come from
//! the trained mixture and are never re-estimated.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ObservablePoint;
use crate::gmm::{GmmError, GmmModel, GmmModelDoc, Precision};

#[derive(Debug, Error)]
pub enum HmmError {
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error("mode sequence must contain at least 2 entries, got {0}")]
    SequenceTooShort(usize),
    #[error("all forward weights vanished at step {step}")]
    NumericalUnderflow { step: usize },
    #[error("invalid model document: {0}")]
    InvalidDocument(String),
}

/// Row-stochastic transition matrix together with the raw transfer counts it
/// was estimated from.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub entries: DMatrix<f64>,
    pub counts: DMatrix<u64>,
    pub state_totals: Vec<u64>,
}

impl TransitionMatrix {
    pub fn k(&self) -> usize {
        self.state_totals.len()
    }

    /// Uniform transitions; used when no mode sequence is available.
    pub fn uniform(k: usize) -> Self {
        Self {
            entries: DMatrix::from_element(k, k, 1.0 / k as f64),
            counts: DMatrix::zeros(k, k),
            state_totals: vec![0; k],
        }
    }
}

/// Assigns `x` to the mode whose component density is largest, ties broken
/// by the lowest index. Component weights are deliberately ignored.
pub fn assign_mode(x: &DVector<f64>, gmm: &GmmModel) -> Result<usize, HmmError> {
    let mut scratch = vec![0.0; gmm.dim()];
    let mut best = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for k in 0..gmm.k() {
        let prec = Precision::new(&gmm.covariances[k], k)?;
        let ll = prec.log_pdf(x, &gmm.means[k], &mut scratch);
        if ll > best_ll {
            best_ll = ll;
            best = k;
        }
    }
    Ok(best)
}

/// Bulk mode assignment with per-component factorizations reused.
pub fn assign_modes(data: &[DVector<f64>], gmm: &GmmModel) -> Result<Vec<usize>, HmmError> {
    let prec: Vec<Precision> = gmm
        .covariances
        .iter()
        .enumerate()
        .map(|(k, s)| Precision::new(s, k))
        .collect::<Result<_, _>>()?;
    let mut scratch = vec![0.0; gmm.dim()];
    let mut modes = Vec::with_capacity(data.len());
    for x in data {
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for k in 0..gmm.k() {
            let ll = prec[k].log_pdf(x, &gmm.means[k], &mut scratch);
            if ll > best_ll {
                best_ll = ll;
                best = k;
            }
        }
        modes.push(best);
    }
    Ok(modes)
}

/// Estimates transition probabilities from a mode sequence.
///
/// `counts[i][j]` is the number of consecutive pairs (i, j); `state_totals[i]`
/// counts occurrences of `i` in every position except the last, so each
/// visited row normalizes exactly. Unvisited modes receive uniform rows.
pub fn estimate_transitions(modes: &[usize], k: usize) -> Result<TransitionMatrix, HmmError> {
    if modes.len() < 2 {
        return Err(HmmError::SequenceTooShort(modes.len()));
    }
    if let Some(&bad) = modes.iter().find(|&&m| m >= k) {
        return Err(HmmError::InvalidDocument(format!(
            "mode index {bad} out of range for k = {k}"
        )));
    }
    let mut counts = DMatrix::<u64>::zeros(k, k);
    let mut totals = vec![0u64; k];
    for w in modes.windows(2) {
        counts[(w[0], w[1])] += 1;
        totals[w[0]] += 1;
    }
    let mut entries = DMatrix::zeros(k, k);
    for i in 0..k {
        if totals[i] == 0 {
            for j in 0..k {
                entries[(i, j)] = 1.0 / k as f64;
            }
        } else {
            for j in 0..k {
                entries[(i, j)] = counts[(i, j)] as f64 / totals[i] as f64;
            }
        }
    }
    Ok(TransitionMatrix {
        entries,
        counts,
        state_totals: totals,
    })
}

/// Forward-filtered mixing weights at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub beta: Vec<f64>,
    pub t: usize,
}

/// Index split of the feature vector into the observable block and the
/// hidden (yaw-rate) coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub observable: Vec<usize>,
    pub hidden: usize,
}

impl Default for Partition {
    fn default() -> Self {
        Self {
            observable: vec![0, 1, 2, 3],
            hidden: 4,
        }
    }
}

impl Partition {
    /// The observable block must be the leading dimensions in canonical
    /// order with the hidden coordinate last, so that observable vectors
    /// index directly into [`ObservablePoint::features`].
    fn validate(&self, dim: usize) -> Result<(), HmmError> {
        let expected: Vec<usize> = (0..dim.saturating_sub(1)).collect();
        if dim == 0 || self.hidden != dim - 1 || self.observable != expected {
            return Err(HmmError::InvalidDocument(
                "partition must list the observable dimensions first and the hidden coordinate last".into(),
            ));
        }
        Ok(())
    }
}

/// Per-component blocks of the joint Gaussian needed by the forward
/// recursion and the conditional-expectation regression.
struct ComponentBlocks {
    mean_obs: DVector<f64>,
    mean_hidden: f64,
    obs_precision: Precision,
    /// Sigma^{hidden,obs} (Sigma^{obs,obs})^-1
    gain: RowDVector<f64>,
}

/// The personalized driver model: a trained mixture, a transition matrix
/// over its components, and the observable/hidden partition.
pub struct PdmModel {
    pub gmm: GmmModel,
    pub transitions: TransitionMatrix,
    pub partition: Partition,
    blocks: Vec<ComponentBlocks>,
}

impl std::fmt::Debug for PdmModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdmModel")
            .field("k", &self.gmm.k())
            .field("partition", &self.partition)
            .finish()
    }
}

impl PdmModel {
    pub fn new(gmm: GmmModel, transitions: TransitionMatrix) -> Result<Self, HmmError> {
        Self::with_partition(gmm, transitions, Partition::default())
    }

    pub fn with_partition(
        gmm: GmmModel,
        transitions: TransitionMatrix,
        partition: Partition,
    ) -> Result<Self, HmmError> {
        gmm.validate()?;
        partition.validate(gmm.dim())?;
        if transitions.k() != gmm.k() {
            return Err(HmmError::InvalidDocument(
                "transition matrix order must equal component count".into(),
            ));
        }
        let obs = &partition.observable;
        let h = partition.hidden;
        let mut blocks = Vec::with_capacity(gmm.k());
        for k in 0..gmm.k() {
            let mu = &gmm.means[k];
            let sigma = &gmm.covariances[k];
            let m = obs.len();
            let mean_obs = DVector::from_fn(m, |i, _| mu[obs[i]]);
            let sigma_oo = DMatrix::from_fn(m, m, |i, j| sigma[(obs[i], obs[j])]);
            let sigma_ho = RowDVector::from_fn(m, |_, j| sigma[(h, obs[j])]);
            let obs_precision = Precision::new(&sigma_oo, k)?;
            // gain = Sigma_ho Sigma_oo^-1, solved through the same
            // (jitter-protected) factorization the densities use.
            let gain = obs_precision.solve(&sigma_ho.transpose()).transpose();
            blocks.push(ComponentBlocks {
                mean_obs,
                mean_hidden: mu[h],
                obs_precision,
                gain,
            });
        }
        Ok(Self {
            gmm,
            transitions,
            partition,
            blocks,
        })
    }

    pub fn k(&self) -> usize {
        self.gmm.k()
    }

    fn observable_vector(&self, zeta: &ObservablePoint) -> DVector<f64> {
        let feats = zeta.features();
        DVector::from_fn(self.partition.observable.len(), |i, _| {
            // Observable indices address the full feature vector; the first
            // four canonical dimensions coincide with ObservablePoint order.
            feats[i]
        })
    }

    fn obs_log_pdf(&self, k: usize, z: &DVector<f64>, scratch: &mut [f64]) -> f64 {
        self.blocks[k]
            .obs_precision
            .log_pdf(z, &self.blocks[k].mean_obs, scratch)
    }
}

/// Initial mixing weights: component weight times the component's
/// observable-marginal density, normalized.
pub fn init_forward(zeta: &ObservablePoint, model: &PdmModel) -> Result<ForwardState, HmmError> {
    let k = model.k();
    let z = model.observable_vector(zeta);
    let mut scratch = vec![0.0; z.len()];
    let mut lw = vec![0.0; k];
    for j in 0..k {
        lw[j] = model.gmm.weights[j].ln() + model.obs_log_pdf(j, &z, &mut scratch);
    }
    let beta = normalize_log_weights(&lw, 0)?;
    Ok(ForwardState { beta, t: 0 })
}

/// One step of the forward recursion:
/// `beta'_k ∝ (sum_j beta_j T[j][k]) * N(zeta; mu_k, Sigma_k)` over the
/// observable block, normalized over k.
pub fn forward_step(
    state: &ForwardState,
    zeta: &ObservablePoint,
    model: &PdmModel,
) -> Result<ForwardState, HmmError> {
    let k = model.k();
    let z = model.observable_vector(zeta);
    let mut scratch = vec![0.0; z.len()];
    let mut lw = vec![0.0; k];
    for j in 0..k {
        let mut predicted = 0.0;
        for i in 0..k {
            predicted += state.beta[i] * model.transitions.entries[(i, j)];
        }
        lw[j] = predicted.ln() + model.obs_log_pdf(j, &z, &mut scratch);
    }
    let beta = normalize_log_weights(&lw, state.t + 1)?;
    Ok(ForwardState {
        beta,
        t: state.t + 1,
    })
}

fn normalize_log_weights(lw: &[f64], step: usize) -> Result<Vec<f64>, HmmError> {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(HmmError::NumericalUnderflow { step });
    }
    let mut beta: Vec<f64> = lw.iter().map(|&w| (w - m).exp()).collect();
    let total: f64 = beta.iter().sum();
    for b in &mut beta {
        *b /= total;
    }
    Ok(beta)
}

/// Conditional expectation of the yaw rate given the observable state,
/// mixed over modes with the current forward weights:
/// sum_k beta_k [ mu_k_hidden + gain_k (zeta - mu_k_obs) ].
pub fn infer_yaw_rate(state: &ForwardState, zeta: &ObservablePoint, model: &PdmModel) -> f64 {
    let z = model.observable_vector(zeta);
    let mut out = 0.0;
    for k in 0..model.k() {
        let b = &model.blocks[k];
        let centered = &z - &b.mean_obs;
        out += state.beta[k] * (b.mean_hidden + (&b.gain * &centered)[0]);
    }
    out
}

/// Serialization document for [`PdmModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdmModelDoc {
    pub gmm: GmmModelDoc,
    pub transitions: TransitionMatrixDoc,
    pub partition: Partition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionMatrixDoc {
    pub k: usize,
    /// Row-major probabilities.
    pub entries: Vec<f64>,
    /// Row-major raw transfer counts, retained for auditability.
    pub counts: Vec<u64>,
    pub state_totals: Vec<u64>,
}

impl PdmModelDoc {
    pub fn from_model(model: &PdmModel) -> Self {
        let k = model.k();
        let t = &model.transitions;
        Self {
            gmm: GmmModelDoc::from_model(&model.gmm, None),
            transitions: TransitionMatrixDoc {
                k,
                entries: t.entries.row_iter().flat_map(|r| r.iter().cloned().collect::<Vec<_>>()).collect(),
                counts: t.counts.row_iter().flat_map(|r| r.iter().cloned().collect::<Vec<_>>()).collect(),
                state_totals: t.state_totals.clone(),
            },
            partition: model.partition.clone(),
        }
    }

    pub fn into_model(self) -> Result<PdmModel, HmmError> {
        let gmm = self.gmm.into_model()?;
        let k = self.transitions.k;
        if self.transitions.entries.len() != k * k
            || self.transitions.counts.len() != k * k
            || self.transitions.state_totals.len() != k
        {
            return Err(HmmError::InvalidDocument("transition arrays disagree with k".into()));
        }
        let transitions = TransitionMatrix {
            entries: DMatrix::from_row_slice(k, k, &self.transitions.entries),
            counts: DMatrix::from_row_slice(k, k, &self.transitions.counts),
            state_totals: self.transitions.state_totals,
        };
        for i in 0..k {
            let row: f64 = (0..k).map(|j| transitions.entries[(i, j)]).sum();
            if (row - 1.0).abs() > 1e-9 {
                return Err(HmmError::InvalidDocument(format!("row {i} sums to {row}")));
            }
        }
        PdmModel::with_partition(gmm, transitions, self.partition)
    }
}
