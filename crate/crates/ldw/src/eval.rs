//! Metric computation (warning frequency, false-alarm rate, prediction-error
//! aggregation), cross-validated experiment orchestration over a corpus, and
//! report emission as JSON plus flat CSV tables.
//!
//! All randomness flows from one top-level seed through deterministic
//! derivation, every map is ordered, and floats are written through the
//! fixed-precision JSON formatter, so repeated runs emit identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, DataError, FoldAssignment, TraceFile};
use crate::domain::{Event, Label, VehicleGeometry, WarningConfig};
use crate::gmm::{self, BicPoint, GmmError, InitStrategy};
use crate::hmm::{self, HmmError, PdmModel};
use crate::predictor::{self, PredictError, YawRateModel};
use crate::synth::{GroundTruthLog, SynthError};
use crate::warning::{self, StrategyRegistry, WarningDecision, WarningError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("total point count is zero")]
    ZeroTotal,
    #[error("no warnings were issued; the false-alarm rate is undefined")]
    NoWarnings,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Warning(#[from] WarningError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}")]
    Context {
        context: String,
        #[source]
        source: Box<EvalError>,
    },
}

impl EvalError {
    fn with_context(self, context: impl Into<String>) -> EvalError {
        EvalError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

/// Warning frequency: fired decisions divided by total evaluated points.
pub fn warning_frequency(decisions: &[WarningDecision], total_points: usize) -> Result<f64, EvalError> {
    if total_points == 0 {
        return Err(EvalError::ZeroTotal);
    }
    let fired = decisions.iter().filter(|d| d.fired).count();
    Ok(fired as f64 / total_points as f64)
}

/// Gap (s) under which consecutive fired timesteps merge into one warning
/// event for false-alarm accounting.
pub const WARNING_EVENT_GAP: f64 = 1.0;

/// Start times of collapsed warning events: fired timesteps closer than
/// [`WARNING_EVENT_GAP`] belong to the same event.
pub fn collapse_warning_times(fired_times: &[f64]) -> Vec<f64> {
    let mut starts = Vec::new();
    let mut last: Option<f64> = None;
    for &t in fired_times {
        match last {
            Some(prev) if t - prev < WARNING_EVENT_GAP => {}
            _ => starts.push(t),
        }
        last = Some(t);
    }
    starts
}

/// Time-aligned per-sample labels used as false-alarm ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeries {
    pub t: Vec<f64>,
    pub labels: Vec<Label>,
}

impl LabelSeries {
    pub fn from_ground_truth(truth: &GroundTruthLog) -> Self {
        Self {
            t: truth.t.clone(),
            labels: truth.labels.clone(),
        }
    }

    pub fn from_event(event: &Event) -> Option<Self> {
        event.labels.as_ref().map(|labels| Self {
            t: event.points.iter().map(|p| p.t).collect(),
            labels: labels.clone(),
        })
    }

    /// Whether any sample in `[lo, hi]` carries the correction label.
    pub fn dcb_within(&self, lo: f64, hi: f64) -> bool {
        let start = self.t.partition_point(|&t| t < lo);
        self.t[start..]
            .iter()
            .zip(self.labels[start..].iter())
            .take_while(|(&t, _)| t <= hi)
            .any(|(_, &l)| l == Label::Dcb)
    }
}

/// Ground truth against which a warning is judged false.
pub enum TruthView<'a> {
    /// Labeled data: a warning at `t` is false when a correction occurs
    /// within the upcoming horizon.
    Labels(LabelSeries),
    /// Unlabeled data: a warning at `t` is false when the trace itself shows
    /// the displacement recovered above the threshold `q` steps later.
    Surrogate { event: &'a Event, q: usize },
}

impl TruthView<'_> {
    fn is_false_warning(&self, t: f64, horizon: f64) -> bool {
        match self {
            TruthView::Labels(series) => series.dcb_within(t, t + horizon),
            TruthView::Surrogate { event, q } => {
                let idx = event.points.partition_point(|p| p.t < t - 1e-9);
                match event.points.get(idx + q) {
                    Some(p) => p.dy > crate::synth::RECOVERY_THRESHOLD,
                    None => false,
                }
            }
        }
    }
}

/// False-alarm rate: false warning events over all warning events, with
/// consecutive fired timesteps collapsed first. Undefined without warnings.
pub fn false_alarm_rate(
    decisions: &[WarningDecision],
    truth: &TruthView,
    horizon: f64,
) -> Result<f64, EvalError> {
    let fired: Vec<f64> = decisions.iter().filter(|d| d.fired).map(|d| d.t).collect();
    if fired.is_empty() {
        return Err(EvalError::NoWarnings);
    }
    let events = collapse_warning_times(&fired);
    let false_count = events
        .iter()
        .filter(|&&t| truth.is_false_warning(t, horizon))
        .count();
    Ok(false_count as f64 / events.len() as f64)
}

/// EM knobs threaded through experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            epsilon: gmm::DEFAULT_EPSILON,
            max_iter: gmm::DEFAULT_MAX_ITER,
            restarts: 5,
        }
    }
}

/// Component count: fixed, or chosen per driver from a BIC sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KChoice {
    Fixed(usize),
    Select { min: usize, max: usize },
}

impl Default for KChoice {
    fn default() -> Self {
        KChoice::Fixed(10)
    }
}

/// Threshold/horizon grid for parameter sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub q: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            gamma1: vec![-0.6, -0.3, -0.05, 0.1, 0.3, 0.6],
            gamma2: vec![-0.6, -0.3, -0.05, 0.1, 0.3, 0.6],
            q: vec![5, 10, 15, 20, 25, 30],
        }
    }
}

/// Running (fired points, total points, warning events, false events)
/// tallies for one sweep cell.
type SweepTally = (SweepKey, usize, usize, usize, usize);

/// One sweep combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepKey {
    pub gamma1: f64,
    pub gamma2: f64,
    pub q: usize,
}

impl SweepGrid {
    /// All combinations with gamma1 <= gamma2, in a fixed deterministic
    /// order (q outermost).
    pub fn cells(&self) -> Vec<SweepKey> {
        let mut out = Vec::new();
        for &q in &self.q {
            for &gamma1 in &self.gamma1 {
                for &gamma2 in &self.gamma2 {
                    if gamma1 <= gamma2 {
                        out.push(SweepKey { gamma1, gamma2, q });
                    }
                }
            }
        }
        out
    }

    pub fn max_q(&self) -> usize {
        self.q.iter().copied().max().unwrap_or(0)
    }
}

/// Full experiment description. Strategies are referenced by name:
/// `basic-tlc`, `tlc-pdm`, or the name of a registered external strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub strategies: Vec<String>,
    pub warning: WarningConfig,
    pub geometry: VehicleGeometry,
    pub k: KChoice,
    pub em: EmOptions,
    pub fold_count: usize,
    pub seed: u64,
    /// Horizons (steps) for the prediction-error table.
    pub error_horizons: Vec<usize>,
    /// False-alarm look-ahead (s).
    pub far_horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

impl ExperimentConfig {
    pub fn new(corpus: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            strategies: vec!["basic-tlc".into(), "tlc-pdm".into()],
            warning: WarningConfig::default(),
            geometry: VehicleGeometry::default(),
            k: KChoice::default(),
            em: EmOptions::default(),
            fold_count: 10,
            seed: 42,
            error_horizons: vec![5, 10, 15, 20, 25, 30],
            far_horizon: 1.0,
            sweep: None,
        }
    }

    fn validate(&self, registry: &StrategyRegistry) -> Result<(), EvalError> {
        if self.strategies.is_empty() {
            return Err(EvalError::Config("strategy list is empty".into()));
        }
        for s in &self.strategies {
            if s != "basic-tlc" && s != "tlc-pdm" && !registry.contains(s) {
                return Err(EvalError::Config(format!("unknown strategy {s:?}")));
            }
        }
        if !self.warning.validate().is_ok() {
            return Err(EvalError::Config("invalid warning config".into()));
        }
        if self.fold_count < 2 {
            return Err(EvalError::Config("fold_count must be at least 2".into()));
        }
        if self.error_horizons.is_empty() {
            return Err(EvalError::Config("error_horizons is empty".into()));
        }
        if let Some(grid) = &self.sweep {
            if grid.cells().is_empty() {
                return Err(EvalError::Config("sweep grid is empty".into()));
            }
        }
        if let KChoice::Select { min, max } = self.k {
            if min == 0 || min > max {
                return Err(EvalError::Config("invalid K selection range".into()));
            }
        }
        Ok(())
    }
}

/// One driver of a loaded corpus.
pub struct CorpusDriver {
    pub driver_id: String,
    pub trace: TraceFile,
    pub truth: Option<GroundTruthLog>,
}

/// Loads every `*.csv` trace in `dir` (sorted by file name) together with
/// its optional `<stem>.truth.json` sidecar.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusDriver>, EvalError> {
    let mut csvs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| {
            EvalError::Data(DataError::Io {
                path: dir.display().to_string(),
                source: e,
            })
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(EvalError::Config(format!(
            "no .csv traces found in {}",
            dir.display()
        )));
    }
    let mut drivers = Vec::with_capacity(csvs.len());
    for path in csvs {
        let trace = dataio::parse_trace(&path)?;
        let truth_path = path.with_extension("truth.json");
        let truth = if truth_path.exists() {
            Some(crate::synth::read_ground_truth(&truth_path)?)
        } else {
            None
        };
        drivers.push(CorpusDriver {
            driver_id: trace.driver_id.clone(),
            trace,
            truth,
        });
    }
    Ok(drivers)
}

pub fn event_feature_vectors(events: &[&Event]) -> Vec<DVector<f64>> {
    events
        .iter()
        .flat_map(|e| e.points.iter())
        .map(|p| DVector::from_row_slice(&p.features()))
        .collect()
}

/// Fits the mixture on pooled event points and layers the transition matrix
/// estimated from the induced mode sequences (one per event, so transitions
/// never straddle event boundaries).
pub fn fit_driver_model(
    events: &[&Event],
    k: usize,
    em: &EmOptions,
    seed: u64,
) -> Result<(PdmModel, gmm::FitReport), EvalError> {
    let data = event_feature_vectors(events);
    let (model, report) = gmm::em_fit(
        &data,
        k,
        InitStrategy::KmeansPlusPlus {
            restarts: em.restarts,
        },
        em.epsilon,
        em.max_iter,
        seed,
    )?;
    let modes = hmm::assign_modes(&data, &model)?;
    let mut transitions: Option<hmm::TransitionMatrix> = None;
    let mut offset = 0usize;
    for event in events {
        let len = event.points.len();
        let slice = &modes[offset..offset + len];
        if slice.len() >= 2 {
            let t = hmm::estimate_transitions(slice, k)?;
            transitions = Some(match transitions {
                None => t,
                Some(prev) => merge_transitions(prev, t),
            });
        }
        offset += len;
    }
    let transitions = transitions
        .ok_or_else(|| EvalError::Config("no event long enough to estimate transitions".into()))?;
    Ok((PdmModel::new(model, transitions)?, report))
}

/// Combines per-event transfer counts into one row-normalized matrix.
fn merge_transitions(a: hmm::TransitionMatrix, b: hmm::TransitionMatrix) -> hmm::TransitionMatrix {
    let k = a.k();
    let mut counts = a.counts.clone();
    let mut totals = a.state_totals.clone();
    for i in 0..k {
        totals[i] += b.state_totals[i];
        for j in 0..k {
            counts[(i, j)] += b.counts[(i, j)];
        }
    }
    let mut entries = nalgebra::DMatrix::zeros(k, k);
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
    hmm::TransitionMatrix {
        entries,
        counts,
        state_totals: totals,
    }
}

/// Per-event evaluation output.
pub struct EventEval {
    pub points: usize,
    /// Default-config decisions per strategy name.
    pub decisions: BTreeMap<String, Vec<WarningDecision>>,
    /// (q, summed per-anchor MAE, anchor count) per requested horizon.
    pub errors: Vec<(usize, f64, usize)>,
    /// Fired times per sweep cell, parallel to the grid's `cells()` order.
    pub sweep_fired: Option<Vec<Vec<f64>>>,
}

/// Evaluates every strategy at every sample of one event, accumulating
/// prediction errors and optional sweep decisions from shared rollouts.
///
/// The filter state is warmed incrementally along the event, so the rollout
/// at each sample conditions on the event's full observable history up to
/// that sample.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_event(
    event: &Event,
    model: &PdmModel,
    geometry: &VehicleGeometry,
    cfg: &WarningConfig,
    strategies: &[String],
    registry: &StrategyRegistry,
    error_horizons: &[usize],
    sweep: Option<&SweepGrid>,
) -> Result<EventEval, EvalError> {
    let zetas = event.observables();
    let n = zetas.len();
    if n == 0 {
        return Err(EvalError::Config("event has no points".into()));
    }
    let sweep_cells = sweep.map(|g| g.cells());
    let max_q = error_horizons
        .iter()
        .copied()
        .chain(std::iter::once(cfg.q))
        .chain(sweep.map(|g| g.max_q()))
        .max()
        .expect("at least the configured q");

    let mut decisions: BTreeMap<String, Vec<WarningDecision>> = strategies
        .iter()
        .map(|s| (s.clone(), Vec::with_capacity(n)))
        .collect();
    let mut errors: Vec<(usize, f64, usize)> =
        error_horizons.iter().map(|&q| (q, 0.0, 0)).collect();
    let mut sweep_fired: Option<Vec<Vec<f64>>> =
        sweep_cells.as_ref().map(|cells| vec![Vec::new(); cells.len()]);

    let mut state = model.init_state(&zetas[0])?;
    for i in 0..n {
        if i > 0 {
            state = model.advance(&state, &zetas[i])?;
        }
        let p = &event.points[i];
        let full = predictor::predict_from_state(model, state.clone(), p, max_q, cfg.dt)?;
        let tlc = warning::compute_tlc(p, geometry)?;

        for name in strategies {
            let decision = match name.as_str() {
                "basic-tlc" => warning::basic_alarm(p.t, tlc, cfg),
                "tlc-pdm" => warning::pdm_alarm(p, &full.truncated(cfg.q), geometry, cfg)?,
                external => registry
                    .evaluate(external, p, &full.truncated(cfg.q), tlc)
                    .ok_or_else(|| EvalError::Config(format!("strategy {external:?} vanished")))?,
            };
            decisions.get_mut(name).expect("prebuilt key").push(decision);
        }

        for (q, sum, count) in errors.iter_mut() {
            if i + *q < n {
                let actual: Vec<f64> = event.points[i + 1..=i + *q].iter().map(|p| p.dy).collect();
                let mae = predictor::prediction_error(&full.truncated(*q), &actual)?;
                *sum += mae;
                *count += 1;
            }
        }

        if let (Some(cells), Some(fired)) = (sweep_cells.as_ref(), sweep_fired.as_mut()) {
            for (cell, fired_times) in cells.iter().zip(fired.iter_mut()) {
                let cell_cfg = WarningConfig {
                    gamma1: cell.gamma1,
                    gamma2: cell.gamma2,
                    q: cell.q,
                    ..*cfg
                };
                let d = warning::pdm_alarm(p, &full.truncated(cell.q), geometry, &cell_cfg)?;
                if d.fired {
                    fired_times.push(p.t);
                }
            }
        }
    }

    Ok(EventEval {
        points: n,
        decisions,
        errors,
        sweep_fired,
    })
}

// ---------------------------------------------------------------------------
// Report structures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QError {
    pub q: usize,
    pub mae: f64,
    pub anchors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFoldMetrics {
    pub strategy: String,
    pub fired_points: usize,
    pub total_points: usize,
    pub eta: f64,
    pub warning_events: usize,
    pub false_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_events: usize,
    pub test_points: usize,
    pub strategies: Vec<StrategyFoldMetrics>,
    pub errors: Vec<QError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    /// Mean of per-fold warning frequencies.
    pub eta_mean: f64,
    /// Pooled counts across folds.
    pub fired_points: usize,
    pub total_points: usize,
    pub warning_events: usize,
    pub false_events: usize,
    /// False-alarm rate from pooled event counts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far_pooled: Option<f64>,
    /// Mean and standard deviation of per-fold rates (folds with warnings).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCellReport {
    pub gamma1: f64,
    pub gamma2: f64,
    pub q: usize,
    pub fired_points: usize,
    pub total_points: usize,
    pub eta: f64,
    pub warning_events: usize,
    pub false_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverReport {
    pub driver_id: String,
    pub events: usize,
    /// Event-to-fold map, kept so the exact split can be reproduced.
    pub fold_assignment: FoldAssignment,
    pub selected_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bic_curve: Option<Vec<BicPoint>>,
    pub folds: Vec<FoldReport>,
    pub strategies: Vec<StrategySummary>,
    pub errors: Vec<QError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepCellReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub strategies: Vec<StrategySummary>,
    pub errors: Vec<QError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub fold_count: usize,
    pub warning: WarningConfig,
    pub far_horizon: f64,
    pub drivers: Vec<DriverReport>,
    pub aggregate: AggregateReport,
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

struct StrategyAccumulator {
    fired_points: usize,
    total_points: usize,
    warning_events: usize,
    false_events: usize,
    fold_etas: Vec<f64>,
    fold_fars: Vec<Option<f64>>,
}

impl StrategyAccumulator {
    fn new() -> Self {
        Self {
            fired_points: 0,
            total_points: 0,
            warning_events: 0,
            false_events: 0,
            fold_etas: Vec::new(),
            fold_fars: Vec::new(),
        }
    }

    fn absorb(&mut self, other: &StrategyAccumulator) {
        self.fired_points += other.fired_points;
        self.total_points += other.total_points;
        self.warning_events += other.warning_events;
        self.false_events += other.false_events;
        self.fold_etas.extend(other.fold_etas.iter().copied());
        self.fold_fars.extend(other.fold_fars.iter().copied());
    }

    fn summary(&self, strategy: &str) -> StrategySummary {
        let far_values: Vec<f64> = self.fold_fars.iter().filter_map(|f| *f).collect();
        let far_mean = if far_values.is_empty() {
            None
        } else {
            Some(far_values.iter().sum::<f64>() / far_values.len() as f64)
        };
        let far_std = far_mean.map(|mean| {
            let var = far_values
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / far_values.len() as f64;
            var.sqrt()
        });
        StrategySummary {
            strategy: strategy.to_string(),
            eta_mean: if self.fold_etas.is_empty() {
                0.0
            } else {
                self.fold_etas.iter().sum::<f64>() / self.fold_etas.len() as f64
            },
            fired_points: self.fired_points,
            total_points: self.total_points,
            warning_events: self.warning_events,
            false_events: self.false_events,
            far_pooled: if self.warning_events == 0 {
                None
            } else {
                Some(self.false_events as f64 / self.warning_events as f64)
            },
            far_mean,
            far_std,
        }
    }
}

fn truth_view<'a>(
    driver_truth: Option<&GroundTruthLog>,
    event: &'a Event,
    cfg: &WarningConfig,
) -> TruthView<'a> {
    if let Some(truth) = driver_truth {
        return TruthView::Labels(LabelSeries::from_ground_truth(truth));
    }
    if let Some(series) = LabelSeries::from_event(event) {
        return TruthView::Labels(series);
    }
    TruthView::Surrogate { event, q: cfg.q }
}

/// Classifies one event's collapsed warnings; returns (events, false events).
fn classify_warnings(
    decisions: &[WarningDecision],
    truth: &TruthView,
    horizon: f64,
) -> (usize, usize) {
    let fired: Vec<f64> = decisions.iter().filter(|d| d.fired).map(|d| d.t).collect();
    let starts = collapse_warning_times(&fired);
    let false_count = starts
        .iter()
        .filter(|&&t| truth.is_false_warning(t, horizon))
        .count();
    (starts.len(), false_count)
}

fn error_table(acc: &BTreeMap<usize, (f64, usize)>) -> Vec<QError> {
    acc.iter()
        .map(|(&q, &(sum, count))| QError {
            q,
            mae: if count == 0 { 0.0 } else { sum / count as f64 },
            anchors: count,
        })
        .collect()
}

/// Runs the full cross-validated experiment: per driver, extract events,
/// split folds, fit the driver model on the training folds, evaluate every
/// configured strategy and horizon on the held-out fold, and aggregate.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    registry: &StrategyRegistry,
) -> Result<Report, EvalError> {
    cfg.validate(registry)?;
    let corpus = load_corpus(&cfg.corpus)?;

    let mut driver_reports = Vec::new();
    let mut corpus_acc: BTreeMap<String, StrategyAccumulator> = cfg
        .strategies
        .iter()
        .map(|s| (s.clone(), StrategyAccumulator::new()))
        .collect();
    let mut corpus_errors: BTreeMap<usize, (f64, usize)> =
        cfg.error_horizons.iter().map(|&q| (q, (0.0, 0))).collect();

    for (driver_idx, driver) in corpus.iter().enumerate() {
        let driver_ctx = format!("driver {}", driver.driver_id);
        let events = dataio::extract_events(&driver.trace);
        let folds = dataio::cv_split(
            events.len(),
            cfg.fold_count,
            gmm::derive_seed(cfg.seed, &[0x666f_6c64, driver_idx as u64]),
        )
        .map_err(|e| EvalError::from(e).with_context(driver_ctx.clone()))?;

        // Component count: fixed, or chosen once per driver on the first
        // training split and reused across folds.
        let (selected_k, bic_curve) = match cfg.k {
            KChoice::Fixed(k) => (k, None),
            KChoice::Select { min, max } => {
                let train_events: Vec<&Event> = folds
                    .complement_indices(0)
                    .into_iter()
                    .map(|i| &events[i])
                    .collect();
                let data = event_feature_vectors(&train_events);
                let (k, curve) = gmm::select_components(
                    &data,
                    min..=max,
                    cfg.em.restarts,
                    cfg.em.epsilon,
                    cfg.em.max_iter,
                    gmm::derive_seed(cfg.seed, &[0x7365_6c6b, driver_idx as u64]),
                )
                .map_err(|e| EvalError::from(e).with_context(driver_ctx.clone()))?;
                (k, Some(curve))
            }
        };

        let mut fold_reports = Vec::new();
        let mut driver_acc: BTreeMap<String, StrategyAccumulator> = cfg
            .strategies
            .iter()
            .map(|s| (s.clone(), StrategyAccumulator::new()))
            .collect();
        let mut driver_errors: BTreeMap<usize, (f64, usize)> =
            cfg.error_horizons.iter().map(|&q| (q, (0.0, 0))).collect();
        // (cell, fired_points, total_points, warning_events, false_events)
        let mut sweep_acc: Option<Vec<SweepTally>> =
            cfg.sweep.as_ref().map(|grid| {
                grid.cells()
                    .into_iter()
                    .map(|c| (c, 0usize, 0usize, 0usize, 0usize))
                    .collect()
            });

        for fold in 0..cfg.fold_count {
            let fold_ctx = format!("{driver_ctx}, fold {fold}");
            let train_events: Vec<&Event> = folds
                .complement_indices(fold)
                .into_iter()
                .map(|i| &events[i])
                .collect();
            let test_idx = folds.fold_indices(fold);

            let (model, _fit) = fit_driver_model(
                &train_events,
                selected_k,
                &cfg.em,
                gmm::derive_seed(cfg.seed, &[0x656d_6669, driver_idx as u64, fold as u64]),
            )
            .map_err(|e| e.with_context(fold_ctx.clone()))?;

            let mut fold_points = 0usize;
            let mut fold_fired: BTreeMap<String, usize> =
                cfg.strategies.iter().map(|s| (s.clone(), 0)).collect();
            let mut fold_event_counts: BTreeMap<String, (usize, usize)> =
                cfg.strategies.iter().map(|s| (s.clone(), (0, 0))).collect();
            let mut fold_errors: BTreeMap<usize, (f64, usize)> =
                cfg.error_horizons.iter().map(|&q| (q, (0.0, 0))).collect();

            for &ei in &test_idx {
                let event = &events[ei];
                let eval = evaluate_event(
                    event,
                    &model,
                    &cfg.geometry,
                    &cfg.warning,
                    &cfg.strategies,
                    registry,
                    &cfg.error_horizons,
                    cfg.sweep.as_ref(),
                )
                .map_err(|e| e.with_context(fold_ctx.clone()))?;

                fold_points += eval.points;
                let truth = truth_view(driver.truth.as_ref(), event, &cfg.warning);
                for (name, decisions) in &eval.decisions {
                    let (events_n, false_n) = classify_warnings(decisions, &truth, cfg.far_horizon);
                    let counts = fold_event_counts.get_mut(name).expect("prebuilt");
                    counts.0 += events_n;
                    counts.1 += false_n;
                    *fold_fired.get_mut(name).expect("prebuilt") +=
                        decisions.iter().filter(|d| d.fired).count();
                }
                for (q, sum, count) in &eval.errors {
                    let acc = fold_errors.get_mut(q).expect("prebuilt");
                    acc.0 += *sum;
                    acc.1 += *count;
                }
                if let (Some(acc), Some(fired)) = (sweep_acc.as_mut(), eval.sweep_fired.as_ref()) {
                    for ((_, fired_pts, total_pts, warn_n, false_n), times) in
                        acc.iter_mut().zip(fired.iter())
                    {
                        *fired_pts += times.len();
                        *total_pts += eval.points;
                        let starts = collapse_warning_times(times);
                        *warn_n += starts.len();
                        *false_n += starts
                            .iter()
                            .filter(|&&t| truth.is_false_warning(t, cfg.far_horizon))
                            .count();
                    }
                }
            }

            let mut fold_strategy_metrics = Vec::new();
            for name in &cfg.strategies {
                let fired_points = fold_fired[name];
                let eta = if fold_points == 0 {
                    0.0
                } else {
                    fired_points as f64 / fold_points as f64
                };
                let (warning_events, false_events) = fold_event_counts[name];
                let far = if warning_events == 0 {
                    None
                } else {
                    Some(false_events as f64 / warning_events as f64)
                };
                fold_strategy_metrics.push(StrategyFoldMetrics {
                    strategy: name.clone(),
                    fired_points,
                    total_points: fold_points,
                    eta,
                    warning_events,
                    false_events,
                    far,
                });
                let acc = driver_acc.get_mut(name).expect("prebuilt");
                acc.fired_points += fired_points;
                acc.total_points += fold_points;
                acc.warning_events += warning_events;
                acc.false_events += false_events;
                acc.fold_etas.push(eta);
                acc.fold_fars.push(far);
            }

            fold_reports.push(FoldReport {
                fold,
                test_events: test_idx.len(),
                test_points: fold_points,
                strategies: fold_strategy_metrics,
                errors: error_table(&fold_errors),
            });
            for (q, (sum, count)) in fold_errors {
                let acc = driver_errors.get_mut(&q).expect("prebuilt");
                acc.0 += sum;
                acc.1 += count;
            }
        }

        let driver_summaries: Vec<StrategySummary> = cfg
            .strategies
            .iter()
            .map(|s| driver_acc[s].summary(s))
            .collect();
        for name in &cfg.strategies {
            corpus_acc
                .get_mut(name)
                .expect("prebuilt")
                .absorb(&driver_acc[name]);
        }
        for (&q, &(sum, count)) in &driver_errors {
            let acc = corpus_errors.get_mut(&q).expect("prebuilt");
            acc.0 += sum;
            acc.1 += count;
        }

        driver_reports.push(DriverReport {
            driver_id: driver.driver_id.clone(),
            events: events.len(),
            fold_assignment: folds.clone(),
            selected_k,
            bic_curve,
            folds: fold_reports,
            strategies: driver_summaries,
            errors: error_table(&driver_errors),
            sweep: sweep_acc.map(|acc| {
                acc.into_iter()
                    .map(|(cell, fired_pts, total_pts, warn_n, false_n)| SweepCellReport {
                        gamma1: cell.gamma1,
                        gamma2: cell.gamma2,
                        q: cell.q,
                        fired_points: fired_pts,
                        total_points: total_pts,
                        eta: if total_pts == 0 {
                            0.0
                        } else {
                            fired_pts as f64 / total_pts as f64
                        },
                        warning_events: warn_n,
                        false_events: false_n,
                        far: if warn_n == 0 {
                            None
                        } else {
                            Some(false_n as f64 / warn_n as f64)
                        },
                    })
                    .collect()
            }),
        });
    }

    let aggregate = AggregateReport {
        strategies: cfg
            .strategies
            .iter()
            .map(|s| corpus_acc[s].summary(s))
            .collect(),
        errors: error_table(&corpus_errors),
    };

    Ok(Report {
        seed: cfg.seed,
        fold_count: cfg.fold_count,
        warning: cfg.warning,
        far_horizon: cfg.far_horizon,
        drivers: driver_reports,
        aggregate,
    })
}

/// Writes `report.json` plus one CSV table per figure analog into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<(), EvalError> {
    let io_err = |path: &Path, e: std::io::Error| {
        EvalError::Data(DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
    };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let json_path = dir.join("report.json");
    let json = crate::jsonfmt::to_string_pretty(report)
        .map_err(|e| EvalError::Config(format!("report serialization failed: {e}")))?;
    fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;

    let mut eta = String::from("driver,strategy,fold,eta,fired_points,total_points\n");
    let mut far =
        String::from("driver,strategy,warning_events,false_events,far_pooled,far_mean,far_std\n");
    let mut err = String::from("driver,q,mae,anchors\n");
    let mut bic = String::from("driver,k,bic\n");
    let mut sweep_csv =
        String::from("driver,q,gamma1,gamma2,eta,warning_events,false_events,far\n");
    let mut any_bic = false;
    let mut any_sweep = false;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

    for d in &report.drivers {
        for f in &d.folds {
            for s in &f.strategies {
                eta.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    d.driver_id, s.strategy, f.fold, s.eta, s.fired_points, s.total_points
                ));
            }
        }
        for s in &d.strategies {
            far.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                d.driver_id,
                s.strategy,
                s.warning_events,
                s.false_events,
                opt(s.far_pooled),
                opt(s.far_mean),
                opt(s.far_std)
            ));
        }
        for e in &d.errors {
            err.push_str(&format!("{},{},{},{}\n", d.driver_id, e.q, e.mae, e.anchors));
        }
        if let Some(curve) = &d.bic_curve {
            any_bic = true;
            for p in curve {
                bic.push_str(&format!("{},{},{}\n", d.driver_id, p.k, p.bic));
            }
        }
        if let Some(cells) = &d.sweep {
            any_sweep = true;
            for c in cells {
                sweep_csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    d.driver_id,
                    c.q,
                    c.gamma1,
                    c.gamma2,
                    c.eta,
                    c.warning_events,
                    c.false_events,
                    opt(c.far)
                ));
            }
        }
    }
    for s in &report.aggregate.strategies {
        far.push_str(&format!(
            "ALL,{},{},{},{},{},{}\n",
            s.strategy,
            s.warning_events,
            s.false_events,
            opt(s.far_pooled),
            opt(s.far_mean),
            opt(s.far_std)
        ));
    }
    for e in &report.aggregate.errors {
        err.push_str(&format!("ALL,{},{},{}\n", e.q, e.mae, e.anchors));
    }

    let write = |name: &str, content: String| -> Result<(), EvalError> {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| io_err(&path, e))
    };
    write("eta.csv", eta)?;
    write("far.csv", far)?;
    write("error_vs_q.csv", err)?;
    if any_bic {
        write("bic_curve.csv", bic)?;
    }
    if any_sweep {
        write("sweep.csv", sweep_csv)?;
    }
    Ok(())
}
