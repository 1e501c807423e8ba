//! Command-line entry point: trace generation, event extraction, model
//! training, path prediction, experiment evaluation, and threshold sweeps.
//!
//! Every flag may also be supplied by a JSON config file (`--config`); flags
//! override config values. `LDW_SEED` is the seed fallback when neither is
//! given. All outputs are byte-identical across reruns with the same inputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataio;
use crate::domain::{Event, VehicleGeometry, WarningConfig, DEFAULT_LANE_WIDTH};
use crate::eval::{self, EmOptions, ExperimentConfig, KChoice, SweepGrid};
use crate::gmm::{self, GmmModelDoc};
use crate::hmm::PdmModelDoc;
use crate::predictor::{self, PredictionRequest};
use crate::synth::{self, DriverProfile};
use crate::warning::StrategyRegistry;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "ldw",
    version,
    about = "Personalized driver modeling and lane-departure warning evaluation",
    propagate_version = true
)]
struct Cli {
    /// JSON config file; keys are long flag names, flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus (traces + ground truth + manifest).
    Generate(GenerateArgs),
    /// Extract near-boundary events from a trace file or corpus directory.
    Extract(ExtractArgs),
    /// Train a personalized driver model from events or a corpus.
    Train(TrainArgs),
    /// Predict the lateral path at one anchor sample of an event.
    Predict(PredictArgs),
    /// Run the cross-validated strategy comparison and write a report.
    Evaluate(EvaluateArgs),
    /// Evaluate warning grids over (gamma1, gamma2, q).
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output corpus directory.
    #[arg(long = "out", value_name = "DIR")]
    out: Option<PathBuf>,
    /// JSON file with an array of driver profiles; defaults to a built-in
    /// 10-driver population.
    #[arg(long, value_name = "FILE")]
    profiles: Option<PathBuf>,
    /// Trace duration per driver (s).
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
    /// Lane width (m).
    #[arg(long = "lane-width", value_name = "M")]
    lane_width: Option<f64>,
    /// Per-step lateral process noise (m) applied to every profile; breaks
    /// the exact point-mass kinematics to stress-test prediction.
    #[arg(long = "kinematics-noise", value_name = "M")]
    kinematics_noise: Option<f64>,
    /// Master seed for the built-in profile population.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Trace CSV file or directory of traces.
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    /// Output events JSON file.
    #[arg(long = "out", value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory or events JSON file.
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    /// Keep only events of this driver.
    #[arg(long, value_name = "ID")]
    driver: Option<String>,
    /// Mixture component count.
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    /// Choose K by information-criterion sweep, e.g. `--select-k 1..15`.
    #[arg(long = "select-k", value_name = "MIN..MAX")]
    select_k: Option<String>,
    /// Output model JSON file.
    #[arg(long = "out", value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// EM convergence tolerance.
    #[arg(long, value_name = "EPS")]
    epsilon: Option<f64>,
    /// EM iteration cap.
    #[arg(long = "max-iter", value_name = "N")]
    max_iter: Option<usize>,
    /// Independent EM restarts (best final likelihood kept).
    #[arg(long, value_name = "N")]
    restarts: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model JSON file.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Events JSON file.
    #[arg(long, value_name = "FILE")]
    event: Option<PathBuf>,
    /// Event index within the file.
    #[arg(long, value_name = "N")]
    index: Option<usize>,
    /// Anchor sample index within the event; defaults to the midpoint.
    #[arg(long = "at", value_name = "N")]
    at: Option<usize>,
    /// Prediction step count.
    #[arg(long, value_name = "Q")]
    q: Option<usize>,
    /// Discretization step (s).
    #[arg(long, value_name = "S")]
    dt: Option<f64>,
    /// Output CSV file; stdout when omitted.
    #[arg(long = "out", value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Corpus directory.
    #[arg(long = "in", value_name = "DIR")]
    input: Option<PathBuf>,
    /// Output report directory.
    #[arg(long = "out", value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Cross-validation fold count.
    #[arg(long, value_name = "N")]
    folds: Option<usize>,
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    #[arg(long = "select-k", value_name = "MIN..MAX")]
    select_k: Option<String>,
    /// TLC threshold tau (s).
    #[arg(long, value_name = "S")]
    tau: Option<f64>,
    /// Crossing-depth threshold (m).
    #[arg(long, value_name = "M", allow_negative_numbers = true)]
    gamma1: Option<f64>,
    /// Recovery threshold (m).
    #[arg(long, value_name = "M", allow_negative_numbers = true)]
    gamma2: Option<f64>,
    /// Prediction step count.
    #[arg(long, value_name = "Q")]
    q: Option<usize>,
    /// Discretization step (s).
    #[arg(long, value_name = "S")]
    dt: Option<f64>,
    /// False-alarm look-ahead horizon (s).
    #[arg(long, value_name = "S")]
    horizon: Option<f64>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    strategies: Option<Vec<String>>,
    #[arg(long, value_name = "EPS")]
    epsilon: Option<f64>,
    #[arg(long = "max-iter", value_name = "N")]
    max_iter: Option<usize>,
    #[arg(long, value_name = "N")]
    restarts: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated gamma1 grid (m).
    #[arg(long = "gamma1-grid", value_delimiter = ',', value_name = "LIST", allow_hyphen_values = true)]
    gamma1_grid: Option<Vec<f64>>,
    /// Comma-separated gamma2 grid (m).
    #[arg(long = "gamma2-grid", value_delimiter = ',', value_name = "LIST", allow_hyphen_values = true)]
    gamma2_grid: Option<Vec<f64>>,
    /// Comma-separated q grid.
    #[arg(long = "q-grid", value_delimiter = ',', value_name = "LIST")]
    q_grid: Option<Vec<usize>>,
}

/// Values read from the `--config` JSON document.
struct ConfigFile {
    map: serde_json::Map<String, serde_json::Value>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let map = match path {
            None => serde_json::Map::new(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::new(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .map_err(|e| CliError::new(format!("bad config {}: {e}", p.display())))?
                    .as_object()
                    .cloned()
                    .ok_or_else(|| {
                        CliError::new(format!("config {} must be a JSON object", p.display()))
                    })?
            }
        };
        Ok(Self { map })
    }

    fn f64(&self, key: &str) -> Option<f64> {
        self.map.get(key).and_then(|v| v.as_f64())
    }

    fn u64(&self, key: &str) -> Option<u64> {
        self.map.get(key).and_then(|v| v.as_u64())
    }

    fn usize(&self, key: &str) -> Option<usize> {
        self.u64(key).map(|v| v as usize)
    }

    fn string(&self, key: &str) -> Option<String> {
        self.map.get(key).and_then(|v| v.as_str()).map(|s| s.to_string())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.string(key).map(PathBuf::from)
    }

    fn string_list(&self, key: &str) -> Option<Vec<String>> {
        match self.map.get(key) {
            Some(serde_json::Value::String(s)) => {
                Some(s.split(',').map(|x| x.trim().to_string()).collect())
            }
            Some(serde_json::Value::Array(items)) => Some(
                items
                    .iter()
                    .filter_map(|v| v.as_str().map(|s| s.to_string()))
                    .collect(),
            ),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    message: String,
}

impl CliError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn chain<E: std::error::Error>(err: E) -> CliError {
    let mut message = err.to_string();
    let mut source = err.source();
    while let Some(s) = source {
        message.push_str(": ");
        message.push_str(&s.to_string());
        source = s.source();
    }
    CliError::new(message)
}

fn env_seed() -> Option<u64> {
    std::env::var("LDW_SEED").ok().and_then(|s| s.parse().ok())
}

fn resolve_seed(flag: Option<u64>, cfg: &ConfigFile) -> u64 {
    flag.or_else(|| cfg.u64("seed"))
        .or_else(env_seed)
        .unwrap_or(DEFAULT_SEED)
}

fn parse_k_range(s: &str) -> Result<(usize, usize), CliError> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| CliError::new(format!("expected MIN..MAX, got {s:?}")))?;
    let min = lo
        .trim()
        .parse()
        .map_err(|_| CliError::new(format!("bad K range start {lo:?}")))?;
    let max = hi
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|_| CliError::new(format!("bad K range end {hi:?}")))?;
    if min == 0 || min > max {
        return Err(CliError::new(format!("invalid K range {s:?}")));
    }
    Ok((min, max))
}

fn require<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::new(format!("missing required {what}")))
}

/// Runs the CLI; returns the process exit code (0 success, 1 data/model
/// errors, 2 usage errors).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version as "errors" with exit code 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(args) => generate(args, &cfg),
        Command::Extract(args) => extract(args, &cfg),
        Command::Train(args) => train(args, &cfg),
        Command::Predict(args) => predict(args, &cfg),
        Command::Evaluate(args) => evaluate(args.exp, &cfg, None),
        Command::Sweep(args) => {
            let grid = SweepGrid {
                gamma1: args
                    .gamma1_grid
                    .or_else(|| {
                        cfg.string("gamma1-grid")
                            .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
                    })
                    .unwrap_or_else(|| SweepGrid::default().gamma1),
                gamma2: args
                    .gamma2_grid
                    .or_else(|| {
                        cfg.string("gamma2-grid")
                            .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
                    })
                    .unwrap_or_else(|| SweepGrid::default().gamma2),
                q: args
                    .q_grid
                    .or_else(|| {
                        cfg.string("q-grid")
                            .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
                    })
                    .unwrap_or_else(|| SweepGrid::default().q),
            };
            evaluate(args.exp, &cfg, Some(grid))
        }
    }
}

fn generate(args: GenerateArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let out = require(args.out.or_else(|| cfg.path("out")), "--out directory")?;
    let seed = resolve_seed(args.seed, cfg);
    let duration = args.duration.or_else(|| cfg.f64("duration")).unwrap_or(1800.0);
    let lane_width = args
        .lane_width
        .or_else(|| cfg.f64("lane-width"))
        .unwrap_or(DEFAULT_LANE_WIDTH);
    let mut profiles: Vec<DriverProfile> = match args.profiles.or_else(|| cfg.path("profiles")) {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(format!("bad profiles {}: {e}", path.display())))?
        }
        None => synth::default_profiles(seed),
    };
    if let Some(noise) = args.kinematics_noise.or_else(|| cfg.f64("kinematics-noise")) {
        for p in &mut profiles {
            p.kinematics_noise_std = noise;
        }
    }
    let manifest = synth::generate_corpus(&profiles, duration, lane_width, &out).map_err(chain)?;
    println!(
        "wrote {} trace/truth pairs and manifest.json to {}",
        manifest.profiles.len(),
        out.display()
    );
    Ok(())
}

fn load_traces(input: &Path) -> Result<Vec<dataio::TraceFile>, CliError> {
    if input.is_dir() {
        let mut csvs: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| CliError::new(format!("cannot read {}: {e}", input.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
            .collect();
        csvs.sort();
        if csvs.is_empty() {
            return Err(CliError::new(format!(
                "no .csv traces in {}",
                input.display()
            )));
        }
        csvs.iter()
            .map(|p| dataio::parse_trace(p).map_err(chain))
            .collect()
    } else {
        Ok(vec![dataio::parse_trace(input).map_err(chain)?])
    }
}

fn extract(args: ExtractArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let input = require(args.input.or_else(|| cfg.path("in")), "--in path")?;
    let out = args
        .out
        .or_else(|| cfg.path("out"))
        .unwrap_or_else(|| PathBuf::from("events.json"));
    let traces = load_traces(&input)?;
    let mut events = Vec::new();
    for trace in &traces {
        events.extend(dataio::extract_events(trace));
    }
    dataio::write_events(&events, &out).map_err(chain)?;
    println!(
        "extracted {} events from {} trace(s) into {}",
        events.len(),
        traces.len(),
        out.display()
    );
    Ok(())
}

fn load_events(input: &Path, driver: Option<&str>) -> Result<Vec<Event>, CliError> {
    let mut events = if input.is_dir() || input.extension().is_some_and(|e| e == "csv") {
        let traces = load_traces(input)?;
        traces
            .iter()
            .flat_map(dataio::extract_events)
            .collect::<Vec<_>>()
    } else {
        dataio::read_events(input).map_err(chain)?
    };
    if let Some(id) = driver {
        events.retain(|e| e.driver_id == id);
    }
    Ok(events)
}

fn train(args: TrainArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let input = require(args.input.or_else(|| cfg.path("in")), "--in path")?;
    let out = require(args.out.or_else(|| cfg.path("out")), "--out file")?;
    let seed = resolve_seed(args.seed, cfg);
    let driver = args.driver.or_else(|| cfg.string("driver"));
    let em = EmOptions {
        epsilon: args
            .epsilon
            .or_else(|| cfg.f64("epsilon"))
            .unwrap_or(gmm::DEFAULT_EPSILON),
        max_iter: args
            .max_iter
            .or_else(|| cfg.usize("max-iter"))
            .unwrap_or(gmm::DEFAULT_MAX_ITER),
        restarts: args.restarts.or_else(|| cfg.usize("restarts")).unwrap_or(5),
    };

    let events = load_events(&input, driver.as_deref())?;
    if events.is_empty() {
        return Err(CliError::new("no events to train on"));
    }
    let refs: Vec<&Event> = events.iter().collect();
    let data = eval::event_feature_vectors(&refs);

    let select = match args.select_k.or_else(|| cfg.string("select-k")) {
        Some(ref s) => Some(parse_k_range(s)?),
        None => None,
    };
    let k = match select {
        Some((min, max)) => {
            let (k, curve) = gmm::select_components(
                &data,
                min..=max,
                em.restarts,
                em.epsilon,
                em.max_iter,
                gmm::derive_seed(seed, &[0x7365_6c6b]),
            )
            .map_err(chain)?;
            for p in &curve {
                println!("K={:<3} BIC={:.3}", p.k, p.bic);
            }
            println!("selected K={k}");
            k
        }
        None => args.k.or_else(|| cfg.usize("k")).unwrap_or(10),
    };

    let (model, report) = eval::fit_driver_model(&refs, k, &em, seed).map_err(chain)?;
    let mut doc = PdmModelDoc::from_model(&model);
    doc.gmm = GmmModelDoc::from_model(&model.gmm, Some(report.clone()));
    let json = crate::jsonfmt::to_string_pretty(&doc)
        .map_err(|e| CliError::new(format!("serialization failed: {e}")))?;
    fs::write(&out, json).map_err(|e| CliError::new(format!("cannot write {}: {e}", out.display())))?;
    println!(
        "trained K={k} model on {} events ({} points), {} EM iterations, loglik {:.6}; wrote {}",
        events.len(),
        data.len(),
        report.iterations,
        report.loglik_trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn predict(args: PredictArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let model_path = require(args.model.or_else(|| cfg.path("model")), "--model file")?;
    let event_path = require(args.event.or_else(|| cfg.path("event")), "--event file")?;
    let q = args.q.or_else(|| cfg.usize("q")).unwrap_or(10);
    let dt = args.dt.or_else(|| cfg.f64("dt")).unwrap_or(0.1);
    let index = args.index.or_else(|| cfg.usize("index")).unwrap_or(0);

    let text = fs::read_to_string(&model_path)
        .map_err(|e| CliError::new(format!("cannot read {}: {e}", model_path.display())))?;
    let doc: PdmModelDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::new(format!("bad model {}: {e}", model_path.display())))?;
    let model = doc.into_model().map_err(chain)?;

    let events = dataio::read_events(&event_path).map_err(chain)?;
    let event = events
        .get(index)
        .ok_or_else(|| CliError::new(format!("event index {index} out of range (file has {})", events.len())))?;
    let anchor = args
        .at
        .or_else(|| cfg.usize("at"))
        .unwrap_or(event.points.len() / 2);
    if anchor >= event.points.len() {
        return Err(CliError::new(format!(
            "anchor {anchor} out of range (event has {} samples)",
            event.points.len()
        )));
    }

    let request = PredictionRequest {
        history: event.points[..=anchor].iter().map(|p| p.observable()).collect(),
        current: event.points[anchor],
        q,
        dt,
    };
    let path = predictor::predict_path(&request, &model).map_err(chain)?;

    let mut csv = String::from("step,t,dy_hat,psi_hat,psidot_hat,dy_actual\n");
    for i in 0..q {
        let t = event.points[anchor].t + (i as f64 + 1.0) * dt;
        let actual = event
            .points
            .get(anchor + 1 + i)
            .map(|p| p.dy.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            t,
            path.dy_hat[i],
            path.psi_hat[i],
            path.psidot_hat[i],
            actual
        ));
    }
    match args.out.or_else(|| cfg.path("out")) {
        Some(out) => {
            fs::write(&out, csv)
                .map_err(|e| CliError::new(format!("cannot write {}: {e}", out.display())))?;
            println!("wrote {q}-step prediction to {}", out.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn evaluate(args: ExperimentArgs, cfg: &ConfigFile, sweep: Option<SweepGrid>) -> Result<(), CliError> {
    let input = require(args.input.or_else(|| cfg.path("in")), "--in corpus directory")?;
    let out = require(args.out.or_else(|| cfg.path("out")), "--out report directory")?;
    let seed = resolve_seed(args.seed, cfg);

    let k = match args.select_k.or_else(|| cfg.string("select-k")) {
        Some(ref s) => {
            let (min, max) = parse_k_range(s)?;
            KChoice::Select { min, max }
        }
        None => KChoice::Fixed(args.k.or_else(|| cfg.usize("k")).unwrap_or(10)),
    };

    let warning = WarningConfig {
        tau: args.tau.or_else(|| cfg.f64("tau")).unwrap_or(1.0),
        gamma1: args.gamma1.or_else(|| cfg.f64("gamma1")).unwrap_or(-0.05),
        gamma2: args.gamma2.or_else(|| cfg.f64("gamma2")).unwrap_or(0.1),
        q: args.q.or_else(|| cfg.usize("q")).unwrap_or(10),
        dt: args.dt.or_else(|| cfg.f64("dt")).unwrap_or(0.1),
    };

    let experiment = ExperimentConfig {
        corpus: input,
        strategies: args
            .strategies
            .or_else(|| cfg.string_list("strategies"))
            .unwrap_or_else(|| vec!["basic-tlc".into(), "tlc-pdm".into()]),
        warning,
        geometry: VehicleGeometry::default(),
        k,
        em: EmOptions {
            epsilon: args
                .epsilon
                .or_else(|| cfg.f64("epsilon"))
                .unwrap_or(gmm::DEFAULT_EPSILON),
            max_iter: args
                .max_iter
                .or_else(|| cfg.usize("max-iter"))
                .unwrap_or(gmm::DEFAULT_MAX_ITER),
            restarts: args.restarts.or_else(|| cfg.usize("restarts")).unwrap_or(5),
        },
        fold_count: args.folds.or_else(|| cfg.usize("folds")).unwrap_or(10),
        seed,
        error_horizons: vec![5, 10, 15, 20, 25, 30],
        far_horizon: args.horizon.or_else(|| cfg.f64("horizon")).unwrap_or(1.0),
        sweep,
    };

    let registry = StrategyRegistry::new();
    let report = eval::run_experiment(&experiment, &registry).map_err(chain)?;
    eval::write_report(&report, &out).map_err(chain)?;

    for s in &report.aggregate.strategies {
        let far = s
            .far_pooled
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "n/a".to_string());
        println!(
            "{}: eta={:.4} warnings={} false={} far={}",
            s.strategy, s.eta_mean, s.warning_events, s.false_events, far
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}
