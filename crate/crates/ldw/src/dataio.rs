//! Trace file parsing, near-boundary event extraction, and fold assignment
//! for cross-validated experiments.
//!
//! Trace CSV format: header `t,v,psi,rho,dy,psidot[,turn_signal,lane_width,label]`,
//! UTF-8, `.` decimal separator, one row per 0.1 s sample.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_point, DrivingPoint, Event, Label, DEFAULT_LANE_WIDTH, MAX_MODEL_CURVATURE, SAMPLE_DT,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}, column {column}: {reason}")]
    ParseError {
        line: usize,
        column: String,
        reason: String,
    },
    #[error("non-monotonic time at line {line}: {prev} followed by {next}")]
    NonMonotonicTime { line: usize, prev: f64, next: f64 },
    #[error("need at least {fold_count} events for {fold_count} folds, got {events}")]
    TooFewEvents { events: usize, fold_count: usize },
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// A parsed trace: mandatory signal columns plus the optional per-row
/// turn-signal flag, lane width, and behavior label.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub source: String,
    pub driver_id: String,
    pub points: Vec<DrivingPoint>,
    pub turn_signal: Option<Vec<bool>>,
    pub lane_width: Option<Vec<f64>>,
    pub labels: Option<Vec<Label>>,
}

/// Case-point threshold: samples at or under this boundary distance anchor
/// an event (m). Crossed samples (dy < 0) satisfy it automatically.
pub const CASE_DY_THRESHOLD: f64 = 0.5;

/// Half-width of the extraction window around case points (samples at 10 Hz).
pub const WINDOW_HALF_SAMPLES: usize = 150;

/// Minimum number of samples for a kept event (15 s plus the anchor sample).
pub const MIN_EVENT_SAMPLES: usize = 151;

/// Tolerance around the nominal 3.7 m lane width (m).
pub const LANE_WIDTH_TOLERANCE: f64 = 0.2;

/// Terminal offsets within this distance of an adjacent lane's center mark a
/// lane change (m).
pub const LANE_CHANGE_TOLERANCE: f64 = 0.3;

/// Reads and validates a trace CSV from `path`. The driver id defaults to
/// the file stem.
pub fn parse_trace(path: &Path) -> Result<TraceFile, DataError> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    let driver_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string());
    parse_trace_str(&text, &path.display().to_string(), &driver_id)
}

/// Parses trace CSV content. `source` and `driver_id` become provenance on
/// extracted events.
pub fn parse_trace_str(
    text: &str,
    source: &str,
    driver_id: &str,
) -> Result<TraceFile, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| DataError::Invalid(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = ["t", "v", "psi", "rho", "dy", "psidot"];
    let mut required_idx = Vec::with_capacity(required.len());
    for name in required {
        match col(name) {
            Some(i) => required_idx.push(i),
            None => {
                return Err(DataError::ParseError {
                    line: 1,
                    column: name.to_string(),
                    reason: "missing required column".to_string(),
                })
            }
        }
    }
    let turn_idx = col("turn_signal");
    let width_idx = col("lane_width");
    let label_idx = col("label");

    let mut points = Vec::new();
    let mut turn = turn_idx.map(|_| Vec::new());
    let mut width = width_idx.map(|_| Vec::new());
    let mut labels = label_idx.map(|_| Vec::new());

    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2; // header is line 1
        let record = record.map_err(|e| DataError::ParseError {
            line,
            column: String::new(),
            reason: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| -> Result<f64, DataError> {
            record
                .get(idx)
                .ok_or_else(|| DataError::ParseError {
                    line,
                    column: name.to_string(),
                    reason: "missing field".to_string(),
                })?
                .parse::<f64>()
                .map_err(|e| DataError::ParseError {
                    line,
                    column: name.to_string(),
                    reason: e.to_string(),
                })
        };
        let p = DrivingPoint {
            t: field(required_idx[0], "t")?,
            v: field(required_idx[1], "v")?,
            psi: field(required_idx[2], "psi")?,
            rho: field(required_idx[3], "rho")?,
            dy: field(required_idx[4], "dy")?,
            psidot: field(required_idx[5], "psidot")?,
        };
        let check = validate_point(&p);
        if !check.is_ok() {
            return Err(DataError::ParseError {
                line,
                column: String::new(),
                reason: check.violations().join(", "),
            });
        }
        if let Some(prev) = points.last() {
            let prev: &DrivingPoint = prev;
            if p.t <= prev.t {
                return Err(DataError::NonMonotonicTime {
                    line,
                    prev: prev.t,
                    next: p.t,
                });
            }
            if (p.t - prev.t - SAMPLE_DT).abs() > 1e-6 {
                return Err(DataError::ParseError {
                    line,
                    column: "t".to_string(),
                    reason: format!(
                        "expected {SAMPLE_DT} s sampling interval, got {}",
                        p.t - prev.t
                    ),
                });
            }
        }
        points.push(p);

        if let (Some(idx), Some(v)) = (turn_idx, turn.as_mut()) {
            let raw = record.get(idx).unwrap_or("");
            let flag = match raw {
                "1" | "true" | "TRUE" => true,
                "0" | "false" | "FALSE" | "" => false,
                other => {
                    return Err(DataError::ParseError {
                        line,
                        column: "turn_signal".to_string(),
                        reason: format!("cannot parse {other:?} as flag"),
                    })
                }
            };
            v.push(flag);
        }
        if let (Some(idx), Some(v)) = (width_idx, width.as_mut()) {
            v.push(field(idx, "lane_width")?);
        }
        if let (Some(idx), Some(v)) = (label_idx, labels.as_mut()) {
            let raw = record.get(idx).unwrap_or("");
            let label = match raw {
                "LDB" => Label::Ldb,
                "DCB" => Label::Dcb,
                "NONE" | "" => Label::None,
                other => {
                    return Err(DataError::ParseError {
                        line,
                        column: "label".to_string(),
                        reason: format!("unknown label {other:?}"),
                    })
                }
            };
            v.push(label);
        }
    }

    Ok(TraceFile {
        source: source.to_string(),
        driver_id: driver_id.to_string(),
        points,
        turn_signal: turn,
        lane_width: width,
        labels,
    })
}

fn is_case_point(p: &DrivingPoint) -> bool {
    p.dy <= CASE_DY_THRESHOLD
}

/// Extracts near-boundary events from a trace.
///
/// Applies, in order: case-point detection (boundary distance at or under
/// 0.5 m), ±15 s windows around case points with overlaps merged, removal of
/// high-curvature points, removal of points outside the nominal lane width,
/// rejection of events with the turn signal on or whose terminal offset sits
/// at an adjacent lane's center, a trim to ±15 s around each fragment's own
/// case points, and finally the 15 s minimum duration.
pub fn extract_events(trace: &TraceFile) -> Vec<Event> {
    let n = trace.points.len();
    if n == 0 {
        return Vec::new();
    }

    // Case points and merged windows.
    let mut windows: Vec<(usize, usize)> = Vec::new();
    for (i, p) in trace.points.iter().enumerate() {
        if is_case_point(p) {
            let lo = i.saturating_sub(WINDOW_HALF_SAMPLES);
            let hi = (i + WINDOW_HALF_SAMPLES).min(n - 1);
            match windows.last_mut() {
                Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
                _ => windows.push((lo, hi)),
            }
        }
    }

    let keep = |i: usize| -> bool {
        if trace.points[i].rho.abs() > MAX_MODEL_CURVATURE {
            return false;
        }
        if let Some(widths) = &trace.lane_width {
            if (widths[i] - DEFAULT_LANE_WIDTH).abs() > LANE_WIDTH_TOLERANCE {
                return false;
            }
        }
        true
    };

    let mut events = Vec::new();
    for (lo, hi) in windows {
        // Point filters fragment the window into contiguous runs.
        let mut run_start: Option<usize> = None;
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for i in lo..=hi {
            if keep(i) {
                if run_start.is_none() {
                    run_start = Some(i);
                }
            } else if let Some(s) = run_start.take() {
                runs.push((s, i - 1));
            }
        }
        if let Some(s) = run_start {
            runs.push((s, hi));
        }

        for (s, e) in runs {
            // Trim to ±15 s around the fragment's own case points so that
            // re-extracting an event reproduces it exactly.
            let case_idx: Vec<usize> =
                (s..=e).filter(|&i| is_case_point(&trace.points[i])).collect();
            let (Some(&cmin), Some(&cmax)) = (case_idx.first(), case_idx.last()) else {
                continue;
            };
            let s = s.max(cmin.saturating_sub(WINDOW_HALF_SAMPLES));
            let e = e.min(cmax + WINDOW_HALF_SAMPLES);

            if e - s + 1 < MIN_EVENT_SAMPLES {
                continue;
            }
            if let Some(flags) = &trace.turn_signal {
                if flags[s..=e].iter().any(|&f| f) {
                    continue;
                }
            }
            // Lane-change heuristic on the terminal sample.
            let terminal = &trace.points[e];
            let w = trace
                .lane_width
                .as_ref()
                .map(|ws| ws[e])
                .unwrap_or(DEFAULT_LANE_WIDTH);
            if (terminal.dy + w / 2.0).abs() <= LANE_CHANGE_TOLERANCE {
                continue;
            }

            events.push(Event {
                driver_id: trace.driver_id.clone(),
                source: trace.source.clone(),
                row_range: (s, e),
                points: trace.points[s..=e].to_vec(),
                labels: trace.labels.as_ref().map(|ls| ls[s..=e].to_vec()),
            });
        }
    }
    events
}

/// Assignment of events to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_count: usize,
    /// `assignment[i]` is the fold of the i-th event in the input order.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// Indices of events in the given fold.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of events outside the given fold.
    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Seeded shuffle followed by round-robin assignment: folds partition the
/// events and sizes differ by at most one.
pub fn cv_split(event_count: usize, fold_count: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if fold_count == 0 || event_count < fold_count {
        return Err(DataError::TooFewEvents {
            events: event_count,
            fold_count,
        });
    }
    let mut order: Vec<usize> = (0..event_count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; event_count];
    for (pos, &event) in order.iter().enumerate() {
        assignment[event] = pos % fold_count;
    }
    Ok(FoldAssignment {
        fold_count,
        assignment,
        seed,
    })
}

/// Document wrapper for a set of extracted events.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventsDoc {
    pub events: Vec<Event>,
}

pub fn write_events(events: &[Event], path: &Path) -> Result<(), DataError> {
    let doc = EventsDoc {
        events: events.to_vec(),
    };
    let json = crate::jsonfmt::to_string_pretty(&doc)
        .map_err(|e| DataError::Invalid(format!("serialization failed: {e}")))?;
    fs::write(path, json).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let doc: EventsDoc =
        serde_json::from_str(&text).map_err(|e| DataError::Invalid(format!("bad events file: {e}")))?;
    Ok(doc.events)
}

/// Writes a trace in the canonical CSV format. Floats use the shortest
/// representation that round-trips exactly.
pub fn write_trace_csv(trace: &TraceFile, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    let mut header = vec!["t", "v", "psi", "rho", "dy", "psidot"];
    if trace.turn_signal.is_some() {
        header.push("turn_signal");
    }
    if trace.lane_width.is_some() {
        header.push("lane_width");
    }
    if trace.labels.is_some() {
        header.push("label");
    }
    let io_err = |e: csv::Error| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    w.write_record(&header).map_err(io_err)?;
    for (i, p) in trace.points.iter().enumerate() {
        let mut row = vec![
            p.t.to_string(),
            p.v.to_string(),
            p.psi.to_string(),
            p.rho.to_string(),
            p.dy.to_string(),
            p.psidot.to_string(),
        ];
        if let Some(flags) = &trace.turn_signal {
            row.push(if flags[i] { "1".into() } else { "0".into() });
        }
        if let Some(widths) = &trace.lane_width {
            row.push(widths[i].to_string());
        }
        if let Some(labels) = &trace.labels {
            row.push(
                match labels[i] {
                    Label::Ldb => "LDB",
                    Label::Dcb => "DCB",
                    Label::None => "NONE",
                }
                .to_string(),
            );
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
