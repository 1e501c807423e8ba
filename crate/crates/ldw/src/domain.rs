//! Core signal types shared by every stage of the pipeline: driving samples,
//! vehicle geometry, warning thresholds, and labeled trace segments.
//!
//! All types here are immutable value objects; they are cheap to copy or
//! clone and safe to share across threads.

use serde::{Deserialize, Serialize};

/// Sampling rate of all traces handled by the toolkit.
pub const SAMPLE_RATE_HZ: f64 = 10.0;

/// Nominal spacing between consecutive samples (s).
pub const SAMPLE_DT: f64 = 0.1;

/// Default lane width (m).
pub const DEFAULT_LANE_WIDTH: f64 = 3.7;

/// Curvature bound for traces used in modeling (1/m). Points above this are
/// filtered out during event extraction.
pub const MAX_MODEL_CURVATURE: f64 = 1e-4;

/// One 10 Hz driving sample.
///
/// `dy` is the lateral distance from the vehicle's center of gravity to the
/// nearest lane boundary: positive inside the lane, zero with the CoG on the
/// line, negative once the CoG has crossed it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingPoint {
    /// Time since trace start (s).
    pub t: f64,
    /// Vehicle speed (m/s).
    pub v: f64,
    /// Relative yaw angle between vehicle axis and road direction (rad).
    pub psi: f64,
    /// Road curvature (1/m).
    pub rho: f64,
    /// Lateral displacement to the nearest lane boundary (m).
    pub dy: f64,
    /// Relative yaw rate (rad/s).
    pub psidot: f64,
}

impl DrivingPoint {
    /// The observable part of the sample (everything except the yaw rate).
    pub fn observable(&self) -> ObservablePoint {
        ObservablePoint {
            v: self.v,
            psi: self.psi,
            rho: self.rho,
            dy: self.dy,
        }
    }

    /// Feature vector in the canonical dimension order (v, psi, rho, dy, psidot).
    pub fn features(&self) -> [f64; 5] {
        [self.v, self.psi, self.rho, self.dy, self.psidot]
    }
}

/// Canonical names of the five feature dimensions, in model order.
pub const DIM_LABELS: [&str; 5] = ["v", "psi", "rho", "dy", "psidot"];

/// The observable state: a [`DrivingPoint`] with the yaw rate removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservablePoint {
    pub v: f64,
    pub psi: f64,
    pub rho: f64,
    pub dy: f64,
}

impl ObservablePoint {
    /// Feature vector in the canonical dimension order (v, psi, rho, dy).
    pub fn features(&self) -> [f64; 4] {
        [self.v, self.psi, self.rho, self.dy]
    }
}

/// Vehicle geometry needed for the time-to-lane-crossing computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    /// Vehicle width (m).
    pub width: f64,
    /// Distance from the center of gravity to the front axle (m).
    pub cg_to_front_axle: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            width: 1.8,
            cg_to_front_axle: 1.2,
        }
    }
}

impl VehicleGeometry {
    pub fn validate(&self) -> ValidationResult {
        let mut r = ValidationResult::ok();
        if !(self.width > 0.0) || !self.width.is_finite() {
            r.push("width > 0");
        }
        if !(self.cg_to_front_axle > 0.0) || !self.cg_to_front_axle.is_finite() {
            r.push("cg_to_front_axle > 0");
        }
        r
    }
}

/// Thresholds and horizon of the warning strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarningConfig {
    /// TLC threshold tau (s).
    pub tau: f64,
    /// Crossing-depth threshold gamma1 (m); usually negative.
    pub gamma1: f64,
    /// Recovery threshold gamma2 (m).
    pub gamma2: f64,
    /// Prediction step count.
    pub q: usize,
    /// Discretization step (s).
    pub dt: f64,
}

impl Default for WarningConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            gamma1: -0.05,
            gamma2: 0.1,
            q: 10,
            dt: SAMPLE_DT,
        }
    }
}

impl WarningConfig {
    pub fn validate(&self) -> ValidationResult {
        let mut r = ValidationResult::ok();
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            r.push("tau > 0");
        }
        if self.q < 1 {
            r.push("q >= 1");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            r.push("dt > 0");
        }
        if !(self.gamma1 <= self.gamma2) {
            r.push("gamma1 <= gamma2");
        }
        if !self.gamma1.is_finite() || !self.gamma2.is_finite() {
            r.push("finite fields");
        }
        r
    }
}

/// Per-timestep behavior label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    /// Lane-departure behavior: drift past the boundary without recovery.
    #[serde(rename = "LDB")]
    Ldb,
    /// Driver correction behavior: near-boundary excursion followed by a
    /// voluntary return toward the lane center.
    #[serde(rename = "DCB")]
    Dcb,
    /// Ordinary lane keeping.
    #[serde(rename = "NONE")]
    None,
}

/// A contiguous labeled trace segment around a near-boundary episode.
///
/// Events are the unit of training and cross-validation. `labels` is `None`
/// for real (unlabeled) traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub driver_id: String,
    /// Source trace file the event was extracted from.
    pub source: String,
    /// Inclusive row range `(first, last)` of the event in the source trace.
    pub row_range: (usize, usize),
    pub points: Vec<DrivingPoint>,
    pub labels: Option<Vec<Label>>,
}

impl Event {
    /// Duration of the event (s).
    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Observable projections of the event's points.
    pub fn observables(&self) -> Vec<ObservablePoint> {
        self.points.iter().map(|p| p.observable()).collect()
    }
}

/// Outcome of a validity check: either OK or the list of violated invariants.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    violations: Vec<String>,
}

impl ValidationResult {
    pub fn ok() -> Self {
        Self::default()
    }

    pub fn push(&mut self, violation: &str) {
        self.violations.push(violation.to_string());
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }
}

/// Checks a sample against the domain invariants without mutating it.
pub fn validate_point(p: &DrivingPoint) -> ValidationResult {
    let mut r = ValidationResult::ok();
    let finite = [p.t, p.v, p.psi, p.rho, p.dy, p.psidot]
        .iter()
        .all(|x| x.is_finite());
    if !finite {
        r.push("finite fields");
    }
    if finite && p.v < 0.0 {
        r.push("v >= 0");
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DrivingPoint {
        DrivingPoint {
            t: 0.0,
            v: 20.0,
            psi: 0.01,
            rho: 1e-5,
            dy: 1.2,
            psidot: 0.001,
        }
    }

    #[test]
    fn valid_point_passes() {
        assert!(validate_point(&sample()).is_ok());
    }

    #[test]
    fn negative_speed_flagged() {
        let p = DrivingPoint { v: -1.0, ..sample() };
        let r = validate_point(&p);
        assert!(!r.is_ok());
        assert!(r.violations().iter().any(|v| v.contains("v >= 0")));
    }

    #[test]
    fn non_finite_flagged() {
        let p = DrivingPoint {
            psi: f64::NAN,
            ..sample()
        };
        let r = validate_point(&p);
        assert!(!r.is_ok());
        assert!(r.violations().iter().any(|v| v.contains("finite")));
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        // Awkward values that would expose lossy float formatting.
        let p = DrivingPoint {
            t: 0.1 + 0.2,
            v: 23.456789012345678,
            psi: -1.2345678901234567e-3,
            rho: 9.999999999999999e-5,
            dy: 0.1 * 3.0,
            psidot: -0.07,
        };
        let json = serde_json::to_string(&p).unwrap();
        let back: DrivingPoint = serde_json::from_str(&json).unwrap();
        assert!(p.features().iter().zip(back.features().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(p.t.to_bits(), back.t.to_bits());
    }

    proptest::proptest! {
        /// Any valid point survives JSON serialization bit-exactly.
        #[test]
        fn serialization_round_trip_property(
            t in 0.0f64..1e6,
            v in 0.0f64..80.0,
            psi in proptest::num::f64::NORMAL,
            rho in -1e-3f64..1e-3,
            dy in -5.0f64..5.0,
            psidot in -1.0f64..1.0,
        ) {
            let p = DrivingPoint { t, v, psi, rho, dy, psidot };
            proptest::prop_assume!(validate_point(&p).is_ok());
            let json = serde_json::to_string(&p).unwrap();
            let back: DrivingPoint = serde_json::from_str(&json).unwrap();
            proptest::prop_assert_eq!(p.t.to_bits(), back.t.to_bits());
            proptest::prop_assert_eq!(p.v.to_bits(), back.v.to_bits());
            proptest::prop_assert_eq!(p.psi.to_bits(), back.psi.to_bits());
            proptest::prop_assert_eq!(p.rho.to_bits(), back.rho.to_bits());
            proptest::prop_assert_eq!(p.dy.to_bits(), back.dy.to_bits());
            proptest::prop_assert_eq!(p.psidot.to_bits(), back.psidot.to_bits());
        }
    }

    #[test]
    fn warning_config_defaults_are_valid() {
        assert!(WarningConfig::default().validate().is_ok());
        let bad = WarningConfig {
            gamma1: 0.5,
            gamma2: 0.1,
            ..Default::default()
        };
        assert!(!bad.validate().is_ok());
    }

    #[test]
    fn geometry_validation() {
        assert!(VehicleGeometry::default().validate().is_ok());
        let bad = VehicleGeometry {
            width: 0.0,
            cg_to_front_axle: 1.0,
        };
        assert!(!bad.validate().is_ok());
    }
}
