//! Time-to-lane-crossing computation and the warning strategies built on it:
//! the plain TLC threshold alarm, the trajectory-predicting alarm that
//! suppresses warnings when the driver is expected to recover, and a
//! registry hook for plugging in third-party strategies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DrivingPoint, VehicleGeometry, WarningConfig};
use crate::predictor::PredictedPath;

#[derive(Debug, Error)]
pub enum WarningError {
    #[error("invalid vehicle geometry: {0}")]
    InvalidGeometry(String),
    #[error("path horizon {path} does not match configured q = {expected}")]
    HorizonMismatch { path: usize, expected: usize },
    #[error("strategy name already registered: {0}")]
    DuplicateName(String),
    #[error("invalid driving point: {0}")]
    InvalidPoint(String),
}

/// Which strategy produced a decision.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    BasicTlc,
    TlcPdm,
    External(String),
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::BasicTlc => "basic-tlc".to_string(),
            Strategy::TlcPdm => "tlc-pdm".to_string(),
            Strategy::External(n) => n.clone(),
        }
    }
}

/// Truth values of the three trajectory-aware firing conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionBreakdown {
    /// TLC below tau.
    pub tlc_below_tau: bool,
    /// Minimum of current and predicted displacement below gamma1.
    pub min_dy_below_gamma1: bool,
    /// Predicted terminal displacement below gamma2.
    pub terminal_dy_below_gamma2: bool,
}

/// Per-timestep outcome of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningDecision {
    pub t: f64,
    pub strategy: Strategy,
    pub fired: bool,
    /// Computed TLC (s); `f64::INFINITY` when no crossing lies ahead.
    pub tlc: f64,
    /// Present only for the trajectory-aware strategy.
    pub conditions: Option<ConditionBreakdown>,
}

/// Time to lane crossing for one sample.
///
/// Returns `+inf` when the approach rate `v sin(psi)` is zero or negative
/// (travelling parallel to or away from the boundary). A negative ratio
/// means the projected front corner is already past the line; it clamps to 0.
pub fn compute_tlc(p: &DrivingPoint, geom: &VehicleGeometry) -> Result<f64, WarningError> {
    let geom_check = geom.validate();
    if !geom_check.is_ok() {
        return Err(WarningError::InvalidGeometry(geom_check.violations().join(", ")));
    }
    let point_check = crate::domain::validate_point(p);
    if !point_check.is_ok() {
        return Err(WarningError::InvalidPoint(point_check.violations().join(", ")));
    }
    let approach_rate = p.v * p.psi.sin();
    if approach_rate <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let numerator = p.dy - (geom.width / 2.0 - geom.cg_to_front_axle * p.psi.tan());
    Ok((numerator / approach_rate).max(0.0))
}

/// Plain threshold alarm: fires iff `tlc < tau` (strict).
pub fn basic_alarm(t: f64, tlc: f64, cfg: &WarningConfig) -> WarningDecision {
    WarningDecision {
        t,
        strategy: Strategy::BasicTlc,
        fired: tlc < cfg.tau,
        tlc,
        conditions: None,
    }
}

/// Trajectory-aware alarm. Fires iff all three hold (strict inequalities):
/// the TLC is below tau, the minimum of the current and all predicted
/// displacements is below gamma1, and the predicted terminal displacement is
/// below gamma2 (that is, the driver is not expected to have recovered).
pub fn pdm_alarm(
    p: &DrivingPoint,
    path: &PredictedPath,
    geom: &VehicleGeometry,
    cfg: &WarningConfig,
) -> Result<WarningDecision, WarningError> {
    if path.horizon() != cfg.q || cfg.q == 0 {
        return Err(WarningError::HorizonMismatch {
            path: path.horizon(),
            expected: cfg.q,
        });
    }
    let tlc = compute_tlc(p, geom)?;
    let min_dy = path
        .dy_hat
        .iter()
        .cloned()
        .fold(p.dy, f64::min);
    let terminal = *path.dy_hat.last().expect("horizon checked non-empty above");
    let conditions = ConditionBreakdown {
        tlc_below_tau: tlc < cfg.tau,
        min_dy_below_gamma1: min_dy < cfg.gamma1,
        terminal_dy_below_gamma2: terminal < cfg.gamma2,
    };
    Ok(WarningDecision {
        t: p.t,
        strategy: Strategy::TlcPdm,
        fired: conditions.tlc_below_tau
            && conditions.min_dy_below_gamma1
            && conditions.terminal_dy_below_gamma2,
        tlc,
        conditions: Some(conditions),
    })
}

/// Decision callback for an externally supplied strategy. Receives the
/// current sample, the predicted path for the configured horizon, and the
/// precomputed TLC; returns whether to fire.
pub type ExternalDecisionFn = Box<dyn Fn(&DrivingPoint, &PredictedPath, f64) -> bool + Send + Sync>;

/// Opaque handle to a registered strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyHandle(String);

impl StrategyHandle {
    pub fn name(&self) -> &str {
        &self.0
    }
}

/// Holds externally registered warning strategies so the evaluation harness
/// can invoke them per timestep alongside the built-in ones.
#[derive(Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, ExternalDecisionFn>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        decision_fn: ExternalDecisionFn,
    ) -> Result<StrategyHandle, WarningError> {
        if self.entries.contains_key(name) {
            return Err(WarningError::DuplicateName(name.to_string()));
        }
        self.entries.insert(name.to_string(), decision_fn);
        Ok(StrategyHandle(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Runs the named strategy on one timestep; `None` if not registered.
    pub fn evaluate(
        &self,
        name: &str,
        p: &DrivingPoint,
        path: &PredictedPath,
        tlc: f64,
    ) -> Option<WarningDecision> {
        let f = self.entries.get(name)?;
        Some(WarningDecision {
            t: p.t,
            strategy: Strategy::External(name.to_string()),
            fired: f(p, path, tlc),
            tlc,
            conditions: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geom() -> VehicleGeometry {
        VehicleGeometry {
            width: 1.8,
            cg_to_front_axle: 1.2,
        }
    }

    fn point(v: f64, psi: f64, dy: f64) -> DrivingPoint {
        DrivingPoint {
            t: 0.0,
            v,
            psi,
            rho: 0.0,
            dy,
            psidot: 0.0,
        }
    }

    fn flat_path(dy: f64, q: usize) -> PredictedPath {
        PredictedPath {
            dy_hat: vec![dy; q],
            psi_hat: vec![0.0; q],
            psidot_hat: vec![0.0; q],
        }
    }

    #[test]
    fn parallel_travel_never_crosses() {
        assert_eq!(compute_tlc(&point(20.0, 0.0, 1.0), &geom()).unwrap(), f64::INFINITY);
        assert_eq!(compute_tlc(&point(20.0, -0.02, 1.0), &geom()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn reference_case_matches_direct_formula() {
        // Independent evaluation of the ratio, spelled out separately from
        // the implementation.
        let p = point(20.0, 0.02, 1.0);
        let numerator = 1.0 - (1.8 / 2.0 - 1.2 * 0.02f64.tan());
        let denominator = 20.0 * 0.02f64.sin();
        let expect = numerator / denominator;
        let got = compute_tlc(&p, &geom()).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-15);
        assert_relative_eq!(got, 0.3100, epsilon = 5e-5);
    }

    #[test]
    fn negative_numerator_clamps_to_zero() {
        // Projected front corner already at the line.
        let got = compute_tlc(&point(20.0, 0.02, 0.3), &geom()).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn invalid_geometry_is_an_error() {
        let bad = VehicleGeometry {
            width: -1.0,
            cg_to_front_axle: 1.0,
        };
        assert!(matches!(
            compute_tlc(&point(20.0, 0.01, 1.0), &bad),
            Err(WarningError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn basic_alarm_threshold_is_strict() {
        let cfg = WarningConfig::default();
        assert!(basic_alarm(0.0, 0.5, &cfg).fired);
        assert!(!basic_alarm(0.0, f64::INFINITY, &cfg).fired);
        assert!(!basic_alarm(0.0, 1.0, &cfg).fired, "tlc == tau must not fire");
    }

    #[test]
    fn pdm_alarm_requires_all_three_conditions() {
        let cfg = WarningConfig {
            q: 5,
            ..WarningConfig::default()
        };
        // TLC 0 (deep in the boundary region with positive approach rate).
        let p = point(20.0, 0.02, 0.1);

        let mut crossing = flat_path(-0.2, 5);
        crossing.dy_hat[4] = 0.05;
        let d = pdm_alarm(&p, &crossing, &geom(), &cfg).unwrap();
        assert!(d.fired);
        let c = d.conditions.unwrap();
        assert!(c.tlc_below_tau && c.min_dy_below_gamma1 && c.terminal_dy_below_gamma2);

        // Driver recovers past gamma2: suppressed.
        let mut recovered = flat_path(-0.2, 5);
        recovered.dy_hat[4] = 0.5;
        let d = pdm_alarm(&p, &recovered, &geom(), &cfg).unwrap();
        assert!(!d.fired);
        assert!(!d.conditions.unwrap().terminal_dy_below_gamma2);

        // TLC comfortable: gated regardless of the path.
        let far = point(20.0, 0.002, 1.5);
        let d = pdm_alarm(&far, &crossing, &geom(), &cfg).unwrap();
        assert!(!d.fired);
        assert!(d.tlc > cfg.tau);
    }

    #[test]
    fn pdm_alarm_min_includes_current_sample() {
        let cfg = WarningConfig {
            q: 3,
            ..WarningConfig::default()
        };
        // Current sample already crossed below gamma1; prediction recovers
        // but stays under gamma2.
        let p = point(20.0, 0.01, -0.1);
        let path = flat_path(0.05, 3);
        let d = pdm_alarm(&p, &path, &geom(), &cfg).unwrap();
        assert!(d.conditions.unwrap().min_dy_below_gamma1);
        assert!(d.fired);
    }

    #[test]
    fn pdm_alarm_rejects_wrong_horizon() {
        let cfg = WarningConfig::default();
        let p = point(20.0, 0.01, 0.5);
        assert!(matches!(
            pdm_alarm(&p, &flat_path(0.0, 3), &geom(), &cfg),
            Err(WarningError::HorizonMismatch { path: 3, expected: 10 })
        ));
    }

    #[test]
    fn registry_registers_and_evaluates() {
        let mut reg = StrategyRegistry::new();
        reg.register("always-off", Box::new(|_, _, _| false)).unwrap();
        reg.register("basic-clone", Box::new(|_, _, tlc| tlc < 1.0)).unwrap();
        assert!(matches!(
            reg.register("always-off", Box::new(|_, _, _| true)),
            Err(WarningError::DuplicateName(_))
        ));

        let p = point(20.0, 0.02, 0.1);
        let path = flat_path(0.0, 10);
        let tlc = compute_tlc(&p, &geom()).unwrap();
        let off = reg.evaluate("always-off", &p, &path, tlc).unwrap();
        assert!(!off.fired);
        let clone = reg.evaluate("basic-clone", &p, &path, tlc).unwrap();
        let basic = basic_alarm(p.t, tlc, &WarningConfig::default());
        assert_eq!(clone.fired, basic.fired);
        assert!(reg.evaluate("missing", &p, &path, tlc).is_none());
    }

    proptest! {
        /// TLC is never negative, and doubling the speed strictly shrinks a
        /// finite TLC at fixed geometry and angles.
        #[test]
        fn tlc_nonnegative_and_speed_monotone(
            v in 1.0f64..40.0,
            psi in -0.1f64..0.1,
            dy in -0.5f64..3.0,
        ) {
            let tlc = compute_tlc(&point(v, psi, dy), &geom()).unwrap();
            prop_assert!(tlc >= 0.0);
            if tlc.is_finite() && tlc > 0.0 {
                let faster = compute_tlc(&point(2.0 * v, psi, dy), &geom()).unwrap();
                prop_assert!(faster < tlc);
            }
        }

        /// Firing sets are monotone non-decreasing in gamma1 and gamma2: a
        /// decision that fired keeps firing when either threshold grows.
        #[test]
        fn firing_monotone_in_gammas(
            dy_now in -0.5f64..1.0,
            dy_min in -0.6f64..0.5,
            dy_term in -0.5f64..0.6,
            g1 in -0.3f64..0.2,
            g2 in -0.1f64..0.4,
            bump1 in 0.0f64..0.3,
            bump2 in 0.0f64..0.3,
        ) {
            prop_assume!(g1 <= g2);
            let cfg = WarningConfig { q: 4, gamma1: g1, gamma2: g2, ..WarningConfig::default() };
            let p = point(20.0, 0.02, dy_now);
            let mut path = flat_path(dy_min.max(-0.6), 4);
            path.dy_hat[3] = dy_term;
            let fired = pdm_alarm(&p, &path, &geom(), &cfg).unwrap().fired;

            let wider = WarningConfig {
                gamma1: (g1 + bump1).min(g2 + bump2),
                gamma2: g2 + bump2,
                ..cfg
            };
            let fired_wider = pdm_alarm(&p, &path, &geom(), &wider).unwrap().fired;
            if fired {
                prop_assert!(fired_wider);
            }
        }

        /// Trajectory-aware firings are a subset of plain-TLC firings.
        #[test]
        fn pdm_subset_of_basic(
            v in 5.0f64..35.0,
            psi in -0.05f64..0.05,
            dy in -0.4f64..2.0,
            terminal in -0.4f64..0.4,
        ) {
            let cfg = WarningConfig { q: 6, ..WarningConfig::default() };
            let p = point(v, psi, dy);
            let mut path = flat_path(-0.2, 6);
            path.dy_hat[5] = terminal;
            let tlc = compute_tlc(&p, &geom()).unwrap();
            let basic = basic_alarm(p.t, tlc, &cfg);
            let pdm = pdm_alarm(&p, &path, &geom(), &cfg).unwrap();
            if pdm.fired {
                prop_assert!(basic.fired);
            }
        }
    }
}
