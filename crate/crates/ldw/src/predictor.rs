//! Iterative q-step prediction of the lateral trajectory: a point-mass
//! rollout of yaw angle and lateral displacement, alternating with yaw-rate
//! inference from the driver model.
//!
//! The rollout is pure open loop: speed and curvature are held at their
//! current values and no measurement re-anchoring happens inside the
//! horizon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DrivingPoint, ObservablePoint};
use crate::hmm::{self, ForwardState, HmmError, PdmModel};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Model(#[from] HmmError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("predicted and actual horizons differ: {predicted} vs {actual}")]
    LengthMismatch { predicted: usize, actual: usize },
}

/// Anything that can filter observable history and produce a yaw-rate
/// estimate for the rollout. The trained driver model is the production
/// implementation; tests substitute fixed-rate stubs.
pub trait YawRateModel {
    type State: Clone;
    fn init_state(&self, zeta: &ObservablePoint) -> Result<Self::State, PredictError>;
    fn advance(&self, state: &Self::State, zeta: &ObservablePoint) -> Result<Self::State, PredictError>;
    fn infer(&self, state: &Self::State, zeta: &ObservablePoint) -> f64;
}

impl YawRateModel for PdmModel {
    type State = ForwardState;

    fn init_state(&self, zeta: &ObservablePoint) -> Result<ForwardState, PredictError> {
        Ok(hmm::init_forward(zeta, self)?)
    }

    fn advance(&self, state: &ForwardState, zeta: &ObservablePoint) -> Result<ForwardState, PredictError> {
        Ok(hmm::forward_step(state, zeta, self)?)
    }

    fn infer(&self, state: &ForwardState, zeta: &ObservablePoint) -> f64 {
        hmm::infer_yaw_rate(state, zeta, self)
    }
}

/// Inputs of one prediction: observable history up to and including the
/// current time, the full current sample, and the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub history: Vec<ObservablePoint>,
    pub current: DrivingPoint,
    pub q: usize,
    pub dt: f64,
}

impl PredictionRequest {
    fn validate(&self) -> Result<(), PredictError> {
        if self.q < 1 {
            return Err(PredictError::InvalidRequest("q must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(PredictError::InvalidRequest("dt must be positive and finite".into()));
        }
        if self.history.is_empty() {
            return Err(PredictError::InvalidRequest("history must not be empty".into()));
        }
        if !crate::domain::validate_point(&self.current).is_ok() {
            return Err(PredictError::InvalidRequest("current sample violates invariants".into()));
        }
        Ok(())
    }
}

/// Predicted lateral displacement, yaw angle, and inferred yaw rate for
/// steps 1..=q ahead of the request time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedPath {
    pub dy_hat: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub psidot_hat: Vec<f64>,
}

impl PredictedPath {
    pub fn horizon(&self) -> usize {
        self.dy_hat.len()
    }

    /// Keeps only the first `q` steps; used to derive a shorter horizon from
    /// a longer rollout (prefixes of a rollout are identical to a rollout of
    /// the shorter horizon).
    pub fn truncated(&self, q: usize) -> PredictedPath {
        PredictedPath {
            dy_hat: self.dy_hat[..q].to_vec(),
            psi_hat: self.psi_hat[..q].to_vec(),
            psidot_hat: self.psidot_hat[..q].to_vec(),
        }
    }
}

/// Warms the forward state up over the request's history, then rolls the
/// kinematics out for `q` steps.
pub fn predict_path<M: YawRateModel>(
    req: &PredictionRequest,
    model: &M,
) -> Result<PredictedPath, PredictError> {
    req.validate()?;
    let mut state = model.init_state(&req.history[0])?;
    for zeta in &req.history[1..] {
        state = model.advance(&state, zeta)?;
    }
    predict_from_state(model, state, &req.current, req.q, req.dt)
}

/// Rollout starting from an already warmed-up filter state. The state must
/// correspond to the history ending at `current`'s time.
///
/// Per step: the yaw angle advances with the previous yaw rate, the lateral
/// displacement advances with the previous yaw angle, the filter advances on
/// the newly assembled observable state, and the next yaw rate is inferred
/// from it. The first step uses the measured yaw rate of `current`; speed
/// and curvature stay frozen.
pub fn predict_from_state<M: YawRateModel>(
    model: &M,
    state: M::State,
    current: &DrivingPoint,
    q: usize,
    dt: f64,
) -> Result<PredictedPath, PredictError> {
    let mut state = state;
    let v = current.v;
    let rho = current.rho;
    let mut psi = current.psi;
    let mut dy = current.dy;
    let mut psidot = current.psidot;

    let mut dy_hat = Vec::with_capacity(q);
    let mut psi_hat = Vec::with_capacity(q);
    let mut psidot_hat = Vec::with_capacity(q);

    for _ in 0..q {
        let psi_next = psi + psidot * dt;
        let dy_next = dy + v * psi.sin() * dt;
        let zeta = ObservablePoint {
            v,
            psi: psi_next,
            rho,
            dy: dy_next,
        };
        state = model.advance(&state, &zeta)?;
        psidot = model.infer(&state, &zeta);
        psi = psi_next;
        dy = dy_next;
        dy_hat.push(dy);
        psi_hat.push(psi);
        psidot_hat.push(psidot);
    }
    Ok(PredictedPath {
        dy_hat,
        psi_hat,
        psidot_hat,
    })
}

/// Mean absolute error between a predicted path and the matching actual
/// displacements.
pub fn prediction_error(predicted: &PredictedPath, actual: &[f64]) -> Result<f64, PredictError> {
    if predicted.dy_hat.len() != actual.len() {
        return Err(PredictError::LengthMismatch {
            predicted: predicted.dy_hat.len(),
            actual: actual.len(),
        });
    }
    let q = actual.len() as f64;
    Ok(predicted
        .dy_hat
        .iter()
        .zip(actual.iter())
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Stub model that always infers the same yaw rate.
    pub(crate) struct ConstantRate(pub f64);

    impl YawRateModel for ConstantRate {
        type State = ();
        fn init_state(&self, _zeta: &ObservablePoint) -> Result<(), PredictError> {
            Ok(())
        }
        fn advance(&self, _state: &(), _zeta: &ObservablePoint) -> Result<(), PredictError> {
            Ok(())
        }
        fn infer(&self, _state: &(), _zeta: &ObservablePoint) -> f64 {
            self.0
        }
    }

    fn request(psi0: f64, psidot0: f64, q: usize) -> PredictionRequest {
        let current = DrivingPoint {
            t: 10.0,
            v: 20.0,
            psi: psi0,
            rho: 1e-5,
            dy: 1.0,
            psidot: psidot0,
        };
        PredictionRequest {
            history: vec![current.observable()],
            current,
            q,
            dt: 0.1,
        }
    }

    #[test]
    fn zero_yaw_zero_rate_is_straight() {
        let path = predict_path(&request(0.0, 0.0, 15), &ConstantRate(0.0)).unwrap();
        for dy in &path.dy_hat {
            assert_relative_eq!(*dy, 1.0, epsilon = 1e-15);
        }
        for psi in &path.psi_hat {
            assert_relative_eq!(*psi, 0.0);
        }
    }

    #[test]
    fn constant_heading_matches_closed_form() {
        let psi0 = 0.015f64;
        let q = 20;
        let path = predict_path(&request(psi0, 0.0, q), &ConstantRate(0.0)).unwrap();
        for (i, dy) in path.dy_hat.iter().enumerate() {
            let expect = 1.0 + (i as f64 + 1.0) * 20.0 * psi0.sin() * 0.1;
            assert!((dy - expect).abs() < 1e-12, "step {i}: {dy} vs {expect}");
        }
    }

    #[test]
    fn constant_rate_matches_reference_simulation() {
        // Hand-rolled step-by-step oracle of the same recurrence.
        let rate = -0.004f64;
        let q = 30;
        let req = request(0.01, 0.002, q);
        let path = predict_path(&req, &ConstantRate(rate)).unwrap();

        let (mut psi, mut dy, mut psidot) = (req.current.psi, req.current.dy, req.current.psidot);
        for i in 0..q {
            let psi_next = psi + psidot * 0.1;
            let dy_next = dy + req.current.v * psi.sin() * 0.1;
            psidot = rate;
            psi = psi_next;
            dy = dy_next;
            assert!((path.dy_hat[i] - dy).abs() < 1e-12);
            assert!((path.psi_hat[i] - psi).abs() < 1e-12);
            assert_relative_eq!(path.psidot_hat[i], rate);
        }
    }

    #[test]
    fn first_step_uses_measured_rate() {
        let req = request(0.0, 0.05, 2);
        let path = predict_path(&req, &ConstantRate(0.0)).unwrap();
        // psi after one step reflects the measured rate, not the stub.
        assert_relative_eq!(path.psi_hat[0], 0.005, epsilon = 1e-15);
        assert_relative_eq!(path.psi_hat[1], 0.005, epsilon = 1e-15);
    }

    #[test]
    fn outputs_reconstruct_kinematics() {
        let req = request(0.012, -0.003, 25);
        let path = predict_path(&req, &ConstantRate(0.002)).unwrap();
        // dy[i+1] - dy[i] must equal v sin(psi[i]) dt exactly.
        for i in 0..path.horizon() - 1 {
            let expect = req.current.v * path.psi_hat[i].sin() * req.dt;
            assert!(((path.dy_hat[i + 1] - path.dy_hat[i]) - expect).abs() < 1e-15);
        }
    }

    /// Records every observable the rollout feeds the filter.
    struct Probe(std::cell::RefCell<Vec<ObservablePoint>>);

    impl YawRateModel for Probe {
        type State = ();
        fn init_state(&self, _zeta: &ObservablePoint) -> Result<(), PredictError> {
            Ok(())
        }
        fn advance(&self, _state: &(), zeta: &ObservablePoint) -> Result<(), PredictError> {
            self.0.borrow_mut().push(*zeta);
            Ok(())
        }
        fn infer(&self, _state: &(), _zeta: &ObservablePoint) -> f64 {
            0.003
        }
    }

    #[test]
    fn rollout_holds_speed_and_curvature_constant() {
        let req = request(0.01, -0.002, 12);
        let probe = Probe(std::cell::RefCell::new(Vec::new()));
        predict_path(&req, &probe).unwrap();
        let seen = probe.0.borrow();
        assert_eq!(seen.len(), 12);
        for zeta in seen.iter() {
            assert_eq!(zeta.v, req.current.v);
            assert_eq!(zeta.rho, req.current.rho);
        }
    }

    #[test]
    fn rollout_is_deterministic() {
        let req = request(0.01, 0.001, 30);
        let a = predict_path(&req, &ConstantRate(0.003)).unwrap();
        let b = predict_path(&req, &ConstantRate(0.003)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_prefix_equals_short_rollout() {
        let req_long = request(0.01, 0.001, 30);
        let mut req_short = req_long.clone();
        req_short.q = 7;
        let long = predict_path(&req_long, &ConstantRate(0.004)).unwrap();
        let short = predict_path(&req_short, &ConstantRate(0.004)).unwrap();
        assert_eq!(long.truncated(7), short);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let mut req = request(0.0, 0.0, 0);
        assert!(matches!(
            predict_path(&req, &ConstantRate(0.0)),
            Err(PredictError::InvalidRequest(_))
        ));
        req.q = 5;
        req.history.clear();
        assert!(matches!(
            predict_path(&req, &ConstantRate(0.0)),
            Err(PredictError::InvalidRequest(_))
        ));
    }

    #[test]
    fn error_is_mean_absolute_deviation() {
        let path = PredictedPath {
            dy_hat: vec![1.0, 1.1, 1.2],
            psi_hat: vec![0.0; 3],
            psidot_hat: vec![0.0; 3],
        };
        assert_relative_eq!(prediction_error(&path, &[1.0, 1.1, 1.2]).unwrap(), 0.0);
        assert_relative_eq!(
            prediction_error(&path, &[1.1, 1.2, 1.3]).unwrap(),
            0.1,
            epsilon = 1e-12
        );
        assert!(matches!(
            prediction_error(&path, &[1.0]),
            Err(PredictError::LengthMismatch { .. })
        ));
    }
}
