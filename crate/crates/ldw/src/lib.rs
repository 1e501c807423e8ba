//! Personalized driver modeling and lane-departure warning evaluation.
//!
//! The pipeline: parse or synthesize 10 Hz driving traces, extract
//! near-boundary events, fit a per-driver Gaussian mixture over
//! (v, psi, rho, dy, psidot), layer a Markov chain over its components,
//! predict upcoming lateral trajectories by alternating point-mass
//! propagation with yaw-rate inference, and score warning strategies by
//! warning frequency and false-alarm rate on labeled corpora.

pub mod cli;
pub mod dataio;
pub mod domain;
pub mod eval;
pub mod gmm;
pub mod hmm;
pub mod jsonfmt;
pub mod predictor;
pub mod synth;
pub mod warning;
