//! Seeded synthetic driving-trace generator producing labeled lane-keeping,
//! lane-departure (LDB), and driver-correction (DCB) episodes.
//!
//! The simulated kinematics are the same point-mass recurrences the
//! predictor assumes (yaw integrates the yaw rate, displacement integrates
//! `v sin(psi)`), so model mismatch on generated corpora is controlled.
//! A stochastic proportional controller steers toward the driver's
//! preferred offset; departure episodes override it with scripted drift and
//! correction phases.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{write_trace_csv, TraceFile};
use crate::domain::{DrivingPoint, Label, SAMPLE_DT};
use crate::gmm::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile {driver_id}: {reason}")]
    InvalidProfile { driver_id: String, reason: String },
    #[error("profile list is empty")]
    EmptyProfileList,
    #[error("io failure on {path}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Driving-style parameters of one simulated driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub driver_id: String,
    /// Preferred offset from the lane center toward the tracked boundary (m).
    pub preferred_offset: f64,
    /// Standard deviation of the slowly wandering offset target (m).
    pub offset_jitter: f64,
    /// Rate of departure-episode onsets (1/s).
    pub drift_rate: f64,
    /// Probability that a departure becomes a correction (DCB) rather than a
    /// crossing without recovery (LDB).
    pub correction_prob: f64,
    /// Mean vehicle speed (m/s).
    pub speed_mean: f64,
    /// Standard deviation of the slowly varying speed (m/s).
    pub speed_std: f64,
    /// White noise on the commanded yaw rate (rad/s).
    pub yaw_noise_std: f64,
    /// Per-step lateral process noise (m) injected on top of the point-mass
    /// displacement update; zero keeps the trace exactly kinematic, nonzero
    /// stress-tests predictors against model mismatch.
    #[serde(default)]
    pub kinematics_noise_std: f64,
    pub seed: u64,
}

impl DriverProfile {
    fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: &str| {
            Err(SynthError::InvalidProfile {
                driver_id: self.driver_id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.correction_prob >= 0.0 && self.correction_prob <= 1.0) {
            return fail("correction_prob must lie in [0, 1]");
        }
        if self.offset_jitter < 0.0
            || self.yaw_noise_std < 0.0
            || self.speed_std < 0.0
            || self.kinematics_noise_std < 0.0
        {
            return fail("standard deviations must be non-negative");
        }
        if !(self.speed_mean > 0.0) {
            return fail("speed_mean must be positive");
        }
        if self.drift_rate < 0.0 {
            return fail("drift_rate must be non-negative");
        }
        Ok(())
    }
}

/// One labeled episode in a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub kind: Label,
    pub onset_t: f64,
    /// Time of the deepest excursion.
    pub peak_t: f64,
    /// First time the displacement re-crosses the recovery threshold;
    /// absent for LDB episodes.
    pub recovery_t: Option<f64>,
    pub end_t: f64,
}

/// Ground truth emitted alongside a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLog {
    pub driver_id: String,
    pub t: Vec<f64>,
    pub labels: Vec<Label>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Displacement a correction must exceed for the episode to count as
/// recovered (m). Matches the default recovery threshold of the warning
/// strategy so labels align with the semantics being evaluated.
pub const RECOVERY_THRESHOLD: f64 = 0.1;

/// DCB episodes end once the displacement climbs back above this level (m),
/// comfortably past [`RECOVERY_THRESHOLD`].
const DCB_EXIT_LEVEL: f64 = 0.3;

/// Crossing depth a lane departure must at least reach (m).
const LDB_MIN_DEPTH: f64 = -0.45;
const LDB_MAX_DEPTH: f64 = -0.12;

/// Depth range of correction episodes (m); stays above the default
/// crossing-depth threshold so corrections never look like departures.
const DCB_MIN_DEPTH: f64 = -0.04;
const DCB_MAX_DEPTH: f64 = 0.30;

/// Quiet time after an episode before a new one may start (s).
const EPISODE_COOLDOWN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Keeping,
    Drift { kind: Label, depth: f64 },
    /// Swift inward steering that ends a correction episode.
    Correct,
    /// Sluggish unlabeled return after an unrecovered departure; this is
    /// the regime where a warning is genuinely warranted.
    Recover,
}

/// Simulates one driver for `duration` seconds on a lane of `lane_width`
/// meters. Fully reproducible from the profile's seed.
pub fn generate_trace(
    profile: &DriverProfile,
    duration: f64,
    lane_width: f64,
) -> Result<(TraceFile, GroundTruthLog), SynthError> {
    profile.validate()?;
    if !(duration >= 30.0) {
        return Err(SynthError::InvalidProfile {
            driver_id: profile.driver_id.clone(),
            reason: format!("duration must be at least 30 s, got {duration}"),
        });
    }
    if !(lane_width > 0.0) {
        return Err(SynthError::InvalidProfile {
            driver_id: profile.driver_id.clone(),
            reason: "lane_width must be positive".to_string(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let steps = (duration / SAMPLE_DT).round() as usize;
    let dt = SAMPLE_DT;

    // Second-order lateral loop: psidot = gain_p (target - dy) - gain_d psi.
    let omega = 1.2; // natural frequency (rad/s)
    let damping = 0.9;
    let gain_p = omega * omega / profile.speed_mean;
    let gain_d = 2.0 * damping * omega;

    let target_base = lane_width / 2.0 - profile.preferred_offset;
    let jitter_decay = (-dt / 10.0f64).exp(); // ~10 s correlation time
    let speed_decay = (-dt / 20.0f64).exp();
    let rho_base = rng.gen_range(-5e-5..5e-5);

    let mut dy = target_base;
    let mut psi = 0.0f64;
    let mut v = profile.speed_mean.max(1.0);
    let mut jitter = 0.0f64;
    let mut rho = rho_base;

    let mut phase = Phase::Keeping;
    let mut cooldown_until = 0.0f64;
    let mut episode_kind = Label::None;
    let mut episode_onset_idx = 0usize;
    let mut episode_peak_t = 0.0f64;
    let mut episode_peak_dy = f64::INFINITY;
    let mut episode_recovery: Option<f64> = None;

    let mut points = Vec::with_capacity(steps);
    let mut labels = Vec::with_capacity(steps);
    let mut episodes = Vec::new();

    for i in 0..steps {
        let t = i as f64 * dt;

        // Episode onsets are a Bernoulli thinning of the drift rate.
        if matches!(phase, Phase::Keeping)
            && t >= cooldown_until
            && profile.drift_rate > 0.0
            && rng.gen::<f64>() < profile.drift_rate * dt
        {
            let kind = if rng.gen::<f64>() < profile.correction_prob {
                Label::Dcb
            } else {
                Label::Ldb
            };
            let depth = match kind {
                Label::Dcb => rng.gen_range(DCB_MIN_DEPTH..DCB_MAX_DEPTH),
                _ => rng.gen_range(LDB_MIN_DEPTH..LDB_MAX_DEPTH),
            };
            phase = Phase::Drift { kind, depth };
            episode_kind = kind;
            episode_onset_idx = i;
            episode_peak_t = t;
            episode_peak_dy = f64::INFINITY;
            episode_recovery = None;
        }

        let in_episode = matches!(phase, Phase::Drift { .. } | Phase::Correct);

        // Commanded yaw rate for this step.
        let noise: f64 = StandardNormal.sample(&mut rng);
        let psidot = match phase {
            Phase::Keeping => {
                let target = target_base + jitter;
                gain_p * (target - dy) - gain_d * psi + profile.yaw_noise_std * noise
            }
            // Scripted headings: outward drift, swift correction, and the
            // markedly slower return after an unrecovered departure.
            Phase::Drift { .. } => 2.0 * (-0.012 - psi),
            Phase::Correct => 2.0 * (0.016 - psi),
            Phase::Recover => 2.0 * (0.006 - psi),
        };
        let psidot = psidot.clamp(-0.12, 0.12);

        points.push(DrivingPoint {
            t,
            v,
            psi,
            rho,
            dy,
            psidot,
        });
        labels.push(if in_episode { episode_kind } else { Label::None });

        if in_episode {
            if dy < episode_peak_dy {
                episode_peak_dy = dy;
                episode_peak_t = t;
            }
            if matches!(phase, Phase::Correct)
                && episode_recovery.is_none()
                && dy > RECOVERY_THRESHOLD
            {
                episode_recovery = Some(t);
            }
        }

        // Phase transitions on the just-emitted displacement; a transition
        // step is the last one carrying the episode label.
        match phase {
            Phase::Drift { kind, depth } if dy <= depth => {
                if kind == Label::Dcb {
                    phase = Phase::Correct;
                } else {
                    // Departure ends unrecovered; the slow unlabeled return
                    // starts next step.
                    episodes.push(EpisodeRecord {
                        kind: Label::Ldb,
                        onset_t: episode_onset_idx as f64 * dt,
                        peak_t: episode_peak_t,
                        recovery_t: None,
                        end_t: t,
                    });
                    phase = Phase::Recover;
                }
            }
            Phase::Correct if dy >= DCB_EXIT_LEVEL => {
                episodes.push(EpisodeRecord {
                    kind: Label::Dcb,
                    onset_t: episode_onset_idx as f64 * dt,
                    peak_t: episode_peak_t,
                    recovery_t: episode_recovery,
                    end_t: t,
                });
                phase = Phase::Keeping;
                cooldown_until = t + EPISODE_COOLDOWN;
            }
            Phase::Recover if dy >= DCB_EXIT_LEVEL => {
                phase = Phase::Keeping;
                cooldown_until = t + EPISODE_COOLDOWN;
            }
            _ => {}
        }

        // Integrate the point-mass kinematics; these exact update rules are
        // what downstream consumers assume of the emitted columns.
        psi += psidot * dt;
        dy += v * points[i].psi.sin() * dt;
        if profile.kinematics_noise_std > 0.0 {
            let k_noise: f64 = StandardNormal.sample(&mut rng);
            dy += profile.kinematics_noise_std * k_noise;
        }

        // Slow stochastic drift of target offset, speed, and curvature.
        let j_noise: f64 = StandardNormal.sample(&mut rng);
        jitter = jitter_decay * jitter
            + profile.offset_jitter * (1.0 - jitter_decay * jitter_decay).sqrt() * j_noise;
        let v_noise: f64 = StandardNormal.sample(&mut rng);
        v = profile.speed_mean
            + speed_decay * (v - profile.speed_mean)
            + profile.speed_std * (1.0 - speed_decay * speed_decay).sqrt() * v_noise;
        v = v.max(0.5);
        let r_noise: f64 = StandardNormal.sample(&mut rng);
        rho = (rho_base + 1e-5 * r_noise).clamp(-9e-5, 9e-5);
    }

    // Resolve an episode still open at the end of the trace. Recovered
    // corrections keep their kind; a drift that crossed the departure
    // threshold without recovering is an honest LDB; anything else is too
    // truncated to classify and its labels are erased.
    if matches!(phase, Phase::Drift { .. } | Phase::Correct) {
        let end_t = (steps - 1) as f64 * dt;
        let kind = if episode_kind == Label::Dcb && episode_recovery.is_some() {
            Some(Label::Dcb)
        } else if episode_peak_dy < -0.05 && episode_recovery.is_none() {
            Some(Label::Ldb)
        } else {
            None
        };
        match kind {
            Some(kind) => {
                for label in labels.iter_mut().skip(episode_onset_idx) {
                    *label = kind;
                }
                episodes.push(EpisodeRecord {
                    kind,
                    onset_t: episode_onset_idx as f64 * dt,
                    peak_t: episode_peak_t,
                    recovery_t: episode_recovery,
                    end_t,
                });
            }
            None => {
                for label in labels.iter_mut().skip(episode_onset_idx) {
                    *label = Label::None;
                }
            }
        }
    }

    let trace = TraceFile {
        source: format!("{}.csv", profile.driver_id),
        driver_id: profile.driver_id.clone(),
        turn_signal: Some(vec![false; points.len()]),
        lane_width: Some(vec![lane_width; points.len()]),
        labels: Some(labels.clone()),
        points: points.clone(),
    };
    let truth = GroundTruthLog {
        driver_id: profile.driver_id.clone(),
        t: points.iter().map(|p| p.t).collect(),
        labels,
        episodes,
    };
    Ok((trace, truth))
}

/// Entry of a corpus manifest, echoing the exact generation inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub lane_width: f64,
    pub duration: f64,
    pub profiles: Vec<DriverProfile>,
}

/// Generates one trace + ground-truth pair per profile into `out_dir`,
/// plus a manifest recording every seed and parameter.
pub fn generate_corpus(
    profiles: &[DriverProfile],
    duration: f64,
    lane_width: f64,
    out_dir: &Path,
) -> Result<CorpusManifest, SynthError> {
    if profiles.is_empty() {
        return Err(SynthError::EmptyProfileList);
    }
    fs::create_dir_all(out_dir).map_err(|e| SynthError::IoFailure {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    for profile in profiles {
        let (trace, truth) = generate_trace(profile, duration, lane_width)?;
        let csv_path = out_dir.join(format!("{}.csv", profile.driver_id));
        write_trace_csv(&trace, &csv_path).map_err(|e| SynthError::IoFailure {
            path: csv_path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
        let truth_path = out_dir.join(format!("{}.truth.json", profile.driver_id));
        let json = crate::jsonfmt::to_string_pretty(&truth).expect("serializable");
        fs::write(&truth_path, json).map_err(|e| SynthError::IoFailure {
            path: truth_path.display().to_string(),
            source: e,
        })?;
    }
    let manifest = CorpusManifest {
        lane_width,
        duration,
        profiles: profiles.to_vec(),
    };
    let manifest_path = out_dir.join("manifest.json");
    let json = crate::jsonfmt::to_string_pretty(&manifest).expect("serializable");
    fs::write(&manifest_path, json).map_err(|e| SynthError::IoFailure {
        path: manifest_path.display().to_string(),
        source: e,
    })?;
    Ok(manifest)
}

/// Ten drivers spanning centered-to-boundary-hugging styles, mirroring the
/// spread of warning frequencies a mixed population produces.
pub fn default_profiles(seed: u64) -> Vec<DriverProfile> {
    let styles: [(f64, f64, f64, f64, f64); 10] = [
        // (preferred_offset, offset_jitter, drift_rate, correction_prob, speed_mean)
        (0.15, 0.10, 0.022, 0.75, 29.0),
        (0.25, 0.12, 0.028, 0.70, 27.0),
        (0.55, 0.14, 0.035, 0.65, 24.0),
        (0.60, 0.13, 0.032, 0.70, 26.0),
        (0.05, 0.08, 0.018, 0.85, 30.0),
        (0.08, 0.09, 0.018, 0.80, 28.0),
        (0.50, 0.12, 0.030, 0.60, 23.0),
        (0.45, 0.12, 0.028, 0.70, 25.0),
        (0.35, 0.11, 0.026, 0.75, 26.5),
        (0.30, 0.10, 0.024, 0.72, 27.5),
    ];
    styles
        .iter()
        .enumerate()
        .map(|(i, &(offset, jitter, rate, corr, speed))| DriverProfile {
            driver_id: format!("d{:02}", i + 1),
            preferred_offset: offset,
            offset_jitter: jitter,
            drift_rate: rate,
            correction_prob: corr,
            speed_mean: speed,
            speed_std: 0.8,
            yaw_noise_std: 0.004,
            kinematics_noise_std: 0.0,
            seed: derive_seed(seed, &[0x70726f66, i as u64]),
        })
        .collect()
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthLog, SynthError> {
    let text = fs::read_to_string(path).map_err(|e| SynthError::IoFailure {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| SynthError::IoFailure {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_point, DEFAULT_LANE_WIDTH};

    fn base_profile() -> DriverProfile {
        DriverProfile {
            driver_id: "t1".into(),
            preferred_offset: 0.6,
            offset_jitter: 0.1,
            drift_rate: 0.02,
            correction_prob: 0.7,
            speed_mean: 25.0,
            speed_std: 0.8,
            yaw_noise_std: 0.004,
            kinematics_noise_std: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn noiseless_profile_converges_to_preferred_offset() {
        let profile = DriverProfile {
            offset_jitter: 0.0,
            drift_rate: 0.0,
            yaw_noise_std: 0.0,
            speed_std: 0.0,
            ..base_profile()
        };
        let (trace, truth) = generate_trace(&profile, 120.0, DEFAULT_LANE_WIDTH).unwrap();
        let target = DEFAULT_LANE_WIDTH / 2.0 - profile.preferred_offset;
        let tail = &trace.points[trace.points.len() - 100..];
        for p in tail {
            assert!((p.dy - target).abs() < 1e-3, "dy = {} vs {}", p.dy, target);
        }
        assert!(truth.episodes.is_empty());
        assert!(truth.labels.iter().all(|&l| l == Label::None));
    }

    #[test]
    fn generation_is_reproducible() {
        let profile = base_profile();
        let (a, ta) = generate_trace(&profile, 200.0, DEFAULT_LANE_WIDTH).unwrap();
        let (b, tb) = generate_trace(&profile, 200.0, DEFAULT_LANE_WIDTH).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn traces_pass_domain_validation() {
        let (trace, _) = generate_trace(&base_profile(), 300.0, DEFAULT_LANE_WIDTH).unwrap();
        for p in &trace.points {
            assert!(validate_point(p).is_ok());
        }
        for w in trace.points.windows(2) {
            assert!((w[1].t - w[0].t - SAMPLE_DT).abs() < 1e-9);
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn kinematic_self_consistency() {
        let (trace, _) = generate_trace(&base_profile(), 300.0, DEFAULT_LANE_WIDTH).unwrap();
        for w in trace.points.windows(2) {
            let expect_dy = w[0].dy + w[0].v * w[0].psi.sin() * SAMPLE_DT;
            assert!((w[1].dy - expect_dy).abs() < 1e-9);
            let expect_psi = w[0].psi + w[0].psidot * SAMPLE_DT;
            assert!((w[1].psi - expect_psi).abs() < 1e-9);
        }
    }

    #[test]
    fn all_corrections_recover_when_correction_prob_is_one() {
        let profile = DriverProfile {
            correction_prob: 1.0,
            drift_rate: 0.03,
            ..base_profile()
        };
        let (trace, truth) = generate_trace(&profile, 10_000.0, DEFAULT_LANE_WIDTH).unwrap();
        assert!(
            truth.episodes.iter().filter(|e| e.kind == Label::Dcb).count() >= 20,
            "expected several episodes, got {:?}",
            truth.episodes.len()
        );
        // Post-hoc scan of the emitted trace: within every DCB episode the
        // displacement must climb back above the recovery threshold.
        for ep in truth.episodes.iter().filter(|e| e.kind == Label::Dcb) {
            let recovered = trace
                .points
                .iter()
                .filter(|p| p.t >= ep.peak_t && p.t <= ep.end_t)
                .any(|p| p.dy > RECOVERY_THRESHOLD);
            assert!(recovered, "episode at {} never recovered", ep.onset_t);
            assert!(ep.recovery_t.is_some());
        }
    }

    #[test]
    fn ldb_episodes_cross_without_recovery() {
        let profile = DriverProfile {
            correction_prob: 0.0,
            drift_rate: 0.02,
            ..base_profile()
        };
        let (trace, truth) = generate_trace(&profile, 2000.0, DEFAULT_LANE_WIDTH).unwrap();
        let ldb: Vec<_> = truth.episodes.iter().filter(|e| e.kind == Label::Ldb).collect();
        assert!(!ldb.is_empty());
        for ep in &ldb {
            let in_episode: Vec<_> = trace
                .points
                .iter()
                .filter(|p| p.t >= ep.onset_t && p.t <= ep.end_t)
                .collect();
            let min_dy = in_episode.iter().map(|p| p.dy).fold(f64::INFINITY, f64::min);
            assert!(min_dy < -0.05, "departure too shallow: {min_dy}");
            // After first crossing below the crossing threshold, no sample
            // within the episode exceeds the recovery threshold.
            let mut crossed = false;
            for p in &in_episode {
                if p.dy < -0.05 {
                    crossed = true;
                }
                if crossed {
                    assert!(p.dy <= RECOVERY_THRESHOLD);
                }
            }
        }
    }

    #[test]
    fn labels_match_episode_table() {
        let (trace, truth) = generate_trace(&base_profile(), 1000.0, DEFAULT_LANE_WIDTH).unwrap();
        assert_eq!(trace.points.len(), truth.labels.len());
        for (p, &label) in trace.points.iter().zip(truth.labels.iter()) {
            let inside = truth
                .episodes
                .iter()
                .find(|e| p.t >= e.onset_t && p.t <= e.end_t);
            match inside {
                Some(e) => assert_eq!(label, e.kind, "at t = {}", p.t),
                None => assert_eq!(label, Label::None, "at t = {}", p.t),
            }
        }
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let bad = DriverProfile {
            correction_prob: 1.5,
            ..base_profile()
        };
        assert!(matches!(
            generate_trace(&bad, 100.0, DEFAULT_LANE_WIDTH),
            Err(SynthError::InvalidProfile { .. })
        ));
        assert!(matches!(
            generate_trace(&base_profile(), 10.0, DEFAULT_LANE_WIDTH),
            Err(SynthError::InvalidProfile { .. })
        ));
    }

    #[test]
    fn kinematics_noise_breaks_exact_consistency_only_when_set() {
        let noisy = DriverProfile {
            kinematics_noise_std: 0.01,
            ..base_profile()
        };
        let (trace, _) = generate_trace(&noisy, 120.0, DEFAULT_LANE_WIDTH).unwrap();
        let mut max_dev: f64 = 0.0;
        for w in trace.points.windows(2) {
            let expect = w[0].dy + w[0].v * w[0].psi.sin() * SAMPLE_DT;
            max_dev = max_dev.max((w[1].dy - expect).abs());
        }
        assert!(max_dev > 1e-4, "process noise had no effect: {max_dev}");
        assert!(max_dev < 0.1, "process noise implausibly large: {max_dev}");
        for p in &trace.points {
            assert!(validate_point(p).is_ok());
        }
    }

    #[test]
    fn corpus_writes_one_pair_per_profile_plus_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let profiles = default_profiles(3);
        assert_eq!(profiles.len(), 10);
        generate_corpus(&profiles[..3], 60.0, DEFAULT_LANE_WIDTH, dir.path()).unwrap();
        for p in &profiles[..3] {
            assert!(dir.path().join(format!("{}.csv", p.driver_id)).exists());
            assert!(dir.path().join(format!("{}.truth.json", p.driver_id)).exists());
        }
        let manifest: CorpusManifest = serde_json::from_str(
            &fs::read_to_string(dir.path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.profiles.len(), 3);

        assert!(matches!(
            generate_corpus(&[], 60.0, DEFAULT_LANE_WIDTH, dir.path()),
            Err(SynthError::EmptyProfileList)
        ));
    }

    #[test]
    fn planted_episodes_land_inside_extracted_events() {
        // Generator ground truth as the oracle: every labeled episode must
        // be wholly contained in exactly one extracted event.
        let (trace, truth) = generate_trace(&base_profile(), 800.0, DEFAULT_LANE_WIDTH).unwrap();
        let events = crate::dataio::extract_events(&trace);
        assert!(!truth.episodes.is_empty());
        for ep in &truth.episodes {
            let containing: Vec<_> = events
                .iter()
                .filter(|e| {
                    let t0 = e.points.first().unwrap().t;
                    let t1 = e.points.last().unwrap().t;
                    ep.onset_t >= t0 && ep.end_t <= t1
                })
                .collect();
            assert_eq!(
                containing.len(),
                1,
                "episode [{}, {}] contained in {} events",
                ep.onset_t,
                ep.end_t,
                containing.len()
            );
        }
    }

    #[test]
    fn generated_corpus_yields_events() {
        let (trace, _) = generate_trace(&base_profile(), 600.0, DEFAULT_LANE_WIDTH).unwrap();
        let events = crate::dataio::extract_events(&trace);
        assert!(
            events.len() >= 3,
            "expected several events from 600 s, got {}",
            events.len()
        );
        for e in &events {
            assert!(e.duration() >= 15.0 - 1e-9);
        }
    }
}
