//! Monte-Carlo estimate of missing the marker in every captured frame.

use serde::{Deserialize, Serialize};

use crate::detectors::DropoutGate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissEstimate {
    pub per_frame_p: f64,
    pub frames: u32,
    pub trials: u64,
    pub all_missed: u64,
    pub estimate: f64,
    /// Binomial standard error of the estimate.
    pub std_error: f64,
    /// Closed form `(1 - p)^frames`.
    pub analytic: f64,
}

impl MissEstimate {
    /// Distance of the estimate from the closed form in standard errors.
    /// Zero when both agree exactly.
    pub fn z_score(&self) -> f64 {
        let se = (self.analytic * (1.0 - self.analytic) / self.trials as f64).sqrt();
        let diff = (self.estimate - self.analytic).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }
}

pub fn miss_probability_closed_form(per_frame_p: f64, frames: u32) -> f64 {
    (1.0 - per_frame_p).powi(frames as i32)
}

/// Runs `trials` triggers of `frames` captures each, every capture detected
/// with probability `per_frame_p`, and counts triggers with no detection.
pub fn miss_probability_mc(per_frame_p: f64, frames: u32, trials: u64, seed: u64) -> MissEstimate {
    assert!(
        (0.0..=1.0).contains(&per_frame_p),
        "per-frame probability must be within [0, 1]"
    );
    assert!(trials >= 1, "need at least one trial");
    let mut gate = DropoutGate::new(seed);
    let p_miss = 1.0 - per_frame_p;
    let all_missed = (0..trials)
        .filter(|_| (0..frames).all(|_| gate.miss(p_miss)))
        .count() as u64;
    let estimate = all_missed as f64 / trials as f64;
    MissEstimate {
        per_frame_p,
        frames,
        trials,
        all_missed,
        estimate,
        std_error: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
        analytic: miss_probability_closed_form(per_frame_p, frames),
    }
}
