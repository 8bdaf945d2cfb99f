//! Latent skill estimation from cursor and joint-angle observations.
//!
//! The particle filter is the estimator used by the curricula; the EKF and
//! UKF are baselines for the consistency benchmark.

mod bench;
mod gaussian;
mod particle;

pub use bench::{filter_consistency_bench, BenchConfig, BenchResult};
pub use gaussian::{
    ekf_update, gaussian_filter_step, kalman_update, ukf_update, ukf_weights, Belief, FilterKind,
};
pub use particle::{
    effective_sample_size, init_ensemble, pf_assimilate_trial, pf_estimate, pf_step,
    systematic_resample, ParticleEnsemble,
};

use serde::{Deserialize, Serialize};

use crate::model::{Joint, Point, Sample};
use crate::{Error, Result};

/// One observation of the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: Point,
    pub q: Joint,
}

impl From<&Sample> for Observation {
    fn from(s: &Sample) -> Self {
        Self { x: s.x, q: s.q }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Cursor likelihood std, grid units.
    pub likelihood_std_x: f64,
    /// Joint-angle likelihood std, degrees.
    pub likelihood_std_q: f64,
    pub resample_ess_fraction: f64,
    /// Expected `|W_hat - prior|_F / |W|_F` of the initial particle cloud.
    pub init_spread: f64,
    /// Kernel bandwidth of the weight jitter applied after resampling,
    /// as a fraction of the ensemble spread. 0 disables it.
    pub roughening: f64,
    /// Reset the observed components of every particle to each new
    /// observation after weighting.
    pub snap_observed: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            likelihood_std_x: 0.05,
            likelihood_std_q: 0.02f64.to_degrees(),
            resample_ess_fraction: 0.5,
            init_spread: 0.2,
            roughening: 0.1,
            snap_observed: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_particles >= 2
            && self.likelihood_std_x > 0.0
            && self.likelihood_std_q > 0.0
            && self.resample_ess_fraction > 0.0
            && self.resample_ess_fraction <= 1.0
            && self.init_spread >= 0.0
            && (0.0..1.0).contains(&self.roughening);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid filter configuration: {self:?}")))
        }
    }
}
