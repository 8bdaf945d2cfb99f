use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters of the HML dynamics.
///
/// Joint angles are in degrees and cursor coordinates in calibration units
/// (see [`SynergySystem::unit_scale`](super::SynergySystem)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Forward learning rate.
    pub gamma: f64,
    /// Inverse learning rate.
    pub eta: f64,
    /// Optimality parameter.
    pub mu: f64,
    /// Control intensity.
    pub k_p: f64,
    /// Exploratory noise intensity on joint velocities.
    pub sigma_u: f64,
    /// Perceptual noise intensity on filtered joint increments.
    pub sigma_q: f64,
    /// Perceptual recency.
    pub a: f64,
}

/// Population-mean fit shipped with the crate.
pub const PUBLISHED_PARAMS_JSON: &str = include_str!("../../data/published_params.json");

impl Default for ModelParams {
    fn default() -> Self {
        Self::published()
    }
}

impl ModelParams {
    pub const FITTED_NAMES: [&'static str; 6] = ["gamma", "eta", "mu", "k_p", "sigma_u", "sigma_q"];

    pub fn published() -> Self {
        Self {
            gamma: 0.0001,
            eta: 0.6348,
            mu: 5.7399,
            k_p: 11.3432,
            sigma_u: 0.8358,
            sigma_q: 0.0010,
            a: 10.0,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.sigma_u = 0.0;
        self.sigma_q = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.eta, self.mu, self.k_p, self.sigma_u, self.sigma_q, self.a];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "model parameters must be finite and non-negative: {self:?}"
            )));
        }
        if self.a <= 0.0 || self.mu <= 0.0 {
            return Err(Error::InvalidArgument("a and mu must be positive".into()));
        }
        Ok(())
    }

    /// The six fitted fields in canonical order.
    pub fn fitted(&self) -> [f64; 6] {
        [self.gamma, self.eta, self.mu, self.k_p, self.sigma_u, self.sigma_q]
    }

    pub fn with_fitted(&self, v: &[f64; 6]) -> Self {
        Self {
            gamma: v[0],
            eta: v[1],
            mu: v[2],
            k_p: v[3],
            sigma_u: v[4],
            sigma_q: v[5],
            a: self.a,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("model parameters: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }
}

impl std::fmt::Display for ModelParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[gamma={}, eta={}, mu={}, k_p={}, sigma_u={}, sigma_q={}, a={}]",
            self.gamma, self.eta, self.mu, self.k_p, self.sigma_u, self.sigma_q, self.a
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_published_values() {
        let p = ModelParams::from_json(PUBLISHED_PARAMS_JSON).unwrap();
        assert_eq!(p, ModelParams::published());
        assert_eq!(p.fitted(), [0.0001, 0.6348, 5.7399, 11.3432, 0.8358, 0.0010]);
        assert_eq!(p.a, 10.0);
    }

    #[test]
    fn rejects_bad_values() {
        let mut p = ModelParams::published();
        p.a = 0.0;
        assert!(p.validate().is_err());
        p.a = 10.0;
        p.gamma = -1.0;
        assert!(p.validate().is_err());
        assert!(ModelParams::from_json(r#"{"gamma": 1}"#).is_err());
    }

    #[test]
    fn fitted_round_trip_keeps_recency() {
        let p = ModelParams::published();
        let q = p.with_fitted(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(q.a, p.a);
        assert_eq!(q.fitted(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
