use serde::{Deserialize, Serialize};

use super::{vector, Joint, Point};
use crate::{Error, Result};

/// Target capture game geometry and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(with = "points")]
    pub targets: Vec<Point>,
    /// Half width of a target square (grid units).
    pub target_half_width: f64,
    /// Per-axis sample variance bound for a stable capture (units^2).
    pub capture_variance_threshold: f64,
    /// Consecutive samples that must satisfy the capture rule.
    pub capture_window: usize,
    /// Sampling and integration rate (Hz).
    pub sample_rate: f64,
    /// Reaching-error cutoff after movement start (s).
    pub trial_cutoff: f64,
    /// Hard cap on simulated trial length (s).
    pub trial_max_duration: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            targets: vec![
                Point::new(0.5, 4.5),
                Point::new(2.5, 0.5),
                Point::new(2.5, 2.5),
                Point::new(4.5, 4.5),
            ],
            target_half_width: 0.5,
            capture_variance_threshold: 0.0025,
            capture_window: 15,
            sample_rate: 100.0,
            trial_cutoff: 2.0,
            trial_max_duration: 5.0,
        }
    }
}

impl GameConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn max_steps(&self) -> usize {
        ((self.trial_max_duration * self.sample_rate).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capture_window < 1 || !(self.sample_rate > 0.0) {
            return Err(Error::InvalidArgument("capture window and sample rate must be positive".into()));
        }
        if self.targets.len() < 2 {
            return Err(Error::InvalidArgument("need at least two targets".into()));
        }
        if self
            .targets
            .iter()
            .any(|t| !(0.0..=5.0).contains(&t.x) || !(0.0..=5.0).contains(&t.y))
        {
            return Err(Error::InvalidArgument("targets must lie inside the 5x5 window".into()));
        }
        Ok(())
    }

    pub fn target_index(&self, p: &Point) -> Option<usize> {
        self.targets.iter().position(|t| (t - p).norm() < 1e-9)
    }
}

/// Stable-capture rule over the last `capture_window` cursor samples:
/// every sample inside the target square and per-axis sample variance below
/// the threshold.
pub fn capture_check(window: &[Point], target: &Point, game: &GameConfig) -> Result<bool> {
    if window.len() != game.capture_window {
        return Err(Error::ShortWindow { got: window.len(), expected: game.capture_window });
    }
    Ok(window_is_captured(window, target, game))
}

pub(crate) fn window_is_captured(window: &[Point], target: &Point, game: &GameConfig) -> bool {
    let inside = window
        .iter()
        .all(|p| (p - target).amax() <= game.target_half_width);
    if !inside {
        return false;
    }
    let n = window.len() as f64;
    if window.len() < 2 {
        return true;
    }
    let mean = window.iter().fold(Point::zeros(), |acc, p| acc + p) / n;
    let var = window
        .iter()
        .fold(Point::zeros(), |acc, p| acc + (p - mean).component_mul(&(p - mean)))
        / (n - 1.0);
    var.x < game.capture_variance_threshold && var.y < game.capture_variance_threshold
}

/// One recorded cursor/joint sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    #[serde(with = "vector")]
    pub x: Point,
    #[serde(with = "vector")]
    pub q: Joint,
}

/// A simulated game trial. `samples[0]` is the state at trial start; each
/// integration step appends one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(with = "opt_point")]
    pub target_from: Option<Point>,
    #[serde(with = "vector")]
    pub target_to: Point,
    pub samples: Vec<Sample>,
    pub captured: bool,
    pub duration: f64,
}

impl TrialRecord {
    pub fn n_steps(&self) -> usize {
        self.samples.len().saturating_sub(1)
    }

    pub fn start(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn end(&self) -> &Sample {
        self.samples.last().expect("trial record has a start sample")
    }

    pub fn cursor(&self) -> Vec<Point> {
        self.samples.iter().map(|s| s.x).collect()
    }
}

mod points {
    use super::Point;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Point], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point>, D::Error> {
        let v: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|[x, y]| Point::new(x, y)).collect())
    }
}

mod opt_point {
    use super::Point;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Point>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|p| [p.x, p.y]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Point>, D::Error> {
        Ok(Option::<[f64; 2]>::deserialize(d)?.map(|[x, y]| Point::new(x, y)))
    }
}
