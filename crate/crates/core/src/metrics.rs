//! Task-performance and learning metrics.

use serde::{Deserialize, Serialize};

use crate::model::{Mapping, Point, TrialRecord};
use crate::{Error, Result};

/// Cursor speed (units/s) that counts as moving.
pub const MOVEMENT_SPEED_THRESHOLD: f64 = 0.05;
/// Consecutive fast samples required to declare movement onset.
pub const MOVEMENT_SUSTAIN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// Reaching error, grid units.
    pub re: f64,
    /// Straightness of trajectory.
    pub sot: f64,
    /// Trajectory error against a reference, when one is available.
    pub te: Option<f64>,
}

impl TrialMetrics {
    /// RE and SoT of a trial. A trial that never leaves its start point has
    /// SoT 0.
    pub fn of(record: &TrialRecord, cutoff: f64) -> Self {
        let re = reaching_error(record, &record.target_to, cutoff);
        let sot = straightness(record).unwrap_or(0.0);
        Self { re, sot, te: None }
    }
}

/// Index of the first sample of a run of `MOVEMENT_SUSTAIN` inter-sample
/// speeds above the threshold, or 0 when the cursor never moves.
pub fn movement_onset(record: &TrialRecord) -> usize {
    let s = &record.samples;
    let mut run = 0;
    for i in 1..s.len() {
        let dt = s[i].t - s[i - 1].t;
        let speed = (s[i].x - s[i - 1].x).norm() / dt;
        if speed > MOVEMENT_SPEED_THRESHOLD {
            run += 1;
            if run == MOVEMENT_SUSTAIN {
                return i - MOVEMENT_SUSTAIN;
            }
        } else {
            run = 0;
        }
    }
    0
}

/// Distance from the cursor to `target` at the end of the movement or
/// `cutoff` seconds after movement onset, whichever comes first.
pub fn reaching_error(record: &TrialRecord, target: &Point, cutoff: f64) -> f64 {
    let s = &record.samples;
    let t_limit = s[movement_onset(record)].t + cutoff;
    let idx = s.partition_point(|p| p.t <= t_limit + 1e-9).max(1) - 1;
    (s[idx].x - target).norm()
}

/// Maximum distance of the cursor path from the start-to-end segment,
/// divided by the segment length.
pub fn straightness(record: &TrialRecord) -> Result<f64> {
    straightness_of(&record.cursor())
}

pub fn straightness_of(path: &[Point]) -> Result<f64> {
    let (Some(a), Some(b)) = (path.first(), path.last()) else {
        return Err(Error::Empty("trajectory"));
    };
    let chord = b - a;
    let len = chord.norm();
    if len <= 1e-9 {
        return Err(Error::UndefinedTrajectory(len));
    }
    let dev = path
        .iter()
        .map(|p| {
            let t = ((p - a).dot(&chord) / (len * len)).clamp(0.0, 1.0);
            (p - (a + chord * t)).norm()
        })
        .fold(0.0, f64::max);
    Ok(dev / len)
}

/// Linear interpolation of a series onto `n` equispaced points in
/// normalized time.
pub fn resample(path: &[Point], n: usize) -> Vec<Point> {
    if path.len() == 1 || n == 1 {
        return vec![path[0]; n];
    }
    let last = (path.len() - 1) as f64;
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64 * last;
            let k = (s.floor() as usize).min(path.len() - 2);
            let f = s - k as f64;
            path[k] * (1.0 - f) + path[k + 1] * f
        })
        .collect()
}

/// Euclidean norm of the stacked pointwise differences, after resampling
/// the shorter series to the length of the longer one.
pub fn trajectory_error(model: &[Point], data: &[Point]) -> Result<f64> {
    if model.is_empty() || data.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let n = model.len().max(data.len());
    let a = if model.len() < n { resample(model, n) } else { model.to_vec() };
    let b = if data.len() < n { resample(data, n) } else { data.to_vec() };
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>().sqrt())
}

/// `|C - C_hat|_F / |C|_F`.
pub fn forward_modeling_error(c: &Mapping, c_hat: &Mapping) -> Result<f64> {
    let n = c.norm();
    if n == 0.0 {
        return Err(Error::ZeroMapping);
    }
    Ok((c - c_hat).norm() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Joint, Sample};
    use proptest::prelude::*;

    fn record(points: &[Point], dt: f64, target: Point) -> TrialRecord {
        let samples: Vec<Sample> = points
            .iter()
            .enumerate()
            .map(|(i, &x)| Sample { t: i as f64 * dt, x, q: Joint::zeros() })
            .collect();
        let duration = samples.last().unwrap().t;
        TrialRecord { target_from: None, target_to: target, samples, captured: true, duration }
    }

    #[test]
    fn reaching_error_examples() {
        let target = Point::new(2.5, 2.5);
        let path: Vec<Point> = (0..=100).map(|i| Point::new(0.5 + 0.02 * i as f64, 2.5)).collect();
        assert!(reaching_error(&record(&path, 0.01, target), &target, 2.0) < 1e-12);

        let still = vec![Point::new(2.5, 3.7); 300];
        assert!((reaching_error(&record(&still, 0.01, target), &target, 2.0) - 1.2).abs() < 1e-12);

        // crosses the target at t = 1 s, ends 0.3 past it at t = 1.5 s
        let over: Vec<Point> = (0..=150)
            .map(|i| {
                let t = i as f64 * 0.01;
                let x = if t <= 1.0 { 0.5 + 2.0 * t } else { 2.5 + 0.6 * (t - 1.0) };
                Point::new(x, 2.5)
            })
            .collect();
        assert!((reaching_error(&record(&over, 0.01, target), &target, 2.0) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn cutoff_applies_from_movement_onset() {
        let target = Point::new(4.0, 0.0);
        let mut path = vec![Point::zeros(); 50];
        path.extend((1..=400).map(|i| Point::new(0.01 * i as f64, 0.0)));
        let rec = record(&path, 0.01, target);
        assert_eq!(movement_onset(&rec), 49);
        // 2 s after onset the cursor is at 2.0
        assert!((reaching_error(&rec, &target, 2.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn straightness_examples() {
        let line: Vec<Point> = (0..20).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        assert!(straightness_of(&line).unwrap() < 1e-12);

        let arc: Vec<Point> = (0..=20000)
            .map(|i| {
                let th = std::f64::consts::PI * (1.0 - i as f64 / 20000.0);
                Point::new(th.cos(), th.sin())
            })
            .collect();
        assert!((straightness_of(&arc).unwrap() - 0.5).abs() < 1e-8);

        let corner = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0)];
        assert!((straightness_of(&corner).unwrap() - 0.5).abs() < 1e-12);

        let closed = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 0.0)];
        assert!(matches!(straightness_of(&closed), Err(Error::UndefinedTrajectory(_))));
    }

    #[test]
    fn segment_distance_is_clamped() {
        let path = [Point::new(0.0, 0.0), Point::new(2.0, 1.0), Point::new(1.0, 0.0)];
        assert!((straightness_of(&path).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn trajectory_error_examples() {
        let a: Vec<Point> = (0..50).map(|i| Point::new(i as f64, 1.0)).collect();
        assert_eq!(trajectory_error(&a, &a).unwrap(), 0.0);
        let b: Vec<Point> = a.iter().map(|p| p + Point::new(0.3, 0.4)).collect();
        assert!((trajectory_error(&a, &b).unwrap() - 0.5 * 50f64.sqrt()).abs() < 1e-12);
        assert!(trajectory_error(&[], &a).is_err());

        let f = |t: f64| Point::new((2.0 * t).sin(), (3.0 * t).cos());
        let coarse: Vec<Point> = (0..=500).map(|i| f(i as f64 / 500.0)).collect();
        let fine: Vec<Point> = (0..=1000).map(|i| f(i as f64 / 1000.0)).collect();
        let up = resample(&coarse, fine.len());
        let worst = up.iter().zip(&fine).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(worst <= 1e-5, "{worst}");
        let err = trajectory_error(&coarse, &fine).unwrap() / (fine.len() as f64).sqrt();
        assert!(err <= 1e-5);
    }

    #[test]
    fn fme_examples() {
        let c = Mapping::from_fn(|i, j| (i * 20 + j) as f64 * 0.1 - 1.3);
        assert_eq!(forward_modeling_error(&c, &c).unwrap(), 0.0);
        assert!((forward_modeling_error(&c, &Mapping::zeros()).unwrap() - 1.0).abs() < 1e-15);
        assert!((forward_modeling_error(&c, &(c * 2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(forward_modeling_error(&Mapping::zeros(), &c), Err(Error::ZeroMapping)));
    }

    fn pts() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..40)
            .prop_map(|v| v.into_iter().map(|(a, b)| Point::new(a, b)).collect())
    }

    proptest! {
        #[test]
        fn straightness_rigid_and_scale_invariant(path in pts(), th in 0.0..6.28f64, k in 0.1..10.0f64, dx in -3.0..3.0f64) {
            prop_assume!((path[0] - path[path.len() - 1]).norm() > 0.1);
            let r = nalgebra::Rotation2::new(th);
            let moved: Vec<Point> = path.iter().map(|p| r * p * k + Point::new(dx, -dx)).collect();
            let a = straightness_of(&path).unwrap();
            let b = straightness_of(&moved).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }

        #[test]
        fn reaching_error_translation_invariant(path in pts(), dx in -3.0..3.0f64, dy in -3.0..3.0f64) {
            let target = Point::new(1.0, 2.0);
            let shift = Point::new(dx, dy);
            let moved: Vec<Point> = path.iter().map(|p| p + shift).collect();
            let a = reaching_error(&record(&path, 0.01, target), &target, 0.1);
            let b = reaching_error(&record(&moved, 0.01, target + shift), &(target + shift), 0.1);
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn fme_scale_invariant(v in prop::collection::vec(-3.0..3.0f64, 80), alpha in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64]) {
            let c = Mapping::from_iterator(v[..40].iter().copied());
            let h = Mapping::from_iterator(v[40..].iter().copied());
            prop_assume!(c.norm() > 1e-3);
            let a = forward_modeling_error(&c, &h).unwrap();
            let b = forward_modeling_error(&(c * alpha), &(h * alpha)).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }
}
