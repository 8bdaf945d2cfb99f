use nalgebra::{DVector, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rows, vector, Joint, Point, SynergySystem, Weights, N_JOINTS, N_SYNERGIES};

/// Concatenated learner state: cursor, implicit synergy weights, filtered
/// joint increments, joint velocities and joint angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    #[serde(with = "vector")]
    pub x: Point,
    #[serde(with = "rows")]
    pub w_hat: Weights,
    #[serde(with = "vector")]
    pub delta_q: Joint,
    #[serde(with = "vector")]
    pub u: Joint,
    #[serde(with = "vector")]
    pub q: Joint,
}

pub const STATE_DIM: usize = 2 + 2 * N_SYNERGIES + 3 * N_JOINTS;

const OFF_W: usize = 2;
const OFF_DQ: usize = OFF_W + 2 * N_SYNERGIES;
const OFF_U: usize = OFF_DQ + N_JOINTS;
const OFF_Q: usize = OFF_U + N_JOINTS;

impl LearnerState {
    /// Learner at rest at the mean posture with the given weight estimate.
    pub fn at_rest(system: &SynergySystem, w_hat: Weights) -> Self {
        Self {
            x: system.window_center(),
            w_hat,
            delta_q: Joint::zeros(),
            u: Joint::zeros(),
            q: Joint::zeros(),
        }
    }

    /// Prior mean of a naive learner's weight estimate.
    pub fn naive_prior(system: &SynergySystem) -> Weights {
        system.w_true * 0.1
    }

    /// A naive learner at rest with weights `(0.1 I + E) W`, `E` a 2x2
    /// matrix of independent `N(0, 0.05^2)` entries. The estimate mixes
    /// the two cursor axes but spans the same synergy subspace as `W`.
    pub fn naive<R: Rng + ?Sized>(system: &SynergySystem, rng: &mut R) -> Self {
        let mix = Matrix2::identity() * 0.1 + Matrix2::from_fn(|_, _| 0.05 * crate::rng::normal(rng));
        Self::at_rest(system, mix * system.w_true)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter()
            .chain(self.w_hat.iter())
            .chain(self.delta_q.iter())
            .chain(self.u.iter())
            .chain(self.q.iter())
            .all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.x.amax()
            .max(self.w_hat.amax())
            .max(self.delta_q.amax())
            .max(self.u.amax())
            .max(self.q.amax())
    }

    pub fn zeros() -> Self {
        Self {
            x: Point::zeros(),
            w_hat: Weights::zeros(),
            delta_q: Joint::zeros(),
            u: Joint::zeros(),
            q: Joint::zeros(),
        }
    }

    /// Flattens in the order `x, W_hat (row-major), delta_q, u, q`.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v = DVector::zeros(STATE_DIM);
        v.rows_mut(0, 2).copy_from(&self.x);
        for i in 0..2 {
            for j in 0..N_SYNERGIES {
                v[OFF_W + i * N_SYNERGIES + j] = self.w_hat[(i, j)];
            }
        }
        v.rows_mut(OFF_DQ, N_JOINTS).copy_from(&self.delta_q);
        v.rows_mut(OFF_U, N_JOINTS).copy_from(&self.u);
        v.rows_mut(OFF_Q, N_JOINTS).copy_from(&self.q);
        v
    }

    pub fn from_flat(v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), STATE_DIM, "flat learner state has the wrong length");
        Self {
            x: Point::new(v[0], v[1]),
            w_hat: Weights::from_fn(|i, j| v[OFF_W + i * N_SYNERGIES + j]),
            delta_q: Joint::from_iterator(v.rows(OFF_DQ, N_JOINTS).iter().copied()),
            u: Joint::from_iterator(v.rows(OFF_U, N_JOINTS).iter().copied()),
            q: Joint::from_iterator(v.rows(OFF_Q, N_JOINTS).iter().copied()),
        }
    }

    /// Indices of the observed components `(x, q)` in the flat layout.
    pub fn observed_indices() -> impl Iterator<Item = usize> {
        (0..2).chain(OFF_Q..OFF_Q + N_JOINTS)
    }

    /// Indices of the weight-estimate block in the flat layout.
    pub fn weight_indices() -> std::ops::Range<usize> {
        OFF_W..OFF_DQ
    }

    /// `self += k * other`, component-wise.
    pub fn axpy(&mut self, k: f64, other: &Self) {
        self.x += other.x * k;
        self.w_hat += other.w_hat * k;
        self.delta_q += other.delta_q * k;
        self.u += other.u * k;
        self.q += other.q * k;
    }

    /// Weighted mean of a set of states.
    pub fn weighted_mean<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a LearnerState)>,
    {
        let mut acc = Self::zeros();
        for (w, s) in items {
            acc.axpy(w, s);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthesize_system;
    use crate::rng;

    #[test]
    fn flat_layout_round_trips() {
        let sys = synthesize_system(1, 100).unwrap();
        let mut s = LearnerState::naive(&sys, &mut rng::stream(3));
        s.u[4] = 2.0;
        s.q[19] = -1.5;
        s.delta_q[0] = 0.25;
        let v = s.to_flat();
        assert_eq!(v.len(), STATE_DIM);
        assert_eq!(LearnerState::from_flat(&v), s);
        let obs: Vec<usize> = LearnerState::observed_indices().collect();
        assert_eq!(obs.len(), 22);
        assert_eq!(v[obs[21]], -1.5);
        assert_eq!(LearnerState::weight_indices().len(), 8);
    }

    #[test]
    fn naive_learner_starts_far_from_the_mapping() {
        for seed in 0..20 {
            let sys = synthesize_system(seed, 100).unwrap();
            let s = LearnerState::naive(&sys, &mut rng::stream(seed));
            let fme = sys.fme(&s.w_hat);
            assert!((0.75..1.05).contains(&fme), "initial FME {fme}");
            assert_eq!(s.x, sys.window_center());
            // same row space as W
            let mut stacked = nalgebra::SMatrix::<f64, 4, 4>::zeros();
            stacked.fixed_rows_mut::<2>(0).copy_from(&s.w_hat);
            stacked.fixed_rows_mut::<2>(2).copy_from(&sys.w_true);
            assert_eq!(stacked.rank(1e-9 * sys.w_true.norm()), 2);
        }
    }
}
