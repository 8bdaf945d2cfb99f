//! Human motor learning (HML) model: synergy system, learner state, game
//! geometry and the stochastic intra-trial dynamics.

mod dynamics;
mod game;
mod params;
mod state;
mod system;

pub(crate) use dynamics::deterministic_step;
pub use dynamics::{
    drift_rhs, integrate_steps, integrate_trial, step, trial_transition, Hml, DIVERGENCE_LIMIT,
};
pub use game::{capture_check, GameConfig, Sample, TrialRecord};
pub use params::{ModelParams, PUBLISHED_PARAMS_JSON};
pub use state::{LearnerState, STATE_DIM};
pub use system::{synthesize_system, CalibrationSpec, SynergySystem};

use nalgebra::{SMatrix, SVector, Vector2};

pub const N_JOINTS: usize = 20;
pub const N_SYNERGIES: usize = 4;

/// A point in game-grid units.
pub type Point = Vector2<f64>;
pub type Joint = SVector<f64, N_JOINTS>;
/// Synergy basis, one synergy per row.
pub type Synergies = SMatrix<f64, N_SYNERGIES, N_JOINTS>;
/// Synergy weights (2 cursor axes by 4 synergies).
pub type Weights = SMatrix<f64, 2, N_SYNERGIES>;
/// Joint-to-cursor mapping.
pub type Mapping = SMatrix<f64, 2, N_JOINTS>;

/// Row-major (de)serialization of fixed-size matrices as nested arrays.
pub(crate) mod rows {
    use nalgebra::SMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const R: usize, const C: usize>(
        m: &SMatrix<f64, R, C>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..R).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const R: usize, const C: usize>(
        d: D,
    ) -> Result<SMatrix<f64, R, C>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        if rows.len() != R || rows.iter().any(|r| r.len() != C) {
            return Err(D::Error::custom(format!("expected a {R}x{C} matrix")));
        }
        Ok(SMatrix::from_fn(|i, j| rows[i][j]))
    }
}

/// Plain-array (de)serialization of fixed-size vectors.
pub(crate) mod vector {
    use nalgebra::SVector;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(
        v: &SVector<f64, N>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<SVector<f64, N>, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        if v.len() != N {
            return Err(D::Error::custom(format!("expected {N} entries, got {}", v.len())));
        }
        Ok(SVector::from_column_slice(&v))
    }
}
