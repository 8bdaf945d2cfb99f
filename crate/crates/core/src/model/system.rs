use nalgebra::{DMatrix, DVector, SMatrix};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{rows, Joint, Mapping, Point, Synergies, Weights, N_JOINTS, N_SYNERGIES};
use crate::{rng, Error, Result};

/// Synergy basis, true weights and the joint-to-cursor mapping of one
/// (synthetic) participant.
///
/// `c` maps joint velocities (deg/s) to cursor velocity in calibration
/// units. One grid unit equals `unit_scale` calibration units, so a cursor
/// displacement in grid units is `c * dq / unit_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynergySystem {
    #[serde(with = "rows")]
    pub phi: Synergies,
    #[serde(with = "rows")]
    pub w_true: Weights,
    #[serde(with = "rows")]
    pub c: Mapping,
    pub grid_side: f64,
    pub unit_scale: f64,
    /// Leading calibration eigenvalues (deg^2), descending.
    pub spectrum: Vec<f64>,
}

/// Shape of the synthetic calibration covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSpec {
    /// Variance of the second principal component (deg^2).
    pub pc2_variance: f64,
    /// Ratio between consecutive eigenvalues.
    pub decay: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self { pc2_variance: 1500.0, decay: 0.55 }
    }
}

const MIN_GAP: f64 = 1e-12;

/// Builds a participant from synthetic calibration postures.
///
/// Postures are drawn from a Gaussian with a random orthonormal eigenbasis
/// and a geometrically decaying spectrum. PCA on the centered sample gives
/// the synergy basis (four leading modes) and the mapping (modes 2 and 3
/// scaled by the square roots of their eigenvalues).
pub fn synthesize_system(seed: u64, n_postures: usize) -> Result<SynergySystem> {
    synthesize_system_with(seed, n_postures, &CalibrationSpec::default())
}

pub fn synthesize_system_with(
    seed: u64,
    n_postures: usize,
    spec: &CalibrationSpec,
) -> Result<SynergySystem> {
    if n_postures <= N_JOINTS {
        return Err(Error::InvalidArgument(format!(
            "need more than {N_JOINTS} calibration postures, got {n_postures}"
        )));
    }
    if !(spec.decay > 0.0 && spec.decay <= 1.0 && spec.pc2_variance > 0.0) {
        return Err(Error::InvalidArgument(format!("bad calibration spec {spec:?}")));
    }
    let mut rng = rng::stream(seed);
    let gauss = |rng: &mut rng::Stream| -> f64 { StandardNormal.sample(rng) };

    let basis = {
        let g = DMatrix::<f64>::from_fn(N_JOINTS, N_JOINTS, |_, _| gauss(&mut rng));
        g.qr().q()
    };
    let scale = spec.pc2_variance / spec.decay;
    let stds: Vec<f64> = (0..N_JOINTS).map(|k| (scale * spec.decay.powi(k as i32)).sqrt()).collect();
    let mean_posture = DVector::<f64>::from_fn(N_JOINTS, |_, _| 20.0 + 30.0 * gauss(&mut rng).abs());

    let mut data = DMatrix::<f64>::zeros(n_postures, N_JOINTS);
    for r in 0..n_postures {
        let z = DVector::<f64>::from_fn(N_JOINTS, |k, _| stds[k] * gauss(&mut rng));
        let posture = &mean_posture + &basis * z;
        data.set_row(r, &posture.transpose());
    }
    let mean = data.row_mean();
    for mut r in data.row_iter_mut() {
        r -= &mean;
    }
    let cov = (data.transpose() * &data) / (n_postures as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..N_JOINTS).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    for k in 0..=N_SYNERGIES {
        let gap = values[k] - values[k + 1];
        if gap < MIN_GAP || values[k] < MIN_GAP {
            return Err(Error::DegenerateCovariance(format!(
                "eigenvalues {k} and {} are {:.3e} and {:.3e}",
                k + 1,
                values[k],
                values[k + 1]
            )));
        }
    }

    let mode = |k: usize| -> Joint {
        let mut v = Joint::from_iterator(eig.eigenvectors.column(order[k]).iter().copied());
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        v
    };
    let phi = Synergies::from_fn(|i, j| mode(i)[j]);
    let c = Mapping::from_rows(&[
        (mode(1) * values[1].sqrt()).transpose(),
        (mode(2) * values[2].sqrt()).transpose(),
    ]);
    let w_true = project_onto_synergies(&c, &phi);

    let projections = &data * DMatrix::from_fn(N_JOINTS, 2, |j, i| c[(i, j)]);
    let std_of = |col: usize| -> f64 {
        let v = projections.column(col);
        let m = v.mean();
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_postures as f64 - 1.0)).sqrt()
    };
    let grid_side = 5.0;
    let unit_scale = std_of(0).max(std_of(1)) / (grid_side / 2.0);

    Ok(SynergySystem {
        phi,
        w_true,
        c,
        grid_side,
        unit_scale,
        spectrum: values[..=N_SYNERGIES].to_vec(),
    })
}

/// Least-squares coordinates of the mapping rows in the synergy basis.
pub fn project_onto_synergies(c: &Mapping, phi: &Synergies) -> Weights {
    let gram: SMatrix<f64, N_SYNERGIES, N_SYNERGIES> = phi * phi.transpose();
    let rhs: SMatrix<f64, N_SYNERGIES, 2> = phi * c.transpose();
    let sol = gram.lu().solve(&rhs).expect("synergy basis has full rank");
    sol.transpose()
}

impl SynergySystem {
    pub fn window_center(&self) -> Point {
        Point::new(self.grid_side / 2.0, self.grid_side / 2.0)
    }

    /// Mapping expressed in grid units per degree.
    pub fn c_grid(&self) -> Mapping {
        self.c / self.unit_scale
    }

    pub fn c_hat(&self, w_hat: &Weights) -> Mapping {
        w_hat * self.phi
    }

    /// Forward-modeling error of a weight estimate.
    pub fn fme(&self, w_hat: &Weights) -> f64 {
        crate::metrics::forward_modeling_error(&self.c, &self.c_hat(w_hat)).unwrap_or(f64::NAN)
    }

    pub fn validate(&self) -> Result<()> {
        let ident = self.phi * self.phi.transpose();
        let orth = (ident - SMatrix::<f64, 4, 4>::identity()).amax();
        let recon = (self.c - self.w_true * self.phi).amax();
        if orth > 1e-9 || recon > 1e-9 * self.c.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "synergy system inconsistent (orthonormality {orth:.2e}, reconstruction {recon:.2e})"
            )));
        }
        if !(self.unit_scale > 0.0 && self.grid_side > 0.0) {
            return Err(Error::InvalidArgument("unit scale and grid side must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("synergy system: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system serializes")
    }
}
