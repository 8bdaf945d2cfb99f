use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{FilterConfig, Observation};
use crate::model::{deterministic_step, Hml, LearnerState, Point, N_JOINTS, STATE_DIM};

/// Central finite-difference step of the EKF Jacobian.
pub const FD_STEP: f64 = 1e-5;
/// Unscented transform spread, prior knowledge and scaling parameters.
const UKF_ALPHA: f64 = 1.0;
const UKF_BETA: f64 = 2.0;
const UKF_KAPPA: f64 = 0.0;
const EIG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Ukf,
}

/// Gaussian belief over the flattened state.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Belief {
    pub fn state(&self) -> LearnerState {
        LearnerState::from_flat(&self.mean)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

/// Symmetrizes and floors the eigenvalues of a covariance that lost
/// positive definiteness.
fn repair(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= EIG_FLOOR) {
        return sym;
    }
    debug!("covariance lost positive definiteness; flooring eigenvalues at {EIG_FLOOR}");
    let floored = eig.eigenvalues.map(|l| l.max(EIG_FLOOR));
    &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose()
}

fn sqrt_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = repair(cov).symmetric_eigen();
            let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&s)
        }
    }
}

/// Kalman update for a measurement that selects the components `h_idx`
/// with independent noise variances `r_diag`. Joseph form.
pub fn kalman_update(
    prior: &Belief,
    h_idx: &[usize],
    z: &DVector<f64>,
    r_diag: &DVector<f64>,
) -> Belief {
    let n = prior.mean.len();
    let m = h_idx.len();
    let h = DMatrix::from_fn(m, n, |i, j| if h_idx[i] == j { 1.0 } else { 0.0 });
    let s = &h * &prior.cov * h.transpose() + DMatrix::from_diagonal(r_diag);
    let s_inv = repair(&s).try_inverse().expect("innovation covariance is invertible");
    let k = &prior.cov * h.transpose() * s_inv;
    let innov = z - &h * &prior.mean;
    let ikh = DMatrix::identity(n, n) - &k * &h;
    let cov = &ikh * &prior.cov * ikh.transpose() + &k * DMatrix::from_diagonal(r_diag) * k.transpose();
    Belief { mean: &prior.mean + &k * innov, cov: (&cov + cov.transpose()) * 0.5 }
}

/// EKF predict through `f` with a central finite-difference Jacobian, then
/// the Kalman update.
pub fn ekf_update<F>(
    prior: &Belief,
    f: F,
    q_diag: &DVector<f64>,
    h_idx: &[usize],
    z: &DVector<f64>,
    r_diag: &DVector<f64>,
) -> Belief
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = prior.mean.len();
    let mean = f(&prior.mean);
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut hi = prior.mean.clone();
        let mut lo = prior.mean.clone();
        hi[j] += FD_STEP;
        lo[j] -= FD_STEP;
        jac.set_column(j, &((f(&hi) - f(&lo)) / (2.0 * FD_STEP)));
    }
    let cov = &jac * &prior.cov * jac.transpose() + DMatrix::from_diagonal(q_diag);
    kalman_update(&Belief { mean, cov: repair(&cov) }, h_idx, z, r_diag)
}

/// Scaled unscented transform weights `(lambda, mean weights, covariance
/// weights)` for dimension `n`.
pub fn ukf_weights(n: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let lambda = UKF_ALPHA * UKF_ALPHA * (nf + UKF_KAPPA) - nf;
    let w = 1.0 / (2.0 * (nf + lambda));
    let mut wm = vec![w; 2 * n + 1];
    let mut wc = wm.clone();
    wm[0] = lambda / (nf + lambda);
    wc[0] = wm[0] + 1.0 - UKF_ALPHA * UKF_ALPHA + UKF_BETA;
    (lambda, wm, wc)
}

fn sigma_points(b: &Belief, lambda: f64) -> Vec<DVector<f64>> {
    let n = b.mean.len();
    let l = sqrt_factor(&(&b.cov * (n as f64 + lambda)));
    let mut pts = Vec::with_capacity(2 * n + 1);
    pts.push(b.mean.clone());
    for j in 0..n {
        pts.push(&b.mean + l.column(j));
    }
    for j in 0..n {
        pts.push(&b.mean - l.column(j));
    }
    pts
}

/// UKF: unscented predict through `f`, then an unscented measurement
/// update from sigma points redrawn around the prediction.
pub fn ukf_update<F>(
    prior: &Belief,
    f: F,
    q_diag: &DVector<f64>,
    h_idx: &[usize],
    z: &DVector<f64>,
    r_diag: &DVector<f64>,
) -> Belief
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = prior.mean.len();
    let (lambda, wm, wc) = ukf_weights(n);
    let prop: Vec<DVector<f64>> = sigma_points(prior, lambda).iter().map(&f).collect();
    let mean = prop.iter().zip(&wm).fold(DVector::zeros(n), |acc, (p, w)| acc + p * *w);
    let mut cov = DMatrix::from_diagonal(q_diag);
    for (p, w) in prop.iter().zip(&wc) {
        let d = p - &mean;
        cov += &d * d.transpose() * *w;
    }
    let pred = Belief { mean, cov: repair(&cov) };

    let pts = sigma_points(&pred, lambda);
    let m = h_idx.len();
    let zs: Vec<DVector<f64>> =
        pts.iter().map(|p| DVector::from_iterator(m, h_idx.iter().map(|&i| p[i]))).collect();
    let z_mean = zs.iter().zip(&wm).fold(DVector::zeros(m), |acc, (p, w)| acc + p * *w);
    let mut s = DMatrix::from_diagonal(r_diag);
    let mut cxz = DMatrix::zeros(n, m);
    for ((p, zp), w) in pts.iter().zip(&zs).zip(&wc) {
        let dz = zp - &z_mean;
        s += &dz * dz.transpose() * *w;
        cxz += (p - &pred.mean) * dz.transpose() * *w;
    }
    let k = &cxz * repair(&s).try_inverse().expect("innovation covariance is invertible");
    let mean = &pred.mean + &k * (z - z_mean);
    let cov = &pred.cov - &k * s * k.transpose();
    Belief { mean, cov: repair(&cov) }
}

/// Process noise variances of one step of length `dt` in the flat layout.
pub(crate) fn process_noise(hml: Hml<'_>, dt: f64) -> DVector<f64> {
    let s = LearnerState {
        delta_q: crate::model::Joint::repeat(hml.params.sigma_q * hml.params.sigma_q * dt),
        u: crate::model::Joint::repeat(hml.params.sigma_u * hml.params.sigma_u * dt),
        ..LearnerState::zeros()
    };
    s.to_flat()
}

pub(crate) fn measurement(cfg: &FilterConfig) -> (Vec<usize>, DVector<f64>) {
    let idx: Vec<usize> = LearnerState::observed_indices().collect();
    let vx = cfg.likelihood_std_x * cfg.likelihood_std_x;
    let vq = cfg.likelihood_std_q * cfg.likelihood_std_q;
    let r = DVector::from_iterator(idx.len(), (0..2).map(|_| vx).chain((0..N_JOINTS).map(|_| vq)));
    (idx, r)
}

/// One EKF or UKF step of the learner dynamics toward `target`, followed by
/// the update on the observed cursor and joint angles.
pub fn gaussian_filter_step(
    kind: FilterKind,
    belief: &Belief,
    obs: &Observation,
    target: &Point,
    hml: Hml<'_>,
    cfg: &FilterConfig,
) -> Belief {
    debug_assert_eq!(belief.mean.len(), STATE_DIM);
    let dt = hml.dt();
    let f = |v: &DVector<f64>| {
        let mut s = LearnerState::from_flat(v);
        deterministic_step(&mut s, target, hml.system, hml.params, dt);
        s.to_flat()
    };
    let q = process_noise(hml, dt);
    let (idx, r) = measurement(cfg);
    let z = DVector::from_iterator(idx.len(), obs.x.iter().chain(obs.q.iter()).copied());
    match kind {
        FilterKind::Ekf => ekf_update(belief, f, &q, &idx, &z, &r),
        FilterKind::Ukf => ukf_update(belief, f, &q, &idx, &z, &r),
    }
}
