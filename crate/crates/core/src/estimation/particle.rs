use log::warn;
use nalgebra::{Matrix2, SMatrix, SVector};
use rand::Rng;
use rayon::prelude::*;

use super::{FilterConfig, Observation};
use crate::model::{
    step, Hml, LearnerState, Mapping, Point, SynergySystem, TrialRecord, Weights, DIVERGENCE_LIMIT,
};
use crate::{rng, Error, Result};

type WVec = SVector<f64, 8>;

fn w_vec(w: &Weights) -> WVec {
    WVec::from_iterator(w.transpose().iter().copied())
}

fn w_from(v: &WVec) -> Weights {
    Weights::from_fn(|i, j| v[i * 4 + j])
}

/// Weighted set of learner-state hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<LearnerState>,
    pub weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<LearnerState>, weights: Vec<f64>) -> Result<Self> {
        if particles.len() < 2 || particles.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "an ensemble needs at least 2 particles and one weight per particle".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("weights must be non-negative and sum to 1".into()));
        }
        Ok(Self { particles, weights })
    }

    pub fn uniform(particles: Vec<LearnerState>) -> Result<Self> {
        let n = particles.len();
        Self::new(particles, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    pub fn mean_state(&self) -> LearnerState {
        LearnerState::weighted_mean(self.weights.iter().copied().zip(&self.particles))
    }

    /// Weighted mean and covariance of the flattened weight estimates.
    fn w_moments(&self) -> (WVec, SMatrix<f64, 8, 8>) {
        let mean = self
            .particles
            .iter()
            .zip(&self.weights)
            .fold(WVec::zeros(), |acc, (p, w)| acc + w_vec(&p.w_hat) * *w);
        let cov = self.particles.iter().zip(&self.weights).fold(SMatrix::zeros(), |acc, (p, w)| {
            let d = w_vec(&p.w_hat) - mean;
            acc + d * d.transpose() * *w
        });
        (mean, cov)
    }

    /// Replaces weights by the normalized exponentials of `log_w`. Falls back
    /// to uniform weights if every entry underflows.
    fn set_log_weights(&mut self, log_w: &[f64]) {
        let max = log_w.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            warn!("all particle likelihoods vanished; resetting to uniform weights");
            let n = self.len() as f64;
            self.weights.iter_mut().for_each(|w| *w = 1.0 / n);
            return;
        }
        let mut total = 0.0;
        for (w, l) in self.weights.iter_mut().zip(log_w) {
            *w = if l.is_nan() { 0.0 } else { (l - max).exp() };
            total += *w;
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
    }
}

/// `1 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: indices of the selected particles.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for _ in 0..n {
        while u > cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
        u += step;
    }
    out
}

/// Particles at the rest state with weight estimates `(0.1 I + E) W`, the
/// entries of `E` drawn with std `init_spread / sqrt(2)`. The cloud has the
/// naive-learner prior as its mean and the synergy subspace of `W` as its
/// support.
pub fn init_ensemble<R: Rng + ?Sized>(
    system: &SynergySystem,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let s = cfg.init_spread / 2f64.sqrt();
    let particles = (0..cfg.n_particles)
        .map(|_| {
            let mix = Matrix2::identity() * 0.1 + Matrix2::from_fn(|_, _| s * rng::normal(rng));
            LearnerState::at_rest(system, mix * system.w_true)
        })
        .collect();
    ParticleEnsemble::uniform(particles)
}

fn log_likelihood(p: &LearnerState, obs: &Observation, cfg: &FilterConfig) -> f64 {
    if !p.is_finite() || p.max_abs() > DIVERGENCE_LIMIT {
        return f64::NAN;
    }
    let rx = (p.x - obs.x).norm_squared() / (cfg.likelihood_std_x * cfg.likelihood_std_x);
    let rq = (p.q - obs.q).norm_squared() / (cfg.likelihood_std_q * cfg.likelihood_std_q);
    -0.5 * (rx + rq)
}

fn snap(p: &mut LearnerState, obs: &Observation) {
    p.x = obs.x;
    p.q = obs.q;
}

/// Resamples when the effective sample size is below the threshold and
/// jitters the weight estimates of the copies with a shrinkage kernel that
/// keeps the ensemble mean and covariance.
fn maybe_resample<R: Rng + ?Sized>(ens: &mut ParticleEnsemble, cfg: &FilterConfig, rng: &mut R) {
    if ens.ess() >= cfg.resample_ess_fraction * ens.len() as f64 {
        return;
    }
    let (mean, cov) = ens.w_moments();
    let idx = systematic_resample(&ens.weights, rng);
    let mut next: Vec<LearnerState> = idx.iter().map(|&i| ens.particles[i].clone()).collect();
    let h = cfg.roughening;
    if h > 0.0 {
        let a = (1.0 - h * h).sqrt();
        let chol = (cov + SMatrix::<f64, 8, 8>::identity() * (1e-12 * cov.trace().max(1e-300)))
            .cholesky()
            .map(|c| c.l());
        if let Some(l) = chol {
            for p in &mut next {
                let z = WVec::from_fn(|_, _| rng::normal(rng));
                let v = w_vec(&p.w_hat) * a + mean * (1.0 - a) + l * z * h;
                p.w_hat = w_from(&v);
            }
        }
    }
    let n = next.len() as f64;
    ens.particles = next;
    ens.weights = vec![1.0 / n; ens.particles.len()];
}

/// Propagates every particle one sample interval, reweights by the
/// observation likelihood and resamples if the ensemble has degenerated.
pub fn pf_step<R: Rng + ?Sized>(
    ens: &ParticleEnsemble,
    obs: &Observation,
    target: &Point,
    hml: Hml<'_>,
    cfg: &FilterConfig,
    rng: &mut R,
) -> ParticleEnsemble {
    let seed: u64 = rng.random();
    let dt = hml.dt();
    let mut next = ens.clone();
    let log_l: Vec<f64> = next
        .particles
        .par_iter_mut()
        .enumerate()
        .map(|(i, p)| {
            let mut r = rng::derive(seed, &[i as u64]);
            step(p, target, hml.system, hml.params, dt, &mut r);
            log_likelihood(p, obs, cfg)
        })
        .collect();
    let log_w: Vec<f64> = ens.weights.iter().zip(&log_l).map(|(w, l)| w.ln() + l).collect();
    next.set_log_weights(&log_w);
    if cfg.snap_observed {
        next.particles.iter_mut().for_each(|p| snap(p, obs));
    }
    maybe_resample(&mut next, cfg, rng);
    next
}

/// Assimilates a whole trial record, one likelihood update per sample.
///
/// Each particle replays the trial with exactly as many steps as the record
/// holds; its stream is derived from `seed` and the particle slot. At the
/// end the observed components are reset to the last observation so the
/// next trial starts from the observed posture.
pub fn pf_assimilate_trial(
    ens: &ParticleEnsemble,
    record: &TrialRecord,
    hml: Hml<'_>,
    cfg: &FilterConfig,
    seed: u64,
) -> ParticleEnsemble {
    let n = ens.len();
    let target = record.target_to;
    let obs: Vec<Observation> = record.samples.iter().map(Observation::from).collect();
    let mut cur = ens.clone();
    let mut streams: Vec<rng::Stream> = (0..n).map(|i| rng::derive(seed, &[i as u64])).collect();
    let mut ctl = rng::derive(seed, &[u64::MAX]);
    for p in &mut cur.particles {
        snap(p, &obs[0]);
    }
    let mut log_w: Vec<f64> = cur.weights.iter().map(|w| w.ln()).collect();
    for (k, o) in obs.iter().enumerate().skip(1) {
        let dt = record.samples[k].t - record.samples[k - 1].t;
        let ll: Vec<f64> = cur
            .particles
            .par_iter_mut()
            .zip(streams.par_iter_mut())
            .map(|(p, r)| {
                step(p, &target, hml.system, hml.params, dt, r);
                log_likelihood(p, o, cfg)
            })
            .collect();
        for (lw, l) in log_w.iter_mut().zip(&ll) {
            *lw += l;
        }
        cur.set_log_weights(&log_w);
        if cfg.snap_observed {
            cur.particles.iter_mut().for_each(|p| snap(p, o));
        }
        maybe_resample(&mut cur, cfg, &mut ctl);
        log_w = cur.weights.iter().map(|w| w.ln()).collect();
    }
    if let Some(last) = obs.last() {
        cur.particles.iter_mut().for_each(|p| snap(p, last));
    }
    cur
}

/// Weighted mean weight estimate and the corresponding mapping estimate.
pub fn pf_estimate(ens: &ParticleEnsemble, system: &SynergySystem) -> (Weights, Mapping) {
    let w = ens
        .particles
        .iter()
        .zip(&ens.weights)
        .fold(Weights::zeros(), |acc, (p, wt)| acc + p.w_hat * *wt);
    (w, system.c_hat(&w))
}
