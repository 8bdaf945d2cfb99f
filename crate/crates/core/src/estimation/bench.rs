use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    gaussian_filter_step, pf_assimilate_trial, pf_estimate, Belief, FilterConfig, FilterKind,
    Observation, ParticleEnsemble,
};
use crate::model::{integrate_trial, Hml, LearnerState, TrialRecord, Weights};
use crate::{rng, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub n_mc: usize,
    /// Initial-state perturbation as a fraction of each block's magnitude.
    pub perturb_scale: f64,
    pub filter: FilterConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_mc: 100, perturb_scale: 0.1, filter: FilterConfig::default() }
    }
}

/// Final weight-estimation errors `|W_est - W_hat|_F`, one per run and
/// filter. Diverged filters record `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub ekf: Vec<f64>,
    pub ukf: Vec<f64>,
    pub pf: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

impl BenchResult {
    pub fn ekf_stats(&self) -> (f64, f64) {
        mean_std(&self.ekf)
    }
    pub fn ukf_stats(&self) -> (f64, f64) {
        mean_std(&self.ukf)
    }
    pub fn pf_stats(&self) -> (f64, f64) {
        mean_std(&self.pf)
    }
}

/// Per-component standard deviations of the initial-state perturbation.
/// Blocks with zero magnitude are not perturbed.
fn perturbation_std(nominal: &LearnerState, scale: f64) -> LearnerState {
    let block = |norm: f64, len: usize| scale * norm / (len as f64).sqrt();
    let mut s = LearnerState::zeros();
    s.x.fill(block(nominal.x.norm(), 2));
    s.w_hat.fill(block(nominal.w_hat.norm(), 8));
    s.delta_q.fill(block(nominal.delta_q.norm(), 20));
    s.u.fill(block(nominal.u.norm(), 20));
    s.q.fill(block(nominal.q.norm(), 20));
    s
}

fn perturbed<R: Rng + ?Sized>(nominal: &LearnerState, std: &DVector<f64>, rng: &mut R) -> LearnerState {
    let v = nominal.to_flat() + DVector::from_fn(std.len(), |i, _| std[i] * rng::normal(rng));
    LearnerState::from_flat(&v)
}

fn run_gaussian(kind: FilterKind, prior: &Belief, rec: &TrialRecord, hml: Hml<'_>, cfg: &FilterConfig) -> Weights {
    let mut b = prior.clone();
    for s in &rec.samples[1..] {
        b = gaussian_filter_step(kind, &b, &Observation::from(s), &rec.target_to, hml, cfg);
        if !b.is_finite() {
            return Weights::repeat(f64::INFINITY);
        }
    }
    b.state().w_hat
}

/// Monte Carlo comparison of EKF, UKF and particle filter on one game trial
/// of a learner whose initial state is a random perturbation of the naive
/// rest state. All filters start from the unperturbed state with the
/// perturbation distribution as prior.
pub fn filter_consistency_bench(hml: Hml<'_>, cfg: &BenchConfig, seed: u64) -> Result<BenchResult> {
    cfg.filter.validate()?;
    let system = hml.system;
    let nominal = LearnerState::at_rest(system, LearnerState::naive_prior(system));
    let std = perturbation_std(&nominal, cfg.perturb_scale).to_flat();
    let prior = Belief {
        mean: nominal.to_flat(),
        cov: DMatrix::from_diagonal(&std.map(|s| s * s)),
    };
    let runs: Vec<[f64; 3]> = (0..cfg.n_mc)
        .into_par_iter()
        .map(|m| -> Result<[f64; 3]> {
            let mut r = rng::derive(seed, &[m as u64, 0]);
            let truth0 = perturbed(&nominal, &std, &mut r);
            let targets = &hml.game.targets;
            let to = targets[r.random_range(0..targets.len())];
            let (truth, rec) = integrate_trial(&truth0, None, &to, hml, 0.0, &mut r)?;
            let err = |w: Weights| {
                let e = (w - truth.w_hat).norm();
                if e.is_finite() { e } else { f64::INFINITY }
            };
            let ekf = err(run_gaussian(FilterKind::Ekf, &prior, &rec, hml, &cfg.filter));
            let ukf = err(run_gaussian(FilterKind::Ukf, &prior, &rec, hml, &cfg.filter));
            let mut pr = rng::derive(seed, &[m as u64, 1]);
            let particles = (0..cfg.filter.n_particles).map(|_| perturbed(&nominal, &std, &mut pr)).collect();
            let ens = ParticleEnsemble::uniform(particles)?;
            let ens = pf_assimilate_trial(&ens, &rec, hml, &cfg.filter, rng::derive_seed(seed, &[m as u64, 2]));
            let pf = err(pf_estimate(&ens, system).0);
            Ok([ekf, ukf, pf])
        })
        .collect::<Result<_>>()?;
    Ok(BenchResult {
        ekf: runs.iter().map(|r| r[0]).collect(),
        ukf: runs.iter().map(|r| r[1]).collect(),
        pf: runs.iter().map(|r| r[2]).collect(),
    })
}
