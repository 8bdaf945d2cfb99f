//! Experiment execution.

use std::collections::BTreeMap;
use std::time::Instant;

use hml_core::curriculum::{
    heuristic_next, random_next, snmpc_q_values, softmin_sample, CurriculumConfig, PairStats,
};
use hml_core::estimation::{
    filter_consistency_bench, init_ensemble, pf_assimilate_trial, pf_estimate, systematic_resample, BenchConfig,
    BenchResult, ParticleEnsemble,
};
use hml_core::fitting::{run_fit, FitResult, Reference};
use hml_core::metrics::TrialMetrics;
use hml_core::model::{integrate_trial, synthesize_system, Joint};
use hml_core::rng::{self, derive_seed};
use hml_core::ucm::{phase_aggregate, time_normalize, variance_decompose, PhaseMap, PhaseSummary, UcmResult};
use hml_core::{Hml, LearnerState, SynergySystem, TrialRecord};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spec::{Arm, CurriculumKind, ExperimentSpec, PlanningState, Scenario};
use crate::HarnessError;

pub const MANIFEST_VERSION: u32 = 1;

/// One played trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    /// 1-based trial index.
    pub trial: usize,
    /// Index of the chosen target.
    pub target: usize,
    pub re: f64,
    pub sot: f64,
    pub fme_true: f64,
    pub fme_est: f64,
    /// Wall time of the decision, the trial and the filter update.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub package: String,
    pub os: String,
    pub arch: String,
    pub debug_assertions: bool,
}

impl Fingerprint {
    pub fn current() -> Self {
        Self {
            package: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            debug_assertions: cfg!(debug_assertions),
        }
    }
}

/// The record of one Monte Carlo run of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub spec_hash: String,
    pub scenario: Scenario,
    pub arm: String,
    pub run: usize,
    /// Seed of this run's streams.
    pub seed: u64,
    pub expected_trials: usize,
    pub rows: Vec<TrialRow>,
    pub fingerprint: Fingerprint,
    pub incomplete: bool,
    pub error: Option<String>,
}

impl RunManifest {
    /// First trial whose estimated FME is at or below `threshold`.
    pub fn trials_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.fme_est <= threshold).map(|r| r.trial)
    }

    /// Trial accounting and row validity.
    pub fn check(&self) -> Result<(), String> {
        if !self.incomplete && self.rows.len() != self.expected_trials {
            return Err(format!("{} run {}: {} rows, expected {}", self.arm, self.run, self.rows.len(), self.expected_trials));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.trial != i + 1 {
                return Err(format!("{} run {}: row {i} has trial index {}", self.arm, self.run, r.trial));
            }
            if ![r.re, r.sot, r.fme_true, r.fme_est].iter().all(|v| v.is_finite()) {
                return Err(format!("{} run {}: non-finite metrics at trial {}", self.arm, self.run, r.trial));
            }
        }
        Ok(())
    }
}

/// Output of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Outcome {
    Curriculum {
        manifests: Vec<RunManifest>,
    },
    Ucm {
        manifests: Vec<RunManifest>,
        results: Vec<UcmResult>,
        phases: Vec<PhaseSummary>,
    },
    Filters {
        bench: BenchResult,
    },
    Fit {
        initial_median_re: Vec<f64>,
        best_re: Vec<f64>,
        result: FitResult,
    },
}

impl Outcome {
    pub fn manifests(&self) -> &[RunManifest] {
        match self {
            Outcome::Curriculum { manifests } | Outcome::Ucm { manifests, .. } => manifests,
            _ => &[],
        }
    }

    /// True when every run finished and passed its self-check.
    pub fn complete(&self) -> bool {
        self.manifests().iter().all(|m| !m.incomplete && m.check().is_ok())
    }
}

/// A played run with the trial records kept for offline analysis.
struct Played {
    manifest: RunManifest,
    records: Vec<TrialRecord>,
}

/// Runs a validated specification.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    spec.validate()?;
    info!("running {} (spec {})", spec.scenario, &spec.hash()[..12]);
    match spec.scenario {
        Scenario::Fig2a | Scenario::Fig2b | Scenario::Fig6a | Scenario::Fig6bc => {
            let played = play_all(spec, false)?;
            Ok(Outcome::Curriculum { manifests: played.into_iter().map(|p| p.manifest).collect() })
        }
        Scenario::Ucm => run_ucm(spec),
        Scenario::Filters => run_filters(spec),
        Scenario::Fit => run_fit_scenario(spec),
    }
}

fn participant(spec: &ExperimentSpec, run: usize) -> Result<SynergySystem, HarnessError> {
    Ok(synthesize_system(derive_seed(spec.seed, &[run as u64, 0]), spec.n_postures)?)
}

fn play_all(spec: &ExperimentSpec, keep_records: bool) -> Result<Vec<Played>, HarnessError> {
    let arms = spec.arms();
    let systems: Vec<SynergySystem> = (0..spec.n_mc).map(|r| participant(spec, r)).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..arms.len()).flat_map(|a| (0..spec.n_mc).map(move |r| (a, r))).collect();
    let hash = spec.hash();
    Ok(jobs
        .par_iter()
        .map(|&(a, r)| play_run(spec, &arms[a], r, &systems[r], &hash, keep_records))
        .collect())
}

/// Start states of the planner's rollouts.
fn planning_roots(
    spec: &ExperimentSpec,
    truth: &LearnerState,
    ens: &ParticleEnsemble,
    n: usize,
    seed: u64,
) -> Vec<LearnerState> {
    match spec.planning_state {
        PlanningState::OracleState => vec![truth.clone()],
        PlanningState::EstimatedState if !spec.sample_particles => vec![ens.mean_state()],
        PlanningState::EstimatedState => {
            let idx = systematic_resample(&ens.weights, &mut rng::stream(seed));
            let stride = (idx.len() / n).max(1);
            (0..n).map(|i| ens.particles[idx[(i * stride) % idx.len()]].clone()).collect()
        }
    }
}

fn play_run(
    spec: &ExperimentSpec,
    arm: &Arm,
    run: usize,
    system: &SynergySystem,
    hash: &str,
    keep_records: bool,
) -> Played {
    let seed = derive_seed(spec.seed, &[run as u64]);
    let mut manifest = RunManifest {
        version: MANIFEST_VERSION,
        spec_hash: hash.to_string(),
        scenario: spec.scenario,
        arm: arm.label.clone(),
        run,
        seed,
        expected_trials: spec.n_trials(),
        rows: Vec::with_capacity(spec.n_trials()),
        fingerprint: Fingerprint::current(),
        incomplete: false,
        error: None,
    };
    let mut records = Vec::new();
    if let Err(e) = play_trials(spec, arm, system, seed, &mut manifest.rows, keep_records.then_some(&mut records)) {
        warn!("{} run {run} stopped after {} trials: {e}", arm.label, manifest.rows.len());
        manifest.incomplete = true;
        manifest.error = Some(e.to_string());
    }
    Played { manifest, records }
}

fn play_trials(
    spec: &ExperimentSpec,
    arm: &Arm,
    system: &SynergySystem,
    seed: u64,
    rows: &mut Vec<TrialRow>,
    mut records: Option<&mut Vec<TrialRecord>>,
) -> Result<(), HarnessError> {
    let game = &spec.game;
    let planner_params = spec.planner_params(arm.pairing);
    let learner = Hml::new(system, &spec.learner, game);
    let model = Hml::new(system, &planner_params, game);
    let cfg = CurriculumConfig { horizon: arm.horizon.max(1), tau: arm.tau, ..spec.curriculum.clone() };
    let n_targets = game.targets.len();

    let mut learner_rng = rng::derive(seed, &[1]);
    let mut policy_rng = rng::derive(seed, &[2]);
    let mut truth = LearnerState::naive(system, &mut learner_rng);
    let mut ens = init_ensemble(system, &spec.filter, &mut rng::derive(seed, &[3]))?;
    let mut stats = PairStats::new(n_targets, cfg.heuristic_window);
    let mut current = game.target_index(&truth.x);
    let mut t = 0.0;
    let (mut decisions, mut updates) = (0usize, 0usize);

    for trial in 1..=spec.n_trials() {
        let clock = Instant::now();
        // the first target is uniform for every curriculum
        let next = match (arm.kind, current) {
            (CurriculumKind::Heuristic, Some(c)) if trial > 1 => heuristic_next(&stats, c, cfg.admissible_rule),
            (CurriculumKind::Snmpc, Some(c)) if trial > 1 => {
                let plan_seed = derive_seed(seed, &[4, trial as u64]);
                let roots = planning_roots(spec, &truth, &ens, cfg.n_rollouts, plan_seed);
                let q = snmpc_q_values(&roots, c, model, &cfg, plan_seed)?;
                softmin_sample(&q, cfg.tau, &mut policy_rng)
            }
            _ => random_next(current, n_targets, cfg.admissible_rule, &mut policy_rng),
        };
        decisions += 1;

        let from = current.map(|c| game.targets[c]);
        let (end, record) = integrate_trial(&truth, from, &game.targets[next], learner, t, &mut learner_rng)?;
        t += record.duration;
        truth = end;

        ens = pf_assimilate_trial(&ens, &record, model, &spec.filter, derive_seed(seed, &[5, trial as u64]));
        updates += 1;

        let m = TrialMetrics::of(&record, game.trial_cutoff);
        if let Some(c) = current {
            stats.record(c, next, m.re, m.sot);
        }
        let (w_est, _) = pf_estimate(&ens, system);
        rows.push(TrialRow {
            trial,
            target: next,
            re: m.re,
            sot: m.sot,
            fme_true: system.fme(&truth.w_hat),
            fme_est: system.fme(&w_est),
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(r) = records.as_deref_mut() {
            r.push(record);
        }
        current = Some(next);
    }
    if decisions != rows.len() || updates != rows.len() {
        return Err(HarnessError::SelfCheck(format!(
            "{decisions} decisions, {updates} estimator updates, {} trials",
            rows.len()
        )));
    }
    Ok(())
}

fn run_ucm(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let played = play_all(spec, true)?;
    let systems: Vec<SynergySystem> = (0..spec.n_mc).map(|r| participant(spec, r)).collect::<Result<_, _>>()?;
    let mut results = Vec::new();
    for p in &played {
        let m = &p.manifest;
        if m.incomplete {
            continue;
        }
        let c = &systems[m.run].c;
        let mut groups: BTreeMap<(usize, (usize, usize)), Vec<&TrialRecord>> = BTreeMap::new();
        for (i, rec) in p.records.iter().enumerate() {
            let Some(from) = rec.target_from.and_then(|x| spec.game.target_index(&x)) else { continue };
            let block = i / spec.trials_per_block + 1;
            groups.entry((block, (from, m.rows[i].target))).or_default().push(rec);
        }
        for ((block, pair), recs) in groups {
            if recs.len() < 2 {
                continue;
            }
            let tensor: Vec<Vec<Joint>> = time_normalize(&recs)?
                .into_iter()
                .map(|tr| tr.into_iter().map(|q| q.map(f64::to_radians)).collect())
                .collect();
            let points = variance_decompose(&tensor, c)?;
            results.push(UcmResult { group: m.arm.clone(), run: m.run, block, pair, points });
        }
    }
    let phases = phase_aggregate(&results, &PhaseMap::training())?;
    Ok(Outcome::Ucm { manifests: played.into_iter().map(|p| p.manifest).collect(), results, phases })
}

fn run_filters(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let system = participant(spec, 0)?;
    let hml = Hml::new(&system, &spec.learner, &spec.game);
    let cfg = BenchConfig { n_mc: spec.n_mc, perturb_scale: spec.bench_perturb_scale, filter: spec.filter.clone() };
    let bench = filter_consistency_bench(hml, &cfg, derive_seed(spec.seed, &[1]))?;
    Ok(Outcome::Filters { bench })
}

fn run_fit_scenario(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let system = participant(spec, 0)?;
    let truth = spec.learner.noiseless();
    let hml = Hml::new(&system, &truth, &spec.game);
    let mut r = rng::derive(spec.seed, &[1]);
    let init = LearnerState::naive(&system, &mut r);
    let mut current = spec.game.target_index(&init.x);
    let mut targets = Vec::with_capacity(spec.fit.reference_trials);
    for _ in 0..spec.fit.reference_trials {
        let next = random_next(current, spec.game.targets.len(), spec.curriculum.admissible_rule, &mut r);
        targets.push(next);
        current = Some(next);
    }
    let reference = Reference::generate(&init, &targets, hml, &mut r)?;
    let result = run_fit(&reference, &system, &spec.game, &truth, &spec.fit.ga, derive_seed(spec.seed, &[2]))?;
    let initial_median_re = result.runs.iter().map(|run| run.initial_median_re).collect();
    let best_re = result
        .runs
        .iter()
        .map(|run| run.history.iter().map(|g| g.best_re).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(Outcome::Fit { initial_median_re, best_re, result })
}
