//! Two-phase NSGA-II fitting of model parameters to reference trajectories.

mod nsga;

pub use nsga::{
    crowded_cmp, crowding, dominates, pareto_rank, polynomial_mutation, sbx_pair, tournament, variation,
    VariationConfig,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{trajectory_error, TrialMetrics};
use crate::model::{integrate_steps, integrate_trial, GameConfig, Hml, LearnerState, ModelParams, Point, SynergySystem, TrialRecord};
use crate::rng;
use crate::{Error, Result};

pub const N_FITTED: usize = 6;
/// Objective value assigned to every objective of a diverged simulation.
pub const OBJECTIVE_PENALTY: f64 = 1e6;

pub type Genes = [f64; N_FITTED];
/// (f_RE, f_SoT, f_TE).
pub type Objectives = [f64; 3];

/// Search box over the fitted fields, in `ModelParams::FITTED_NAMES` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Genes,
    pub upper: Genes,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { lower: [1e-6, 0.01, 0.1, 0.5, 0.0, 0.0], upper: [1e-2, 5.0, 50.0, 50.0, 3.0, 0.1] }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(Error::InvalidArgument(format!("bad parameter bounds {self:?}")));
        }
        if self.lower[2] <= 0.0 || self.lower.iter().any(|l| *l < 0.0) {
            return Err(Error::InvalidArgument("bounds must keep parameters valid (mu > 0, all >= 0)".into()));
        }
        Ok(())
    }

    pub fn contains(&self, g: &Genes) -> bool {
        (0..N_FITTED).all(|i| g[i] >= self.lower[i] && g[i] <= self.upper[i])
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Genes {
        std::array::from_fn(|i| rng.random_range(self.lower[i]..=self.upper[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub generations: usize,
    pub population: usize,
    pub variation: VariationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub exploration: PhaseConfig,
    pub exploitation: PhaseConfig,
    /// Re-evaluate the exploitation front every this many generations.
    pub resample_every: usize,
    pub resample_count: usize,
    /// Independent runs whose final fronts are pooled for selection.
    pub restarts: usize,
    pub bounds: Bounds,
}

impl GaConfig {
    pub fn paper() -> Self {
        Self {
            exploration: PhaseConfig {
                generations: 250,
                population: 256,
                variation: VariationConfig { sbx_prob: 0.9, sbx_eta: 15.0, pm_prob: 0.17, pm_eta: 10.0 },
            },
            exploitation: PhaseConfig {
                generations: 250,
                population: 128,
                variation: VariationConfig { sbx_prob: 0.9, sbx_eta: 20.0, pm_prob: 0.1, pm_eta: 15.0 },
            },
            resample_every: 5,
            resample_count: 3,
            restarts: 10,
            bounds: Bounds::default(),
        }
    }

    pub fn desk() -> Self {
        let paper = Self::paper();
        Self {
            exploration: PhaseConfig { generations: 20, population: 32, ..paper.exploration },
            exploitation: PhaseConfig { generations: 20, population: 32, ..paper.exploitation },
            restarts: 1,
            ..paper
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        for p in [&self.exploration, &self.exploitation] {
            let v = &p.variation;
            let probs_ok = [v.sbx_prob, v.pm_prob].iter().all(|x| (0.0..=1.0).contains(x));
            if !probs_ok || v.sbx_eta < 0.0 || v.pm_eta < 0.0 {
                return Err(Error::InvalidArgument(format!("bad variation settings {v:?}")));
            }
            if p.population < 4 || p.population % 2 != 0 {
                return Err(Error::InvalidArgument(format!("population must be even and >= 4, got {}", p.population)));
            }
        }
        if self.resample_every == 0 || self.resample_count == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("resample_every, resample_count and restarts must be positive".into()));
        }
        Ok(())
    }
}

/// Recorded gameplay to fit against: the learner's starting state and the
/// trial sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub init: LearnerState,
    pub trials: Vec<TrialRecord>,
}

impl Reference {
    /// Plays `targets` (indices into the game's targets) with the given model.
    pub fn generate<R: Rng + ?Sized>(
        init: &LearnerState,
        targets: &[usize],
        hml: Hml<'_>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut state = init.clone();
        let mut trials = Vec::with_capacity(targets.len());
        let mut from: Option<Point> = None;
        let mut t = 0.0;
        for &k in targets {
            let target = *hml
                .game
                .targets
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("target index {k} out of range")))?;
            let (next, rec) = integrate_trial(&state, from, &target, hml, t, rng)?;
            t += rec.duration;
            state = next;
            from = Some(target);
            trials.push(rec);
        }
        Ok(Self { init: init.clone(), trials })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub params: ModelParams,
    pub objectives: Objectives,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    fn genes(&self) -> Genes {
        self.params.fitted()
    }
}

/// Simulates the model over the reference's target sequence, each trial
/// lasting exactly as many samples as its reference counterpart, and returns
/// the norms of the per-trial RE and SoT residuals and of the per-trial
/// trajectory errors.
pub fn evaluate_objectives<R: Rng + ?Sized>(
    params: &ModelParams,
    reference: &Reference,
    system: &SynergySystem,
    game: &GameConfig,
    rng: &mut R,
) -> Result<Objectives> {
    if reference.trials.is_empty() {
        return Err(Error::Empty("reference trials"));
    }
    let hml = Hml::new(system, params, game);
    let mut state = reference.init.clone();
    let n = reference.trials.len();
    let (mut model_m, mut data_m, mut te) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for data in &reference.trials {
        let sim = integrate_steps(&state, data.target_from, &data.target_to, hml, data.start().t, data.n_steps(), rng);
        let (next, model) = match sim {
            Ok(v) => v,
            Err(Error::Diverged { .. }) => return Ok([OBJECTIVE_PENALTY; 3]),
            Err(e) => return Err(e),
        };
        model_m.push(TrialMetrics::of(&model, game.trial_cutoff));
        data_m.push(TrialMetrics::of(data, game.trial_cutoff));
        te.push(trajectory_error(&model.cursor(), &data.cursor())?);
        state = next;
    }
    let re = |v: &[TrialMetrics]| v.iter().map(|m| m.re).collect::<Vec<_>>();
    let sot = |v: &[TrialMetrics]| v.iter().map(|m| m.sot).collect::<Vec<_>>();
    let out = [
        residual_norm(&re(&model_m), &re(&data_m)),
        residual_norm(&sot(&model_m), &sot(&data_m)),
        residual_norm(&te, &vec![0.0; n]),
    ];
    Ok(if out.iter().all(|v| v.is_finite()) { out } else { [OBJECTIVE_PENALTY; 3] })
}

/// `|model - data|_2`.
pub fn residual_norm(model: &[f64], data: &[f64]) -> f64 {
    model.iter().zip(data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub phase: usize,
    pub generation: usize,
    pub best_re: f64,
    pub median_re: f64,
    pub front_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRun {
    /// Median f_RE of the random initial population.
    pub initial_median_re: f64,
    /// First-front members of the phase-1 population, in crowded order.
    pub exploration_front: Vec<Individual>,
    /// Initial phase-2 population.
    pub exploitation_start: Vec<Individual>,
    pub final_front: Vec<Individual>,
    pub history: Vec<GenerationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub selected: Individual,
    /// True when no pooled candidate had f_SoT below the pool average.
    pub fallback: bool,
    pub runs: Vec<FitRun>,
}

/// Objective function shared by the optimizer: genes and a stream seed in,
/// objectives out.
pub trait Objective: Sync {
    fn evaluate(&self, genes: &Genes, seed: u64) -> Objectives;
}

impl<F: Fn(&Genes, u64) -> Objectives + Sync> Objective for F {
    fn evaluate(&self, genes: &Genes, seed: u64) -> Objectives {
        self(genes, seed)
    }
}

struct ModelObjective<'a> {
    base: ModelParams,
    reference: &'a Reference,
    system: &'a SynergySystem,
    game: &'a GameConfig,
}

impl Objective for ModelObjective<'_> {
    fn evaluate(&self, genes: &Genes, seed: u64) -> Objectives {
        let p = self.base.with_fitted(genes);
        match evaluate_objectives(&p, self.reference, self.system, self.game, &mut rng::stream(seed)) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("objective evaluation failed for {p}: {e}");
                [OBJECTIVE_PENALTY; 3]
            }
        }
    }
}

/// Runs the full fitting schedule and applies the selection rule to the
/// pooled final fronts. `base` supplies the fixed fields.
pub fn run_fit(
    reference: &Reference,
    system: &SynergySystem,
    game: &GameConfig,
    base: &ModelParams,
    cfg: &GaConfig,
    seed: u64,
) -> Result<FitResult> {
    if reference.trials.is_empty() {
        return Err(Error::Empty("reference trials"));
    }
    let objective = ModelObjective { base: *base, reference, system, game };
    optimize(&objective, base, cfg, seed)
}

/// The fitting schedule for an arbitrary objective.
pub fn optimize<O: Objective>(objective: &O, base: &ModelParams, cfg: &GaConfig, seed: u64) -> Result<FitResult> {
    cfg.validate()?;
    let runs: Vec<FitRun> = (0..cfg.restarts as u64)
        .map(|r| Optimizer { objective, base, cfg, seed, restart: r }.run())
        .collect();
    let pool: Vec<&Individual> = runs.iter().flat_map(|r| &r.final_front).collect();
    let (selected, fallback) = select(&pool).ok_or(Error::Empty("final fronts"))?;
    Ok(FitResult { selected: selected.clone(), fallback, runs })
}

/// Minimum f_RE among candidates with f_SoT below the pool average, falling
/// back to the global minimum f_RE.
pub fn select<'a>(pool: &[&'a Individual]) -> Option<(&'a Individual, bool)> {
    if pool.is_empty() {
        return None;
    }
    let avg = pool.iter().map(|i| i.objectives[1]).sum::<f64>() / pool.len() as f64;
    let by_re = |a: &&&Individual, b: &&&Individual| a.objectives[0].total_cmp(&b.objectives[0]);
    match pool.iter().filter(|i| i.objectives[1] < avg).min_by(by_re) {
        Some(best) => Some((best, false)),
        None => {
            log::warn!("no fit has f_SoT below the average {avg}; falling back to minimum f_RE");
            pool.iter().min_by(by_re).map(|b| (*b, true))
        }
    }
}

struct Optimizer<'a, O: Objective> {
    objective: &'a O,
    base: &'a ModelParams,
    cfg: &'a GaConfig,
    seed: u64,
    restart: u64,
}

impl<O: Objective> Optimizer<'_, O> {
    fn evaluate(&self, genes: Vec<Genes>, path: [u64; 3]) -> Vec<Individual> {
        let objs: Vec<Objectives> = genes
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let s = rng::derive_seed(self.seed, &[self.restart, path[0], path[1], path[2], i as u64]);
                self.objective.evaluate(g, s)
            })
            .collect();
        genes
            .iter()
            .zip(objs)
            .map(|(g, o)| Individual { params: self.base.with_fitted(g), objectives: o, rank: 0, crowding: 0.0 })
            .collect()
    }

    fn run(&self) -> FitRun {
        let cfg = self.cfg;
        let mut r = rng::derive(self.seed, &[self.restart, u64::MAX]);
        let init: Vec<Genes> = (0..cfg.exploration.population).map(|_| cfg.bounds.sample(&mut r)).collect();
        let mut pop = self.evaluate(init, [1, 0, 0]);
        rank_in_place(&mut pop);
        let initial_median_re = median(pop.iter().map(|i| i.objectives[0]).collect());
        let mut history = vec![stats(1, 0, &pop)];
        for g in 1..=cfg.exploration.generations {
            pop = self.generation(pop, &cfg.exploration, 1, g, &mut r);
            history.push(stats(1, g, &pop));
        }
        let exploration_front: Vec<Individual> = pop.iter().filter(|i| i.rank == 1).cloned().collect();
        let mut pop: Vec<Individual> = pop.into_iter().take(cfg.exploitation.population).collect();
        let exploitation_start = pop.clone();
        for g in 1..=cfg.exploitation.generations {
            pop = self.generation(pop, &cfg.exploitation, 2, g, &mut r);
            if g % cfg.resample_every == 0 {
                self.resample_front(&mut pop, g);
            }
            history.push(stats(2, g, &pop));
        }
        let final_front = pop.iter().filter(|i| i.rank == 1).cloned().collect();
        FitRun { initial_median_re, exploration_front, exploitation_start, final_front, history }
    }

    fn generation<R: Rng + ?Sized>(
        &self,
        pop: Vec<Individual>,
        phase: &PhaseConfig,
        phase_id: u64,
        gen: usize,
        r: &mut R,
    ) -> Vec<Individual> {
        let ranked: Vec<(usize, f64)> = pop.iter().map(|i| (i.rank, i.crowding)).collect();
        let parents: Vec<Genes> =
            tournament(&ranked, phase.population, r).into_iter().map(|i| pop[i].genes()).collect();
        let kids = variation(&parents, &phase.variation, &self.cfg.bounds.lower, &self.cfg.bounds.upper, r);
        let mut pool = pop;
        pool.extend(self.evaluate(kids, [phase_id, gen as u64, 0]));
        rank_in_place(&mut pool);
        pool.truncate(phase.population);
        pool
    }

    fn resample_front(&self, pop: &mut [Individual], gen: usize) {
        let front: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].rank == 1).collect();
        let genes: Vec<Genes> = front.iter().map(|&i| pop[i].genes()).collect();
        let mut sums = vec![[0.0; 3]; front.len()];
        for k in 0..self.cfg.resample_count {
            let again = self.evaluate(genes.clone(), [2, gen as u64, 1 + k as u64]);
            for (s, ind) in sums.iter_mut().zip(again) {
                for m in 0..3 {
                    s[m] += ind.objectives[m];
                }
            }
        }
        for (&i, s) in front.iter().zip(sums) {
            pop[i].objectives = s.map(|v| v / self.cfg.resample_count as f64);
        }
        rank_in_place(pop);
    }
}

/// Assigns rank and crowding, then sorts into crowded order.
pub fn rank_in_place(pop: &mut [Individual]) {
    let objs: Vec<Objectives> = pop.iter().map(|i| i.objectives).collect();
    for (ind, (rank, crowd)) in pop.iter_mut().zip(pareto_rank(&objs)) {
        ind.rank = rank;
        ind.crowding = crowd;
    }
    pop.sort_by(|a, b| crowded_cmp((a.rank, a.crowding), (b.rank, b.crowding)));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn stats(phase: usize, generation: usize, pop: &[Individual]) -> GenerationStats {
    let re: Vec<f64> = pop.iter().map(|i| i.objectives[0]).collect();
    GenerationStats {
        phase,
        generation,
        best_re: re.iter().copied().fold(f64::INFINITY, f64::min),
        median_re: median(re),
        front_size: pop.iter().filter(|i| i.rank == 1).count(),
    }
}
