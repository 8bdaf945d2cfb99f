//! Target-sequencing policies: uniform random, performance heuristic and
//! sampled-tree SNMPC with softmin action selection.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::TrialMetrics;
use crate::model::{integrate_trial, Hml, LearnerState, Weights};
use crate::{rng, Error, Result};

/// Cost assigned to a rollout whose simulation diverged.
pub const DIVERGENCE_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmissibleRule {
    ExcludeCurrent,
    AllTargets,
}

/// Candidate next-target indices.
pub fn admissible(current: Option<usize>, n_targets: usize, rule: AdmissibleRule) -> Vec<usize> {
    (0..n_targets)
        .filter(|&i| rule == AdmissibleRule::AllTargets || Some(i) != current)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    pub beta_w: f64,
    pub beta_re: f64,
    pub beta_sot: f64,
    /// Weight of the terminal trial's stage cost.
    pub beta_p: f64,
    /// Lookahead horizon in trials.
    pub horizon: usize,
    pub tau: f64,
    pub n_rollouts: usize,
    pub admissible_rule: AdmissibleRule,
    /// Window of the heuristic running averages; `None` is cumulative.
    #[serde(default)]
    pub heuristic_window: Option<usize>,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            beta_w: 1.0,
            beta_re: 0.5,
            beta_sot: 0.5,
            beta_p: 2.0,
            horizon: 4,
            tau: 0.2,
            n_rollouts: 5,
            admissible_rule: AdmissibleRule::ExcludeCurrent,
            heuristic_window: None,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let betas = [self.beta_w, self.beta_re, self.beta_sot, self.beta_p];
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if self.n_rollouts < 1 {
            return bad("n_rollouts must be at least 1");
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return bad("tau must be a finite non-negative number");
        }
        if betas.iter().any(|b| !(*b >= 0.0)) || betas.iter().all(|b| *b == 0.0) {
            return bad("betas must be non-negative and not all zero");
        }
        if self.heuristic_window == Some(0) {
            return bad("heuristic_window must be positive");
        }
        Ok(())
    }
}

/// Uniform draw from the admissible targets.
pub fn random_next<R: Rng + ?Sized>(
    current: Option<usize>,
    n_targets: usize,
    rule: AdmissibleRule,
    rng: &mut R,
) -> usize {
    let cand = admissible(current, n_targets, rule);
    cand[rng.random_range(0..cand.len())]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct PairHistory {
    re: Vec<f64>,
    sot: Vec<f64>,
}

/// Running RE/SoT history per ordered target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    n_targets: usize,
    window: Option<usize>,
    pairs: Vec<PairHistory>,
}

impl PairStats {
    pub fn new(n_targets: usize, window: Option<usize>) -> Self {
        Self { n_targets, window, pairs: vec![PairHistory::default(); n_targets * n_targets] }
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn record(&mut self, from: usize, to: usize, re: f64, sot: f64) {
        let h = &mut self.pairs[from * self.n_targets + to];
        h.re.push(re);
        h.sot.push(sot);
    }

    pub fn count(&self, from: usize, to: usize) -> usize {
        self.pairs[from * self.n_targets + to].re.len()
    }

    /// Mean (RE, SoT) over the window, `None` if never visited.
    pub fn means(&self, from: usize, to: usize) -> Option<(f64, f64)> {
        let h = &self.pairs[from * self.n_targets + to];
        let n = h.re.len();
        if n == 0 {
            return None;
        }
        let k = self.window.map_or(n, |w| w.min(n));
        let mean = |v: &[f64]| v[n - k..].iter().sum::<f64>() / k as f64;
        Some((mean(&h.re), mean(&h.sot)))
    }
}

/// `|RE| + 10 |SoT|` of the pair's running means. Unvisited pairs cost
/// `+inf` so that every pair is tried once.
pub fn heuristic_cost(stats: &PairStats, from: usize, to: usize) -> f64 {
    match stats.means(from, to) {
        Some((re, sot)) => re.abs() + 10.0 * sot.abs(),
        None => f64::INFINITY,
    }
}

/// Candidate with the highest heuristic cost. Ties go to the least visited
/// pair, then to the lowest target index.
pub fn heuristic_next(stats: &PairStats, current: usize, rule: AdmissibleRule) -> usize {
    let cand = admissible(Some(current), stats.n_targets, rule);
    let mut best = cand[0];
    let mut best_key = (heuristic_cost(stats, current, best), stats.count(current, best));
    for &c in &cand[1..] {
        let key = (heuristic_cost(stats, current, c), stats.count(current, c));
        if key.0 > best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
            best = c;
            best_key = key;
        }
    }
    best
}

/// `beta_W |W_hat - W|_F + beta_RE RE + beta_SoT SoT`.
pub fn stage_cost(w_hat: &Weights, w_true: &Weights, m: &TrialMetrics, cfg: &CurriculumConfig) -> f64 {
    cfg.beta_w * (w_hat - w_true).norm() + cfg.beta_re * m.re + cfg.beta_sot * m.sot
}

/// Shared inputs of a lookahead evaluation.
#[derive(Clone, Copy)]
struct Planner<'a> {
    hml: Hml<'a>,
    cfg: &'a CurriculumConfig,
    seed: u64,
    n_targets: usize,
}

/// One tree node: a sample set of learner states at a target, with the
/// sample clock.
struct Node {
    states: Vec<Option<LearnerState>>,
    at: usize,
}

impl Planner<'_> {
    fn child(&self, node: &Node, to: usize, path: &[u64]) -> (Node, f64) {
        let targets = &self.hml.game.targets;
        let mut costs = 0.0;
        let mut next = Vec::with_capacity(node.states.len());
        for (i, s) in node.states.iter().enumerate() {
            let Some(s) = s else {
                costs += DIVERGENCE_PENALTY;
                next.push(None);
                continue;
            };
            let mut p = path.to_vec();
            p.push(i as u64);
            let mut r = rng::derive(self.seed, &p);
            match integrate_trial(s, Some(targets[node.at]), &targets[to], self.hml, 0.0, &mut r) {
                Ok((end, rec)) => {
                    let m = TrialMetrics::of(&rec, self.hml.game.trial_cutoff);
                    costs += stage_cost(&end.w_hat, &self.hml.system.w_true, &m, self.cfg);
                    next.push(Some(end));
                }
                Err(e) => {
                    warn!("planner rollout diverged: {e}");
                    costs += DIVERGENCE_PENALTY;
                    next.push(None);
                }
            }
        }
        (Node { states: next, at: to }, costs / node.states.len() as f64)
    }

    /// Expected cost of moving to `to` and then acting optimally for
    /// `remaining` more trials.
    fn q(&self, node: &Node, to: usize, remaining: usize, path: &mut Vec<u64>) -> f64 {
        path.push(to as u64);
        let (child, cost) = self.child(node, to, path);
        let value = if remaining == 0 {
            cost * self.cfg.beta_p
        } else {
            cost + self.v(&child, remaining, path)
        };
        path.pop();
        value
    }

    fn v(&self, node: &Node, k: usize, path: &mut Vec<u64>) -> f64 {
        admissible(Some(node.at), self.n_targets, self.cfg.admissible_rule)
            .into_iter()
            .map(|to| self.q(node, to, k - 1, path))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Monte Carlo Q values of every admissible first target.
///
/// `roots` are the planning start states; rollout `i` starts from
/// `roots[i % roots.len()]`. Each tree edge propagates the whole sample set
/// of its parent one trial, so a horizon `P` evaluation costs
/// `n_rollouts * sum_k |U|^k` simulated trials. Rollout streams are derived
/// from `seed` and the action path, so results do not depend on the number
/// of worker threads.
pub fn snmpc_q_values(
    roots: &[LearnerState],
    current: usize,
    hml: Hml<'_>,
    cfg: &CurriculumConfig,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    if roots.is_empty() {
        return Err(Error::Empty("planning states"));
    }
    let n_targets = hml.game.targets.len();
    let planner = Planner { hml, cfg, seed, n_targets };
    let root = Node {
        states: (0..cfg.n_rollouts).map(|i| Some(roots[i % roots.len()].clone())).collect(),
        at: current,
    };
    let cand = admissible(Some(current), n_targets, cfg.admissible_rule);
    Ok(cand
        .par_iter()
        .map(|&to| (to, planner.q(&root, to, cfg.horizon - 1, &mut Vec::with_capacity(cfg.horizon))))
        .collect())
}

/// Selection probabilities `exp(-(z_i - z_min) / tau)`, normalized. At
/// `tau = 0` the mass is spread uniformly over the minimizers.
pub fn softmin_probs(values: &[f64], tau: f64) -> Vec<f64> {
    let zmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = if tau > 0.0 {
        values.iter().map(|z| (-(z - zmin) / tau).exp()).collect()
    } else {
        values.iter().map(|&z| if z == zmin { 1.0 } else { 0.0 }).collect()
    };
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Draws a candidate from the softmin distribution over Q values.
pub fn softmin_sample<R: Rng + ?Sized>(q: &[(usize, f64)], tau: f64, rng: &mut R) -> usize {
    let values: Vec<f64> = q.iter().map(|c| c.1).collect();
    let probs = softmin_probs(&values, tau);
    let mut u: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return q[i].0;
        }
        u -= p;
    }
    // rounding left a sliver of mass: return the last positive candidate
    q[probs.iter().rposition(|p| *p > 0.0).unwrap()].0
}

/// Candidate with the lowest Q value, first on ties.
pub fn argmin(q: &[(usize, f64)]) -> usize {
    q.iter().fold(q[0], |a, b| if b.1 < a.1 { *b } else { a }).0
}
