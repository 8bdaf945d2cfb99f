//! Experiment specifications, built-in scenarios and scale presets.

use std::fmt;

use hml_core::curriculum::CurriculumConfig;
use hml_core::estimation::FilterConfig;
use hml_core::fitting::GaConfig;
use hml_core::{GameConfig, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Fig2a,
    Fig2b,
    Fig6a,
    Fig6bc,
    Filters,
    Ucm,
    Fit,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Fig2a,
        Scenario::Fig2b,
        Scenario::Fig6a,
        Scenario::Fig6bc,
        Scenario::Filters,
        Scenario::Ucm,
        Scenario::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fig2a => "fig2a",
            Scenario::Fig2b => "fig2b",
            Scenario::Fig6a => "fig6a",
            Scenario::Fig6bc => "fig6bc",
            Scenario::Filters => "filters",
            Scenario::Ucm => "ucm",
            Scenario::Fit => "fit",
        }
    }

    /// Scenarios that play curriculum runs and produce trial manifests.
    pub fn is_curriculum(self) -> bool {
        matches!(self, Scenario::Fig2a | Scenario::Fig2b | Scenario::Fig6a | Scenario::Fig6bc | Scenario::Ucm)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| HarnessError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumKind {
    Random,
    Heuristic,
    Snmpc,
}

/// Which model the planner and the estimator use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Planner and estimator share the learner's parameters (A-A).
    Matched,
    /// Planner and estimator use the perturbed model B (A-B).
    Mismatched,
}

/// Start states of the SNMPC rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanningState {
    /// The learner's true state.
    OracleState,
    /// The particle filter's posterior.
    #[default]
    EstimatedState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(HarnessError::InvalidSpec(format!("unknown preset {s:?}"))),
        }
    }
}

/// Model B: the learner's parameters with multiplicative perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPerturbation {
    pub eta_scale: f64,
    pub k_p_scale: f64,
    pub gamma_scale: f64,
}

impl Default for ModelPerturbation {
    fn default() -> Self {
        Self { eta_scale: 1.5, k_p_scale: 0.5, gamma_scale: 5.0 }
    }
}

impl ModelPerturbation {
    pub fn apply(&self, p: &ModelParams) -> ModelParams {
        ModelParams { eta: p.eta * self.eta_scale, k_p: p.k_p * self.k_p_scale, gamma: p.gamma * self.gamma_scale, ..*p }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    /// Length of the self-generated reference.
    pub reference_trials: usize,
    pub ga: GaConfig,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { reference_trials: 24, ga: GaConfig::desk() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub curricula: Vec<CurriculumKind>,
    pub horizons: Vec<usize>,
    pub taus: Vec<f64>,
    pub pairings: Vec<Pairing>,
    pub model_b: ModelPerturbation,
    /// Parameters of the simulated learner (model A).
    pub learner: ModelParams,
    pub planning_state: PlanningState,
    /// With estimated-state planning, start the rollouts from particles
    /// drawn from the posterior instead of the posterior mean state.
    pub sample_particles: bool,
    pub n_mc: usize,
    pub n_blocks: usize,
    pub trials_per_block: usize,
    pub seed: u64,
    /// Cost weights, rollout count and admissible rule. The horizon and tau
    /// are taken from `horizons` and `taus` per arm.
    pub curriculum: CurriculumConfig,
    pub filter: FilterConfig,
    pub game: GameConfig,
    /// Synthetic calibration postures per participant.
    pub n_postures: usize,
    /// FME level counted as learned.
    pub fme_threshold: f64,
    /// Initial-state perturbation of the filter benchmark.
    pub bench_perturb_scale: f64,
    pub fit: FitSettings,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::builtin(Scenario::Fig2b, Preset::Paper)
    }
}

/// One curriculum arm of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub kind: CurriculumKind,
    pub horizon: usize,
    pub tau: f64,
    pub pairing: Pairing,
}

impl ExperimentSpec {
    /// The built-in configuration of a scenario at the given scale.
    pub fn builtin(scenario: Scenario, preset: Preset) -> Self {
        use CurriculumKind::*;
        let mut spec = Self {
            scenario,
            curricula: vec![Snmpc],
            horizons: vec![4],
            taus: vec![0.2],
            pairings: vec![Pairing::Matched],
            model_b: ModelPerturbation::default(),
            learner: ModelParams::published(),
            planning_state: PlanningState::EstimatedState,
            sample_particles: false,
            n_mc: 10,
            n_blocks: 8,
            trials_per_block: 60,
            seed: 0,
            curriculum: CurriculumConfig::default(),
            filter: FilterConfig::default(),
            game: GameConfig::default(),
            n_postures: 100,
            fme_threshold: 0.2,
            bench_perturb_scale: 0.1,
            fit: FitSettings::default(),
        };
        match scenario {
            Scenario::Fig2a => {
                spec.curricula = vec![Random];
                spec.n_mc = 1;
            }
            Scenario::Fig2b => {
                spec.curricula = vec![Random, Heuristic, Snmpc];
                spec.horizons = vec![3, 4, 6];
            }
            Scenario::Fig6a => {
                spec.horizons = vec![2, 4, 6];
                spec.pairings = vec![Pairing::Matched, Pairing::Mismatched];
            }
            Scenario::Fig6bc => {
                spec.taus = vec![0.0, 0.03, 0.2, 1.0];
                spec.pairings = vec![Pairing::Matched, Pairing::Mismatched];
            }
            Scenario::Filters => spec.n_mc = 100,
            Scenario::Ucm => {
                spec.curricula = vec![Random, Snmpc];
                spec.n_blocks = 6;
            }
            Scenario::Fit => spec.n_mc = 1,
        }
        spec.apply_preset(preset);
        spec
    }

    /// Rescales run counts, run lengths and filter/optimizer sizes.
    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Paper => {
                self.filter.n_particles = 500;
                self.fit.ga = GaConfig::paper();
                self.fit.reference_trials = 60;
                match self.scenario {
                    Scenario::Filters => self.n_mc = 100,
                    Scenario::Fig2a | Scenario::Fit => self.n_mc = 1,
                    _ => self.n_mc = 10,
                }
                self.n_blocks = if self.scenario == Scenario::Ucm { 6 } else { 8 };
                self.trials_per_block = 60;
            }
            Preset::Desk => {
                self.filter.n_particles = 100;
                self.fit.ga = GaConfig::desk();
                self.fit.reference_trials = 24;
                match self.scenario {
                    Scenario::Filters => self.n_mc = 20,
                    Scenario::Fig2a | Scenario::Fit => self.n_mc = 1,
                    _ => self.n_mc = 3,
                }
                if self.scenario == Scenario::Ucm {
                    self.n_blocks = 6;
                    self.trials_per_block = 20;
                } else {
                    self.n_blocks = 2;
                    self.trials_per_block = 60;
                }
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn n_trials(&self) -> usize {
        self.n_blocks * self.trials_per_block
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.n_mc < 1 {
            return bad("n_mc must be at least 1".into());
        }
        if self.scenario.is_curriculum() || self.scenario == Scenario::Filters {
            if self.n_blocks < 1 || self.trials_per_block < 1 {
                return bad("n_blocks and trials_per_block must be positive".into());
            }
        }
        if self.scenario.is_curriculum() {
            if self.curricula.is_empty() {
                return bad("no curricula to run".into());
            }
            if self.pairings.is_empty() {
                return bad("no model pairings".into());
            }
            if self.curricula.contains(&CurriculumKind::Snmpc) && (self.horizons.is_empty() || self.taus.is_empty()) {
                return bad("snmpc needs at least one horizon and one tau".into());
            }
        }
        if self.horizons.iter().any(|&h| h < 1) {
            return bad("horizons must be at least 1".into());
        }
        if self.taus.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return bad("taus must be finite and non-negative".into());
        }
        let m = self.model_b;
        if [m.eta_scale, m.k_p_scale, m.gamma_scale].iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad("model_b scales must be positive".into());
        }
        if !(self.fme_threshold > 0.0) {
            return bad("fme_threshold must be positive".into());
        }
        if self.scenario == Scenario::Fit && self.fit.reference_trials < 1 {
            return bad("fit needs at least one reference trial".into());
        }
        let core = |e: hml_core::Error| HarnessError::InvalidSpec(e.to_string());
        self.learner.validate().map_err(core)?;
        m.apply(&self.learner).validate().map_err(core)?;
        self.curriculum.validate().map_err(core)?;
        self.filter.validate().map_err(core)?;
        self.game.validate().map_err(core)?;
        self.fit.ga.validate().map_err(core)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form (object keys sorted), so the
    /// hash does not depend on field order in the source document.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("spec serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The curriculum arms, in a fixed order: curricula, then horizons,
    /// then taus, then pairings.
    pub fn arms(&self) -> Vec<Arm> {
        let mut arms = Vec::new();
        for &pairing in &self.pairings {
            let suffix = if pairing == Pairing::Mismatched { "-AB" } else { "" };
            for &kind in &self.curricula {
                match kind {
                    CurriculumKind::Random | CurriculumKind::Heuristic => {
                        let name = if kind == CurriculumKind::Random { "random" } else { "heuristic" };
                        arms.push(Arm { label: format!("{name}{suffix}"), kind, horizon: 0, tau: 0.0, pairing });
                    }
                    CurriculumKind::Snmpc => {
                        for &horizon in &self.horizons {
                            for &tau in &self.taus {
                                arms.push(Arm {
                                    label: format!("snmpc-P{horizon}-tau{tau}{suffix}"),
                                    kind,
                                    horizon,
                                    tau,
                                    pairing,
                                });
                            }
                        }
                    }
                }
            }
        }
        arms
    }

    /// Parameters used by the planner and the estimator of an arm.
    pub fn planner_params(&self, pairing: Pairing) -> ModelParams {
        match pairing {
            Pairing::Matched => self.learner,
            Pairing::Mismatched => self.model_b.apply(&self.learner),
        }
    }
}
