//! Experiment orchestration for the `hml-core` simulation toolkit: scenario
//! specifications, Monte Carlo curriculum runs with per-trial manifests, and
//! CSV/JSON/SVG emission.

pub mod emit;
pub mod run;
pub mod spec;

pub use emit::{emit_outputs, Format};
pub use run::{run_experiment, Outcome, RunManifest, TrialRow};
pub use spec::{ExperimentSpec, Preset, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("self-check failed: {0}")]
    SelfCheck(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] hml_core::Error),
}

impl HarnessError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::UnknownScenario(_) | HarnessError::InvalidSpec(_) => 2,
            HarnessError::Io(_) => 3,
            HarnessError::SelfCheck(_) | HarnessError::Core(_) => 1,
        }
    }
}
