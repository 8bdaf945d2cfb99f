//! Simulation, estimation and curriculum planning for de-novo motor learning
//! through a body-machine interface.
//!
//! A simulated learner moves 20 finger joints to steer a 2-D cursor through
//! a fixed linear mapping. Its latent skill is the internal estimate of the
//! synergy weights of that mapping. This crate provides:
//!
//! * [`model`]: the stochastic learning dynamics, synthetic calibration and
//!   game-trial simulation,
//! * [`metrics`]: reaching error, trajectory straightness, trajectory error
//!   and forward-modeling error,
//! * [`estimation`]: particle filter skill estimation plus EKF/UKF baselines,
//! * [`curriculum`]: random, performance-heuristic and stochastic MPC target
//!   sequencing,
//! * [`ucm`]: uncontrolled-manifold variance decomposition,
//! * [`fitting`]: two-phase NSGA-II fitting of model parameters.

pub mod curriculum;
pub mod error;
pub mod estimation;
pub mod fitting;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod ucm;

pub use error::{Error, Result};
pub use model::{
    GameConfig, Hml, LearnerState, ModelParams, Point, Sample, SynergySystem, TrialRecord,
};
