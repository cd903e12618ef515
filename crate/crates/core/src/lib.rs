//! Long-term treatment effects from short A/B experiment trajectories.
//!
//! Observations are modeled as a per-policy linear Markov state plus an
//! exogenous series shared by every individual. Fitting the per-policy
//! transition matrices jointly with that series removes the drift from the
//! dynamics, and the discounted value of each policy follows in closed
//! form. Stationary and naive baselines, a synthetic environment with known
//! effects, and a benchmarking harness are included.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nonstationary;
pub mod report;
pub mod stationary;
pub mod synthetic;

pub use dataset::{
    estimate_reward_coefficients, load_dataset, mean_initial_observation, read_dataset, save_dataset,
    write_dataset, ExperimentDataset, ObservationTrajectory, RewardFit, RewardModel,
};
pub use error::{Error, Result};
pub use nonstationary::{
    alternate_minimize, build_transition_operator, loss, solve_exogenous, solve_transitions, value_nonstationary,
    ExogenousSeries, FitReport, NonstationaryConfig, Objective,
};
pub use stationary::{
    estimate_effects_stationary, fit_stationary, spectral_radius, value_stationary, StationaryFit, TransitionModel,
};
pub use synthetic::{ground_truth_delta, simulate_dataset, SyntheticConfig, SyntheticTruth};
