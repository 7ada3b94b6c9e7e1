//! Binary-observation network dynamics: simulation, exact Markov analysis,
//! probit likelihood/score, and recursive identification.

pub mod error;
pub mod estimator;
pub mod io;
pub mod likelihood;
pub mod markov;
pub mod model;
pub mod normal;
pub mod transforms;

pub use error::{Error, Result};
pub use estimator::{
    run_estimator, run_estimator_on_stream, sa_step, EstimatorState, FirstUpdate, RunOptions,
    RunRecord, Snapshot, StepSchedule, DEFAULT_BOUND,
};
pub use likelihood::{
    ergodic_objective_estimate, expected_objective, expected_objective_under, log_g,
    log_likelihood, objective_sweep, score, ObjectiveReport, Score, SweepPoint,
};
pub use markov::{
    build_extended_matrix, build_transition_matrix, stationary_distribution,
    transition_probability, verify_lemma1, Lemma1Report, MatrixKind, StationaryDist,
    TransitionMatrix,
};
pub use model::{
    quantize, simulate_trajectory, step_dynamics, unvec_params, vec_params, ExtState,
    NetworkParams, NoiseStream, ParamVector, StateVec, Trajectory,
};
pub use transforms::{
    kernel_distance, recover_from_kernel, standardize, to_row_stochastic, KERNEL_MATCH_TOL,
};
