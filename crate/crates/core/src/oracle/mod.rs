//! Density-grid oracles for the optimal regularized discriminator and the
//! generator-side optimum.

pub mod critic;
pub mod cubic;
pub mod generator;
pub mod grid;
pub mod optimal;
pub mod report;

pub use critic::ScaleInvariantCritic;
pub use cubic::{count_sign_changes, cubic, solve_inner_root, INNER_TOL};
pub use generator::{project_simplex, regularized_value, solve_q_lambda, QLambdaOptions, QLambdaReport};
pub use grid::DensityGrid;
pub use optimal::{
    bias_bound, check_bias_bounds, lambda_delta, solve_optimal_discriminator, verify_scale_invariance, BiasBounds,
    OracleSolution, OUTER_TOL,
};
pub use report::{random_delta_pair, random_pair, run_verification, trend_target, Check, Report, VerifyOptions};
