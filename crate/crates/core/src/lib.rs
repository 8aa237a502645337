//! Social-optimum solvers for discrete-time, finite-state mean field games.
//!
//! A population spread over `s` states picks, at every step, a row-stochastic
//! transition matrix. The library computes the matrix minimizing the
//! population-weighted (social) cost of one stage, solves the finite-horizon
//! problem with a fixed initial distribution and terminal cost, and finds
//! stationary solutions together with their critical value.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`.

pub mod cost;
pub mod error;
pub mod horizon;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod simplex;
pub mod stationary;
pub mod types;
pub mod verify;

pub use cost::{
    example1_cost, example1_variant_cost, example2_closed_form, example2_cost,
    example2_variant_cost, ConstantCost, CostModel, Example1, Example1Params, Example1Variant,
    Example2, Example2Variant, ModelSpec, SharedModel, ZeroCost,
};
pub use error::{MfgError, Result};
pub use horizon::{
    backward_pass, forward_pass, residual_p1, solve_p1, solve_p1_from, solve_p1_multistart,
    HorizonSolution, HorizonSolverConfig, ProblemInstance,
};
pub use ops::{individual_costs, push_forward, social_cost, stage_objective};
pub use scalar::Scalar;
pub use simplex::{
    kkt_residuals, kkt_residuals_with, project_row_to_box_simplex, project_row_to_simplex,
    solve_stage, solve_stage_from, solve_stage_traced, stage_gradient, stage_operators,
    InnerSolverConfig, KktReport, StageOperators, StageSolution,
};
pub use stationary::{
    critical_value, quotient_norm, relative_value_iteration, solve_stationary,
    stationary_residuals, RviOutcome, StationaryConfig, StationarySolution,
};
pub use types::{CostVector, Distribution, Matrix, StrategyMatrix};

/// `f64` instantiations.
pub type Distribution64 = Distribution<f64>;
pub type StrategyMatrix64 = StrategyMatrix<f64>;
pub type CostVector64 = CostVector<f64>;
pub type Matrix64 = Matrix<f64>;
pub type ProblemInstance64 = ProblemInstance<f64>;
pub type HorizonSolution64 = HorizonSolution<f64>;
pub type StationarySolution64 = StationarySolution<f64>;
pub type InnerSolverConfig64 = InnerSolverConfig<f64>;
pub type HorizonSolverConfig64 = HorizonSolverConfig<f64>;
pub type StationaryConfig64 = StationaryConfig<f64>;
pub type SharedModel64 = SharedModel<f64>;
pub type GridOracleConfig64 = verify::GridOracleConfig<f64>;
