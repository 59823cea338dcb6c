//! Positivity-preserving wide-stencil schemes for two-dimensional linear
//! parabolic equations in non-divergence form, with cross-derivative
//! diffusion, drift, and a zeroth-order term.
//!
//! The solvers march a terminal-value problem backwards in time. Interior
//! updates are built from the expectation of a four-branch random walk whose
//! branches follow the factorized diffusion directions; branches that would
//! leave the domain are stopped on ∂Ω, which keeps every update a convex
//! combination of known values and makes the schemes monotone without any
//! mesh-alignment condition on the cross-derivative.
//!
//! The crate provides:
//!
//! - [`problem`]: problem definitions and built-in verification problems,
//! - [`grid`]: the uniform space-time grid and solution fields,
//! - [`kinematics`]: branch trajectories, boundary stopping, and weights,
//! - [`interp`]: bilinear and space-time trilinear stencils,
//! - [`schemes`]: the four expectation-based schemes and their driver,
//! - [`lisl`]: a semi-Lagrangian wide-stencil baseline,
//! - [`analysis`]: error norms, convergence rates, and a Monte Carlo oracle.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod interp;
pub mod kinematics;
pub mod lisl;
pub mod problem;
pub mod schemes;

pub use analysis::{convergence_rates, error_norms, mc_oracle, ErrorReport, OracleEstimate};
pub use error::{Result, SolverError};
pub use grid::{make_grid, Grid, SolutionField};
pub use interp::{bilinear_eval, bilinear_stencil, trilinear_stencil, StencilEntry, StencilLevel};
pub use kinematics::{
    branch_set, branch_trajectories, branch_weights, exit_time, rotation_quantities, uniform_stop,
    BranchSet, BranchTrajectory, ExitEvent, RotationQuantities, UniformStop, WeightVector,
};
pub use lisl::{
    cfl_check, direction_columns, lisl_step, operator_value, solve_lisl, CflReport, LislBoundary,
    LislConfig,
};
pub use problem::{
    builtin_problem, BoundaryCondition, BoundaryKind, CoefficientFn, CoefficientSample, Domain,
    ProblemSpec, ScalarFn, SurfaceFn, BUILTIN_NAMES,
};
pub use schemes::{
    reflect, solve, solve_m_matrix, step_nonuniform, step_periodic, step_reflective, step_uniform,
    uniform_system, wrap, GsOutcome, Scheme, Solution, SparseSystem, StepReport,
};
