//! Explicit semi-Lagrangian baseline: directional second differences of
//! length k along the factorized diffusion columns, with linear
//! interpolation of off-grid values.
//!
//! The scheme discretizes the same backward problem as the expectation-based
//! schemes but with a fixed-length stencil: each node queries the known
//! level at x ± k·A_i for the two direction columns, the drift riding on the
//! second pair as a k²·b shift. Off-grid queries are resolved by bilinear
//! interpolation; queries outside the domain are resolved by the configured
//! Dirichlet boundary treatment, either the problem's exact solution or
//! constant extension from the nearest boundary cell. Under the CFL
//! condition every update is a nonnegative combination of known values, so
//! the scheme is monotone, but the stencil length k ≫ h makes the boundary
//! treatment decisive for accuracy: exact exterior values keep first-order
//! convergence while extrapolated ones visibly degrade it.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Result, SolverError};
use crate::grid::{Grid, SolutionField};
use crate::interp::bilinear_eval;
use crate::kinematics::rotation_quantities;
use crate::problem::{
    BoundaryCondition, BoundaryKind, CoefficientSample, Domain, ProblemSpec, ScalarFn,
};
use crate::schemes::{Solution, StepReport};

/// Number of direction columns in the factorized diffusion decomposition.
pub const DIRECTION_COUNT: usize = 2;

/// How stencil queries that land outside the domain are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LislBoundary {
    /// Evaluate the problem's exact solution at the exterior point.
    Exact,
    /// Bilinear extension from the nearest grid cell with weights clamped
    /// to [0, 1]; equivalent to interpolating at the exterior point's
    /// closest point in the closed domain.
    Extrapolation,
}

impl std::fmt::Display for LislBoundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LislBoundary::Exact => "exact",
            LislBoundary::Extrapolation => "extrapolation",
        })
    }
}

/// Configuration of the semi-Lagrangian baseline.
#[derive(Debug, Clone, Copy)]
pub struct LislConfig {
    /// Stencil length parameter multiplying the direction columns.
    pub k: f64,
    /// θ of the time discretization; only the explicit θ = 0 variant is in
    /// scope, and any other value is rejected.
    pub theta_scheme: f64,
    /// Out-of-domain query treatment.
    pub boundary_mode: LislBoundary,
}

impl LislConfig {
    /// Default configuration for a grid: k = √(2·h) with h the coarser
    /// spacing, which reproduces the reference convergence studies and
    /// satisfies the CFL condition with Δt = h/4 by a wide margin
    /// (Δt·(P/k² + r) = 0.25 + O(h·r)).
    pub fn for_grid(grid: &Grid, boundary_mode: LislBoundary) -> Self {
        let h = grid.h1().max(grid.h2());
        LislConfig {
            k: (2.0 * h).sqrt(),
            theta_scheme: 0.0,
            boundary_mode,
        }
    }

    /// Checks the parameter ranges that do not depend on a problem or grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(SolverError::Config(format!(
                "stencil length k = {} must be positive and finite",
                self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.theta_scheme) {
            return Err(SolverError::Config(format!(
                "theta = {} must lie in [0, 1]",
                self.theta_scheme
            )));
        }
        if self.theta_scheme != 0.0 {
            return Err(SolverError::Config(format!(
                "theta = {} is not supported; only the explicit variant (theta = 0) is implemented",
                self.theta_scheme
            )));
        }
        Ok(())
    }
}

/// The two direction columns of the diffusion factorization at one sample.
///
/// With θ = ½·arcsin ρ, the columns (σ1·cosθ, σ2·sinθ) and
/// (σ1·sinθ, σ2·cosθ) satisfy A_1A_1ᵀ + A_2A_2ᵀ = [[σ1², ρσ1σ2],
/// [ρσ1σ2, σ2²]], so the directional second differences reproduce the full
/// anisotropic diffusion operator including the cross term.
pub fn direction_columns(coeffs: &CoefficientSample) -> Result<[(f64, f64); DIRECTION_COUNT]> {
    let rotation = rotation_quantities(coeffs.rho)?;
    let (sin_t, cos_t) = rotation.theta.sin_cos();
    Ok([
        (coeffs.sigma1 * cos_t, coeffs.sigma2 * sin_t),
        (coeffs.sigma1 * sin_t, coeffs.sigma2 * cos_t),
    ])
}

/// The four stencil query points around a node: ± k·A_1, then ± k·A_2
/// shifted by the drift displacement k²·b.
pub fn stencil_points(
    node: (f64, f64),
    coeffs: &CoefficientSample,
    k: f64,
) -> Result<[(f64, f64); 4]> {
    let [a1, a2] = direction_columns(coeffs)?;
    let (x, y) = node;
    let shift = (k * k * coeffs.b1, k * k * coeffs.b2);
    Ok([
        (x + k * a1.0, y + k * a1.1),
        (x - k * a1.0, y - k * a1.1),
        (x + k * a2.0 + shift.0, y + k * a2.1 + shift.1),
        (x - k * a2.0 + shift.0, y - k * a2.1 + shift.1),
    ])
}

/// Applies the directional second-difference operator at one node.
///
/// Each direction pair contributes a centered second difference over 2k²;
/// the drift pair is shifted by k²·b so the same difference also carries
/// b·∇f. For smooth fields the value converges to the full second-order
/// operator ½·Tr(AAᵀ·D²f) + b·∇f at rate O(k²). The evaluator resolves
/// every query, on or off the grid.
pub fn operator_value<E>(
    evaluate: E,
    node: (f64, f64),
    coeffs: &CoefficientSample,
    k: f64,
) -> Result<f64>
where
    E: Fn(f64, f64) -> Result<f64>,
{
    if !(k.is_finite() && k > 0.0) {
        return Err(SolverError::Config(format!(
            "stencil length k = {k} must be positive and finite"
        )));
    }
    let center = evaluate(node.0, node.1)?;
    let mut sum = 0.0;
    for (px, py) in stencil_points(node, coeffs, k)? {
        sum += evaluate(px, py)?;
    }
    Ok((sum - 4.0 * center) / (2.0 * k * k))
}

/// CFL load of a configuration on a grid: (1−θ)·Δt·(P/k² + max r).
///
/// The zeroth-order coefficient is sampled at every spatial node on a
/// subsampled set of time levels that always includes both endpoints.
#[derive(Debug, Clone, Copy)]
pub struct CflReport {
    /// The attained left-hand side of the condition.
    pub load: f64,
    /// 1 − load; negative when the condition fails.
    pub margin: f64,
    /// Largest zeroth-order coefficient seen in the sample sweep.
    pub r_max: f64,
}

impl CflReport {
    /// True when the monotonicity condition load ≤ 1 holds.
    pub fn satisfied(&self) -> bool {
        self.load <= 1.0
    }
}

/// Evaluates the CFL condition for a problem, grid, and configuration.
pub fn cfl_check(problem: &ProblemSpec, grid: &Grid, config: &LislConfig) -> Result<CflReport> {
    config.validate()?;
    let mut r_max = f64::NEG_INFINITY;
    let stride = (grid.steps() / 64).max(1);
    let mut levels: Vec<usize> = (0..=grid.steps()).step_by(stride).collect();
    if levels.last() != Some(&grid.steps()) {
        levels.push(grid.steps());
    }
    for n in levels {
        let t = grid.time(n);
        for i in 0..=grid.m1() {
            for j in 0..=grid.m2() {
                let (x, y) = grid.node(i, j);
                r_max = r_max.max(problem.coefficients(x, y, t)?.r);
            }
        }
    }
    let load = (1.0 - config.theta_scheme)
        * grid.dt()
        * (DIRECTION_COUNT as f64 / (config.k * config.k) + r_max);
    Ok(CflReport {
        load,
        margin: 1.0 - load,
        r_max,
    })
}

fn clamp_into(domain: &Domain, point: (f64, f64)) -> (f64, f64) {
    (
        point.0.clamp(domain.x_min, domain.x_max),
        point.1.clamp(domain.y_min, domain.y_max),
    )
}

fn dirichlet_data(problem: &ProblemSpec) -> Result<ScalarFn> {
    match problem.boundary() {
        BoundaryCondition::Dirichlet(f) => Ok(f.clone()),
        _ => Err(SolverError::Config(format!(
            "the semi-Lagrangian baseline requires Dirichlet data, but problem '{}' has {} boundaries",
            problem.name(),
            problem.boundary_kind()
        ))),
    }
}

fn check_mode(problem: &ProblemSpec, config: &LislConfig) -> Result<()> {
    if config.boundary_mode == LislBoundary::Exact && !problem.has_exact() {
        return Err(SolverError::Config(format!(
            "exact boundary mode requires an exact solution, but problem '{}' has none",
            problem.name()
        )));
    }
    Ok(())
}

/// One explicit backward step: U^n = U^{n+1} + Δt·(L_k[U^{n+1}] − r·U^{n+1}).
///
/// Coefficients are sampled at t_{n+1}, matching the level the operator acts
/// on; Dirichlet nodes are refreshed from boundary data at t_n. The returned
/// report counts stencil queries that fell outside the domain in the
/// `boundary_stopped` slot.
pub fn lisl_step(
    problem: &ProblemSpec,
    grid: &Grid,
    config: &LislConfig,
    next: &SolutionField,
    n: usize,
) -> Result<(SolutionField, StepReport)> {
    config.validate()?;
    check_mode(problem, config)?;
    let data = dirichlet_data(problem)?;
    if n + 1 > grid.steps() {
        return Err(SolverError::Argument(format!(
            "step {n} out of range for a grid with {} steps",
            grid.steps()
        )));
    }
    if next.level() != n + 1 {
        return Err(SolverError::Argument(format!(
            "stepping to level {n} requires the level-{} field, got level {}",
            n + 1,
            next.level()
        )));
    }
    let domain = grid.domain();
    let (m1, m2) = (grid.m1(), grid.m2());
    let (t_n, t_next, dt) = (grid.time(n), grid.time(n + 1), grid.dt());
    let resolve = |x: f64, y: f64| -> Result<f64> {
        if domain.contains_closure(x, y) {
            bilinear_eval(next, grid, (x, y))
        } else {
            match config.boundary_mode {
                LislBoundary::Exact => problem.exact(x, y, t_next).ok_or_else(|| {
                    SolverError::Config(format!(
                        "exact boundary mode requires an exact solution, but problem '{}' has none",
                        problem.name()
                    ))
                }),
                LislBoundary::Extrapolation => {
                    bilinear_eval(next, grid, clamp_into(&domain, (x, y)))
                }
            }
        }
    };

    let rows: Vec<(Vec<f64>, usize)> = (0..=m1)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, usize)> {
            let x = grid.x(i);
            let mut vals = Vec::with_capacity(m2 + 1);
            let mut exterior = 0usize;
            for j in 0..=m2 {
                let y = grid.y(j);
                if i == 0 || j == 0 || i == m1 || j == m2 {
                    vals.push(data(x, y, t_n));
                    continue;
                }
                let c = problem.coefficients(x, y, t_next)?;
                for p in stencil_points((x, y), &c, config.k)? {
                    if !domain.contains_closure(p.0, p.1) {
                        exterior += 1;
                    }
                }
                let l_k = operator_value(resolve, (x, y), &c, config.k)?;
                let u = next.get(i, j);
                vals.push(u + dt * (l_k - c.r * u));
            }
            Ok((vals, exterior))
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((m1 + 1, m2 + 1));
    let mut exterior = 0;
    for (i, (vals, count)) in rows.into_iter().enumerate() {
        exterior += count;
        for (j, v) in vals.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let field = SolutionField::from_values(grid, n, values)?;
    let report = StepReport {
        step: n,
        boundary_stopped: exterior,
        implicit_size: 0,
        solver_iterations: 0,
        solver_residual: 0.0,
    };
    Ok((field, report))
}

/// Marches the terminal condition backward to t = 0 with the baseline.
///
/// Validates the configuration, the scheme/boundary pairing, and the CFL
/// condition before stepping; a violated CFL condition is a configuration
/// error carrying the attained load.
pub fn solve_lisl(problem: &ProblemSpec, grid: &Grid, config: &LislConfig) -> Result<Solution> {
    config.validate()?;
    check_mode(problem, config)?;
    if problem.boundary_kind() != BoundaryKind::Dirichlet {
        return Err(SolverError::Config(format!(
            "the semi-Lagrangian baseline requires Dirichlet boundaries, but problem '{}' has {}",
            problem.name(),
            problem.boundary_kind()
        )));
    }
    if grid.domain() != problem.domain() {
        return Err(SolverError::Config(format!(
            "grid domain {} does not match problem domain {}",
            grid.domain(),
            problem.domain()
        )));
    }
    if grid.horizon() != problem.horizon() {
        return Err(SolverError::Config(format!(
            "grid horizon {} does not match problem horizon {}",
            grid.horizon(),
            problem.horizon()
        )));
    }
    let report = cfl_check(problem, grid, config)?;
    if !report.satisfied() {
        return Err(SolverError::Config(format!(
            "CFL condition violated: dt·(P/k² + r_max) = {:.6} > 1 (k = {}, dt = {}, r_max = {:.6})",
            report.load,
            config.k,
            grid.dt(),
            report.r_max
        )));
    }
    let mut field = SolutionField::sample(grid, grid.steps(), |x, y| problem.terminal(x, y));
    let mut reports = Vec::with_capacity(grid.steps());
    for n in (0..grid.steps()).rev() {
        let (prev, report) = lisl_step(problem, grid, config, &field, n)?;
        field = prev;
        reports.push(report);
    }
    Ok(Solution { field, reports })
}
