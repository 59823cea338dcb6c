//! The four expectation-based time-stepping engines and the backward solve
//! loop.
//!
//! All four schemes march one backward step from the known level t_{n+1} to
//! t_n by averaging the four branch values of the walk rooted at each node:
//!
//! - non-uniform stopping (Dirichlet): each branch runs to its own boundary
//!   stopping time and the average uses the moment-matched weights;
//! - uniform stopping (Dirichlet): every branch stops at the branch
//!   minimum; nodes stopped early couple to level t_n through space-time
//!   interpolation and form a sparse M-matrix system;
//! - reflective (homogeneous Neumann): full-step branches are mirrored at
//!   the walls, then edge values are copied from their interior neighbors;
//! - periodic: full-step branches are wrapped around the torus.
//!
//! Every update is a convex combination of known values scaled by a factor
//! 1/(1 + r τ̂) ≤ 1, which is what makes the schemes monotone, positivity
//! preserving, and unconditionally L∞-stable.

mod sparse;

pub use sparse::{solve_m_matrix, GsOutcome, SparseSystem};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Result, SolverError};
use crate::grid::{Grid, SolutionField};
use crate::interp::{bilinear_eval, trilinear_stencil, StencilLevel};
use crate::kinematics::{branch_set, branch_trajectories, branch_weights, uniform_stop};
use crate::problem::{BoundaryCondition, BoundaryKind, Domain, ProblemSpec, ScalarFn};

/// Tolerance passed to the Gauss-Seidel solver for implicit steps.
const GS_TOL: f64 = 1e-12;
/// Lower bound on Gauss-Seidel sweeps so tiny systems on coarse grids get
/// enough iterations to reach the residual tolerance.
const GS_MIN_ITERS: usize = 120;

/// Time-stepping engine selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Per-branch boundary stopping with moment-matched weights.
    NonUniform,
    /// Common minimum stopping time with an implicit boundary-layer system.
    Uniform,
    /// Full-step branches mirrored at the walls.
    Reflective,
    /// Full-step branches wrapped around the torus.
    Periodic,
}

impl Scheme {
    /// Boundary condition the scheme is built for.
    pub fn expected_boundary(self) -> BoundaryKind {
        match self {
            Scheme::NonUniform | Scheme::Uniform => BoundaryKind::Dirichlet,
            Scheme::Reflective => BoundaryKind::Neumann,
            Scheme::Periodic => BoundaryKind::Periodic,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::NonUniform => "non-uniform stopping",
            Scheme::Uniform => "uniform stopping",
            Scheme::Reflective => "reflective",
            Scheme::Periodic => "periodic",
        };
        f.write_str(s)
    }
}

/// Per-step observability counters.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Backward step index n (the level that was written).
    pub step: usize,
    /// Branches that stopped on ∂Ω during the step.
    pub boundary_stopped: usize,
    /// Rows of the implicit system (0 for fully explicit steps).
    pub implicit_size: usize,
    /// Gauss-Seidel sweeps spent on the implicit system.
    pub solver_iterations: usize,
    /// Final max-norm residual of the implicit solve.
    pub solver_residual: f64,
}

impl StepReport {
    fn explicit(step: usize, boundary_stopped: usize) -> Self {
        StepReport {
            step,
            boundary_stopped,
            implicit_size: 0,
            solver_iterations: 0,
            solver_residual: 0.0,
        }
    }
}

/// Field at t = 0 together with the per-step reports of the backward march.
#[derive(Debug, Clone)]
pub struct Solution {
    pub field: SolutionField,
    pub reports: Vec<StepReport>,
}

fn dirichlet_data(problem: &ProblemSpec) -> Result<ScalarFn> {
    match problem.boundary() {
        BoundaryCondition::Dirichlet(f) => Ok(f.clone()),
        _ => Err(SolverError::Config(format!(
            "this scheme requires Dirichlet data, but problem '{}' has {} boundaries",
            problem.name(),
            problem.boundary_kind()
        ))),
    }
}

fn check_step(grid: &Grid, next: &SolutionField, n: usize) -> Result<()> {
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
    Ok(())
}

fn fill_dirichlet_boundary(values: &mut Array2<f64>, grid: &Grid, data: &ScalarFn, t: f64) {
    let (m1, m2) = (grid.m1(), grid.m2());
    for i in 0..=m1 {
        values[[i, 0]] = data(grid.x(i), grid.y(0), t);
        values[[i, m2]] = data(grid.x(i), grid.y(m2), t);
    }
    for j in 0..=m2 {
        values[[0, j]] = data(grid.x(0), grid.y(j), t);
        values[[m1, j]] = data(grid.x(m1), grid.y(j), t);
    }
}

/// One backward step of the non-uniform stopping scheme (Dirichlet).
///
/// Each interior node averages its four branches with the moment-matched
/// weights: branches that stayed inside contribute the bilinear interpolant
/// of the level-(n+1) field at their full-step endpoint, branches stopped on
/// ∂Ω contribute boundary data at their exit point and exit time, and each
/// contribution is discounted by 1/(1 + r τ̂_k). Boundary nodes are set to
/// boundary data at t_n.
pub fn step_nonuniform(
    problem: &ProblemSpec,
    grid: &Grid,
    next: &SolutionField,
    n: usize,
) -> Result<(SolutionField, StepReport)> {
    check_step(grid, next, n)?;
    let data = dirichlet_data(problem)?;
    let domain = grid.domain();
    let (m1, m2) = (grid.m1(), grid.m2());
    let (t_n, dt) = (grid.time(n), grid.dt());

    let rows: Vec<(Vec<f64>, usize)> = (1..m1)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, usize)> {
            let x = grid.x(i);
            let mut vals = Vec::with_capacity(m2 - 1);
            let mut stopped = 0usize;
            for j in 1..m2 {
                let y = grid.y(j);
                let c = problem.coefficients(x, y, t_n)?;
                let set = branch_set((x, y), &c, &domain, dt)?;
                let w = branch_weights(set.tauhat)?;
                let mut value = 0.0;
                for k in 0..4 {
                    let u = if set.exited[k] {
                        stopped += 1;
                        data(set.endpoints[k].0, set.endpoints[k].1, t_n + set.tauhat[k])
                    } else {
                        bilinear_eval(next, grid, set.endpoints[k])?
                    };
                    value += w.omega[k] / (1.0 + c.r * set.tauhat[k]) * u;
                }
                vals.push(value);
            }
            Ok((vals, stopped))
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((m1 + 1, m2 + 1));
    fill_dirichlet_boundary(&mut values, grid, &data, t_n);
    let mut boundary_stopped = 0;
    for (i, (vals, stopped)) in rows.into_iter().enumerate() {
        boundary_stopped += stopped;
        for (j, v) in vals.into_iter().enumerate() {
            values[[i + 1, j + 1]] = v;
        }
    }
    let field = SolutionField::from_values(grid, n, values)?;
    Ok((field, StepReport::explicit(n, boundary_stopped)))
}

/// Interior node classified by its uniform stopping time.
enum NodeUpdate {
    /// No branch exited early; value computed from level n+1 alone.
    Explicit { value: f64, stopped: usize },
    /// Some branch exited before the step end; couples to level n.
    Implicit(ImplicitNode),
}

struct ImplicitNode {
    i: usize,
    j: usize,
    tauhat: f64,
    /// Absolute stopping time t_n + τ̂, nudged strictly inside (t_n, t_{n+1}).
    tau_abs: f64,
    endpoints: [(f64, f64); 4],
    on_boundary: [bool; 4],
    r: f64,
}

/// Pass 1 of the uniform-stopping step: classify every interior node, fully
/// updating the explicit ones.
fn uniform_classify(
    problem: &ProblemSpec,
    grid: &Grid,
    next: &SolutionField,
    n: usize,
    data: &ScalarFn,
) -> Result<Vec<Vec<NodeUpdate>>> {
    let domain = grid.domain();
    let (m1, m2) = (grid.m1(), grid.m2());
    let (t_n, dt) = (grid.time(n), grid.dt());
    let t_np1 = grid.time(n + 1);

    (1..m1)
        .into_par_iter()
        .map(|i| -> Result<Vec<NodeUpdate>> {
            let x = grid.x(i);
            let mut out = Vec::with_capacity(m2 - 1);
            for j in 1..m2 {
                let y = grid.y(j);
                let c = problem.coefficients(x, y, t_n)?;
                let set = branch_set((x, y), &c, &domain, dt)?;
                let us = uniform_stop(&set, &domain);
                // guard against rounding collisions between t_n + τ̂ and the
                // level times: such nodes are numerically explicit
                let tau_abs = (t_n + us.tauhat).max(t_n.next_up());
                if us.tauhat == dt || tau_abs >= t_np1 {
                    let mut sum = 0.0;
                    let mut stopped = 0;
                    for k in 0..4 {
                        let (ex, ey) = us.endpoints[k];
                        sum += if us.on_boundary[k] {
                            stopped += 1;
                            data(ex, ey, t_np1)
                        } else {
                            bilinear_eval(next, grid, (ex, ey))?
                        };
                    }
                    let value = 0.25 / (1.0 + c.r * us.tauhat) * sum;
                    out.push(NodeUpdate::Explicit { value, stopped });
                } else {
                    out.push(NodeUpdate::Implicit(ImplicitNode {
                        i,
                        j,
                        tauhat: us.tauhat,
                        tau_abs,
                        endpoints: us.endpoints,
                        on_boundary: us.on_boundary,
                        r: c.r,
                    }));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()
}

/// Assembled state of one uniform-stopping step before the implicit solve.
struct UniformAssembly {
    /// Boundary and explicit values already written; implicit slots pending.
    values: Array2<f64>,
    system: Option<SparseSystem>,
    boundary_stopped: usize,
}

fn uniform_assemble(
    problem: &ProblemSpec,
    grid: &Grid,
    next: &SolutionField,
    n: usize,
) -> Result<UniformAssembly> {
    check_step(grid, next, n)?;
    let data = dirichlet_data(problem)?;
    let (m1, m2) = (grid.m1(), grid.m2());
    let t_n = grid.time(n);

    let classified = uniform_classify(problem, grid, next, n, &data)?;

    let mut values = Array2::zeros((m1 + 1, m2 + 1));
    fill_dirichlet_boundary(&mut values, grid, &data, t_n);
    let mut boundary_stopped = 0;
    let mut implicit: Vec<&ImplicitNode> = Vec::new();
    const NO_ROW: u32 = u32::MAX;
    let mut row_of = vec![NO_ROW; (m1 + 1) * (m2 + 1)];
    let node_index = |i: usize, j: usize| i * (m2 + 1) + j;
    for (row, col) in classified.iter().enumerate() {
        let i = row + 1;
        for (k, update) in col.iter().enumerate() {
            let j = k + 1;
            match update {
                NodeUpdate::Explicit { value, stopped } => {
                    values[[i, j]] = *value;
                    boundary_stopped += stopped;
                }
                NodeUpdate::Implicit(node) => {
                    row_of[node_index(i, j)] = implicit.len() as u32;
                    implicit.push(node);
                }
            }
        }
    }
    if implicit.is_empty() {
        return Ok(UniformAssembly {
            values,
            system: None,
            boundary_stopped,
        });
    }

    let mut system = SparseSystem::new();
    let mut off: Vec<(usize, f64)> = Vec::with_capacity(12);
    for (row, node) in implicit.iter().enumerate() {
        let disc = 0.25 / (1.0 + node.r * node.tauhat);
        let mut diag = 1.0;
        let mut rhs = 0.0;
        off.clear();
        for k in 0..4 {
            let (ex, ey) = node.endpoints[k];
            if node.on_boundary[k] {
                boundary_stopped += 1;
                rhs += disc * data(ex, ey, node.tau_abs);
                continue;
            }
            for e in trilinear_stencil(grid, (ex, ey), n, node.tau_abs)? {
                let c = disc * e.weight;
                if c == 0.0 {
                    continue;
                }
                match e.level {
                    StencilLevel::Boundary { x, y, t } => rhs += c * data(x, y, t),
                    StencilLevel::Upper => rhs += c * next.get(e.i, e.j),
                    StencilLevel::Lower => {
                        let target = row_of[node_index(e.i, e.j)];
                        if target == NO_ROW {
                            // level-n value at an explicitly updated node is
                            // already known; it feeds the right-hand side
                            rhs += c * values[[e.i, e.j]];
                        } else if target as usize == row {
                            diag -= c;
                        } else if let Some(slot) =
                            off.iter_mut().find(|(col, _)| *col == target as usize)
                        {
                            slot.1 -= c;
                        } else {
                            off.push((target as usize, -c));
                        }
                    }
                }
            }
        }
        system.push_row((node.i, node.j), diag, &off, rhs);
    }
    Ok(UniformAssembly {
        values,
        system: Some(system),
        boundary_stopped,
    })
}

/// One backward step of the uniform stopping scheme (Dirichlet).
///
/// Nodes whose branch minimum equals the full step are updated explicitly
/// with equal weights 1/4 and common discount 1/(1 + r Δt). Nodes stopped
/// early are coupled through the space-time stencil at their stopping time
/// into a sparse M-matrix system, which is validated and solved by
/// Gauss-Seidel.
pub fn step_uniform(
    problem: &ProblemSpec,
    grid: &Grid,
    next: &SolutionField,
    n: usize,
) -> Result<(SolutionField, StepReport)> {
    let UniformAssembly {
        mut values,
        system,
        boundary_stopped,
    } = uniform_assemble(problem, grid, next, n)?;
    let mut report = StepReport::explicit(n, boundary_stopped);
    if let Some(system) = system {
        system.validate()?;
        let iters = (10 * system.size()).max(GS_MIN_ITERS);
        let out = solve_m_matrix(&system, GS_TOL, iters)?;
        for (row, v) in out.x.iter().enumerate() {
            let (i, j) = system.node(row);
            values[[i, j]] = *v;
        }
        report.implicit_size = system.size();
        report.solver_iterations = out.iterations;
        report.solver_residual = out.residual;
    }
    let field = SolutionField::from_values(grid, n, values)?;
    Ok((field, report))
}

/// Assembles (without solving) the implicit system of one uniform-stopping
/// step, for inspection; `None` when no branch exits early anywhere.
pub fn uniform_system(
    problem: &ProblemSpec,
    grid: &Grid,
    next: &SolutionField,
    n: usize,
) -> Result<Option<SparseSystem>> {
    Ok(uniform_assemble(problem, grid, next, n)?.system)
}

/// Mirrors a point back into the domain, at most once per axis.
///
/// A point still outside after one mirror means the step displacement
/// exceeded the domain size, which breaks the scheme's premise; that is an
/// error, not a case for repeated folding.
pub fn reflect(point: (f64, f64), domain: &Domain) -> Result<(f64, f64)> {
    let fold = |v: f64, lo: f64, hi: f64| -> Result<f64> {
        let r = if v < lo {
            2.0 * lo - v
        } else if v > hi {
            2.0 * hi - v
        } else {
            v
        };
        if !(lo..=hi).contains(&r) {
            return Err(SolverError::Argument(format!(
                "reflected coordinate {v} overshoots [{lo}, {hi}]: \
                 the time step is too coarse for this domain"
            )));
        }
        Ok(r)
    };
    Ok((
        fold(point.0, domain.x_min, domain.x_max)?,
        fold(point.1, domain.y_min, domain.y_max)?,
    ))
}

/// One backward step of the reflective scheme (homogeneous Neumann).
///
/// Interior nodes average their four full-step branch endpoints, mirrored
/// into the domain, with weight 1/(4(1 + r Δt)). Edge values are then
/// copied from the adjacent interior line: first both x-edges, then both
/// y-edges, so corners take their final value from the y-copy of already
/// x-copied values.
pub fn step_reflective(
    problem: &ProblemSpec,
    grid: &Grid,
    next: &SolutionField,
    n: usize,
) -> Result<(SolutionField, StepReport)> {
    check_step(grid, next, n)?;
    if problem.boundary_kind() != BoundaryKind::Neumann {
        return Err(SolverError::Config(format!(
            "the reflective scheme requires homogeneous Neumann boundaries, \
             problem '{}' has {}",
            problem.name(),
            problem.boundary_kind()
        )));
    }
    let domain = grid.domain();
    let (m1, m2) = (grid.m1(), grid.m2());
    let (t_n, dt) = (grid.time(n), grid.dt());

    let rows: Vec<Vec<f64>> = (1..m1)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let x = grid.x(i);
            let mut vals = Vec::with_capacity(m2 - 1);
            for j in 1..m2 {
                let y = grid.y(j);
                let c = problem.coefficients(x, y, t_n)?;
                let disc = 0.25 / (1.0 + c.r * dt);
                let mut sum = 0.0;
                for traj in branch_trajectories((x, y), &c)? {
                    let p = reflect(traj.position(dt), &domain)?;
                    sum += bilinear_eval(next, grid, p)?;
                }
                vals.push(disc * sum);
            }
            Ok(vals)
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((m1 + 1, m2 + 1));
    for (i, vals) in rows.into_iter().enumerate() {
        for (j, v) in vals.into_iter().enumerate() {
            values[[i + 1, j + 1]] = v;
        }
    }
    for j in 0..=m2 {
        values[[0, j]] = values[[1, j]];
        values[[m1, j]] = values[[m1 - 1, j]];
    }
    for i in 0..=m1 {
        values[[i, 0]] = values[[i, 1]];
        values[[i, m2]] = values[[i, m2 - 1]];
    }
    let field = SolutionField::from_values(grid, n, values)?;
    Ok((field, StepReport::explicit(n, 0)))
}

/// Wraps a point onto the fundamental cell [x0, x0+Lx) × [y0, y0+Ly).
pub fn wrap(point: (f64, f64), domain: &Domain) -> (f64, f64) {
    let fold = |v: f64, lo: f64, len: f64| {
        let mut r = (v - lo).rem_euclid(len);
        // rem_euclid of a tiny negative can round up to the period itself
        if r >= len {
            r = 0.0;
        }
        lo + r
    };
    (
        fold(point.0, domain.x_min, domain.width()),
        fold(point.1, domain.y_min, domain.height()),
    )
}

/// One backward step of the periodic scheme.
///
/// Every node (boundary nodes included) averages its four full-step
/// branch endpoints wrapped onto the fundamental cell, with weight
/// 1/(4(1 + r Δt)). Opposite edges are computed independently and agree up
/// to the discretization error.
pub fn step_periodic(
    problem: &ProblemSpec,
    grid: &Grid,
    next: &SolutionField,
    n: usize,
) -> Result<(SolutionField, StepReport)> {
    check_step(grid, next, n)?;
    if problem.boundary_kind() != BoundaryKind::Periodic {
        return Err(SolverError::Config(format!(
            "the periodic scheme requires a periodic problem, '{}' has {}",
            problem.name(),
            problem.boundary_kind()
        )));
    }
    let domain = grid.domain();
    let (m1, m2) = (grid.m1(), grid.m2());
    let (t_n, dt) = (grid.time(n), grid.dt());

    let rows: Vec<Vec<f64>> = (0..=m1)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let x = grid.x(i);
            let mut vals = Vec::with_capacity(m2 + 1);
            for j in 0..=m2 {
                let y = grid.y(j);
                let c = problem.coefficients(x, y, t_n)?;
                let disc = 0.25 / (1.0 + c.r * dt);
                let mut sum = 0.0;
                for traj in branch_trajectories((x, y), &c)? {
                    let p = wrap(traj.position(dt), &domain);
                    sum += bilinear_eval(next, grid, p)?;
                }
                vals.push(disc * sum);
            }
            Ok(vals)
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((m1 + 1, m2 + 1));
    for (i, vals) in rows.into_iter().enumerate() {
        for (j, v) in vals.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let field = SolutionField::from_values(grid, n, values)?;
    Ok((field, StepReport::explicit(n, 0)))
}

/// Marches the terminal condition backward to t = 0 with the chosen scheme.
///
/// Level N is sampled from the terminal condition at every node; each
/// backward step then writes one level. A grid with zero steps returns the
/// terminal field itself.
pub fn solve(problem: &ProblemSpec, grid: &Grid, scheme: Scheme) -> Result<Solution> {
    if problem.boundary_kind() != scheme.expected_boundary() {
        return Err(SolverError::Config(format!(
            "scheme '{scheme}' expects {} boundaries, but problem '{}' has {}",
            scheme.expected_boundary(),
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
    let mut field = SolutionField::sample(grid, grid.steps(), |x, y| problem.terminal(x, y));
    let mut reports = Vec::with_capacity(grid.steps());
    for n in (0..grid.steps()).rev() {
        let (prev, report) = match scheme {
            Scheme::NonUniform => step_nonuniform(problem, grid, &field, n)?,
            Scheme::Uniform => step_uniform(problem, grid, &field, n)?,
            Scheme::Reflective => step_reflective(problem, grid, &field, n)?,
            Scheme::Periodic => step_periodic(problem, grid, &field, n)?,
        };
        field = prev;
        reports.push(report);
    }
    Ok(Solution { field, reports })
}
