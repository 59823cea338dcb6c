//! Positivity-preserving interpolation: bilinear in space and trilinear in
//! space-time, exposed both as evaluators and as stencil generators.
//!
//! Every interpolated value is a convex combination of grid values, which is
//! what lets the schemes stay monotone: nonnegative data can never produce a
//! negative interpolant, and no interpolant exceeds the data range.

use crate::error::{Result, SolverError};
use crate::grid::{Grid, SolutionField};

/// Absolute slack for accepting points marginally outside the closed domain;
/// such points arise only from rounding and are clamped onto the closure.
const CLOSURE_SLACK: f64 = 1e-12;

/// Time level a stencil entry refers to, relative to one backward step from
/// t_n to t_{n+1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StencilLevel {
    /// The lower level t_n, the one being solved for in a backward step.
    Lower,
    /// The upper level t_{n+1}, whose values are already known.
    Upper,
    /// A node on ∂Ω whose value is Dirichlet data at the recorded point and
    /// time rather than an unknown.
    Boundary { x: f64, y: f64, t: f64 },
}

/// One (node, level, weight) term of an interpolation stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilEntry {
    pub i: usize,
    pub j: usize,
    pub level: StencilLevel,
    pub weight: f64,
}

/// Owning cell index and local coordinate along one axis.
///
/// A point whose fractional index is exactly an integer belongs to the cell
/// on its lower side (local coordinate 1), so points on the far boundary
/// line resolve without a special case; the cell index is clamped to
/// [0, m-1] for points on the near boundary line.
fn locate(coord: f64, lo: f64, h: f64, m: usize) -> (usize, f64) {
    let fi = (coord - lo) / h;
    let cell = (fi.ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
    let frac = (fi - cell as f64).clamp(0.0, 1.0);
    (cell, frac)
}

fn check_closure(grid: &Grid, point: (f64, f64)) -> Result<()> {
    let d = grid.domain();
    if point.0 < d.x_min - CLOSURE_SLACK
        || point.0 > d.x_max + CLOSURE_SLACK
        || point.1 < d.y_min - CLOSURE_SLACK
        || point.1 > d.y_max + CLOSURE_SLACK
        || !point.0.is_finite()
        || !point.1.is_finite()
    {
        return Err(SolverError::OutOfDomain {
            x: point.0,
            y: point.1,
            t: f64::NAN,
            context: format!("interpolation point outside the closure of {d}"),
        });
    }
    Ok(())
}

/// Cell origin and the four corner weights in the contractual order
/// (i, j), (i+1, j), (i, j+1), (i+1, j+1).
fn spatial_weights(grid: &Grid, point: (f64, f64)) -> Result<(usize, usize, [f64; 4])> {
    check_closure(grid, point)?;
    let d = grid.domain();
    let (ci, fx) = locate(point.0, d.x_min, grid.h1(), grid.m1());
    let (cj, fy) = locate(point.1, d.y_min, grid.h2(), grid.m2());
    let w = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    Ok((ci, cj, w))
}

/// Bilinear interpolation of a single-level field at a point in the closure
/// of the domain.
///
/// The result is a convex combination of the four corners of the owning
/// cell; points up to 1e-12 outside the closure are clamped in.
pub fn bilinear_eval(field: &SolutionField, grid: &Grid, point: (f64, f64)) -> Result<f64> {
    let (ci, cj, w) = spatial_weights(grid, point)?;
    Ok(w[0] * field.get(ci, cj)
        + w[1] * field.get(ci + 1, cj)
        + w[2] * field.get(ci, cj + 1)
        + w[3] * field.get(ci + 1, cj + 1))
}

/// The four (node, weight) terms of [`bilinear_eval`] at the same point.
///
/// Entries are tagged with the upper (known) time level; callers resolving a
/// single-level field can ignore the tag. Weights are nonnegative and sum
/// to 1.
pub fn bilinear_stencil(grid: &Grid, point: (f64, f64)) -> Result<[StencilEntry; 4]> {
    let (ci, cj, w) = spatial_weights(grid, point)?;
    let corners = [(ci, cj), (ci + 1, cj), (ci, cj + 1), (ci + 1, cj + 1)];
    Ok(std::array::from_fn(|k| StencilEntry {
        i: corners[k].0,
        j: corners[k].1,
        level: StencilLevel::Upper,
        weight: w[k],
    }))
}

/// Space-time trilinear stencil for a point queried at an intermediate time
/// tau strictly between levels `step` and `step + 1`.
///
/// The spatial bilinear weights are scaled by alpha = (t_{n+1} - tau)/dt at
/// the lower level and 1 - alpha at the upper level; the eight entries come
/// lower level first, each level in the spatial corner order. Corner nodes
/// lying on ∂Ω are tagged [`StencilLevel::Boundary`] with their coordinates
/// and their level's time, so an implicit assembly can route them to
/// Dirichlet data instead of unknowns. Weights are nonnegative and sum to 1.
pub fn trilinear_stencil(
    grid: &Grid,
    point: (f64, f64),
    step: usize,
    tau: f64,
) -> Result<[StencilEntry; 8]> {
    if step + 1 > grid.steps() {
        return Err(SolverError::Argument(format!(
            "step {step} out of range for a grid with {} steps",
            grid.steps()
        )));
    }
    let t_lo = grid.time(step);
    let t_hi = grid.time(step + 1);
    if !(tau > t_lo && tau < t_hi) {
        return Err(SolverError::Argument(format!(
            "tau = {tau} must lie strictly inside ({t_lo}, {t_hi})"
        )));
    }
    let (ci, cj, w) = spatial_weights(grid, point)?;
    let alpha = ((t_hi - tau) / grid.dt()).clamp(0.0, 1.0);
    let corners = [(ci, cj), (ci + 1, cj), (ci, cj + 1), (ci + 1, cj + 1)];
    Ok(std::array::from_fn(|k| {
        let (i, j) = corners[k % 4];
        let (scale, t, level) = if k < 4 {
            (alpha, t_lo, StencilLevel::Lower)
        } else {
            (1.0 - alpha, t_hi, StencilLevel::Upper)
        };
        let level = if grid.on_boundary(i, j) {
            StencilLevel::Boundary {
                x: grid.x(i),
                y: grid.y(j),
                t,
            }
        } else {
            level
        };
        StencilEntry {
            i,
            j,
            level,
            weight: scale * w[k % 4],
        }
    }))
}
