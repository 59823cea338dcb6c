//! Uniform space-time grid and the per-level solution field.

use ndarray::Array2;

use crate::error::{Result, SolverError};
use crate::problem::Domain;

/// Uniform tensor grid with M1 x M2 cells in space and N steps in time.
///
/// Nodes are x_i = x_min + i h1 (i = 0..=M1), y_j = y_min + j h2
/// (j = 0..=M2), t_n = n Δt (n = 0..=N) with Δt = T / N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    domain: Domain,
    m1: usize,
    m2: usize,
    n: usize,
    h1: f64,
    h2: f64,
    dt: f64,
    horizon: f64,
}

/// Builds a grid over `domain` with the given resolution.
///
/// Requires M1, M2 >= 2 so that at least one interior node exists in each
/// axis. N = 0 is accepted as a degenerate grid (Δt = 0) on which a solve
/// returns the terminal data unchanged; stepping requires N >= 1.
pub fn make_grid(domain: Domain, m1: usize, m2: usize, n: usize, horizon: f64) -> Result<Grid> {
    if m1 < 2 || m2 < 2 {
        return Err(SolverError::Argument(format!(
            "grid needs at least 2 cells per axis, got M1 = {m1}, M2 = {m2}"
        )));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(SolverError::Argument(format!(
            "horizon T = {horizon} must be finite and positive"
        )));
    }
    let dt = if n == 0 { 0.0 } else { horizon / n as f64 };
    Ok(Grid {
        domain,
        m1,
        m2,
        n,
        h1: domain.width() / m1 as f64,
        h2: domain.height() / m2 as f64,
        dt,
        horizon,
    })
}

impl Grid {
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    /// Number of time steps N.
    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn h1(&self) -> f64 {
        self.h1
    }

    pub fn h2(&self) -> f64 {
        self.h2
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn x(&self, i: usize) -> f64 {
        debug_assert!(i <= self.m1);
        self.domain.x_min + i as f64 * self.h1
    }

    pub fn y(&self, j: usize) -> f64 {
        debug_assert!(j <= self.m2);
        self.domain.y_min + j as f64 * self.h2
    }

    /// Time of level n; the terminal level maps to T exactly.
    pub fn time(&self, n: usize) -> f64 {
        debug_assert!(n <= self.n);
        if n == self.n {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x(i), self.y(j))
    }

    /// True for nodes on ∂Ω.
    pub fn on_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || i == self.m1 || j == 0 || j == self.m2
    }
}

/// Nodal values of the numeric solution at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    values: Array2<f64>,
    level: usize,
}

impl SolutionField {
    /// Samples `f(x, y)` at every node of `grid`.
    pub fn sample(grid: &Grid, level: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.m1() + 1, grid.m2() + 1), |(i, j)| {
            f(grid.x(i), grid.y(j))
        });
        SolutionField { values, level }
    }

    /// Wraps precomputed nodal values; dimensions must be (M1+1) x (M2+1).
    pub fn from_values(grid: &Grid, level: usize, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.m1() + 1, grid.m2() + 1) {
            return Err(SolverError::Argument(format!(
                "field shape {:?} does not match grid ({}, {})",
                values.dim(),
                grid.m1() + 1,
                grid.m2() + 1
            )));
        }
        Ok(SolutionField { values, level })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[(i, j)] = v;
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(m: usize, n: usize) -> Grid {
        make_grid(Domain::unit_square(), m, m, n, 1.0).unwrap()
    }

    #[test]
    fn spacing_is_uniform() {
        let g = unit_grid(20, 20);
        assert_eq!(g.h1(), 0.05);
        assert_eq!(g.dt(), 0.05);
        for i in 0..20 {
            let d = g.x(i + 1) - g.x(i);
            // rounding happens at the coordinate scale, not the h scale
            assert!((d - g.h1()).abs() <= 1e-15 * (1.0 + g.x(i + 1).abs()));
        }
        // last node hits the far corner up to one rounding
        assert!((g.x(20) - 1.0).abs() <= f64::EPSILON);
        assert!((g.y(20) - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn midpoint_of_even_grid_is_exact() {
        let g = unit_grid(4, 4);
        assert_eq!(g.x(2), 0.5);
        let g = unit_grid(640, 640);
        assert_eq!(g.h1(), 0.0015625);
        assert_eq!(g.x(320), 0.5);
    }

    #[test]
    fn terminal_time_is_exact() {
        let g = unit_grid(10, 7);
        assert_eq!(g.time(7), 1.0);
        assert_eq!(g.time(0), 0.0);
        for n in 0..7 {
            assert!(g.time(n) < g.time(n + 1));
        }
    }

    #[test]
    fn degenerate_single_axis_grids_are_rejected() {
        assert!(make_grid(Domain::unit_square(), 1, 10, 10, 1.0).is_err());
        assert!(make_grid(Domain::unit_square(), 10, 0, 10, 1.0).is_err());
        assert!(make_grid(Domain::unit_square(), 10, 10, 10, 0.0).is_err());
        // N = 0 is the degenerate "terminal only" grid
        let g = unit_grid(4, 0);
        assert_eq!(g.dt(), 0.0);
    }

    #[test]
    fn field_sampling_hits_nodes() {
        let g = unit_grid(8, 4);
        let f = SolutionField::sample(&g, 4, |x, y| 2.0 * x + 3.0 * y);
        assert_eq!(f.get(4, 2), 2.0 * g.x(4) + 3.0 * g.y(2));
        assert_eq!(f.level(), 4);
        assert!(f.is_finite());
    }

    #[test]
    fn field_shape_mismatch_is_rejected() {
        let g = unit_grid(8, 4);
        let bad = Array2::zeros((3, 3));
        assert!(SolutionField::from_values(&g, 0, bad).is_err());
    }

    #[test]
    fn boundary_classification() {
        let g = unit_grid(4, 4);
        assert!(g.on_boundary(0, 2));
        assert!(g.on_boundary(4, 0));
        assert!(!g.on_boundary(2, 2));
    }
}
