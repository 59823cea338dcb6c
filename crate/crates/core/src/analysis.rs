//! Error norms, convergence rates, and a Monte Carlo oracle.
//!
//! The norms and rates turn solver output into the rows of a refinement
//! study; the oracle estimates the same solution values by simulating the
//! underlying diffusion directly, giving an independent check that does not
//! share code or discretization with the grid schemes.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SolverError};
use crate::grid::{Grid, SolutionField};
use crate::lisl::direction_columns;
use crate::problem::{BoundaryKind, Domain, ProblemSpec};
use crate::schemes::wrap;

/// Paths per work unit when estimating in parallel; partial sums are
/// combined in chunk order, so results do not depend on scheduling.
const PATH_CHUNK: usize = 4096;

/// One row of a refinement study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub m1: usize,
    pub m2: usize,
    pub n: usize,
    pub err_linf: f64,
    pub err_l2: f64,
    /// Observed L∞ order against the previous row; absent on the first row
    /// and whenever either error in the pair is zero.
    pub rate_linf: Option<f64>,
    /// Observed L² order against the previous row.
    pub rate_l2: Option<f64>,
}

impl ErrorReport {
    /// A rate-less row from grid dimensions and the two norms.
    pub fn new(grid: &Grid, err_linf: f64, err_l2: f64) -> Self {
        ErrorReport {
            m1: grid.m1(),
            m2: grid.m2(),
            n: grid.steps(),
            err_linf,
            err_l2,
            rate_linf: None,
            rate_l2: None,
        }
    }
}

/// Discrete L∞ and L² distance between a solution level and the exact
/// solution at that level's time.
///
/// Every node participates, boundary rows included: the maximum norm is the
/// largest absolute nodal error and the L² norm is √(h1·h2·Σ error²).
pub fn error_norms(
    field: &SolutionField,
    problem: &ProblemSpec,
    grid: &Grid,
) -> Result<(f64, f64)> {
    if !problem.has_exact() {
        return Err(SolverError::Config(format!(
            "error norms need an exact solution, but problem '{}' has none",
            problem.name()
        )));
    }
    let t = grid.time(field.level());
    let mut worst = 0.0f64;
    let mut sum_sq = 0.0f64;
    for i in 0..=grid.m1() {
        for j in 0..=grid.m2() {
            let exact = problem
                .exact(grid.x(i), grid.y(j), t)
                .expect("has_exact was checked");
            let diff = (field.get(i, j) - exact).abs();
            worst = worst.max(diff);
            sum_sq += diff * diff;
        }
    }
    Ok((worst, (grid.h1() * grid.h2() * sum_sq).sqrt()))
}

fn pair_rate(coarse: f64, fine: f64, refinement: f64) -> Option<f64> {
    if coarse <= 0.0 || fine <= 0.0 {
        return None;
    }
    let rate = (coarse / fine).ln() / refinement.ln();
    rate.is_finite().then_some(rate)
}

/// Fills in the observed convergence rates between consecutive rows.
///
/// Rows must come ordered from coarse to fine with strictly increasing M1;
/// the rate between rows a and b is log(err_a/err_b)/log(h_a/h_b), computed
/// per norm, and left absent when either error of a pair vanishes.
pub fn convergence_rates(mut reports: Vec<ErrorReport>) -> Result<Vec<ErrorReport>> {
    if reports.len() < 2 {
        return Err(SolverError::Argument(format!(
            "a refinement study needs at least 2 rows, got {}",
            reports.len()
        )));
    }
    for w in 0..reports.len() - 1 {
        if reports[w + 1].m1 <= reports[w].m1 {
            return Err(SolverError::Argument(format!(
                "rows must refine strictly: M1 = {} is not finer than {}",
                reports[w + 1].m1,
                reports[w].m1
            )));
        }
    }
    for idx in 1..reports.len() {
        let refinement = reports[idx].m1 as f64 / reports[idx - 1].m1 as f64;
        reports[idx].rate_linf =
            pair_rate(reports[idx - 1].err_linf, reports[idx].err_linf, refinement);
        reports[idx].rate_l2 = pair_rate(reports[idx - 1].err_l2, reports[idx].err_l2, refinement);
    }
    Ok(reports)
}

/// Monte Carlo estimate of the solution value at one space-time point.
#[derive(Debug, Clone, Copy)]
pub struct OracleEstimate {
    pub mean: f64,
    /// Sample standard deviation divided by √paths.
    pub std_error: f64,
    pub paths: usize,
    pub seed: u64,
}

/// Expands (seed, path index) into an independent 256-bit stream key, so
/// every path draws from its own generator regardless of scheduling.
fn path_key(seed: u64, index: u64) -> [u8; 32] {
    let mut state = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

/// Uniform draw in the open interval (0, 1), safe to feed the inverse CDF.
fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn mirror_axis(value: f64, lo: f64, hi: f64) -> f64 {
    let mut v = value;
    while v < lo || v > hi {
        v = if v < lo { 2.0 * lo - v } else { 2.0 * hi - v };
    }
    v
}

fn inside_open(domain: &Domain, p: (f64, f64)) -> bool {
    p.0 > domain.x_min && p.0 < domain.x_max && p.1 > domain.y_min && p.1 < domain.y_max
}

fn simulate_path(
    problem: &ProblemSpec,
    start: (f64, f64),
    t: f64,
    substeps: usize,
    normal: &Normal,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let domain = problem.domain();
    let kind = problem.boundary_kind();
    let horizon = problem.horizon();
    let dt = (horizon - t) / substeps as f64;
    let sqrt_dt = dt.sqrt();
    let (mut px, mut py) = start;
    let mut discount = 0.0f64;
    for m in 0..substeps {
        let tm = t + m as f64 * dt;
        let c = problem.coefficients(px, py, tm)?;
        let [a1, a2] = direction_columns(&c)?;
        let g1 = normal.inverse_cdf(unit_open(rng));
        let g2 = normal.inverse_cdf(unit_open(rng));
        let nx = px + c.b1 * dt + sqrt_dt * (a1.0 * g1 + a2.0 * g2);
        let ny = py + c.b2 * dt + sqrt_dt * (a1.1 * g1 + a2.1 * g2);
        match kind {
            BoundaryKind::Dirichlet => {
                discount += c.r * dt;
                if inside_open(&domain, (nx, ny)) {
                    (px, py) = (nx, ny);
                } else {
                    // absorb at the exit sample and pay the boundary data
                    // right there; pulling the payment point back onto the
                    // wall (clamping or segment crossing) displaces it off
                    // the simulated chain and injects an O(√dt) overshoot
                    // bias, an order worse than the Euler step error itself
                    let pay = problem.dirichlet_value(nx, ny, tm + dt)?;
                    return Ok((-discount).exp() * pay);
                }
            }
            BoundaryKind::Neumann => {
                discount += c.r * dt;
                px = mirror_axis(nx, domain.x_min, domain.x_max);
                py = mirror_axis(ny, domain.y_min, domain.y_max);
            }
            BoundaryKind::Periodic => {
                discount += c.r * dt;
                (px, py) = wrap((nx, ny), &domain);
            }
        }
    }
    Ok((-discount).exp() * problem.terminal(px, py))
}

/// Feynman–Kac Monte Carlo estimate of the solution at (x, y, t).
///
/// Simulates `paths` Euler–Maruyama trajectories of the factorized diffusion
/// with `substeps` steps from t to the horizon, applying the boundary rule
/// of the problem (Dirichlet absorption with boundary payoff, Neumann
/// mirroring, periodic wrapping) and discounting by the left-endpoint
/// approximation of ∫r. A Dirichlet path is absorbed at the first sub-step
/// sample outside the open domain and the boundary payoff is evaluated at
/// that sample, so the payoff closure must tolerate points slightly past the
/// walls; the overshoot shrinks with the sub-step. Deterministic for a fixed
/// seed: each path draws from its own counter-derived stream and partial
/// sums are combined in a fixed order, independent of thread count.
pub fn mc_oracle(
    problem: &ProblemSpec,
    x: f64,
    y: f64,
    t: f64,
    paths: usize,
    substeps: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if paths < 1 || substeps < 1 {
        return Err(SolverError::Argument(format!(
            "the oracle needs at least one path and one substep, got {paths} and {substeps}"
        )));
    }
    let domain = problem.domain();
    if !inside_open(&domain, (x, y)) {
        return Err(SolverError::OutOfDomain {
            x,
            y,
            t,
            context: format!("the oracle start point must be interior to {domain}"),
        });
    }
    if !(0.0..problem.horizon()).contains(&t) {
        return Err(SolverError::Argument(format!(
            "start time {t} must lie in [0, {})",
            problem.horizon()
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let chunks = paths.div_ceil(PATH_CHUNK);
    let partials: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| -> Result<(f64, f64)> {
            let lo = chunk * PATH_CHUNK;
            let hi = ((chunk + 1) * PATH_CHUNK).min(paths);
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for index in lo..hi {
                let mut rng = ChaCha8Rng::from_seed(path_key(seed, index as u64));
                let v = simulate_path(problem, (x, y), t, substeps, &normal, &mut rng)?;
                sum += v;
                sum_sq += v * v;
            }
            Ok((sum, sum_sq))
        })
        .collect::<Result<_>>()?;
    let (sum, sum_sq) = partials
        .into_iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = paths as f64;
    let mean = sum / n;
    let std_error = if paths > 1 {
        let variance = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (variance / n).sqrt()
    } else {
        0.0
    };
    Ok(OracleEstimate {
        mean,
        std_error,
        paths,
        seed,
    })
}
