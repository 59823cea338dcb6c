//! Branch kinematics: the four-direction random-walk geometry behind the
//! expectation-based schemes.
//!
//! The diffusion matrix with volatilities σ1, σ2 and correlation ρ is
//! factorized through the rotation angle θ = ½ arcsin ρ, giving the
//! combined coefficients α = sin θ + cos θ and β = sin θ − cos θ (so that
//! α² + β² = 2 and α² − β² = 2ρ). Replacing the two driving Gaussian
//! increments by Rademacher signs yields four equiprobable branches from a
//! node (x, y); over an elapsed time s each branch sits at
//!
//! ```text
//!   position_k(s) = (x, y) + (b1, b2) s + spread_k √s,
//!   spread_1 = ( α σ1,  α σ2),   spread_2 = (−β σ1,  β σ2),
//!   spread_3 = (−α σ1, −α σ2),   spread_4 = ( β σ1, −β σ2).
//! ```
//!
//! A branch that would leave the domain before the step ends is stopped at
//! its first contact with ∂Ω; the stopping times of the four branches feed
//! either per-branch weights (non-uniform stopping) or a common minimum
//! (uniform stopping).

use crate::error::{Result, SolverError};
use crate::problem::{CoefficientSample, Domain};

/// Rotation angle and combined spread coefficients for a correlation ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationQuantities {
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Computes θ = ½ arcsin ρ and the derived α, β.
pub fn rotation_quantities(rho: f64) -> Result<RotationQuantities> {
    if !rho.is_finite() || rho.abs() > 1.0 {
        return Err(SolverError::Argument(format!(
            "correlation rho = {rho} must lie in [-1, 1]"
        )));
    }
    let theta = 0.5 * rho.asin();
    let (s, c) = theta.sin_cos();
    Ok(RotationQuantities {
        theta,
        alpha: s + c,
        beta: s - c,
    })
}

/// One branch of the walk: position(s) = origin + drift s + spread √s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchTrajectory {
    pub origin: (f64, f64),
    pub drift: (f64, f64),
    pub spread: (f64, f64),
}

impl BranchTrajectory {
    /// Position after an elapsed time s >= 0.
    pub fn position(&self, s: f64) -> (f64, f64) {
        let u = s.sqrt();
        (
            self.origin.0 + self.drift.0 * s + self.spread.0 * u,
            self.origin.1 + self.drift.1 * s + self.spread.1 * u,
        )
    }
}

/// Builds the four branch trajectories rooted at `origin`.
///
/// Branch order is contractual: k = 0..4 carries the spread vectors
/// (ασ1, ασ2), (−βσ1, βσ2), (−ασ1, −ασ2), (βσ1, −βσ2). A vanishing σ
/// collapses the corresponding spread component so the branch follows the
/// drift alone.
pub fn branch_trajectories(
    origin: (f64, f64),
    coeffs: &CoefficientSample,
) -> Result<[BranchTrajectory; 4]> {
    coeffs.validate(origin.0, origin.1, f64::NAN)?;
    let rot = rotation_quantities(coeffs.rho)?;
    let (a, b) = (rot.alpha, rot.beta);
    let drift = (coeffs.b1, coeffs.b2);
    let (s1, s2) = (coeffs.sigma1, coeffs.sigma2);
    let spreads = [
        (a * s1, a * s2),
        (-b * s1, b * s2),
        (-a * s1, -a * s2),
        (b * s1, -b * s2),
    ];
    Ok(spreads.map(|spread| BranchTrajectory {
        origin,
        drift,
        spread,
    }))
}

/// Outcome of tracking one branch until the step ends or ∂Ω is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitEvent {
    /// Elapsed stopping time in (0, dt].
    pub tauhat: f64,
    /// Branch position at `tauhat`; lies on ∂Ω exactly when `exited`.
    pub endpoint: (f64, f64),
    /// True when the branch touched ∂Ω at or before dt (grazing counts).
    pub exited: bool,
}

/// Relative window for accepting a root marginally beyond √dt; such a root
/// is a boundary touch at the step end up to rounding.
const ROOT_WINDOW: f64 = 1e-12;
/// Corner tie window in elapsed-time units: x- and y-crossings closer than
/// this are treated as simultaneous and the x-crossing wins.
const CORNER_TIE: f64 = 1e-14;
/// A closed-form root whose coordinate residual exceeds this is recomputed
/// by bisection.
const RESIDUAL_TOL: f64 = 1e-10;

/// Earliest root candidate of one axis: elapsed time and crossed line value.
#[derive(Clone, Copy)]
struct AxisCrossing {
    s: f64,
    u: f64,
    line: f64,
}

/// First s in (0, dt] at which the branch touches ∂Ω, if any.
///
/// Each coordinate is quadratic in u = √s, so first contact with each of
/// the four boundary lines reduces to a quadratic solved in the
/// numerically stable form q = −(b + sign(b)√disc)/2.
pub fn exit_time(traj: &BranchTrajectory, domain: &Domain, dt: f64) -> Result<ExitEvent> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(SolverError::Argument(format!(
            "step length dt = {dt} must be positive"
        )));
    }
    if !domain.strictly_inside(traj.origin.0, traj.origin.1) {
        return Err(SolverError::Argument(format!(
            "branch origin ({}, {}) must lie strictly inside {domain}",
            traj.origin.0, traj.origin.1
        )));
    }
    let umax = dt.sqrt();

    let x_hit = axis_crossing(
        traj.origin.0,
        traj.drift.0,
        traj.spread.0,
        domain.x_min,
        domain.x_max,
        umax,
    );
    let y_hit = axis_crossing(
        traj.origin.1,
        traj.drift.1,
        traj.spread.1,
        domain.y_min,
        domain.y_max,
        umax,
    );

    let (crossing, crossed_x) = match (x_hit, y_hit) {
        (None, None) => {
            return Ok(ExitEvent {
                tauhat: dt,
                endpoint: traj.position(dt),
                exited: false,
            });
        }
        (Some(x), None) => (x, true),
        (None, Some(y)) => (y, false),
        // simultaneous corner contact resolves to the x-line
        (Some(x), Some(y)) => {
            if y.s < x.s - CORNER_TIE {
                (y, false)
            } else {
                (x, true)
            }
        }
    };

    let crossing = verify_or_bisect(traj, domain, crossing, crossed_x, umax);
    let tauhat = crossing.s.min(dt);
    let u = tauhat.sqrt();
    let endpoint = if crossed_x {
        let y = traj.origin.1 + traj.drift.1 * tauhat + traj.spread.1 * u;
        (crossing.line, clamp_drift(y, domain.y_min, domain.y_max))
    } else {
        let x = traj.origin.0 + traj.drift.0 * tauhat + traj.spread.0 * u;
        (clamp_drift(x, domain.x_min, domain.x_max), crossing.line)
    };
    Ok(ExitEvent {
        tauhat,
        endpoint,
        exited: true,
    })
}

/// Clamps rounding drift of the non-crossed coordinate back into its range.
fn clamp_drift(v: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(
        v >= lo - 1e-9 && v <= hi + 1e-9,
        "coordinate {v} drifted past [{lo}, {hi}]"
    );
    v.clamp(lo, hi)
}

/// Earliest contact of one coordinate with either of its boundary lines.
fn axis_crossing(
    origin: f64,
    drift: f64,
    spread: f64,
    lo: f64,
    hi: f64,
    umax: f64,
) -> Option<AxisCrossing> {
    let mut best: Option<AxisCrossing> = None;
    for line in [lo, hi] {
        if let Some(u) = first_root(drift, spread, origin - line, umax) {
            let s = u * u;
            if best.map_or(true, |b| s < b.s) {
                best = Some(AxisCrossing { s, u, line });
            }
        }
    }
    best
}

/// Smallest u in (0, umax·(1+window)] with a u² + b u + c = 0.
fn first_root(a: f64, b: f64, c: f64, umax: f64) -> Option<f64> {
    let hi = umax * (1.0 + ROOT_WINDOW);
    let accept = |u: f64| u > 0.0 && u <= hi;
    if a == 0.0 {
        if b == 0.0 {
            return None;
        }
        let u = -c / b;
        return accept(u).then_some(u);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (b + disc.sqrt().copysign(if b == 0.0 { 1.0 } else { b }));
    let mut best: Option<f64> = None;
    let mut consider = |u: f64| {
        if accept(u) && best.map_or(true, |b| u < b) {
            best = Some(u);
        }
    };
    if q != 0.0 {
        consider(q / a);
        consider(c / q);
    } else {
        // q = 0 forces b = 0 and disc = 0, i.e. the double root u = 0
        consider(0.0);
    }
    best
}

/// Accepts the closed-form crossing if its residual is tiny, otherwise
/// re-solves the crossed line by bisection over the monotone pieces of the
/// coordinate.
fn verify_or_bisect(
    traj: &BranchTrajectory,
    domain: &Domain,
    crossing: AxisCrossing,
    crossed_x: bool,
    umax: f64,
) -> AxisCrossing {
    let (origin, drift, spread) = if crossed_x {
        (traj.origin.0, traj.drift.0, traj.spread.0)
    } else {
        (traj.origin.1, traj.drift.1, traj.spread.1)
    };
    let g = |u: f64| origin + drift * u * u + spread * u - crossing.line;
    let residual = g(crossing.u).abs();
    if residual <= RESIDUAL_TOL * crossing.line.abs().max(1.0) {
        return crossing;
    }
    // Rare fallback: the coordinate is quadratic in u, so each monotone
    // piece holds at most one root and plain bisection is safe.
    let hi = umax * (1.0 + ROOT_WINDOW);
    let mut knots = vec![0.0];
    if drift != 0.0 {
        let vertex = -spread / (2.0 * drift);
        if vertex > 0.0 && vertex < hi {
            knots.push(vertex);
        }
    }
    knots.push(hi);
    for w in knots.windows(2) {
        let (mut lo, mut up) = (w[0], w[1]);
        let (glo, gup) = (g(lo), g(up));
        if glo == 0.0 && lo > 0.0 {
            return AxisCrossing {
                s: lo * lo,
                u: lo,
                ..crossing
            };
        }
        if glo * gup > 0.0 {
            continue;
        }
        for _ in 0..120 {
            let mid = 0.5 * (lo + up);
            if g(lo) * g(mid) <= 0.0 {
                up = mid;
            } else {
                lo = mid;
            }
        }
        let u = 0.5 * (lo + up);
        return AxisCrossing {
            s: u * u,
            u,
            ..crossing
        };
    }
    let _ = domain;
    crossing
}

/// Per-node, per-step bundle: the four branches with their stopping data.
#[derive(Debug, Clone)]
pub struct BranchSet {
    pub trajectories: [BranchTrajectory; 4],
    pub endpoints: [(f64, f64); 4],
    pub tauhat: [f64; 4],
    pub exited: [bool; 4],
    pub rotation: RotationQuantities,
}

/// Builds the branches at an interior node and stops each on ∂Ω.
pub fn branch_set(
    origin: (f64, f64),
    coeffs: &CoefficientSample,
    domain: &Domain,
    dt: f64,
) -> Result<BranchSet> {
    let trajectories = branch_trajectories(origin, coeffs)?;
    let rotation = rotation_quantities(coeffs.rho)?;
    let mut endpoints = [(0.0, 0.0); 4];
    let mut tauhat = [0.0; 4];
    let mut exited = [false; 4];
    for (k, traj) in trajectories.iter().enumerate() {
        let ev = exit_time(traj, domain, dt)?;
        endpoints[k] = ev.endpoint;
        tauhat[k] = ev.tauhat;
        exited[k] = ev.exited;
    }
    Ok(BranchSet {
        trajectories,
        endpoints,
        tauhat,
        exited,
        rotation,
    })
}

/// Probability-like weights attached to the four stopped branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightVector {
    pub omega: [f64; 4],
}

/// Weights for non-uniform stopping times, evaluated in √-space.
///
/// With s_k = √τ̂_k and D = s1 s3 + s2 s4:
///
/// ```text
///   ω1 = s2 s3 s4 / ((s1 + s3) D),   ω2 = s1 s3 s4 / ((s2 + s4) D),
///   ω3 = s1 s2 s4 / ((s1 + s3) D),   ω4 = s1 s2 s3 / ((s2 + s4) D).
/// ```
///
/// These satisfy Σ ω_k = 1, ω1 τ̂1 − ω2 τ̂2 + ω3 τ̂3 − ω4 τ̂4 = 0,
/// ω1 √τ̂1 = ω3 √τ̂3, and ω2 √τ̂2 = ω4 √τ̂4, which is what restores the
/// expectation structure when branches stop at different times.
pub fn branch_weights(tauhat: [f64; 4]) -> Result<WeightVector> {
    for (k, t) in tauhat.iter().enumerate() {
        if !t.is_finite() || *t <= 0.0 {
            return Err(SolverError::Argument(format!(
                "stopping time tauhat[{k}] = {t} must be positive"
            )));
        }
    }
    let s = tauhat.map(f64::sqrt);
    let d = s[0] * s[2] + s[1] * s[3];
    let d13 = (s[0] + s[2]) * d;
    let d24 = (s[1] + s[3]) * d;
    Ok(WeightVector {
        omega: [
            s[1] * s[2] * s[3] / d13,
            s[0] * s[2] * s[3] / d24,
            s[0] * s[1] * s[3] / d13,
            s[0] * s[1] * s[2] / d24,
        ],
    })
}

/// The four branches re-evaluated at their common (minimum) stopping time.
#[derive(Debug, Clone, Copy)]
pub struct UniformStop {
    pub tauhat: f64,
    pub endpoints: [(f64, f64); 4],
    pub on_boundary: [bool; 4],
}

/// Stops every branch of the set at the earliest branch stopping time.
///
/// Branches whose own stopping time equals the minimum keep their stored
/// (exactly snapped) endpoints; the others are re-evaluated at the common
/// time and are strictly interior there.
pub fn uniform_stop(set: &BranchSet, domain: &Domain) -> UniformStop {
    let tauhat = set.tauhat.iter().copied().fold(f64::INFINITY, f64::min);
    let mut endpoints = [(0.0, 0.0); 4];
    let mut on_boundary = [false; 4];
    for k in 0..4 {
        if set.tauhat[k] == tauhat {
            endpoints[k] = set.endpoints[k];
            on_boundary[k] = set.exited[k];
        } else {
            let (x, y) = set.trajectories[k].position(tauhat);
            endpoints[k] = (
                x.clamp(domain.x_min, domain.x_max),
                y.clamp(domain.y_min, domain.y_max),
            );
        }
    }
    UniformStop {
        tauhat,
        endpoints,
        on_boundary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const SQRT_2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn rotation_reference_points() {
        let r = rotation_quantities(0.0).unwrap();
        assert_eq!((r.theta, r.alpha, r.beta), (0.0, 1.0, -1.0));
        let r = rotation_quantities(1.0).unwrap();
        assert!((r.theta - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((r.alpha - SQRT_2).abs() < 1e-15);
        assert!(r.beta.abs() < 1e-15);
        let r = rotation_quantities(-1.0).unwrap();
        assert!((r.theta + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!(r.alpha.abs() < 1e-15);
        assert!((r.beta + SQRT_2).abs() < 1e-15);
        assert!(rotation_quantities(1.2).is_err());
    }

    #[test]
    fn rotation_invariants_hold_for_random_rho() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..10_000 {
            let rho: f64 = rng.random_range(-1.0..=1.0);
            let r = rotation_quantities(rho).unwrap();
            assert!((r.alpha * r.alpha + r.beta * r.beta - 2.0).abs() < 1e-12);
            assert!((r.alpha * r.alpha - r.beta * r.beta - 2.0 * rho).abs() < 1e-12);
            assert!(r.alpha >= 0.0 && r.alpha <= SQRT_2 + 1e-15);
            assert!(r.beta <= 1e-15 && r.beta >= -SQRT_2 - 1e-15);
        }
    }

    fn sample(sigma1: f64, sigma2: f64, rho: f64, b1: f64, b2: f64) -> CoefficientSample {
        CoefficientSample {
            sigma1,
            sigma2,
            rho,
            b1,
            b2,
            r: 0.0,
        }
    }

    #[test]
    fn fully_correlated_unit_branches() {
        // rho = 1 collapses branches 2 and 4 onto the node; branches 1 and 3
        // move along the diagonal by ±√(2s).
        let trajs = branch_trajectories((0.3, 0.4), &sample(1.0, 1.0, 1.0, 0.0, 0.0)).unwrap();
        let s = 0.01;
        let p1 = trajs[0].position(s);
        assert!((p1.0 - (0.3 + (2.0 * s).sqrt())).abs() < 1e-14);
        assert!((p1.1 - (0.4 + (2.0 * s).sqrt())).abs() < 1e-14);
        let p2 = trajs[1].position(s);
        assert!((p2.0 - 0.3).abs() < 1e-15 && (p2.1 - 0.4).abs() < 1e-15);
        let p3 = trajs[2].position(s);
        assert!((p3.0 - (0.3 - (2.0 * s).sqrt())).abs() < 1e-14);
        let p4 = trajs[3].position(s);
        assert!((p4.0 - 0.3).abs() < 1e-15 && (p4.1 - 0.4).abs() < 1e-15);
        // s = 0 recovers the origin for every branch
        for t in &trajs {
            assert_eq!(t.position(0.0), (0.3, 0.4));
        }
    }

    #[test]
    fn second_moments_match_diffusion_matrix() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..1000 {
            let c = sample(
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let trajs = branch_trajectories((0.5, 0.5), &c).unwrap();
            let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
            for t in &trajs {
                xx += t.spread.0 * t.spread.0;
                xy += t.spread.0 * t.spread.1;
                yy += t.spread.1 * t.spread.1;
            }
            assert!((0.25 * xx - c.sigma1 * c.sigma1).abs() < 1e-12);
            assert!((0.25 * xy - c.rho * c.sigma1 * c.sigma2).abs() < 1e-12);
            assert!((0.25 * yy - c.sigma2 * c.sigma2).abs() < 1e-12);
        }
    }

    #[test]
    fn exit_time_pure_spread_closed_form() {
        // √2 √s = 0.1 at the top boundary: tauhat = 0.005
        let traj = BranchTrajectory {
            origin: (0.5, 0.9),
            drift: (0.0, 0.0),
            spread: (0.0, SQRT_2),
        };
        let ev = exit_time(&traj, &Domain::unit_square(), 0.05).unwrap();
        assert!(ev.exited);
        assert!((ev.tauhat - 0.005).abs() < 1e-15);
        assert_eq!(ev.endpoint, (0.5, 1.0));
    }

    #[test]
    fn no_exit_returns_full_step() {
        let traj = BranchTrajectory {
            origin: (0.5, 0.5),
            drift: (1.0, -1.0),
            spread: (0.2, 0.1),
        };
        let ev = exit_time(&traj, &Domain::unit_square(), 0.01).unwrap();
        assert!(!ev.exited);
        assert_eq!(ev.tauhat, 0.01);
        let p = traj.position(0.01);
        assert_eq!(ev.endpoint, p);
        assert!(Domain::unit_square().strictly_inside(p.0, p.1));
    }

    #[test]
    fn grazing_contact_counts_as_exit() {
        // y(u) = 0.875 + u - 2u² touches 1.0 exactly at u = 1/4 (disc = 0)
        let traj = BranchTrajectory {
            origin: (0.5, 0.875),
            drift: (0.0, -2.0),
            spread: (0.0, 1.0),
        };
        let ev = exit_time(&traj, &Domain::unit_square(), 0.1).unwrap();
        assert!(ev.exited);
        assert_eq!(ev.tauhat, 0.0625);
        assert_eq!(ev.endpoint, (0.5, 1.0));
    }

    #[test]
    fn touch_exactly_at_step_end_is_an_exit() {
        // binary-exact data: x reaches 1 at u = 0.5 = √dt exactly
        let dt: f64 = 0.25;
        let traj = BranchTrajectory {
            origin: (0.75, 0.5),
            drift: (0.0, 0.0),
            spread: (0.5, 0.0),
        };
        let ev = exit_time(&traj, &Domain::unit_square(), dt).unwrap();
        assert!(ev.exited);
        assert_eq!(ev.tauhat, dt);
        assert_eq!(ev.endpoint.0, 1.0);
    }

    #[test]
    fn corner_tie_breaks_to_x() {
        // binary-exact data: both coordinates hit their upper lines at
        // u = 0.25, an exact tie, which must resolve to the x-line
        let traj = BranchTrajectory {
            origin: (0.875, 0.75),
            drift: (0.0, 0.0),
            spread: (0.5, 1.0),
        };
        let ev = exit_time(&traj, &Domain::unit_square(), 0.1).unwrap();
        assert!(ev.exited);
        assert_eq!(ev.tauhat, 0.0625);
        assert_eq!(ev.endpoint, (1.0, 1.0));
    }

    #[test]
    fn origin_on_boundary_is_rejected() {
        let traj = BranchTrajectory {
            origin: (0.0, 0.5),
            drift: (0.0, 0.0),
            spread: (1.0, 0.0),
        };
        assert!(exit_time(&traj, &Domain::unit_square(), 0.1).is_err());
    }

    /// Independent root finder: splits each coordinate into its monotone
    /// pieces in u and bisects 60 times inside any bracketing piece.
    fn bisection_oracle(traj: &BranchTrajectory, domain: &Domain, dt: f64) -> (f64, bool) {
        let umax = dt.sqrt();
        let mut best = f64::INFINITY;
        let lines = [
            (traj.origin.0, traj.drift.0, traj.spread.0, domain.x_min),
            (traj.origin.0, traj.drift.0, traj.spread.0, domain.x_max),
            (traj.origin.1, traj.drift.1, traj.spread.1, domain.y_min),
            (traj.origin.1, traj.drift.1, traj.spread.1, domain.y_max),
        ];
        for (o, dr, sp, line) in lines {
            let g = |u: f64| o + dr * u * u + sp * u - line;
            let mut knots = vec![0.0];
            if dr != 0.0 {
                let v = -sp / (2.0 * dr);
                if v > 0.0 && v < umax {
                    knots.push(v);
                }
            }
            knots.push(umax);
            'pieces: for w in knots.windows(2) {
                let (mut lo, mut hi) = (w[0], w[1]);
                if g(lo) * g(hi) > 0.0 {
                    continue;
                }
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if g(lo) * g(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let u = 0.5 * (lo + hi);
                best = best.min(u * u);
                break 'pieces; // only the first contact of this line matters
            }
        }
        if best.is_finite() {
            (best.min(dt), true)
        } else {
            (dt, false)
        }
    }

    #[test]
    fn drift_pulls_branch_back_before_exit() {
        // x(s) = 0.99 + 2s - √s dips toward 1 but never reaches it in the
        // step; closed form and bisection must both report no exit.
        let traj = BranchTrajectory {
            origin: (0.99, 0.5),
            drift: (2.0, 0.0),
            spread: (-1.0, 0.0),
        };
        let dom = Domain::unit_square();
        let ev = exit_time(&traj, &dom, 0.05).unwrap();
        let (s_oracle, exited_oracle) = bisection_oracle(&traj, &dom, 0.05);
        assert!(!ev.exited);
        assert!(!exited_oracle);
        assert!((ev.tauhat - s_oracle).abs() < 1e-9);
    }

    #[test]
    fn closed_form_matches_bisection_on_random_branches() {
        let dom = Domain::unit_square();
        let mut rng = StdRng::seed_from_u64(20240818);
        for _ in 0..300 {
            let c = sample(
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let origin = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
            let dt = rng.random_range(0.001..0.2);
            for traj in branch_trajectories(origin, &c).unwrap() {
                let ev = exit_time(&traj, &dom, dt).unwrap();
                let (s_oracle, exited_oracle) = bisection_oracle(&traj, &dom, dt);
                assert_eq!(
                    ev.exited, exited_oracle,
                    "exit flag mismatch for {traj:?} dt = {dt}"
                );
                assert!(
                    (ev.tauhat - s_oracle).abs() < 1e-9,
                    "tauhat {} vs oracle {} for {traj:?} dt = {dt}",
                    ev.tauhat,
                    s_oracle
                );
            }
        }
    }

    #[test]
    fn exited_endpoints_sit_exactly_on_the_boundary() {
        let dom = Domain::unit_square();
        let mut rng = StdRng::seed_from_u64(99);
        let mut exits = 0;
        for _ in 0..500 {
            let c = sample(
                rng.random_range(0.5..2.0),
                rng.random_range(0.5..2.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let origin = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
            let set = branch_set(origin, &c, &dom, 0.05).unwrap();
            for k in 0..4 {
                let (x, y) = set.endpoints[k];
                if set.exited[k] {
                    exits += 1;
                    let on_x = x == dom.x_min || x == dom.x_max;
                    let on_y = y == dom.y_min || y == dom.y_max;
                    assert!(on_x || on_y, "endpoint ({x}, {y}) not snapped");
                    assert!(dom.contains_closure(x, y));
                    assert!(set.tauhat[k] > 0.0 && set.tauhat[k] <= 0.05);
                } else {
                    assert_eq!(set.tauhat[k], 0.05);
                    assert!(dom.strictly_inside(x, y));
                }
            }
        }
        assert!(exits > 100, "test setup should produce many exits");
    }

    #[test]
    fn equal_stopping_times_give_quarter_weights() {
        let w = branch_weights([0.05; 4]).unwrap();
        for o in w.omega {
            assert_eq!(o, 0.25);
        }
    }

    #[test]
    fn single_early_branch_weight_closed_form() {
        // tauhat = (dt², dt, dt, dt) gives
        //   ω1 = 1/(1+√dt)², ω2 = ω4 = √dt/(2(1+√dt)), ω3 = √dt/(1+√dt)²
        let dt = 0.01f64;
        let w = branch_weights([dt * dt, dt, dt, dt]).unwrap();
        let root = dt.sqrt();
        assert!((w.omega[0] - 1.0 / ((1.0 + root) * (1.0 + root))).abs() < 1e-15);
        assert!((w.omega[1] - root / (2.0 * (1.0 + root))).abs() < 1e-15);
        assert!((w.omega[2] - root / ((1.0 + root) * (1.0 + root))).abs() < 1e-15);
        assert_eq!(w.omega[1], w.omega[3]);
    }

    #[test]
    fn weight_moment_identities_hold() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..10_000 {
            let t: [f64; 4] = std::array::from_fn(|_| rng.random_range(1e-6..1.0));
            let w = branch_weights(t).unwrap().omega;
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let signed = w[0] * t[0] - w[1] * t[1] + w[2] * t[2] - w[3] * t[3];
            let scale: f64 = w.iter().zip(&t).map(|(w, t)| w * t).sum();
            assert!(signed.abs() <= 1e-12 * scale.max(1e-300));
            assert!((w[0] * t[0].sqrt() - w[2] * t[2].sqrt()).abs() <= 1e-12 * scale.sqrt());
            assert!((w[1] * t[1].sqrt() - w[3] * t[3].sqrt()).abs() <= 1e-12 * scale.sqrt());
            for o in w {
                assert!(o >= 0.0 && o <= 1.0);
            }
        }
    }

    #[test]
    fn earlier_stopping_gets_larger_weight() {
        let w = branch_weights([0.01, 0.05, 0.05, 0.05]).unwrap().omega;
        assert!(w[0] > w[2]);
        let w = branch_weights([0.05, 0.01, 0.05, 0.05]).unwrap().omega;
        assert!(w[1] > w[3]);
    }

    #[test]
    fn nonpositive_stopping_times_are_rejected() {
        assert!(branch_weights([0.0, 0.1, 0.1, 0.1]).is_err());
        assert!(branch_weights([0.1, -0.1, 0.1, 0.1]).is_err());
        assert!(branch_weights([0.1, f64::NAN, 0.1, 0.1]).is_err());
    }

    #[test]
    fn uniform_stop_takes_branch_minimum() {
        let dom = Domain::unit_square();
        // strong upward diagonal spread from a node near the top corner
        let c = sample(1.0, 1.0, 1.0, 0.0, 0.0);
        let set = branch_set((0.9, 0.9), &c, &dom, 0.05).unwrap();
        let us = uniform_stop(&set, &dom);
        let min = set.tauhat.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(us.tauhat, min);
        assert!(us.tauhat < 0.05, "branch 1 must exit early");
        // the exiting branch keeps its snapped endpoint
        let k = set.tauhat.iter().position(|t| *t == min).unwrap();
        assert!(us.on_boundary[k]);
        assert_eq!(us.endpoints[k], set.endpoints[k]);
        // all other branches are re-evaluated strictly inside
        for i in 0..4 {
            if i != k && !us.on_boundary[i] {
                let p = set.trajectories[i].position(us.tauhat);
                assert!((us.endpoints[i].0 - p.0).abs() < 1e-15);
                assert!((us.endpoints[i].1 - p.1).abs() < 1e-15);
                assert!(dom.contains_closure(p.0, p.1));
            }
        }
    }

    #[test]
    fn uniform_stop_without_exits_keeps_full_step() {
        let dom = Domain::unit_square();
        let c = sample(0.1, 0.1, 0.3, 0.0, 0.0);
        let set = branch_set((0.5, 0.5), &c, &dom, 0.01).unwrap();
        let us = uniform_stop(&set, &dom);
        assert_eq!(us.tauhat, 0.01);
        assert_eq!(us.on_boundary, [false; 4]);
        assert_eq!(us.endpoints, set.endpoints);
    }
}
