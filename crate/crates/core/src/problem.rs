//! Problem definitions: domain, coefficients, data functions, and the
//! built-in verification problems with closed-form solutions.
//!
//! A problem describes the terminal-value equation
//!
//! ```text
//!   ∂t f + ½ Tr(A Aᵀ D²f) + b·∇f − r f = 0   on Ω × [0, T),
//!   f(x, y, T) = φ(x, y),
//! ```
//!
//! where the diffusion matrix is parameterized by volatilities σ1, σ2 ≥ 0
//! and a correlation ρ ∈ [−1, 1] so that A Aᵀ has diagonal σ1², σ2² and
//! off-diagonal ρ σ1 σ2. Space-boundary behaviour is one of: Dirichlet data
//! f_∂(x, y, t), homogeneous Neumann, or periodic continuation.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SolverError};

/// Tolerance for treating a query as lying on the closure of the domain.
const CLOSURE_TOL: f64 = 1e-12;

/// Open rectangle (x_min, x_max) × (y_min, y_max).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let d = Domain {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        let all_finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !all_finite || x_min >= x_max || y_min >= y_max {
            return Err(SolverError::Argument(format!(
                "domain ({x_min}, {x_max}) x ({y_min}, {y_max}) must have finite, strictly ordered sides"
            )));
        }
        Ok(d)
    }

    /// Unit square (0, 1)².
    pub fn unit_square() -> Self {
        Domain {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// True when (x, y) lies in the closed rectangle, up to `CLOSURE_TOL`.
    pub fn contains_closure(&self, x: f64, y: f64) -> bool {
        x >= self.x_min - CLOSURE_TOL
            && x <= self.x_max + CLOSURE_TOL
            && y >= self.y_min - CLOSURE_TOL
            && y <= self.y_max + CLOSURE_TOL
    }

    /// True when (x, y) lies strictly inside the open rectangle.
    pub fn strictly_inside(&self, x: f64, y: f64) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}) x ({}, {})",
            self.x_min, self.x_max, self.y_min, self.y_max
        )
    }
}

/// Pointwise values of every PDE coefficient at one (x, y, t).
///
/// Degenerate volatilities (σ = 0) are allowed: the built-in problems
/// vanish on parts of the space-time domain and the schemes handle the
/// collapsed branches. Negative volatilities are rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSample {
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub b1: f64,
    pub b2: f64,
    pub r: f64,
}

impl CoefficientSample {
    /// Returns (field, value, violated constraint) for the first invariant
    /// that fails, if any.
    fn first_violation(&self) -> Option<(&'static str, f64, &'static str)> {
        let finite = [
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("rho", self.rho),
            ("b1", self.b1),
            ("b2", self.b2),
            ("r", self.r),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Some((name, v, "must be finite"));
            }
        }
        if self.sigma1 < 0.0 {
            return Some(("sigma1", self.sigma1, "must be >= 0"));
        }
        if self.sigma2 < 0.0 {
            return Some(("sigma2", self.sigma2, "must be >= 0"));
        }
        if self.rho.abs() > 1.0 {
            return Some(("rho", self.rho, "must lie in [-1, 1]"));
        }
        if self.r < 0.0 {
            return Some(("r", self.r, "must be >= 0"));
        }
        None
    }

    /// Validates all invariants, reporting the evaluation point on failure.
    pub fn validate(&self, x: f64, y: f64, t: f64) -> Result<()> {
        match self.first_violation() {
            None => Ok(()),
            Some((field, value, constraint)) => Err(SolverError::Coefficient {
                field,
                value,
                x,
                y,
                t,
                constraint,
            }),
        }
    }
}

/// (x, y, t) -> scalar.
pub type ScalarFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// (x, y) -> scalar.
pub type SurfaceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// (x, y, t) -> full coefficient sample.
pub type CoefficientFn = Arc<dyn Fn(f64, f64, f64) -> CoefficientSample + Send + Sync>;

/// Spatial boundary behaviour of a problem.
#[derive(Clone)]
pub enum BoundaryCondition {
    /// Prescribed values f_∂(x, y, t) on ∂Ω.
    Dirichlet(ScalarFn),
    /// Zero normal derivative on ∂Ω.
    NeumannHomogeneous,
    /// The data and coefficients tile the plane with the domain as cell.
    Periodic,
}

/// Discriminant of [`BoundaryCondition`] for compatibility checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Periodic,
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryKind::Dirichlet => "Dirichlet",
            BoundaryKind::Neumann => "homogeneous Neumann",
            BoundaryKind::Periodic => "periodic",
        };
        f.write_str(s)
    }
}

/// A fully specified terminal-value problem.
#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    domain: Domain,
    horizon: f64,
    coefficients: CoefficientFn,
    terminal: SurfaceFn,
    boundary: BoundaryCondition,
    exact: Option<ScalarFn>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .field("boundary", &self.boundary_kind())
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// Number of sample points used to spot-check periodic shift invariance.
const PERIODIC_SAMPLES: usize = 48;

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        horizon: f64,
        coefficients: CoefficientFn,
        terminal: SurfaceFn,
        boundary: BoundaryCondition,
        exact: Option<ScalarFn>,
    ) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(SolverError::Argument(format!(
                "horizon T = {horizon} must be finite and positive"
            )));
        }
        let spec = ProblemSpec {
            name: name.into(),
            domain,
            horizon,
            coefficients,
            terminal,
            boundary,
            exact,
        };
        if spec.boundary_kind() == BoundaryKind::Periodic {
            spec.check_periodicity()?;
        }
        Ok(spec)
    }

    /// Spot-checks that coefficients and terminal data are invariant under
    /// shifts by one period in each axis.
    fn check_periodicity(&self) -> Result<()> {
        let (lx, ly) = (self.domain.width(), self.domain.height());
        // Low-discrepancy lattice; irrational strides avoid aligning with
        // the coefficient's own periods.
        for k in 0..PERIODIC_SAMPLES {
            let u = ((k as f64) * 0.754877666246693).fract();
            let v = ((k as f64) * 0.569840290998054).fract();
            let w = ((k as f64) * 0.367879441171442).fract();
            let x = self.domain.x_min + u * lx;
            let y = self.domain.y_min + v * ly;
            let t = w * self.horizon;
            let base = (self.coefficients)(x, y, t);
            for (sx, sy) in [(lx, 0.0), (0.0, ly)] {
                let shifted = (self.coefficients)(x + sx, y + sy, t);
                let fields = [
                    (base.sigma1, shifted.sigma1),
                    (base.sigma2, shifted.sigma2),
                    (base.rho, shifted.rho),
                    (base.b1, shifted.b1),
                    (base.b2, shifted.b2),
                    (base.r, shifted.r),
                ];
                let coeff_ok = fields
                    .iter()
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                let term_a = (self.terminal)(x, y);
                let term_b = (self.terminal)(x + sx, y + sy);
                let term_ok = (term_a - term_b).abs() <= 1e-12 * (1.0 + term_a.abs());
                if !coeff_ok || !term_ok {
                    return Err(SolverError::Config(format!(
                        "problem `{}` declares periodic boundaries but its data is not \
                         invariant under a shift of ({sx}, {sy}) at ({x}, {y}, {t})",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn boundary(&self) -> &BoundaryCondition {
        &self.boundary
    }

    pub fn boundary_kind(&self) -> BoundaryKind {
        match self.boundary {
            BoundaryCondition::Dirichlet(_) => BoundaryKind::Dirichlet,
            BoundaryCondition::NeumannHomogeneous => BoundaryKind::Neumann,
            BoundaryCondition::Periodic => BoundaryKind::Periodic,
        }
    }

    /// Evaluates and validates all coefficients at one point.
    ///
    /// The query must lie in the closure of the domain (any (x, y) for
    /// periodic problems, which tile the plane) with t in [0, T].
    pub fn coefficients(&self, x: f64, y: f64, t: f64) -> Result<CoefficientSample> {
        let spatial_ok = self.boundary_kind() == BoundaryKind::Periodic
            || self.domain.contains_closure(x, y);
        if !spatial_ok || t < -CLOSURE_TOL || t > self.horizon + CLOSURE_TOL {
            return Err(SolverError::OutOfDomain {
                x,
                y,
                t,
                context: format!("{} x [0, {}]", self.domain, self.horizon),
            });
        }
        let sample = (self.coefficients)(x, y, t);
        sample.validate(x, y, t)?;
        Ok(sample)
    }

    /// Terminal data φ(x, y).
    pub fn terminal(&self, x: f64, y: f64) -> f64 {
        (self.terminal)(x, y)
    }

    /// Dirichlet boundary data f_∂(x, y, t); errors for other boundary kinds.
    pub fn dirichlet_value(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        match &self.boundary {
            BoundaryCondition::Dirichlet(f) => Ok(f(x, y, t)),
            _ => Err(SolverError::Config(format!(
                "problem `{}` has {} boundaries, not Dirichlet",
                self.name,
                self.boundary_kind()
            ))),
        }
    }

    /// Closed-form solution, when known.
    pub fn exact(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        self.exact.as_ref().map(|f| f(x, y, t))
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }
}

/// Names of the registered built-in problems.
pub const BUILTIN_NAMES: [&str; 3] = ["dirichlet-exp", "neumann-trig", "periodic-trig"];

/// Looks up one of the built-in verification problems by name.
///
/// All three live on Ω = (0, 1)² with T = 1, carry fully correlated noise
/// (ρ ≡ 1), and admit the closed-form solutions used by the convergence
/// studies.
pub fn builtin_problem(name: &str) -> Result<ProblemSpec> {
    match name {
        "dirichlet-exp" => dirichlet_exp(),
        "neumann-trig" => neumann_trig(),
        "periodic-trig" => periodic_trig(),
        _ => Err(SolverError::UnknownProblem {
            name: name.to_string(),
            available: BUILTIN_NAMES.join(", "),
        }),
    }
}

/// Exponential solution f = e^{t+x+y} with Dirichlet data and coefficients
/// that degenerate on {x y t = 0}.
fn dirichlet_exp() -> Result<ProblemSpec> {
    let exact: ScalarFn = Arc::new(|x, y, t| (t + x + y).exp());
    ProblemSpec::new(
        "dirichlet-exp",
        Domain::unit_square(),
        1.0,
        Arc::new(|x, y, t| {
            let p = x * y * t;
            let s2 = p + 1.0;
            CoefficientSample {
                sigma1: p,
                sigma2: s2,
                rho: 1.0,
                b1: 0.0,
                b2: 0.0,
                r: 1.0 + 0.5 * p * p + 0.5 * s2 * s2 + p * s2,
            }
        }),
        Arc::new(|x, y| (1.0 + x + y).exp()),
        BoundaryCondition::Dirichlet(exact.clone()),
        Some(exact),
    )
}

/// Trigonometric solution f = e^t sin(πx − π/2) sin(πy − π/2) whose normal
/// derivative vanishes on ∂Ω.
fn neumann_trig() -> Result<ProblemSpec> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let exact: ScalarFn =
        Arc::new(|x, y, t| t.exp() * (PI * x - FRAC_PI_2).sin() * (PI * y - FRAC_PI_2).sin());
    ProblemSpec::new(
        "neumann-trig",
        Domain::unit_square(),
        1.0,
        Arc::new(|x, y, _t| {
            let (sx, cx) = (PI * x - FRAC_PI_2).sin_cos();
            let (sy, cy) = (PI * y - FRAC_PI_2).sin_cos();
            let s2 = sx * sx * sy * sy;
            CoefficientSample {
                sigma1: x / (2.0 * PI),
                sigma2: s2 / (2.0 * PI),
                rho: 1.0,
                b1: 0.0,
                b2: 0.0,
                r: 1.0 - 0.125 * x * x - 0.125 * s2 * s2
                    + 0.25 * x * sx * sy * cx * cy,
            }
        }),
        Arc::new(|x, y| {
            std::f64::consts::E * (PI * x - FRAC_PI_2).sin() * (PI * y - FRAC_PI_2).sin()
        }),
        BoundaryCondition::NeumannHomogeneous,
        Some(exact),
    )
}

/// Trigonometric solution f = e^t sin(2πx) sin(2πy) on the unit torus, with
/// a divergence-free drift whose transport leaves the solution invariant.
fn periodic_trig() -> Result<ProblemSpec> {
    use std::f64::consts::PI;
    let exact: ScalarFn =
        Arc::new(|x, y, t| t.exp() * (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
    ProblemSpec::new(
        "periodic-trig",
        Domain::unit_square(),
        1.0,
        Arc::new(|x, y, _t| {
            let (sx, cx) = (2.0 * PI * x).sin_cos();
            let (sy, cy) = (2.0 * PI * y).sin_cos();
            let s1 = cx * cx * cy * cy;
            let s2 = sx * sx * sy * sy;
            CoefficientSample {
                sigma1: s1 / (4.0 * PI),
                sigma2: s2 / (4.0 * PI),
                rho: 1.0,
                b1: sx * cy / (2.0 * PI),
                b2: -sy * cx / (2.0 * PI),
                r: 1.0 - 0.125 * s1 * s1 - 0.125 * s2 * s2
                    + 0.25 * sx * sy * cx * cx * cx * cy * cy * cy,
            }
        }),
        Arc::new(|x, y| {
            std::f64::consts::E * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
        }),
        BoundaryCondition::Periodic,
        Some(exact),
    )
}
