//! Model problems: manufactured corner-singularity solutions on the L-shaped
//! domain and a linear smoke test on the unit square.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use crate::geometry::{Mat2, Point2, IDENTITY};
use crate::mesh::{BoundaryPartition, DomainShape};

pub type SpaceTimeFn = Arc<dyn Fn(Point2, f64) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(Point2, f64) -> [f64; 2] + Send + Sync>;
pub type SpatialFn = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;

/// Permeability tensor `K(x)`.
#[derive(Clone)]
pub enum Permeability {
    Constant(Mat2),
    Variable {
        value: Arc<dyn Fn(Point2) -> Mat2 + Send + Sync>,
        /// `d_j = sum_i dK_ij/dx_i`, if known in closed form.
        column_divergence: Option<Arc<dyn Fn(Point2) -> [f64; 2] + Send + Sync>>,
    },
}

impl Permeability {
    pub fn at(&self, p: Point2) -> Mat2 {
        match self {
            Permeability::Constant(k) => *k,
            Permeability::Variable { value, .. } => value(p),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Permeability::Constant(_))
    }

    /// `sum_i dK_ij/dx_i`; falls back to central differences with step `step`.
    pub fn column_divergence(&self, p: Point2, step: f64) -> [f64; 2] {
        match self {
            Permeability::Constant(_) => [0.0, 0.0],
            Permeability::Variable { column_divergence: Some(d), .. } => d(p),
            Permeability::Variable { value, .. } => {
                let dx = |q: Point2| value(q);
                let kxp = dx(Point2::new(p.x + step, p.y));
                let kxm = dx(Point2::new(p.x - step, p.y));
                let kyp = dx(Point2::new(p.x, p.y + step));
                let kym = dx(Point2::new(p.x, p.y - step));
                let h2 = 2.0 * step;
                [
                    (kxp[0][0] - kxm[0][0]) / h2 + (kyp[1][0] - kym[1][0]) / h2,
                    (kxp[0][1] - kxm[0][1]) / h2 + (kyp[1][1] - kym[1][1]) / h2,
                ]
            }
        }
    }
}

/// Exact solution with its spatial gradient and time derivative.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: SpaceTimeFn,
    pub gradient: GradientFn,
    pub time_derivative: SpaceTimeFn,
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub shape: DomainShape,
    pub permeability: Permeability,
    pub source: SpaceTimeFn,
    pub dirichlet: SpaceTimeFn,
    /// `g_N` with the convention `-K grad p . n = g_N`.
    pub neumann: SpaceTimeFn,
    pub initial: SpatialFn,
    pub exact: Option<ExactSolution>,
    pub partition: BoundaryPartition,
    pub final_time: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("shape", &self.shape)
            .field("constant_permeability", &self.permeability.is_constant())
            .field("has_exact", &self.exact.is_some())
            .field("final_time", &self.final_time)
            .finish()
    }
}

/// Angle measured clockwise from the positive x-axis, in `[0, 2pi)`.
///
/// On the L-shaped domain this lies in `[0, 3pi/2]`, with `0` on the ray
/// `{y = 0, x > 0}` and `3pi/2` on `{x = 0, y > 0}`. Undefined at the origin.
pub fn clockwise_angle(x: f64, y: f64) -> f64 {
    (-y.atan2(x)).rem_euclid(2.0 * PI)
}

/// `s = r^(2/3) sin(2 phi / 3)` and its gradient.
pub fn corner_singularity(p: Point2) -> (f64, [f64; 2]) {
    let r2 = p.x * p.x + p.y * p.y;
    let r = r2.sqrt();
    let phi = clockwise_angle(p.x, p.y);
    let (sin_a, cos_a) = (2.0 * phi / 3.0).sin_cos();
    let value = r.powf(2.0 / 3.0) * sin_a;
    let ds_dr = (2.0 / 3.0) * r.powf(-1.0 / 3.0) * sin_a;
    let ds_dphi = (2.0 / 3.0) * r.powf(2.0 / 3.0) * cos_a;
    // clockwise angle: dphi/dx = y / r^2, dphi/dy = -x / r^2
    let gx = ds_dr * p.x / r + ds_dphi * p.y / r2;
    let gy = ds_dr * p.y / r - ds_dphi * p.x / r2;
    (value, [gx, gy])
}

fn time_factor(t: f64) -> (f64, f64) {
    ((FRAC_PI_2 * t).sin(), FRAC_PI_2 * (FRAC_PI_2 * t).cos())
}

/// Harmonic corner singularity `p = sin(pi t / 2) r^(2/3) sin(2 phi / 3)`, `K = I`.
pub fn example1() -> ProblemSpec {
    let value: SpaceTimeFn = Arc::new(|p, t| time_factor(t).0 * corner_singularity(p).0);
    let gradient: GradientFn = Arc::new(|p, t| {
        let a = time_factor(t).0;
        let g = corner_singularity(p).1;
        [a * g[0], a * g[1]]
    });
    let time_derivative: SpaceTimeFn = Arc::new(|p, t| time_factor(t).1 * corner_singularity(p).0);
    ProblemSpec {
        name: "example1".into(),
        shape: DomainShape::LShape,
        permeability: Permeability::Constant(IDENTITY),
        // the spatial part is harmonic, so f = dp/dt
        source: time_derivative.clone(),
        dirichlet: value.clone(),
        neumann: Arc::new(|_, _| 0.0),
        initial: Arc::new(|_| 0.0),
        exact: Some(ExactSolution { value, gradient, time_derivative }),
        partition: BoundaryPartition::all_dirichlet(DomainShape::LShape),
        final_time: 0.5,
    }
}

/// `q = (x^2 - 1)(y^2 - 1)` with gradient and Laplacian.
fn bubble(p: Point2) -> (f64, [f64; 2], f64) {
    let (ax, ay) = (p.x * p.x - 1.0, p.y * p.y - 1.0);
    (ax * ay, [2.0 * p.x * ay, 2.0 * p.y * ax], 2.0 * ay + 2.0 * ax)
}

/// Corner singularity multiplied by `(x^2 - 1)(y^2 - 1)`; not harmonic in space.
pub fn example2() -> ProblemSpec {
    let value: SpaceTimeFn = Arc::new(|p, t| time_factor(t).0 * bubble(p).0 * corner_singularity(p).0);
    let gradient: GradientFn = Arc::new(|p, t| {
        let a = time_factor(t).0;
        let (q, gq, _) = bubble(p);
        let (s, gs) = corner_singularity(p);
        [a * (gq[0] * s + q * gs[0]), a * (gq[1] * s + q * gs[1])]
    });
    let time_derivative: SpaceTimeFn =
        Arc::new(|p, t| time_factor(t).1 * bubble(p).0 * corner_singularity(p).0);
    let dt = time_derivative.clone();
    let source: SpaceTimeFn = Arc::new(move |p, t| {
        let (_, gq, lq) = bubble(p);
        let (s, gs) = corner_singularity(p);
        // laplacian of q*s with harmonic s
        let lap = time_factor(t).0 * (2.0 * (gq[0] * gs[0] + gq[1] * gs[1]) + s * lq);
        dt(p, t) - lap
    });
    ProblemSpec {
        name: "example2".into(),
        shape: DomainShape::LShape,
        permeability: Permeability::Constant(IDENTITY),
        source,
        dirichlet: Arc::new(|_, _| 0.0),
        neumann: Arc::new(|_, _| 0.0),
        initial: Arc::new(|_| 0.0),
        exact: Some(ExactSolution { value, gradient, time_derivative }),
        partition: BoundaryPartition::all_dirichlet(DomainShape::LShape),
        final_time: 0.5,
    }
}

/// Steady linear solution `p = x + y` on the unit square.
pub fn smoke_linear() -> ProblemSpec {
    let value: SpaceTimeFn = Arc::new(|p, _| p.x + p.y);
    ProblemSpec {
        name: "smoke_linear".into(),
        shape: DomainShape::UnitSquare,
        permeability: Permeability::Constant(IDENTITY),
        source: Arc::new(|_, _| 0.0),
        dirichlet: value.clone(),
        neumann: Arc::new(|_, _| 0.0),
        initial: Arc::new(|p| p.x + p.y),
        exact: Some(ExactSolution {
            value,
            gradient: Arc::new(|_, _| [1.0, 1.0]),
            time_derivative: Arc::new(|_, _| 0.0),
        }),
        partition: BoundaryPartition::all_dirichlet(DomainShape::UnitSquare),
        final_time: 0.5,
    }
}

pub fn by_name(name: &str) -> Option<ProblemSpec> {
    match name {
        "example1" => Some(example1()),
        "example2" => Some(example2()),
        "smoke_linear" => Some(smoke_linear()),
        _ => None,
    }
}
