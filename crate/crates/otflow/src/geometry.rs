//! Geometry of the unit circle and unit sphere.
//!
//! The sphere is covered by two stereographic charts:
//!
//! * chart `A`, projected from the north pole, with parametrization
//!   `(a, b) -> (2a, 2b, a^2 + b^2 - 1) / (1 + a^2 + b^2)`; it is used for
//!   the southern region `z <= Z_CUT`,
//! * chart `B`, projected from the south pole, with parametrization
//!   `(a, b) -> (2a, 2b, 1 - a^2 - b^2) / (1 + a^2 + b^2)`; it is used for
//!   the northern region `z >= -Z_CUT`.
//!
//! Both charts carry the conformal round metric `g = 4 / (1 + a^2 + b^2)^2 * I`.
//! The transition map between them is the plane inversion
//! `(a, b) -> (a, b) / (a^2 + b^2)`, which is an involution.
//!
//! Every sphere point is *owned* by exactly one chart: `A` owns the closed
//! southern hemisphere `z <= 0`, `B` owns the open northern hemisphere
//! `z > 0`.  In chart coordinates the ownership boundary is the unit circle
//! `a^2 + b^2 = 1` (owned by `A` on both charts' copies of the equator).
//!
//! The circle uses a single periodic chart, the angle `phi` with the
//! embedding `(cos phi, sin phi)` and metric `g = 1`.

use crate::error::{Error, Result};
use nalgebra::{Vector2, Vector3};

/// Latitude cut delimiting chart validity: chart `A` covers `z <= Z_CUT`,
/// chart `B` covers `z >= -Z_CUT`, so the overlap band `|z| <= Z_CUT` is
/// wide enough for interpolation stencils at any useful resolution.
pub const Z_CUT: f64 = 0.3;

/// Chart-plane radius corresponding to latitude `Z_CUT`:
/// `z = (r^2 - 1)/(r^2 + 1) = Z_CUT` gives `r = sqrt(1.3/0.7)`.
pub fn cap_radius() -> f64 {
    ((1.0 + Z_CUT) / (1.0 - Z_CUT)).sqrt()
}

/// Unit-length tolerance enforced by [`SpherePoint::new`].
pub const UNIT_TOL: f64 = 1e-12;

/// Distance (in chart coordinates) from a projection pole below which
/// `sphere_to_chart` refuses to produce coordinates.
const POLE_TOL: f64 = 1e-9;

/// One of the two stereographic charts covering the sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ChartId {
    /// Southern chart, projected from the north pole `(0,0,1)`.
    A,
    /// Northern chart, projected from the south pole `(0,0,-1)`.
    B,
}

impl ChartId {
    pub fn other(self) -> ChartId {
        match self {
            ChartId::A => ChartId::B,
            ChartId::B => ChartId::A,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChartId::A => "A",
            ChartId::B => "B",
        }
    }

    /// Sign of the third embedding component relative to chart `A`:
    /// chart `A` maps `(0,0)` to the south pole, chart `B` to the north pole.
    fn z_sign(self) -> f64 {
        match self {
            ChartId::A => 1.0,
            ChartId::B => -1.0,
        }
    }
}

/// A point on the unit sphere, kept exactly unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpherePoint(Vector3<f64>);

impl SpherePoint {
    /// Wraps a vector that is already unit length within [`UNIT_TOL`],
    /// renormalizing the roundoff away.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::TangencyViolation { inner: n - 1.0 });
        }
        Ok(SpherePoint(v / n))
    }

    /// Normalizes an arbitrary nonzero vector onto the sphere.
    pub fn from_unnormalized(v: Vector3<f64>) -> Self {
        SpherePoint(v.normalize())
    }

    pub fn coords(&self) -> Vector3<f64> {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn antipode(&self) -> SpherePoint {
        SpherePoint(-self.0)
    }

    /// The chart that owns this point: `A` for `z <= 0`, `B` for `z > 0`.
    pub fn owning_chart(&self) -> ChartId {
        if self.0.z <= 0.0 {
            ChartId::A
        } else {
            ChartId::B
        }
    }
}

/// Position expressed in a specific chart.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChartPos {
    pub chart: ChartId,
    pub a: f64,
    pub b: f64,
}

impl ChartPos {
    pub fn new(chart: ChartId, a: f64, b: f64) -> Self {
        ChartPos { chart, a, b }
    }

    pub fn radius_sq(&self) -> f64 {
        self.a * self.a + self.b * self.b
    }
}

/// Maps chart coordinates to the sphere.
pub fn chart_to_sphere(p: ChartPos) -> SpherePoint {
    let r2 = p.radius_sq();
    let q = 1.0 + r2;
    let z = p.chart.z_sign() * (r2 - 1.0) / q;
    SpherePoint(Vector3::new(2.0 * p.a / q, 2.0 * p.b / q, z))
}

/// Inverts the stereographic projection of the given chart.
///
/// Fails with [`Error::PoleSingular`] when `x` is within `1e-9` of the
/// chart's projection pole, where the coordinates diverge.
pub fn sphere_to_chart(x: &SpherePoint, chart: ChartId) -> Result<ChartPos> {
    // Chart A is projected from (0,0,1): (a,b) = (x,y)/(1-z).
    // Chart B is projected from (0,0,-1): (a,b) = (x,y)/(1+z).
    let denom = 1.0 - chart.z_sign() * x.z();
    if denom < POLE_TOL {
        return Err(Error::PoleSingular { chart: chart.name() });
    }
    Ok(ChartPos::new(chart, x.x() / denom, x.y() / denom))
}

/// Chart coordinates in the chart that owns the point.
pub fn owned_chart_pos(x: &SpherePoint) -> ChartPos {
    // The owning chart's pole is in the opposite hemisphere, so this
    // never hits the pole singularity.
    sphere_to_chart(x, x.owning_chart()).expect("owning chart excludes its pole")
}

/// Transition map between the two charts: plane inversion through the
/// unit circle.  Valid away from the chart origin (which the other chart's
/// validity region never contains).
pub fn transition(p: ChartPos) -> ChartPos {
    let r2 = p.radius_sq();
    ChartPos::new(p.chart.other(), p.a / r2, p.b / r2)
}

/// Conformal factor `lambda` of the round metric `g = lambda * I` at the
/// given chart position: `lambda = 4 / (1 + a^2 + b^2)^2`.  Identical for
/// both charts.
pub fn metric_factor(r2: f64) -> f64 {
    let q = 1.0 + r2;
    4.0 / (q * q)
}

/// `sqrt(det g)` at chart radius-squared `r2`; for the conformal metric
/// this coincides with [`metric_factor`].
pub fn sqrt_det_g(r2: f64) -> f64 {
    metric_factor(r2)
}

/// Embedding value together with first and second chart derivatives.
///
/// The layout is `e`, `de[i] = dE/dx_i`, `dde[k]` for `k = (aa, ab, bb)`.
/// These closed forms are the hot path of cost evaluation; the jet engine
/// cross-checks them in tests.
#[derive(Clone, Copy, Debug)]
pub struct EmbedJet2 {
    pub e: Vector3<f64>,
    pub de: [Vector3<f64>; 2],
    pub dde: [Vector3<f64>; 3],
}

/// Closed-form second-order jet of the stereographic embedding.
pub fn embed_jet2(p: ChartPos) -> EmbedJet2 {
    let (a, b) = (p.a, p.b);
    let r2 = a * a + b * b;
    let s = 1.0 / (1.0 + r2);
    let s2 = s * s;
    let s3 = s2 * s;
    let zs = p.chart.z_sign();

    let e = Vector3::new(2.0 * a * s, 2.0 * b * s, zs * (r2 - 1.0) * s);

    // First derivatives.
    let e_a = Vector3::new(
        2.0 * s - 4.0 * a * a * s2,
        -4.0 * a * b * s2,
        zs * 4.0 * a * s2,
    );
    let e_b = Vector3::new(
        -4.0 * a * b * s2,
        2.0 * s - 4.0 * b * b * s2,
        zs * 4.0 * b * s2,
    );

    // Second derivatives, from s_a = -2a s^2, s_aa = -2 s^2 + 8 a^2 s^3 etc.
    let e_aa = Vector3::new(
        -12.0 * a * s2 + 16.0 * a * a * a * s3,
        -4.0 * b * s2 + 16.0 * a * a * b * s3,
        zs * (4.0 * s2 - 16.0 * a * a * s3),
    );
    let e_ab = Vector3::new(
        -4.0 * b * s2 + 16.0 * a * a * b * s3,
        -4.0 * a * s2 + 16.0 * a * b * b * s3,
        zs * (-16.0 * a * b * s3),
    );
    let e_bb = Vector3::new(
        -4.0 * a * s2 + 16.0 * a * b * b * s3,
        -12.0 * b * s2 + 16.0 * b * b * b * s3,
        zs * (4.0 * s2 - 16.0 * b * b * s3),
    );

    EmbedJet2 {
        e,
        de: [e_a, e_b],
        dde: [e_aa, e_ab, e_bb],
    }
}

/// Geodesic (great-circle) distance between two sphere points, in `[0, pi]`.
///
/// Uses the `atan2` form, which stays accurate near both coincidence and
/// antipodality where `acos` of the dot product loses digits.
pub fn geodesic_distance(x: &SpherePoint, y: &SpherePoint) -> f64 {
    let cross = x.coords().cross(&y.coords()).norm();
    let dot = x.dot(y);
    cross.atan2(dot)
}

/// Riemannian exponential map on the sphere.
///
/// `v` must lie in the tangent plane at `p` (checked to `1e-10`); its
/// length is the geodesic distance travelled.
pub fn exp_map(p: &SpherePoint, v: &Vector3<f64>) -> Result<SpherePoint> {
    let inner = p.coords().dot(v);
    if inner.abs() > 1e-10 {
        return Err(Error::TangencyViolation { inner });
    }
    let len = v.norm();
    if len == 0.0 {
        return Ok(*p);
    }
    let dir = v / len;
    SpherePoint::new(p.coords() * len.cos() + dir * len.sin())
}

/// Angular distance on the circle, in `[0, pi]`.
pub fn circle_distance(phi: f64, psi: f64) -> f64 {
    let mut d = (phi - psi).rem_euclid(std::f64::consts::TAU);
    if d > std::f64::consts::PI {
        d = std::f64::consts::TAU - d;
    }
    d
}

/// Normalizes an angle to `[0, 2*pi)`.
pub fn wrap_angle(phi: f64) -> f64 {
    phi.rem_euclid(std::f64::consts::TAU)
}

/// Embedding of the circle into the plane.
pub fn circle_embed(phi: f64) -> Vector2<f64> {
    Vector2::new(phi.cos(), phi.sin())
}
