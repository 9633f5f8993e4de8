//! Cost functions and their derivative tables.
//!
//! Both supported costs are functions of the ambient inner product
//! `d = <x, xbar>` alone:
//!
//! * squared geodesic distance: `c = dist(x, xbar)^2 / 2 = acos(d)^2 / 2`,
//!   singular on the antipodal set `d = -1`;
//! * reflector antenna: `c = -log |x - xbar| = -log(2 - 2d)/2`,
//!   singular on the diagonal `d = 1`.
//!
//! All chart derivatives follow by composing the univariate profile
//! `phi(d)` with jets of the embedding, so the only analytic input is the
//! derivative table `phi, phi', ..., phi''''`.  For the squared distance
//! near the diagonal the closed form suffers catastrophic cancellation,
//! so `acos(1-u)^2` switches to its Taylor series there.

use crate::error::{Error, Result};
use crate::geometry::{
    chart_to_sphere, circle_distance, geodesic_distance, ChartPos, EmbedJet2, SpherePoint,
};
use crate::jets::{Jet2, Jet4, ORDER};
use nalgebra::{Matrix2, Vector2};

/// Which cost function a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CostId {
    /// `c(x, xbar) = dist(x, xbar)^2 / 2`.
    SquaredDistance,
    /// `c(x, xbar) = -log |x - xbar|` (Euclidean norm of the chord).
    ReflectorAntenna,
}

impl CostId {
    pub fn name(self) -> &'static str {
        match self {
            CostId::SquaredDistance => "squared_distance",
            CostId::ReflectorAntenna => "reflector_antenna",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "squared_distance" => Ok(CostId::SquaredDistance),
            "reflector_antenna" => Ok(CostId::ReflectorAntenna),
            other => Err(Error::config(
                "cost",
                format!("unknown cost `{other}` (expected `squared_distance` or `reflector_antenna`)"),
            )),
        }
    }
}

/// Geodesic distance below which a pair counts as "at" the singular locus;
/// derivative evaluation refuses to proceed inside this margin.
pub const SING_GUARD: f64 = 1e-6;

/// `1 - d` threshold under which the squared-distance profile switches to
/// its diagonal Taylor series.
const SERIES_U_MAX: f64 = 0.02;

/// Number of series terms kept; at `u = 0.02` the tail is below 1e-13
/// even for the fourth derivative.
const SERIES_TERMS: usize = 16;

/// Distance from a pair to the cost's singular locus, measured along the
/// sphere: antipodal set for the squared distance, diagonal for the
/// reflector cost.  Expressed through the geodesic distance of the pair.
pub fn sing_margin(cost: CostId, dist: f64) -> f64 {
    match cost {
        CostId::SquaredDistance => std::f64::consts::PI - dist,
        CostId::ReflectorAntenna => dist,
    }
}

/// Coefficients of `acos(1-u)^2 = sum a_k u^k`, from the recurrence
/// `a_1 = 2`, `a_k = a_{k-1} (k-1)^2 / (k (2k-1))`.
fn sqdist_series() -> &'static [f64; SERIES_TERMS] {
    use once_cell::sync::Lazy;
    static COEFFS: Lazy<[f64; SERIES_TERMS]> = Lazy::new(|| {
        let mut a = [0.0; SERIES_TERMS];
        a[0] = 2.0; // a_1, stored shifted by one
        for k in 2..=SERIES_TERMS {
            let km1 = (k - 1) as f64;
            a[k - 1] = a[k - 2] * km1 * km1 / (k as f64 * (2.0 * k as f64 - 1.0));
        }
        a
    });
    &COEFFS
}

/// Derivatives `[phi, phi', phi'', phi''', phi'''']` of the cost profile
/// with respect to `d = <x, xbar>`.
///
/// The caller is responsible for staying clear of the singular locus;
/// see [`sing_margin`] and [`SING_GUARD`].
pub fn phi_derivs(cost: CostId, d: f64) -> [f64; ORDER + 1] {
    match cost {
        CostId::SquaredDistance => {
            let u = 1.0 - d;
            if u < SERIES_U_MAX {
                // y = acos(1-u)^2 = sum a_k u^k; d^m y / dd^m = (-1)^m d^m y / du^m.
                let a = sqdist_series();
                let mut out = [0.0; ORDER + 1];
                for m in 0..=ORDER {
                    let mut acc = 0.0;
                    // Horner in u over k = m..SERIES_TERMS of a_k * k!/(k-m)! u^{k-m};
                    // the loop stops at k = max(m, 1), leaving u^{1-m} of the
                    // lowest term unapplied when m = 0.
                    for k in (m.max(1)..=SERIES_TERMS).rev() {
                        let mut fall = 1.0;
                        for j in 0..m {
                            fall *= (k - j) as f64;
                        }
                        acc = acc * u + a[k - 1] * fall;
                    }
                    if m == 0 {
                        acc *= u;
                    }
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    out[m] = 0.5 * sign * acc;
                }
                out
            } else {
                let s = 1.0 - d * d;
                let sq = s.sqrt();
                let aa = d.acos();
                let s32 = s * sq;
                let s52 = s * s * sq;
                let s72 = s * s * s * sq;
                let y1 = -2.0 * aa / sq;
                let y2 = 2.0 / s - 2.0 * aa * d / s32;
                let y3 = 6.0 * d / (s * s) - 2.0 * aa / s32 - 6.0 * aa * d * d / s52;
                let y4 = 8.0 / (s * s) + 30.0 * d * d / (s * s * s)
                    - 18.0 * aa * d / s52
                    - 30.0 * aa * d * d * d / s72;
                [0.5 * aa * aa, 0.5 * y1, 0.5 * y2, 0.5 * y3, 0.5 * y4]
            }
        }
        CostId::ReflectorAntenna => {
            let e = 1.0 - d;
            let e2 = e * e;
            [
                -0.5 * (2.0 * e).ln(),
                0.5 / e,
                0.5 / e2,
                1.0 / (e2 * e),
                3.0 / (e2 * e2),
            ]
        }
    }
}

/// First and second profile derivatives only — the flow's inner loop.
#[inline]
pub fn phi_d12(cost: CostId, d: f64) -> (f64, f64) {
    match cost {
        CostId::SquaredDistance => {
            let u = 1.0 - d;
            if u < SERIES_U_MAX {
                let a = sqdist_series();
                let mut y1 = 0.0;
                let mut y2 = 0.0;
                for k in (1..=SERIES_TERMS).rev() {
                    let kf = k as f64;
                    y1 = y1 * u + a[k - 1] * kf;
                    if k >= 2 {
                        y2 = y2 * u + a[k - 1] * kf * (kf - 1.0);
                    }
                }
                (-0.5 * y1, 0.5 * y2)
            } else {
                let s = 1.0 - d * d;
                let sq = s.sqrt();
                let aa = d.acos();
                (-0.5 * 2.0 * aa / sq, 0.5 * (2.0 / s - 2.0 * aa * d / (s * sq)))
            }
        }
        CostId::ReflectorAntenna => {
            let e = 1.0 - d;
            (0.5 / e, 0.5 / (e * e))
        }
    }
}

/// Cost value between two sphere points.
///
/// The squared-distance value is finite everywhere (including antipodal
/// pairs); the reflector value diverges on the diagonal and is guarded.
pub fn eval_cost(cost: CostId, x: &SpherePoint, xbar: &SpherePoint) -> Result<f64> {
    match cost {
        CostId::SquaredDistance => {
            let dist = geodesic_distance(x, xbar);
            Ok(0.5 * dist * dist)
        }
        CostId::ReflectorAntenna => {
            let chord2 = (x.coords() - xbar.coords()).norm_squared();
            if chord2 < SING_GUARD * SING_GUARD {
                return Err(Error::SingularPair {
                    separation: chord2.sqrt(),
                });
            }
            Ok(-0.5 * chord2.ln())
        }
    }
}

/// Cost value between two circle points given by angles.
pub fn eval_cost_s1(cost: CostId, phi: f64, psi: f64) -> Result<f64> {
    let dist = circle_distance(phi, psi);
    match cost {
        CostId::SquaredDistance => Ok(0.5 * dist * dist),
        CostId::ReflectorAntenna => {
            if dist < SING_GUARD {
                return Err(Error::SingularPair { separation: dist });
            }
            Ok(-0.5 * (2.0 - 2.0 * dist.cos()).ln())
        }
    }
}

/// Symmetric 2x2 index: (0,0) -> 0, (0,1)/(1,0) -> 1, (1,1) -> 2.
#[inline]
pub fn sym2(i: usize, j: usize) -> usize {
    i + j
}

/// Full derivative table of a sphere cost at a chart pair, through total
/// order four with at most two derivatives per side.
///
/// Index conventions: `i, j` run over source chart coordinates, `s, p`
/// over target chart coordinates.  Symmetric index pairs are stored in
/// the [`sym2`] layout.
#[derive(Clone, Copy, Debug)]
pub struct CostJet {
    pub src: ChartPos,
    pub tgt: ChartPos,
    pub c: f64,
    /// First source derivatives `c_i`.
    pub c_i: [f64; 2],
    /// First target derivatives `c_s`.
    pub c_t: [f64; 2],
    /// Source Hessian `c_ij` (symmetric).
    pub c_ij: [f64; 3],
    /// Mixed second derivatives `c_{i s}`, `[i][s]`.
    pub c_it: [[f64; 2]; 2],
    /// Target Hessian `c_{s p}` (symmetric).
    pub c_tt: [f64; 3],
    /// `c_{ij s}`: `[s][sym2(i,j)]`.
    pub c_ijt: [[f64; 3]; 2],
    /// `c_{i s p}`: `[i][sym2(s,p)]`.
    pub c_itt: [[f64; 3]; 2],
    /// `c_{ij s p}`: `[sym2(i,j)][sym2(s,p)]`.
    pub c_ijtt: [[f64; 3]; 3],
}

impl CostJet {
    /// Mixed Hessian as a matrix with rows indexed by the source
    /// coordinate and columns by the target coordinate.
    pub fn mixed(&self) -> Matrix2<f64> {
        Matrix2::new(self.c_it[0][0], self.c_it[0][1], self.c_it[1][0], self.c_it[1][1])
    }

    /// Inverse of the mixed Hessian: `E[s][k]` satisfying
    /// `sum_s c_{i s} E[s][k] = delta_i^k`.
    pub fn mixed_inverse(&self) -> Result<Matrix2<f64>> {
        let m = self.mixed();
        let det = m.determinant();
        if det.abs() < 1e-10 {
            return Err(Error::NearDegenerateMixedHessian { det });
        }
        Ok(m.try_inverse().expect("determinant checked above"))
    }

    /// Source Hessian as a symmetric matrix.
    pub fn source_hessian(&self) -> Matrix2<f64> {
        Matrix2::new(self.c_ij[0], self.c_ij[1], self.c_ij[1], self.c_ij[2])
    }

    #[inline]
    pub fn c3_ijt(&self, i: usize, j: usize, s: usize) -> f64 {
        self.c_ijt[s][sym2(i, j)]
    }

    #[inline]
    pub fn c3_itt(&self, i: usize, s: usize, p: usize) -> f64 {
        self.c_itt[i][sym2(s, p)]
    }

    #[inline]
    pub fn c4(&self, i: usize, j: usize, s: usize, p: usize) -> f64 {
        self.c_ijtt[sym2(i, j)][sym2(s, p)]
    }
}

/// Builds the order-two jet of the stereographic embedding as `Jet4`
/// components, using variables `(v0, v1)` for the source or `(v2, v3)`
/// for the target side.
fn embed_jet4(p: ChartPos, first_var: usize) -> [Jet4; 3] {
    let a = Jet4::variable(first_var, p.a);
    let b = Jet4::variable(first_var + 1, p.b);
    let r2 = a.mul(&a).add(&b.mul(&b));
    let s = r2.add_scalar(1.0).recip();
    let zsign = match p.chart {
        crate::geometry::ChartId::A => 1.0,
        crate::geometry::ChartId::B => -1.0,
    };
    [
        a.mul(&s).scale(2.0),
        b.mul(&s).scale(2.0),
        r2.add_scalar(-1.0).mul(&s).scale(zsign),
    ]
}

/// Checks the derivative-evaluation guard for a sphere pair.
fn guard_pair(cost: CostId, x: &SpherePoint, xbar: &SpherePoint) -> Result<f64> {
    let dist = geodesic_distance(x, xbar);
    let margin = sing_margin(cost, dist);
    if margin < SING_GUARD {
        return Err(Error::SingularPair { separation: margin });
    }
    Ok(dist)
}

/// Full fourth-order derivative table of a sphere cost at one chart pair.
pub fn eval_cost_jet(cost: CostId, src: ChartPos, tgt: ChartPos) -> Result<CostJet> {
    let x = chart_to_sphere(src);
    let xbar = chart_to_sphere(tgt);
    guard_pair(cost, &x, &xbar)?;

    let ex = embed_jet4(src, 0);
    let ey = embed_jet4(tgt, 2);
    let mut d = ex[0].mul(&ey[0]);
    d = d.add(&ex[1].mul(&ey[1]));
    d = d.add(&ex[2].mul(&ey[2]));
    let c = d.compose(&phi_derivs(cost, d.value()));

    let mut jet = CostJet {
        src,
        tgt,
        c: c.value(),
        c_i: [0.0; 2],
        c_t: [0.0; 2],
        c_ij: [0.0; 3],
        c_it: [[0.0; 2]; 2],
        c_tt: [0.0; 3],
        c_ijt: [[0.0; 3]; 2],
        c_itt: [[0.0; 3]; 2],
        c_ijtt: [[0.0; 3]; 3],
    };

    let p = |alpha: [u8; 4]| c.partial(&alpha);
    for i in 0..2 {
        let mut a = [0u8; 4];
        a[i] = 1;
        jet.c_i[i] = p(a);
        let mut b = [0u8; 4];
        b[2 + i] = 1;
        jet.c_t[i] = p(b);
    }
    for i in 0..2 {
        for j in i..2 {
            let mut a = [0u8; 4];
            a[i] += 1;
            a[j] += 1;
            jet.c_ij[sym2(i, j)] = p(a);
            let mut b = [0u8; 4];
            b[2 + i] += 1;
            b[2 + j] += 1;
            jet.c_tt[sym2(i, j)] = p(b);
        }
    }
    for i in 0..2 {
        for s in 0..2 {
            let mut a = [0u8; 4];
            a[i] = 1;
            a[2 + s] = 1;
            jet.c_it[i][s] = p(a);
        }
    }
    for s in 0..2 {
        for i in 0..2 {
            for j in i..2 {
                let mut a = [0u8; 4];
                a[i] += 1;
                a[j] += 1;
                a[2 + s] += 1;
                jet.c_ijt[s][sym2(i, j)] = p(a);
            }
        }
    }
    for i in 0..2 {
        for s in 0..2 {
            for q in s..2 {
                let mut a = [0u8; 4];
                a[i] += 1;
                a[2 + s] += 1;
                a[2 + q] += 1;
                jet.c_itt[i][sym2(s, q)] = p(a);
            }
        }
    }
    for i in 0..2 {
        for j in i..2 {
            for s in 0..2 {
                for q in s..2 {
                    let mut a = [0u8; 4];
                    a[i] += 1;
                    a[j] += 1;
                    a[2 + s] += 1;
                    a[2 + q] += 1;
                    jet.c_ijtt[sym2(i, j)][sym2(s, q)] = p(a);
                }
            }
        }
    }
    Ok(jet)
}

/// Derivative table of a circle cost at an angle pair, same layout as
/// [`CostJet`] but with scalar entries.
#[derive(Clone, Copy, Debug)]
pub struct CostJet1 {
    pub src: f64,
    pub tgt: f64,
    pub c: f64,
    pub c_i: f64,
    pub c_t: f64,
    pub c_ij: f64,
    pub c_it: f64,
    pub c_tt: f64,
    pub c_ijt: f64,
    pub c_itt: f64,
    pub c_ijtt: f64,
}

/// Full derivative table of a circle cost at one angle pair.
pub fn eval_cost_jet_s1(cost: CostId, phi: f64, psi: f64) -> Result<CostJet1> {
    let dist = circle_distance(phi, psi);
    let margin = sing_margin(cost, dist);
    if margin < SING_GUARD {
        return Err(Error::SingularPair { separation: margin });
    }
    // d = cos(phi - psi) as a two-variable jet.
    let s = Jet2::variable(0, phi);
    let t = Jet2::variable(1, psi);
    let d = s.sub(&t).cos();
    let c = d.compose(&phi_derivs(cost, d.value()));
    Ok(CostJet1 {
        src: phi,
        tgt: psi,
        c: c.value(),
        c_i: c.partial(&[1, 0]),
        c_t: c.partial(&[0, 1]),
        c_ij: c.partial(&[2, 0]),
        c_it: c.partial(&[1, 1]),
        c_tt: c.partial(&[0, 2]),
        c_ijt: c.partial(&[2, 1]),
        c_itt: c.partial(&[1, 2]),
        c_ijtt: c.partial(&[2, 2]),
    })
}

/// Second-order cost data at a pair, produced by the closed-form fast path
/// used inside the flow loop (no jet arithmetic, no allocation).
#[derive(Clone, Copy, Debug)]
pub struct PairDerivs {
    /// Inner product of the embedded pair.
    pub d: f64,
    /// `c_i` (source gradient).
    pub c_i: Vector2<f64>,
    /// `c_{i s}`, rows source, columns target.
    pub c_it: Matrix2<f64>,
    /// `c_ij` (source Hessian, symmetric).
    pub c_ij: Matrix2<f64>,
}

/// Closed-form second-order derivatives of a sphere cost from cached
/// embedding jets of both sides.
///
/// Singularity guarding is the caller's job (the flow tracks margins
/// through its monitors); this function only requires `d` strictly inside
/// the profile's domain and will produce infinities otherwise.
#[inline]
pub fn pair_derivs(cost: CostId, src: &EmbedJet2, tgt: &EmbedJet2) -> PairDerivs {
    let d = src.e.dot(&tgt.e);
    let (p1, p2) = phi_d12(cost, d);

    let di = [src.de[0].dot(&tgt.e), src.de[1].dot(&tgt.e)];
    let ds = [src.e.dot(&tgt.de[0]), src.e.dot(&tgt.de[1])];

    let mut c_it = Matrix2::zeros();
    for i in 0..2 {
        for s in 0..2 {
            let dis = src.de[i].dot(&tgt.de[s]);
            c_it[(i, s)] = p2 * di[i] * ds[s] + p1 * dis;
        }
    }
    // Source Hessian: the second embedding derivatives dde are in the
    // sym2 layout (aa, ab, bb).
    let daa = src.dde[0].dot(&tgt.e);
    let dab = src.dde[1].dot(&tgt.e);
    let dbb = src.dde[2].dot(&tgt.e);
    let c_ij = Matrix2::new(
        p2 * di[0] * di[0] + p1 * daa,
        p2 * di[0] * di[1] + p1 * dab,
        p2 * di[0] * di[1] + p1 * dab,
        p2 * di[1] * di[1] + p1 * dbb,
    );

    PairDerivs {
        d,
        c_i: Vector2::new(p1 * di[0], p1 * di[1]),
        c_it,
        c_ij,
    }
}

/// Circle analogue of [`pair_derivs`]: second-order data at an angle pair.
#[derive(Clone, Copy, Debug)]
pub struct PairDerivs1 {
    pub d: f64,
    pub c_i: f64,
    pub c_it: f64,
    pub c_ij: f64,
}

#[inline]
pub fn pair_derivs_s1(cost: CostId, phi: f64, psi: f64) -> PairDerivs1 {
    let t = phi - psi;
    let (sn, cs) = t.sin_cos();
    let (p1, p2) = phi_d12(cost, cs);
    PairDerivs1 {
        d: cs,
        c_i: -p1 * sn,
        c_it: -p2 * sn * sn + p1 * cs,
        c_ij: p2 * sn * sn - p1 * cs,
    }
}

// ---------------------------------------------------------------------------
// Finite-difference cross-validation of the jet engine.
// ---------------------------------------------------------------------------

/// Step for all finite-difference stencils in the cross-check.
pub const FD_STEP: f64 = 1e-3;

/// Five-point, fourth-order first-derivative weights (divide by `12 h`).
const W1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
/// Five-point, fourth-order second-derivative weights (divide by `12 h^2`).
const W2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];

fn stencil_1d(f: &mut dyn FnMut(f64) -> Result<f64>, weights: &[f64; 5], scale: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let off = (k as f64 - 2.0) * FD_STEP;
        acc += w * f(off)?;
    }
    Ok(acc / scale)
}

/// Tensor finite difference of the raw cost value in the four chart
/// variables: `orders[v]` in `{0, 1, 2}` with total at most 2.
fn fd_cost_partial(cost: CostId, src: ChartPos, tgt: ChartPos, orders: [u8; 4]) -> Result<f64> {
    let active: Vec<usize> = (0..4).filter(|&v| orders[v] > 0).collect();
    let eval = |offs: [f64; 4]| -> Result<f64> {
        let s = ChartPos::new(src.chart, src.a + offs[0], src.b + offs[1]);
        let t = ChartPos::new(tgt.chart, tgt.a + offs[2], tgt.b + offs[3]);
        eval_cost(cost, &chart_to_sphere(s), &chart_to_sphere(t))
    };
    match active.len() {
        0 => eval([0.0; 4]),
        1 => {
            let v = active[0];
            let (w, scale) = if orders[v] == 1 {
                (&W1, 12.0 * FD_STEP)
            } else {
                (&W2, 12.0 * FD_STEP * FD_STEP)
            };
            stencil_1d(
                &mut |o| {
                    let mut offs = [0.0; 4];
                    offs[v] = o;
                    eval(offs)
                },
                w,
                scale,
            )
        }
        2 => {
            let (v0, v1) = (active[0], active[1]);
            stencil_1d(
                &mut |o0| {
                    stencil_1d(
                        &mut |o1| {
                            let mut offs = [0.0; 4];
                            offs[v0] = o0;
                            offs[v1] = o1;
                            eval(offs)
                        },
                        &W1,
                        12.0 * FD_STEP,
                    )
                },
                &W1,
                12.0 * FD_STEP,
            )
        }
        _ => unreachable!("at most two active axes in the direct stencils"),
    }
}

/// Relative discrepancy with an absolute floor of 1, so near-zero entries
/// are compared absolutely.
fn rel_err(fd: f64, jet: f64) -> f64 {
    (fd - jet).abs() / jet.abs().max(1.0)
}

/// Cross-validates every entry of [`eval_cost_jet`] at one pair against
/// finite differences, returning the worst relative discrepancy.
///
/// Entries of derivative order at most two are checked against stencils
/// on the raw cost value.  Higher entries are checked by differencing the
/// jet's *second-order* entries in the target variables (differencing the
/// raw value four times would drown in roundoff at any step size); those
/// second-order entries are themselves validated against the raw value,
/// so the chain stays anchored to `eval_cost`.
pub fn fd_cross_check(cost: CostId, src: ChartPos, tgt: ChartPos) -> Result<f64> {
    let jet = eval_cost_jet(cost, src, tgt)?;
    let mut worst: f64 = 0.0;
    let mut record = |fd: f64, exact: f64| {
        let e = rel_err(fd, exact);
        if e > worst {
            worst = e;
        }
    };

    // Order <= 2: straight from the cost value.
    record(fd_cost_partial(cost, src, tgt, [0, 0, 0, 0])?, jet.c);
    for i in 0..2 {
        let mut a = [0u8; 4];
        a[i] = 1;
        record(fd_cost_partial(cost, src, tgt, a)?, jet.c_i[i]);
        let mut b = [0u8; 4];
        b[2 + i] = 1;
        record(fd_cost_partial(cost, src, tgt, b)?, jet.c_t[i]);
    }
    for i in 0..2 {
        for j in i..2 {
            let mut a = [0u8; 4];
            a[i] += 1;
            a[j] += 1;
            record(fd_cost_partial(cost, src, tgt, a)?, jet.c_ij[sym2(i, j)]);
            let mut b = [0u8; 4];
            b[2 + i] += 1;
            b[2 + j] += 1;
            record(fd_cost_partial(cost, src, tgt, b)?, jet.c_tt[sym2(i, j)]);
        }
    }
    for i in 0..2 {
        for s in 0..2 {
            let mut a = [0u8; 4];
            a[i] = 1;
            a[2 + s] = 1;
            record(fd_cost_partial(cost, src, tgt, a)?, jet.c_it[i][s]);
        }
    }

    // Orders 3 and 4: difference the second-order jet entries over a
    // 5x5 grid of target offsets.
    let mut table = Vec::with_capacity(25);
    for ka in -2i32..=2 {
        let mut row = Vec::with_capacity(5);
        for kb in -2i32..=2 {
            let t = ChartPos::new(
                tgt.chart,
                tgt.a + ka as f64 * FD_STEP,
                tgt.b + kb as f64 * FD_STEP,
            );
            row.push(eval_cost_jet(cost, src, t)?);
        }
        table.push(row);
    }
    let at = |ka: i32, kb: i32| -> &CostJet { &table[(ka + 2) as usize][(kb + 2) as usize] };

    // c_{ij s}: first target derivative of c_ij.
    for s in 0..2 {
        for ij in 0..3 {
            let mut acc = 0.0;
            for (k, w) in W1.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let off = k as i32 - 2;
                let (ka, kb) = if s == 0 { (off, 0) } else { (0, off) };
                acc += w * at(ka, kb).c_ij[ij];
            }
            record(acc / (12.0 * FD_STEP), jet.c_ijt[s][ij]);
        }
    }
    // c_{i s p} and c_{ij s p}: second target derivatives of c_i and c_ij.
    for sp in 0..3 {
        let second_diff = |get: &dyn Fn(&CostJet) -> f64| -> f64 {
            match sp {
                0 | 2 => {
                    let mut acc = 0.0;
                    for (k, w) in W2.iter().enumerate() {
                        let off = k as i32 - 2;
                        let (ka, kb) = if sp == 0 { (off, 0) } else { (0, off) };
                        acc += w * get(at(ka, kb));
                    }
                    acc / (12.0 * FD_STEP * FD_STEP)
                }
                _ => {
                    let mut acc = 0.0;
                    for (ka_i, wa) in W1.iter().enumerate() {
                        if *wa == 0.0 {
                            continue;
                        }
                        for (kb_i, wb) in W1.iter().enumerate() {
                            if *wb == 0.0 {
                                continue;
                            }
                            acc += wa * wb * get(at(ka_i as i32 - 2, kb_i as i32 - 2));
                        }
                    }
                    acc / (144.0 * FD_STEP * FD_STEP)
                }
            }
        };
        for i in 0..2 {
            record(second_diff(&|j: &CostJet| j.c_i[i]), jet.c_itt[i][sp]);
        }
        for ij in 0..3 {
            record(second_diff(&|j: &CostJet| j.c_ij[ij]), jet.c_ijtt[ij][sp]);
        }
    }

    Ok(worst)
}

/// Circle analogue of [`fd_cross_check`].
pub fn fd_cross_check_s1(cost: CostId, phi: f64, psi: f64) -> Result<f64> {
    let jet = eval_cost_jet_s1(cost, phi, psi)?;
    let mut worst: f64 = 0.0;
    let mut record = |fd: f64, exact: f64| {
        let e = rel_err(fd, exact);
        if e > worst {
            worst = e;
        }
    };

    let eval = |o0: f64, o1: f64| eval_cost_s1(cost, phi + o0, psi + o1);
    // Order <= 2 from the raw value.
    let d1 = |axis: usize| {
        stencil_1d(
            &mut |o| if axis == 0 { eval(o, 0.0) } else { eval(0.0, o) },
            &W1,
            12.0 * FD_STEP,
        )
    };
    let d2 = |axis: usize| {
        stencil_1d(
            &mut |o| if axis == 0 { eval(o, 0.0) } else { eval(0.0, o) },
            &W2,
            12.0 * FD_STEP * FD_STEP,
        )
    };
    record(eval(0.0, 0.0)?, jet.c);
    record(d1(0)?, jet.c_i);
    record(d1(1)?, jet.c_t);
    record(d2(0)?, jet.c_ij);
    record(d2(1)?, jet.c_tt);
    let mut mixed = 0.0;
    for (ka, wa) in W1.iter().enumerate() {
        if *wa == 0.0 {
            continue;
        }
        for (kb, wb) in W1.iter().enumerate() {
            if *wb == 0.0 {
                continue;
            }
            mixed += wa * wb * eval((ka as f64 - 2.0) * FD_STEP, (kb as f64 - 2.0) * FD_STEP)?;
        }
    }
    record(mixed / (144.0 * FD_STEP * FD_STEP), jet.c_it);

    // Orders 3, 4 from target differences of second-order jet entries.
    let jet_at = |off: f64| eval_cost_jet_s1(cost, phi, psi + off);
    let mut d_cij = 0.0;
    let mut dd_ci = 0.0;
    let mut dd_cij = 0.0;
    for (k, (w1, w2)) in W1.iter().zip(&W2).enumerate() {
        let off = (k as f64 - 2.0) * FD_STEP;
        let j = jet_at(off)?;
        d_cij += w1 * j.c_ij;
        dd_ci += w2 * j.c_i;
        dd_cij += w2 * j.c_ij;
    }
    record(d_cij / (12.0 * FD_STEP), jet.c_ijt);
    record(dd_ci / (12.0 * FD_STEP * FD_STEP), jet.c_itt);
    record(dd_cij / (12.0 * FD_STEP * FD_STEP), jet.c_ijtt);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChartId;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn profile_derivatives_at_zero_dot() {
        // Squared distance at d = 0 (a quarter turn): closed forms.
        let p = phi_derivs(CostId::SquaredDistance, 0.0);
        let pi = std::f64::consts::PI;
        assert_relative_eq!(p[0], pi * pi / 8.0, epsilon = 1e-14);
        assert_relative_eq!(p[1], -pi / 2.0, epsilon = 1e-14);
        assert_relative_eq!(p[2], 1.0, epsilon = 1e-14);
        assert_relative_eq!(p[3], -pi / 2.0, epsilon = 1e-13);
        assert_relative_eq!(p[4], 4.0, epsilon = 1e-13);

        let r = phi_derivs(CostId::ReflectorAntenna, 0.0);
        assert_relative_eq!(r[0], -0.5 * 2.0f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(r[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r[2], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r[3], 1.0, epsilon = 1e-15);
        assert_relative_eq!(r[4], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn series_matches_closed_form_in_overlap() {
        // Just above and below the switch the two evaluations must agree.
        for &u in &[0.0201, 0.03, 0.05, 0.08] {
            let d = 1.0 - u;
            let direct = phi_derivs(CostId::SquaredDistance, d);
            // Naive term-by-term series evaluation, independent of the
            // production Horner loop.
            let a = sqdist_series();
            for m in 0..=ORDER {
                let mut acc = 0.0;
                for k in m.max(1)..=SERIES_TERMS {
                    let mut term = a[k - 1];
                    for j in 0..m {
                        term *= (k - j) as f64;
                    }
                    acc += term * u.powi((k - m) as i32);
                }
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let series = 0.5 * sign * acc;
                assert_relative_eq!(series, direct[m], max_relative = 2e-9, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn diagonal_profile_values() {
        // At the diagonal the squared-distance profile is smooth:
        // phi' = -1, phi'' = 1/3 (from a_1 = 2, a_2 = 1/3).
        let p = phi_derivs(CostId::SquaredDistance, 1.0);
        assert_relative_eq!(p[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(p[1], -1.0, epsilon = 1e-15);
        assert_relative_eq!(p[2], 1.0 / 3.0, epsilon = 1e-15);
        let (p1, p2) = phi_d12(CostId::SquaredDistance, 1.0);
        assert_relative_eq!(p1, -1.0, epsilon = 1e-15);
        assert_relative_eq!(p2, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn cost_values_at_landmarks() {
        let x = SpherePoint::new(Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let pi = std::f64::consts::PI;
        assert_relative_eq!(
            eval_cost(CostId::SquaredDistance, &x, &x.antipode()).unwrap(),
            pi * pi / 2.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            eval_cost(CostId::ReflectorAntenna, &x, &x.antipode()).unwrap(),
            -(2.0f64.ln()),
            epsilon = 1e-14
        );
        assert_relative_eq!(eval_cost(CostId::SquaredDistance, &x, &x).unwrap(), 0.0);
        assert!(matches!(
            eval_cost(CostId::ReflectorAntenna, &x, &x),
            Err(Error::SingularPair { .. })
        ));
    }

    #[test]
    fn sing_margin_landmarks() {
        let pi = std::f64::consts::PI;
        assert_relative_eq!(sing_margin(CostId::SquaredDistance, 0.0), pi);
        assert_relative_eq!(sing_margin(CostId::ReflectorAntenna, 0.3), 0.3);
    }

    #[test]
    fn diagonal_mixed_hessian_is_minus_metric() {
        // At the chart-A origin g = 4 I, so c_{i s}(x, x) = -4 I for the
        // squared distance.
        let o = ChartPos::new(ChartId::A, 0.0, 0.0);
        let jet = eval_cost_jet(CostId::SquaredDistance, o, o).unwrap();
        assert_relative_eq!(jet.c_it[0][0], -4.0, epsilon = 1e-12);
        assert_relative_eq!(jet.c_it[1][1], -4.0, epsilon = 1e-12);
        assert_relative_eq!(jet.c_it[0][1], 0.0, epsilon = 1e-12);
        // And the source Hessian equals +g there.
        assert_relative_eq!(jet.c_ij[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(jet.c_ij[2], 4.0, epsilon = 1e-12);
        // Same at an off-origin diagonal point: c_{i s}(x,x) = -g(x).
        let p = ChartPos::new(ChartId::A, 0.5, -0.3);
        let lam = crate::geometry::metric_factor(p.radius_sq());
        let jp = eval_cost_jet(CostId::SquaredDistance, p, p).unwrap();
        assert_relative_eq!(jp.c_it[0][0], -lam, epsilon = 1e-11);
        assert_relative_eq!(jp.c_it[1][1], -lam, epsilon = 1e-11);
        assert_relative_eq!(jp.c_it[0][1], 0.0, epsilon = 1e-11);
        assert_relative_eq!(jp.c_ij[0], lam, epsilon = 1e-11);
        assert_relative_eq!(jp.c_ij[1], 0.0, epsilon = 1e-11);
    }

    #[test]
    fn cost_symmetry_swaps_source_and_target_blocks() {
        let p = ChartPos::new(ChartId::A, 0.4, -0.2);
        let q = ChartPos::new(ChartId::B, 0.1, 0.6);
        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            let fwd = eval_cost_jet(cost, p, q).unwrap();
            let bwd = eval_cost_jet(cost, q, p).unwrap();
            assert_relative_eq!(fwd.c, bwd.c, epsilon = 1e-13);
            for i in 0..2 {
                assert_relative_eq!(fwd.c_i[i], bwd.c_t[i], epsilon = 1e-12);
            }
            for k in 0..3 {
                assert_relative_eq!(fwd.c_ij[k], bwd.c_tt[k], epsilon = 1e-12);
            }
            for i in 0..2 {
                for s in 0..2 {
                    assert_relative_eq!(fwd.c_it[i][s], bwd.c_it[s][i], epsilon = 1e-12);
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    for s in 0..2 {
                        for q_ in 0..2 {
                            assert_relative_eq!(
                                fwd.c4(i, j, s, q_),
                                bwd.c4(s, q_, i, j),
                                epsilon = 1e-11
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fast_path_matches_jets() {
        use crate::geometry::embed_jet2;
        let pairs = [
            (ChartPos::new(ChartId::A, 0.3, 0.2), ChartPos::new(ChartId::A, -0.1, 0.5)),
            (ChartPos::new(ChartId::A, 0.9, -0.4), ChartPos::new(ChartId::B, 0.2, 0.3)),
            (ChartPos::new(ChartId::B, 0.0, 0.0), ChartPos::new(ChartId::A, 0.7, 0.7)),
        ];
        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            for (src, tgt) in pairs {
                let jet = eval_cost_jet(cost, src, tgt).unwrap();
                let fast = pair_derivs(cost, &embed_jet2(src), &embed_jet2(tgt));
                for i in 0..2 {
                    assert_relative_eq!(fast.c_i[i], jet.c_i[i], epsilon = 1e-12, max_relative = 1e-12);
                    for s in 0..2 {
                        assert_relative_eq!(
                            fast.c_it[(i, s)],
                            jet.c_it[i][s],
                            epsilon = 1e-12,
                            max_relative = 1e-12
                        );
                    }
                }
                assert_relative_eq!(fast.c_ij[(0, 0)], jet.c_ij[0], epsilon = 1e-12, max_relative = 1e-12);
                assert_relative_eq!(fast.c_ij[(0, 1)], jet.c_ij[1], epsilon = 1e-12, max_relative = 1e-12);
                assert_relative_eq!(fast.c_ij[(1, 1)], jet.c_ij[2], epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn s1_fast_path_matches_jets() {
        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            for (phi, psi) in [(0.3, 1.7), (2.0, 5.9), (4.2, 1.1)] {
                let jet = eval_cost_jet_s1(cost, phi, psi).unwrap();
                let fast = pair_derivs_s1(cost, phi, psi);
                assert_relative_eq!(fast.c_i, jet.c_i, epsilon = 1e-13, max_relative = 1e-12);
                assert_relative_eq!(fast.c_it, jet.c_it, epsilon = 1e-13, max_relative = 1e-12);
                assert_relative_eq!(fast.c_ij, jet.c_ij, epsilon = 1e-13, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn s1_identity_mixed_hessian_is_minus_one() {
        // On the circle g = 1, so c_{i t}(phi, phi) = -1 for squared distance.
        let fast = pair_derivs_s1(CostId::SquaredDistance, 1.3, 1.3);
        assert_relative_eq!(fast.c_it, -1.0, epsilon = 1e-14);
        assert_relative_eq!(fast.c_ij, 1.0, epsilon = 1e-14);
        assert_relative_eq!(fast.c_i, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn fd_cross_check_spot_pairs() {
        let pairs = [
            (ChartPos::new(ChartId::A, 0.3, 0.2), ChartPos::new(ChartId::A, -0.2, 0.6)),
            (ChartPos::new(ChartId::A, 0.8, -0.1), ChartPos::new(ChartId::B, 0.4, 0.1)),
        ];
        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            for (src, tgt) in pairs {
                let worst = fd_cross_check(cost, src, tgt).unwrap();
                assert!(
                    worst <= 1e-6,
                    "{} at {:?}/{:?}: worst fd discrepancy {worst:.3e}",
                    cost.name(),
                    src,
                    tgt
                );
            }
        }
    }

    #[test]
    fn fd_cross_check_s1_spot_pairs() {
        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            let worst = fd_cross_check_s1(cost, 0.8, 2.9).unwrap();
            assert!(worst <= 1e-6, "{}: worst {worst:.3e}", cost.name());
        }
    }

    #[test]
    fn jet_rejects_guarded_pairs() {
        let p = ChartPos::new(ChartId::A, 0.3, 0.2);
        assert!(matches!(
            eval_cost_jet(CostId::ReflectorAntenna, p, p),
            Err(Error::SingularPair { .. })
        ));
        // Antipodal pair for squared distance: (a,b) in A and (-a,-b) in B
        // map to antipodal sphere points.
        let q = ChartPos::new(ChartId::B, -0.3, -0.2);
        assert!(matches!(
            eval_cost_jet(CostId::SquaredDistance, p, q),
            Err(Error::SingularPair { .. })
        ));
    }
}
