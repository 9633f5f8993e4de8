//! The transport map induced by a potential: contact-equation solves,
//! chart handoff, and the map's Jacobian determinant.
//!
//! Given a potential `u` with chart gradient `p = grad u` at a source
//! point `x`, the target `T(x)` solves the contact equation
//! `grad_x c(x, T) + p = 0`.  For both cost profiles the solve reduces to
//! a closed-form exponential-type step along the embedded gradient
//! direction, refined by a small Newton iteration in the target chart so
//! the discrete relation holds to near machine precision.

use crate::cost::{self, CostId, PairDerivs};
use crate::error::{Error, Result};
use crate::geometry::{
    chart_to_sphere, embed_jet2, owned_chart_pos, transition, ChartId, ChartPos, EmbedJet2,
};
use nalgebra::{Matrix2, Vector2};

/// Newton tolerance on the contact residual `|c_i(x, T) + p|`.
pub const CONTACT_TOL: f64 = 1e-11;
/// Maximum Newton iterations for one contact solve.
pub const CONTACT_MAX_ITERS: usize = 50;

/// A solved contact equation: the target point in its owning chart, the
/// cost pair derivatives evaluated at `(x, target)` in that chart, and the
/// number of Newton corrections that were needed.
#[derive(Clone, Copy, Debug)]
pub struct ContactSolution {
    pub target: ChartPos,
    pub pair: PairDerivs,
    pub iters: u32,
}

/// Moves a target into the chart that owns it (chart A owns the closed
/// unit disk of the overlap, chart B the open one).  A point already in
/// its owning chart is returned unchanged, bit for bit, so repeated
/// solves from a converged state stay reproducible.
pub fn canonical_target(t: ChartPos) -> ChartPos {
    let r2 = t.radius_sq();
    let owned = match t.chart {
        ChartId::A => r2 <= 1.0,
        ChartId::B => r2 < 1.0,
    };
    if owned {
        t
    } else {
        transition(t)
    }
}

/// Solves the contact equation for the target point, warm-started from
/// `guess`.  Returns the target in the chart that owns it.
///
/// The iteration runs in the guess's chart and switches charts whenever
/// the iterate leaves the chart cap.  Before stepping it checks whether
/// the guess already satisfies the tolerance, so a converged canonical
/// guess is returned bit-identically.
pub fn solve_target(
    cost: CostId,
    src: &EmbedJet2,
    grad_u: Vector2<f64>,
    guess: ChartPos,
    guard: f64,
) -> Result<ContactSolution> {
    let mut tgt = guess;
    let mut tgt_jet = embed_jet2(tgt);
    let mut last_residual = f64::INFINITY;

    for iter in 0..CONTACT_MAX_ITERS {
        let pd = guarded_pair(cost, src, &tgt_jet, guard)?;
        let res = pd.c_i + grad_u;
        let rnorm = res.norm();
        if rnorm <= CONTACT_TOL {
            let canon = canonical_target(tgt);
            let pair = if canon.chart == tgt.chart {
                pd
            } else {
                cost::pair_derivs(cost, src, &embed_jet2(canon))
            };
            return Ok(ContactSolution {
                target: canon,
                pair,
                iters: iter as u32,
            });
        }
        last_residual = rnorm;

        // Newton step in the target chart coordinates: c_it * dt = -res.
        let det = pd.c_it.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::NearDegenerateMixedHessian { det });
        }
        let dt = pd.c_it.lu().solve(&(-res)).ok_or(Error::SingularJacobian { det })?;

        // Damp very large steps; the closed-form seed should make these rare.
        let scale = if dt.norm() > 1.0 { 1.0 / dt.norm() } else { 1.0 };
        let mut next = ChartPos::new(tgt.chart, tgt.a + scale * dt.x, tgt.b + scale * dt.y);
        if next.radius_sq() > crate::geometry::cap_radius().powi(2) {
            next = crate::geometry::transition(next);
        }
        tgt = next;
        tgt_jet = embed_jet2(tgt);
            }
    Err(Error::NewtonDiverged {
        iters: CONTACT_MAX_ITERS,
        residual: last_residual,
    })
}

/// Evaluates cost pair derivatives with a singularity guard on the
/// geodesic margin.
fn guarded_pair(
    cost: CostId,
    src: &EmbedJet2,
    tgt: &EmbedJet2,
    guard: f64,
) -> Result<PairDerivs> {
    let d = src.e.dot(&tgt.e).clamp(-1.0, 1.0);
    let dist = d.acos();
    let margin = cost::sing_margin(cost, dist);
    if margin < guard {
        return Err(Error::SingularPair { separation: dist });
    }
    Ok(cost::pair_derivs(cost, src, tgt))
}

/// Closed-form initial target for the identity-like state: the source
/// itself for the squared-distance cost, the antipode for the reflector
/// cost.
pub fn default_target_seed(cost: CostId, src: ChartPos) -> ChartPos {
    match cost {
        CostId::SquaredDistance => src,
        CostId::ReflectorAntenna => {
            let p = chart_to_sphere(src);
            owned_chart_pos(&p.antipode())
        }
    }
}

/// Jacobian determinant of the transport map in chart coordinates:
/// `|det DT| = det w / |det c_it|`, where `w = Hess u + c_ij(x, T)` is the
/// flow's second-order state matrix.
pub fn det_dt(w: &Matrix2<f64>, c_it: &Matrix2<f64>) -> f64 {
    w.determinant() / c_it.determinant().abs()
}

/// A solved circle contact equation: target angle in `[0, 2π)`, the pair
/// derivatives there, and the Newton iteration count.
#[derive(Clone, Copy, Debug)]
pub struct ContactSolution1 {
    pub target: f64,
    pub pair: cost::PairDerivs1,
    pub iters: u32,
}

/// Circle analogue of [`solve_target`]: target angle for potential slope
/// `du` at angle `phi`.
pub fn solve_target_s1(
    cost: CostId,
    phi: f64,
    du: f64,
    guess: f64,
    guard: f64,
) -> Result<ContactSolution1> {
    let mut psi = guess;
    let mut last_residual = f64::INFINITY;
    for iter in 0..CONTACT_MAX_ITERS {
        let pd = guarded_pair_s1(cost, phi, psi, guard)?;
        let res = pd.c_i + du;
        if res.abs() <= CONTACT_TOL {
            return Ok(ContactSolution1 {
                target: crate::geometry::wrap_angle(psi),
                pair: pd,
                iters: iter as u32,
            });
        }
        last_residual = res.abs();
        if pd.c_it.abs() < 1e-12 {
            return Err(Error::NearDegenerateMixedHessian { det: pd.c_it });
        }
        let mut step = -res / pd.c_it;
        if step.abs() > 1.0 {
            step = step.signum();
        }
        psi += step;
    }
    Err(Error::NewtonDiverged {
        iters: CONTACT_MAX_ITERS,
        residual: last_residual,
    })
}

fn guarded_pair_s1(cost: CostId, phi: f64, psi: f64, guard: f64) -> Result<cost::PairDerivs1> {
    let dist = crate::geometry::circle_distance(phi, psi);
    let margin = cost::sing_margin(cost, dist);
    if margin < guard {
        return Err(Error::SingularPair { separation: dist });
    }
    Ok(cost::pair_derivs_s1(cost, phi, psi))
}
