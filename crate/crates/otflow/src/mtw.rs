//! The fourth-order cost curvature tensor and sampled verification of its
//! uniform positivity on orthogonal vector-covector pairs.
//!
//! For a cost `c(x, xbar)` the (2,2)-tensor evaluated here is
//!
//! ```text
//! S(V, eta) = (-c_{ij rb pb} + c_{ij sb} c^{sb m} c_{m pb rb})
//!             V^i V^j c^{pb k} c^{rb l} eta_k eta_l
//! ```
//!
//! with `c^{sb m}` the inverse of the mixed Hessian `c_{i sb}` (barred
//! indices differentiate the target slot).  Uniform positivity of the
//! normalized value over pairs with `eta(V) = 0` is the structure
//! condition the flow's regularity rests on; since it is a continuum
//! infimum, this module certifies it statistically on seeded random
//! samples at a fixed singularity margin.

use crate::cost::{self, eval_cost_jet, CostId};
use crate::diagnostics::map_jacobian;
use crate::error::{Error, Result};
use crate::flow::S2Flow;
use crate::geometry::{
    chart_to_sphere, geodesic_distance, metric_factor, owned_chart_pos, ChartPos, SpherePoint,
};
use nalgebra::Vector2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hard floor on the singularity margin accepted by [`mtw_value`].
pub const MTW_PAIR_MARGIN: f64 = 0.05;

/// One admissible sample of the tensor: a base pair, a unit tangent
/// vector `V`, and a unit covector `eta` with `eta(V) = 0`.
#[derive(Clone, Copy, Debug)]
pub struct MtwSample {
    pub x: SpherePoint,
    pub xbar: SpherePoint,
    /// Chart coordinates of `x` and `xbar` in their owning charts.
    pub src: ChartPos,
    pub tgt: ChartPos,
    pub v: Vector2<f64>,
    pub eta: Vector2<f64>,
    pub value: f64,
    /// `value / (|V|_g^2 |eta|_{g*}^2)`.
    pub normalized: f64,
}

/// Result of a sampling sweep: the empirical minimum of the normalized
/// tensor value and the sample attaining it.
#[derive(Clone, Copy, Debug)]
pub struct MtwDeltaReport {
    pub min_normalized: f64,
    pub argmin: MtwSample,
    pub samples: usize,
}

/// Evaluates the tensor contraction at a chart pair.
///
/// `v` is a tangent vector and `eta` a covector, both in the source
/// chart's coordinates.  The value is quadratic in each argument and
/// independent of the chart used for the target (all target indices are
/// contracted away).
pub fn mtw_value(
    cost: CostId,
    src: ChartPos,
    tgt: ChartPos,
    v: Vector2<f64>,
    eta: Vector2<f64>,
) -> Result<f64> {
    let dist = geodesic_distance(&chart_to_sphere(src), &chart_to_sphere(tgt));
    if cost::sing_margin(cost, dist) < MTW_PAIR_MARGIN {
        return Err(Error::SingularPair { separation: dist });
    }
    let jet = eval_cost_jet(cost, src, tgt)?;
    let einv = jet.mixed_inverse()?; // einv[(s, k)] = c^{sb k}

    // eta pulled to a target vector: etabar^p = c^{pb k} eta_k.
    let etabar = Vector2::new(
        einv[(0, 0)] * eta.x + einv[(0, 1)] * eta.y,
        einv[(1, 0)] * eta.x + einv[(1, 1)] * eta.y,
    );

    // B_s = c_{ij sb} V^i V^j.
    let mut bsum = [0.0; 2];
    for s in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                bsum[s] += v[i] * v[j] * jet.c3_ijt(i, j, s);
            }
        }
    }

    let mut val = 0.0;
    for r in 0..2 {
        for p in 0..2 {
            let mut a = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    a -= v[i] * v[j] * jet.c4(i, j, r, p);
                }
            }
            for s in 0..2 {
                for m in 0..2 {
                    a += bsum[s] * einv[(s, m)] * jet.c3_itt(m, p, r);
                }
            }
            val += a * etabar[p] * etabar[r];
        }
    }
    Ok(val)
}

/// Tensor value divided by `|V|_g^2 |eta|_{g*}^2`.
///
/// In the conformal chart metric `g = q I` the two norms contribute `q`
/// and `1/q`, so the normalization reduces to the Euclidean one; the
/// factors are kept explicit for clarity.
pub fn mtw_normalized(
    cost: CostId,
    src: ChartPos,
    tgt: ChartPos,
    v: Vector2<f64>,
    eta: Vector2<f64>,
) -> Result<f64> {
    let q = metric_factor(src.radius_sq());
    let v2 = q * v.norm_squared();
    let eta2 = eta.norm_squared() / q;
    if v2 == 0.0 || eta2 == 0.0 {
        return Err(Error::config(
            "mtw",
            "normalized tensor value needs nonzero V and eta",
        ));
    }
    Ok(mtw_value(cost, src, tgt, v, eta)? / (v2 * eta2))
}

fn random_sphere_point(rng: &mut ChaCha8Rng) -> SpherePoint {
    let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let r = (1.0 - z * z).max(0.0).sqrt();
    SpherePoint::from_unnormalized(nalgebra::Vector3::new(r * phi.cos(), r * phi.sin(), z))
}

/// Draws `num_samples` uniform base pairs at singularity margin at least
/// `sing_margin`, with unit `V` and unit `eta` projected to satisfy
/// `eta(V) = 0`, and returns the empirical minimum normalized tensor
/// value.  Deterministic for a fixed `seed`; sample `k` of a longer run
/// equals sample `k` of a shorter one.
pub fn sample_mtw_delta(
    cost: CostId,
    num_samples: usize,
    sing_margin: f64,
    seed: u64,
) -> Result<MtwDeltaReport> {
    if num_samples == 0 {
        return Err(Error::config("samples", "need at least one sample"));
    }
    if sing_margin < MTW_PAIR_MARGIN {
        return Err(Error::config(
            "sing_margin",
            format!("sampling margin must be at least {MTW_PAIR_MARGIN}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<MtwSample> = None;

    for _ in 0..num_samples {
        let x = random_sphere_point(&mut rng);
        let xbar = loop {
            let y = random_sphere_point(&mut rng);
            let margin = cost::sing_margin(cost, geodesic_distance(&x, &y));
            if margin >= sing_margin {
                break y;
            }
        };
        let src = owned_chart_pos(&x);
        let tgt = owned_chart_pos(&xbar);

        let alpha: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let v = Vector2::new(alpha.cos(), alpha.sin());
        let eta = loop {
            let beta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let e = Vector2::new(beta.cos(), beta.sin());
            // Remove the component pairing with V (Gram-Schmidt in the
            // duality pairing; no metric involved).
            let proj = e - v * e.dot(&v);
            if proj.norm() > 1e-6 {
                break proj / proj.norm();
            }
        };

        let value = mtw_value(cost, src, tgt, v, eta)?;
        let q = metric_factor(src.radius_sq());
        let normalized = value / ((q * v.norm_squared()) * (eta.norm_squared() / q));
        let sample = MtwSample {
            x,
            xbar,
            src,
            tgt,
            v,
            eta,
            value,
            normalized,
        };
        if best.map_or(true, |b| normalized < b.normalized) {
            best = Some(sample);
        }
    }

    let argmin = best.expect("num_samples >= 1");
    Ok(MtwDeltaReport {
        min_normalized: argmin.normalized,
        argmin,
        samples: num_samples,
    })
}

/// Maximum grid discrepancy between the assembled Hessian `w` and the
/// pulled-back comparator `-c_{i sb}(x, T(x)) dT^sb/dx^k` (symmetrized),
/// with the map Jacobian taken by centered differences of the stored
/// target field.
///
/// Differentiating the contact relation `u_i + c_i(x, T(x)) = 0` in
/// `x^k` gives `u_ik + c_ik = -c_{i sb} T^sb_k`, i.e. the two matrices
/// agree exactly in the continuum.  The residual therefore measures the
/// joint consistency of the potential, the solved targets, and the
/// assembled `w`, and shrinks at second order in the grid spacing.
pub fn pullback_h_check(flow: &S2Flow) -> f64 {
    let mut worst = 0.0f64;
    for ci in 0..2 {
        let lat = &flow.grid.charts[ci];
        for &node in &lat.owned_nodes {
            let k = node as usize;
            // map_jacobian expresses neighbor targets in the chart of
            // this node's own target, matching the chart the stored
            // mixed derivatives were evaluated in.
            let m = -flow.state.pair[ci][k].c_it * map_jacobian(flow, ci, node);
            let sym = (m + m.transpose()) * 0.5;
            let diff = sym - flow.state.w[ci][k];
            for e in diff.iter() {
                worst = worst.max(e.abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::SphereShape;
    use crate::geometry::{sphere_to_chart, ChartId};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, Vector3};

    #[test]
    fn zero_vector_gives_zero() {
        let src = ChartPos::new(ChartId::A, 0.2, -0.1);
        let tgt = ChartPos::new(ChartId::A, 0.5, 0.3);
        let eta = Vector2::new(0.3, 0.7);
        let v = mtw_value(CostId::SquaredDistance, src, tgt, Vector2::zeros(), eta).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn quadratic_homogeneity() {
        let src = ChartPos::new(ChartId::A, 0.2, -0.1);
        let tgt = ChartPos::new(ChartId::A, 0.5, 0.3);
        let v = Vector2::new(0.6, -0.2);
        let eta = Vector2::new(0.3, 0.7);
        let base = mtw_value(CostId::SquaredDistance, src, tgt, v, eta).unwrap();
        let double = mtw_value(CostId::SquaredDistance, src, tgt, 2.0 * v, eta).unwrap();
        assert_relative_eq!(double, 4.0 * base, max_relative = 1e-12);
        let eta3 = mtw_value(CostId::SquaredDistance, src, tgt, v, 3.0 * eta).unwrap();
        assert_relative_eq!(eta3, 9.0 * base, max_relative = 1e-12);
    }

    #[test]
    fn normalized_value_is_scale_invariant() {
        let src = ChartPos::new(ChartId::A, -0.3, 0.4);
        let tgt = ChartPos::new(ChartId::B, 0.2, 0.25);
        let v = Vector2::new(0.6, -0.2);
        let eta = Vector2::new(-0.1, 0.9);
        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            let base = mtw_normalized(cost, src, tgt, v, eta).unwrap();
            let scaled = mtw_normalized(cost, src, tgt, -2.5 * v, 0.3 * eta).unwrap();
            assert_relative_eq!(scaled, base, max_relative = 1e-12);
        }
    }

    #[test]
    fn diagonal_squared_distance_value() {
        // At xbar = x with unit V and eta(V) = 0 the normalized value of
        // the squared-distance tensor on the unit sphere is 2/3: in normal
        // coordinates c = |u - v|^2/2 - R_{ikjl} u^i v^k u^j v^l / 6 + ...,
        // and the contraction of the quartic term with V, V and the
        // pulled-back eta gives (2/3) R(V, Y, V, Y) = 2/3 for curvature 1.
        // Confirmed independently by the pure finite-difference oracle
        // (see oracle::tests::fd_tensor_oracle_agrees_with_jet_contraction).
        for &(a, b) in &[(0.0, 0.0), (0.3, -0.2), (-0.5, 0.1)] {
            let src = ChartPos::new(ChartId::A, a, b);
            // Euclidean-unit V and eta are g/g*-orthonormal up to the
            // conformal factor, which mtw_normalized divides out.
            let v = Vector2::new(1.0, 0.0);
            let eta = Vector2::new(0.0, 1.0);
            let val = mtw_normalized(CostId::SquaredDistance, src, src, v, eta).unwrap();
            assert_relative_eq!(val, 2.0 / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn chart_choice_does_not_move_the_value() {
        // Base point in the overlap band, expressed in both charts; V and
        // eta transform by the transition Jacobian and its inverse
        // transpose.  The Jacobian of (a,b) -> (a,b)/r^2 is
        // (I - 2 nhat nhat^T)/r^2, a symmetric involution over r^2.
        let x = SpherePoint::from_unnormalized(Vector3::new(0.6, 0.5, -0.12));
        let xbar = SpherePoint::from_unnormalized(Vector3::new(-0.2, 0.8, 0.4));
        let src_a = sphere_to_chart(&x, ChartId::A).unwrap();
        let src_b = sphere_to_chart(&x, ChartId::B).unwrap();
        let tgt = owned_chart_pos(&xbar);

        let r2 = src_a.radius_sq();
        let n = Vector2::new(src_a.a, src_a.b) / r2.sqrt();
        let refl = Matrix2::identity() - 2.0 * n * n.transpose();
        let jac = refl / r2;

        let v_a = Vector2::new(0.7, -0.4);
        let eta_a = Vector2::new(0.2, 0.9);
        let v_b = jac * v_a;
        // eta transforms by the inverse transpose; jac is symmetric with
        // inverse r2 * refl.
        let eta_b = (refl * r2) * eta_a;

        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            let raw_a = mtw_value(cost, src_a, tgt, v_a, eta_a).unwrap();
            let raw_b = mtw_value(cost, src_b, tgt, v_b, eta_b).unwrap();
            assert_relative_eq!(raw_a, raw_b, max_relative = 1e-8);
            // Target chart choice is immaterial even without transforms.
            let tgt_other = crate::geometry::transition(tgt);
            let raw_t = mtw_value(cost, src_a, tgt_other, v_a, eta_a).unwrap();
            assert_relative_eq!(raw_a, raw_t, max_relative = 1e-10);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let one = sample_mtw_delta(CostId::SquaredDistance, 1, 0.3, 42).unwrap();
        let again = sample_mtw_delta(CostId::SquaredDistance, 1, 0.3, 42).unwrap();
        assert_eq!(one.min_normalized.to_bits(), again.min_normalized.to_bits());

        let short = sample_mtw_delta(CostId::SquaredDistance, 200, 0.3, 42).unwrap();
        let long = sample_mtw_delta(CostId::SquaredDistance, 400, 0.3, 42).unwrap();
        assert!(long.min_normalized <= short.min_normalized);
    }

    #[test]
    fn sampled_minimum_is_positive_for_both_costs() {
        for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
            let report = sample_mtw_delta(cost, 500, 0.3, 42).unwrap();
            assert!(
                report.min_normalized > 0.0,
                "{cost:?} sampled minimum {:.6}",
                report.min_normalized
            );
        }
    }

    #[test]
    fn margin_below_floor_is_rejected() {
        let err = sample_mtw_delta(CostId::SquaredDistance, 1, 0.01, 42).unwrap_err();
        assert!(matches!(err, Error::ConfigError { .. }));
        let src = ChartPos::new(ChartId::A, 0.1, 0.0);
        let err = mtw_value(
            CostId::ReflectorAntenna,
            src,
            src,
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularPair { .. }));
    }

    #[test]
    fn pullback_check_small_at_identity() {
        // Zero potential: the target field is the identity map, whose
        // centered differences are exact, so the residual sits at the
        // Newton-tolerance noise floor rather than at C h^2.
        let flow = S2Flow::new(
            CostId::SquaredDistance,
            47,
            SphereShape::Uniform,
            SphereShape::Uniform,
        )
        .unwrap();
        assert!(pullback_h_check(&flow) < 1e-9);
    }

    #[test]
    fn pullback_check_is_second_order_in_h() {
        let pot = |x: &SpherePoint| {
            let c = x.coords();
            0.02 * c.x + 0.015 * c.y * c.z
        };
        let residual = |n: usize| {
            let mut flow = S2Flow::new(
                CostId::SquaredDistance,
                n,
                SphereShape::Uniform,
                SphereShape::Uniform,
            )
            .unwrap();
            flow.set_potential(&pot).unwrap();
            pullback_h_check(&flow)
        };
        let coarse = residual(47);
        let fine = residual(93); // exactly halves h
        let ratio = coarse / fine;
        assert!(
            (3.2..4.8).contains(&ratio),
            "coarse {coarse:.3e} fine {fine:.3e} ratio {ratio:.2}"
        );
    }

    #[test]
    fn pullback_check_vanishes_when_w_is_the_comparator() {
        // Overwriting w with the symmetrized pullback makes the identity
        // algebraic, independent of grid resolution or potential.
        let mut flow = S2Flow::new(
            CostId::ReflectorAntenna,
            47,
            SphereShape::Uniform,
            SphereShape::Uniform,
        )
        .unwrap();
        flow.set_potential(&|x: &SpherePoint| 0.01 * x.coords().z)
            .unwrap();
        for ci in 0..2 {
            for &node in &flow.grid.charts[ci].owned_nodes.clone() {
                let k = node as usize;
                let m = -flow.state.pair[ci][k].c_it * map_jacobian(&flow, ci, node);
                flow.state.w[ci][k] = (m + m.transpose()) * 0.5;
            }
        }
        assert!(pullback_h_check(&flow) <= 1e-10);
    }
}
