//! Independent reference solutions used to validate the solver: the
//! monotone-rearrangement transport oracle on the circle, the first-order
//! (Poisson) prediction for near-uniform sphere targets, and a pure
//! finite-difference evaluation of the fourth-order cost tensor.
//!
//! Nothing here shares derivative code with the production pipeline:
//! the circle oracle only uses density CDFs, and the tensor oracle
//! differences raw cost values.

use crate::cost::{self, CostId};
use crate::density::CircleDensity;
use crate::error::{Error, Result};
use crate::geometry::{chart_to_sphere, circle_distance, metric_factor, ChartPos, SpherePoint};
use nalgebra::{Matrix2, Vector2, Vector3};

/// Discrete optimal map on the circle produced by CDF rearrangement.
#[derive(Clone, Debug)]
pub struct CircleOracleResult {
    /// Target angle for each source node `phi_k = k * 2 pi / n`.
    pub map: Vec<f64>,
    /// Optimal mass shift in `[0, 1)`.
    pub shift: f64,
    /// Quadratic transport cost of the optimal map.
    pub cost: f64,
}

/// Builds the monotone rearrangement `T_k = Fbar^{-1}((F + k) mod 1)` on
/// `n` nodes for every candidate shift in a uniform scan of `shifts`
/// values, picks the cheapest under the squared-distance cost, and
/// refines the winning shift by golden-section search on its bracket.
pub fn circle_rearrangement(
    rho: &CircleDensity,
    rho_bar: &CircleDensity,
    n: usize,
    shifts: usize,
) -> Result<CircleOracleResult> {
    if n < 16 {
        return Err(Error::config("oracle_n", format!("need n >= 16 (got {n})")));
    }
    if shifts < 4 {
        return Err(Error::config(
            "oracle_shifts",
            format!("need at least 4 shift candidates (got {shifts})"),
        ));
    }
    let h = std::f64::consts::TAU / n as f64;
    let angles: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
    let rho_vals: Vec<f64> = angles.iter().map(|&p| rho.value(p)).collect();

    // Cumulative distributions on n + 1 points by periodic trapezoid
    // partial sums (left sums would carry an O(h) half-cell bias into the
    // map), normalized to end at 1.
    let cdf = |vals: &[f64]| -> Vec<f64> {
        let mut f = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        f.push(0.0);
        for j in 0..n {
            acc += 0.5 * (vals[j] + vals[(j + 1) % n]) * h;
            f.push(acc);
        }
        let total = *f.last().unwrap();
        for x in f.iter_mut() {
            *x /= total;
        }
        f
    };
    let f_src = cdf(&rho_vals);
    let f_tgt = cdf(&angles.iter().map(|&p| rho_bar.value(p)).collect::<Vec<_>>());

    // Inverse of the target CDF by linear interpolation (strictly
    // increasing for positive densities).
    let inv_tgt = |m: f64| -> f64 {
        let m = m.rem_euclid(1.0);
        let j = match f_tgt.binary_search_by(|x| x.partial_cmp(&m).unwrap()) {
            Ok(j) => j,
            Err(j) => j.saturating_sub(1),
        };
        let j = j.min(n - 1);
        let span = f_tgt[j + 1] - f_tgt[j];
        let t = if span > 0.0 { (m - f_tgt[j]) / span } else { 0.0 };
        (j as f64 + t) * h
    };

    let map_for = |k: f64| -> Vec<f64> {
        (0..n).map(|j| inv_tgt(f_src[j] + k)).collect()
    };
    let cost_of = |k: f64| -> f64 {
        let map = map_for(k);
        let mut acc = 0.0;
        for j in 0..n {
            let d = circle_distance(angles[j], map[j]);
            acc += 0.5 * d * d * rho_vals[j] * h;
        }
        acc
    };

    // Uniform scan.
    let mut best_k = 0.0;
    let mut best_cost = f64::INFINITY;
    for s in 0..shifts {
        let k = s as f64 / shifts as f64;
        let c = cost_of(k);
        if c < best_cost {
            best_cost = c;
            best_k = k;
        }
    }

    // Golden-section refinement on the winning bracket.
    let delta = 1.0 / shifts as f64;
    let (mut lo, mut hi) = (best_k - delta, best_k + delta);
    let inv_phi = 0.618_033_988_749_894_9;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut c1 = cost_of(x1);
    let mut c2 = cost_of(x2);
    for _ in 0..60 {
        if c1 < c2 {
            hi = x2;
            x2 = x1;
            c2 = c1;
            x1 = hi - inv_phi * (hi - lo);
            c1 = cost_of(x1);
        } else {
            lo = x1;
            x1 = x2;
            c1 = c2;
            x2 = lo + inv_phi * (hi - lo);
            c2 = cost_of(x2);
        }
    }
    let k_star = 0.5 * (lo + hi);
    let refined_cost = cost_of(k_star);
    let (k_star, final_cost) = if refined_cost <= best_cost {
        (k_star, refined_cost)
    } else {
        (best_k, best_cost)
    };

    Ok(CircleOracleResult {
        map: map_for(k_star),
        shift: k_star.rem_euclid(1.0),
        cost: final_cost,
    })
}

/// First-order prediction for the converged potential when the source is
/// uniform and the target is `(1 + eps <x, e>) / (4 pi)`: since `<x, e>`
/// is a degree-one spherical harmonic with `Lap <x,e> = -2 <x,e>`, the
/// linearization `Lap u = -eps <x,e>` is solved exactly by
/// `u1 = (eps / 2) <x, e>`.
pub fn poisson_linearization(
    eps: f64,
    e: Vector3<f64>,
) -> Result<impl Fn(&SpherePoint) -> f64> {
    if eps.abs() > 0.1 {
        return Err(Error::config(
            "eps",
            format!("linearization oracle is only meaningful for |eps| <= 0.1 (got {eps})"),
        ));
    }
    let axis = e / e.norm();
    Ok(move |p: &SpherePoint| 0.5 * eps * p.coords().dot(&axis))
}

const W1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const W2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];

/// Normalized fourth-order cost tensor by pure finite differences of raw
/// cost values (no jet arithmetic anywhere in the chain).
///
/// `step` is the chart-coordinate stencil step.  Near the diagonal the
/// cost values are themselves `O(step^2)`, so cancellation is mild and
/// `step = 1e-3` reaches absolute accuracy around 1e-8; for well-separated
/// pairs a larger step (around 0.03) balances roundoff against truncation.
pub fn mtw_fd_oracle(
    cost: CostId,
    src: ChartPos,
    tgt: ChartPos,
    v: Vector2<f64>,
    eta: Vector2<f64>,
    step: f64,
) -> Result<f64> {
    // The normalized value is scale-free, so evaluate at unit directions;
    // this also keeps the effective stencil step equal to `step`.
    let v = v / v.norm();
    let eta = eta / eta.norm();
    let f = |sa: f64, sb: f64, ta: f64, tb: f64| -> Result<f64> {
        let x = chart_to_sphere(ChartPos::new(src.chart, sa, sb));
        let y = chart_to_sphere(ChartPos::new(tgt.chart, ta, tb));
        cost::eval_cost(cost, &x, &y)
    };
    // Directional table: f(x + i*step*dv, xbar + j*step*dy).
    let table = |dv: Vector2<f64>, dy: Vector2<f64>| -> Result<[[f64; 5]; 5]> {
        let mut t = [[0.0; 5]; 5];
        for (i, ti) in t.iter_mut().enumerate() {
            let s = (i as f64 - 2.0) * step;
            for (j, tij) in ti.iter_mut().enumerate() {
                let u = (j as f64 - 2.0) * step;
                *tij = f(
                    src.a + s * dv.x,
                    src.b + s * dv.y,
                    tgt.a + u * dy.x,
                    tgt.b + u * dy.y,
                )?;
            }
        }
        Ok(t)
    };
    let contract = |t: &[[f64; 5]; 5], wsrc: &[f64; 5], wtgt: &[f64; 5]| -> f64 {
        let mut acc = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                acc += wsrc[i] * wtgt[j] * t[i][j];
            }
        }
        acc / 144.0
    };
    let ea = Vector2::new(1.0, 0.0);
    let eb = Vector2::new(0.0, 1.0);

    // Mixed Hessian M[i][s] = c_{i sbar}.
    let mut m = Matrix2::zeros();
    for (i, di) in [ea, eb].iter().enumerate() {
        for (s, ds) in [ea, eb].iter().enumerate() {
            m[(i, s)] = contract(&table(*di, *ds)?, &W1, &W1) / (step * step);
        }
    }
    let det = m.determinant();
    if det.abs() < 1e-10 {
        return Err(Error::NearDegenerateMixedHessian { det });
    }
    // Target direction carrying eta: y^p = c^{pb k} eta_k = (M^{-1} eta)^p.
    let y = m
        .lu()
        .solve(&eta)
        .ok_or(Error::SingularJacobian { det })?;

    let d22 = contract(&table(v, y)?, &W2, &W2) / step.powi(4);
    let mut b = [0.0; 2];
    let mut c = [0.0; 2];
    for (s, ds) in [ea, eb].iter().enumerate() {
        b[s] = contract(&table(v, *ds)?, &W2, &W1) / step.powi(3);
        c[s] = contract(&table(*ds, y)?, &W1, &W2) / step.powi(3);
    }
    let minv = m.try_inverse().ok_or(Error::SingularJacobian { det })?;
    let mut correction = 0.0;
    for s in 0..2 {
        for mm in 0..2 {
            correction += b[s] * minv[(s, mm)] * c[mm];
        }
    }
    let value = -d22 + correction;

    let q = metric_factor(src.radius_sq());
    Ok(value / ((q * v.norm_squared()) * (eta.norm_squared() / q)))
}
