//! The linearized operator of `theta`, evolution-order checks, decay-rate
//! fits, and the per-step monitor record.
//!
//! The operator here is the exact derivative of the discrete `theta`
//! pipeline with respect to the potential, using the same difference
//! stencils as the flow.  That makes the semi-discrete identity
//! `d theta/dt = L theta` hold up to a pure `O(dt)` Euler remainder on
//! nodes whose stencils stay clear of the interpolated overlap fringe,
//! which is what the evolution check measures.

use crate::cost;
use crate::error::{Error, Result};
use crate::flow::{S1Flow, S2Flow};
use crate::geometry::{metric_factor, transition, wrap_angle, ChartId, ChartPos};
use crate::grid::{ScalarField, SphereGrid};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// One sampled row of the run's time series: everything the monitors can
/// see from an immutable state snapshot.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub t: f64,
    /// Oscillation `max theta - min theta` over owned nodes.
    pub h_osc: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Eigenvalue extremes of `w` (the convexity monitor).
    pub eig_min: f64,
    pub eig_max: f64,
    /// Distance of the closest `(x, T(x))` pair to the cost singularity.
    pub sing_min: f64,
    /// `integral of e^theta rho - 1`.
    pub conservation: f64,
    pub dt: f64,
    pub newton_total: u64,
    pub newton_max: u32,
}

/// Fills every record field from the sphere flow's current state.
pub fn s2_monitors(flow: &S2Flow) -> DiagnosticsRecord {
    DiagnosticsRecord {
        step: flow.state.step_count,
        t: flow.state.t,
        h_osc: flow.oscillation(),
        theta_min: flow.state.theta_min,
        theta_max: flow.state.theta_max,
        eig_min: flow.state.eig_min,
        eig_max: flow.state.eig_max,
        sing_min: flow.state.sing_min,
        conservation: flow.conservation_residual(),
        dt: flow.state.dt_last,
        newton_total: flow.last_newton.total_iters,
        newton_max: flow.last_newton.max_iters,
    }
}

/// Circle counterpart of [`s2_monitors`].
pub fn s1_monitors(flow: &S1Flow) -> DiagnosticsRecord {
    DiagnosticsRecord {
        step: flow.state.step_count,
        t: flow.state.t,
        h_osc: flow.oscillation(),
        theta_min: flow.state.theta_min,
        theta_max: flow.state.theta_max,
        eig_min: flow.state.eig_min,
        eig_max: flow.state.eig_max,
        sing_min: flow.state.sing_min,
        conservation: flow.conservation_residual(),
        dt: flow.state.dt_last,
        newton_total: flow.last_newton.total_iters,
        newton_max: flow.last_newton.max_iters,
    }
}

/// Oscillation of a chart field over owned nodes: `max - min`.
pub fn oscillation(grid: &SphereGrid, field: &ScalarField) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ci in 0..2 {
        let lat = &grid.charts[ci];
        for &node in &lat.owned_nodes {
            let v = field.data[ci][node as usize];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    hi - lo
}

/// Exponential decay rate fitted to the tail of an oscillation series.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay exponent: `H(t) ~ C exp(-beta t)`.
    pub beta: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
}

/// Least-squares fit of `ln H` against `t` over the tail half of the
/// series (the transient head is not exponential and is discarded).
/// Needs at least 10 tail samples with `H` above `10 x` machine epsilon.
pub fn fit_decay(series: &[(f64, f64)]) -> Result<DecayFit> {
    let tail = &series[series.len() / 2..];
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|&&(_, h)| h > 10.0 * f64::EPSILON)
        .map(|&(t, h)| (t, h.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData {
            what: "decay-fit tail samples",
            have: pts.len(),
            need: 10,
        });
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for &(t, y) in &pts {
        stt += (t - mean_t) * (t - mean_t);
        sty += (t - mean_t) * (y - mean_y);
    }
    if stt == 0.0 {
        return Err(Error::InsufficientData {
            what: "distinct decay-fit times",
            have: 1,
            need: 2,
        });
    }
    let slope = sty / stt;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &(t, y) in &pts {
        let fitted = mean_y + slope * (t - mean_t);
        ss_res += (y - fitted) * (y - fitted);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot <= f64::EPSILON * n {
        // A flat series is fitted perfectly by its own constant.
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(DecayFit {
        beta: -slope,
        r_squared,
    })
}

/// One assembled row of the linearized operator: the node it acts at,
/// the inverse of `w`, and the first-order drift coefficient vector.
#[derive(Clone, Copy, Debug)]
pub struct LRow {
    pub node: u32,
    pub winv: Matrix2<f64>,
    pub drift: Vector2<f64>,
}

/// The linearization of `theta` in the potential, acting on chart
/// scalars as `Lv = winv : Hess v - drift . grad v` with the flow's own
/// difference stencils.  Rows cover interior nodes (three cells clear of
/// the ownership boundary), where the stencil never reads interpolated
/// fringe values.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    pub rows: [Vec<LRow>; 2],
}

impl LinearOperator {
    /// Applies the operator; the output is dense per chart with entries
    /// at row nodes (zero elsewhere).
    pub fn apply(&self, grid: &SphereGrid, v: &ScalarField) -> ScalarField {
        let mut out = ScalarField::zeros(grid.n);
        for ci in 0..2 {
            let lat = &grid.charts[ci];
            let data = &v.data[ci];
            for row in &self.rows[ci] {
                let hess = lat.hess(data, row.node);
                let grad = lat.grad(data, row.node);
                out.data[ci][row.node as usize] =
                    (row.winv.transpose() * hess).trace() - row.drift.dot(&grad);
            }
        }
        out
    }
}

/// Assembles the linearized operator at the flow's current state.
///
/// The drift combines three pulls on the moving target: the change of
/// `ln det w` through `c_ij(x, T)`, the change of the target density, and
/// the change of the mixed-Hessian volume factor.  All three come from
/// differentiating the contact relation, which moves the target by
/// `-c^{sk} v_k` when the potential gains gradient `v_k`.
pub fn assemble_l(flow: &S2Flow) -> Result<LinearOperator> {
    let mut rows = [Vec::new(), Vec::new()];
    for ci in 0..2 {
        let lat = &flow.grid.charts[ci];
        rows[ci].reserve(lat.interior_nodes.len());
        for &node in &lat.interior_nodes {
            let k = node as usize;
            let w = &flow.state.w[ci][k];
            let det_w = w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)];
            let winv = Matrix2::new(w[(1, 1)], -w[(0, 1)], -w[(1, 0)], w[(0, 0)]) / det_w;

            let tgt = flow.state.target[ci][k];
            let jet = cost::eval_cost_jet(flow.cost, lat.node_pos(node), tgt)?;
            let einv = jet.mixed_inverse()?;
            let lnbar = flow.rho_bar.ln_chart_grad(tgt);

            let mut drift = Vector2::zeros();
            for kk in 0..2 {
                let mut acc = 0.0;
                // Transport of the log-determinant: w^{ij} c_ijs E[s][k].
                for i in 0..2 {
                    for j in 0..2 {
                        for s in 0..2 {
                            acc += winv[(i, j)] * jet.c3_ijt(i, j, s) * einv[(s, kk)];
                        }
                    }
                }
                // Transport of the target density: (ln rho_bar)_r E[r][k].
                for r in 0..2 {
                    acc += lnbar[r] * einv[(r, kk)];
                }
                // Transport of ln|det c_it|: E[s][i] c_isp E[p][k].
                for i in 0..2 {
                    for s in 0..2 {
                        for p in 0..2 {
                            acc -= einv[(s, i)] * jet.c3_itt(i, s, p) * einv[(p, kk)];
                        }
                    }
                }
                drift[kk] = acc;
            }
            rows[ci].push(LRow { node, winv, drift });
        }
    }
    Ok(LinearOperator { rows })
}

/// Advances a copy of the flow by one Euler step of size `dt` and
/// returns the worst absolute mismatch between the realized change rate
/// `(theta_new - theta_old)/dt` and `L theta_old`, over interior nodes.
/// The mismatch is the Euler remainder: it shrinks linearly with `dt`.
pub fn check_theta_evolution(flow: &S2Flow, dt: f64) -> Result<f64> {
    let lop = assemble_l(flow)?;
    let l_theta = lop.apply(&flow.grid, &flow.state.theta);
    let mut probe = flow.clone();
    probe.step_with_dt(dt)?;
    let mut worst = 0.0f64;
    for ci in 0..2 {
        for row in &lop.rows[ci] {
            let k = row.node as usize;
            let rate = (probe.state.theta.data[ci][k] - flow.state.theta.data[ci][k]) / dt;
            worst = worst.max((rate - l_theta.data[ci][k]).abs());
        }
    }
    Ok(worst)
}

/// Chart coordinates of a target point expressed in a requested chart,
/// crossing the overlap transition if needed.
fn target_in_chart(t: ChartPos, chart: ChartId) -> (f64, f64) {
    if t.chart == chart {
        (t.a, t.b)
    } else {
        let s = transition(t);
        (s.a, s.b)
    }
}

/// Finite-difference chart Jacobian of the transport map at an owned
/// node: column `k` holds `dT/dx^k`, with neighbor targets re-expressed
/// in the center target's chart.
pub fn map_jacobian(flow: &S2Flow, ci: usize, node: u32) -> Matrix2<f64> {
    let lat = &flow.grid.charts[ci];
    let (i, j) = lat.node_ij(node);
    let chart = flow.state.target[ci][node as usize].chart;
    let t = |ii: usize, jj: usize| {
        target_in_chart(flow.state.target[ci][lat.idx(ii, jj)], chart)
    };
    let inv2h = 0.5 / lat.h;
    let (ae, be) = t(i + 1, j);
    let (aw, bw) = t(i - 1, j);
    let (an, bn) = t(i, j + 1);
    let (as_, bs) = t(i, j - 1);
    Matrix2::new(
        (ae - aw) * inv2h,
        (an - as_) * inv2h,
        (be - bw) * inv2h,
        (bn - bs) * inv2h,
    )
}

/// Total pushforward mass `integral of |det DT| rho_bar(T)`: a proxy for
/// the map's degree.  A value near 1 is consistent with a global
/// diffeomorphism; `k` flags a `k`-sheeted cover.
pub fn degree_proxy_s2(flow: &S2Flow) -> f64 {
    let mut total = 0.0;
    for ci in 0..2 {
        let lat = &flow.grid.charts[ci];
        for &node in &lat.owned_nodes {
            let k = node as usize;
            let jac = map_jacobian(flow, ci, node).determinant().abs();
            let tgt = flow.state.target[ci][k];
            let pos = lat.node_pos(node);
            // weight is an area element (includes sqrt g of the source);
            // the chart density of the target supplies sqrt g-bar.
            total += lat.weight[k] / metric_factor(pos.radius_sq())
                * jac
                * flow.rho_bar.chart_value(tgt);
        }
    }
    total
}

/// Circle counterpart of [`degree_proxy_s2`]: `integral of |T'| rho_bar(T)`.
pub fn degree_proxy_s1(flow: &S1Flow) -> f64 {
    let n = flow.grid.n;
    let mut total = 0.0;
    for k in 0..n {
        let fwd = flow.state.target[(k + 1) % n];
        let bwd = flow.state.target[(k + n - 1) % n];
        let mut diff = wrap_angle(fwd - bwd);
        if diff > std::f64::consts::PI {
            diff -= std::f64::consts::TAU;
        }
        let deriv = (diff * 0.5 / flow.grid.h).abs();
        total += flow.grid.h * deriv * flow.rho_bar.value(flow.state.target[k]);
    }
    total
}
