//! Overset grids on the sphere and the periodic grid on the circle.
//!
//! Each sphere chart carries a uniform node-centered lattice on
//! `[-L, L]^2` with `L = cap_radius()`.  Node roles:
//!
//! * **compute** nodes (`r <= 1 + 3h`) evolve under the flow; they include
//!   every *owned* node (`r <= 1`, the chart's closed hemisphere) plus a
//!   collar so that difference stencils at owned nodes never leave the
//!   computed region;
//! * **fringe** nodes (`1 + 3h < r <= 1 + 6h`) are filled each step by
//!   bicubic (tensor cubic Lagrange) interpolation from the *other*
//!   chart.  Their donor points sit at radius `1/r < 1`, deep inside the
//!   other chart's owned region, so one interpolation pass suffices and
//!   never reads another fringe value;
//! * remaining nodes are outside the active ring and hold no data.
//!
//! Quadrature assigns every owned node the conformal mass of its lattice
//! cell clipped to the unit disk: plain midpoint mass `h^2 sqrt(det g)`
//! for cells entirely inside, the exact clipped integral for cells
//! crossing the hemisphere boundary (slivers whose node is not owned are
//! donated to the nearest owned neighbor).  Each chart's total is then
//! normalized to exactly `2 pi`, so constants integrate exactly and the
//! remaining error is a clean `O(h^2)`.

use crate::error::{Error, Result};
use crate::geometry::{
    cap_radius, chart_to_sphere, metric_factor, ChartId, ChartPos, SpherePoint,
};
use nalgebra::{Matrix2, Vector2};
use once_cell::sync::Lazy;

/// Minimum sphere grid size: the fringe ring `r <= 1 + 6h` must stay inside
/// the lattice's inscribed disk of radius `cap_radius()`.
pub const MIN_GRID_N: usize = 47;

/// Node role on a chart lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Outside,
    Fringe,
    Compute,
}

/// One precomputed fringe interpolation: node to fill, donor cell base
/// index in the other chart, and tensor Lagrange weights.
#[derive(Clone, Copy, Debug)]
pub struct FringeInterp {
    pub node: u32,
    pub base_i: u32,
    pub base_j: u32,
    pub wa: [f64; 4],
    pub wb: [f64; 4],
}

/// Uniform lattice of one stereographic chart.
#[derive(Clone, Debug)]
pub struct ChartLattice {
    pub chart: ChartId,
    pub n: usize,
    pub h: f64,
    /// Coordinate of node index 0 (equals `-cap_radius()`).
    pub offset: f64,
    pub role: Vec<Role>,
    pub owned: Vec<bool>,
    /// Quadrature weight in steradians; zero for non-owned nodes.
    pub weight: Vec<f64>,
    /// Ratio applied to raw cell masses so the chart totals exactly `2 pi`.
    pub norm_factor: f64,
    pub compute_nodes: Vec<u32>,
    pub owned_nodes: Vec<u32>,
    /// Owned nodes at least three cells away from the ownership boundary
    /// (`r <= 1 - 3h`); diagnostics that difference across charts stay here.
    pub interior_nodes: Vec<u32>,
    pub fringe_plan: Vec<FringeInterp>,
}

impl ChartLattice {
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn node_ij(&self, node: u32) -> (usize, usize) {
        (node as usize % self.n, node as usize / self.n)
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.offset + i as f64 * self.h
    }

    #[inline]
    pub fn node_pos(&self, node: u32) -> ChartPos {
        let (i, j) = self.node_ij(node);
        ChartPos::new(self.chart, self.coord(i), self.coord(j))
    }

    #[inline]
    pub fn node_sphere(&self, node: u32) -> SpherePoint {
        chart_to_sphere(self.node_pos(node))
    }

    /// Second-order central gradient; the node must be a compute node.
    #[inline]
    pub fn grad(&self, data: &[f64], node: u32) -> Vector2<f64> {
        let (i, j) = self.node_ij(node);
        let n = self.n;
        let f = |ii: usize, jj: usize| data[jj * n + ii];
        let inv2h = 0.5 / self.h;
        Vector2::new(
            (f(i + 1, j) - f(i - 1, j)) * inv2h,
            (f(i, j + 1) - f(i, j - 1)) * inv2h,
        )
    }

    /// Second-order central Hessian; the node must be a compute node.
    #[inline]
    pub fn hess(&self, data: &[f64], node: u32) -> Matrix2<f64> {
        let (i, j) = self.node_ij(node);
        let n = self.n;
        let f = |ii: usize, jj: usize| data[jj * n + ii];
        let invh2 = 1.0 / (self.h * self.h);
        let faa = (f(i + 1, j) - 2.0 * f(i, j) + f(i - 1, j)) * invh2;
        let fbb = (f(i, j + 1) - 2.0 * f(i, j) + f(i, j - 1)) * invh2;
        let fab = (f(i + 1, j + 1) - f(i + 1, j - 1) - f(i - 1, j + 1) + f(i - 1, j - 1))
            * (0.25 * invh2);
        Matrix2::new(faa, fab, fab, fbb)
    }

    /// Bicubic sample of chart data at arbitrary coordinates.  The 4x4
    /// stencil must consist of active (compute or fringe) nodes.
    pub fn sample_bicubic(&self, data: &[f64], a: f64, b: f64) -> Result<f64> {
        let fa = (a - self.offset) / self.h;
        let fb = (b - self.offset) / self.h;
        let mi = fa.floor() as i64;
        let mj = fb.floor() as i64;
        if mi < 1 || mj < 1 || mi + 2 >= self.n as i64 || mj + 2 >= self.n as i64 {
            return Err(Error::OverlapStarved { n: self.n });
        }
        let wa = lagrange4(fa - mi as f64);
        let wb = lagrange4(fb - mj as f64);
        let (bi, bj) = ((mi - 1) as usize, (mj - 1) as usize);
        // Interpolate relative to an anchor value from the stencil so a
        // constant field is reproduced exactly (the weights sum to 1 only
        // up to rounding).
        let anchor = data[self.idx(bi + 1, bj + 1)];
        let mut acc = 0.0;
        for dj in 0..4 {
            let mut row = 0.0;
            for di in 0..4 {
                if self.role[self.idx(bi + di, bj + dj)] == Role::Outside {
                    return Err(Error::OverlapStarved { n: self.n });
                }
                row += wa[di] * (data[self.idx(bi + di, bj + dj)] - anchor);
            }
            acc += wb[dj] * row;
        }
        Ok(anchor + acc)
    }
}

/// Cubic Lagrange weights for nodes at offsets `-1, 0, 1, 2` evaluated at
/// fractional position `x` in `[0, 1)`.
#[inline]
fn lagrange4(x: f64) -> [f64; 4] {
    [
        -x * (x - 1.0) * (x - 2.0) / 6.0,
        (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0,
        -(x + 1.0) * x * (x - 2.0) / 2.0,
        (x + 1.0) * x * (x - 1.0) / 6.0,
    ]
}

/// Scalar field over both chart lattices (dense `n x n` per chart;
/// entries at `Outside` nodes are zero and never read).
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub data: [Vec<f64>; 2],
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField {
            data: [vec![0.0; n * n], vec![0.0; n * n]],
        }
    }
}

/// Two-chart overset grid of the sphere.
#[derive(Clone, Debug)]
pub struct SphereGrid {
    pub n: usize,
    pub h: f64,
    pub half_width: f64,
    pub compute_radius: f64,
    pub fringe_radius: f64,
    pub charts: [ChartLattice; 2],
}

impl SphereGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_GRID_N {
            return Err(Error::config(
                "grid_n",
                format!("sphere grid needs n >= {MIN_GRID_N} so the fringe ring fits the lattice (got {n})"),
            ));
        }
        if n % 2 == 0 {
            return Err(Error::config(
                "grid_n",
                format!("sphere grid needs odd n so the chart origins are nodes (got {n})"),
            ));
        }
        let half_width = cap_radius();
        let h = 2.0 * half_width / (n - 1) as f64;
        let compute_radius = 1.0 + 3.0 * h;
        let fringe_radius = 1.0 + 6.0 * h;
        debug_assert!(fringe_radius <= half_width);

        let chart_a = build_lattice(ChartId::A, n, h, -half_width, compute_radius, fringe_radius)?;
        let chart_b = build_lattice(ChartId::B, n, h, -half_width, compute_radius, fringe_radius)?;
        Ok(SphereGrid {
            n,
            h,
            half_width,
            compute_radius,
            fringe_radius,
            charts: [chart_a, chart_b],
        })
    }

    /// Integrates a grid field over the sphere (owned nodes only).
    pub fn integrate(&self, field: &ScalarField) -> f64 {
        let mut acc = 0.0;
        for k in 0..2 {
            let lat = &self.charts[k];
            for &node in &lat.owned_nodes {
                acc += lat.weight[node as usize] * field.data[k][node as usize];
            }
        }
        acc
    }

    /// Integrates a closed-form function over the sphere.
    pub fn integrate_fn(&self, f: &dyn Fn(&SpherePoint) -> f64) -> f64 {
        let mut acc = 0.0;
        for lat in &self.charts {
            for &node in &lat.owned_nodes {
                acc += lat.weight[node as usize] * f(&lat.node_sphere(node));
            }
        }
        acc
    }

    /// Fills every fringe node of both charts by bicubic interpolation of
    /// the other chart's data.  Donor stencils consist of compute nodes
    /// only, so the pass is order-independent and idempotent.
    pub fn sync(&self, field: &mut ScalarField) {
        let [data_a, data_b] = &mut field.data;
        apply_fringe(&self.charts[0], data_a, data_b);
        apply_fringe(&self.charts[1], data_b, data_a);
    }

    /// Fills all active (compute and fringe) nodes from a closed-form
    /// function of the sphere point.
    pub fn field_from_fn(&self, f: &dyn Fn(&SpherePoint) -> f64) -> ScalarField {
        let mut out = ScalarField::zeros(self.n);
        for k in 0..2 {
            let lat = &self.charts[k];
            for node in 0..(self.n * self.n) as u32 {
                if lat.role[node as usize] != Role::Outside {
                    out.data[k][node as usize] = f(&lat.node_sphere(node));
                }
            }
        }
        out
    }
}

fn apply_fringe(lat: &ChartLattice, dst: &mut [f64], donor: &[f64]) {
    let n = lat.n;
    for fi in &lat.fringe_plan {
        // Anchored form of the tensor-product cubic: constants pass
        // through bit-exactly, which keeps trajectories invariant under
        // constant shifts of the potential.
        let anchor = donor[(fi.base_j as usize + 1) * n + fi.base_i as usize + 1];
        let mut acc = 0.0;
        for dj in 0..4 {
            let row = (fi.base_j as usize + dj) * n + fi.base_i as usize;
            let mut r = 0.0;
            for di in 0..4 {
                r += fi.wa[di] * (donor[row + di] - anchor);
            }
            acc += fi.wb[dj] * r;
        }
        dst[fi.node as usize] = anchor + acc;
    }
}

fn build_lattice(
    chart: ChartId,
    n: usize,
    h: f64,
    offset: f64,
    compute_radius: f64,
    fringe_radius: f64,
) -> Result<ChartLattice> {
    let nn = n * n;
    let mut role = vec![Role::Outside; nn];
    let mut owned = vec![false; nn];
    let coord = |i: usize| offset + i as f64 * h;

    // Ownership tie-break: the closed hemisphere belongs to chart A, so
    // chart B excludes the equator circle r = 1.
    let owns = |r2: f64| match chart {
        ChartId::A => r2 <= 1.0,
        ChartId::B => r2 < 1.0,
    };

    for j in 0..n {
        for i in 0..n {
            let (a, b) = (coord(i), coord(j));
            let r2 = a * a + b * b;
            let node = j * n + i;
            role[node] = if r2 <= compute_radius * compute_radius {
                Role::Compute
            } else if r2 <= fringe_radius * fringe_radius {
                Role::Fringe
            } else {
                Role::Outside
            };
            owned[node] = owns(r2);
        }
    }

    // Quadrature: exact clipped masses at the hemisphere boundary.
    let mut weight = vec![0.0; nn];
    let half = 0.5 * h;
    for j in 0..n {
        for i in 0..n {
            let node = j * n + i;
            let (a, b) = (coord(i), coord(j));
            let (a0, a1, b0, b1) = (a - half, a + half, b - half, b + half);
            let (rmin, rmax) = rect_radius_range(a0, a1, b0, b1);
            if rmin >= 1.0 {
                continue; // cell entirely outside the owned disk
            }
            if rmax <= 1.0 {
                // Interior cell: midpoint rule with the metric area element.
                debug_assert!(owned[node]);
                weight[node] += h * h * metric_factor(a * a + b * b);
                continue;
            }
            let mass = clipped_cell_mass(a0, a1, b0, b1);
            if owned[node] {
                weight[node] += mass;
            } else {
                // Sliver whose node sits outside the disk: donate the mass
                // to the nearest owned neighbor.
                let mut best: Option<(usize, f64)> = None;
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ii, jj) = (i as i64 + di, j as i64 + dj);
                        if ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                            continue;
                        }
                        let cand = (jj * n as i64 + ii) as usize;
                        if !owned[cand] {
                            continue;
                        }
                        let (ca, cb) = (coord(ii as usize), coord(jj as usize));
                        let d2 = (ca - a) * (ca - a) + (cb - b) * (cb - b);
                        if best.map_or(true, |(_, bd)| d2 < bd) {
                            best = Some((cand, d2));
                        }
                    }
                }
                let (neighbor, _) = best.expect("boundary sliver always has an owned neighbor");
                weight[neighbor] += mass;
            }
        }
    }

    // Normalize the hemisphere mass to exactly 2 pi.
    let total: f64 = weight.iter().sum();
    let norm_factor = 2.0 * std::f64::consts::PI / total;
    for w in weight.iter_mut() {
        *w *= norm_factor;
    }

    // Node lists.
    let mut compute_nodes = Vec::new();
    let mut owned_nodes = Vec::new();
    let mut interior_nodes = Vec::new();
    let seam2 = (1.0 - 3.0 * h) * (1.0 - 3.0 * h);
    for j in 0..n {
        for i in 0..n {
            let node = (j * n + i) as u32;
            let r2 = coord(i) * coord(i) + coord(j) * coord(j);
            match role[node as usize] {
                Role::Compute => {
                    compute_nodes.push(node);
                    if owned[node as usize] {
                        owned_nodes.push(node);
                        if r2 <= seam2 {
                            interior_nodes.push(node);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    // Fringe interpolation plan.  Donor coordinates come from the chart
    // transition; the donor lattice has the same geometry as this one, so
    // its roles can be validated against our own role table.
    let mut fringe_plan = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let node = j * n + i;
            if role[node] != Role::Fringe {
                continue;
            }
            let (a, b) = (coord(i), coord(j));
            let r2 = a * a + b * b;
            let (da, db) = (a / r2, b / r2);
            let fa = (da - offset) / h;
            let fb = (db - offset) / h;
            let mi = fa.floor() as i64;
            let mj = fb.floor() as i64;
            if mi < 1 || mj < 1 || mi + 2 >= n as i64 || mj + 2 >= n as i64 {
                return Err(Error::OverlapStarved { n });
            }
            let (bi, bj) = ((mi - 1) as usize, (mj - 1) as usize);
            for sj in 0..4 {
                for si in 0..4 {
                    if role[(bj + sj) * n + bi + si] != Role::Compute {
                        return Err(Error::OverlapStarved { n });
                    }
                }
            }
            fringe_plan.push(FringeInterp {
                node: node as u32,
                base_i: bi as u32,
                base_j: bj as u32,
                wa: lagrange4(fa - mi as f64),
                wb: lagrange4(fb - mj as f64),
            });
        }
    }

    Ok(ChartLattice {
        chart,
        n,
        h,
        offset,
        role,
        owned,
        weight,
        norm_factor,
        compute_nodes,
        owned_nodes,
        interior_nodes,
        fringe_plan,
    })
}

/// Minimum and maximum distance from the origin over an axis-aligned
/// rectangle.
fn rect_radius_range(a0: f64, a1: f64, b0: f64, b1: f64) -> (f64, f64) {
    let ca = 0.0f64.clamp(a0, a1);
    let cb = 0.0f64.clamp(b0, b1);
    let rmin = (ca * ca + cb * cb).sqrt();
    let mut rmax2 = 0.0f64;
    for &a in &[a0, a1] {
        for &b in &[b0, b1] {
            rmax2 = rmax2.max(a * a + b * b);
        }
    }
    (rmin, rmax2.sqrt())
}

/// Conformal (round-metric) area of `[a0,a1] x [b0,b1]` intersected with
/// the unit disk, via the closed-form inner integral
/// `int 4/(c^2 + b^2)^2 db = 2 [ b/(c^2+b^2) + atan(b/c)/c ] / c^2`,
/// `c^2 = 1 + a^2`, and adaptive-split Gauss quadrature in `a`.
fn clipped_cell_mass(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    // Breakpoints where the b-clipping pattern changes analyticity.
    let mut brk = vec![a0, a1];
    let mut push = |x: f64| {
        if x > a0 + 1e-15 && x < a1 - 1e-15 {
            brk.push(x);
        }
    };
    for lim in [b0, b1] {
        if lim.abs() < 1.0 {
            let x = (1.0 - lim * lim).sqrt();
            push(x);
            push(-x);
        }
    }
    push(1.0);
    push(-1.0);
    brk.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let inner = |a: f64| -> f64 {
        let w2 = 1.0 - a * a;
        if w2 <= 0.0 {
            return 0.0;
        }
        let w = w2.sqrt();
        let lo = b0.max(-w);
        let hi = b1.min(w);
        if hi <= lo {
            return 0.0;
        }
        let c2 = 1.0 + a * a;
        let c = c2.sqrt();
        let g = |b: f64| 2.0 * (b / (c2 + b * b) + (b / c).atan() / c) / c2;
        g(hi) - g(lo)
    };

    let (nodes, weights) = gauss16();
    let gauss = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
        let mid = 0.5 * (lo + hi);
        let rad = 0.5 * (hi - lo);
        (0..16).map(|k| weights[k] * rad * f(mid + rad * nodes[k])).sum()
    };
    let mut acc = 0.0;
    for seg in brk.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        if hi - lo < 1e-15 {
            continue;
        }
        // The clip width sqrt(1 - a^2) has a square-root singularity at
        // a = 1 (and -1); substituting a = 1 - t^2 (resp. -1 + t^2) makes
        // the integrand analytic there.
        if (hi - 1.0).abs() < 1e-14 {
            acc += gauss(&|t: f64| 2.0 * t * inner(1.0 - t * t), 0.0, (1.0 - lo).sqrt());
        } else if (lo + 1.0).abs() < 1e-14 {
            acc += gauss(&|t: f64| 2.0 * t * inner(-1.0 + t * t), 0.0, (hi + 1.0).sqrt());
        } else {
            acc += gauss(&inner, lo, hi);
        }
    }
    acc
}

/// 16-point Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss16() -> (&'static [f64; 16], &'static [f64; 16]) {
    static TABLE: Lazy<([f64; 16], [f64; 16])> = Lazy::new(|| {
        let n = 16usize;
        let mut nodes = [0.0; 16];
        let mut weights = [0.0; 16];
        for i in 0..n {
            // Newton iteration on P_16 from a Chebyshev-like initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_and_deriv(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_and_deriv(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    });
    (&TABLE.0, &TABLE.1)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Periodic uniform grid on the circle: nodes `phi_k = k h`, `h = 2 pi / n`.
#[derive(Clone, Debug)]
pub struct CircleGrid {
    pub n: usize,
    pub h: f64,
}

impl CircleGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 16 {
            return Err(Error::config(
                "grid_n",
                format!("circle grid needs n >= 16 (got {n})"),
            ));
        }
        Ok(CircleGrid {
            n,
            h: std::f64::consts::TAU / n as f64,
        })
    }

    #[inline]
    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn integrate(&self, data: &[f64]) -> f64 {
        self.h * data.iter().sum::<f64>()
    }

    pub fn integrate_fn(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.h * (0..self.n).map(|k| f(self.angle(k))).sum::<f64>()
    }

    /// Periodic second-order central gradient.
    #[inline]
    pub fn grad(&self, data: &[f64], k: usize) -> f64 {
        let n = self.n;
        (data[(k + 1) % n] - data[(k + n - 1) % n]) * 0.5 / self.h
    }

    /// Periodic second-order central second derivative.
    #[inline]
    pub fn second(&self, data: &[f64], k: usize) -> f64 {
        let n = self.n;
        (data[(k + 1) % n] - 2.0 * data[k] + data[(k + n - 1) % n]) / (self.h * self.h)
    }
}
