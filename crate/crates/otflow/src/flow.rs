//! Explicit time stepping of the potential flow `du/dt = theta`.
//!
//! The state couples four fields per chart: the potential `u`, the
//! transport map `T` solved from the contact equation, the second-order
//! matrix `w = Hess u + c_ij(x, T)`, and the flow speed `theta`.  One step
//! updates `u` by explicit Euler with a stability-limited `dt`, refreshes
//! the overlap fringe, re-solves `T` warm-started from the previous map,
//! and rebuilds `w` and `theta`.  A step that breaks local convexity (or
//! any contact solve) is retried with a halved `dt`.

use crate::cost::{self, CostId, PairDerivs, PairDerivs1, SING_GUARD};
use crate::density::{CircleDensity, CircleShape, SphereDensity, SphereShape};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::geometry::{embed_jet2, wrap_angle, ChartId, ChartPos, EmbedJet2, SpherePoint};
use crate::grid::{CircleGrid, ScalarField, SphereGrid};
use crate::transport;
use nalgebra::{Matrix2, Vector2};

/// Smallest admissible eigenvalue of `w`; anything at or below trips the
/// local-convexity guard and the step backtracks.
pub const EIG_FLOOR: f64 = 1e-8;
/// Maximum number of `dt` halvings inside one step before giving up.
pub const MAX_HALVINGS: usize = 10;

/// Contact-solver effort spent in the most recent field refresh.
#[derive(Clone, Copy, Debug, Default)]
pub struct NewtonStats {
    /// Newton corrections summed over all nodes.
    pub total_iters: u64,
    /// Worst single-node iteration count.
    pub max_iters: u32,
}

impl NewtonStats {
    fn absorb(&mut self, iters: u32) {
        self.total_iters += iters as u64;
        self.max_iters = self.max_iters.max(iters);
    }
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    /// The oscillation of `theta` dropped to the tolerance.
    Converged,
    /// The step budget ran out first.
    MaxSteps,
    /// A step kept failing through all `dt` halvings.
    StepFailed { halvings: usize, message: String },
}

/// Step-loop controls (the numerical knobs of a run).
#[derive(Clone, Copy, Debug)]
pub struct RunParams {
    /// Safety factor multiplying the stability limit, in `(0, 1]`.
    pub sigma: f64,
    /// Stop once `max theta - min theta` falls to this.
    pub tol: f64,
    pub max_steps: u64,
    /// Record diagnostics every this many steps (0 treated as 1).
    pub cadence: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            sigma: 0.8,
            tol: 1e-8,
            max_steps: 400_000,
            cadence: 100,
        }
    }
}

/// A finished (or aborted) run: the recorded time series plus the reason
/// the loop stopped.  The flow itself retains the final state.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticsRecord>,
    pub termination: Termination,
}

/// Mutable per-node fields of the sphere flow.  All dense arrays are
/// indexed by node id; entries are meaningful at compute nodes only.
#[derive(Clone, Debug)]
pub struct S2State {
    pub u: ScalarField,
    pub target: [Vec<ChartPos>; 2],
    pub pair: [Vec<PairDerivs>; 2],
    pub w: [Vec<Matrix2<f64>>; 2],
    pub theta: ScalarField,
    /// Extremes of `theta` over owned nodes.
    pub theta_min: f64,
    pub theta_max: f64,
    /// Eigenvalue extremes of `w` over compute nodes.
    pub eig_min: f64,
    pub eig_max: f64,
    /// Smallest distance of `(x, T(x))` to the cost singularity over
    /// owned nodes.
    pub sing_min: f64,
    pub t: f64,
    pub step_count: u64,
    pub dt_last: f64,
}

/// The parabolic transport flow on the sphere.
#[derive(Clone, Debug)]
pub struct S2Flow {
    pub cost: CostId,
    pub grid: SphereGrid,
    pub rho: SphereDensity,
    pub rho_bar: SphereDensity,
    /// Source embedding jets, fixed for the life of the grid.
    jets: [Vec<EmbedJet2>; 2],
    /// `ln` of the source chart density at each compute node.
    ln_rho_chart: [Vec<f64>; 2],
    /// Quadrature weight times intrinsic source density (owned nodes).
    rho_weight: [Vec<f64>; 2],
    pub state: S2State,
    /// Scratch copy of `u` for step backtracking.
    prev_u: [Vec<f64>; 2],
    /// Contact-solver effort of the latest refresh.
    pub last_newton: NewtonStats,
    /// Smallest `w` eigenvalue seen at any point of the whole run.
    pub run_eig_min: f64,
    /// Smallest singularity distance seen at any point of the whole run.
    pub run_sing_min: f64,
}

impl S2Flow {
    /// Builds the flow for densities given as shapes; both densities are
    /// normalized against this grid's quadrature so that the discrete
    /// masses are exactly one.  The potential starts at zero.
    pub fn new(
        cost: CostId,
        n: usize,
        rho_shape: SphereShape,
        rho_bar_shape: SphereShape,
    ) -> Result<Self> {
        let grid = SphereGrid::new(n)?;
        let rho = SphereDensity::new(rho_shape, |f| grid.integrate_fn(f))?;
        let rho_bar = SphereDensity::new(rho_bar_shape, |f| grid.integrate_fn(f))?;

        let len = n * n;
        let mut jets = [Vec::with_capacity(len), Vec::with_capacity(len)];
        let mut ln_rho_chart = [vec![0.0; len], vec![0.0; len]];
        let mut rho_weight = [vec![0.0; len], vec![0.0; len]];
        let mut target = [
            vec![ChartPos::new(ChartId::A, 0.0, 0.0); len],
            vec![ChartPos::new(ChartId::B, 0.0, 0.0); len],
        ];
        for ci in 0..2 {
            let lat = &grid.charts[ci];
            for node in 0..len as u32 {
                jets[ci].push(embed_jet2(lat.node_pos(node)));
            }
            for &node in &lat.compute_nodes {
                let pos = lat.node_pos(node);
                ln_rho_chart[ci][node as usize] = rho.ln_chart(pos);
                target[ci][node as usize] = transport::default_target_seed(cost, pos);
            }
            for &node in &lat.owned_nodes {
                rho_weight[ci][node as usize] =
                    lat.weight[node as usize] * rho.value(&lat.node_sphere(node));
            }
        }

        let zero_pair = PairDerivs {
            d: 0.0,
            c_i: Vector2::zeros(),
            c_it: Matrix2::zeros(),
            c_ij: Matrix2::zeros(),
        };
        let state = S2State {
            u: ScalarField::zeros(n),
            target,
            pair: [vec![zero_pair; len], vec![zero_pair; len]],
            w: [vec![Matrix2::zeros(); len], vec![Matrix2::zeros(); len]],
            theta: ScalarField::zeros(n),
            theta_min: 0.0,
            theta_max: 0.0,
            eig_min: 0.0,
            eig_max: 0.0,
            sing_min: 0.0,
            t: 0.0,
            step_count: 0,
            dt_last: 0.0,
        };
        let mut flow = S2Flow {
            cost,
            grid,
            rho,
            rho_bar,
            jets,
            ln_rho_chart,
            rho_weight,
            state,
            prev_u: [vec![0.0; len], vec![0.0; len]],
            last_newton: NewtonStats::default(),
            run_eig_min: f64::INFINITY,
            run_sing_min: f64::INFINITY,
        };
        flow.refresh()?;
        Ok(flow)
    }

    /// Replaces the potential with samples of `f`, re-seeds the transport
    /// map, and rebuilds all derived fields.
    pub fn set_potential(&mut self, f: &dyn Fn(&SpherePoint) -> f64) -> Result<()> {
        for ci in 0..2 {
            let lat = &self.grid.charts[ci];
            for &node in &lat.compute_nodes {
                self.state.u.data[ci][node as usize] = f(&lat.node_sphere(node));
            }
            for &node in &lat.compute_nodes {
                self.state.target[ci][node as usize] =
                    transport::default_target_seed(self.cost, lat.node_pos(node));
            }
        }
        self.grid.sync(&mut self.state.u);
        self.run_eig_min = f64::INFINITY;
        self.run_sing_min = f64::INFINITY;
        self.refresh()
    }

    /// Re-solves `T` (warm-started), rebuilds `w` and `theta`, and updates
    /// the field extremes.  This is the full derived-state pass behind
    /// both construction and stepping (and behind snapshot restore).
    pub(crate) fn refresh(&mut self) -> Result<()> {
        let S2Flow {
            cost,
            grid,
            rho_bar,
            jets,
            ln_rho_chart,
            state,
            last_newton,
            run_eig_min,
            run_sing_min,
            ..
        } = self;
        let mut newton = NewtonStats::default();
        let mut theta_min = f64::INFINITY;
        let mut theta_max = f64::NEG_INFINITY;
        let mut eig_min = f64::INFINITY;
        let mut eig_max = f64::NEG_INFINITY;
        let mut sing_min = f64::INFINITY;

        for ci in 0..2 {
            let lat = &grid.charts[ci];
            let u = &state.u.data[ci];
            let theta = &mut state.theta.data[ci];
            for &node in &lat.compute_nodes {
                let k = node as usize;
                let grad = lat.grad(u, node);
                let sol = transport::solve_target(
                    *cost,
                    &jets[ci][k],
                    grad,
                    state.target[ci][k],
                    SING_GUARD,
                )?;
                newton.absorb(sol.iters);
                state.target[ci][k] = sol.target;
                state.pair[ci][k] = sol.pair;

                let w = lat.hess(u, node) + sol.pair.c_ij;
                state.w[ci][k] = w;
                let mid = 0.5 * (w[(0, 0)] + w[(1, 1)]);
                let rad = (0.25 * (w[(0, 0)] - w[(1, 1)]).powi(2) + w[(0, 1)].powi(2)).sqrt();
                let lo = mid - rad;
                if lo <= EIG_FLOOR {
                    return Err(Error::NonConvexState {
                        chart: lat.chart.name(),
                        node: k,
                        eig_min: lo,
                    });
                }
                eig_min = eig_min.min(lo);
                eig_max = eig_max.max(mid + rad);

                let det_w = w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)];
                theta[k] = det_w.ln() - ln_rho_chart[ci][k] + rho_bar.ln_chart(sol.target)
                    - sol.pair.c_it.determinant().abs().ln();

                if lat.owned[k] {
                    theta_min = theta_min.min(theta[k]);
                    theta_max = theta_max.max(theta[k]);
                    let dist = sol.pair.d.clamp(-1.0, 1.0).acos();
                    sing_min = sing_min.min(cost::sing_margin(*cost, dist));
                }
            }
        }

        state.theta_min = theta_min;
        state.theta_max = theta_max;
        state.eig_min = eig_min;
        state.eig_max = eig_max;
        state.sing_min = sing_min;
        *run_eig_min = run_eig_min.min(eig_min);
        *run_sing_min = run_sing_min.min(sing_min);
        *last_newton = newton;
        Ok(())
    }

    /// Oscillation `max theta - min theta` over owned nodes: the decaying
    /// quantity the run's stopping rule watches.
    pub fn oscillation(&self) -> f64 {
        self.state.theta_max - self.state.theta_min
    }

    /// Discrete mass-transport balance: `integral of e^theta rho - 1`.
    /// Zero (to rounding) exactly when `theta` is consistent with a map
    /// pushing `rho` forward to `rho_bar`.
    pub fn conservation_residual(&self) -> f64 {
        let mut total = 0.0;
        for ci in 0..2 {
            let lat = &self.grid.charts[ci];
            let theta = &self.state.theta.data[ci];
            for &node in &lat.owned_nodes {
                let k = node as usize;
                total += self.rho_weight[ci][k] * theta[k].exp();
            }
        }
        total - 1.0
    }

    /// Stability-limited time step `sigma h^2 / (2 max trace(w^{-1}))`,
    /// the explicit-Euler bound for the flow's principal part.
    pub fn stable_dt(&self, sigma: f64) -> f64 {
        let mut max_tr_inv: f64 = 0.0;
        for ci in 0..2 {
            let lat = &self.grid.charts[ci];
            for &node in &lat.compute_nodes {
                let w = &self.state.w[ci][node as usize];
                let det = w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)];
                max_tr_inv = max_tr_inv.max((w[(0, 0)] + w[(1, 1)]) / det);
            }
        }
        sigma * self.grid.h * self.grid.h / (2.0 * max_tr_inv)
    }

    /// One Euler update with the given `dt`, with no backtracking: the
    /// caller owns failure policy.  On error the potential has already
    /// been advanced; use [`S2Flow::step`] for the self-repairing variant.
    pub fn step_with_dt(&mut self, dt: f64) -> Result<()> {
        for ci in 0..2 {
            let lat = &self.grid.charts[ci];
            let theta = &self.state.theta.data[ci];
            let u = &mut self.state.u.data[ci];
            for &node in &lat.compute_nodes {
                let k = node as usize;
                u[k] += dt * theta[k];
            }
        }
        self.grid.sync(&mut self.state.u);
        self.refresh()?;
        self.state.t += dt;
        self.state.step_count += 1;
        self.state.dt_last = dt;
        Ok(())
    }

    /// One flow step at safety factor `sigma`: explicit Euler with the
    /// stability-limited `dt`, halving `dt` (up to [`MAX_HALVINGS`] times)
    /// whenever the updated state loses local convexity or a contact
    /// solve fails.  Returns the `dt` actually taken.
    pub fn step(&mut self, sigma: f64) -> Result<f64> {
        let mut dt = self.stable_dt(sigma);
        for ci in 0..2 {
            self.prev_u[ci].copy_from_slice(&self.state.u.data[ci]);
        }
        let mut halvings = 0usize;
        loop {
            match self.step_with_dt(dt) {
                Ok(()) => return Ok(dt),
                Err(err) => {
                    if halvings >= MAX_HALVINGS {
                        return Err(Error::StepFailed {
                            halvings,
                            source: Box::new(err),
                        });
                    }
                    for ci in 0..2 {
                        self.state.u.data[ci].copy_from_slice(&self.prev_u[ci]);
                    }
                    self.grid.sync(&mut self.state.u);
                    dt *= 0.5;
                    halvings += 1;
                }
            }
        }
    }

    /// Runs the flow until the oscillation of `theta` reaches `tol`, the
    /// step budget runs out, or a step fails outright.  Diagnostics are
    /// recorded at step 0, at the cadence, and at the final step.
    pub fn run(&mut self, params: &RunParams) -> RunOutcome {
        let cadence = params.cadence.max(1);
        let mut records = vec![diagnostics::s2_monitors(self)];
        let mut recorded_at = self.state.step_count;
        let termination = loop {
            if self.oscillation() <= params.tol {
                break Termination::Converged;
            }
            if self.state.step_count >= params.max_steps {
                break Termination::MaxSteps;
            }
            match self.step(params.sigma) {
                Ok(_) => {
                    if self.state.step_count % cadence == 0 {
                        records.push(diagnostics::s2_monitors(self));
                        recorded_at = self.state.step_count;
                    }
                }
                Err(err) => {
                    let halvings = match &err {
                        Error::StepFailed { halvings, .. } => *halvings,
                        _ => 0,
                    };
                    break Termination::StepFailed {
                        halvings,
                        message: err.to_string(),
                    };
                }
            }
        };
        if recorded_at != self.state.step_count {
            records.push(diagnostics::s2_monitors(self));
        }
        RunOutcome {
            records,
            termination,
        }
    }
}

/// Mutable per-node fields of the circle flow.
#[derive(Clone, Debug)]
pub struct S1State {
    pub u: Vec<f64>,
    /// Target angles in `[0, 2 pi)`.
    pub target: Vec<f64>,
    pub pair: Vec<PairDerivs1>,
    /// Scalar `w = u'' + c_phiphi(phi, T(phi))`.
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub sing_min: f64,
    pub t: f64,
    pub step_count: u64,
    pub dt_last: f64,
}

/// The parabolic transport flow on the circle.
#[derive(Clone, Debug)]
pub struct S1Flow {
    pub cost: CostId,
    pub grid: CircleGrid,
    pub rho: CircleDensity,
    pub rho_bar: CircleDensity,
    /// Quadrature weight times source density per node.
    rho_weight: Vec<f64>,
    pub state: S1State,
    prev_u: Vec<f64>,
    pub last_newton: NewtonStats,
    pub run_eig_min: f64,
    pub run_sing_min: f64,
}

impl S1Flow {
    pub fn new(
        cost: CostId,
        n: usize,
        rho_shape: CircleShape,
        rho_bar_shape: CircleShape,
    ) -> Result<Self> {
        let grid = CircleGrid::new(n)?;
        let rho = CircleDensity::new(rho_shape, |f| grid.integrate_fn(f))?;
        let rho_bar = CircleDensity::new(rho_bar_shape, |f| grid.integrate_fn(f))?;
        let rho_weight = (0..n).map(|k| grid.h * rho.value(grid.angle(k))).collect();
        let target = (0..n)
            .map(|k| default_target_seed_s1(cost, grid.angle(k)))
            .collect();
        let zero_pair = PairDerivs1 {
            d: 0.0,
            c_i: 0.0,
            c_it: 0.0,
            c_ij: 0.0,
        };
        let state = S1State {
            u: vec![0.0; n],
            target,
            pair: vec![zero_pair; n],
            w: vec![0.0; n],
            theta: vec![0.0; n],
            theta_min: 0.0,
            theta_max: 0.0,
            eig_min: 0.0,
            eig_max: 0.0,
            sing_min: 0.0,
            t: 0.0,
            step_count: 0,
            dt_last: 0.0,
        };
        let mut flow = S1Flow {
            cost,
            grid,
            rho,
            rho_bar,
            rho_weight,
            state,
            prev_u: vec![0.0; n],
            last_newton: NewtonStats::default(),
            run_eig_min: f64::INFINITY,
            run_sing_min: f64::INFINITY,
        };
        flow.refresh()?;
        Ok(flow)
    }

    /// Replaces the potential with samples of `f`, re-seeds the map, and
    /// rebuilds derived fields.
    pub fn set_potential(&mut self, f: &dyn Fn(f64) -> f64) -> Result<()> {
        for k in 0..self.grid.n {
            self.state.u[k] = f(self.grid.angle(k));
            self.state.target[k] = default_target_seed_s1(self.cost, self.grid.angle(k));
        }
        self.run_eig_min = f64::INFINITY;
        self.run_sing_min = f64::INFINITY;
        self.refresh()
    }

    pub(crate) fn refresh(&mut self) -> Result<()> {
        let mut newton = NewtonStats::default();
        let mut theta_min = f64::INFINITY;
        let mut theta_max = f64::NEG_INFINITY;
        let mut eig_min = f64::INFINITY;
        let mut eig_max = f64::NEG_INFINITY;
        let mut sing_min = f64::INFINITY;
        for k in 0..self.grid.n {
            let phi = self.grid.angle(k);
            let du = self.grid.grad(&self.state.u, k);
            let sol =
                transport::solve_target_s1(self.cost, phi, du, self.state.target[k], SING_GUARD)?;
            newton.absorb(sol.iters);
            self.state.target[k] = sol.target;
            self.state.pair[k] = sol.pair;

            let w = self.grid.second(&self.state.u, k) + sol.pair.c_ij;
            self.state.w[k] = w;
            if w <= EIG_FLOOR {
                return Err(Error::NonConvexState {
                    chart: "s1",
                    node: k,
                    eig_min: w,
                });
            }
            eig_min = eig_min.min(w);
            eig_max = eig_max.max(w);

            let th = w.ln() - self.rho.ln_value(phi) + self.rho_bar.ln_value(sol.target)
                - sol.pair.c_it.abs().ln();
            self.state.theta[k] = th;
            theta_min = theta_min.min(th);
            theta_max = theta_max.max(th);
            let dist = crate::geometry::circle_distance(phi, sol.target);
            sing_min = sing_min.min(cost::sing_margin(self.cost, dist));
        }
        self.state.theta_min = theta_min;
        self.state.theta_max = theta_max;
        self.state.eig_min = eig_min;
        self.state.eig_max = eig_max;
        self.state.sing_min = sing_min;
        self.run_eig_min = self.run_eig_min.min(eig_min);
        self.run_sing_min = self.run_sing_min.min(sing_min);
        self.last_newton = newton;
        Ok(())
    }

    pub fn oscillation(&self) -> f64 {
        self.state.theta_max - self.state.theta_min
    }

    pub fn conservation_residual(&self) -> f64 {
        let total: f64 = (0..self.grid.n)
            .map(|k| self.rho_weight[k] * self.state.theta[k].exp())
            .sum();
        total - 1.0
    }

    /// Circle analogue of the stability bound: `w` is one-dimensional, so
    /// `trace(w^{-1}) = 1/w`.
    pub fn stable_dt(&self, sigma: f64) -> f64 {
        let max_inv = self
            .state
            .w
            .iter()
            .fold(0.0f64, |acc, &w| acc.max(1.0 / w));
        sigma * self.grid.h * self.grid.h / (2.0 * max_inv)
    }

    pub fn step_with_dt(&mut self, dt: f64) -> Result<()> {
        for k in 0..self.grid.n {
            self.state.u[k] += dt * self.state.theta[k];
        }
        self.refresh()?;
        self.state.t += dt;
        self.state.step_count += 1;
        self.state.dt_last = dt;
        Ok(())
    }

    pub fn step(&mut self, sigma: f64) -> Result<f64> {
        let mut dt = self.stable_dt(sigma);
        self.prev_u.copy_from_slice(&self.state.u);
        let mut halvings = 0usize;
        loop {
            match self.step_with_dt(dt) {
                Ok(()) => return Ok(dt),
                Err(err) => {
                    if halvings >= MAX_HALVINGS {
                        return Err(Error::StepFailed {
                            halvings,
                            source: Box::new(err),
                        });
                    }
                    self.state.u.copy_from_slice(&self.prev_u);
                    dt *= 0.5;
                    halvings += 1;
                }
            }
        }
    }

    pub fn run(&mut self, params: &RunParams) -> RunOutcome {
        let cadence = params.cadence.max(1);
        let mut records = vec![diagnostics::s1_monitors(self)];
        let mut recorded_at = self.state.step_count;
        let termination = loop {
            if self.oscillation() <= params.tol {
                break Termination::Converged;
            }
            if self.state.step_count >= params.max_steps {
                break Termination::MaxSteps;
            }
            match self.step(params.sigma) {
                Ok(_) => {
                    if self.state.step_count % cadence == 0 {
                        records.push(diagnostics::s1_monitors(self));
                        recorded_at = self.state.step_count;
                    }
                }
                Err(err) => {
                    let halvings = match &err {
                        Error::StepFailed { halvings, .. } => *halvings,
                        _ => 0,
                    };
                    break Termination::StepFailed {
                        halvings,
                        message: err.to_string(),
                    };
                }
            }
        };
        if recorded_at != self.state.step_count {
            records.push(diagnostics::s1_monitors(self));
        }
        RunOutcome {
            records,
            termination,
        }
    }
}

/// Closed-form initial target angle: the point itself for the squared
/// distance, the antipodal angle for the reflector cost.
pub fn default_target_seed_s1(cost: CostId, phi: f64) -> f64 {
    match cost {
        CostId::SquaredDistance => phi,
        CostId::ReflectorAntenna => wrap_angle(phi + std::f64::consts::PI),
    }
}
