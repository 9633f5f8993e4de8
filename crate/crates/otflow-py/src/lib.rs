//! Python bindings for the solver: cost/geometry evaluation, MTW
//! sampling, the circle rearrangement oracle, and full flow runs.
//!
//! Build with `cargo build -p otflow-py --release` and import the
//! produced `libotflow_py.so` as `otflow_py` (the repository's
//! `python/smoke_test.py` automates the rename-and-import dance).

use nalgebra::Vector3;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use otflow::config::FlowConfig;
use otflow::cost::{self, CostId};
use otflow::density::CircleDensity;
use otflow::flow::{RunParams, S1Flow, S2Flow};
use otflow::geometry::{self, SpherePoint};
use otflow::grid::CircleGrid;
use otflow::mtw;
use otflow::oracle;
use otflow::output::{build_manifest, termination_name};

fn err_py(e: otflow::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Accepts any nonzero 3-vector and normalizes it onto the sphere.
fn pt(v: (f64, f64, f64)) -> PyResult<SpherePoint> {
    let v = Vector3::new(v.0, v.1, v.2);
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(PyValueError::new_err(
            "sphere point must be a finite nonzero 3-vector",
        ));
    }
    SpherePoint::new(v / n).map_err(err_py)
}

fn cost_id(name: &str) -> PyResult<CostId> {
    CostId::parse(name).map_err(err_py)
}

/// Crate version string.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Geodesic (great-circle) distance between two sphere points given as
/// 3-vectors (normalized internally).
#[pyfunction]
fn geodesic_distance(x: (f64, f64, f64), y: (f64, f64, f64)) -> PyResult<f64> {
    Ok(geometry::geodesic_distance(&pt(x)?, &pt(y)?))
}

/// Cost value `c(x, xbar)` for `"squared_distance"` or
/// `"reflector_antenna"`.
#[pyfunction]
fn eval_cost(cost: &str, x: (f64, f64, f64), y: (f64, f64, f64)) -> PyResult<f64> {
    cost::eval_cost(cost_id(cost)?, &pt(x)?, &pt(y)?).map_err(err_py)
}

/// Distance of the pair `(x, xbar)` to the cost's singular set: the cut
/// locus for the squared distance, the diagonal for the reflector cost.
#[pyfunction]
fn sing_distance(cost: &str, x: (f64, f64, f64), y: (f64, f64, f64)) -> PyResult<f64> {
    let d = geometry::geodesic_distance(&pt(x)?, &pt(y)?);
    Ok(cost::sing_margin(cost_id(cost)?, d))
}

/// Result of a randomized search for the minimum of the normalized MTW
/// tensor contraction.
#[pyclass(frozen)]
struct MtwReport {
    /// Smallest normalized tensor value seen.
    #[pyo3(get)]
    min_normalized: f64,
    /// Sphere coordinates of the minimizing source point.
    #[pyo3(get)]
    x: (f64, f64, f64),
    /// Sphere coordinates of the minimizing target point.
    #[pyo3(get)]
    xbar: (f64, f64, f64),
    /// Number of samples taken.
    #[pyo3(get)]
    samples: usize,
}

#[pymethods]
impl MtwReport {
    fn __repr__(&self) -> String {
        format!(
            "MtwReport(min_normalized={}, samples={})",
            self.min_normalized, self.samples
        )
    }
}

/// Samples the normalized MTW tensor over random point/direction pairs
/// with the requested margin from the cost singularity and reports the
/// minimum; positivity of that minimum is the curvature-type condition
/// the solver's convergence theory rests on.
#[pyfunction(signature = (cost, samples = 10_000, margin = 0.3, seed = 42))]
fn mtw_delta(cost: &str, samples: usize, margin: f64, seed: u64) -> PyResult<MtwReport> {
    let report = mtw::sample_mtw_delta(cost_id(cost)?, samples, margin, seed).map_err(err_py)?;
    let xc = report.argmin.x.coords();
    let bc = report.argmin.xbar.coords();
    Ok(MtwReport {
        min_normalized: report.min_normalized,
        x: (xc.x, xc.y, xc.z),
        xbar: (bc.x, bc.y, bc.z),
        samples: report.samples,
    })
}

/// Exact one-dimensional transport oracle: the monotone rearrangement
/// between two circle densities given as spec strings (`"uniform"`,
/// `"cosine(amp=..)"`, `"bump(kappa=.., mu=.., amp=..)"`).  Returns
/// `(map, shift, cost)`: target angles for the `n` equispaced sources,
/// the optimal rotation of the matching, and its transport cost.
#[pyfunction(signature = (rho, rho_bar, n = 256, shifts = 256))]
fn circle_oracle(
    rho: &str,
    rho_bar: &str,
    n: usize,
    shifts: usize,
) -> PyResult<(Vec<f64>, f64, f64)> {
    let grid = CircleGrid::new(n).map_err(err_py)?;
    let quad = |f: &dyn Fn(f64) -> f64| grid.integrate_fn(f);
    let rho = CircleDensity::new(
        otflow::density::parse_circle_shape(rho).map_err(err_py)?,
        quad,
    )
    .map_err(err_py)?;
    let rho_bar = CircleDensity::new(
        otflow::density::parse_circle_shape(rho_bar).map_err(err_py)?,
        quad,
    )
    .map_err(err_py)?;
    let res = oracle::circle_rearrangement(&rho, &rho_bar, n, shifts).map_err(err_py)?;
    Ok((res.map, res.shift, res.cost))
}

/// Summary of a finished flow run, mirroring the CLI's manifest.
#[pyclass(frozen)]
struct FlowResult {
    /// `"Converged"`, `"MaxSteps"`, or `"StepFailed"` (the same names
    /// the CLI manifest uses).
    #[pyo3(get)]
    termination: String,
    #[pyo3(get)]
    steps: u64,
    /// Final oscillation `max theta - min theta`.
    #[pyo3(get)]
    final_h: f64,
    /// Fitted exponential decay rate of the oscillation, when the run
    /// produced enough decaying samples to fit one.
    #[pyo3(get)]
    beta: Option<f64>,
    #[pyo3(get)]
    r_squared: Option<f64>,
    /// Smallest eigenvalue of `w` seen along the whole run.
    #[pyo3(get)]
    eig_min: f64,
    /// Smallest distance to the cost singularity along the whole run.
    #[pyo3(get)]
    sing_min: f64,
    /// Recorded times and oscillation values (the decay series).
    #[pyo3(get)]
    series_t: Vec<f64>,
    #[pyo3(get)]
    series_h: Vec<f64>,
}

#[pymethods]
impl FlowResult {
    fn __repr__(&self) -> String {
        format!(
            "FlowResult(termination='{}', steps={}, final_h={:.3e}, beta={:?})",
            self.termination, self.steps, self.final_h, self.beta
        )
    }
}

/// Runs the parabolic flow described by a TOML config string (the same
/// format the CLI accepts) and returns the run summary.
#[pyfunction(signature = (config_toml, max_steps = None, seed = None))]
fn run_flow(config_toml: &str, max_steps: Option<u64>, seed: Option<u64>) -> PyResult<FlowResult> {
    let mut cfg = FlowConfig::parse_str(config_toml).map_err(err_py)?;
    if let Some(m) = max_steps {
        cfg.max_steps = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let params = RunParams {
        sigma: cfg.sigma,
        tol: cfg.tol,
        max_steps: cfg.max_steps,
        cadence: cfg.cadence,
    };
    let (outcome, eig_min, sing_min) = match cfg.manifold {
        otflow::config::Manifold::Sphere => {
            let mut flow = S2Flow::new(
                cfg.cost,
                cfg.grid_n,
                cfg.sphere_rho().map_err(err_py)?,
                cfg.sphere_rho_bar().map_err(err_py)?,
            )
            .map_err(err_py)?;
            if let otflow::config::InitialPotential::Constant(v) = cfg.u0 {
                flow.set_potential(&|_| v).map_err(err_py)?;
            }
            let outcome = flow.run(&params);
            (outcome, flow.run_eig_min, flow.run_sing_min)
        }
        otflow::config::Manifold::Circle => {
            let mut flow = S1Flow::new(
                cfg.cost,
                cfg.grid_n,
                cfg.circle_rho().map_err(err_py)?,
                cfg.circle_rho_bar().map_err(err_py)?,
            )
            .map_err(err_py)?;
            if let otflow::config::InitialPotential::Constant(v) = cfg.u0 {
                flow.set_potential(&|_| v).map_err(err_py)?;
            }
            let outcome = flow.run(&params);
            (outcome, flow.run_eig_min, flow.run_sing_min)
        }
    };
    let manifest = build_manifest(&cfg, &outcome, eig_min, sing_min, 0, 0);
    Ok(FlowResult {
        termination: termination_name(&outcome.termination).to_string(),
        steps: manifest.steps,
        final_h: manifest.final_h,
        beta: manifest.beta,
        r_squared: manifest.r_squared,
        eig_min: manifest.eig_min,
        sing_min: manifest.sing_min,
        series_t: outcome.records.iter().map(|r| r.t).collect(),
        series_h: outcome.records.iter().map(|r| r.h_osc).collect(),
    })
}

/// Optimal-transport parabolic flow solver on the circle and the
/// sphere: cost evaluation, MTW tensor sampling, the one-dimensional
/// rearrangement oracle, and full flow runs.
#[pymodule]
fn otflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_distance, m)?)?;
    m.add_function(wrap_pyfunction!(eval_cost, m)?)?;
    m.add_function(wrap_pyfunction!(sing_distance, m)?)?;
    m.add_function(wrap_pyfunction!(mtw_delta, m)?)?;
    m.add_function(wrap_pyfunction!(circle_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_flow, m)?)?;
    m.add_class::<MtwReport>()?;
    m.add_class::<FlowResult>()?;
    Ok(())
}
