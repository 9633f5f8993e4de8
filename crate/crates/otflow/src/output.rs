//! Run persistence: the diagnostics time series as CSV, final-state
//! snapshots as JSON, and a run manifest.
//!
//! All numeric output uses shortest round-trip formatting, so rereading
//! a file reproduces the exact binary values and reruns of a
//! deterministic run produce byte-identical series and snapshots.  Grid
//! arrays are stored flat in node order, which is column-major over the
//! lattice: the first chart coordinate index varies fastest.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::FlowConfig;
use crate::diagnostics::{fit_decay, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::flow::{RunOutcome, S1Flow, S2Flow, Termination};
use crate::geometry::{ChartId, ChartPos};

pub const SERIES_FILE: &str = "series.csv";
pub const STATE_FILE: &str = "final_state.json";
pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// Time series.
// ---------------------------------------------------------------------------

/// Renders diagnostics records as CSV with a header row.
pub fn series_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::from(
        "step,t,h_osc,theta_min,theta_max,eig_min,eig_max,sing_min,conservation,dt,newton_total,newton_max\n",
    );
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.t,
            r.h_osc,
            r.theta_min,
            r.theta_max,
            r.eig_min,
            r.eig_max,
            r.sing_min,
            r.conservation,
            r.dt,
            r.newton_total,
            r.newton_max,
        )
        .expect("writing to a String cannot fail");
    }
    out
}

// ---------------------------------------------------------------------------
// Manifest.
// ---------------------------------------------------------------------------

/// Summary of a finished run, written alongside the series and snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// The fully defaulted configuration, echoed as TOML text.
    pub config_toml: String,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// One of `Converged`, `MaxSteps`, `StepFailed`.
    pub termination: String,
    pub steps: u64,
    /// Oscillation of `theta` at the last recorded step.
    pub final_h: f64,
    /// Fitted exponential decay rate of the oscillation, if the series
    /// supports a fit.
    pub beta: Option<f64>,
    pub r_squared: Option<f64>,
    /// Smallest eigenvalue of `w` seen anywhere along the run.
    pub eig_min: f64,
    /// Smallest distance to the cost singularity seen anywhere along the
    /// run (the stay-away margin).
    pub sing_min: f64,
}

pub fn termination_name(t: &Termination) -> &'static str {
    match t {
        Termination::Converged => "Converged",
        Termination::MaxSteps => "MaxSteps",
        Termination::StepFailed { .. } => "StepFailed",
    }
}

/// Milliseconds since the Unix epoch, for manifest timestamps.
pub fn unix_ms_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn build_manifest(
    config: &FlowConfig,
    outcome: &RunOutcome,
    run_eig_min: f64,
    run_sing_min: f64,
    started_unix_ms: u64,
    finished_unix_ms: u64,
) -> RunManifest {
    let series: Vec<(f64, f64)> = outcome.records.iter().map(|r| (r.t, r.h_osc)).collect();
    let fit = fit_decay(&series).ok();
    let last = outcome.records.last();
    RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_toml: config.to_toml(),
        seed: config.seed,
        started_unix_ms,
        finished_unix_ms,
        termination: termination_name(&outcome.termination).to_string(),
        steps: last.map_or(0, |r| r.step),
        final_h: last.map_or(f64::NAN, |r| r.h_osc),
        beta: fit.map(|f| f.beta),
        r_squared: fit.map(|f| f.r_squared),
        eig_min: run_eig_min,
        sing_min: run_sing_min,
    }
}

// ---------------------------------------------------------------------------
// State snapshots.
// ---------------------------------------------------------------------------

/// One chart's fields, flat in node order (column-major: the first
/// chart coordinate index varies fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSnapshot {
    /// Chart id, `"A"` or `"B"`.
    pub chart: String,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    /// Chart owning each node's target: 0 for `A`, 1 for `B`.
    pub target_chart: Vec<u8>,
    pub target_a: Vec<f64>,
    pub target_b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct S2Snapshot {
    /// Always `"s2"`.
    pub manifold: String,
    pub cost: String,
    /// Nodes per chart axis.
    pub grid_n: usize,
    /// Lattice spacing (same for both charts).
    pub h: f64,
    pub t: f64,
    pub step_count: u64,
    pub charts: Vec<ChartSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct S1Snapshot {
    /// Always `"s1"`.
    pub manifold: String,
    pub cost: String,
    pub grid_n: usize,
    pub h: f64,
    pub t: f64,
    pub step_count: u64,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    /// Target angles in `[0, 2 pi)`.
    pub target: Vec<f64>,
}

pub fn snapshot_s2(flow: &S2Flow) -> S2Snapshot {
    let mut charts = Vec::with_capacity(2);
    for ci in 0..2 {
        let lat = &flow.grid.charts[ci];
        let total = lat.n * lat.n;
        let mut target_chart = Vec::with_capacity(total);
        let mut target_a = Vec::with_capacity(total);
        let mut target_b = Vec::with_capacity(total);
        for k in 0..total {
            let t = flow.state.target[ci][k];
            target_chart.push(match t.chart {
                ChartId::A => 0,
                ChartId::B => 1,
            });
            target_a.push(t.a);
            target_b.push(t.b);
        }
        charts.push(ChartSnapshot {
            chart: lat.chart.name().to_string(),
            u: flow.state.u.data[ci].clone(),
            theta: flow.state.theta.data[ci].clone(),
            target_chart,
            target_a,
            target_b,
        });
    }
    S2Snapshot {
        manifold: "s2".to_string(),
        cost: flow.cost.name().to_string(),
        grid_n: flow.grid.charts[0].n,
        h: flow.grid.charts[0].h,
        t: flow.state.t,
        step_count: flow.state.step_count,
        charts,
    }
}

pub fn snapshot_s1(flow: &S1Flow) -> S1Snapshot {
    S1Snapshot {
        manifold: "s1".to_string(),
        cost: flow.cost.name().to_string(),
        grid_n: flow.grid.n,
        h: flow.grid.h,
        t: flow.state.t,
        step_count: flow.state.step_count,
        u: flow.state.u.clone(),
        theta: flow.state.theta.clone(),
        target: flow.state.target.clone(),
    }
}

/// Loads a snapshot into a compatible flow (same cost and resolution):
/// restores `u`, warm-starts the contact solver from the stored targets,
/// and rebuilds all derived fields.
pub fn restore_s2(flow: &mut S2Flow, snap: &S2Snapshot) -> Result<()> {
    if snap.manifold != "s2" {
        return Err(Error::config(
            "snapshot",
            format!("expected an s2 snapshot, found `{}`", snap.manifold),
        ));
    }
    if snap.cost != flow.cost.name() {
        return Err(Error::config(
            "snapshot",
            format!("cost mismatch: snapshot `{}`, flow `{}`", snap.cost, flow.cost.name()),
        ));
    }
    let n = flow.grid.charts[0].n;
    if snap.grid_n != n || snap.charts.len() != 2 {
        return Err(Error::config(
            "snapshot",
            format!("grid mismatch: snapshot n = {}, flow n = {n}", snap.grid_n),
        ));
    }
    let total = n * n;
    for (ci, cs) in snap.charts.iter().enumerate() {
        if cs.u.len() != total
            || cs.target_chart.len() != total
            || cs.target_a.len() != total
            || cs.target_b.len() != total
        {
            return Err(Error::config("snapshot", "field length does not match the grid"));
        }
        flow.state.u.data[ci].copy_from_slice(&cs.u);
        for k in 0..total {
            let chart = if cs.target_chart[k] == 0 { ChartId::A } else { ChartId::B };
            flow.state.target[ci][k] = ChartPos::new(chart, cs.target_a[k], cs.target_b[k]);
        }
    }
    flow.state.t = snap.t;
    flow.state.step_count = snap.step_count;
    flow.run_eig_min = f64::INFINITY;
    flow.run_sing_min = f64::INFINITY;
    flow.refresh()
}

pub fn restore_s1(flow: &mut S1Flow, snap: &S1Snapshot) -> Result<()> {
    if snap.manifold != "s1" {
        return Err(Error::config(
            "snapshot",
            format!("expected an s1 snapshot, found `{}`", snap.manifold),
        ));
    }
    if snap.cost != flow.cost.name() {
        return Err(Error::config(
            "snapshot",
            format!("cost mismatch: snapshot `{}`, flow `{}`", snap.cost, flow.cost.name()),
        ));
    }
    let n = flow.grid.n;
    if snap.grid_n != n || snap.u.len() != n || snap.target.len() != n {
        return Err(Error::config(
            "snapshot",
            format!("grid mismatch: snapshot n = {}, flow n = {n}", snap.grid_n),
        ));
    }
    flow.state.u.copy_from_slice(&snap.u);
    flow.state.target.copy_from_slice(&snap.target);
    flow.state.t = snap.t;
    flow.state.step_count = snap.step_count;
    flow.run_eig_min = f64::INFINITY;
    flow.run_sing_min = f64::INFINITY;
    flow.refresh()
}

// ---------------------------------------------------------------------------
// File emission.
// ---------------------------------------------------------------------------

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_snapshot_s2(path: &Path) -> Result<S2Snapshot> {
    read_json(path)
}

pub fn read_snapshot_s1(path: &Path) -> Result<S1Snapshot> {
    read_json(path)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    read_json(path)
}

fn emit_common(
    outdir: &Path,
    config: &FlowConfig,
    outcome: &RunOutcome,
    run_eig_min: f64,
    run_sing_min: f64,
    started_unix_ms: u64,
) -> Result<RunManifest> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir.display().to_string(), e))?;
    write_text(&outdir.join(SERIES_FILE), &series_csv(&outcome.records))?;
    let manifest = build_manifest(
        config,
        outcome,
        run_eig_min,
        run_sing_min,
        started_unix_ms,
        unix_ms_now(),
    );
    write_json(&outdir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Writes `series.csv`, `final_state.json`, and `manifest.json` for a
/// sphere run and returns the manifest.
pub fn emit_outputs_s2(
    outdir: &Path,
    config: &FlowConfig,
    outcome: &RunOutcome,
    flow: &S2Flow,
    started_unix_ms: u64,
) -> Result<RunManifest> {
    let manifest = emit_common(
        outdir,
        config,
        outcome,
        flow.run_eig_min,
        flow.run_sing_min,
        started_unix_ms,
    )?;
    write_json(&outdir.join(STATE_FILE), &snapshot_s2(flow))?;
    Ok(manifest)
}

/// Circle counterpart of [`emit_outputs_s2`].
pub fn emit_outputs_s1(
    outdir: &Path,
    config: &FlowConfig,
    outcome: &RunOutcome,
    flow: &S1Flow,
    started_unix_ms: u64,
) -> Result<RunManifest> {
    let manifest = emit_common(
        outdir,
        config,
        outcome,
        flow.run_eig_min,
        flow.run_sing_min,
        started_unix_ms,
    )?;
    write_json(&outdir.join(STATE_FILE), &snapshot_s1(flow))?;
    Ok(manifest)
}
