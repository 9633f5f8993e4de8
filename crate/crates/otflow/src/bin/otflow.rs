//! Command-line driver for the transport flow.
//!
//! Exit codes: 0 = converged (or self-test pass), 2 = step budget ran
//! out before convergence, 3 = configuration error, 4 = a step failed
//! through all retries.  Other failures (I/O while writing outputs) use
//! the generic code 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use otflow::config::{parse_config, InitialPotential, Manifold};
use otflow::density::CircleDensity;
use otflow::error::Error;
use otflow::flow::{RunOutcome, RunParams, S1Flow, S2Flow, Termination};
use otflow::grid::CircleGrid;
use otflow::output::{self, RunManifest};

#[derive(Parser)]
#[command(
    name = "otflow",
    version,
    about = "Parabolic optimal-transport flow on the circle and the sphere"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow described by a config file and write outputs.
    Run {
        /// Path to a TOML run configuration.
        config: PathBuf,
        /// Directory for series.csv, final_state.json, and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Pin the serial reduction order.  This build is single-threaded,
        /// so runs are deterministic either way; the flag is accepted for
        /// interface stability.
        #[arg(long)]
        deterministic: bool,
        /// Override the config's seed (recorded in the manifest).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's step budget.
        #[arg(long = "max-steps")]
        max_steps: Option<u64>,
    },
    /// Sample the cost-curvature tensor and report the minimum normalized
    /// value over admissible vector/covector pairs.
    MtwSample {
        /// Path to a TOML run configuration (provides cost and seed).
        config: PathBuf,
        /// Number of random pairs to draw.
        #[arg(long)]
        samples: usize,
        /// Minimum distance of sampled pairs from the cost singularity.
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
    },
    /// Print the independent monotone-rearrangement map for a circle
    /// configuration as CSV.
    OracleCircle {
        /// Path to a TOML run configuration with manifold = "s1".
        config: PathBuf,
    },
    /// Run the built-in invariant suite.
    Check {
        /// Execute the fast self-test battery.
        #[arg(long = "self-test")]
        self_test: bool,
    },
}

fn main() -> ExitCode {
    // Die quietly on a closed stdout (`otflow oracle-circle | head`)
    // instead of panicking on the broken pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            // Bad invocation is a configuration problem.
            return ExitCode::from(3);
        }
    };

    let result = match cli.command {
        Command::Run {
            config,
            out,
            deterministic,
            seed,
            max_steps,
        } => cmd_run(&config, &out, deterministic, seed, max_steps),
        Command::MtwSample {
            config,
            samples,
            margin,
        } => cmd_mtw_sample(&config, samples, margin),
        Command::OracleCircle { config } => cmd_oracle_circle(&config),
        Command::Check { self_test } => cmd_check(self_test),
    };

    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::ConfigError { .. } => 3,
                Error::StepFailed { .. } => 4,
                _ => 1,
            })
        }
    }
}

fn exit_for_termination(t: &Termination) -> u8 {
    match t {
        Termination::Converged => 0,
        Termination::MaxSteps => 2,
        Termination::StepFailed { .. } => 4,
    }
}

fn print_summary(manifest: &RunManifest, outcome: &RunOutcome, outdir: &std::path::Path) {
    println!("termination: {}", manifest.termination);
    if let Termination::StepFailed { halvings, message } = &outcome.termination {
        println!("step failure after {halvings} dt halvings: {message}");
    }
    println!("steps: {}", manifest.steps);
    println!("final H (theta oscillation): {:.6e}", manifest.final_h);
    if let (Some(beta), Some(r2)) = (manifest.beta, manifest.r_squared) {
        println!("fitted decay: beta = {beta:.6}, fit quality = {r2:.6}");
    }
    println!("run minima: eig(w) = {:.6e}, singularity distance = {:.6}", manifest.eig_min, manifest.sing_min);
    println!("outputs: {}", outdir.display());
}

fn cmd_run(
    config_path: &std::path::Path,
    out: &std::path::Path,
    _deterministic: bool,
    seed: Option<u64>,
    max_steps: Option<u64>,
) -> Result<u8, Error> {
    let mut cfg = parse_config(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = max_steps {
        cfg.max_steps = m;
    }
    let params = RunParams {
        sigma: cfg.sigma,
        tol: cfg.tol,
        max_steps: cfg.max_steps,
        cadence: cfg.cadence,
    };
    eprintln!(
        "running {} flow: cost = {}, grid n = {}, rho = {}, rho_bar = {}",
        cfg.manifold.name(),
        cfg.cost.name(),
        cfg.grid_n,
        cfg.rho,
        cfg.rho_bar,
    );
    let started = output::unix_ms_now();
    match cfg.manifold {
        Manifold::Sphere => {
            let mut flow =
                S2Flow::new(cfg.cost, cfg.grid_n, cfg.sphere_rho()?, cfg.sphere_rho_bar()?)?;
            if let InitialPotential::Constant(v) = cfg.u0 {
                flow.set_potential(&|_| v)?;
            }
            let outcome = flow.run(&params);
            let manifest = output::emit_outputs_s2(out, &cfg, &outcome, &flow, started)?;
            print_summary(&manifest, &outcome, out);
            Ok(exit_for_termination(&outcome.termination))
        }
        Manifold::Circle => {
            let mut flow =
                S1Flow::new(cfg.cost, cfg.grid_n, cfg.circle_rho()?, cfg.circle_rho_bar()?)?;
            if let InitialPotential::Constant(v) = cfg.u0 {
                flow.set_potential(&|_| v)?;
            }
            let outcome = flow.run(&params);
            let manifest = output::emit_outputs_s1(out, &cfg, &outcome, &flow, started)?;
            print_summary(&manifest, &outcome, out);
            Ok(exit_for_termination(&outcome.termination))
        }
    }
}

fn cmd_mtw_sample(config_path: &std::path::Path, samples: usize, margin: f64) -> Result<u8, Error> {
    let cfg = parse_config(config_path)?;
    if cfg.manifold == Manifold::Circle {
        println!(
            "the curvature condition is vacuous on the circle: it quantifies over \
             tangent vectors V and covectors eta with eta(V) = 0, and in one dimension \
             that pairing forces V = 0 or eta = 0, so there is nothing to sample"
        );
        return Ok(0);
    }
    let report = otflow::mtw::sample_mtw_delta(cfg.cost, samples, margin, cfg.seed)?;
    println!("cost: {}", cfg.cost.name());
    println!("samples: {}", report.samples);
    println!("singularity margin: {margin}");
    println!("minimum normalized tensor value: {:.8}", report.min_normalized);
    let arg = &report.argmin;
    println!(
        "attained at x = ({:.6}, {:.6}, {:.6}), xbar = ({:.6}, {:.6}, {:.6})",
        arg.x.coords().x,
        arg.x.coords().y,
        arg.x.coords().z,
        arg.xbar.coords().x,
        arg.xbar.coords().y,
        arg.xbar.coords().z,
    );
    Ok(0)
}

fn cmd_oracle_circle(config_path: &std::path::Path) -> Result<u8, Error> {
    let cfg = parse_config(config_path)?;
    if cfg.manifold != Manifold::Circle {
        return Err(Error::config(
            "manifold",
            "oracle-circle needs a circle configuration (manifold = \"s1\")",
        ));
    }
    let grid = CircleGrid::new(cfg.grid_n)?;
    let rho = CircleDensity::new(cfg.circle_rho()?, |f| grid.integrate_fn(f))?;
    let rho_bar = CircleDensity::new(cfg.circle_rho_bar()?, |f| grid.integrate_fn(f))?;
    let result = otflow::oracle::circle_rearrangement(&rho, &rho_bar, cfg.grid_n, 256)?;
    println!("# optimal mass shift = {}, transport cost = {}", result.shift, result.cost);
    println!("phi,target");
    for (k, target) in result.map.iter().enumerate() {
        println!("{},{target}", grid.angle(k));
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// Self-test battery.
// ---------------------------------------------------------------------------

fn cmd_check(self_test: bool) -> Result<u8, Error> {
    if !self_test {
        return Err(Error::config("check", "pass --self-test to run the invariant suite"));
    }
    let checks: &[(&str, fn() -> Result<(), String>)] = &[
        ("chart transition is an involution", check_transition),
        ("cost jets match finite differences", check_jets),
        ("identity transport is stationary", check_identity),
        ("circle flow matches the rearrangement oracle", check_circle),
        ("curvature sampling is positive for both costs", check_mtw),
        ("assembled w matches the pulled-back comparator", check_pullback),
    ];
    let mut failed = 0usize;
    for (name, run) in checks {
        match run() {
            Ok(()) => println!("self-test: {name} ... ok"),
            Err(msg) => {
                failed += 1;
                println!("self-test: {name} ... FAILED: {msg}");
            }
        }
    }
    if failed == 0 {
        println!("self-test: all {} checks passed", checks.len());
        Ok(0)
    } else {
        println!("self-test: {failed} of {} checks failed", checks.len());
        Ok(1)
    }
}

fn check_transition() -> Result<(), String> {
    use otflow::geometry::{transition, ChartId, ChartPos};
    let mut worst = 0.0f64;
    for k in 0..64 {
        let ang = k as f64 * std::f64::consts::TAU / 64.0;
        let r = 0.8 + 0.4 * (k as f64 / 64.0);
        let p = ChartPos::new(ChartId::A, r * ang.cos(), r * ang.sin());
        let q = transition(transition(p));
        worst = worst.max((q.a - p.a).abs().max((q.b - p.b).abs()));
    }
    if worst < 1e-12 {
        Ok(())
    } else {
        Err(format!("double transition moved a point by {worst:.3e}"))
    }
}

fn check_jets() -> Result<(), String> {
    use otflow::cost::{fd_cross_check, fd_cross_check_s1, CostId};
    use otflow::geometry::{ChartId, ChartPos};
    let pairs = [
        (ChartPos::new(ChartId::A, 0.2, -0.1), ChartPos::new(ChartId::A, 0.5, 0.3)),
        (ChartPos::new(ChartId::A, -0.3, 0.4), ChartPos::new(ChartId::B, 0.2, 0.25)),
        (ChartPos::new(ChartId::B, 0.1, 0.6), ChartPos::new(ChartId::A, -0.4, -0.2)),
    ];
    let mut worst = 0.0f64;
    for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
        for (src, tgt) in pairs {
            worst = worst.max(fd_cross_check(cost, src, tgt).map_err(|e| e.to_string())?);
        }
        worst = worst.max(fd_cross_check_s1(cost, 0.7, 2.9).map_err(|e| e.to_string())?);
    }
    if worst <= 1e-6 {
        Ok(())
    } else {
        Err(format!("worst relative jet error {worst:.3e} exceeds 1e-6"))
    }
}

fn check_identity() -> Result<(), String> {
    use otflow::cost::CostId;
    use otflow::density::SphereShape;
    for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
        let mut flow = S2Flow::new(cost, 47, SphereShape::Uniform, SphereShape::Uniform)
            .map_err(|e| e.to_string())?;
        let osc = flow.oscillation();
        if osc > 1e-10 {
            return Err(format!("{:?}: identity oscillation {osc:.3e} exceeds 1e-10", cost));
        }
        let outcome = flow.run(&RunParams::default());
        if outcome.termination != Termination::Converged || flow.state.step_count != 0 {
            return Err(format!("{:?}: identity state did not converge at step 0", cost));
        }
        let residual = flow.conservation_residual().abs();
        if residual > 1e-10 {
            return Err(format!("{:?}: mass residual {residual:.3e} exceeds 1e-10", cost));
        }
    }
    Ok(())
}

fn check_circle() -> Result<(), String> {
    use otflow::cost::CostId;
    use otflow::density::CircleShape;
    use otflow::geometry::circle_distance;
    let rho_bar_shape = CircleShape::Cosine { amp: 0.3, phase: 0.0 };
    let n = 64;
    let mut flow = S1Flow::new(CostId::SquaredDistance, n, CircleShape::Uniform, rho_bar_shape)
        .map_err(|e| e.to_string())?;
    let outcome = flow.run(&RunParams {
        sigma: 0.8,
        tol: 1e-9,
        max_steps: 200_000,
        cadence: 1000,
    });
    if outcome.termination != Termination::Converged {
        return Err("circle flow did not converge".to_string());
    }
    let oracle = otflow::oracle::circle_rearrangement(&flow.rho, &flow.rho_bar, n, 256)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in 0..n {
        worst = worst.max(circle_distance(flow.state.target[k], oracle.map[k]));
    }
    if worst <= 5e-3 {
        Ok(())
    } else {
        Err(format!("flow and oracle maps differ by {worst:.3e} (limit 5e-3)"))
    }
}

fn check_mtw() -> Result<(), String> {
    use otflow::cost::CostId;
    for cost in [CostId::SquaredDistance, CostId::ReflectorAntenna] {
        let report =
            otflow::mtw::sample_mtw_delta(cost, 500, 0.3, 42).map_err(|e| e.to_string())?;
        if report.min_normalized <= 0.0 {
            return Err(format!(
                "{:?}: sampled tensor minimum {:.6} is not positive",
                cost, report.min_normalized
            ));
        }
    }
    Ok(())
}

fn check_pullback() -> Result<(), String> {
    use otflow::cost::CostId;
    use otflow::density::SphereShape;
    let flow = S2Flow::new(CostId::SquaredDistance, 47, SphereShape::Uniform, SphereShape::Uniform)
        .map_err(|e| e.to_string())?;
    let worst = otflow::mtw::pullback_h_check(&flow);
    if worst <= 1e-9 {
        Ok(())
    } else {
        Err(format!("identity-state pullback residual {worst:.3e} exceeds 1e-9"))
    }
}
