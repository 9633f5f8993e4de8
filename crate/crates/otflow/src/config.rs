//! Run configuration: a flat TOML file, parsed with defaulting and
//! strict validation.
//!
//! Only `cost` and `manifold` are required; everything else defaults to
//! the standard run setup.  Unknown keys are rejected (with the line
//! they appear on) so that typos fail loudly instead of silently running
//! with a default.  Density shapes are kept as their spec strings; they
//! are validated against the declared manifold at parse time and
//! re-parsed into shape values on demand, which makes emission (and the
//! parse/emit round-trip) exact.

use std::path::Path;

use serde::Deserialize;

use crate::cost::CostId;
use crate::density::{parse_circle_shape, parse_sphere_shape, CircleShape, SphereShape};
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 0.8;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_CADENCE: u64 = 100;
pub const DEFAULT_MAX_STEPS: u64 = 400_000;
pub const DEFAULT_GRID_SPHERE: usize = 129;
pub const DEFAULT_GRID_CIRCLE: usize = 256;

/// Which manifold a run lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Manifold {
    Circle,
    Sphere,
}

impl Manifold {
    pub fn name(self) -> &'static str {
        match self {
            Manifold::Circle => "s1",
            Manifold::Sphere => "s2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "s1" => Ok(Manifold::Circle),
            "s2" => Ok(Manifold::Sphere),
            other => Err(Error::config(
                "manifold",
                format!("unknown manifold `{other}` (expected `s1` or `s2`)"),
            )),
        }
    }
}

/// Initial potential: identically zero, or a constant (which flows
/// identically to zero and exists to exercise shift invariance).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialPotential {
    Zero,
    Constant(f64),
}

impl InitialPotential {
    pub fn spec_string(self) -> String {
        match self {
            InitialPotential::Zero => "zero".to_string(),
            InitialPotential::Constant(v) => format!("constant(value={v})"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "zero" {
            return Ok(InitialPotential::Zero);
        }
        if let Some(body) = s.strip_prefix("constant(").and_then(|r| r.strip_suffix(')')) {
            if let Some(v) = body.trim().strip_prefix("value=") {
                let value: f64 = v.trim().parse().map_err(|_| {
                    Error::config("u0", format!("`value` is not a number: `{v}`"))
                })?;
                if !value.is_finite() {
                    return Err(Error::config("u0", "constant value must be finite"));
                }
                return Ok(InitialPotential::Constant(value));
            }
        }
        Err(Error::config(
            "u0",
            format!("unknown initial potential `{s}` (expected `zero` or `constant(value=v)`)"),
        ))
    }

    pub fn value(self) -> f64 {
        match self {
            InitialPotential::Zero => 0.0,
            InitialPotential::Constant(v) => v,
        }
    }
}

/// A fully defaulted, validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub cost: CostId,
    pub manifold: Manifold,
    /// Source density spec string (validated for the manifold).
    pub rho: String,
    /// Target density spec string (validated for the manifold).
    pub rho_bar: String,
    /// Nodes per chart axis (sphere) or total nodes (circle).
    pub grid_n: usize,
    /// Safety factor on the stable explicit time step, in (0, 1].
    pub sigma: f64,
    /// Stop once the oscillation of theta falls to this.
    pub tol: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Diagnostics are recorded every `cadence` steps.
    pub cadence: u64,
    pub u0: InitialPotential,
}

/// The raw deserialization target; everything optional except the two
/// fields without a sensible default.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    cost: String,
    manifold: String,
    rho: Option<String>,
    rho_bar: Option<String>,
    grid_n: Option<usize>,
    sigma: Option<f64>,
    tol: Option<f64>,
    max_steps: Option<u64>,
    seed: Option<u64>,
    cadence: Option<u64>,
    u0: Option<String>,
}

impl FlowConfig {
    /// Parses and validates configuration text.
    pub fn parse_str(text: &str) -> Result<FlowConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| 1 + text[..s.start.min(text.len())].bytes().filter(|&b| b == b'\n').count());
            Error::ConfigError {
                field: "config".to_string(),
                line,
                message: e.message().to_string(),
            }
        })?;

        let cost = CostId::parse(&raw.cost)?;
        let manifold = Manifold::parse(&raw.manifold)?;
        let rho = raw.rho.unwrap_or_else(|| "uniform".to_string());
        let rho_bar = raw.rho_bar.unwrap_or_else(|| "uniform".to_string());
        // Validate the density specs now so a bad string fails at parse
        // time; the config keeps the original text.
        match manifold {
            Manifold::Sphere => {
                parse_sphere_shape(&rho)?;
                parse_sphere_shape(&rho_bar)?;
            }
            Manifold::Circle => {
                parse_circle_shape(&rho)?;
                parse_circle_shape(&rho_bar)?;
            }
        }

        let grid_n = raw.grid_n.unwrap_or(match manifold {
            Manifold::Sphere => DEFAULT_GRID_SPHERE,
            Manifold::Circle => DEFAULT_GRID_CIRCLE,
        });
        let sigma = raw.sigma.unwrap_or(DEFAULT_SIGMA);
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::config(
                "sigma",
                format!("time-step safety factor must lie in (0, 1], got {sigma}"),
            ));
        }
        let tol = raw.tol.unwrap_or(DEFAULT_TOL);
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::config(
                "tol",
                format!("stop tolerance must be positive and finite, got {tol}"),
            ));
        }
        let max_steps = raw.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
        if max_steps == 0 {
            return Err(Error::config("max_steps", "need at least one step"));
        }
        let cadence = raw.cadence.unwrap_or(DEFAULT_CADENCE);
        if cadence == 0 {
            return Err(Error::config("cadence", "cadence must be at least 1"));
        }
        let u0 = match raw.u0 {
            Some(s) => InitialPotential::parse(&s)?,
            None => InitialPotential::Zero,
        };

        Ok(FlowConfig {
            cost,
            manifold,
            rho,
            rho_bar,
            grid_n,
            sigma,
            tol,
            max_steps,
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            cadence,
            u0,
        })
    }

    /// Emits the configuration as TOML text that parses back to an equal
    /// value (float formatting is shortest round-trip).
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("cost = \"{}\"\n", self.cost.name()));
        out.push_str(&format!("manifold = \"{}\"\n", self.manifold.name()));
        out.push_str(&format!("rho = \"{}\"\n", self.rho));
        out.push_str(&format!("rho_bar = \"{}\"\n", self.rho_bar));
        out.push_str(&format!("grid_n = {}\n", self.grid_n));
        out.push_str(&format!("sigma = {}\n", toml_float(self.sigma)));
        out.push_str(&format!("tol = {}\n", toml_float(self.tol)));
        out.push_str(&format!("max_steps = {}\n", self.max_steps));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("cadence = {}\n", self.cadence));
        out.push_str(&format!("u0 = \"{}\"\n", self.u0.spec_string()));
        out
    }

    /// The source density shape (sphere runs only).
    pub fn sphere_rho(&self) -> Result<SphereShape> {
        parse_sphere_shape(&self.rho)
    }

    pub fn sphere_rho_bar(&self) -> Result<SphereShape> {
        parse_sphere_shape(&self.rho_bar)
    }

    pub fn circle_rho(&self) -> Result<CircleShape> {
        parse_circle_shape(&self.rho)
    }

    pub fn circle_rho_bar(&self) -> Result<CircleShape> {
        parse_circle_shape(&self.rho_bar)
    }
}

/// Formats a float so TOML reads it back as a float (a bare integer
/// literal would deserialize as an integer and fail the f64 field).
fn toml_float(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("nan") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Reads and parses a configuration file.  An unreadable path is a
/// configuration problem from the caller's point of view, so it maps to
/// the same error class as a malformed file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<FlowConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config("path", format!("cannot read {}: {e}", path.display()))
    })?;
    FlowConfig::parse_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_full_defaults() {
        let cfg = FlowConfig::parse_str("cost = \"squared_distance\"\nmanifold = \"s2\"\n").unwrap();
        assert_eq!(cfg.cost, CostId::SquaredDistance);
        assert_eq!(cfg.manifold, Manifold::Sphere);
        assert_eq!(cfg.rho, "uniform");
        assert_eq!(cfg.rho_bar, "uniform");
        assert_eq!(cfg.grid_n, DEFAULT_GRID_SPHERE);
        assert_eq!(cfg.sigma, DEFAULT_SIGMA);
        assert_eq!(cfg.tol, DEFAULT_TOL);
        assert_eq!(cfg.max_steps, DEFAULT_MAX_STEPS);
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.cadence, DEFAULT_CADENCE);
        assert_eq!(cfg.u0, InitialPotential::Zero);
    }

    #[test]
    fn circle_default_grid_differs() {
        let cfg = FlowConfig::parse_str("cost = \"squared_distance\"\nmanifold = \"s1\"\n").unwrap();
        assert_eq!(cfg.grid_n, DEFAULT_GRID_CIRCLE);
    }

    #[test]
    fn sigma_out_of_range_is_rejected() {
        let err = FlowConfig::parse_str(
            "cost = \"squared_distance\"\nmanifold = \"s2\"\nsigma = 1.5\n",
        )
        .unwrap_err();
        match err {
            Error::ConfigError { field, .. } => assert_eq!(field, "sigma"),
            other => panic!("expected ConfigError, got {other:?}"),
        }
        assert!(FlowConfig::parse_str(
            "cost = \"squared_distance\"\nmanifold = \"s2\"\nsigma = 0.0\n"
        )
        .is_err());
        assert!(FlowConfig::parse_str(
            "cost = \"squared_distance\"\nmanifold = \"s2\"\nsigma = 1.0\n"
        )
        .is_ok());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = FlowConfig::parse_str(
            "cost = \"squared_distance\"\nmanifold = \"s2\"\ntollerance = 1e-9\n",
        )
        .unwrap_err();
        match err {
            Error::ConfigError { line, message, .. } => {
                assert_eq!(line, Some(3));
                assert!(message.contains("tollerance"), "{message}");
            }
            other => panic!("expected ConfigError, got {other:?}"),
        }
    }

    #[test]
    fn density_specs_are_validated_for_the_manifold() {
        // A sphere density on a circle manifold fails at parse time.
        let err = FlowConfig::parse_str(
            "cost = \"squared_distance\"\nmanifold = \"s1\"\nrho_bar = \"tilt(eps=0.1)\"\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConfigError { .. }));

        let cfg = FlowConfig::parse_str(
            "cost = \"reflector_antenna\"\nmanifold = \"s2\"\nrho_bar = \"bump(kappa=4, mu=(0,0,1), amp=0.3)\"\n",
        )
        .unwrap();
        let shape = cfg.sphere_rho_bar().unwrap();
        assert!(matches!(shape, SphereShape::Bump { .. }));
    }

    #[test]
    fn u0_constant_parses_and_zero_is_default() {
        let cfg = FlowConfig::parse_str(
            "cost = \"squared_distance\"\nmanifold = \"s2\"\nu0 = \"constant(value=0.25)\"\n",
        )
        .unwrap();
        assert_eq!(cfg.u0, InitialPotential::Constant(0.25));
        assert_eq!(cfg.u0.value(), 0.25);
        assert!(FlowConfig::parse_str(
            "cost = \"squared_distance\"\nmanifold = \"s2\"\nu0 = \"ramp\"\n"
        )
        .is_err());
    }

    #[test]
    fn parse_emit_parse_round_trips() {
        let text = concat!(
            "cost = \"reflector_antenna\"\n",
            "manifold = \"s2\"\n",
            "rho = \"uniform\"\n",
            "rho_bar = \"bump(kappa=4, mu=(0,0,1), amp=0.3)\"\n",
            "grid_n = 65\n",
            "sigma = 0.95\n",
            "tol = 1e-7\n",
            "max_steps = 12345\n",
            "seed = 7\n",
            "cadence = 50\n",
            "u0 = \"constant(value=-0.125)\"\n",
        );
        let cfg = FlowConfig::parse_str(text).unwrap();
        let emitted = cfg.to_toml();
        let reparsed = FlowConfig::parse_str(&emitted).unwrap();
        assert_eq!(cfg, reparsed);

        // And the same for a fully defaulted config.
        let minimal = FlowConfig::parse_str("cost = \"squared_distance\"\nmanifold = \"s1\"\n").unwrap();
        let again = FlowConfig::parse_str(&minimal.to_toml()).unwrap();
        assert_eq!(minimal, again);
    }

    #[test]
    fn missing_file_is_a_config_error() {
        let err = parse_config("/nonexistent/definitely_missing.toml").unwrap_err();
        assert!(matches!(err, Error::ConfigError { .. }));
    }
}
