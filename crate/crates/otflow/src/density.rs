//! Closed-form density families on the sphere and the circle.
//!
//! A density is an intrinsic mass distribution `f > 0` with
//! `integral f dVol = 1`.  Normalization is performed against the run's
//! own quadrature so that discrete conservation checks are exact at the
//! grid level.  Chart computations use the chart density
//! `rho = f * sqrt(det g)`.

use crate::error::{Error, Result};
use crate::geometry::{sqrt_det_g, ChartPos, SpherePoint};
use nalgebra::Vector3;

/// Unnormalized closed-form density shapes on the sphere.
#[derive(Clone, Debug, PartialEq)]
pub enum SphereShape {
    Uniform,
    /// `1 + eps * <x, axis>`; requires `|eps| < 1` for positivity.
    Tilt { eps: f64, axis: Vector3<f64> },
    /// `1 + amp * exp(kappa * (<x, mu> - 1))`; requires `amp > -1`.
    Bump { kappa: f64, mu: Vector3<f64>, amp: f64 },
}

impl SphereShape {
    pub fn value_raw(&self, p: &SpherePoint) -> f64 {
        match self {
            SphereShape::Uniform => 1.0,
            SphereShape::Tilt { eps, axis } => 1.0 + eps * p.coords().dot(axis),
            SphereShape::Bump { kappa, mu, amp } => {
                1.0 + amp * (kappa * (p.coords().dot(mu) - 1.0)).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SphereShape::Uniform => Ok(()),
            SphereShape::Tilt { eps, .. } => {
                if eps.abs() >= 1.0 {
                    Err(Error::config("density", format!("tilt eps = {eps} leaves no positive margin")))
                } else {
                    Ok(())
                }
            }
            SphereShape::Bump { kappa, amp, .. } => {
                if *amp <= -1.0 {
                    Err(Error::config("density", format!("bump amp = {amp} makes the density nonpositive")))
                } else if *kappa < 0.0 {
                    Err(Error::config("density", format!("bump kappa = {kappa} must be nonnegative")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Normalized sphere density.
#[derive(Clone, Debug)]
pub struct SphereDensity {
    shape: SphereShape,
    norm: f64,
}

impl SphereDensity {
    /// Normalizes `shape` so that the supplied quadrature integrates it
    /// to one.  `integrate` must evaluate `integral g dVol` for a closure `g`.
    pub fn new<F>(shape: SphereShape, integrate: F) -> Result<Self>
    where
        F: Fn(&dyn Fn(&SpherePoint) -> f64) -> f64,
    {
        shape.validate()?;
        let total = integrate(&|p| shape.value_raw(p));
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::config("density", format!("shape integrates to {total}")));
        }
        Ok(SphereDensity { shape, norm: total })
    }

    /// Intrinsic density value (mass per unit sphere area).
    #[inline]
    pub fn value(&self, p: &SpherePoint) -> f64 {
        self.shape.value_raw(p) / self.norm
    }

    /// Chart density `rho = f * sqrt(det g)` at a chart position.
    #[inline]
    pub fn chart_value(&self, pos: ChartPos) -> f64 {
        let p = crate::geometry::chart_to_sphere(pos);
        self.value(&p) * sqrt_det_g(pos.radius_sq())
    }

    /// Natural log of the chart density.
    #[inline]
    pub fn ln_chart(&self, pos: ChartPos) -> f64 {
        self.chart_value(pos).ln()
    }

    /// Chart gradient of `ln rho` by fourth-order central differences.
    ///
    /// Only diagnostics use this (the linearized operator); the step is
    /// far above roundoff and far below the density's length scale.
    pub fn ln_chart_grad(&self, pos: ChartPos) -> [f64; 2] {
        let h = 1e-4;
        let mut out = [0.0; 2];
        for (axis, slot) in out.iter_mut().enumerate() {
            let eval = |k: f64| {
                let (da, db) = if axis == 0 { (k * h, 0.0) } else { (0.0, k * h) };
                self.ln_chart(ChartPos::new(pos.chart, pos.a + da, pos.b + db))
            };
            *slot = (eval(-2.0) - 8.0 * eval(-1.0) + 8.0 * eval(1.0) - eval(2.0)) / (12.0 * h);
        }
        out
    }
}

/// Unnormalized closed-form density shapes on the circle.
#[derive(Clone, Debug, PartialEq)]
pub enum CircleShape {
    Uniform,
    /// `1 + amp * cos(phi - phase)`; requires `|amp| < 1`.
    Cosine { amp: f64, phase: f64 },
    /// `1 + amp * exp(kappa * (cos(phi - mu) - 1))`; requires `amp > -1`.
    Bump { kappa: f64, mu: f64, amp: f64 },
}

impl CircleShape {
    pub fn value_raw(&self, phi: f64) -> f64 {
        match self {
            CircleShape::Uniform => 1.0,
            CircleShape::Cosine { amp, phase } => 1.0 + amp * (phi - phase).cos(),
            CircleShape::Bump { kappa, mu, amp } => {
                1.0 + amp * (kappa * ((phi - mu).cos() - 1.0)).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CircleShape::Uniform => Ok(()),
            CircleShape::Cosine { amp, .. } => {
                if amp.abs() >= 1.0 {
                    Err(Error::config("density", format!("cosine amp = {amp} leaves no positive margin")))
                } else {
                    Ok(())
                }
            }
            CircleShape::Bump { kappa, amp, .. } => {
                if *amp <= -1.0 {
                    Err(Error::config("density", format!("bump amp = {amp} makes the density nonpositive")))
                } else if *kappa < 0.0 {
                    Err(Error::config("density", format!("bump kappa = {kappa} must be nonnegative")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Normalized circle density (the chart metric is 1, so intrinsic and
/// chart densities coincide).
#[derive(Clone, Debug)]
pub struct CircleDensity {
    shape: CircleShape,
    norm: f64,
}

impl CircleDensity {
    pub fn new<F>(shape: CircleShape, integrate: F) -> Result<Self>
    where
        F: Fn(&dyn Fn(f64) -> f64) -> f64,
    {
        shape.validate()?;
        let total = integrate(&|phi| shape.value_raw(phi));
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::config("density", format!("shape integrates to {total}")));
        }
        Ok(CircleDensity { shape, norm: total })
    }

    #[inline]
    pub fn value(&self, phi: f64) -> f64 {
        self.shape.value_raw(phi) / self.norm
    }

    #[inline]
    pub fn ln_value(&self, phi: f64) -> f64 {
        self.value(phi).ln()
    }

    /// `d/dphi ln rho` by fourth-order central differences.
    pub fn ln_grad(&self, phi: f64) -> f64 {
        let h = 1e-4;
        let eval = |k: f64| self.ln_value(phi + k * h);
        (eval(-2.0) - 8.0 * eval(-1.0) + 8.0 * eval(1.0) - eval(2.0)) / (12.0 * h)
    }
}

// ---------------------------------------------------------------------------
// Density spec strings.
// ---------------------------------------------------------------------------

/// Parses `name` or `name(key=value, ...)` into name and key/value pairs.
fn parse_call(s: &str) -> Result<(&str, Vec<(&str, &str)>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s, Vec::new()));
    };
    if !s.ends_with(')') {
        return Err(Error::config("density", format!("unbalanced parentheses in `{s}`")));
    }
    let name = s[..open].trim();
    let body = &s[open + 1..s.len() - 1];
    let mut pairs = Vec::new();
    // Split on commas that are not inside a nested parenthesis (vector values).
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut parts = Vec::new();
    for (i, ch) in body.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&body[start..]);
    for part in parts {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let Some(eq) = part.find('=') else {
            return Err(Error::config("density", format!("expected key=value, got `{part}`")));
        };
        pairs.push((part[..eq].trim(), part[eq + 1..].trim()));
    }
    Ok((name, pairs))
}

fn parse_f64(field: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::config("density", format!("`{field}` is not a number: `{v}`")))
}

fn parse_axis(v: &str) -> Result<Vector3<f64>> {
    match v {
        "x" => return Ok(Vector3::new(1.0, 0.0, 0.0)),
        "y" => return Ok(Vector3::new(0.0, 1.0, 0.0)),
        "z" => return Ok(Vector3::new(0.0, 0.0, 1.0)),
        _ => {}
    }
    let v = v.trim();
    if v.starts_with('(') && v.ends_with(')') {
        let comps: Vec<&str> = v[1..v.len() - 1].split(',').collect();
        if comps.len() == 3 {
            let x = parse_f64("axis", comps[0].trim())?;
            let y = parse_f64("axis", comps[1].trim())?;
            let z = parse_f64("axis", comps[2].trim())?;
            let vec = Vector3::new(x, y, z);
            let n = vec.norm();
            if n < 1e-12 {
                return Err(Error::config("density", "axis vector is zero"));
            }
            return Ok(vec / n);
        }
    }
    Err(Error::config("density", format!("cannot parse axis `{v}`")))
}

/// Parses a sphere density spec: `uniform`, `tilt(eps=.., axis=..)`, or
/// `bump(kappa=.., mu=(..), amp=..)`.
pub fn parse_sphere_shape(s: &str) -> Result<SphereShape> {
    let (name, pairs) = parse_call(s)?;
    let lookup = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
    let reject_unknown = |allowed: &[&str]| -> Result<()> {
        for (k, _) in &pairs {
            if !allowed.contains(k) {
                return Err(Error::config("density", format!("unknown parameter `{k}` for `{name}`")));
            }
        }
        Ok(())
    };
    match name {
        "uniform" => {
            reject_unknown(&[])?;
            Ok(SphereShape::Uniform)
        }
        "tilt" => {
            reject_unknown(&["eps", "axis"])?;
            let eps = parse_f64("eps", lookup("eps").ok_or_else(|| Error::config("density", "tilt requires eps"))?)?;
            let axis = match lookup("axis") {
                Some(v) => parse_axis(v)?,
                None => Vector3::new(0.0, 0.0, 1.0),
            };
            Ok(SphereShape::Tilt { eps, axis })
        }
        "bump" => {
            reject_unknown(&["kappa", "mu", "amp"])?;
            let kappa = parse_f64("kappa", lookup("kappa").ok_or_else(|| Error::config("density", "bump requires kappa"))?)?;
            let amp = parse_f64("amp", lookup("amp").ok_or_else(|| Error::config("density", "bump requires amp"))?)?;
            let mu = match lookup("mu") {
                Some(v) => parse_axis(v)?,
                None => Vector3::new(0.0, 0.0, 1.0),
            };
            Ok(SphereShape::Bump { kappa, mu, amp })
        }
        other => Err(Error::config("density", format!("unknown sphere density `{other}`"))),
    }
}

/// Parses a circle density spec: `uniform`, `cosine(amp=.., phase=..)`,
/// or `bump(kappa=.., mu=.., amp=..)` with `mu` an angle.
pub fn parse_circle_shape(s: &str) -> Result<CircleShape> {
    let (name, pairs) = parse_call(s)?;
    let lookup = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
    let reject_unknown = |allowed: &[&str]| -> Result<()> {
        for (k, _) in &pairs {
            if !allowed.contains(k) {
                return Err(Error::config("density", format!("unknown parameter `{k}` for `{name}`")));
            }
        }
        Ok(())
    };
    match name {
        "uniform" => {
            reject_unknown(&[])?;
            Ok(CircleShape::Uniform)
        }
        "cosine" => {
            reject_unknown(&["amp", "phase"])?;
            let amp = parse_f64("amp", lookup("amp").ok_or_else(|| Error::config("density", "cosine requires amp"))?)?;
            let phase = match lookup("phase") {
                Some(v) => parse_f64("phase", v)?,
                None => 0.0,
            };
            Ok(CircleShape::Cosine { amp, phase })
        }
        "bump" => {
            reject_unknown(&["kappa", "mu", "amp"])?;
            let kappa = parse_f64("kappa", lookup("kappa").ok_or_else(|| Error::config("density", "bump requires kappa"))?)?;
            let amp = parse_f64("amp", lookup("amp").ok_or_else(|| Error::config("density", "bump requires amp"))?)?;
            let mu = match lookup("mu") {
                Some(v) => parse_f64("mu", v)?,
                None => 0.0,
            };
            Ok(CircleShape::Bump { kappa, mu, amp })
        }
        other => Err(Error::config("density", format!("unknown circle density `{other}`"))),
    }
}
