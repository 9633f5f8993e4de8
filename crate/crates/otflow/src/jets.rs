//! Truncated multivariate Taylor arithmetic ("jets") up to total order 4.
//!
//! A [`Jet`] stores the Taylor coefficients of a smooth function around a
//! base point, truncated to total degree 4.  Arithmetic on jets propagates
//! exact derivative information through rational expressions and univariate
//! compositions, which is how all cost-function derivatives of order > 2
//! are produced.
//!
//! Two instantiations are used: `Jet<2, 15>` for functions of one source
//! and one target variable (the circle) and `Jet<4, 70>` for two source
//! and two target variables (the sphere).  The second const parameter is
//! the number of monomials of degree <= 4 in `V` variables and must match
//! `coeff_count(V)`; the type aliases [`Jet2`] and [`Jet4`] are the only
//! intended instantiations.

use once_cell::sync::Lazy;
use std::collections::HashMap;

/// Truncation order of the Taylor expansion.
pub const ORDER: usize = 4;

/// Jet in two variables (circle costs: one source, one target coordinate).
pub type Jet2 = Jet<2, 15>;
/// Jet in four variables (sphere costs: two source, two target coordinates).
pub type Jet4 = Jet<4, 70>;

/// Number of monomials of total degree <= [`ORDER`] in `v` variables.
pub const fn coeff_count(v: usize) -> usize {
    // C(v + ORDER, ORDER) for ORDER = 4.
    (v + 1) * (v + 2) * (v + 3) * (v + 4) / 24
}

/// Precomputed monomial table for a fixed variable count.
struct JetSpace {
    /// Exponents -> coefficient position (monomials are ordered by total
    /// degree, then lexicographically).
    index: HashMap<Vec<u8>, usize>,
    /// Sparse multiplication table: `(i, j, k)` means
    /// `result[k] += lhs[i] * rhs[j]`.
    triples: Vec<(u32, u32, u32)>,
}

impl JetSpace {
    fn build(v: usize) -> JetSpace {
        let mut monos: Vec<Vec<u8>> = Vec::new();
        for degree in 0..=ORDER {
            let mut current = vec![0u8; v];
            gen_monomials(v, 0, degree as u8, &mut current, &mut monos);
        }
        let index: HashMap<Vec<u8>, usize> = monos
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let mut triples = Vec::new();
        for (i, mi) in monos.iter().enumerate() {
            let di: u8 = mi.iter().sum();
            for (j, mj) in monos.iter().enumerate() {
                let dj: u8 = mj.iter().sum();
                if di + dj > ORDER as u8 {
                    continue;
                }
                let sum: Vec<u8> = mi.iter().zip(mj).map(|(x, y)| x + y).collect();
                let k = index[&sum];
                triples.push((i as u32, j as u32, k as u32));
            }
        }
        JetSpace { index, triples }
    }
}

/// Emits all exponent vectors of exactly `remaining` total degree.
fn gen_monomials(v: usize, pos: usize, remaining: u8, current: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if pos == v - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for d in (0..=remaining).rev() {
        current[pos] = d;
        gen_monomials(v, pos + 1, remaining - d, current, out);
    }
}

static SPACE2: Lazy<JetSpace> = Lazy::new(|| JetSpace::build(2));
static SPACE4: Lazy<JetSpace> = Lazy::new(|| JetSpace::build(4));

fn space(v: usize) -> &'static JetSpace {
    match v {
        2 => &SPACE2,
        4 => &SPACE4,
        _ => panic!("jet spaces are built for 2 or 4 variables"),
    }
}

/// Taylor coefficients of a function of `V` variables, truncated at total
/// degree 4.  `N` must equal `coeff_count(V)`.
#[derive(Clone, Copy, Debug)]
pub struct Jet<const V: usize, const N: usize> {
    coeffs: [f64; N],
}

impl<const V: usize, const N: usize> Jet<V, N> {
    fn zero() -> Self {
        debug_assert_eq!(N, coeff_count(V));
        Jet { coeffs: [0.0; N] }
    }

    /// The constant function `c`.
    pub fn constant(c: f64) -> Self {
        let mut jet = Self::zero();
        jet.coeffs[0] = c;
        jet
    }

    /// The coordinate function `var_i`, expanded around `x0`.
    pub fn variable(i: usize, x0: f64) -> Self {
        assert!(i < V, "variable index {i} out of range for {V} variables");
        let mut jet = Self::zero();
        jet.coeffs[0] = x0;
        // First-degree monomials follow the constant; in the table order
        // variable i has exponent vector e_i.
        let mut expt = vec![0u8; V];
        expt[i] = 1;
        jet.coeffs[space(V).index[&expt]] = 1.0;
        jet
    }

    /// Value of the function at the base point.
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Mixed partial derivative for the exponent vector `alpha`
    /// (e.g. `[1, 0, 2, 0]` is d^3 f / d x0 d x2^2).
    pub fn partial(&self, alpha: &[u8]) -> f64 {
        assert_eq!(alpha.len(), V);
        let total: u8 = alpha.iter().sum();
        assert!(total as usize <= ORDER, "partial order exceeds jet order");
        let idx = space(V).index[&alpha.to_vec()];
        let mut fact = 1.0;
        for &a in alpha {
            for k in 2..=a as u64 {
                fact *= k as f64;
            }
        }
        self.coeffs[idx] * fact
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let mut out = *self;
        for (o, r) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
            *o += r;
        }
        out
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        let mut out = *self;
        for (o, r) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
            *o -= r;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for o in out.coeffs.iter_mut() {
            *o *= s;
        }
        out
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        let mut out = *self;
        out.coeffs[0] += s;
        out
    }

    /// Truncated product of two jets.
    pub fn mul(&self, rhs: &Self) -> Self {
        let mut out = Self::zero();
        for &(i, j, k) in &space(V).triples {
            out.coeffs[k as usize] +=
                self.coeffs[i as usize] * rhs.coeffs[j as usize];
        }
        out
    }

    /// Composition with a univariate function `g`, given the derivatives
    /// `g_derivs = [g(f0), g'(f0), g''(f0), g'''(f0), g''''(f0)]` at the
    /// jet's value `f0`.
    pub fn compose(&self, g_derivs: &[f64; ORDER + 1]) -> Self {
        // Taylor coefficients of g around f0.
        let mut b = [0.0; ORDER + 1];
        let mut fact = 1.0;
        for k in 0..=ORDER {
            if k > 1 {
                fact *= k as f64;
            }
            b[k] = g_derivs[k] / fact;
        }
        // Horner evaluation in the "shifted" jet f - f0, whose constant
        // term vanishes so powers gain total degree.
        let mut shifted = *self;
        shifted.coeffs[0] = 0.0;
        let mut acc = Self::constant(b[ORDER]);
        for k in (0..ORDER).rev() {
            acc = acc.mul(&shifted).add_scalar(b[k]);
        }
        acc
    }

    /// Reciprocal `1 / f`, requiring `f0 != 0`.
    pub fn recip(&self) -> Self {
        let f0 = self.value();
        assert!(f0 != 0.0, "reciprocal of a jet with zero value");
        let i1 = 1.0 / f0;
        let i2 = i1 * i1;
        self.compose(&[
            i1,
            -i2,
            2.0 * i2 * i1,
            -6.0 * i2 * i2,
            24.0 * i2 * i2 * i1,
        ])
    }

    /// Sine of the jet.
    pub fn sin(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.compose(&[s, c, -s, -c, s])
    }

    /// Cosine of the jet.
    pub fn cos(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.compose(&[c, -s, -c, s, c])
    }
}
