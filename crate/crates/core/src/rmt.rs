//! Limiting spectral distribution of the Fisher matrix under the null:
//! support, density, Stieltjes transforms and companion moments.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension ratios `c1 = p/k1`, `c2 = p/k2` and the entry fourth moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    c1: f64,
    c2: f64,
    nu4: f64,
}

impl SpectralParams {
    pub fn new(c1: f64, c2: f64, nu4: f64) -> Result<Self> {
        if !(c1 > 0.0 && c1 < 1.0) {
            return Err(Error::InvalidParams(format!("c1 = {c1} must lie in (0, 1)")));
        }
        if !(c2 > 0.0 && c2.is_finite()) {
            return Err(Error::InvalidParams(format!("c2 = {c2} must be positive")));
        }
        if !(nu4 >= 1.0 && nu4.is_finite()) {
            return Err(Error::InvalidParams(format!("nu4 = {nu4} must be at least 1")));
        }
        Ok(Self { c1, c2, nu4 })
    }

    /// Ratios from the dimension and the two sample sizes.
    pub fn from_counts(p: usize, k1: usize, k2: usize, nu4: f64) -> Result<Self> {
        if k2 == 0 {
            return Err(Error::InvalidParams("monitoring sample is empty".into()));
        }
        Self::new(p as f64 / k1 as f64, p as f64 / k2 as f64, nu4)
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn nu4(&self) -> f64 {
        self.nu4
    }

    pub fn edges(&self) -> SupportEdges {
        support_edges(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportEdges {
    pub h: f64,
    pub a: f64,
    pub b: f64,
}

impl SupportEdges {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMoments {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub c3: f64,
}

pub fn support_edges(params: &SpectralParams) -> SupportEdges {
    let (c1, c2) = (params.c1, params.c2);
    let h = (c1 + c2 - c1 * c2).sqrt();
    let s = (1.0 - c1) * (1.0 - c1);
    SupportEdges {
        h,
        a: (1.0 - h) * (1.0 - h) / s,
        b: (1.0 + h) * (1.0 + h) / s,
    }
}

/// Density of the limiting Fisher spectrum on `[a, b]`.
pub fn lsd_density(x: f64, params: &SpectralParams) -> Result<f64> {
    let e = params.edges();
    if !e.contains(x) {
        return Err(Error::OutOfSupport { x, a: e.a, b: e.b });
    }
    if x <= 0.0 {
        // only reachable when a = 0; the density has an integrable x^{-1/2} spike there
        return Ok(f64::INFINITY);
    }
    let (c1, c2) = (params.c1, params.c2);
    let root = ((e.b - x) * (x - e.a)).max(0.0).sqrt();
    Ok((1.0 - c1) * root / (2.0 * PI * x * (c1 * x + c2)))
}

// Pieces of the rationalized transform m̄(z) = −2h² / (P(z) + Q·r(z)), where
// r(z) = √(z−a)·√(z−b) on principal roots is the branch with r ~ z at infinity.
struct Branch {
    denom: Complex64,
    r: Complex64,
}

fn branch(z: Complex64, params: &SpectralParams, e: &SupportEdges) -> Branch {
    let (c1, c2) = (params.c1, params.c2);
    let r = (z - e.a).sqrt() * (z - e.b).sqrt();
    let p = (z * (1.0 - c1) + (1.0 - c2)) * c2 + z * (2.0 * c1);
    let q = c2 * (1.0 - c1);
    Branch { denom: p + r * q, r }
}

fn check_domain(z: Complex64, e: &SupportEdges) -> Result<()> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::BranchFailure { re: z.re, im: z.im });
    }
    if z.im == 0.0 && e.contains(z.re) {
        return Err(Error::OutOfSupport { x: z.re, a: e.a, b: e.b });
    }
    Ok(())
}

fn herglotz_ok(z: Complex64, m: Complex64) -> bool {
    if !(m.re.is_finite() && m.im.is_finite()) {
        return false;
    }
    z.im == 0.0 || z.im * m.im >= -1e-12 * m.norm()
}

/// Stieltjes transform of the companion limiting spectral distribution.
pub fn stieltjes_mbar(z: Complex64, params: &SpectralParams) -> Result<Complex64> {
    let e = params.edges();
    check_domain(z, &e)?;
    let br = branch(z, params, &e);
    let m = -2.0 * e.h * e.h / br.denom;
    if !herglotz_ok(z, m) {
        return Err(Error::BranchFailure { re: z.re, im: z.im });
    }
    Ok(m)
}

/// Stieltjes transform of the Fisher limiting spectral distribution.
pub fn stieltjes_m(z: Complex64, params: &SpectralParams) -> Result<Complex64> {
    let mbar = stieltjes_mbar(z, params)?;
    let c2 = params.c2;
    let m = (mbar + (1.0 - c2) / z) / c2;
    if !herglotz_ok(z, m) {
        return Err(Error::BranchFailure { re: z.re, im: z.im });
    }
    Ok(m)
}

/// Derivative of [`stieltjes_mbar`] in `z`.
pub fn mbar_derivative(z: Complex64, params: &SpectralParams) -> Result<Complex64> {
    let e = params.edges();
    check_domain(z, &e)?;
    let (c1, c2) = (params.c1, params.c2);
    let br = branch(z, params, &e);
    let dr = (z - 0.5 * (e.a + e.b)) / br.r;
    let dp = c2 * (1.0 - c1) + 2.0 * c1;
    let d = 2.0 * e.h * e.h * (dr * (c2 * (1.0 - c1)) + dp) / (br.denom * br.denom);
    if !(d.re.is_finite() && d.im.is_finite()) {
        return Err(Error::BranchFailure { re: z.re, im: z.im });
    }
    Ok(d)
}

/// m̄(−1) and m̄′(−1), the two constants every closed form needs.
pub fn mbar_at_minus_one(params: &SpectralParams) -> Result<(f64, f64)> {
    let z = Complex64::new(-1.0, 0.0);
    Ok((stieltjes_mbar(z, params)?.re, mbar_derivative(z, params)?.re))
}

pub fn spectral_moments(params: &SpectralParams) -> SpectralMoments {
    let (c1, c2) = (params.c1, params.c2);
    let u = 1.0 - c1;
    let m1 = c2 / u;
    let m2 = c2 * (1.0 + c2 - c1 * c2) / u.powi(3);
    let m3 = c2
        * (c1 * c1 * c2 * c2 - 2.0 * c1 * c2 * c2 - 3.0 * c1 * c2 + c1 + c2 * c2 + 3.0 * c2 + 1.0)
        / u.powi(5);
    let (c1_2, c1_3) = (c1 * c1, c1 * c1 * c1);
    let (c2_2, c2_3) = (c2 * c2, c2 * c2 * c2);
    let m4 = c2 / u.powi(7)
        * (-c1_3 * c2_3 + 3.0 * c1_2 * c2_3 + 6.0 * c1_2 * c2_2 - 4.0 * c1_2 * c2 + c1_2
            - 3.0 * c1 * c2_3
            - 12.0 * c1 * c2_2
            - 2.0 * c1 * c2
            + 3.0 * c1
            + c2_3
            + 6.0 * c2_2
            + 6.0 * c2
            + 1.0);
    let c3 = m1.powi(4) - 3.0 * m1 * m1 * m2 + 2.0 * m1 * m3 + m2 * m2 - m4;
    SpectralMoments { m1, m2, m3, m4, c3 }
}

/// Real and imaginary parts of the boundary value m̄(x + i0) on the support.
pub fn boundary_ab(x: f64, params: &SpectralParams) -> Result<(f64, f64)> {
    let e = params.edges();
    if !e.contains(x) || x <= 0.0 {
        return Err(Error::OutOfSupport { x, a: e.a, b: e.b });
    }
    let t = BoundaryTerms::at(x, ((x - e.a) * (e.b - x)).max(0.0).sqrt(), params, &e);
    Ok((t.a, t.b))
}

/// Boundary values together with the derivatives needed by the real-integral
/// moment formulas. `b_dj` is `B′` multiplied by the Jacobian `2√((x−a)(b−x))`
/// of the sin² substitution, which stays finite at the edges.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundaryTerms {
    pub a: f64,
    pub b: f64,
    pub da: f64,
    pub b_dj: f64,
}

impl BoundaryTerms {
    /// `s` is `√((x−a)(b−x))`, passed in so that callers on a sin² grid can
    /// supply it without cancellation.
    pub(crate) fn at(x: f64, s: f64, params: &SpectralParams, e: &SupportEdges) -> Self {
        let (c1, c2) = (params.c1, params.c2);
        let k = c2 * (1.0 - c1);
        let n = x * (e.h * e.h + c1) + c2 * (1.0 - c2);
        let dn = e.h * e.h + c1;
        let d = 2.0 * x * (c2 + x * c1);
        let dd = 2.0 * c2 + 4.0 * x * c1;
        let a = -n / d;
        let da = -(dn * d - n * dd) / (d * d);
        let b = k * s / d;
        let b_dj = k * ((e.a + e.b - 2.0 * x) * d - 2.0 * s * s * dd) / (d * d);
        Self { a, b, da, b_dj }
    }
}
