//! Null mean and variance of the one-step spectral-statistic difference, and
//! the fourth-moment estimator used to plug into them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::AdaptiveQuadrature;
use crate::rmt::{self, BoundaryTerms, SpectralParams};

/// An analytic function with the derivatives the moment formulas need.
/// `d1_complex` is used by contour integrals in the detectability analysis.
pub trait AnalyticFunction: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    fn d1_complex(&self, z: Complex64) -> Complex64;
}

/// Function applied to Fisher eigenvalues.
#[derive(Clone)]
pub enum TestFunction {
    /// `x`
    Linear,
    /// `x²`
    Square,
    /// `log(1 + x)`
    Log1p,
    /// `x + log(1 + x)`
    Mix,
    Custom { name: String, func: Arc<dyn AnalyticFunction> },
}

impl TestFunction {
    pub const NAMED: [TestFunction; 4] = [Self::Linear, Self::Square, Self::Log1p, Self::Mix];

    pub fn custom(name: impl Into<String>, func: impl AnalyticFunction + 'static) -> Self {
        Self::Custom {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Linear => "linear",
            Self::Square => "square",
            Self::Log1p => "log1p",
            Self::Mix => "mix",
            Self::Custom { name, .. } => name,
        }
    }

    pub fn is_custom(&self) -> bool {
        matches!(self, Self::Custom { .. })
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Linear => x,
            Self::Square => x * x,
            Self::Log1p => x.ln_1p(),
            Self::Mix => x + x.ln_1p(),
            Self::Custom { func, .. } => func.value(x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Square => 2.0 * x,
            Self::Log1p => 1.0 / (1.0 + x),
            Self::Mix => 1.0 + 1.0 / (1.0 + x),
            Self::Custom { func, .. } => func.d1(x),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Self::Linear => 0.0,
            Self::Square => 2.0,
            Self::Log1p | Self::Mix => -1.0 / ((1.0 + x) * (1.0 + x)),
            Self::Custom { func, .. } => func.d2(x),
        }
    }

    pub fn d1_complex(&self, z: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        match self {
            Self::Linear => one,
            Self::Square => z * 2.0,
            Self::Log1p => one / (z + 1.0),
            Self::Mix => one + one / (z + 1.0),
            Self::Custom { func, .. } => func.d1_complex(z),
        }
    }

    /// Sum of the function over a set of eigenvalues.
    pub fn trace(&self, eigs: &[f64]) -> f64 {
        eigs.iter().map(|&x| self.value(x)).sum()
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction({})", self.name())
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for TestFunction {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Custom { func: a, .. }, Self::Custom { func: b, .. }) => Arc::ptr_eq(a, b),
            (Self::Custom { .. }, _) | (_, Self::Custom { .. }) => false,
            _ => self.name() == other.name(),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "x" => Ok(Self::Linear),
            "square" | "x2" => Ok(Self::Square),
            "log1p" | "log" => Ok(Self::Log1p),
            "mix" => Ok(Self::Mix),
            other => Err(Error::UnsupportedKind(other.to_string())),
        }
    }
}

impl Serialize for TestFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TestFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Null mean and variance of one step of the spectral statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMoments {
    pub mu: f64,
    pub sigma2: f64,
    /// Second-sample size before the step, `k − 1 − k1`.
    pub k2: usize,
    pub c2_k: f64,
}

impl StepMoments {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

fn step_params(p: usize, k1: usize, k: usize, nu4: f64) -> Result<(SpectralParams, usize)> {
    if k1 <= p {
        return Err(Error::SingularBaseline(format!("k1 = {k1} must exceed p = {p}")));
    }
    if k < k1 + 2 {
        return Err(Error::InvalidParams(format!(
            "step k = {k} leaves no monitoring sample after k1 = {k1}"
        )));
    }
    let k2 = k - 1 - k1;
    Ok((SpectralParams::from_counts(p, k1, k2, nu4)?, k2))
}

/// Closed-form moments for the four named test functions.
pub fn step_moments_closed(f: &TestFunction, p: usize, k1: usize, k: usize, nu4: f64) -> Result<StepMoments> {
    if f.is_custom() {
        return Err(Error::UnsupportedKind(f.name().to_string()));
    }
    let (params, k2) = step_params(p, k1, k, nu4)?;
    let c2 = params.c2();
    let k2f = k2 as f64;
    let pf = p as f64;
    let excess = nu4 - 3.0;
    let mm = rmt::spectral_moments(&params);
    let (m1, m2) = (mm.m1, mm.m2);

    let (mu, sigma2) = match f {
        TestFunction::Linear => (
            0.0,
            excess * m1 * m1 / (k2f * c2) - 2.0 / k2f * (m1 * m1 - m2),
        ),
        TestFunction::Square => (
            -m1 * m1 + excess * m1 * m1 / pf + m2 / k2f,
            4.0 * m2 * m2 * excess / (k2f * c2) - 8.0 * mm.c3 / k2f,
        ),
        TestFunction::Log1p | TestFunction::Mix => {
            let (m, dm) = rmt::mbar_at_minus_one(&params)?;
            let mu = (m - 1.0 - m.ln()) - excess * (1.0 - m) * (1.0 - m) / (2.0 * pf)
                + (0.5 - dm * (0.5 - 1.0 / m + 1.0 / (m * m))) / k2f;
            let sigma2 = if matches!(f, TestFunction::Log1p) {
                excess * (m - 1.0) * (m - 1.0) / (k2f * c2) + 2.0 / k2f * (dm / (m * m) - 1.0)
            } else {
                let d = m1 + 1.0 - m;
                excess * d * d / (k2f * c2)
                    + 2.0 / k2f * (m2 - (m1 - 1.0) * (m1 - 1.0) + 2.0 - 2.0 / m + dm / (m * m))
            };
            (mu, sigma2)
        }
        TestFunction::Custom { .. } => unreachable!(),
    };
    Ok(StepMoments {
        mu,
        sigma2,
        k2,
        c2_k: c2,
    })
}

/// Moments from real integrals over the support, valid for any analytic `f`.
pub fn step_moments_numeric(f: &TestFunction, p: usize, k1: usize, k: usize, nu4: f64) -> Result<StepMoments> {
    let (params, k2) = step_params(p, k1, k, nu4)?;
    let e = params.edges();
    let c2 = params.c2();
    let k2f = k2 as f64;
    let pi = std::f64::consts::PI;
    let q = AdaptiveQuadrature::new(1e-9, 16);

    // Each integrand receives (x, J) with J = dx/dθ = 2√((x−a)(b−x)).
    let terms = |x: f64, j: f64| BoundaryTerms::at(x, 0.5 * j, &params, &e);

    let first = q.integrate_sin2(
        |x, j| {
            let t = terms(x, j);
            let cross = t.da * t.b * j - t.a * t.b_dj;
            x * t.b * j * f.d1(x) + cross * f.value(x) / (t.a * t.a + t.b * t.b)
        },
        e.a,
        e.b,
    )?;
    let second = q.integrate_sin2(
        |x, j| {
            let t = terms(x, j);
            (1.0 + x * t.a) * x * t.b * j * f.d1(x)
        },
        e.a,
        e.b,
    )?;
    let third = q.integrate_sin2(
        |x, j| {
            let t = terms(x, j);
            let (d1, d2) = (f.d1(x), f.d2(x));
            let cross = t.da * t.b * j - t.a * t.b_dj;
            -(x * d2 + 2.0 * d1) * x * t.b * j / 2.0 - (cross * x * d1 + t.b * j * d2) / (t.a * t.a + t.b * t.b)
        },
        e.a,
        e.b,
    )?;
    let mu = -first / pi - (nu4 - 3.0) / (p as f64 * pi) * second - third / (k2f * pi);

    let drift = q.integrate_sin2(|x, j| x * f.d1(x) * terms(x, j).b * j, e.a, e.b)?;
    let spread = q.integrate_sin2(
        |x, j| {
            let t = terms(x, j);
            let d1 = f.d1(x);
            t.b * j * d1 * d1 / (t.a * t.a + t.b * t.b)
        },
        e.a,
        e.b,
    )?;
    let sigma2 = (nu4 - 3.0) / (k2f * c2 * pi * pi) * drift * drift + 2.0 / (k2f * pi) * spread;
    Ok(StepMoments {
        mu,
        sigma2,
        k2,
        c2_k: c2,
    })
}

/// Closed form when one exists, otherwise the real-integral path.
pub fn step_moments(f: &TestFunction, p: usize, k1: usize, k: usize, nu4: f64) -> Result<StepMoments> {
    if f.is_custom() {
        step_moments_numeric(f, p, k1, k, nu4)
    } else {
        step_moments_closed(f, p, k1, k, nu4)
    }
}

/// Fourth-moment estimate from a `p × n` data matrix (columns are observations).
pub fn estimate_nu4(data: &DMatrix<f64>) -> Result<f64> {
    let (p, n) = data.shape();
    if n < 2 || p == 0 {
        return Err(Error::DegenerateData(format!("need n >= 2 and p >= 1, got {p} x {n}")));
    }
    let nf = n as f64;
    let s = data * data.transpose() / nf;
    let tr = s.trace();
    let tau = s.iter().map(|v| v * v).sum::<f64>() - tr * tr / nf;
    let norms: Vec<f64> = data.column_iter().map(|c| c.norm_squared()).collect();
    let mean = norms.iter().sum::<f64>() / nf;
    let gamma = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let omega2: f64 = data
        .row_iter()
        .map(|r| {
            let m = r.iter().map(|v| v * v).sum::<f64>() / nf;
            m * m
        })
        .sum();
    if omega2 <= 0.0 || !omega2.is_finite() {
        return Err(Error::DegenerateData("all coordinates have zero second moment".into()));
    }
    Ok((3.0 + (gamma - 2.0 * tau) / omega2).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    struct Cube;

    impl AnalyticFunction for Cube {
        fn value(&self, x: f64) -> f64 {
            x * x * x
        }
        fn d1(&self, x: f64) -> f64 {
            3.0 * x * x
        }
        fn d2(&self, x: f64) -> f64 {
            6.0 * x
        }
        fn d1_complex(&self, z: Complex64) -> Complex64 {
            z * z * 3.0
        }
    }

    #[test]
    fn linear_mean_is_zero_and_variance_matches() {
        // c1 = c2 = 0.5 with k2 = 200: p = 100, k1 = 200, k = 401
        let m = step_moments_closed(&TestFunction::Linear, 100, 200, 401, 3.0).unwrap();
        assert_eq!(m.mu, 0.0);
        assert_eq!(m.k2, 200);
        assert!((m.sigma2 - 0.04).abs() < 1e-14);
    }

    #[test]
    fn square_mean_gaussian() {
        let m = step_moments_closed(&TestFunction::Square, 100, 200, 401, 3.0).unwrap();
        assert!((m.mu - (-1.0 + 5.0 / 200.0)).abs() < 1e-12);
    }

    #[test]
    fn log1p_and_mix_share_mean() {
        for nu4 in [1.8, 3.0, 4.0] {
            let a = step_moments_closed(&TestFunction::Log1p, 60, 150, 300, nu4).unwrap();
            let b = step_moments_closed(&TestFunction::Mix, 60, 150, 300, nu4).unwrap();
            assert_eq!(a.mu, b.mu);
        }
    }

    #[test]
    fn closed_rejects_custom_and_singular() {
        let f = TestFunction::custom("cube", Cube);
        assert!(matches!(
            step_moments_closed(&f, 10, 20, 40, 3.0),
            Err(Error::UnsupportedKind(_))
        ));
        assert!(matches!(
            step_moments_closed(&TestFunction::Linear, 10, 10, 40, 3.0),
            Err(Error::SingularBaseline(_))
        ));
        assert!(step_moments_closed(&TestFunction::Linear, 10, 20, 21, 3.0).is_err());
    }

    #[test]
    fn numeric_agrees_with_closed_on_reference_configuration() {
        for f in [TestFunction::Linear, TestFunction::Log1p] {
            let c = step_moments_closed(&f, 100, 150, 301, 3.0).unwrap();
            let n = step_moments_numeric(&f, 100, 150, 301, 3.0).unwrap();
            assert!((c.mu - n.mu).abs() <= 1e-6 * c.mu.abs().max(1.0), "{f}");
            assert!((c.sigma2 - n.sigma2).abs() <= 1e-6 * c.sigma2.abs().max(1.0), "{f}");
        }
        let n = step_moments_numeric(&TestFunction::Linear, 100, 150, 301, 3.0).unwrap();
        assert!(n.mu.abs() < 1e-8);
    }

    #[test]
    fn custom_cube_through_numeric_path() {
        // x³ has mean/variance finite and the generic dispatcher must route it
        let f = TestFunction::custom("cube", Cube);
        let m = step_moments(&f, 50, 100, 201, 3.0).unwrap();
        assert!(m.sigma2 > 0.0 && m.mu.is_finite());
    }

    #[test]
    fn parse_names() {
        assert_eq!("log".parse::<TestFunction>().unwrap(), TestFunction::Log1p);
        assert_eq!("SQUARE".parse::<TestFunction>().unwrap(), TestFunction::Square);
        assert!("cosine".parse::<TestFunction>().is_err());
    }

    #[test]
    fn nu4_matches_brute_force_on_toy_matrix() {
        let data = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 1.0, -1.0, 2.0, 0.5, -1.0, 0.0]);
        let n = 4.0;
        let cols: Vec<[f64; 2]> = (0..4).map(|j| [data[(0, j)], data[(1, j)]]).collect();
        let mut s = [[0.0; 2]; 2];
        for c in &cols {
            for i in 0..2 {
                for l in 0..2 {
                    s[i][l] += c[i] * c[l] / n;
                }
            }
        }
        let tr = s[0][0] + s[1][1];
        let tr2 = s[0][0] * s[0][0] + 2.0 * s[0][1] * s[1][0] + s[1][1] * s[1][1];
        let tau = tr2 - tr * tr / n;
        let norms: Vec<f64> = cols.iter().map(|c| c[0] * c[0] + c[1] * c[1]).collect();
        let mean = norms.iter().sum::<f64>() / n;
        let gamma = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        let omega2 = (0..2)
            .map(|i| (cols.iter().map(|c| c[i] * c[i]).sum::<f64>() / n).powi(2))
            .sum::<f64>();
        let expected = (3.0 + (gamma - 2.0 * tau) / omega2).max(1.0);
        assert!((estimate_nu4(&data).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn nu4_gaussian_concentrates_near_three() {
        let mut inside = 0;
        let trials = 200;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = DMatrix::from_fn(50, 5000, |_, _| StandardNormal.sample(&mut rng));
            let v = estimate_nu4(&data).unwrap();
            if (2.7..=3.3).contains(&v) {
                inside += 1;
            }
        }
        assert!(inside as f64 >= 0.95 * trials as f64, "{inside}/{trials}");
    }

    #[test]
    fn nu4_zero_data_is_degenerate() {
        let data = DMatrix::zeros(3, 10);
        assert!(matches!(estimate_nu4(&data), Err(Error::DegenerateData(_))));
    }
}
