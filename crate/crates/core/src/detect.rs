//! Whether a test function can see a hypothesized covariance change, and at
//! what delay order.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::TestFunction;
use crate::quadrature::{ContourQuadrature, Rectangle};
use crate::rmt::{self, SpectralParams};

/// Values closer to zero than this count as zero.
pub const NONZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Matrices,
    Direct,
}

/// Normalized traces of `Σ0⁻¹Σ1` and its square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeProfile {
    pub tau1: f64,
    pub tau2: f64,
    pub source: ProfileSource,
}

impl ChangeProfile {
    pub fn direct(tau1: f64, tau2: f64) -> Result<Self> {
        if !(tau1 > 0.0 && tau2 > 0.0 && tau1.is_finite() && tau2.is_finite()) {
            return Err(Error::InvalidParams(format!("tau1 = {tau1}, tau2 = {tau2} must be positive")));
        }
        Ok(Self {
            tau1,
            tau2,
            source: ProfileSource::Direct,
        })
    }
}

pub fn change_profile(sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<ChangeProfile> {
    let p = sigma0.nrows();
    if p == 0 || !sigma0.is_square() || sigma1.shape() != sigma0.shape() {
        return Err(Error::ShapeMismatch(format!(
            "covariances must be square and equal-sized, got {:?} and {:?}",
            sigma0.shape(),
            sigma1.shape()
        )));
    }
    let chol = nalgebra::Cholesky::new(sigma0.clone())
        .ok_or_else(|| Error::SingularBaseline("pre-change covariance is not positive definite".into()))?;
    let m = chol.solve(sigma1);
    let pf = p as f64;
    let tau1 = m.trace() / pf;
    let tau2 = m.component_mul(&m.transpose()).sum() / pf;
    Ok(ChangeProfile {
        tau1,
        tau2,
        source: ProfileSource::Matrices,
    })
}

/// Rectangle enclosing the support but not the point −1. The left side sits
/// at −0.5 so that the origin is enclosed as well.
pub fn default_contour(params: &SpectralParams) -> Rectangle {
    let e = params.edges();
    Rectangle {
        x_left: -0.5,
        x_right: e.b + 0.5 * e.width() + 0.5,
        half_height: 0.5,
    }
}

fn laurent_a(tau1: f64, params: &SpectralParams) -> (f64, f64) {
    let (c1, c2) = (params.c1(), params.c2());
    let a1 = (1.0 - tau1) * c2 / (1.0 - c1);
    let a2 = c2 * (1.0 - tau1) * (2.0 + c2 * (1.0 - c1) * (1.0 + tau1)) / (2.0 * (1.0 - c1).powi(3));
    (a1, a2)
}

fn check_tau1(tau1: f64) -> Result<()> {
    if tau1 > 0.0 && tau1.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("tau1 = {tau1} must be positive")))
    }
}

/// First-order drift integral `(1/2πi)∮ f′(z) log{τ1 − (1−τ1) z m̄(z)} dz`.
pub fn i1(f: &TestFunction, tau1: f64, params: &SpectralParams) -> Result<f64> {
    check_tau1(tau1)?;
    let (a1, a2) = laurent_a(tau1, params);
    let log_part = || -> Result<f64> {
        let (m, _) = rmt::mbar_at_minus_one(params)?;
        Ok(-(tau1 + (1.0 - tau1) * m).ln())
    };
    match f {
        TestFunction::Linear => Ok(a1),
        TestFunction::Square => Ok(2.0 * a2),
        TestFunction::Log1p => log_part(),
        TestFunction::Mix => Ok(a1 + log_part()?),
        TestFunction::Custom { .. } => i1_numeric(f, tau1, params),
    }
}

/// [`i1`] by contour quadrature with a continuously tracked logarithm.
pub fn i1_numeric(f: &TestFunction, tau1: f64, params: &SpectralParams) -> Result<f64> {
    check_tau1(tau1)?;
    let rect = default_contour(params);
    let q = ContourQuadrature::default();
    let mut failure = None;
    let mut mbar = |z: Complex64| match rmt::stieltjes_mbar(z, params) {
        Ok(m) => m,
        Err(e) => {
            failure.get_or_insert(e);
            Complex64::new(f64::NAN, f64::NAN)
        }
    };
    let v = q.integrate_log(
        &rect,
        |z| f.d1_complex(z),
        |z| tau1 - (1.0 - tau1) * z * mbar(z),
        |_| Complex64::new(0.0, 0.0),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(v?.re)
}

/// Second-order drift integral `(1/2πi)∮ f′(z){log(z m̄) + z m̄} dz`.
pub fn i2(f: &TestFunction, params: &SpectralParams) -> Result<f64> {
    let (c1, c2) = (params.c1(), params.c2());
    let square = -c2 * c2 / ((1.0 - c1) * (1.0 - c1));
    let log_part = || -> Result<f64> {
        let (m, _) = rmt::mbar_at_minus_one(params)?;
        Ok(-(m.ln() - m + 1.0))
    };
    match f {
        TestFunction::Linear => Ok(0.0),
        TestFunction::Square => Ok(square),
        TestFunction::Log1p => log_part(),
        TestFunction::Mix => log_part(),
        TestFunction::Custom { .. } => i2_numeric(f, params),
    }
}

/// [`i2`] by contour quadrature with a continuously tracked logarithm.
pub fn i2_numeric(f: &TestFunction, params: &SpectralParams) -> Result<f64> {
    let rect = default_contour(params);
    let q = ContourQuadrature::default();
    let zm = |z: Complex64| rmt::stieltjes_mbar(z, params).map(|m| z * m);
    // evaluate once per node and share between the log and the additive term
    let mut failure = None;
    let mut eval = |z: Complex64| match zm(z) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            Complex64::new(f64::NAN, f64::NAN)
        }
    };
    let v = q.integrate_log(&rect, |z| f.d1_complex(z), &mut eval, |z| zm(z).unwrap_or(Complex64::new(f64::NAN, 0.0)));
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(v?.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    /// `|k* − n| < n/10`
    Early,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayOrder {
    #[serde(rename = "log n")]
    LogN,
    #[serde(rename = "n^(1/2-delta)")]
    SubRootN,
    #[serde(rename = "sqrt(n)")]
    RootN,
    #[serde(rename = "undetectable by this f")]
    BlindFunction,
    #[serde(rename = "undetectable")]
    Undetectable,
}

/// Detectability report, serialized as the public JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub tau1: f64,
    pub tau2: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    pub regime: Timing,
    pub predicted_order: DelayOrder,
    pub timing_rule: String,
}

pub fn delay_regime(
    profile: &ChangeProfile,
    f: &TestFunction,
    k_star: usize,
    n: usize,
    params: &SpectralParams,
) -> Result<DelayReport> {
    let i1v = i1(f, profile.tau1, params)?;
    let i2v = i2(f, params)?;
    let regime = if (k_star as f64 - n as f64).abs() < n as f64 / 10.0 {
        Timing::Early
    } else {
        Timing::Late
    };
    let shifted = |v: f64| (v - 1.0).abs() > NONZERO_TOL;
    let nonzero = |v: f64| v.abs() > NONZERO_TOL;
    let predicted_order = if !shifted(profile.tau1) && !shifted(profile.tau2) {
        DelayOrder::Undetectable
    } else if shifted(profile.tau1) && nonzero(i1v) {
        DelayOrder::LogN
    } else if !shifted(profile.tau1) && shifted(profile.tau2) && nonzero(i2v) {
        match regime {
            Timing::Early => DelayOrder::SubRootN,
            Timing::Late => DelayOrder::RootN,
        }
    } else {
        DelayOrder::BlindFunction
    };
    Ok(DelayReport {
        tau1: profile.tau1,
        tau2: profile.tau2,
        i1: i1v,
        i2: i2v,
        regime,
        predicted_order,
        timing_rule: "early if |k* - n| < n/10, late otherwise".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::AnalyticFunction;

    fn params(c1: f64, c2: f64) -> SpectralParams {
        SpectralParams::new(c1, c2, 3.0).unwrap()
    }

    /// Polynomials and logs re-expressed as custom functions to force the
    /// contour path.
    struct AsCustom(TestFunction);

    impl AnalyticFunction for AsCustom {
        fn value(&self, x: f64) -> f64 {
            self.0.value(x)
        }
        fn d1(&self, x: f64) -> f64 {
            self.0.d1(x)
        }
        fn d2(&self, x: f64) -> f64 {
            self.0.d2(x)
        }
        fn d1_complex(&self, z: Complex64) -> Complex64 {
            self.0.d1_complex(z)
        }
    }

    fn custom(f: TestFunction) -> TestFunction {
        let name = format!("{}-contour", f.name());
        TestFunction::custom(name, AsCustom(f))
    }

    #[test]
    fn profile_examples() {
        let p = 100;
        let eye = DMatrix::<f64>::identity(p, p);
        let s = change_profile(&eye, &(&eye * 1.5)).unwrap();
        assert!((s.tau1 - 1.5).abs() < 1e-12 && (s.tau2 - 2.25).abs() < 1e-12);
        let toeplitz = DMatrix::from_fn(p, p, |i, j| 2.0 * 0.5f64.powi((i as i32 - j as i32).abs()));
        assert!((change_profile(&eye, &toeplitz).unwrap().tau1 - 2.0).abs() < 1e-12);
        let mut spike = &eye * 1.5;
        for i in 0..5 {
            spike[(i, i)] += 2.0;
        }
        assert!((change_profile(&eye, &spike).unwrap().tau1 - 1.6).abs() < 1e-12);
        let singular = DMatrix::<f64>::zeros(p, p);
        assert!(change_profile(&singular, &eye).is_err());
    }

    #[test]
    fn matrix_profile_satisfies_jensen() {
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0);
        let s1 = &a * a.transpose() + DMatrix::identity(6, 6);
        let pr = change_profile(&DMatrix::identity(6, 6), &s1).unwrap();
        assert!(pr.tau2 >= pr.tau1 * pr.tau1);
    }

    #[test]
    fn closed_forms_match_contour() {
        for &(c1, c2) in &[(0.5, 0.5), (0.2, 2.0), (0.8, 0.3), (0.5, 1.0), (0.2, 0.3)] {
            let pr = params(c1, c2);
            for tau1 in [1.2, 0.7] {
                for f in TestFunction::NAMED {
                    let closed = i1(&f, tau1, &pr).unwrap();
                    let numeric = i1_numeric(&custom(f.clone()), tau1, &pr).unwrap();
                    assert!((closed - numeric).abs() < 1e-6, "I1 {f} ({c1},{c2},{tau1}): {closed} vs {numeric}");
                }
            }
            for f in TestFunction::NAMED {
                let closed = i2(&f, &pr).unwrap();
                let numeric = i2_numeric(&custom(f.clone()), &pr).unwrap();
                assert!((closed - numeric).abs() < 1e-6, "I2 {f} ({c1},{c2}): {closed} vs {numeric}");
            }
        }
    }

    #[test]
    fn no_mean_shift_means_no_first_order_drift() {
        let pr = params(1.0 / 3.0, 0.5);
        for f in TestFunction::NAMED {
            assert_eq!(i1(&f, 1.0, &pr).unwrap(), 0.0);
            assert!(i1_numeric(&custom(f.clone()), 1.0, &pr).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn log_drift_sign() {
        let pr = params(0.4, 0.6);
        assert!(i1(&TestFunction::Log1p, 1.3, &pr).unwrap() < 0.0);
    }

    #[test]
    fn regime_examples() {
        let pr = params(2.0 / 3.0, 2.0 / 3.0);
        let n = 300;
        let late = 450;
        let r = delay_regime(&ChangeProfile::direct(1.2, 1.44).unwrap(), &TestFunction::Log1p, late, n, &pr).unwrap();
        assert_eq!(r.predicted_order, DelayOrder::LogN);
        assert_eq!(r.regime, Timing::Late);
        let flat = ChangeProfile::direct(1.0, 1.0).unwrap();
        for f in TestFunction::NAMED {
            let r = delay_regime(&flat, &f, late, n, &pr).unwrap();
            assert_eq!(r.predicted_order, DelayOrder::Undetectable);
        }
        let var_only = ChangeProfile::direct(1.0, 1.5).unwrap();
        let r = delay_regime(&var_only, &TestFunction::Linear, late, n, &pr).unwrap();
        assert_eq!(r.predicted_order, DelayOrder::BlindFunction);
        let r = delay_regime(&var_only, &TestFunction::Square, late, n, &pr).unwrap();
        assert_eq!(r.predicted_order, DelayOrder::RootN);
        let r = delay_regime(&var_only, &TestFunction::Square, 310, n, &pr).unwrap();
        assert_eq!(r.predicted_order, DelayOrder::SubRootN);
    }

    #[test]
    fn report_json_keys() {
        let pr = params(0.5, 0.5);
        let r = delay_regime(&ChangeProfile::direct(1.0, 1.5).unwrap(), &TestFunction::Square, 600, 300, &pr).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["tau1", "tau2", "I1", "I2", "regime", "predicted_order"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["predicted_order"], "sqrt(n)");
        assert_eq!(v["regime"], "late");
    }
}
