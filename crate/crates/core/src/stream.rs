//! Incremental Fisher matrix `S1⁻¹ S2,k` over a stream of observations.
//!
//! The baseline is frozen at initialization. Every later observation enters the
//! monitoring scatter, which is also kept in whitened form `W = L⁻¹·scatter·L⁻ᵀ`
//! (with `S1 = LLᵀ`), so that the Fisher eigenvalues are those of `W / m` for
//! `m` monitoring observations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::TestFunction;

/// Eigenvalues below this are treated as genuine numerical breakdown rather
/// than roundoff.
pub const EIGEN_FLOOR: f64 = -1e-10;

/// How a spectral statistic is evaluated from the stream state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LssPath {
    /// Full symmetric eigendecomposition. Works for any function.
    Eigen,
    /// Running traces for `x` and `x²`, a log-determinant for `log(1+x)` and
    /// the mix; falls back to eigenvalues for custom functions.
    Fast,
}

#[derive(Debug, Clone)]
pub struct StreamState {
    p: usize,
    k1: usize,
    chol: DMatrix<f64>,
    s1_inv: DMatrix<f64>,
    scatter: DMatrix<f64>,
    whitened: DMatrix<f64>,
    tr_w: f64,
    tr_w2: f64,
    k: usize,
    last_lss: f64,
    f: TestFunction,
}

impl StreamState {
    /// Build the baseline from the first `k1` columns of `history` and the
    /// monitoring scatter from the remaining columns.
    pub fn init(history: &DMatrix<f64>, k1: usize, f: TestFunction) -> Result<Self> {
        let (p, n) = history.shape();
        if p == 0 {
            return Err(Error::ShapeMismatch("history has no rows".into()));
        }
        if k1 <= p {
            return Err(Error::SingularBaseline(format!("k1 = {k1} must exceed p = {p}")));
        }
        if n <= k1 {
            return Err(Error::ShapeMismatch(format!(
                "history has {n} observations, need more than k1 = {k1}"
            )));
        }
        if let Some((idx, _)) = history.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonfiniteInput(idx % p));
        }
        let base = history.columns(0, k1);
        let s1 = &base * base.transpose() / k1 as f64;
        let chol = nalgebra::Cholesky::new(s1)
            .ok_or_else(|| Error::SingularBaseline("Cholesky factorization failed".into()))?
            .l();
        let l_inv = chol
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::SingularBaseline("triangular inverse failed".into()))?;
        let s1_inv = l_inv.transpose() * &l_inv;

        let rest = history.columns(k1, n - k1);
        let scatter = &rest * rest.transpose();
        let white = &l_inv * rest;
        let whitened = &white * white.transpose();
        let tr_w = whitened.trace();
        let tr_w2 = whitened.iter().map(|v| v * v).sum();

        let mut state = Self {
            p,
            k1,
            chol,
            s1_inv,
            scatter,
            whitened,
            tr_w,
            tr_w2,
            k: n,
            last_lss: 0.0,
            f,
        };
        state.last_lss = state.lss_with(&state.f, LssPath::Eigen)?;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn k1(&self) -> usize {
        self.k1
    }

    /// Current time index (total observations seen).
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of observations in the monitoring scatter.
    pub fn monitoring_count(&self) -> usize {
        self.k - self.k1
    }

    pub fn last_lss(&self) -> f64 {
        self.last_lss
    }

    pub fn test_function(&self) -> &TestFunction {
        &self.f
    }

    pub fn baseline_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn baseline_inverse(&self) -> &DMatrix<f64> {
        &self.s1_inv
    }

    /// Unnormalized monitoring scatter `Σ yᵢyᵢᵀ`.
    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    /// Add an observation without evaluating any statistic.
    pub fn observe(&mut self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.p {
            return Err(Error::ShapeMismatch(format!(
                "observation has length {}, expected {}",
                y.len(),
                self.p
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonfiniteInput(i));
        }
        let w = self
            .chol
            .solve_lower_triangular(y)
            .ok_or_else(|| Error::SingularBaseline("triangular solve failed".into()))?;
        let ww = w.norm_squared();
        let quad = w.dot(&(&self.whitened * &w));
        self.tr_w2 += 2.0 * quad + ww * ww;
        self.tr_w += ww;
        self.whitened.ger(1.0, &w, &w, 1.0);
        self.scatter.ger(1.0, y, y, 1.0);
        self.k += 1;
        Ok(())
    }

    /// Eigen-path step: returns `Tr f(F_k) − Tr f(F_{k−1})`.
    pub fn push(&mut self, y: &DVector<f64>) -> Result<f64> {
        self.push_via(y, LssPath::Eigen)
    }

    /// O(p²) step for `x` and `x²` from running traces.
    pub fn push_fast_trace(&mut self, y: &DVector<f64>) -> Result<f64> {
        if !matches!(self.f, TestFunction::Linear | TestFunction::Square) {
            return Err(Error::UnsupportedKind(self.f.name().to_string()));
        }
        self.push_via(y, LssPath::Fast)
    }

    pub fn push_via(&mut self, y: &DVector<f64>, path: LssPath) -> Result<f64> {
        self.observe(y)?;
        let lss = self.lss_with(&self.f, path)?;
        let diff = lss - self.last_lss;
        self.last_lss = lss;
        Ok(diff)
    }

    /// Fisher eigenvalues, descending, clamped at zero.
    pub fn eigenvalues_fisher(&self) -> Result<Vec<f64>> {
        let m = self.monitoring_count() as f64;
        let eig = nalgebra::SymmetricEigen::new(&self.whitened / m);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        for v in vals.iter_mut() {
            if *v < EIGEN_FLOOR {
                return Err(Error::NumericalBreakdown(*v));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        vals.sort_by(|a, b| b.total_cmp(a));
        Ok(vals)
    }

    /// `Tr f(F_k)` at the current state.
    pub fn lss_with(&self, f: &TestFunction, path: LssPath) -> Result<f64> {
        let m = self.monitoring_count() as f64;
        match (path, f) {
            (LssPath::Fast, TestFunction::Linear) => Ok(self.tr_w / m),
            (LssPath::Fast, TestFunction::Square) => Ok(self.tr_w2 / (m * m)),
            (LssPath::Fast, TestFunction::Log1p) => self.log_det_shifted(),
            (LssPath::Fast, TestFunction::Mix) => Ok(self.tr_w / m + self.log_det_shifted()?),
            _ => Ok(lss(&self.eigenvalues_fisher()?, f)),
        }
    }

    /// `Tr f(F_k)` for several functions, sharing one log-determinant or one
    /// eigendecomposition between them.
    pub fn lss_many(&self, fs: &[TestFunction], path: LssPath) -> Result<Vec<f64>> {
        let m = self.monitoring_count() as f64;
        let mut log_det = None;
        let mut eigs = None;
        let mut out = Vec::with_capacity(fs.len());
        for f in fs {
            let v = match (path, f) {
                (LssPath::Fast, TestFunction::Linear) => self.tr_w / m,
                (LssPath::Fast, TestFunction::Square) => self.tr_w2 / (m * m),
                (LssPath::Fast, TestFunction::Log1p | TestFunction::Mix) => {
                    let ld = match log_det {
                        Some(v) => v,
                        None => *log_det.insert(self.log_det_shifted()?),
                    };
                    if matches!(f, TestFunction::Mix) {
                        self.tr_w / m + ld
                    } else {
                        ld
                    }
                }
                _ => {
                    if eigs.is_none() {
                        eigs = Some(self.eigenvalues_fisher()?);
                    }
                    lss(eigs.as_deref().unwrap_or_default(), f)
                }
            };
            out.push(v);
        }
        Ok(out)
    }

    /// `log det(I + F_k) = Σ log(1 + λᵢ)` from a Cholesky factor.
    fn log_det_shifted(&self) -> Result<f64> {
        let m = self.monitoring_count() as f64;
        let mut a = &self.whitened / m;
        for i in 0..self.p {
            a[(i, i)] += 1.0;
        }
        let chol = nalgebra::Cholesky::new(a).ok_or(Error::NumericalBreakdown(f64::NAN))?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }
}

/// `Σ f(λᵢ)`.
pub fn lss(eigs: &[f64], f: &TestFunction) -> f64 {
    f.trace(eigs)
}
