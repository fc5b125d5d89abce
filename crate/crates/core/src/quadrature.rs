//! Gauss–Legendre rules, composite real quadrature with panel doubling, and
//! contour quadrature around rectangles in the complex plane.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are the roots of `P_n`, found by Newton iteration from the
    /// Tricomi initial guesses. Returned in ascending order.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrate over `[a, b]` split into `panels` equal pieces.
    pub fn composite<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for k in 0..panels {
            let lo = a + h * k as f64;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre with panel doubling until two successive
/// estimates differ by less than `tol`.
#[derive(Debug, Clone)]
pub struct AdaptiveQuadrature {
    rule: GaussLegendre,
    initial_panels: usize,
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for AdaptiveQuadrature {
    fn default() -> Self {
        Self::new(1e-9, 16)
    }
}

impl AdaptiveQuadrature {
    pub fn new(tol: f64, max_refinements: usize) -> Self {
        Self {
            rule: GaussLegendre::new(20),
            initial_panels: 4,
            tol,
            max_refinements,
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<f64> {
        let mut panels = self.initial_panels;
        let mut prev = self.rule.composite(&mut f, a, b, panels);
        let mut change = f64::INFINITY;
        for _ in 0..self.max_refinements {
            panels *= 2;
            let next = self.rule.composite(&mut f, a, b, panels);
            change = (next - prev).abs();
            if !next.is_finite() {
                break;
            }
            if change < self.tol {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::QuadratureFailure {
            tol: self.tol,
            refinements: self.max_refinements,
            last_change: change,
        })
    }

    /// Integrate `f` over `[a, b]` through `x = a + (b−a)·sin²θ`. The Jacobian
    /// `2·√((x−a)(b−x))` is passed to `f` so that integrands carrying a
    /// `√((x−a)(b−x))` factor or its reciprocal can cancel it analytically.
    pub fn integrate_sin2<F: FnMut(f64, f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<f64> {
        let w = b - a;
        self.integrate(
            |theta| {
                let (s, c) = theta.sin_cos();
                let x = a + w * s * s;
                let jac = 2.0 * w * s * c;
                f(x, jac)
            },
            0.0,
            0.5 * PI,
        )
    }
}

/// An axis-aligned rectangle traversed anticlockwise, starting from its
/// lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x_left: f64,
    pub x_right: f64,
    pub half_height: f64,
}

impl Rectangle {
    fn corners(&self) -> [Complex64; 5] {
        let e = self.half_height;
        [
            Complex64::new(self.x_left, -e),
            Complex64::new(self.x_right, -e),
            Complex64::new(self.x_right, e),
            Complex64::new(self.x_left, e),
            Complex64::new(self.x_left, -e),
        ]
    }

    /// Distance from the rectangle boundary to a real interval it encloses.
    pub fn clearance(&self, a: f64, b: f64) -> f64 {
        (a - self.x_left).min(self.x_right - b).min(self.half_height)
    }
}

/// Settings for contour quadrature: composite Gauss–Legendre with a fixed
/// number of nodes per side, doubling until successive estimates agree.
#[derive(Debug, Clone)]
pub struct ContourQuadrature {
    rule: GaussLegendre,
    initial_panels: usize,
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for ContourQuadrature {
    fn default() -> Self {
        Self {
            rule: GaussLegendre::new(32),
            initial_panels: 8,
            tol: 1e-8,
            max_refinements: 8,
        }
    }
}

impl ContourQuadrature {
    pub fn nodes_per_side(&self) -> usize {
        self.rule.len() * self.initial_panels
    }

    /// `(1/2πi) ∮ g(z) dz` around `rect`.
    pub fn integrate<G: FnMut(Complex64) -> Complex64>(&self, rect: &Rectangle, mut g: G) -> Result<Complex64> {
        self.refine(|panels| Ok(self.pass(rect, panels, &mut g)))
    }

    /// `(1/2πi) ∮ pre(z)·{log(arg(z)) + extra(z)} dz` with the logarithm
    /// continued along the contour instead of taken on the principal branch.
    /// Fails with [`Error::BranchCrossing`] if `arg(z)` winds around zero.
    pub fn integrate_log<P, A, X>(&self, rect: &Rectangle, mut pre: P, mut arg: A, mut extra: X) -> Result<Complex64>
    where
        P: FnMut(Complex64) -> Complex64,
        A: FnMut(Complex64) -> Complex64,
        X: FnMut(Complex64) -> Complex64,
    {
        self.refine(|panels| {
            let mut tracker = ArgTracker::default();
            let value = self.pass(rect, panels, &mut |z| {
                let w = arg(z);
                let log = tracker.log(w);
                pre(z) * (log + extra(z))
            });
            tracker.check_closed()?;
            Ok(value)
        })
    }

    fn refine<F: FnMut(usize) -> Result<Complex64>>(&self, mut pass: F) -> Result<Complex64> {
        let mut panels = self.initial_panels;
        let mut prev = pass(panels)?;
        let mut change = f64::INFINITY;
        for _ in 0..self.max_refinements {
            panels *= 2;
            let next = pass(panels)?;
            change = (next - prev).norm();
            if change < self.tol {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::QuadratureFailure {
            tol: self.tol,
            refinements: self.max_refinements,
            last_change: change,
        })
    }

    // Nodes are visited in contour order, which `ArgTracker` relies on.
    fn pass<G: FnMut(Complex64) -> Complex64>(&self, rect: &Rectangle, panels: usize, g: &mut G) -> Complex64 {
        let corners = rect.corners();
        let mut total = Complex64::new(0.0, 0.0);
        for side in 0..4 {
            let z0 = corners[side];
            let z1 = corners[side + 1];
            let dz = (z1 - z0) / panels as f64;
            for k in 0..panels {
                let mid = z0 + dz * (k as f64 + 0.5);
                let mut s = Complex64::new(0.0, 0.0);
                for (x, w) in self.rule.nodes().iter().zip(self.rule.weights()) {
                    s += g(mid + dz * (0.5 * x)) * *w;
                }
                total += s * dz * 0.5;
            }
        }
        total / Complex64::new(0.0, 2.0 * PI)
    }
}

/// Continuous argument of a sequence of complex values.
#[derive(Debug, Default)]
struct ArgTracker {
    first: Option<f64>,
    last: f64,
    offset: f64,
}

impl ArgTracker {
    fn log(&mut self, w: Complex64) -> Complex64 {
        let raw = w.arg();
        match self.first {
            None => {
                self.first = Some(raw);
            }
            Some(_) => {
                let mut d = raw + self.offset - self.last;
                while d > PI {
                    self.offset -= 2.0 * PI;
                    d -= 2.0 * PI;
                }
                while d < -PI {
                    self.offset += 2.0 * PI;
                    d += 2.0 * PI;
                }
            }
        }
        self.last = raw + self.offset;
        Complex64::new(w.norm().ln(), self.last)
    }

    fn check_closed(&self) -> Result<()> {
        let Some(first) = self.first else {
            return Ok(());
        };
        let mut closing = first - self.last;
        closing -= 2.0 * PI * (closing / (2.0 * PI)).round();
        let total = self.last + closing - first;
        if total.abs() > PI {
            return Err(Error::BranchCrossing {
                winding: total / (2.0 * PI),
            });
        }
        Ok(())
    }
}
