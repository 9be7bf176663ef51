//! Almost-analytic extensions, Helffer-Sjöstrand quadrature for Hermitian
//! matrices, the eigendecomposition oracle, and divided differences.

mod divdiff;
mod jet;
mod testfn;

pub use divdiff::{divided_difference, DdLayout, DividedDifferences};
pub use jet::Jet;
pub use testfn::TestFunction;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c64, CMat, SmallSolver};
use std::f64::consts::PI;

/// Start of the transition region of [`cutoff`].
pub const CUTOFF_PLATEAU: f64 = 0.6;

/// Default imaginary width per unit support half-width. Paired with
/// [`CUTOFF_PLATEAU`] this keeps the 200x200 midpoint rule near 1e-6 at
/// order 8 for the standard bump.
pub const DELTA_Y_PER_WIDTH: f64 = 0.03;

/// `delta_y` for `f` from [`DELTA_Y_PER_WIDTH`].
pub fn default_delta_y(f: &TestFunction) -> f64 {
    let w = f.min_half_width();
    DELTA_Y_PER_WIDTH * if w.is_finite() { w } else { 1.0 }
}

/// Smooth even cutoff: 1 on `|t| <= CUTOFF_PLATEAU`, 0 on `|t| >= 1`.
/// Returns the value and the derivative.
pub fn cutoff(t: f64) -> (f64, f64) {
    let plateau = CUTOFF_PLATEAU;
    let a = t.abs();
    if a <= plateau {
        return (1.0, 0.0);
    }
    if a >= 1.0 {
        return (0.0, 0.0);
    }
    let p = 1.0 - a;
    let q = a - plateau;
    let ep = (-1.0 / p).exp();
    let eq = (-1.0 / q).exp();
    let s = ep + eq;
    let chi = ep / s;
    // d/da of ep/(ep+eq) with dep/da = -ep/p^2, deq/da = eq/q^2
    let dep = -ep / (p * p);
    let deq = eq / (q * q);
    let dchi = (dep * s - ep * (dep + deq)) / (s * s);
    (chi, dchi * t.signum())
}

#[derive(Debug, Clone)]
pub struct AlmostAnalyticExtension {
    pub f: TestFunction,
    pub order: usize,
    pub delta_y: f64,
    /// Empirical `sup |dbar f~| / |y|^n` over the support rectangle.
    pub c_bound: f64,
}

pub fn build_aae(f: &TestFunction, order: usize, delta_y: f64) -> Result<AlmostAnalyticExtension> {
    if order < 2 {
        return invalid(format!("almost-analytic order must be >= 2, got {order}"));
    }
    if !(delta_y > 0.0) {
        return invalid("imaginary cutoff width must be positive");
    }
    let mut aae = AlmostAnalyticExtension { f: f.clone(), order, delta_y, c_bound: 0.0 };
    let (x0, x1) = f.support();
    let mut c = 0.0f64;
    let m = 64;
    for i in 0..m {
        let x = x0 + (x1 - x0) * (i as f64 + 0.5) / m as f64;
        for j in 0..m {
            let y = delta_y * (j as f64 + 0.5) / m as f64;
            c = c.max(aae.dbar(c64::new(x, y)).norm() / y.powi(order as i32));
        }
    }
    aae.c_bound = c;
    Ok(aae)
}

impl AlmostAnalyticExtension {
    /// Support rectangle `(x0, x1, y0, y1)`.
    pub fn rect(&self) -> (f64, f64, f64, f64) {
        let (a, b) = self.f.support();
        (a, b, -self.delta_y, self.delta_y)
    }

    pub fn ext(&self, z: c64) -> c64 {
        let (chi, _) = cutoff(z.im / self.delta_y);
        if chi == 0.0 {
            return c64::new(0.0, 0.0);
        }
        let t = self.f.taylor(z.re, self.order);
        let iy = c64::new(0.0, z.im);
        let mut p = c64::new(1.0, 0.0);
        let mut s = c64::new(0.0, 0.0);
        for tr in t {
            s += p * tr;
            p *= iy;
        }
        s * chi
    }

    /// Closed-form `dbar f~ = (d_x + i d_y) f~ / 2`.
    pub fn dbar(&self, z: c64) -> c64 {
        let (chi, dchi) = cutoff(z.im / self.delta_y);
        if chi == 0.0 && dchi == 0.0 {
            return c64::new(0.0, 0.0);
        }
        let n = self.order;
        let t = self.f.taylor(z.re, n + 1);
        let iy = c64::new(0.0, z.im);
        let mut p = c64::new(1.0, 0.0);
        let mut s = c64::new(0.0, 0.0);
        for tr in t.iter().take(n + 1) {
            s += p * *tr;
            p *= iy;
        }
        // p == (iy)^(n+1) here; the top term needs (iy)^n
        let top = if z.im == 0.0 { c64::new(0.0, 0.0) } else { p / iy * ((n + 1) as f64 * t[n + 1]) };
        (top * chi + linalg::I * (dchi / self.delta_y) * s) * 0.5
    }
}

#[derive(Debug, Clone)]
pub struct ComplexQuadrature {
    pub nx: usize,
    pub ny: usize,
    pub nodes: Vec<c64>,
    pub weights: Vec<f64>,
}

/// Midpoint rule on the support rectangle. `ny` must be even so that no
/// node lands on the real axis.
pub fn build_quadrature(aae: &AlmostAnalyticExtension, nx: usize, ny: usize) -> Result<ComplexQuadrature> {
    if nx == 0 || ny == 0 || ny % 2 == 1 {
        return invalid(format!("quadrature needs nx >= 1 and even ny >= 2, got {nx}x{ny}"));
    }
    let (x0, x1, y0, y1) = aae.rect();
    if !(x1 > x0) {
        return invalid("test function has empty support");
    }
    let hx = (x1 - x0) / nx as f64;
    let hy = (y1 - y0) / ny as f64;
    let mut nodes = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            nodes.push(c64::new(x0 + (i as f64 + 0.5) * hx, y0 + (j as f64 + 0.5) * hy));
        }
    }
    Ok(ComplexQuadrature { nx, ny, weights: vec![hx * hy; nodes.len()], nodes })
}

/// Quadrature nodes with the combined weight `-(1/pi) w dbar f~`, dropping
/// nodes where the weight vanishes.
#[derive(Debug, Clone)]
pub struct HsRule {
    pub zeta: Vec<c64>,
    pub coef: Vec<c64>,
}

impl HsRule {
    pub fn new(aae: &AlmostAnalyticExtension, quad: &ComplexQuadrature) -> Self {
        let mut zeta = Vec::new();
        let mut coef = Vec::new();
        for (z, w) in quad.nodes.iter().zip(&quad.weights) {
            let d = aae.dbar(*z);
            if d != c64::new(0.0, 0.0) {
                zeta.push(*z);
                coef.push(d * (-w / PI));
            }
        }
        HsRule { zeta, coef }
    }

    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }

    /// `sum_i coef_i g(zeta_i)` with a deterministic pairwise reduction.
    pub fn integrate<F>(&self, g: F) -> c64
    where
        F: Fn(c64) -> c64 + Sync,
    {
        linalg::pairwise_sum(self.len(), 512, c64::new(0.0, 0.0), |r| {
            r.map(|i| self.coef[i] * g(self.zeta[i])).sum()
        })
    }
}

#[derive(Debug, Clone)]
pub struct HsOutput {
    pub value: CMat,
    /// `max |M - M^dagger|` before symmetrization.
    pub hermiticity_defect: f64,
}

pub fn hs_matrix_function(a: &CMat, aae: &AlmostAnalyticExtension, quad: &ComplexQuadrature) -> Result<HsOutput> {
    hs_with_rule(a, &HsRule::new(aae, quad))
}

/// As [`hs_matrix_function`] with a prepared rule.
pub fn hs_with_rule(a: &CMat, rule: &HsRule) -> Result<HsOutput> {
    let n = a.nrows();
    if a.ncols() != n {
        return invalid("matrix must be square");
    }
    let scale = linalg::max_abs(a).max(1.0);
    if linalg::hermiticity_defect(a) > 1e-12 * scale {
        return invalid("matrix is not Hermitian");
    }
    struct Acc(Result<Vec<c64>>);
    impl std::ops::Add for Acc {
        type Output = Acc;
        fn add(self, o: Acc) -> Acc {
            match (self.0, o.0) {
                (Ok(mut x), Ok(y)) => {
                    x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
                    Acc(Ok(x))
                }
                (Err(e), _) | (_, Err(e)) => Acc(Err(e)),
            }
        }
    }
    impl Clone for Acc {
        fn clone(&self) -> Self {
            Acc(self.0.clone())
        }
    }
    let acc = linalg::pairwise_sum(rule.len(), 256, Acc(Ok(vec![c64::new(0.0, 0.0); n * n])), |r| {
        let mut solver = SmallSolver::new(n);
        let mut res = linalg::zeros(n);
        let mut out = vec![c64::new(0.0, 0.0); n * n];
        for i in r {
            if let Err(e) = solver.factor_shifted(rule.zeta[i], a) {
                return Acc(Err(e));
            }
            solver.inverse_into(&mut res);
            let c = rule.coef[i];
            for q in 0..n {
                for p in 0..n {
                    out[q * n + p] += c * res[(p, q)];
                }
            }
        }
        Acc(Ok(out))
    });
    let flat = acc.0.map_err(|e| Error::Numerical(format!("resolvent solve failed: {e}")))?;
    let m = CMat::from_fn(n, n, |i, j| flat[j * n + i]);
    Ok(HsOutput { hermiticity_defect: linalg::hermiticity_defect(&m), value: linalg::hermitize(&m) })
}

#[derive(Debug, Clone)]
pub struct EigFunction {
    pub value: CMat,
    pub eigenvalues: Vec<f64>,
}

pub fn eig_matrix_function(a: &CMat, f: &TestFunction) -> Result<EigFunction> {
    let scale = linalg::max_abs(a).max(1.0);
    if linalg::hermiticity_defect(a) > 1e-12 * scale {
        return invalid("matrix is not Hermitian");
    }
    let (vals, u) = linalg::eigh(a)?;
    let n = vals.len();
    let fv: Vec<f64> = vals.iter().map(|&l| f.eval(l)).collect();
    let value = CMat::from_fn(n, n, |i, j| {
        let mut s = c64::new(0.0, 0.0);
        for k in 0..n {
            s += u[(i, k)] * fv[k] * u[(j, k)].conj();
        }
        s
    });
    Ok(EigFunction { value, eigenvalues: vals })
}

/// `sum f(lambda)` over the spectrum.
pub fn trace_function(a: &CMat, f: &TestFunction) -> Result<f64> {
    Ok(linalg::eigvalsh(a)?.into_iter().map(|l| f.eval(l)).sum())
}
