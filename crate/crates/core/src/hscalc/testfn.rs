//! Compactly supported smooth test functions with exact derivatives.

use super::jet::Jet;
use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `height * exp(1 - 1/(1 - u^2))`, `u = (x - center) / half_width`.
    Bump { center: f64, half_width: f64, height: f64 },
    /// Gaussian of width `sigma` times a bump of half-width `half_width`.
    GaussBump { center: f64, sigma: f64, half_width: f64, height: f64 },
    /// Finite linear combination.
    Sum { terms: Vec<(f64, TestFunction)> },
}

impl TestFunction {
    pub fn bump(center: f64, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return invalid("bump half-width must be positive");
        }
        Ok(TestFunction::Bump { center, half_width, height: 1.0 })
    }

    pub fn gauss_bump(center: f64, sigma: f64, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && sigma > 0.0) {
            return invalid("gauss-bump widths must be positive");
        }
        Ok(TestFunction::GaussBump { center, sigma, half_width, height: 1.0 })
    }

    pub fn zero() -> Self {
        TestFunction::Sum { terms: vec![] }
    }

    pub fn combine(terms: Vec<(f64, TestFunction)>) -> Self {
        TestFunction::Sum { terms }
    }

    pub fn scaled(&self, s: f64) -> Self {
        TestFunction::Sum { terms: vec![(s, self.clone())] }
    }

    /// Closed support interval; empty combinations report `(0, 0)`.
    pub fn support(&self) -> (f64, f64) {
        match self {
            TestFunction::Bump { center, half_width, .. } | TestFunction::GaussBump { center, half_width, .. } => {
                (center - half_width, center + half_width)
            }
            TestFunction::Sum { terms } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (_, t) in terms {
                    let (a, b) = t.support();
                    if a < b {
                        lo = lo.min(a);
                        hi = hi.max(b);
                    }
                }
                if lo > hi {
                    (0.0, 0.0)
                } else {
                    (lo, hi)
                }
            }
        }
    }

    /// `max |s|` over the support.
    pub fn support_radius(&self) -> f64 {
        let (a, b) = self.support();
        a.abs().max(b.abs())
    }

    /// Smallest half-width among the bumps making up `f`; sets the scale of
    /// its derivatives.
    pub fn min_half_width(&self) -> f64 {
        match self {
            TestFunction::Bump { half_width, .. } | TestFunction::GaussBump { half_width, .. } => *half_width,
            TestFunction::Sum { terms } => terms.iter().map(|(_, t)| t.min_half_width()).fold(f64::INFINITY, f64::min),
        }
    }

    /// Taylor coefficients `f^(k)(x)/k!` for `k = 0..=order`.
    pub fn taylor(&self, x: f64, order: usize) -> Vec<f64> {
        match *self {
            TestFunction::Bump { center, half_width, height } => {
                let u0 = (x - center) / half_width;
                // beyond the underflow of exp(1 - 1/(1-u^2)) every Taylor
                // coefficient is 0 in double precision
                if u0.abs() >= 1.0 || 1.0 - 1.0 / (1.0 - u0 * u0) < -740.0 {
                    return vec![0.0; order + 1];
                }
                let u = Jet::affine(u0, 1.0 / half_width, order);
                let w = Jet::constant(1.0, order).sub(&u.mul(&u));
                let g = w.recip().scale(-1.0).add_const(1.0);
                g.exp().scale(height).c
            }
            TestFunction::GaussBump { center, sigma, half_width, height } => {
                let u0 = (x - center) / half_width;
                // beyond the underflow of exp(1 - 1/(1-u^2)) every Taylor
                // coefficient is 0 in double precision
                if u0.abs() >= 1.0 || 1.0 - 1.0 / (1.0 - u0 * u0) < -740.0 {
                    return vec![0.0; order + 1];
                }
                let u = Jet::affine(u0, 1.0 / half_width, order);
                let w = Jet::constant(1.0, order).sub(&u.mul(&u));
                let t = Jet::affine(x - center, 1.0, order);
                let g = w
                    .recip()
                    .scale(-1.0)
                    .add_const(1.0)
                    .sub(&t.mul(&t).scale(0.5 / (sigma * sigma)));
                g.exp().scale(height).c
            }
            TestFunction::Sum { ref terms } => {
                let mut out = vec![0.0; order + 1];
                for (a, t) in terms {
                    for (o, v) in out.iter_mut().zip(t.taylor(x, order)) {
                        *o += a * v;
                    }
                }
                out
            }
        }
    }

    /// Derivatives `f^(k)(x)`.
    pub fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        Jet { c: self.taylor(x, order) }.derivatives()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.taylor(x, 0)[0]
    }

    /// Radius on which the Taylor series at `x` is trusted: the distance to
    /// the nearest support edge (where the bump has its essential
    /// singularity), capped by the Gaussian width.
    pub fn taylor_radius(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Bump { center, half_width, .. } => {
                let u = (x - center) / half_width;
                half_width * (1.0 - u.abs()).abs()
            }
            TestFunction::GaussBump { center, sigma, half_width, .. } => {
                let u = (x - center) / half_width;
                (half_width * (1.0 - u.abs()).abs()).min(4.0 * sigma)
            }
            TestFunction::Sum { ref terms } => terms
                .iter()
                .map(|(_, t)| t.taylor_radius(x))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Short human-readable descriptor for result metadata.
    pub fn describe(&self) -> String {
        match self {
            TestFunction::Bump { center, half_width, height } => {
                format!("bump(center={center}, half_width={half_width}, height={height})")
            }
            TestFunction::GaussBump { center, sigma, half_width, height } => {
                format!("gauss_bump(center={center}, sigma={sigma}, half_width={half_width}, height={height})")
            }
            TestFunction::Sum { terms } => {
                let parts: Vec<String> = terms.iter().map(|(a, t)| format!("{a}*{}", t.describe())).collect();
                format!("sum[{}]", parts.join(" + "))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> Vec<TestFunction> {
        vec![
            TestFunction::bump(0.0, 1.0).unwrap(),
            TestFunction::bump(0.3, 0.45).unwrap(),
            TestFunction::gauss_bump(0.1, 0.2, 0.7).unwrap(),
            TestFunction::combine(vec![
                (0.5, TestFunction::bump(-0.2, 0.5).unwrap()),
                (2.0, TestFunction::gauss_bump(0.3, 0.1, 0.4).unwrap()),
            ]),
        ]
    }

    #[test]
    fn vanishes_outside_support() {
        for f in fixtures() {
            let (a, b) = f.support();
            for x in [a - 1.0, a - 1e-9, a, b, b + 1e-9, b + 3.0] {
                assert!(f.taylor(x, 9).iter().all(|&v| v == 0.0), "{x}");
            }
        }
        assert_eq!(TestFunction::zero().eval(0.1), 0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        for f in fixtures() {
            let (a, b) = f.support();
            for s in 0..20 {
                let x = a + (b - a) * (0.1 + 0.8 * s as f64 / 19.0);
                let d = f.derivatives(x, 8);
                let h = 2e-3 * f.taylor_radius(x).min(1.0);
                for r in 0..8 {
                    let g = |t: f64| f.derivatives(t, r)[r];
                    // fourth-order central stencil, one Richardson step
                    let st = |h: f64| (g(x - 2.0 * h) - 8.0 * g(x - h) + 8.0 * g(x + h) - g(x + 2.0 * h)) / (12.0 * h);
                    let (f1, f2) = (st(h), st(h / 2.0));
                    let fd = f2 + (f2 - f1) / 15.0;
                    let scale = d[r + 1].abs().max(1e-3 * d.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    assert!((fd - d[r + 1]).abs() <= 1e-5 * scale.max(1e-12), "order {r} at {x}: {fd} vs {}", d[r + 1]);
                }
            }
        }
    }

    #[test]
    fn bump_peak_is_height() {
        let f = TestFunction::Bump { center: 0.2, half_width: 0.5, height: 3.0 };
        assert!((f.eval(0.2) - 3.0).abs() < 1e-15);
        assert!(f.eval(0.2 + 0.49) > 0.0);
    }

    #[test]
    fn invalid_widths() {
        assert!(TestFunction::bump(0.0, 0.0).is_err());
        assert!(TestFunction::gauss_bump(0.0, -1.0, 1.0).is_err());
    }
}
