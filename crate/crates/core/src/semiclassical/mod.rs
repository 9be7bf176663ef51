//! Coefficients of the small-angle expansion of the density of states,
//! `Tr f(H) = sum_j eps^j c_j + O(eps^{n+1})` with
//! `c_j = (2 pi)^{-2} avg_X int Tr f_j(kappa, X) dkappa`.
//!
//! Two independent evaluations of the pointwise densities are provided:
//! [`coeff_density`] integrates the resolvent integrands over the complex
//! HS grid using numeric symbol jets, and [`DensityEvaluator`] expands the
//! same integrands symbolically into resolvent words whose zeta integrals
//! are divided differences. The integrated coefficients use the latter.

mod bundle;
mod mat4;
mod words;

pub use bundle::{a_bundle, poisson, poisson2, resolvent_bundle, Jet, PointSpectrum, SymbolBundle, KAPPA, XVAR};
pub use mat4::M4;
pub use words::{integrand_1, integrand_2, integrand_2_right, CompiledDensity, Expr, Factor};

use crate::effmodel::now_secs;
use crate::error::{invalid, Error, Result};
use crate::hscalc::{HsRule, TestFunction};
use crate::lattice::{combo, det, dual_basis, norm, Vec2};
use crate::linalg::{self, c64};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// A pointwise density `Tr f_j(kappa, X)` with the size of the discarded
/// imaginary part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub value: f64,
    pub defect: f64,
    /// Set when the defect exceeds 100 times the quadrature tolerance.
    pub warning: bool,
}

fn check_order(j: usize) -> Result<()> {
    if j > 2 {
        return Err(Error::Unsupported(format!("coefficient of order {j}")));
    }
    Ok(())
}

/// The bracketed integrand of `f_1` at one zeta.
pub fn integrand_1_at(r: &Jet, a: &Jet, c: &Jet) -> M4 {
    let i2 = c64::new(0.0, 0.5);
    (poisson(r, a).v * r.v).scale(-i2) + r.v * c.v * r.v
}

/// The bracketed integrand of `f_2` at one zeta, transcribed term by term
/// (see [`integrand_2`] for the formula). `t2` is `T_{0,2}`.
pub fn integrand_2_at(r: &Jet, a: &Jet, c: &Jet, t2: &M4) -> M4 {
    let re = |x: f64| c64::new(x, 0.0);
    let i2 = c64::new(0.0, 0.5);
    let ar = poisson(a, r);
    let rcr = r.mul(c).mul(r);
    let mut out = (r.v * ar.v * ar.v).scale(re(-0.25));
    out += poisson(r, &ar).v.scale(re(0.25));
    out += (r.v * poisson2(a, r)).scale(re(0.125));
    out += r.v * *t2 * r.v;
    out += r.v * c.v * r.v * c.v * r.v;
    out += (poisson(r, c).v * r.v).scale(i2);
    out += (poisson(&rcr, a).v * r.v).scale(-i2);
    out += (poisson(r, a).v * rcr.v).scale(-i2);
    out
}

/// The right-parametrix form of the `f_2` integrand; see
/// [`integrand_2_right`].
pub fn integrand_2_right_at(r: &Jet, a: &Jet, c: &Jet, t2: &M4) -> M4 {
    let re = |x: f64| c64::new(x, 0.0);
    let i2 = c64::new(0.0, 0.5);
    let rcr = r.mul(c).mul(r);
    let ra = poisson(r, a);
    let mut out = r.v * c.v * r.v * c.v * r.v;
    out += (ra.v * rcr.v).scale(-i2);
    out += r.v * *t2 * r.v;
    out += (poisson(&rcr, a).v * r.v).scale(-i2);
    out += (poisson(r, c).v * r.v).scale(i2);
    out += (poisson(&ra.mul(r), a).v * r.v).scale(re(-0.25));
    out += (poisson2(r, a) * r.v).scale(re(0.125));
    out
}

/// `Tr f_j(kappa, X)` by HS quadrature of the resolvent integrands
/// (`j = 1, 2`) or by diagonalization (`j = 0`).
pub fn coeff_density(j: usize, f: &TestFunction, rule: &HsRule, bundle: &SymbolBundle, kappa: Vec2, x: Vec2) -> Result<Density> {
    check_order(j)?;
    if j == 0 {
        let h = bundle.eval(kappa, x).to_cmat();
        let value = crate::hscalc::trace_function(&linalg::hermitize(&h), f)?;
        return Ok(Density { value, defect: 0.0, warning: false });
    }
    let h = bundle.h_jet(kappa, x);
    let spec = PointSpectrum::new(&h.v)?;
    let c = bundle.t01_jet(kappa);
    let t2 = bundle.t02(kappa);
    let tr = rule.integrate(|z| {
        let r = resolvent_bundle(&h, &spec, z).expect("HS nodes lie off the real axis");
        let a = a_bundle(&h, z);
        let m = if j == 1 { integrand_1_at(&r, &a, &c) } else { integrand_2_at(&r, &a, &c, &t2) };
        m.trace()
    });
    let scale = tr.re.abs().max(1.0);
    Ok(Density { value: tr.re, defect: tr.im.abs(), warning: tr.im.abs() > 100.0 * 1e-6 * scale })
}

/// Divided-difference evaluation of `Tr f_j(kappa, X)`, compiled once per
/// order.
#[derive(Debug, Clone)]
pub struct DensityEvaluator {
    pub bundle: SymbolBundle,
    pub f: TestFunction,
    compiled: [Option<CompiledDensity>; 3],
}

impl DensityEvaluator {
    pub fn new(bundle: &SymbolBundle, f: &TestFunction) -> Self {
        DensityEvaluator {
            bundle: bundle.clone(),
            f: f.clone(),
            compiled: [None, Some(CompiledDensity::new(&integrand_1())), Some(CompiledDensity::new(&integrand_2()))],
        }
    }

    pub fn n_words(&self, j: usize) -> usize {
        self.compiled.get(j).and_then(|c| c.as_ref()).map_or(0, |c| c.n_words())
    }

    pub fn density(&self, j: usize, kappa: Vec2, x: Vec2) -> Result<Density> {
        check_order(j)?;
        let h = self.bundle.eval(kappa, x);
        let spec = PointSpectrum::new(&h)?;
        Ok(self.density_with(j, kappa, x, &spec))
    }

    fn density_with(&self, j: usize, kappa: Vec2, x: Vec2, spec: &PointSpectrum) -> Density {
        if j == 0 {
            let value = spec.lambda.iter().map(|&l| self.f.eval(l)).sum();
            return Density { value, defect: 0.0, warning: false };
        }
        let c = self.compiled[j].as_ref().expect("orders 1 and 2 are compiled");
        let (value, defect) = c.eval(&self.f, &self.bundle, kappa, x, spec);
        Density { value, defect, warning: defect > 1e-8 * value.abs().max(1.0) }
    }

    /// All three densities sharing one diagonalization.
    pub fn densities(&self, kappa: Vec2, x: Vec2) -> Result<[Density; 3]> {
        let spec = PointSpectrum::new(&self.bundle.eval(kappa, x))?;
        Ok([0, 1, 2].map(|j| self.density_with(j, kappa, x, &spec)))
    }
}

/// Uniform Cartesian nodes of spacing `h` inside a disc; each carries the
/// weight `h^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaDisc {
    pub radius: f64,
    pub h: f64,
    pub nodes: Vec<Vec2>,
}

impl KappaDisc {
    pub fn new(radius: f64, h: f64) -> Result<Self> {
        if !(radius > 0.0 && h > 0.0 && h < radius) {
            return invalid(format!("kappa disc needs 0 < h < radius, got radius {radius}, h {h}"));
        }
        let n = (radius / h).ceil() as i64;
        let mut nodes = Vec::new();
        for a in -n..=n {
            for b in -n..=n {
                let k = [a as f64 * h, b as f64 * h];
                if norm(k) <= radius {
                    nodes.push(k);
                }
            }
        }
        Ok(KappaDisc { radius, h, nodes })
    }

    /// Radius `(sup |supp f| + |V|_inf) / vF` plus three cells.
    pub fn for_support(f: &TestFunction, bundle: &SymbolBundle, h: f64) -> Result<Self> {
        let r = (f.support_radius() + bundle.pot.sup_norm(24)) / bundle.kin.vf + 3.0 * h;
        KappaDisc::new(r, h)
    }

    pub fn weight(&self) -> f64 {
        self.h * self.h
    }
}

/// Periodic trapezoid nodes on the period cell of the potential.
#[derive(Debug, Clone, PartialEq)]
pub struct XGrid {
    pub p1: Vec2,
    pub p2: Vec2,
    pub n: usize,
    pub nodes: Vec<Vec2>,
}

impl XGrid {
    pub fn new(bundle: &SymbolBundle, n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("X grid needs at least one node per side");
        }
        let (p1, p2) = dual_basis(bundle.pot.b1, bundle.pot.b2);
        let mut nodes = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                nodes.push(combo(p1, p2, i as f64 / n as f64, j as f64 / n as f64));
            }
        }
        Ok(XGrid { p1, p2, n, nodes })
    }

    pub fn cell_area(&self) -> f64 {
        det(self.p1, self.p2).abs()
    }
}

/// Grid description echoed in coefficient output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefGrids {
    pub kappa_radius: f64,
    pub kappa_h: f64,
    pub kappa_nodes: usize,
    pub x_n: usize,
}

/// One expansion coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefResult {
    pub j: usize,
    pub value: f64,
    /// Largest pointwise imaginary part, scaled like `value`.
    pub defect: f64,
    pub grids: CoefGrids,
    pub params: BTreeMap<String, f64>,
    pub f: String,
    pub timestamp: u64,
}

/// Relative size of the density in the outermost shell allowed before the
/// disc counts as too small.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;

/// `c_0, c_1, c_2` over the given grids in one pass.
pub fn dos_coefficients(ev: &DensityEvaluator, disc: &KappaDisc, xg: &XGrid) -> Result<[CoefResult; 3]> {
    let nk = disc.nodes.len();
    let total = nk * xg.nodes.len();
    #[derive(Clone)]
    struct Acc {
        sum: [f64; 3],
        defect: [f64; 3],
        peak: [f64; 3],
        edge: [f64; 3],
        err: Option<Error>,
    }
    impl std::ops::Add for Acc {
        type Output = Acc;
        fn add(self, o: Acc) -> Acc {
            let mut out = self;
            for j in 0..3 {
                out.sum[j] += o.sum[j];
                out.defect[j] = out.defect[j].max(o.defect[j]);
                out.peak[j] = out.peak[j].max(o.peak[j]);
                out.edge[j] = out.edge[j].max(o.edge[j]);
            }
            out.err = out.err.or(o.err);
            out
        }
    }
    let zero = Acc { sum: [0.0; 3], defect: [0.0; 3], peak: [0.0; 3], edge: [0.0; 3], err: None };
    let shell = disc.radius - 1.5 * disc.h;
    let acc = linalg::pairwise_sum(total, 64, zero.clone(), |range| {
        let mut a = zero.clone();
        for idx in range {
            let kappa = disc.nodes[idx % nk];
            let x = xg.nodes[idx / nk];
            match ev.densities(kappa, x) {
                Ok(d) => {
                    let at_edge = norm(kappa) > shell;
                    for j in 0..3 {
                        a.sum[j] += d[j].value;
                        a.defect[j] = a.defect[j].max(d[j].defect);
                        a.peak[j] = a.peak[j].max(d[j].value.abs());
                        if at_edge {
                            a.edge[j] = a.edge[j].max(d[j].value.abs());
                        }
                    }
                }
                Err(e) => a.err = a.err.or(Some(e)),
            }
        }
        a
    });
    if let Some(e) = acc.err {
        return Err(e);
    }
    for j in 0..3 {
        if acc.edge[j] > BOUNDARY_TOLERANCE * acc.peak[j] {
            return invalid(format!(
                "kappa disc of radius {} too small: order-{j} density {:.3e} on the boundary shell (peak {:.3e})",
                disc.radius, acc.edge[j], acc.peak[j]
            ));
        }
    }
    // trapezoid average over X and h^2 weights over kappa
    let norm_factor = disc.weight() / (xg.nodes.len() as f64) / (4.0 * PI * PI);
    let grids = CoefGrids { kappa_radius: disc.radius, kappa_h: disc.h, kappa_nodes: nk, x_n: xg.n };
    let mut params = BTreeMap::new();
    params.insert("vf".to_string(), ev.bundle.kin.vf);
    params.insert("w_aa".to_string(), ev.bundle.pot.w_aa);
    params.insert("w_ab".to_string(), ev.bundle.pot.w_ab);
    params.insert("modes".to_string(), ev.bundle.pot.modes.len() as f64);
    let ts = now_secs();
    Ok([0, 1, 2].map(|j| CoefResult {
        j,
        value: acc.sum[j] * norm_factor,
        defect: acc.defect[j] * disc.weight() * nk as f64 / (4.0 * PI * PI),
        grids: grids.clone(),
        params: params.clone(),
        f: ev.f.describe(),
        timestamp: ts,
    }))
}

/// A single coefficient `c_j`.
pub fn dos_coefficient(j: usize, ev: &DensityEvaluator, disc: &KappaDisc, xg: &XGrid) -> Result<CoefResult> {
    check_order(j)?;
    let [a, b, c] = dos_coefficients(ev, disc, xg)?;
    Ok([a, b, c].into_iter().nth(j).expect("j <= 2"))
}
