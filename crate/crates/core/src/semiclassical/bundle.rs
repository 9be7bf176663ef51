//! Pointwise matrix symbols with closed-form derivatives in
//! `(kappa_1, kappa_2, X_1, X_2)`, Poisson brackets and resolvents.

use super::mat4::M4;
use crate::effmodel::{DiracKinetic, MoirePotential};
use crate::error::{invalid, Result};
use crate::lattice::{dot, Vec2};
use crate::linalg::{self, c64, I};

/// Variable slots: `0, 1` are `kappa_1, kappa_2`; `2, 3` are `X_1, X_2`.
pub const KAPPA: [usize; 2] = [0, 1];
pub const XVAR: [usize; 2] = [2, 3];

/// Value and derivatives through `order` (at most 2) of a 4x4 symbol.
#[derive(Clone, Debug)]
pub struct Jet {
    pub order: usize,
    pub v: M4,
    pub d: [M4; 4],
    pub dd: [[M4; 4]; 4],
}

impl Jet {
    pub fn constant(v: M4) -> Jet {
        Jet { order: 2, v, d: [M4::ZERO; 4], dd: [[M4::ZERO; 4]; 4] }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let mut out = Jet { order, v: self.v * o.v, d: [M4::ZERO; 4], dd: [[M4::ZERO; 4]; 4] };
        if order >= 1 {
            for l in 0..4 {
                out.d[l] = self.d[l] * o.v + self.v * o.d[l];
            }
        }
        if order >= 2 {
            for l in 0..4 {
                for m in 0..4 {
                    out.dd[l][m] = self.dd[l][m] * o.v + self.d[l] * o.d[m] + self.d[m] * o.d[l] + self.v * o.dd[l][m];
                }
            }
        }
        out
    }

    pub fn add(&self, o: &Jet) -> Jet {
        let mut out = self.clone();
        out.order = self.order.min(o.order);
        out.v += o.v;
        for l in 0..4 {
            out.d[l] += o.d[l];
            for m in 0..4 {
                out.dd[l][m] += o.dd[l][m];
            }
        }
        out
    }

    pub fn scale(&self, c: c64) -> Jet {
        let mut out = self.clone();
        out.v = out.v.scale(c);
        for l in 0..4 {
            out.d[l] = out.d[l].scale(c);
            for m in 0..4 {
                out.dd[l][m] = out.dd[l][m].scale(c);
            }
        }
        out
    }
}

/// `{a, b} = grad_X a . grad_k b - grad_k a . grad_X b`, carried to one
/// order less than its arguments.
pub fn poisson(a: &Jet, b: &Jet) -> Jet {
    let order = a.order.min(b.order);
    assert!(order >= 1, "Poisson bracket needs first derivatives");
    let mut out = Jet { order: order - 1, v: M4::ZERO, d: [M4::ZERO; 4], dd: [[M4::ZERO; 4]; 4] };
    for i in 0..2 {
        let (k, x) = (KAPPA[i], XVAR[i]);
        out.v += a.d[x] * b.d[k] - a.d[k] * b.d[x];
        if order >= 2 {
            for l in 0..4 {
                out.d[l] += a.dd[x][l] * b.d[k] + a.d[x] * b.dd[k][l] - a.dd[k][l] * b.d[x] - a.d[k] * b.dd[x][l];
            }
        }
    }
    out
}

/// `{a, b}_2 = sum_ij a_{k_i k_j} b_{X_i X_j} + a_{X_i X_j} b_{k_i k_j} - 2 a_{k_i X_j} b_{X_i k_j}`.
pub fn poisson2(a: &Jet, b: &Jet) -> M4 {
    assert!(a.order >= 2 && b.order >= 2, "second bracket needs second derivatives");
    let mut out = M4::ZERO;
    for i in 0..2 {
        for j in 0..2 {
            let (ki, kj, xi, xj) = (KAPPA[i], KAPPA[j], XVAR[i], XVAR[j]);
            out += a.dd[ki][kj] * b.dd[xi][xj] + a.dd[xi][xj] * b.dd[ki][kj] - (a.dd[ki][xj] * b.dd[xi][kj]).scale(c64::new(2.0, 0.0));
        }
    }
    out
}

/// The symbol `h_0(kappa, X) = T_0(kappa) + V(X)` with its derivatives, and
/// the kinetic corrections `T_{0,1}`, `T_{0,2}` (affine in `kappa`; the
/// constant parts come from a layer shift).
#[derive(Clone, Debug)]
pub struct SymbolBundle {
    pub kin: DiracKinetic,
    pub pot: MoirePotential,
    dk: [M4; 2],
    dk_t01: [M4; 2],
    t01_off: M4,
    dk_t02: [M4; 2],
    t02_off: M4,
}

impl SymbolBundle {
    pub fn new(kin: &DiracKinetic, pot: &MoirePotential) -> Self {
        let [a, b] = kin.dk_t0();
        let [c, d] = kin.dk_t01();
        let series = |j: usize, k: Vec2| M4::from_cmat(&kin.t_series(j, k).expect("orders 1 and 2 exist"));
        let t02_off = series(2, [0.0, 0.0]);
        SymbolBundle {
            kin: kin.clone(),
            pot: pot.clone(),
            dk: [M4::from_cmat(&a), M4::from_cmat(&b)],
            dk_t01: [M4::from_cmat(&c), M4::from_cmat(&d)],
            t01_off: series(1, [0.0, 0.0]),
            dk_t02: [series(2, [1.0, 0.0]) - t02_off, series(2, [0.0, 1.0]) - t02_off],
            t02_off,
        }
    }

    pub fn t0(&self, kappa: Vec2) -> M4 {
        self.dk[0].scale(c64::new(kappa[0], 0.0)) + self.dk[1].scale(c64::new(kappa[1], 0.0))
    }

    pub fn t01(&self, kappa: Vec2) -> M4 {
        self.t01_off + self.dk_t01[0].scale(c64::new(kappa[0], 0.0)) + self.dk_t01[1].scale(c64::new(kappa[1], 0.0))
    }

    /// `T_{0,2}(kappa)`, equal to `-T_0(kappa)/2` without a layer shift.
    pub fn t02(&self, kappa: Vec2) -> M4 {
        self.t02_off + self.dk_t02[0].scale(c64::new(kappa[0], 0.0)) + self.dk_t02[1].scale(c64::new(kappa[1], 0.0))
    }

    pub fn dk(&self) -> [M4; 2] {
        self.dk
    }

    pub fn dk_t01(&self) -> [M4; 2] {
        self.dk_t01
    }

    pub fn dk_t02(&self) -> [M4; 2] {
        self.dk_t02
    }

    /// `d^a/dX_1^a d^b/dX_2^b V(X)`.
    pub fn v_deriv(&self, x: Vec2, a: usize, b: usize) -> M4 {
        let mut out = M4::ZERO;
        for md in &self.pot.modes {
            let ph = c64::from_polar(1.0, dot(md.g, x)) * (I * md.g[0]).powu(a as u32) * (I * md.g[1]).powu(b as u32);
            if ph == c64::new(0.0, 0.0) {
                continue;
            }
            out += M4::from_cmat(&md.m).scale(ph);
        }
        out
    }

    pub fn eval(&self, kappa: Vec2, x: Vec2) -> M4 {
        self.t0(kappa) + self.v_deriv(x, 0, 0)
    }

    pub fn dx(&self, x: Vec2) -> [M4; 2] {
        [self.v_deriv(x, 1, 0), self.v_deriv(x, 0, 1)]
    }

    pub fn dxx(&self, x: Vec2) -> [[M4; 2]; 2] {
        let m = self.v_deriv(x, 1, 1);
        [[self.v_deriv(x, 2, 0), m], [m, self.v_deriv(x, 0, 2)]]
    }

    /// `h_0` as a second-order jet; mixed and `kappa kappa` second
    /// derivatives vanish identically.
    pub fn h_jet(&self, kappa: Vec2, x: Vec2) -> Jet {
        let mut j = Jet::constant(self.eval(kappa, x));
        let dx = self.dx(x);
        let dxx = self.dxx(x);
        j.d = [self.dk[0], self.dk[1], dx[0], dx[1]];
        for a in 0..2 {
            for b in 0..2 {
                j.dd[XVAR[a]][XVAR[b]] = dxx[a][b];
            }
        }
        j
    }

    pub fn t01_jet(&self, kappa: Vec2) -> Jet {
        let mut j = Jet::constant(self.t01(kappa));
        j.d[0] = self.dk_t01[0];
        j.d[1] = self.dk_t01[1];
        j
    }
}

/// Eigen-decomposition of `h_0` at one point.
#[derive(Clone, Debug)]
pub struct PointSpectrum {
    pub lambda: [f64; 4],
    pub u: M4,
}

impl PointSpectrum {
    pub fn new(h: &M4) -> Result<Self> {
        let (ev, u) = linalg::eigh(&linalg::hermitize(&h.to_cmat()))?;
        Ok(PointSpectrum { lambda: [ev[0], ev[1], ev[2], ev[3]], u: M4::from_cmat(&u) })
    }

    pub fn resolvent(&self, z: c64) -> M4 {
        let d = self.lambda.map(|l| (z - l).inv());
        self.u * M4::diag(d) * self.u.adjoint()
    }
}

/// `(zeta - h)^{-1}` with `dR = R (dh) R` and
/// `d^2 R = R h_lm R + R h_l R h_m R + R h_m R h_l R`.
pub fn resolvent_bundle(h: &Jet, spec: &PointSpectrum, z: c64) -> Result<Jet> {
    if z.im == 0.0 {
        return invalid(format!("resolvent requested on the real axis at {}", z.re));
    }
    let r = spec.resolvent(z);
    let mut out = Jet::constant(r);
    out.order = h.order;
    let rh: Vec<M4> = (0..4).map(|l| r * h.d[l]).collect();
    for l in 0..4 {
        out.d[l] = rh[l] * r;
    }
    if h.order >= 2 {
        for l in 0..4 {
            for m in 0..4 {
                out.dd[l][m] = r * h.dd[l][m] * r + rh[l] * rh[m] * r + rh[m] * rh[l] * r;
            }
        }
    }
    Ok(out)
}

/// `zeta - h`.
pub fn a_bundle(h: &Jet, z: c64) -> Jet {
    let mut a = h.scale(c64::new(-1.0, 0.0));
    for i in 0..4 {
        a.v.0[i][i] += z;
    }
    a
}
