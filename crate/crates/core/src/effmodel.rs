//! Effective moiré Hamiltonians `T_eps(-i grad - K) + V(eps x)`, their Bloch
//! fibers in a plane-wave basis, band structures and the exact density of
//! states.

use crate::error::{invalid, Error, Result};
use crate::hscalc::TestFunction;
use crate::lattice::{add, combo, det, dot, frac_coords, norm, rot_j, scale, sub, Lattice2D, TwistParams, Vec2};
use crate::linalg::{self, c64, CMat, I};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

/// Dirac kinetic term of the two layers around the valley point `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracKinetic {
    pub vf: f64,
    /// Dirac point subtracted from the Bloch momentum.
    pub k: Vec2,
    /// Extra momentum shift of layer 2, in units of `eps` (layer 2 sees
    /// `kappa - eps * layer_shift`). Zero for the model class treated by the
    /// expansion; nonzero only to reproduce the textbook gauge of the BM model.
    pub layer_shift: Vec2,
}

fn dirac_block(out: &mut CMat, off: usize, phase: c64, vf: f64, kappa: Vec2) {
    let z = phase * c64::new(kappa[0], -kappa[1]) * vf;
    out[(off, off + 1)] += z;
    out[(off + 1, off)] += z.conj();
}

impl DiracKinetic {
    pub fn new(vf: f64, lat: &Lattice2D) -> Result<Self> {
        if !(vf > 0.0 && vf.is_finite()) {
            return invalid(format!("Fermi velocity must be positive, got {vf}"));
        }
        Ok(DiracKinetic { vf, k: lat.k, layer_shift: [0.0, 0.0] })
    }

    pub fn with_layer_shift(mut self, shift: Vec2) -> Self {
        self.layer_shift = shift;
        self
    }

    /// `T_eps(kappa)`: blocks `vF sigma_{-theta/2}.kappa` and `vF sigma_{theta/2}.kappa`.
    pub fn t_eps(&self, kappa: Vec2, tw: &TwistParams) -> CMat {
        // e^{+-i theta/2} = sqrt(1 - eps^2) +- i eps, with sqrt(1 - eps^2) = 1 - g
        let ph = c64::new(1.0 - tw.g_eps, tw.eps);
        let mut t = linalg::zeros(4);
        dirac_block(&mut t, 0, ph, self.vf, kappa);
        dirac_block(&mut t, 2, ph.conj(), self.vf, sub(kappa, scale(tw.eps, self.layer_shift)));
        t
    }

    /// `T_{0,j}(kappa)`, the `eps^j` Taylor coefficient of `T_eps` (j <= 2).
    pub fn t_series(&self, j: usize, kappa: Vec2) -> Result<CMat> {
        let mut t = linalg::zeros(4);
        match j {
            0 => {
                dirac_block(&mut t, 0, c64::new(1.0, 0.0), self.vf, kappa);
                dirac_block(&mut t, 2, c64::new(1.0, 0.0), self.vf, kappa);
            }
            1 => {
                dirac_block(&mut t, 0, I, self.vf, kappa);
                dirac_block(&mut t, 2, -I, self.vf, kappa);
                dirac_block(&mut t, 2, c64::new(-1.0, 0.0), self.vf, self.layer_shift);
            }
            2 => {
                dirac_block(&mut t, 0, c64::new(-0.5, 0.0), self.vf, kappa);
                dirac_block(&mut t, 2, c64::new(-0.5, 0.0), self.vf, kappa);
                dirac_block(&mut t, 2, I, self.vf, self.layer_shift);
            }
            _ => return Err(Error::Unsupported(format!("T_eps series coefficient of order {j}"))),
        }
        Ok(t)
    }

    pub fn t0(&self, kappa: Vec2) -> CMat {
        self.t_series(0, kappa).expect("order 0")
    }

    pub fn t01(&self, kappa: Vec2) -> CMat {
        self.t_series(1, kappa).expect("order 1")
    }

    /// `d T_0 / d kappa_i`, constant.
    pub fn dk_t0(&self) -> [CMat; 2] {
        let mut a = linalg::zeros(4);
        let mut b = linalg::zeros(4);
        let one = c64::new(1.0, 0.0);
        for off in [0, 2] {
            dirac_block(&mut a, off, one, self.vf, [1.0, 0.0]);
            dirac_block(&mut b, off, one, self.vf, [0.0, 1.0]);
        }
        [a, b]
    }

    /// `d T_{0,1} / d kappa_i`, constant.
    pub fn dk_t01(&self) -> [CMat; 2] {
        let mut a = linalg::zeros(4);
        let mut b = linalg::zeros(4);
        for (off, ph) in [(0, I), (2, -I)] {
            dirac_block(&mut a, off, ph, self.vf, [1.0, 0.0]);
            dirac_block(&mut b, off, ph, self.vf, [0.0, 1.0]);
        }
        [a, b]
    }
}

/// One Fourier mode `M e^{i G.X}` with `G = n1 b1 + n2 b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub n: [i64; 2],
    pub g: Vec2,
    pub m: CMat,
}

/// `J L`-periodic potential given by finitely many Fourier modes on the
/// lattice spanned by `b1, b2` (a sublattice of `J L*`).
#[derive(Debug, Clone, PartialEq)]
pub struct MoirePotential {
    pub w_aa: f64,
    pub w_ab: f64,
    pub b1: Vec2,
    pub b2: Vec2,
    pub modes: Vec<Mode>,
}

fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-9
}

impl MoirePotential {
    /// Empty potential with mode lattice `(b1, b2)`; both vectors must lie in `J L*`.
    pub fn empty(lat: &Lattice2D, b1: Vec2, b2: Vec2) -> Result<Self> {
        let (j1, j2) = (rot_j(lat.a1s), rot_j(lat.a2s));
        for b in [b1, b2] {
            let c = frac_coords(j1, j2, b);
            if !(is_integer(c[0]) && is_integer(c[1])) {
                return invalid(format!("mode lattice vector {b:?} is not in J L*"));
            }
        }
        if det(b1, b2).abs() < 1e-12 {
            return invalid("degenerate mode lattice");
        }
        Ok(MoirePotential { w_aa: 0.0, w_ab: 0.0, b1, b2, modes: Vec::new() })
    }

    /// Add `M e^{i G.X}` together with its conjugate `M^* e^{-i G.X}`.
    pub fn add_mode(&mut self, n: [i64; 2], m: CMat) -> Result<()> {
        if m.nrows() != 4 || m.ncols() != 4 {
            return invalid("mode coefficients must be 4x4");
        }
        let g = combo(self.b1, self.b2, n[0] as f64, n[1] as f64);
        let md = linalg::adjoint(&m);
        self.modes.push(Mode { n, g, m });
        self.modes.push(Mode { n: [-n[0], -n[1]], g: scale(-1.0, g), m: md });
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| linalg::max_abs(&m.m) == 0.0)
    }

    pub fn max_mode_norm(&self) -> f64 {
        self.modes.iter().map(|m| norm(m.g)).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: Vec2) -> CMat {
        let mut v = linalg::zeros(4);
        for md in &self.modes {
            let e = c64::from_polar(1.0, dot(md.g, x));
            linalg::axpy(&mut v, e, &md.m);
        }
        v
    }

    /// `d V / d X_i`.
    pub fn grad(&self, x: Vec2) -> [CMat; 2] {
        let mut d = [linalg::zeros(4), linalg::zeros(4)];
        for md in &self.modes {
            let e = c64::from_polar(1.0, dot(md.g, x)) * I;
            for (i, di) in d.iter_mut().enumerate() {
                linalg::axpy(di, e * md.g[i], &md.m);
            }
        }
        d
    }

    /// `d^2 V / d X_i d X_j`.
    pub fn hess(&self, x: Vec2) -> [[CMat; 2]; 2] {
        let z = || linalg::zeros(4);
        let mut h = [[z(), z()], [z(), z()]];
        for md in &self.modes {
            let e = -c64::from_polar(1.0, dot(md.g, x));
            for i in 0..2 {
                for j in 0..2 {
                    linalg::axpy(&mut h[i][j], e * (md.g[i] * md.g[j]), &md.m);
                }
            }
        }
        h
    }

    /// `sup_X ||V(X)||` sampled on an `n x n` grid of the period cell.
    pub fn sup_norm(&self, n: usize) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let (p1, p2) = crate::lattice::dual_basis(self.b1, self.b2);
        let mut best = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let x = combo(p1, p2, i as f64 / n as f64, j as f64 / n as f64);
                let ev = linalg::eigvalsh(&self.eval(x)).unwrap_or_default();
                for e in ev {
                    best = best.max(e.abs());
                }
            }
        }
        best
    }
}

/// `T_n = wAA I + wAB (cos(2 pi n/3) s1 + sin(2 pi n/3) s2)`.
pub fn bm_hopping(w_aa: f64, w_ab: f64, n: usize) -> [[c64; 2]; 2] {
    let phi = 2.0 * PI * n as f64 / 3.0;
    let off = c64::new(w_ab * phi.cos(), -w_ab * phi.sin());
    [[c64::new(w_aa, 0.0), off], [off.conj(), c64::new(w_aa, 0.0)]]
}

/// Interlayer block: 4x4 matrix with `t` in the upper-right corner.
pub fn interlayer(t: [[c64; 2]; 2]) -> CMat {
    let mut m = linalg::zeros(4);
    for i in 0..2 {
        for j in 0..2 {
            m[(i, 2 + j)] = t[i][j];
        }
    }
    m
}

/// Three-mode BM coupling with `G_0 = 0`, `G_1 = 2 J a1*`, `G_2 = 2 J a2*`.
pub fn bm_potential(w_aa: f64, w_ab: f64, lat: &Lattice2D) -> Result<MoirePotential> {
    let b1 = scale(2.0, rot_j(lat.a1s));
    let b2 = scale(2.0, rot_j(lat.a2s));
    let mut p = MoirePotential::empty(lat, b1, b2)?;
    p.w_aa = w_aa;
    p.w_ab = w_ab;
    for (n, idx) in [([0, 0], 0usize), ([1, 0], 1), ([0, 1], 2)] {
        p.add_mode(n, interlayer(bm_hopping(w_aa, w_ab, idx)))?;
    }
    Ok(p)
}

/// Layer-2 momentum offset `-2 J K` (in units of `eps`) of the textbook BM
/// gauge, where the two Dirac points sit at corners of the moiré zone.
pub fn textbook_layer_shift(lat: &Lattice2D) -> Vec2 {
    scale(-2.0, rot_j(lat.k))
}

/// BM coupling plus one generic mode at `G_1 + G_2` that breaks the
/// rotation, chiral and particle-hole symmetries.
pub fn generic_potential(w_aa: f64, w_ab: f64, extra: f64, lat: &Lattice2D) -> Result<MoirePotential> {
    let mut p = bm_potential(w_aa, w_ab, lat)?;
    let m = CMat::from_fn(4, 4, |i, j| {
        let s = (i * 4 + j) as f64;
        c64::new((0.7 * s + 0.3).sin(), (1.3 * s - 0.2).cos()) * extra * 0.5
    });
    p.add_mode([1, 1], m)?;
    Ok(p)
}

/// A Bloch fiber of the effective Hamiltonian.
#[derive(Debug, Clone)]
pub struct FiberHamiltonian {
    pub q: Vec2,
    /// Coordinates of each `Q` in the scaled mode lattice `eps (b1, b2)`.
    pub basis: Vec<[i64; 2]>,
    /// `Q + q - K` for each basis vector.
    pub momenta: Vec<Vec2>,
    pub matrix: CMat,
}

impl FiberHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Plane waves `Q = eps (n1 b1 + n2 b2)` with `|Q + q - K| <= lambda`, sorted.
pub fn fiber_basis(q: Vec2, tw: &TwistParams, kin: &DiracKinetic, pot: &MoirePotential, lambda: f64) -> Vec<[i64; 2]> {
    let (b1, b2) = (scale(tw.eps, pot.b1), scale(tw.eps, pot.b2));
    let c = sub(kin.k, q);
    let f = frac_coords(b1, b2, c);
    let (d1, d2) = crate::lattice::dual_basis(b1, b2);
    // |n_i - f_i| <= lambda |d_i| / 2 pi
    let r1 = (lambda * norm(d1) / (2.0 * PI)).ceil() as i64 + 1;
    let r2 = (lambda * norm(d2) / (2.0 * PI)).ceil() as i64 + 1;
    let (c1, c2) = (f[0].round() as i64, f[1].round() as i64);
    let mut out = Vec::new();
    for n1 in c1 - r1..=c1 + r1 {
        for n2 in c2 - r2..=c2 + r2 {
            let p = sub(combo(b1, b2, n1 as f64, n2 as f64), c);
            if norm(p) <= lambda {
                out.push([n1, n2]);
            }
        }
    }
    out
}

pub fn assemble_fiber(
    q: Vec2,
    tw: &TwistParams,
    kin: &DiracKinetic,
    pot: &MoirePotential,
    lambda: f64,
) -> Result<FiberHamiltonian> {
    if !(lambda > 0.0) {
        return invalid(format!("plane-wave cutoff must be positive, got {lambda}"));
    }
    let reach = 2.0 * tw.eps * pot.max_mode_norm();
    if lambda <= reach {
        return invalid(format!("cutoff {lambda} does not exceed twice the largest coupling momentum {reach}"));
    }
    let basis = fiber_basis(q, tw, kin, pot, lambda);
    if basis.is_empty() {
        return invalid(format!("no plane waves within cutoff {lambda} at q = {q:?}"));
    }
    let (b1, b2) = (scale(tw.eps, pot.b1), scale(tw.eps, pot.b2));
    let c = sub(kin.k, q);
    let n = basis.len();
    let index: HashMap<[i64; 2], usize> = basis.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut h = linalg::zeros(4 * n);
    let mut momenta = Vec::with_capacity(n);
    for (i, &bi) in basis.iter().enumerate() {
        let p = sub(combo(b1, b2, bi[0] as f64, bi[1] as f64), c);
        momenta.push(p);
        let t = kin.t_eps(p, tw);
        for a in 0..4 {
            for b in 0..4 {
                h[(4 * i + a, 4 * i + b)] = t[(a, b)];
            }
        }
        // H[Q, Q - eps G] = M
        for md in &pot.modes {
            let target = [bi[0] - md.n[0], bi[1] - md.n[1]];
            if let Some(&j) = index.get(&target) {
                for a in 0..4 {
                    for b in 0..4 {
                        h[(4 * i + a, 4 * j + b)] += md.m[(a, b)];
                    }
                }
            }
        }
    }
    Ok(FiberHamiltonian { q, basis, momenta, matrix: h })
}

/// Default cutoff `margin (E_f + ||V||) / vF`.
pub fn default_cutoff(f: &TestFunction, kin: &DiracKinetic, pot: &MoirePotential, margin: f64) -> f64 {
    margin * (f.support_radius() + pot.sup_norm(24)) / kin.vf
}

/// Brillouin zone of the moiré lattice: the cell spanned by `eps b1, eps b2`.
pub fn moire_bz_basis(tw: &TwistParams, pot: &MoirePotential) -> (Vec2, Vec2) {
    (scale(tw.eps, pot.b1), scale(tw.eps, pot.b2))
}

pub fn moire_bz_grid(tw: &TwistParams, pot: &MoirePotential, n: usize) -> Result<crate::lattice::BZGrid> {
    let (b1, b2) = moire_bz_basis(tw, pot);
    crate::lattice::make_bz_grid(&Lattice2D::natural(), crate::lattice::Cell::Span { b1, b2 }, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub lambda: f64,
    pub kgrid_n: usize,
    pub eps: f64,
    pub f: String,
}

/// A trace per unit area paired with a test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoSResult {
    pub value: f64,
    pub error_estimate: f64,
    pub grid_meta: GridMeta,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub params_echo: BTreeMap<String, f64>,
}

pub(crate) fn now_secs() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn dos_sum(
    f: &TestFunction,
    tw: &TwistParams,
    kin: &DiracKinetic,
    pot: &MoirePotential,
    lambda: f64,
    nodes: &[Vec2],
    weights: &[f64],
) -> Result<f64> {
    let parts: Vec<Result<f64>> = nodes
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&q, &w)| {
            let fib = assemble_fiber(q, tw, kin, pot, lambda)?;
            let ev = linalg::eigvalsh(&fib.matrix)?;
            Ok(w * ev.iter().map(|&e| f.eval(e)).sum::<f64>())
        })
        .collect();
    let mut s = 0.0;
    for p in parts {
        s += p?;
    }
    Ok(s / (4.0 * PI * PI))
}

fn check_bz(tw: &TwistParams, pot: &MoirePotential, grid: &crate::lattice::BZGrid) -> Result<()> {
    let (b1, b2) = moire_bz_basis(tw, pot);
    let want = det(b1, b2).abs();
    let got: f64 = grid.weights.iter().sum();
    if ((got - want) / want).abs() > 1e-9 {
        return invalid(format!("k-grid weights sum to {got}, moiré Brillouin zone area is {want}"));
    }
    Ok(())
}

/// `(1/(2 pi)^2) sum_q w(q) sum_n f(E_n(q))`, with the difference against
/// the half-resolution grid as error estimate.
pub fn exact_dos(
    f: &TestFunction,
    tw: &TwistParams,
    kin: &DiracKinetic,
    pot: &MoirePotential,
    lambda: f64,
    grid: &crate::lattice::BZGrid,
) -> Result<DoSResult> {
    check_bz(tw, pot, grid)?;
    let value = dos_sum(f, tw, kin, pot, lambda, &grid.nodes, &grid.weights)?;
    let error_estimate = if grid.n >= 2 {
        let half = crate::lattice::make_bz_grid_offset(
            &Lattice2D::natural(),
            crate::lattice::Cell::Span { b1: grid.b1, b2: grid.b2 },
            grid.n / 2,
            [0.5, 0.5],
        )?;
        (dos_sum(f, tw, kin, pot, lambda, &half.nodes, &half.weights)? - value).abs()
    } else {
        f64::INFINITY
    };
    let mut params_echo = BTreeMap::new();
    params_echo.insert("theta".into(), tw.theta);
    params_echo.insert("vf".into(), kin.vf);
    params_echo.insert("w_aa".into(), pot.w_aa);
    params_echo.insert("w_ab".into(), pot.w_ab);
    params_echo.insert("modes".into(), pot.modes.len() as f64);
    Ok(DoSResult {
        value,
        error_estimate,
        grid_meta: GridMeta { lambda, kgrid_n: grid.n, eps: tw.eps, f: f.describe() },
        timestamp: now_secs(),
        params_echo,
    })
}

/// `(1/(pi vF^2)) int_0^inf [f(s) + f(-s)] s ds`, by composite Simpson on the support.
pub fn free_dirac_dos(f: &TestFunction, vf: f64) -> f64 {
    let r = f.support_radius();
    if r == 0.0 {
        return 0.0;
    }
    let n = 20_000;
    let h = r / n as f64;
    let g = |s: f64| (f.eval(s) + f.eval(-s)) * s;
    let mut acc = g(0.0) + g(r);
    for i in 1..n {
        acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0 / (PI * vf * vf)
}

/// Sorted eigenvalues along a polyline of quasi-momenta.
#[derive(Debug, Clone)]
pub struct BandTable {
    /// Basis used for the fractional coordinates in the CSV.
    pub b1: Vec2,
    pub b2: Vec2,
    pub q: Vec<Vec2>,
    pub bands: Vec<Vec<f64>>,
}

impl BandTable {
    /// CSV with columns `q_frac1,q_frac2,E_1..E_m`, rows truncated to the
    /// smallest band count along the path.
    pub fn to_csv(&self) -> String {
        let m = self.bands.iter().map(|b| b.len()).min().unwrap_or(0);
        let mut s = String::from("q_frac1,q_frac2");
        for i in 1..=m {
            s.push_str(&format!(",E_{i}"));
        }
        s.push('\n');
        for (q, b) in self.q.iter().zip(&self.bands) {
            let fr = frac_coords(self.b1, self.b2, *q);
            s.push_str(&format!("{:.16e},{:.16e}", fr[0], fr[1]));
            for e in &b[..m] {
                s.push_str(&format!(",{e:.16e}"));
            }
            s.push('\n');
        }
        s
    }

    /// `max - min` of the two bands adjacent to the spectral midpoint of
    /// each fiber (indices `dim/2 - 1` and `dim/2`).
    pub fn middle_bandwidth(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for b in &self.bands {
            let h = b.len() / 2;
            for &e in &b[h - 1..=h] {
                lo = lo.min(e);
                hi = hi.max(e);
            }
        }
        hi - lo
    }
}

pub fn band_structure(
    path: &[Vec2],
    tw: &TwistParams,
    kin: &DiracKinetic,
    pot: &MoirePotential,
    lambda: f64,
) -> Result<BandTable> {
    let bands: Vec<Result<Vec<f64>>> = path
        .par_iter()
        .map(|&q| linalg::eigvalsh(&assemble_fiber(q, tw, kin, pot, lambda)?.matrix))
        .collect();
    let (b1, b2) = moire_bz_basis(tw, pot);
    Ok(BandTable { b1, b2, q: path.to_vec(), bands: bands.into_iter().collect::<Result<_>>()? })
}

/// High-symmetry points of the moiré Brillouin zone, as Bloch momenta `q`
/// with `q = K` at the zone center.
pub fn moire_points(kin: &DiracKinetic, tw: &TwistParams, pot: &MoirePotential) -> [(&'static str, Vec2); 3] {
    let (b1, b2) = moire_bz_basis(tw, pot);
    let gamma = kin.k;
    let m = add(gamma, scale(0.5, b1));
    let kk = add(gamma, scale(1.0 / 3.0, add(b1, b2)));
    [("K", kk), ("G", gamma), ("M", m)]
}

/// Path `K -> Gamma -> M -> K` with `per_leg` points per segment.
pub fn moire_path(kin: &DiracKinetic, tw: &TwistParams, pot: &MoirePotential, per_leg: usize) -> Vec<Vec2> {
    let [(_, k), (_, g), (_, m)] = moire_points(kin, tw, pot);
    let legs = [(k, g), (g, m), (m, k)];
    let mut out = Vec::new();
    for (a, b) in legs {
        for s in 0..per_leg {
            let t = s as f64 / per_leg as f64;
            out.push(add(a, scale(t, sub(b, a))));
        }
    }
    out.push(k);
    out
}
