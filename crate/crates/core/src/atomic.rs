//! Desk-scale atomic model of the bilayer: the fiber operator
//! `h_{d,0}(k, X) = 1/2 (-i grad_x + k)^2 - 1/2 d_z^2 + V_d(x, X, z)` on a
//! plane-wave x z-grid basis, with synthetic Gaussian potentials.
//!
//! Basis index `g * n_z + j` pairs the plane wave `e^{i G_g . x}` with the
//! interior z-node `z_j`.

use crate::effmodel::{now_secs, DoSResult, GridMeta};
use crate::error::{invalid, Error, Result};
use crate::hscalc::{divided_difference, HsRule, TestFunction};
use crate::lattice::{add, dot, frac_coords, norm, rot_j, scale, sub, BZGrid, Lattice2D, Vec2};
use crate::linalg::{self, c64, CMat, SmallSolver, I};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Gaussian tails beyond this many widths are dropped from real-space sums.
const TAIL_WIDTHS: f64 = 9.0;

/// Physical parameters of the synthetic potential, in absolute units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    /// Depth of each atomic Gaussian; must be negative.
    pub v0: f64,
    pub sigma_x: f64,
    pub sigma_z: f64,
    /// Interlayer distance.
    pub d: f64,
    /// `V_int(z) = vint_amp * exp(-z^2 / (2 vint_width^2))`.
    pub vint_amp: f64,
    pub vint_width: f64,
}

impl PotentialParams {
    /// `v0 = -3`, `sigma_x = a0/4`, `sigma_z = 0.3 a0`, `d = a0`, with a weak
    /// repulsive interlayer term.
    pub fn defaults(a0: f64) -> Self {
        PotentialParams { v0: -3.0, sigma_x: 0.25 * a0, sigma_z: 0.3 * a0, d: a0, vint_amp: 0.1, vint_width: 0.3 * a0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPotential {
    pub lattice: Lattice2D,
    pub params: PotentialParams,
    /// The two carbon positions and their translates within the tail cutoff
    /// of the unit cell.
    sites: Vec<Vec2>,
}

/// Probabilists' Hermite polynomial `He_n`.
fn hermite(n: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let c = x * b - k as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `d^n/dt^n exp(-t^2 / (2 s^2))`.
fn gauss_deriv(n: usize, t: f64, s: f64) -> f64 {
    let u = t / s;
    (-1.0 / s).powi(n as i32) * hermite(n, u) * (-0.5 * u * u).exp()
}

impl SyntheticPotential {
    pub fn new(lattice: Lattice2D, params: PotentialParams) -> Result<Self> {
        let p = params;
        if !(p.v0 < 0.0 && p.v0.is_finite()) {
            return invalid(format!("Gaussian depth must be negative, got {}", p.v0));
        }
        for (name, v) in [("sigma_x", p.sigma_x), ("sigma_z", p.sigma_z), ("vint_width", p.vint_width)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if !(p.d >= 0.0 && p.d.is_finite() && p.vint_amp.is_finite()) {
            return invalid("interlayer distance and amplitude must be finite, d >= 0");
        }
        let base = Self::carbon_sites(&lattice);
        // any point of the reduced cell lies within the cell diameter of a site
        let reach = TAIL_WIDTHS * p.sigma_x + 2.0 * lattice.a0;
        let n = (reach / lattice.a0).ceil() as i64 + 2;
        let mut sites = Vec::new();
        for n1 in -n..=n {
            for n2 in -n..=n {
                for s in base {
                    let y = add(s, lattice.site(n1, n2));
                    if norm(y) <= reach {
                        sites.push(y);
                    }
                }
            }
        }
        Ok(SyntheticPotential { lattice, params, sites })
    }

    pub fn with_defaults(lattice: Lattice2D) -> Self {
        Self::new(lattice, PotentialParams::defaults(lattice.a0)).expect("defaults are valid")
    }

    /// `a1/3 + 2 a2/3` and `2 a1/3 + a2/3`.
    pub fn carbon_sites(lat: &Lattice2D) -> [Vec2; 2] {
        [add(scale(1.0 / 3.0, lat.a1), scale(2.0 / 3.0, lat.a2)), add(scale(2.0 / 3.0, lat.a1), scale(1.0 / 3.0, lat.a2))]
    }

    pub fn sites(&self) -> &[Vec2] {
        &self.sites
    }

    fn reduce(&self, x: Vec2) -> Vec2 {
        let t = frac_coords(self.lattice.a1, self.lattice.a2, x);
        sub(x, self.lattice.site(t[0].floor() as i64, t[1].floor() as i64))
    }

    /// `d^{a0}_{x1} d^{a1}_{x2} d^{a2}_z V_MG(x, z)`.
    pub fn v_mg_deriv(&self, x: Vec2, z: f64, alpha: [usize; 3]) -> f64 {
        let p = &self.params;
        let gz = gauss_deriv(alpha[2], z, p.sigma_z);
        if gz == 0.0 {
            return 0.0;
        }
        let x = self.reduce(x);
        let cut = (TAIL_WIDTHS * p.sigma_x).powi(2);
        let mut s = 0.0;
        for y in &self.sites {
            let r = sub(x, *y);
            if dot(r, r) > cut {
                continue;
            }
            s += gauss_deriv(alpha[0], r[0], p.sigma_x) * gauss_deriv(alpha[1], r[1], p.sigma_x);
        }
        p.v0 * s * gz
    }

    pub fn v_mg(&self, x: Vec2, z: f64) -> f64 {
        self.v_mg_deriv(x, z, [0, 0, 0])
    }

    pub fn grad_x_v_mg(&self, x: Vec2, z: f64) -> Vec2 {
        [self.v_mg_deriv(x, z, [1, 0, 0]), self.v_mg_deriv(x, z, [0, 1, 0])]
    }

    pub fn v_int_deriv(&self, z: f64, order: usize) -> f64 {
        self.params.vint_amp * gauss_deriv(order, z, self.params.vint_width)
    }

    pub fn v_int(&self, z: f64) -> f64 {
        self.v_int_deriv(z, 0)
    }

    /// In-plane Fourier coefficient of one layer without the z profile:
    /// `(v0 / |Omega|) 2 pi sigma_x^2 exp(-sigma_x^2 |G|^2 / 2) sum_s e^{-i G . s}`.
    pub fn fourier_xy(&self, g: Vec2) -> c64 {
        let p = &self.params;
        let amp = p.v0 / self.lattice.cell_area * 2.0 * PI * p.sigma_x * p.sigma_x * (-0.5 * p.sigma_x * p.sigma_x * dot(g, g)).exp();
        let [s1, s2] = Self::carbon_sites(&self.lattice);
        (c64::from_polar(1.0, -dot(g, s1)) + c64::from_polar(1.0, -dot(g, s2))) * amp
    }

    pub fn z_profile(&self, z: f64) -> f64 {
        let s = self.params.sigma_z;
        (-0.5 * z * z / (s * s)).exp()
    }

    /// Largest violation over random samples of: evenness in `z`, the
    /// mirrors `x2 -> -x2` and `x1 -> -x1`, rotation by `pi/3` and
    /// lattice periodicity. Returned in that order.
    pub fn symmetry_defects(&self, samples: usize, seed: u64) -> [f64; 5] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a0 = self.lattice.a0;
        let (c, s) = ((PI / 3.0).cos(), (PI / 3.0).sin());
        let mut out = [0.0f64; 5];
        for _ in 0..samples {
            let x = [rng.random_range(-2.0 * a0..2.0 * a0), rng.random_range(-2.0 * a0..2.0 * a0)];
            let z = rng.random_range(-3.0 * self.params.sigma_z..3.0 * self.params.sigma_z);
            let r = self.lattice.site(rng.random_range(-3..=3), rng.random_range(-3..=3));
            let v = self.v_mg(x, z);
            let cand = [
                self.v_mg(x, -z),
                self.v_mg([x[0], -x[1]], z),
                self.v_mg([-x[0], x[1]], z),
                self.v_mg([c * x[0] - s * x[1], s * x[0] + c * x[1]], z),
                self.v_mg(add(x, r), z),
            ];
            for (o, w) in out.iter_mut().zip(cand) {
                *o = o.max((w - v).abs());
            }
        }
        out
    }

    /// `max_z sup_x |d^alpha V_MG(x, z)| (1 + z^2)^delta` over `zs`, with the
    /// supremum in `x` taken on an `nx x nx` grid of the unit cell.
    /// Also returns the value at the largest `|z|` for tail inspection.
    pub fn decay_constant(&self, alpha: [usize; 3], delta: f64, zs: &[f64], nx: usize) -> (f64, f64) {
        let mut best = 0.0f64;
        let mut tail = (0.0f64, 0.0f64);
        for &z in zs {
            let mut sup = 0.0f64;
            for i in 0..nx {
                for j in 0..nx {
                    let x = crate::lattice::combo(self.lattice.a1, self.lattice.a2, i as f64 / nx as f64, j as f64 / nx as f64);
                    sup = sup.max(self.v_mg_deriv(x, z, alpha).abs());
                }
            }
            let w = sup * (1.0 + z * z).powf(delta);
            best = best.max(w);
            if z.abs() >= tail.0 {
                tail = (z.abs(), w);
            }
        }
        (best, tail.1)
    }
}

/// `V_d(x, X, z) = sum_{sigma = +-1} V_MG(x - sigma J X, z - sigma d/2) + V_int(z)`.
#[derive(Debug, Clone, Copy)]
pub struct Vd<'a> {
    pub pot: &'a SyntheticPotential,
}

pub fn build_vd(pot: &SyntheticPotential) -> Vd<'_> {
    Vd { pot }
}

impl Vd<'_> {
    pub fn eval(&self, x: Vec2, big_x: Vec2, z: f64) -> f64 {
        let jx = rot_j(big_x);
        let h = 0.5 * self.pot.params.d;
        self.pot.v_mg(sub(x, jx), z - h) + self.pot.v_mg(add(x, jx), z + h) + self.pot.v_int(z)
    }

    /// `grad_X V_d = sum_sigma -sigma J^T grad_x V_MG(x - sigma J X, z - sigma d/2)`.
    pub fn grad_big_x(&self, x: Vec2, big_x: Vec2, z: f64) -> Vec2 {
        let jx = rot_j(big_x);
        let h = 0.5 * self.pot.params.d;
        let jt = |v: Vec2| [-v[1], v[0]];
        let gp = jt(self.pot.grad_x_v_mg(sub(x, jx), z - h));
        let gm = jt(self.pot.grad_x_v_mg(add(x, jx), z + h));
        [gm[0] - gp[0], gm[1] - gp[1]]
    }

    /// `sup |V_d|`: grid search over `x` in the unit cell, `X` in `J Omega`
    /// and `z`, followed by a shrinking pattern search from the best nodes.
    pub fn max_abs(&self) -> f64 {
        let lat = self.pot.lattice;
        let p = self.pot.params;
        let zr = 0.5 * p.d + 3.0 * p.sigma_z.max(p.vint_width);
        let (nx, nbx, nz) = (18usize, 6usize, 33usize);
        let point = |t: [f64; 5]| -> (Vec2, Vec2, f64) {
            let x = crate::lattice::combo(lat.a1, lat.a2, t[0], t[1]);
            let bx = rot_j(crate::lattice::combo(lat.a1, lat.a2, t[2], t[3]));
            (x, bx, t[4])
        };
        let val = |t: [f64; 5]| {
            let (x, bx, z) = point(t);
            self.eval(x, bx, z).abs()
        };
        let mut cands: Vec<(f64, [f64; 5])> = Vec::new();
        for a in 0..nbx {
            for b in 0..nbx {
                for i in 0..nx {
                    for j in 0..nx {
                        for l in 0..nz {
                            let t = [
                                i as f64 / nx as f64,
                                j as f64 / nx as f64,
                                a as f64 / nbx as f64,
                                b as f64 / nbx as f64,
                                -zr + 2.0 * zr * l as f64 / (nz - 1) as f64,
                            ];
                            cands.push((val(t), t));
                        }
                    }
                }
            }
        }
        cands.sort_by(|u, v| v.0.partial_cmp(&u.0).expect("finite potential"));
        let mut best = cands[0].0;
        for &(v0, t0) in cands.iter().take(8) {
            let (mut v, mut t) = (v0, t0);
            let mut step = [1.0 / nx as f64, 1.0 / nx as f64, 1.0 / nbx as f64, 1.0 / nbx as f64, 2.0 * zr / (nz - 1) as f64];
            for _ in 0..60 {
                let mut moved = false;
                for c in 0..5 {
                    for sgn in [1.0, -1.0] {
                        let mut u = t;
                        u[c] += sgn * step[c];
                        let w = val(u);
                        if w > v {
                            v = w;
                            t = u;
                            moved = true;
                        }
                    }
                }
                if !moved {
                    step.iter_mut().for_each(|s| *s *= 0.5);
                }
            }
            best = best.max(v);
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicDiscretization {
    pub gmax: f64,
    /// Integer coordinates of the plane waves `G = n1 a1* + n2 a2*`.
    pub gset: Vec<[i64; 2]>,
    pub gvecs: Vec<Vec2>,
    /// Half-length `Z` of the transverse box.
    pub z_half: f64,
    pub n_z: usize,
    pub h_z: f64,
    /// Interior nodes `-Z + j h_z`, `j = 1..=n_z`.
    pub z: Vec<f64>,
}

impl AtomicDiscretization {
    pub fn new(lat: &Lattice2D, gmax: f64, z_half: f64, n_z: usize) -> Result<Self> {
        if !(gmax >= 0.0 && gmax.is_finite() && z_half > 0.0 && z_half.is_finite()) || n_z < 2 {
            return invalid(format!("bad discretization gmax={gmax}, Z={z_half}, n_z={n_z}"));
        }
        let (b1, b2) = (lat.a1s, lat.a2s);
        let lo = norm(b1).min(norm(b2));
        let n = (2.0 * gmax / lo).ceil() as i64 + 2;
        let mut gset = Vec::new();
        for n1 in -n..=n {
            for n2 in -n..=n {
                if norm(lat.recip(n1, n2)) <= gmax * (1.0 + 1e-12) {
                    gset.push([n1, n2]);
                }
            }
        }
        let gvecs = gset.iter().map(|g| lat.recip(g[0], g[1])).collect();
        let h_z = 2.0 * z_half / (n_z + 1) as f64;
        let z = (1..=n_z).map(|j| -z_half + j as f64 * h_z).collect();
        Ok(AtomicDiscretization { gmax, gset, gvecs, z_half, n_z, h_z, z })
    }

    /// Box half-length used by [`AtomicDiscretization::for_potential`].
    pub fn default_z_half(pot: &SyntheticPotential) -> f64 {
        let p = &pot.params;
        // 7 widths keeps the Gaussian below 1e-10 at the wall; 6 does not
        0.5 * p.d + 7.0 * p.sigma_z.max(p.vint_width)
    }

    pub fn for_potential(pot: &SyntheticPotential, gmax: f64, h_z: f64) -> Result<Self> {
        let z_half = Self::default_z_half(pot);
        if !(h_z > 0.0) {
            return invalid("z spacing must be positive");
        }
        let n_z = ((2.0 * z_half / h_z).round() as usize).max(3) - 1;
        let disc = Self::new(&pot.lattice, gmax, z_half, n_z)?;
        disc.validate(pot)?;
        Ok(disc)
    }

    /// Same box, `gmax * factor` and the z spacing divided by `factor`.
    pub fn refined(&self, lat: &Lattice2D, factor: f64) -> Result<Self> {
        let n_z = ((self.n_z + 1) as f64 * factor).round() as usize - 1;
        Self::new(lat, self.gmax * factor, self.z_half, n_z)
    }

    /// Same z-grid with a different plane-wave radius.
    pub fn with_gmax(&self, lat: &Lattice2D, gmax: f64) -> Result<Self> {
        Self::new(lat, gmax, self.z_half, self.n_z)
    }

    pub fn dim(&self) -> usize {
        self.gset.len() * self.n_z
    }

    /// Checks `Z >= d/2 + 6 sigma_z` and that the potential is below
    /// `1e-10 |v0|` at the walls.
    pub fn validate(&self, pot: &SyntheticPotential) -> Result<()> {
        let p = &pot.params;
        if self.z_half < 0.5 * p.d + 6.0 * p.sigma_z {
            return invalid(format!("box half-length {} below d/2 + 6 sigma_z = {}", self.z_half, 0.5 * p.d + 6.0 * p.sigma_z));
        }
        let wall = self.wall_potential(pot);
        if wall >= 1e-10 * p.v0.abs() {
            return invalid(format!("potential {wall:.3e} at the z walls exceeds 1e-10 |v0|"));
        }
        Ok(())
    }

    /// Upper bound on `|V_d|` at `z = +-Z`.
    pub fn wall_potential(&self, pot: &SyntheticPotential) -> f64 {
        let p = &pot.params;
        let h = 0.5 * p.d;
        // in-plane peak of one layer, sampled, with a 10% margin
        let n = 24;
        let mut peak = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let x = crate::lattice::combo(pot.lattice.a1, pot.lattice.a2, i as f64 / n as f64, j as f64 / n as f64);
                peak = peak.max(pot.v_mg(x, 0.0).abs());
            }
        }
        let layer = 1.1 * peak.max(p.v0.abs());
        layer * (pot.z_profile(self.z_half - h) + pot.z_profile(self.z_half + h)) + pot.v_int(self.z_half).abs()
    }

    /// Smallest eigenvalue of the discrete `-1/2 d_z^2`, the spacing of the
    /// box continuum near zero energy.
    pub fn resolution(&self) -> f64 {
        let s = (PI / (2.0 * (self.n_z + 1) as f64)).sin();
        2.0 * s * s / (self.h_z * self.h_z)
    }

    pub fn index(&self, g: usize, j: usize) -> usize {
        g * self.n_z + j
    }
}

/// `h_{d,0}(k, X)` on the composite basis.
pub fn assemble_h_d0(k: Vec2, big_x: Vec2, disc: &AtomicDiscretization, pot: &SyntheticPotential) -> CMat {
    assemble_with_kinetic(k, big_x, disc, pot, 0.5)
}

/// The rescaled symbol with in-plane kinetic prefactor `1 / (2 (1 + eta^2))`.
pub fn assemble_h_tilde(k: Vec2, big_x: Vec2, eta: f64, disc: &AtomicDiscretization, pot: &SyntheticPotential) -> CMat {
    assemble_with_kinetic(k, big_x, disc, pot, 1.0 / (2.0 * (1.0 + eta * eta)))
}

fn assemble_with_kinetic(k: Vec2, big_x: Vec2, disc: &AtomicDiscretization, pot: &SyntheticPotential, kin: f64) -> CMat {
    let ng = disc.gset.len();
    let nz = disc.n_z;
    let m = ng * nz;
    let h = 0.5 * pot.params.d;
    let jx = rot_j(big_x);
    let lz = 1.0 / (disc.h_z * disc.h_z);
    let top: Vec<f64> = disc.z.iter().map(|&z| pot.z_profile(z - h)).collect();
    let bot: Vec<f64> = disc.z.iter().map(|&z| pot.z_profile(z + h)).collect();
    let vint: Vec<f64> = disc.z.iter().map(|&z| pot.v_int(z)).collect();
    let mut out = CMat::zeros(m, m);
    for a in 0..ng {
        for b in 0..ng {
            let dg = sub(disc.gvecs[a], disc.gvecs[b]);
            let c = pot.fourier_xy(dg);
            // layer sigma = +1 sits at z = +d/2 and is shifted by +J X
            let ct = c * c64::from_polar(1.0, -dot(dg, jx));
            let cb = c * c64::from_polar(1.0, dot(dg, jx));
            for j in 0..nz {
                out[(a * nz + j, b * nz + j)] = ct * top[j] + cb * bot[j];
            }
        }
        let t = kin * dot(add(disc.gvecs[a], k), add(disc.gvecs[a], k));
        for j in 0..nz {
            let i = a * nz + j;
            out[(i, i)] += c64::new(t + lz + vint[j], 0.0);
            if j + 1 < nz {
                out[(i, i + 1)] += c64::new(-0.5 * lz, 0.0);
                out[(i + 1, i)] += c64::new(-0.5 * lz, 0.0);
            }
        }
    }
    out
}

/// `(k, X)` pairs from the product of a grid over `Omega*` and one over `J Omega`.
pub fn product_samples(grid_k: &BZGrid, grid_x: &BZGrid) -> Vec<(Vec2, Vec2)> {
    grid_k.nodes.iter().flat_map(|&k| grid_x.nodes.iter().map(move |&x| (k, x))).collect()
}

fn spectra(samples: &[(Vec2, Vec2)], disc: &AtomicDiscretization, pot: &SyntheticPotential, kin: f64) -> Result<Vec<Vec<f64>>> {
    samples.par_iter().map(|&(k, x)| linalg::eigvalsh(&assemble_with_kinetic(k, x, disc, pot, kin))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScan {
    pub energy: f64,
    pub m_e: usize,
    pub argmax: (Vec2, Vec2),
    pub counts: Vec<usize>,
    pub min_eigenvalue: f64,
}

/// Largest number of eigenvalues `<= energy` over the samples.
pub fn rank_bound_scan(energy: f64, disc: &AtomicDiscretization, pot: &SyntheticPotential, samples: &[(Vec2, Vec2)]) -> Result<RankScan> {
    if !(energy < 0.0) {
        return invalid(format!("rank bound needs a negative energy, got {energy}"));
    }
    if samples.is_empty() {
        return invalid("no sample points");
    }
    let specs = spectra(samples, disc, pot, 0.5)?;
    let counts: Vec<usize> = specs.iter().map(|s| s.iter().filter(|&&l| l <= energy).count()).collect();
    let (imax, &m_e) = counts.iter().enumerate().max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i))).expect("non-empty");
    let min_eigenvalue = specs.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
    Ok(RankScan { energy, m_e, argmax: samples[imax], counts, min_eigenvalue })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicDos {
    pub dos: DoSResult,
    /// Set when the support of `f` comes within twice the box resolution of 0.
    pub near_zero_warning: bool,
    pub resolution: f64,
}

fn check_negative_support(f: &TestFunction) -> Result<(f64, f64)> {
    let (lo, hi) = f.support();
    if !(hi <= 0.0) {
        return invalid(format!("test function must be supported in (-inf, 0), support ends at {hi}"));
    }
    Ok((lo, hi))
}

fn grid_normalization(grid_k: &BZGrid, grid_x: &BZGrid) -> Result<f64> {
    if grid_k.is_empty() || grid_x.is_empty() {
        return invalid("empty sampling grid");
    }
    // (1/(2 pi)^2) * (k-integral weight) * (X average)
    Ok(grid_k.area() / grid_k.len() as f64 / grid_x.len() as f64 / (4.0 * PI * PI))
}

/// `(1/(2 pi)^2) avg_X int_k sum_lambda f(lambda)`, the leading term of the
/// density of states of the atomic model.
pub fn atomic_leading_dos(f: &TestFunction, disc: &AtomicDiscretization, pot: &SyntheticPotential, grid_k: &BZGrid, grid_x: &BZGrid) -> Result<AtomicDos> {
    leading_dos_with_kinetic(f, 0.5, disc, pot, grid_k, grid_x)
}

/// The same trace for the rescaled symbol of [`assemble_h_tilde`].
pub fn atomic_leading_dos_eta(f: &TestFunction, eta: f64, disc: &AtomicDiscretization, pot: &SyntheticPotential, grid_k: &BZGrid, grid_x: &BZGrid) -> Result<AtomicDos> {
    if !eta.is_finite() {
        return invalid("eta must be finite");
    }
    leading_dos_with_kinetic(f, 1.0 / (2.0 * (1.0 + eta * eta)), disc, pot, grid_k, grid_x)
}

fn leading_dos_with_kinetic(f: &TestFunction, kin: f64, disc: &AtomicDiscretization, pot: &SyntheticPotential, grid_k: &BZGrid, grid_x: &BZGrid) -> Result<AtomicDos> {
    let (_, hi) = check_negative_support(f)?;
    let w = grid_normalization(grid_k, grid_x)?;
    let samples = product_samples(grid_k, grid_x);
    let specs = spectra(&samples, disc, pot, kin)?;
    let per: Vec<f64> = specs.iter().map(|s| s.iter().map(|&l| f.eval(l)).sum::<f64>()).collect();
    let value = w * per.iter().sum::<f64>();
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite atomic density of states".into()));
    }
    let resolution = disc.resolution();
    let mut params_echo = BTreeMap::new();
    for (k, v) in [
        ("v0", pot.params.v0),
        ("sigma_x", pot.params.sigma_x),
        ("sigma_z", pot.params.sigma_z),
        ("d", pot.params.d),
        ("vint_amp", pot.params.vint_amp),
        ("vint_width", pot.params.vint_width),
        ("gmax", disc.gmax),
        ("z_half", disc.z_half),
        ("n_z", disc.n_z as f64),
        ("xgrid_n", grid_x.n as f64),
    ] {
        params_echo.insert(k.to_string(), v);
    }
    Ok(AtomicDos {
        dos: DoSResult {
            value,
            error_estimate: f64::NAN,
            grid_meta: GridMeta { lambda: disc.gmax, kgrid_n: grid_k.n, eps: 0.0, f: f.describe() },
            timestamp: now_secs(),
            params_echo,
        },
        near_zero_warning: hi > -2.0 * resolution,
        resolution,
    })
}

/// How the `zeta` integrals of the identity check are evaluated.
#[derive(Debug, Clone)]
pub enum ZetaRoute {
    /// Exact values of the Helffer-Sjöstrand integrals in the eigenbasis,
    /// as divided differences of `f`.
    DividedDifference,
    /// Literal quadrature with dense resolvents; small bases only.
    Quadrature(HsRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbpReport {
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    pub relative_difference: f64,
}

/// `D_mu = [diag(i G_mu), h]`; Hermitian because `h` is.
fn ad_matrix(h: &CMat, disc: &AtomicDiscretization, mu: usize) -> CMat {
    let nz = disc.n_z;
    CMat::from_fn(h.nrows(), h.ncols(), |i, j| I * (disc.gvecs[i / nz][mu] - disc.gvecs[j / nz][mu]) * h[(i, j)])
}

fn momentum(k: Vec2, disc: &AtomicDiscretization, mu: usize) -> Vec<f64> {
    let nz = disc.n_z;
    (0..disc.dim()).map(|i| disc.gvecs[i / nz][mu] + k[mu]).collect()
}

/// `(lhs, rhs)` densities at one `(k, X)` after the `zeta` integral, with
/// `-(1/pi) int dbar f~` applied to
/// `lhs = -(i/4) Tr A^{-1}(d_k A . ad A^{-1} - ad A . d_k A^{-1})` and
/// `rhs = Tr[-1/2 A^{-1} (-i grad + k)^2 A^{-1} - A^{-1}]`, `A = zeta - h`.
fn ibp_point(f: &TestFunction, route: &ZetaRoute, k: Vec2, big_x: Vec2, disc: &AtomicDiscretization, pot: &SyntheticPotential) -> Result<(f64, f64)> {
    let h = assemble_h_d0(k, big_x, disc, pot);
    let m = h.nrows();
    let p: [Vec<f64>; 2] = [momentum(k, disc, 0), momentum(k, disc, 1)];
    let d = [ad_matrix(&h, disc, 0), ad_matrix(&h, disc, 1)];
    match route {
        ZetaRoute::DividedDifference => {
            let (lam, u) = linalg::eigh(&h)?;
            let (lo, hi) = f.support();
            let band: Vec<usize> = (0..m).filter(|&i| lam[i] > lo && lam[i] < hi).collect();
            if band.is_empty() {
                return Ok((0.0, 0.0));
            }
            let ub = CMat::from_fn(m, band.len(), |i, b| u[(i, band[b])]);
            let uh = linalg::adjoint(&u);
            let in_band: Vec<Option<usize>> = {
                let mut v = vec![None; m];
                band.iter().enumerate().for_each(|(b, &i)| v[i] = Some(b));
                v
            };
            let mut lhs = c64::new(0.0, 0.0);
            let mut rhs = 0.0;
            for mu in 0..2 {
                let pu = CMat::from_fn(m, band.len(), |i, b| ub[(i, b)] * p[mu][i]);
                // columns `band` of U^dagger p U and U^dagger D U
                let pt = &uh * &pu;
                let dt = &uh * (&d[mu] * &ub);
                // entry (i, j) of a Hermitian matrix from its band columns
                let get = |mt: &CMat, i: usize, j: usize| -> c64 {
                    match (in_band[j], in_band[i]) {
                        (Some(bj), _) => mt[(i, bj)],
                        (None, Some(bi)) => mt[(j, bi)].conj(),
                        (None, None) => c64::new(0.0, 0.0),
                    }
                };
                for i in 0..m {
                    for j in 0..m {
                        if in_band[i].is_none() && in_band[j].is_none() {
                            continue;
                        }
                        let w = divided_difference(f, &[lam[i], lam[i], lam[j]]);
                        if w == 0.0 {
                            continue;
                        }
                        let t = get(&pt, i, j) * get(&dt, j, i) - get(&dt, i, j) * get(&pt, j, i);
                        lhs += t * w;
                    }
                }
                for (b, &i) in band.iter().enumerate() {
                    let p2: f64 = (0..m).map(|n| ub[(n, b)].norm_sqr() * p[mu][n] * p[mu][n]).sum();
                    rhs += -0.5 * p2 * divided_difference(f, &[lam[i], lam[i]]);
                }
            }
            for &i in &band {
                rhs -= f.eval(lam[i]);
            }
            Ok(((lhs * (I * 0.25)).re, rhs))
        }
        ZetaRoute::Quadrature(rule) => {
            let p2: Vec<f64> = (0..m).map(|i| p[0][i] * p[0][i] + p[1][i] * p[1][i]).collect();
            let mut solver = SmallSolver::new(m);
            let mut r = linalg::zeros(m);
            let (mut lhs, mut rhs) = (c64::new(0.0, 0.0), c64::new(0.0, 0.0));
            for (z, c) in rule.zeta.iter().zip(&rule.coef) {
                // A^{-1} = (zeta - h)^{-1}
                solver.factor_shifted(*z, &h)?;
                solver.inverse_into(&mut r);
                let mut g = c64::new(0.0, 0.0);
                for mu in 0..2 {
                    let rpr = &CMat::from_fn(m, m, |i, j| r[(i, j)] * p[mu][j]) * &r;
                    let pr = CMat::from_fn(m, m, |i, j| p[mu][i] * r[(i, j)]);
                    let rdr = &(&r * &d[mu]) * &r;
                    let dr = &d[mu] * &r;
                    // Tr[R p R D R] - Tr[R D R p R]
                    g += trace_product(&rpr, &dr) - trace_product(&rdr, &pr);
                }
                lhs += *c * g * (I * 0.25);
                let mut t = c64::new(0.0, 0.0);
                for i in 0..m {
                    let rr: c64 = (0..m).map(|n| r[(i, n)] * r[(n, i)]).sum();
                    t += rr * (-0.5 * p2[i]) - r[(i, i)];
                }
                rhs += *c * t;
            }
            Ok((lhs.re, rhs.re))
        }
    }
}

fn trace_product(a: &CMat, b: &CMat) -> c64 {
    let mut s = c64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

/// Both sides of the integration-by-parts identity for the second-order
/// coefficient, integrated over `k` and averaged over `X` with the
/// normalization of [`atomic_leading_dos`]. In the continuum they agree;
/// the plane-wave truncation breaks the `k`-periodicity that removes the
/// boundary term, so they differ by a truncation-dependent amount.
pub fn ibp_identity_check(
    f: &TestFunction,
    route: &ZetaRoute,
    disc: &AtomicDiscretization,
    pot: &SyntheticPotential,
    grid_k: &BZGrid,
    grid_x: &BZGrid,
) -> Result<IbpReport> {
    check_negative_support(f)?;
    let w = grid_normalization(grid_k, grid_x)?;
    let samples = product_samples(grid_k, grid_x);
    let vals: Vec<(f64, f64)> = samples.par_iter().map(|&(k, x)| ibp_point(f, route, k, x, disc, pot)).collect::<Result<_>>()?;
    let lhs = w * vals.iter().map(|v| v.0).sum::<f64>();
    let rhs = w * vals.iter().map(|v| v.1).sum::<f64>();
    let denom = lhs.abs().max(rhs.abs());
    let difference = lhs - rhs;
    Ok(IbpReport { lhs, rhs, difference, relative_difference: if denom > 0.0 { difference.abs() / denom } else { 0.0 } })
}

/// `-(1/pi) int dbar f~ Tr[(grad_k A) A^{-1}] = -sum_i <u_i|(G + k)|u_i> f(lambda_i)`.
pub fn boundary_integrand(f: &TestFunction, k: Vec2, big_x: Vec2, disc: &AtomicDiscretization, pot: &SyntheticPotential) -> Result<Vec2> {
    let (lam, u) = linalg::eigh(&assemble_h_d0(k, big_x, disc, pot))?;
    let mut out = [0.0; 2];
    for (i, &l) in lam.iter().enumerate() {
        let fl = f.eval(l);
        if fl == 0.0 {
            continue;
        }
        for mu in 0..2 {
            let pm = momentum(k, disc, mu);
            let e: f64 = (0..lam.len()).map(|n| u[(n, i)].norm_sqr() * pm[n]).sum();
            out[mu] -= e * fl;
        }
    }
    Ok(out)
}

/// Largest jump of [`boundary_integrand`] between `n` matched points on
/// opposite edges of the reciprocal cell (shifts by `a1*` and `a2*`).
pub fn boundary_defect(f: &TestFunction, big_x: Vec2, n: usize, disc: &AtomicDiscretization, pot: &SyntheticPotential) -> Result<f64> {
    let lat = &pot.lattice;
    let mut pts = Vec::new();
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        pts.push((scale(t, lat.a2s), lat.a1s));
        pts.push((scale(t, lat.a1s), lat.a2s));
    }
    let jumps: Vec<f64> = pts
        .par_iter()
        .map(|&(k, g)| {
            let a = boundary_integrand(f, k, big_x, disc, pot)?;
            let b = boundary_integrand(f, add(k, g), big_x, disc, pot)?;
            Ok(norm(sub(a, b)))
        })
        .collect::<Result<_>>()?;
    Ok(jumps.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hscalc::{build_aae, build_quadrature};
    use crate::lattice::{make_bz_grid, Cell};

    fn setup() -> (Lattice2D, SyntheticPotential) {
        let lat = Lattice2D::natural();
        (lat, SyntheticPotential::with_defaults(lat))
    }

    fn small(pot: &SyntheticPotential) -> AtomicDiscretization {
        AtomicDiscretization::for_potential(pot, 2.0, 0.8).unwrap()
    }

    #[test]
    fn gaussian_derivatives_match_finite_differences() {
        let (s, h) = (0.7, 1e-4);
        for n in 0..3 {
            for &t in &[-1.1, 0.0, 0.4, 2.3] {
                let fd = (gauss_deriv(n, t + h, s) - gauss_deriv(n, t - h, s)) / (2.0 * h);
                assert!((fd - gauss_deriv(n + 1, t, s)).abs() < 1e-6, "n={n} t={t}");
            }
        }
    }

    #[test]
    fn potential_symmetries_hold() {
        let (_, pot) = setup();
        let d = pot.symmetry_defects(400, 3);
        let scale = pot.params.v0.abs();
        for (name, v) in ["even z", "mirror x2", "mirror x1", "rotation", "periodicity"].iter().zip(d) {
            assert!(v < 1e-12 * scale, "{name}: {v}");
        }
    }

    #[test]
    fn transverse_decay_is_bounded() {
        let (_, pot) = setup();
        let zs: Vec<f64> = (0..60).map(|i| i as f64 * 0.5).collect();
        for alpha in [[0, 0, 0], [1, 0, 0], [0, 1, 1], [0, 0, 3], [2, 1, 0], [1, 1, 1]] {
            let (c, tail) = pot.decay_constant(alpha, 1.0, &zs, 12);
            assert!(c.is_finite() && c > 0.0, "{alpha:?}");
            assert!(tail < 1e-6 * c, "{alpha:?}: tail {tail} vs {c}");
        }
    }

    #[test]
    fn fourier_coefficients_match_cell_quadrature() {
        let (lat, pot) = setup();
        let n = 48;
        for g in [[0, 0], [1, 0], [1, 1], [2, -1]] {
            let gv = lat.recip(g[0], g[1]);
            let mut s = c64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let x = crate::lattice::combo(lat.a1, lat.a2, i as f64 / n as f64, j as f64 / n as f64);
                    s += c64::from_polar(pot.v_mg(x, 0.0), -dot(gv, x));
                }
            }
            s /= (n * n) as f64;
            assert!((s - pot.fourier_xy(gv)).norm() < 1e-10, "{g:?}: {s} vs {}", pot.fourier_xy(gv));
        }
    }

    #[test]
    fn vd_symmetries_and_x_gradient() {
        let (lat, pot) = setup();
        let vd = build_vd(&pot);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let bx = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let z = rng.random_range(-3.0..3.0);
            let r = lat.site(rng.random_range(-2..=2), rng.random_range(-2..=2));
            let v = vd.eval(x, bx, z);
            assert!((vd.eval(x, [0.0, 0.0], -z) - vd.eval(x, [0.0, 0.0], z)).abs() < 1e-12);
            assert!((vd.eval(add(x, r), bx, z) - v).abs() < 1e-12);
            assert!((vd.eval(x, add(bx, rot_j(r)), z) - v).abs() < 1e-12);
            let g = vd.grad_big_x(x, bx, z);
            let h = 1e-5;
            for mu in 0..2 {
                let mut p = bx;
                let mut m = bx;
                p[mu] += h;
                m[mu] -= h;
                let fd = (vd.eval(x, p, z) - vd.eval(x, m, z)) / (2.0 * h);
                assert!((fd - g[mu]).abs() < 1e-6, "{fd} vs {}", g[mu]);
            }
        }
    }

    #[test]
    fn box_validation() {
        let (lat, pot) = setup();
        let disc = small(&pot);
        assert!(disc.validate(&pot).is_ok());
        let tight = AtomicDiscretization::new(&lat, 2.0, 0.5 * pot.params.d + 5.0 * pot.params.sigma_z, 10).unwrap();
        assert!(tight.validate(&pot).is_err());
        // 6 widths satisfies the length rule but not the wall bound
        let six = AtomicDiscretization::new(&lat, 2.0, 0.5 * pot.params.d + 6.0 * pot.params.sigma_z, 10).unwrap();
        assert!(six.validate(&pot).is_err());
    }

    #[test]
    fn gset_is_a_symmetric_ball() {
        let (lat, _) = setup();
        let disc = AtomicDiscretization::new(&lat, 3.6, 5.0, 4).unwrap();
        // shells 0, sqrt3, 3, 2 sqrt3 in units of kD = 1
        assert_eq!(disc.gset.len(), 19);
        for g in &disc.gset {
            assert!(disc.gset.contains(&[-g[0], -g[1]]));
        }
    }

    #[test]
    fn free_spectrum_is_kinetic_plus_box() {
        let (lat, _) = setup();
        let p = PotentialParams { v0: -1e-300, vint_amp: 0.0, ..PotentialParams::defaults(lat.a0) };
        let pot = SyntheticPotential::new(lat, p).unwrap();
        let disc = AtomicDiscretization::new(&lat, 2.0, 4.0, 9).unwrap();
        let k = [0.2, -0.1];
        let ev = linalg::eigvalsh(&assemble_h_d0(k, [0.3, 0.4], &disc, &pot)).unwrap();
        let mut want = Vec::new();
        for g in &disc.gvecs {
            for q in 1..=disc.n_z {
                let s = (q as f64 * PI / (2.0 * (disc.n_z + 1) as f64)).sin();
                want.push(0.5 * dot(add(*g, k), add(*g, k)) + 2.0 * s * s / (disc.h_z * disc.h_z));
            }
        }
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(ev[0] >= 0.0);
    }

    #[test]
    fn hamiltonian_is_hermitian_and_bounded_below() {
        let (_, pot) = setup();
        let disc = small(&pot);
        let m = build_vd(&pot).max_abs();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..4 {
            let k = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let h = assemble_h_d0(k, x, &disc, &pot);
            assert_eq!(linalg::hermiticity_defect(&h), 0.0);
            let ev = linalg::eigvalsh(&h).unwrap();
            assert!(ev[0] >= -m - 1e-10);
        }
    }

    #[test]
    fn rescaled_symbol_at_eta_zero_is_identical() {
        let (_, pot) = setup();
        let disc = small(&pot);
        let a = assemble_h_d0([0.1, 0.2], [1.0, -0.5], &disc, &pot);
        let b = assemble_h_tilde([0.1, 0.2], [1.0, -0.5], 0.0, &disc, &pot);
        assert_eq!(linalg::max_abs_diff(&a, &b), 0.0);
        let c = assemble_h_tilde([0.1, 0.2], [1.0, -0.5], 0.5, &disc, &pot);
        assert!(linalg::max_abs_diff(&a, &c) > 0.0);
    }

    #[test]
    fn rank_scan_edge_cases() {
        let (lat, pot) = setup();
        let disc = small(&pot);
        let m = build_vd(&pot).max_abs();
        let samples = vec![([0.0, 0.0], [0.0, 0.0]), ([0.3, 0.1], [1.0, 2.0])];
        let r = rank_bound_scan(-m - 0.01, &disc, &pot, &samples).unwrap();
        assert_eq!(r.m_e, 0);
        assert!(rank_bound_scan(0.1, &disc, &pot, &samples).is_err());
        let shifted: Vec<_> = samples.iter().map(|&(k, x)| (k, add(x, rot_j(lat.site(1, -2))))).collect();
        let a = rank_bound_scan(-1.0, &disc, &pot, &samples).unwrap();
        let b = rank_bound_scan(-1.0, &disc, &pot, &shifted).unwrap();
        assert_eq!(a.counts, b.counts);
        let deeper = rank_bound_scan(-2.0, &disc, &pot, &samples).unwrap();
        assert!(deeper.m_e <= a.m_e);
    }

    #[test]
    fn leading_dos_is_positive_linear_and_flags_zero() {
        let (lat, pot) = setup();
        let disc = small(&pot);
        let gk = make_bz_grid(&lat, Cell::Reciprocal, 2).unwrap();
        let gx = make_bz_grid(&lat, Cell::Moire, 1).unwrap();
        let f = TestFunction::bump(-2.0, 0.5).unwrap();
        let g = TestFunction::bump(-1.2, 0.4).unwrap();
        let a = atomic_leading_dos(&f, &disc, &pot, &gk, &gx).unwrap();
        let b = atomic_leading_dos(&g, &disc, &pot, &gk, &gx).unwrap();
        let fg = TestFunction::combine(vec![(2.0, f.clone()), (0.5, g.clone())]);
        let c = atomic_leading_dos(&fg, &disc, &pot, &gk, &gx).unwrap();
        assert!(a.dos.value > 0.0 && b.dos.value > 0.0);
        assert!(!a.near_zero_warning);
        assert!((c.dos.value - 2.0 * a.dos.value - 0.5 * b.dos.value).abs() < 1e-12 * c.dos.value);
        let e = atomic_leading_dos_eta(&f, 0.0, &disc, &pot, &gk, &gx).unwrap();
        assert_eq!(e.dos.value.to_bits(), a.dos.value.to_bits());
        let near = TestFunction::bump(-0.3, 0.29).unwrap();
        assert!(atomic_leading_dos(&near, &disc, &pot, &gk, &gx).unwrap().near_zero_warning);
        assert!(atomic_leading_dos(&TestFunction::bump(0.5, 0.2).unwrap(), &disc, &pot, &gk, &gx).is_err());
    }

    #[test]
    fn deeper_wells_lower_every_level() {
        // V_deep <= V pointwise, so min-max orders the spectra
        let (lat, pot) = setup();
        let disc = small(&pot);
        let deep = SyntheticPotential::new(lat, PotentialParams { v0: 2.0 * pot.params.v0, ..pot.params }).unwrap();
        for (k, x) in [([0.0, 0.0], [0.0, 0.0]), ([0.3, -0.2], [1.1, 0.4])] {
            let a = linalg::eigvalsh(&assemble_h_d0(k, x, &disc, &pot)).unwrap();
            let b = linalg::eigvalsh(&assemble_h_d0(k, x, &disc, &deep)).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| *v <= *u + 1e-10));
            assert!(b[0] < a[0] - 0.1);
        }
    }

    #[test]
    fn ibp_routes_agree_on_a_tiny_basis() {
        let (lat, pot) = setup();
        let disc = AtomicDiscretization::new(&lat, 1.8, 4.0, 4).unwrap();
        let gk = make_bz_grid(&lat, Cell::Reciprocal, 1).unwrap();
        let gx = make_bz_grid(&lat, Cell::Moire, 1).unwrap();
        let k = gk.nodes[0];
        let ev = linalg::eigvalsh(&assemble_h_d0(k, gx.nodes[0], &disc, &pot)).unwrap();
        let f = TestFunction::bump(ev[0] + 0.2, 0.6).unwrap();
        let aae = build_aae(&f, 8, 0.03 * 0.6).unwrap();
        let rule = HsRule::new(&aae, &build_quadrature(&aae, 400, 400).unwrap());
        let dd = ibp_identity_check(&f, &ZetaRoute::DividedDifference, &disc, &pot, &gk, &gx).unwrap();
        let hs = ibp_identity_check(&f, &ZetaRoute::Quadrature(rule), &disc, &pot, &gk, &gx).unwrap();
        assert!(dd.lhs.abs() > 1e-3 && dd.rhs.abs() > 1e-3);
        assert!((dd.lhs - hs.lhs).abs() < 1e-5 * dd.lhs.abs(), "{dd:?} {hs:?}");
        assert!((dd.rhs - hs.rhs).abs() < 1e-5 * dd.rhs.abs(), "{dd:?} {hs:?}");
    }

    #[test]
    fn ibp_without_negative_spectrum_is_zero() {
        let (lat, _) = setup();
        let p = PotentialParams { v0: -1e-300, vint_amp: 0.0, ..PotentialParams::defaults(lat.a0) };
        let pot = SyntheticPotential::new(lat, p).unwrap();
        let disc = AtomicDiscretization::new(&lat, 2.0, 4.0, 6).unwrap();
        let gk = make_bz_grid(&lat, Cell::Reciprocal, 2).unwrap();
        let gx = make_bz_grid(&lat, Cell::Moire, 1).unwrap();
        let r = ibp_identity_check(&TestFunction::bump(-1.0, 0.5).unwrap(), &ZetaRoute::DividedDifference, &disc, &pot, &gk, &gx).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }
}
