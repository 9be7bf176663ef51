//! Graphene lattice geometry, twist parameters and periodic sampling grids.

use crate::error::{invalid, Result};
use std::f64::consts::PI;

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// `J = [[0, 1], [-1, 0]]` applied to `v`.
#[inline]
pub fn rot_j(v: Vec2) -> Vec2 {
    [v[1], -v[0]]
}

#[inline]
pub fn det(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// `n1 b1 + n2 b2`.
#[inline]
pub fn combo(b1: Vec2, b2: Vec2, n1: f64, n2: f64) -> Vec2 {
    [n1 * b1[0] + n2 * b2[0], n1 * b1[1] + n2 * b2[1]]
}

/// Coordinates of `v` in the basis `(b1, b2)`.
pub fn frac_coords(b1: Vec2, b2: Vec2, v: Vec2) -> Vec2 {
    let d = det(b1, b2);
    [det(v, b2) / d, det(b1, v) / d]
}

/// Dual basis `d_i` with `b_i . d_j = 2 pi delta_ij`.
pub fn dual_basis(b1: Vec2, b2: Vec2) -> (Vec2, Vec2) {
    let d = det(b1, b2);
    let s = 2.0 * PI / d;
    ([s * b2[1], -s * b2[0]], [-s * b1[1], s * b1[0]])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice2D {
    pub a0: f64,
    pub a1: Vec2,
    pub a2: Vec2,
    pub a1s: Vec2,
    pub a2s: Vec2,
    /// |Omega|
    pub cell_area: f64,
    pub kd: f64,
    pub k: Vec2,
    pub kp: Vec2,
}

pub fn build_graphene_lattice(a0: f64) -> Result<Lattice2D> {
    if !(a0 > 0.0 && a0.is_finite()) {
        return invalid(format!("lattice constant must be positive, got {a0}"));
    }
    let s3 = 3f64.sqrt();
    let kd = 4.0 * PI / (3.0 * a0);
    let a1 = [a0 * 0.5, -a0 * s3 / 2.0];
    let a2 = [a0 * 0.5, a0 * s3 / 2.0];
    let a1s = [s3 * kd * s3 / 2.0, -s3 * kd * 0.5];
    let a2s = [s3 * kd * s3 / 2.0, s3 * kd * 0.5];
    let k = scale(1.0 / 3.0, add(a1s, a2s));
    Ok(Lattice2D {
        a0,
        a1,
        a2,
        a1s,
        a2s,
        cell_area: det(a1, a2).abs(),
        kd,
        k,
        kp: scale(-1.0, k),
    })
}

impl Lattice2D {
    /// Lattice with `kD = 1`, i.e. `a0 = 4 pi / 3`.
    pub fn natural() -> Self {
        build_graphene_lattice(4.0 * PI / 3.0).expect("positive constant")
    }

    /// |Omega*|
    pub fn recip_cell_area(&self) -> f64 {
        det(self.a1s, self.a2s).abs()
    }

    pub fn site(&self, n1: i64, n2: i64) -> Vec2 {
        combo(self.a1, self.a2, n1 as f64, n2 as f64)
    }

    pub fn recip(&self, n1: i64, n2: i64) -> Vec2 {
        combo(self.a1s, self.a2s, n1 as f64, n2 as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistParams {
    pub theta: f64,
    pub eps: f64,
    pub eta: f64,
    pub c_eps: f64,
    pub g_eps: f64,
}

/// `c(eps) = (1 - sqrt(1 - eps^2)) / eps`.
pub fn c_of_eps(eps: f64) -> f64 {
    if eps.abs() < 1e-4 {
        let e2 = eps * eps;
        eps * (0.5 + e2 * (0.125 + e2 * (0.0625 + e2 * 5.0 / 128.0)))
    } else {
        // rationalized, no cancellation
        eps / (1.0 + (1.0 - eps * eps).sqrt())
    }
}

pub fn twist_params(theta: f64) -> Result<TwistParams> {
    if !(0.0..PI / 3.0).contains(&theta) {
        return invalid(format!("twist angle {theta} outside [0, pi/3)"));
    }
    let eps = (theta / 2.0).sin();
    let c = c_of_eps(eps);
    Ok(TwistParams {
        theta,
        eps,
        eta: (theta / 2.0).tan(),
        c_eps: c,
        g_eps: eps * c,
    })
}

pub fn twist_from_eps(eps: f64) -> Result<TwistParams> {
    if !(0.0..0.5).contains(&eps) {
        return invalid(format!("eps {eps} outside [0, 1/2)"));
    }
    twist_params(2.0 * eps.asin())
}

pub fn twist_from_degrees(deg: f64) -> Result<TwistParams> {
    twist_params(deg.to_radians())
}

impl TwistParams {
    /// `R_{theta/2}` from cos/sin.
    pub fn rotation_half(&self) -> [[f64; 2]; 2] {
        let (s, c) = (self.theta / 2.0).sin_cos();
        [[c, -s], [s, c]]
    }

    /// `(1 - c eps) I - eps J`.
    pub fn rotation_half_decomposed(&self) -> [[f64; 2]; 2] {
        let d = 1.0 - self.c_eps * self.eps;
        [[d, -self.eps], [self.eps, d]]
    }
}

/// Torus on which a grid lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    /// Omega, spanned by a1, a2.
    Direct,
    /// Omega*, spanned by a1*, a2*.
    Reciprocal,
    /// J Omega.
    Moire,
    /// Brillouin zone of eps^{-1} J L, spanned by eps J a_i*.
    MoireBz { eps: f64 },
    /// Any parallelogram.
    Span { b1: Vec2, b2: Vec2 },
}

impl Cell {
    pub fn basis(&self, lat: &Lattice2D) -> (Vec2, Vec2) {
        match *self {
            Cell::Direct => (lat.a1, lat.a2),
            Cell::Reciprocal => (lat.a1s, lat.a2s),
            Cell::Moire => (rot_j(lat.a1), rot_j(lat.a2)),
            Cell::MoireBz { eps } => (scale(eps, rot_j(lat.a1s)), scale(eps, rot_j(lat.a2s))),
            Cell::Span { b1, b2 } => (b1, b2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BZGrid {
    pub b1: Vec2,
    pub b2: Vec2,
    pub n: usize,
    pub frac: Vec<Vec2>,
    pub nodes: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl BZGrid {
    pub fn area(&self) -> f64 {
        det(self.b1, self.b2).abs()
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Uniform `n x n` midpoint grid in fractional coordinates.
pub fn make_bz_grid(lat: &Lattice2D, cell: Cell, n: usize) -> Result<BZGrid> {
    make_bz_grid_offset(lat, cell, n, [0.5, 0.5])
}

/// As [`make_bz_grid`] with node `(i + o1, j + o2) / n`.
pub fn make_bz_grid_offset(lat: &Lattice2D, cell: Cell, n: usize, offset: Vec2) -> Result<BZGrid> {
    if n == 0 {
        return invalid("grid resolution must be at least 1");
    }
    let (b1, b2) = cell.basis(lat);
    let area = det(b1, b2).abs();
    if !(area > 0.0) {
        return invalid("degenerate cell");
    }
    let w = area / (n * n) as f64;
    let mut frac = Vec::with_capacity(n * n);
    let mut nodes = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let t = [(i as f64 + offset[0]) / n as f64, (j as f64 + offset[1]) / n as f64];
            frac.push(t);
            nodes.push(combo(b1, b2, t[0], t[1]));
        }
    }
    Ok(BZGrid { b1, b2, n, frac, nodes, weights: vec![w; n * n] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_lattice_vectors() {
        let l = build_graphene_lattice(1.0).unwrap();
        let s3 = 3f64.sqrt();
        assert!((l.a1[0] - 0.5).abs() < 1e-15 && (l.a1[1] + s3 / 2.0).abs() < 1e-15);
        assert!((l.a2[0] - 0.5).abs() < 1e-15 && (l.a2[1] - s3 / 2.0).abs() < 1e-15);
        assert!((l.a1s[0] - 2.0 * PI).abs() < 1e-13);
        assert!((l.a1s[1] + 2.0 * PI / s3).abs() < 1e-13);
        assert!((l.k[0] - 4.0 * PI / 3.0).abs() < 1e-13 && l.k[1].abs() < 1e-13);
        assert_eq!(l.kp, scale(-1.0, l.k));
    }

    #[test]
    fn duality_and_area() {
        for &a0 in &[0.3, 1.0, 2.46, 4.0 * PI / 3.0] {
            let l = build_graphene_lattice(a0).unwrap();
            let p = 2.0 * PI;
            assert!((dot(l.a1, l.a1s) - p).abs() < 1e-12);
            assert!((dot(l.a2, l.a2s) - p).abs() < 1e-12);
            assert!(dot(l.a1, l.a2s).abs() < 1e-12);
            assert!(dot(l.a2, l.a1s).abs() < 1e-12);
            assert!((l.cell_area * l.recip_cell_area() / (p * p) - 1.0).abs() < 1e-13);
            assert!((norm(l.a1) - a0).abs() < 1e-14 * a0.max(1.0));
            let cosang = dot(l.a1, l.a2) / (norm(l.a1) * norm(l.a2));
            assert!((cosang + 0.5).abs() < 1e-12);
            assert!((l.kd - 4.0 * PI / (3.0 * a0)).abs() < 1e-14 * l.kd);
        }
    }

    #[test]
    fn bad_a0() {
        assert!(build_graphene_lattice(0.0).is_err());
        assert!(build_graphene_lattice(-1.0).is_err());
        assert!(build_graphene_lattice(f64::NAN).is_err());
    }

    #[test]
    fn dual_basis_matches_reciprocal() {
        let l = Lattice2D::natural();
        let (d1, d2) = dual_basis(l.a1, l.a2);
        assert!(norm(sub(d1, l.a1s)) < 1e-12 && norm(sub(d2, l.a2s)) < 1e-12);
        let f = frac_coords(l.a1s, l.a2s, l.recip(3, -2));
        assert!((f[0] - 3.0).abs() < 1e-12 && (f[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn twist_edge_values() {
        let t = twist_params(0.0).unwrap();
        assert_eq!((t.eps, t.c_eps, t.g_eps), (0.0, 0.0, 0.0));
        assert!((c_of_eps(1.0) - 1.0).abs() < 1e-15);
        assert!(twist_params(PI / 3.0).is_err());
        assert!(twist_params(-0.1).is_err());
    }

    #[test]
    fn rotation_decomposition() {
        let t = twist_from_eps(0.1).unwrap();
        let (r, q) = (t.rotation_half(), t.rotation_half_decomposed());
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[i][j] - q[i][j]).abs() <= 1e-14);
            }
        }
        for s in 0..200 {
            let t = twist_params(s as f64 / 200.0 * PI / 3.0).unwrap();
            let (r, q) = (t.rotation_half(), t.rotation_half_decomposed());
            for i in 0..2 {
                for j in 0..2 {
                    assert!((r[i][j] - q[i][j]).abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn c_series_branch_is_continuous() {
        // both branches at the switch point
        let e: f64 = 0.99999999e-4;
        let rational = e / (1.0 + (1.0 - e * e).sqrt());
        assert!((c_of_eps(e) - rational).abs() < 1e-15 * rational);
        assert!((c_of_eps(1e-4) - c_of_eps(e)).abs() < 1e-11);
        let e = 1e-5;
        let ref_val = (1.0 - (1.0 - e * e as f64).sqrt()) / e;
        assert!((c_of_eps(e) - e / 2.0 - e * e * e / 8.0).abs() < 1e-20);
        assert!((ref_val - e / 2.0).abs() < 1e-10);
        for s in 1..100 {
            let e = 0.3 * s as f64 / 100.0;
            assert!((c_of_eps(e) - e / 2.0).abs() <= e * e * e);
            let g = e * c_of_eps(e);
            assert!((g - (1.0 - (1.0 - e * e).sqrt())).abs() < 1e-15);
        }
        let e = 1e-3;
        assert!((e * c_of_eps(e) / (e * e) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn grids() {
        let l = Lattice2D::natural();
        let g = make_bz_grid(&l, Cell::Reciprocal, 1).unwrap();
        assert_eq!(g.len(), 1);
        assert!(norm(sub(g.nodes[0], scale(0.5, add(l.a1s, l.a2s)))) < 1e-14);
        assert!((g.weights[0] - l.recip_cell_area()).abs() < 1e-14);
        let g = make_bz_grid(&l, Cell::Reciprocal, 4).unwrap();
        let s: f64 = g.weights.iter().sum();
        assert!((s / ((2.0 * PI).powi(2) / l.cell_area) - 1.0).abs() < 1e-12);
        for n in [1, 3, 7] {
            let g = make_bz_grid(&l, Cell::Moire, n).unwrap();
            let s: f64 = g.weights.iter().sum();
            assert!((s / l.cell_area - 1.0).abs() < 1e-12);
            assert!(g.weights.iter().all(|&w| w > 0.0));
        }
        assert!(make_bz_grid(&l, Cell::Direct, 0).is_err());
    }
}
