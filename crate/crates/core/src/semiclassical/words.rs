//! Symbolic expansion of the resolvent integrands into words in `R`,
//! derivatives of `h_0`, and the kinetic corrections.
//!
//! After the zeta integration, the trace of a word
//! `R W_1 R W_2 ... R W_m` equals
//! `sum_{i_1..i_m} prod_k (U^* W_k U)[i_k, i_{k+1}] f[lambda_{i_1}, ..., lambda_{i_m}]`
//! with `h_0 = U diag(lambda) U^*`, so every coefficient density is a
//! finite sum of divided differences. This is the production route; the
//! literal HS route in the parent module is its cross-check.

use super::bundle::{PointSpectrum, SymbolBundle, KAPPA, XVAR};
use super::mat4::M4;
use crate::hscalc::{DdLayout, DividedDifferences};
use crate::hscalc::TestFunction;
use crate::lattice::Vec2;
use crate::linalg::c64;
use std::collections::{BTreeMap, HashMap};

/// A factor of a word. Multi-indices count derivatives in
/// `(kappa_1, kappa_2, X_1, X_2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Factor {
    /// `(zeta - h_0)^{-1}`.
    R,
    /// `zeta - h_0`; only ever appears differentiated.
    A,
    /// A nonzero-order derivative of `h_0`.
    H([u8; 4]),
    /// `T_{0,1}` and its derivatives.
    C([u8; 4]),
    /// `T_{0,2}` and its derivatives.
    T2([u8; 4]),
}

fn bump(d: [u8; 4], l: usize) -> [u8; 4] {
    let mut e = d;
    e[l] += 1;
    e
}

fn kappa_order(d: &[u8; 4]) -> u8 {
    d[0] + d[1]
}

fn x_order(d: &[u8; 4]) -> u8 {
    d[2] + d[3]
}

/// `T_0` is linear in `kappa` and `V` depends on `X` only.
fn h_nonzero(d: &[u8; 4]) -> bool {
    let (k, x) = (kappa_order(d), x_order(d));
    (k == 1 && x == 0) || (k == 0 && x >= 1)
}

/// Affine in `kappa`, independent of `X`.
fn kinetic_nonzero(d: &[u8; 4]) -> bool {
    kappa_order(d) <= 1 && x_order(d) == 0
}

/// A linear combination of words.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expr {
    pub terms: BTreeMap<Vec<Factor>, c64>,
}

impl Expr {
    pub fn factor(f: Factor) -> Expr {
        Expr::word(vec![f], c64::new(1.0, 0.0))
    }

    pub fn word(w: Vec<Factor>, c: c64) -> Expr {
        let mut e = Expr::default();
        e.push(w, c);
        e
    }

    fn push(&mut self, w: Vec<Factor>, c: c64) {
        if c == c64::new(0.0, 0.0) {
            return;
        }
        let slot = self.terms.entry(w).or_insert(c64::new(0.0, 0.0));
        *slot += c;
    }

    fn prune(mut self) -> Expr {
        self.terms.retain(|_, c| c.norm() > 1e-14);
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &Expr) -> Expr {
        let mut out = self.clone();
        for (w, c) in &o.terms {
            out.push(w.clone(), *c);
        }
        out.prune()
    }

    pub fn scale(&self, s: c64) -> Expr {
        let mut out = Expr::default();
        for (w, c) in &self.terms {
            out.push(w.clone(), c * s);
        }
        out.prune()
    }

    pub fn mul(&self, o: &Expr) -> Expr {
        let mut out = Expr::default();
        for (wa, ca) in &self.terms {
            for (wb, cb) in &o.terms {
                let mut w = wa.clone();
                w.extend_from_slice(wb);
                out.push(w, ca * cb);
            }
        }
        out.prune()
    }

    /// Leibniz rule with `dR = R (dh) R`, `dA = -dh`.
    pub fn deriv(&self, l: usize) -> Expr {
        let one = c64::new(1.0, 0.0);
        let mut out = Expr::default();
        for (w, c) in &self.terms {
            for (p, f) in w.iter().enumerate() {
                let (repl, s): (Vec<Factor>, c64) = match *f {
                    Factor::R => (vec![Factor::R, Factor::H(bump([0; 4], l)), Factor::R], one),
                    Factor::A => (vec![Factor::H(bump([0; 4], l))], -one),
                    Factor::H(d) => {
                        let e = bump(d, l);
                        if !h_nonzero(&e) {
                            continue;
                        }
                        (vec![Factor::H(e)], one)
                    }
                    Factor::C(d) => {
                        let e = bump(d, l);
                        if !kinetic_nonzero(&e) {
                            continue;
                        }
                        (vec![Factor::C(e)], one)
                    }
                    Factor::T2(d) => {
                        let e = bump(d, l);
                        if !kinetic_nonzero(&e) {
                            continue;
                        }
                        (vec![Factor::T2(e)], one)
                    }
                };
                let mut nw = Vec::with_capacity(w.len() + 2);
                nw.extend_from_slice(&w[..p]);
                nw.extend(repl);
                nw.extend_from_slice(&w[p + 1..]);
                out.push(nw, c * s);
            }
        }
        out.prune()
    }

    /// Drops words with no resolvent (holomorphic in zeta, so they
    /// integrate to zero) and merges cyclic rotations, which have equal
    /// traces. Each word is rotated to start with `R`.
    pub fn cyclic_canonical(&self) -> Expr {
        let mut out = Expr::default();
        for (w, c) in &self.terms {
            assert!(!w.contains(&Factor::A), "undifferentiated zeta - h_0 left in a word");
            let rs: Vec<usize> = (0..w.len()).filter(|&i| w[i] == Factor::R).collect();
            if rs.is_empty() {
                continue;
            }
            let best = rs
                .iter()
                .map(|&s| {
                    let mut r = w[s..].to_vec();
                    r.extend_from_slice(&w[..s]);
                    r
                })
                .min()
                .expect("at least one rotation");
            out.push(best, *c);
        }
        out.prune()
    }
}

/// `{a, b} = sum_i d_{X_i} a d_{k_i} b - d_{k_i} a d_{X_i} b`.
pub fn poisson(a: &Expr, b: &Expr) -> Expr {
    let mut out = Expr::default();
    for i in 0..2 {
        out = out.add(&a.deriv(XVAR[i]).mul(&b.deriv(KAPPA[i])));
        out = out.add(&a.deriv(KAPPA[i]).mul(&b.deriv(XVAR[i])).scale(c64::new(-1.0, 0.0)));
    }
    out
}

/// `{a, b}_2 = sum_ij a_{k_i k_j} b_{X_i X_j} + a_{X_i X_j} b_{k_i k_j} - 2 a_{k_i X_j} b_{X_i k_j}`.
pub fn poisson2(a: &Expr, b: &Expr) -> Expr {
    let mut out = Expr::default();
    for i in 0..2 {
        for j in 0..2 {
            let (ki, kj, xi, xj) = (KAPPA[i], KAPPA[j], XVAR[i], XVAR[j]);
            out = out.add(&a.deriv(ki).deriv(kj).mul(&b.deriv(xi).deriv(xj)));
            out = out.add(&a.deriv(xi).deriv(xj).mul(&b.deriv(ki).deriv(kj)));
            out = out.add(&a.deriv(ki).deriv(xj).mul(&b.deriv(xi).deriv(kj)).scale(c64::new(-2.0, 0.0)));
        }
    }
    out
}

/// The bracketed integrand of the first-order coefficient:
/// `-(i/2) {R, A} R + R C R`.
pub fn integrand_1() -> Expr {
    let (r, a, c) = (Expr::factor(Factor::R), Expr::factor(Factor::A), Expr::factor(Factor::C([0; 4])));
    let i2 = c64::new(0.0, 0.5);
    poisson(&r, &a).mul(&r).scale(-i2).add(&r.mul(&c).mul(&r))
}

/// The bracketed integrand of the second-order coefficient, term by term:
/// `-1/4 R {A,R}^2 + 1/4 {R,{A,R}} + 1/8 R {A,R}_2 + R T2 R + R (C R)^2
///  + (i/2) {R,C} R - (i/2) {R C R, A} R - (i/2) {R,A} R C R`.
///
/// `R T2 R` is `-1/2 R T_0 R` without a layer shift.
pub fn integrand_2() -> Expr {
    let (r, a, c) = (Expr::factor(Factor::R), Expr::factor(Factor::A), Expr::factor(Factor::C([0; 4])));
    let t2 = Expr::factor(Factor::T2([0; 4]));
    let re = |x: f64| c64::new(x, 0.0);
    let i2 = c64::new(0.0, 0.5);
    let ar = poisson(&a, &r);
    let rcr = r.mul(&c).mul(&r);
    let terms = [
        r.mul(&ar).mul(&ar).scale(re(-0.25)),
        poisson(&r, &ar).scale(re(0.25)),
        r.mul(&poisson2(&a, &r)).scale(re(0.125)),
        r.mul(&t2).mul(&r),
        r.mul(&c).mul(&r).mul(&c).mul(&r),
        poisson(&r, &c).mul(&r).scale(i2),
        poisson(&rcr, &a).mul(&r).scale(-i2),
        poisson(&r, &a).mul(&rcr).scale(-i2),
    ];
    terms.iter().fold(Expr::default(), |acc, t| acc.add(t))
}

/// The same integrand in the factorization obtained from the right
/// parametrix: `R (C R)^2 - (i/2) {R,A} R C R - (1/2) R T_0 R
/// - (i/2) {R C R, A} R + (i/2) {R,C} R - 1/4 {{R,A} R, A} R + 1/8 {R,A}_2 R`.
pub fn integrand_2_right() -> Expr {
    let (r, a, c) = (Expr::factor(Factor::R), Expr::factor(Factor::A), Expr::factor(Factor::C([0; 4])));
    let t2 = Expr::factor(Factor::T2([0; 4]));
    let re = |x: f64| c64::new(x, 0.0);
    let i2 = c64::new(0.0, 0.5);
    let rcr = r.mul(&c).mul(&r);
    let terms = [
        r.mul(&c).mul(&r).mul(&c).mul(&r),
        poisson(&r, &a).mul(&rcr).scale(-i2),
        r.mul(&t2).mul(&r),
        poisson(&rcr, &a).mul(&r).scale(-i2),
        poisson(&r, &c).mul(&r).scale(i2),
        poisson(&poisson(&r, &a).mul(&r), &a).mul(&r).scale(re(-0.25)),
        poisson2(&r, &a).mul(&r).scale(re(0.125)),
    ];
    terms.iter().fold(Expr::default(), |acc, t| acc.add(t))
}

/// A canonical word split at its resolvents: `R S_1 R S_2 ... R S_m`,
/// with each `S_k` an index into the table of distinct segments.
#[derive(Clone, Debug)]
struct CompiledWord {
    /// Weight of the real part of the word's trace.
    re_coef: c64,
    /// Weight of its imaginary part (the defect).
    im_coef: c64,
    segs: Vec<usize>,
}

/// Words of one coefficient, ready for pointwise evaluation.
#[derive(Clone, Debug)]
pub struct CompiledDensity {
    words: Vec<CompiledWord>,
    /// Distinct non-resolvent factors.
    factors: Vec<Factor>,
    /// Distinct segments as products of `factors`.
    segments: Vec<Vec<usize>>,
    pub max_resolvents: usize,
    layout: DdLayout,
}

impl CompiledDensity {
    /// Words and their reversals have complex-conjugate traces (all
    /// factors are Hermitian and `f` is real), so each reversal pair is
    /// evaluated once.
    pub fn new(e: &Expr) -> Self {
        let canon = e.cyclic_canonical();
        let mut paired: Vec<(Vec<Factor>, c64, c64)> = Vec::new();
        let mut seen: std::collections::HashSet<Vec<Factor>> = std::collections::HashSet::new();
        for (w, c) in &canon.terms {
            if seen.contains(w) {
                continue;
            }
            let rev = reversed_canonical(w);
            seen.insert(w.clone());
            if rev == *w {
                paired.push((w.clone(), *c, *c));
            } else {
                let cr = canon.terms.get(&rev).copied().unwrap_or(c64::new(0.0, 0.0));
                seen.insert(rev);
                paired.push((w.clone(), c + cr.conj(), c - cr.conj()));
            }
        }
        let mut fac_index: HashMap<Factor, usize> = HashMap::new();
        let mut factors = Vec::new();
        let mut seg_index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut segments = Vec::new();
        let mut words = Vec::new();
        let mut max_resolvents = 0;
        for (w, re_coef, im_coef) in &paired {
            let mut segs = Vec::new();
            let mut cur: Vec<usize> = Vec::new();
            for f in &w[1..] {
                if *f == Factor::R {
                    segs.push(std::mem::take(&mut cur));
                } else {
                    let id = *fac_index.entry(*f).or_insert_with(|| {
                        factors.push(*f);
                        factors.len() - 1
                    });
                    cur.push(id);
                }
            }
            segs.push(cur);
            let ids = segs
                .into_iter()
                .map(|s| {
                    *seg_index.entry(s.clone()).or_insert_with(|| {
                        segments.push(s);
                        segments.len() - 1
                    })
                })
                .collect::<Vec<_>>();
            max_resolvents = max_resolvents.max(ids.len());
            words.push(CompiledWord { re_coef: *re_coef, im_coef: *im_coef, segs: ids });
        }
        let layout = DdLayout::new(4, max_resolvents.max(1));
        CompiledDensity { words, factors, segments, max_resolvents, layout }
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    /// `Tr` of the zeta-integrated density at one point; returns the real
    /// part and the magnitude of the imaginary part.
    pub fn eval(&self, f: &TestFunction, bundle: &SymbolBundle, kappa: Vec2, x: Vec2, spec: &PointSpectrum) -> (f64, f64) {
        let (lo, hi) = f.support();
        if spec.lambda[3] <= lo || spec.lambda[0] >= hi {
            return (0.0, 0.0);
        }
        let dd = DividedDifferences::with_layout(f, &spec.lambda, &self.layout);
        let base: Vec<M4> = self.factors.iter().map(|&fac| base_matrix(bundle, fac, kappa, x).conj_by(&spec.u)).collect();
        let seg_mats: Vec<M4> = self
            .segments
            .iter()
            .map(|s| match s.as_slice() {
                [] => M4::identity(),
                [a, rest @ ..] => rest.iter().fold(base[*a], |m, &b| m * base[b]),
            })
            .collect();
        let st = [dd.stride(0), dd.stride(1), dd.stride(2), dd.stride(3)];
        let (mut re, mut im) = (0.0, 0.0);
        for w in &self.words {
            let acc = match w.segs.as_slice() {
                &[a] => contract1(&seg_mats[a], &dd, &st),
                &[a, b] => contract2(&seg_mats[a], &seg_mats[b], &dd, &st),
                &[a, b, c] => contract3([&seg_mats[a], &seg_mats[b], &seg_mats[c]], &dd, &st),
                &[a, b, c, d] => contract4([&seg_mats[a], &seg_mats[b], &seg_mats[c], &seg_mats[d]], &dd, &st),
                &[a, b, c, d, e] => {
                    contract5([&seg_mats[a], &seg_mats[b], &seg_mats[c], &seg_mats[d], &seg_mats[e]], &dd, &st)
                }
                _ => {
                    let mats: Vec<&M4> = w.segs.iter().map(|&s| &seg_mats[s]).collect();
                    let mut acc = c64::new(0.0, 0.0);
                    for i0 in 0..4 {
                        acc += contract(&mats, &dd, 0, i0, i0, st[i0], c64::new(1.0, 0.0));
                    }
                    acc
                }
            };
            re += (w.re_coef * acc).re;
            im += (w.im_coef * acc).im;
        }
        (re, im.abs())
    }
}

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

fn contract1(a: &M4, dd: &DividedDifferences, st: &[usize; 4]) -> c64 {
    (0..4).map(|i| a.0[i][i] * dd.by_key(st[i])).sum()
}

fn contract2(a: &M4, b: &M4, dd: &DividedDifferences, st: &[usize; 4]) -> c64 {
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            acc += a.0[i][j] * b.0[j][i] * dd.by_key(st[i] + st[j]);
        }
    }
    acc
}

fn contract3(m: [&M4; 3], dd: &DividedDifferences, st: &[usize; 4]) -> c64 {
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            let p = m[0].0[i][j];
            if p == ZERO {
                continue;
            }
            for k in 0..4 {
                acc += p * m[1].0[j][k] * m[2].0[k][i] * dd.by_key(st[i] + st[j] + st[k]);
            }
        }
    }
    acc
}

fn contract4(m: [&M4; 4], dd: &DividedDifferences, st: &[usize; 4]) -> c64 {
    let mut acc = ZERO;
    for i in 0..4 {
        // tail[k][l] = m3[k][l] m4[l][i]
        let mut tail = [[ZERO; 4]; 4];
        for k in 0..4 {
            for l in 0..4 {
                tail[k][l] = m[2].0[k][l] * m[3].0[l][i];
            }
        }
        for j in 0..4 {
            let p = m[0].0[i][j];
            if p == ZERO {
                continue;
            }
            for k in 0..4 {
                let q = p * m[1].0[j][k];
                if q == ZERO {
                    continue;
                }
                let key = st[i] + st[j] + st[k];
                let mut inner = ZERO;
                for l in 0..4 {
                    inner += tail[k][l] * dd.by_key(key + st[l]);
                }
                acc += q * inner;
            }
        }
    }
    acc
}

fn contract5(m: [&M4; 5], dd: &DividedDifferences, st: &[usize; 4]) -> c64 {
    let mut acc = ZERO;
    for i in 0..4 {
        let mut tail = [[ZERO; 4]; 4];
        for l in 0..4 {
            for n in 0..4 {
                tail[l][n] = m[3].0[l][n] * m[4].0[n][i];
            }
        }
        for j in 0..4 {
            let p = m[0].0[i][j];
            if p == ZERO {
                continue;
            }
            for k in 0..4 {
                let q = p * m[1].0[j][k];
                if q == ZERO {
                    continue;
                }
                for l in 0..4 {
                    let r = q * m[2].0[k][l];
                    if r == ZERO {
                        continue;
                    }
                    let key = st[i] + st[j] + st[k] + st[l];
                    let mut inner = ZERO;
                    for n in 0..4 {
                        inner += tail[l][n] * dd.by_key(key + st[n]);
                    }
                    acc += r * inner;
                }
            }
        }
    }
    acc
}

/// Sum over `i_{k+1}..i_{m-1}` of the path weight closing back at `start`.
fn contract(mats: &[&M4], dd: &DividedDifferences, k: usize, cur: usize, start: usize, key: usize, w: c64) -> c64 {
    let m = mats.len();
    let row = &mats[k].0[cur];
    if k + 1 == m {
        let s = row[start];
        return if s == ZERO { s } else { w * s * dd.by_key(key) };
    }
    let mut acc = ZERO;
    for (j, &s) in row.iter().enumerate() {
        if s == ZERO {
            continue;
        }
        acc += contract(mats, dd, k + 1, j, start, key + dd.stride(j), w * s);
    }
    acc
}

/// The reversed word, rotated to its canonical start.
fn reversed_canonical(w: &[Factor]) -> Vec<Factor> {
    let mut r: Vec<Factor> = w.to_vec();
    r.reverse();
    let e = Expr::word(r, c64::new(1.0, 0.0)).cyclic_canonical();
    e.terms.into_keys().next().expect("a word with resolvents")
}

/// A non-resolvent factor evaluated at `(kappa, X)`.
fn base_matrix(b: &SymbolBundle, f: Factor, kappa: Vec2, x: Vec2) -> M4 {
    match f {
        Factor::R | Factor::A => unreachable!("resolvents are split out and A is always differentiated"),
        Factor::H(d) => {
            if kappa_order(&d) == 1 {
                b.dk()[if d[0] == 1 { 0 } else { 1 }]
            } else {
                b.v_deriv(x, d[2] as usize, d[3] as usize)
            }
        }
        Factor::C(d) => match kappa_order(&d) {
            0 => b.t01(kappa),
            _ => b.dk_t01()[if d[0] == 1 { 0 } else { 1 }],
        },
        Factor::T2(d) => match kappa_order(&d) {
            0 => b.t02(kappa),
            _ => b.dk_t02()[if d[0] == 1 { 0 } else { 1 }],
        },
    }
}
