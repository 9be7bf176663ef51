//! Exact finite realizations of the Weyl quantization `Op_eps` and its
//! twisted variant on lattice-Fourier symbols, with brute-force checks of
//! the Moyal expansion and of the trace-per-unit-area formula.
//!
//! The k-torus `R^2 / L*` is represented in the lattice-site basis
//! `e^{i k.R}`, `R in L`. Since `Op_eps(a) = a(k, i eps grad_k)`, a shift
//! `k -> k - eps Q` acts on `e^{i k.R}` as the phase `e^{-i eps Q.R}` and the
//! Weyl midpoint rule adds `e^{-i eps Q.rho/2}`; every matrix entry is thus a
//! closed-form phase and no grid commensurability is needed.

use crate::error::{invalid, Error, Result};
use crate::lattice::{add, c_of_eps, dot, frac_coords, rot_j, scale, Lattice2D, Vec2};
use crate::linalg::{adjoint, axpy, c64, scaled, CMat, I};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Fourier indices of one symbol term: `Q = J(q1 a1* + q2 a2*)` in `J L*`
/// and `rho = r1 a1 + r2 a2` in `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TermKey {
    pub q: [i64; 2],
    pub rho: [i64; 2],
}

/// `a(k, X) = sum_{Q, rho} M_{Q, rho} e^{i k.rho} e^{i Q.X}` with fiber
/// matrices `M` indexed by plane waves `G` in `fiber`.
/// Derivatives and commutators keep the Fourier support and only rescale
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSymbol {
    pub lattice: Lattice2D,
    /// Plane-wave fiber labels, in `(a1*, a2*)` coordinates.
    pub fiber: Vec<[i64; 2]>,
    pub terms: BTreeMap<TermKey, CMat>,
    /// Set when the coefficients satisfy `M_{-Q,-rho} = M_{Q,rho}^*`.
    pub hermitian: bool,
}

impl LatticeSymbol {
    pub fn new(lattice: &Lattice2D, fiber: Vec<[i64; 2]>) -> Result<Self> {
        if fiber.is_empty() {
            return invalid("symbol needs at least one fiber mode");
        }
        let mut seen = fiber.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != fiber.len() {
            return invalid("fiber modes must be distinct");
        }
        Ok(LatticeSymbol { lattice: *lattice, fiber, terms: BTreeMap::new(), hermitian: false })
    }

    /// Scalar symbols live on the single fiber mode `G = 0`.
    pub fn scalar(lattice: &Lattice2D) -> Self {
        LatticeSymbol::new(lattice, vec![[0, 0]]).expect("one mode")
    }

    pub fn dim(&self) -> usize {
        self.fiber.len()
    }

    pub fn zero_like(&self) -> Self {
        LatticeSymbol { lattice: self.lattice, fiber: self.fiber.clone(), terms: BTreeMap::new(), hermitian: false }
    }

    pub fn q_vec(&self, q: [i64; 2]) -> Vec2 {
        rot_j(self.lattice.recip(q[0], q[1]))
    }

    pub fn rho_vec(&self, rho: [i64; 2]) -> Vec2 {
        self.lattice.site(rho[0], rho[1])
    }

    pub fn g_vec(&self, g: usize) -> Vec2 {
        let [n1, n2] = self.fiber[g];
        self.lattice.recip(n1, n2)
    }

    pub fn add_entry(&mut self, q: [i64; 2], rho: [i64; 2], g: usize, gp: usize, c: c64) -> Result<()> {
        let n = self.dim();
        if g >= n || gp >= n {
            return invalid(format!("fiber index ({g}, {gp}) outside 0..{n}"));
        }
        let m = self.terms.entry(TermKey { q, rho }).or_insert_with(|| CMat::zeros(n, n));
        m[(g, gp)] += c;
        self.hermitian = false;
        Ok(())
    }

    pub fn add_matrix(&mut self, q: [i64; 2], rho: [i64; 2], m: &CMat) -> Result<()> {
        let n = self.dim();
        if m.nrows() != n || m.ncols() != n {
            return invalid("coefficient matrix does not match the fiber");
        }
        let e = self.terms.entry(TermKey { q, rho }).or_insert_with(|| CMat::zeros(n, n));
        axpy(e, c64::new(1.0, 0.0), m);
        self.hermitian = false;
        Ok(())
    }

    /// Largest `|rho|` index, i.e. the band half-width in lattice sites.
    pub fn bandwidth(&self) -> i64 {
        self.terms.keys().map(|k| k.rho[0].abs().max(k.rho[1].abs())).max().unwrap_or(0)
    }

    /// Sum of the absolute values of all coefficients.
    pub fn l1_norm(&self) -> f64 {
        let mut t = 0.0;
        for m in self.terms.values() {
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    t += m[(i, j)].norm();
                }
            }
        }
        t
    }

    pub fn eval(&self, k: Vec2, x: Vec2) -> CMat {
        let n = self.dim();
        let mut out = CMat::zeros(n, n);
        for (key, m) in &self.terms {
            let ph = c64::from_polar(1.0, dot(k, self.rho_vec(key.rho)) + dot(self.q_vec(key.q), x));
            axpy(&mut out, ph, m);
        }
        out
    }

    /// `a^*`: coefficients `M_{-Q,-rho}^dagger`.
    pub fn adjoint(&self) -> Self {
        let mut out = self.zero_like();
        for (key, m) in &self.terms {
            let k = TermKey { q: [-key.q[0], -key.q[1]], rho: [-key.rho[0], -key.rho[1]] };
            out.terms.insert(k, adjoint(m));
        }
        out.hermitian = self.hermitian;
        out
    }

    /// `(a + a^*) / 2`, flagged Hermitian.
    pub fn hermitian_part(&self) -> Self {
        let mut out = self.add(&self.adjoint()).scale(c64::new(0.5, 0.0));
        out.hermitian = true;
        out
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.add(&self.adjoint().scale(c64::new(-1.0, 0.0))).max_coef()
    }

    pub fn max_coef(&self) -> f64 {
        self.terms.values().map(crate::linalg::max_abs).fold(0.0, f64::max)
    }

    fn check_compatible(&self, o: &LatticeSymbol) -> Result<()> {
        if self.fiber != o.fiber || self.lattice != o.lattice {
            return Err(Error::InvalidParameter("symbols live on different fibers".into()));
        }
        Ok(())
    }

    pub fn add(&self, o: &LatticeSymbol) -> Self {
        self.check_compatible(o).expect("compatible symbols");
        let mut out = self.clone();
        for (k, m) in &o.terms {
            out.add_matrix(k.q, k.rho, m).expect("same fiber");
        }
        out.hermitian = self.hermitian && o.hermitian;
        out
    }

    pub fn scale(&self, c: c64) -> Self {
        let mut out = self.clone();
        for m in out.terms.values_mut() {
            *m = scaled(m, c);
        }
        out.hermitian = self.hermitian && c.im == 0.0;
        out
    }

    /// Pointwise product: convolution in `(Q, rho)` with fiber matrix products.
    pub fn mul(&self, o: &LatticeSymbol) -> Self {
        self.check_compatible(o).expect("compatible symbols");
        let mut out = self.zero_like();
        for (ka, ma) in &self.terms {
            for (kb, mb) in &o.terms {
                let q = [ka.q[0] + kb.q[0], ka.q[1] + kb.q[1]];
                let rho = [ka.rho[0] + kb.rho[0], ka.rho[1] + kb.rho[1]];
                out.add_matrix(q, rho, &(ma * mb)).expect("same fiber");
            }
        }
        out
    }

    fn map_terms(&self, f: impl Fn(&TermKey, &mut CMat)) -> Self {
        let mut out = self.clone();
        for (k, m) in out.terms.iter_mut() {
            f(k, m);
        }
        out.hermitian = false;
        out
    }

    /// `d/dk_mu`: factor `i rho_mu`.
    pub fn dk(&self, mu: usize) -> Self {
        self.map_terms(|k, m| *m = scaled(m, I * self.rho_vec(k.rho)[mu]))
    }

    /// `d/dX_mu`: factor `i Q_mu`.
    pub fn dx(&self, mu: usize) -> Self {
        self.map_terms(|k, m| *m = scaled(m, I * self.q_vec(k.q)[mu]))
    }

    /// `ad_{d/dx_mu} = [diag(i G_mu), .]`: entry `(G, G')` gains `i (G - G')_mu`.
    pub fn ad(&self, mu: usize) -> Self {
        let gs: Vec<Vec2> = (0..self.dim()).map(|g| self.g_vec(g)).collect();
        self.map_terms(|_, m| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] *= I * (gs[i][mu] - gs[j][mu]);
                }
            }
        })
    }

    /// Drop coefficients below `tol` (and empty terms).
    pub fn pruned(&self, tol: f64) -> Self {
        let mut out = self.clone();
        out.terms.retain(|_, m| crate::linalg::max_abs(m) > tol);
        out
    }

    /// Seeded random symbol with `n_terms` terms, Fourier indices in
    /// `-q_max..=q_max` and `-rho_max..=rho_max`, and coefficients with real
    /// and imaginary parts uniform in `[-1/2, 1/2)`.
    pub fn random(lattice: &Lattice2D, fiber: Vec<[i64; 2]>, spec: &RandomSymbolSpec, seed: u64) -> Result<Self> {
        let mut s = LatticeSymbol::new(lattice, fiber)?;
        let n = s.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qr = spec.q_max;
        let rr = spec.rho_max;
        // with `shortest`, indices are redrawn until the vector is no longer
        // than the shortest nonzero lattice vector
        let q_cap = crate::lattice::norm(lattice.a1s) * (1.0 + 1e-9);
        let rho_cap = lattice.a0 * (1.0 + 1e-9);
        for _ in 0..spec.n_terms {
            let (q, rho) = loop {
                let q = [rng.random_range(-qr..=qr), rng.random_range(-qr..=qr)];
                let rho = [rng.random_range(-rr..=rr), rng.random_range(-rr..=rr)];
                if !spec.shortest || (crate::lattice::norm(s.q_vec(q)) <= q_cap && crate::lattice::norm(s.rho_vec(rho)) <= rho_cap) {
                    break (q, rho);
                }
            };
            let m = CMat::from_fn(n, n, |i, j| {
                let c = c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                if i != j && !spec.off_diagonal {
                    c64::new(0.0, 0.0)
                } else {
                    c
                }
            });
            s.add_matrix(q, rho, &m)?;
        }
        if spec.mean_zero {
            s.terms.remove(&TermKey { q: [0, 0], rho: [0, 0] });
        }
        Ok(if spec.hermitian { s.hermitian_part() } else { s })
    }
}

/// Parameters of [`LatticeSymbol::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSymbolSpec {
    pub n_terms: usize,
    pub q_max: i64,
    pub rho_max: i64,
    pub off_diagonal: bool,
    pub hermitian: bool,
    pub mean_zero: bool,
    /// Keep only `Q` and `rho` in the first shell (or zero).
    pub shortest: bool,
}

impl Default for RandomSymbolSpec {
    fn default() -> Self {
        RandomSymbolSpec { n_terms: 4, q_max: 1, rho_max: 1, off_diagonal: true, hermitian: false, mean_zero: false, shortest: false }
    }
}

/// Square block of lattice sites `R = n1 a1 + n2 a2`, `|n_i| <= half`; probes
/// live on the interior `|n_i| <= half - margin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub half: i64,
    pub margin: i64,
}

impl Window {
    pub fn new(half: i64, margin: i64) -> Result<Self> {
        if half < 0 || margin < 0 || margin > half {
            return invalid(format!("window half {half} with margin {margin} is empty"));
        }
        Ok(Window { half, margin })
    }

    pub fn side(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    pub fn n_sites(&self) -> usize {
        self.side() * self.side()
    }

    pub fn site_index(&self, n: [i64; 2]) -> Option<usize> {
        if n[0].abs() > self.half || n[1].abs() > self.half {
            return None;
        }
        Some(((n[0] + self.half) as usize) * self.side() + (n[1] + self.half) as usize)
    }

    pub fn site(&self, idx: usize) -> [i64; 2] {
        let s = self.side();
        [(idx / s) as i64 - self.half, (idx % s) as i64 - self.half]
    }

    pub fn is_interior(&self, n: [i64; 2]) -> bool {
        let h = self.half - self.margin;
        n[0].abs() <= h && n[1].abs() <= h
    }
}

/// Matrix of `Op_eps(a)` (or `Op^c_eps(a)`) over `window x fiber`, stored row
/// by row; index `site * |S| + g`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedOperator {
    pub window: Window,
    pub n_fiber: usize,
    pub eps: f64,
    pub twisted: bool,
    rows: Vec<Vec<(usize, c64)>>,
}

impl QuantizedOperator {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> c64 {
        self.rows[i].iter().filter(|(c, _)| *c == j).map(|(_, v)| *v).sum()
    }

    pub fn row(&self, i: usize) -> &[(usize, c64)] {
        &self.rows[i]
    }

    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        assert_eq!(v.len(), self.dim(), "vector length");
        self.rows.iter().map(|r| r.iter().map(|&(j, a)| a * v[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim(), self.dim());
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, a) in r {
                m[(i, j)] += a;
            }
        }
        m
    }

    pub fn is_interior_index(&self, i: usize) -> bool {
        self.window.is_interior(self.window.site(i / self.n_fiber))
    }

    /// `max |A_ij - conj(A_ji)|` over interior rows and columns.
    pub fn interior_hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, r) in self.rows.iter().enumerate() {
            if !self.is_interior_index(i) {
                continue;
            }
            for &(j, _) in r {
                if self.is_interior_index(j) {
                    worst = worst.max((self.entry(i, j) - self.entry(j, i).conj()).norm());
                }
            }
        }
        worst
    }

    /// `sqrt(||A||_1 ||A||_inf)`, an upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        let row_max = self.rows.iter().map(|r| r.iter().map(|(_, a)| a.norm()).sum::<f64>()).fold(0.0, f64::max);
        let mut col = vec![0.0; self.dim()];
        for r in &self.rows {
            for &(j, a) in r {
                col[j] += a.norm();
            }
        }
        (row_max * col.iter().cloned().fold(0.0, f64::max)).sqrt()
    }

    /// `self - o` on the same window.
    pub fn sub(&self, o: &QuantizedOperator) -> QuantizedOperator {
        assert_eq!(self.dim(), o.dim(), "operator sizes");
        let mut out = self.clone();
        for (r, ro) in out.rows.iter_mut().zip(&o.rows) {
            r.extend(ro.iter().map(|&(j, a)| (j, -a)));
            merge_row(r);
        }
        out
    }
}

fn merge_row(r: &mut Vec<(usize, c64)>) {
    r.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, c64)> = Vec::with_capacity(r.len());
    for &(j, a) in r.iter() {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    *r = out;
}

/// Visit every nonzero matrix entry `(row, col, value)` of the quantization.
/// Term `(Q, rho, M)` maps `e^{ik.R} (x) e_{G'}` to
/// `M[G, G'] e^{-i eps Q'.(R + rho/2)} e^{ik.(R + rho)} (x) e_G` with
/// `Q' = Q - c(eps)(G - G')` in the twisted case and `Q' = Q` otherwise.
fn visit_entries(sym: &LatticeSymbol, eps: f64, window: &Window, twisted: bool, diagonal_only: bool, mut f: impl FnMut(usize, usize, c64)) {
    let n = sym.dim();
    let c = if twisted { c_of_eps(eps) } else { 0.0 };
    let gs: Vec<Vec2> = (0..n).map(|g| sym.g_vec(g)).collect();
    for (key, m) in &sym.terms {
        if diagonal_only && key.rho != [0, 0] {
            continue;
        }
        let q = sym.q_vec(key.q);
        let rho = sym.rho_vec(key.rho);
        for g in 0..n {
            for gp in 0..n {
                if diagonal_only && g != gp {
                    continue;
                }
                let amp = m[(g, gp)];
                if amp == c64::new(0.0, 0.0) {
                    continue;
                }
                let qq = if twisted && g != gp {
                    [q[0] - c * (gs[g][0] - gs[gp][0]), q[1] - c * (gs[g][1] - gs[gp][1])]
                } else {
                    q
                };
                for col_site in 0..window.n_sites() {
                    let r_idx = window.site(col_site);
                    let target = [r_idx[0] + key.rho[0], r_idx[1] + key.rho[1]];
                    let Some(row_site) = window.site_index(target) else { continue };
                    let r = sym.rho_vec(r_idx);
                    let mid = add(r, scale(0.5, rho));
                    let ph = c64::from_polar(1.0, -eps * dot(qq, mid));
                    f(row_site * n + g, col_site * n + gp, amp * ph);
                }
            }
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return invalid(format!("eps must lie in (0, 1), got {eps}"));
    }
    Ok(())
}

fn assemble(sym: &LatticeSymbol, eps: f64, window: &Window, twisted: bool) -> Result<QuantizedOperator> {
    check_eps(eps)?;
    let n = sym.dim();
    let mut rows = vec![Vec::new(); window.n_sites() * n];
    visit_entries(sym, eps, window, twisted, false, |i, j, a| rows[i].push((j, a)));
    for r in rows.iter_mut() {
        merge_row(r);
    }
    Ok(QuantizedOperator { window: *window, n_fiber: n, eps, twisted, rows })
}

/// Exact matrix of `Op_eps(a)` on the window; entries leaving it are dropped.
pub fn quantize(sym: &LatticeSymbol, eps: f64, window: &Window) -> Result<QuantizedOperator> {
    assemble(sym, eps, window, false)
}

/// Exact matrix of `Op^c_eps(a) = Op_eps(T_{c X} a T_{c X}^{-1})`.
pub fn quantize_twisted(sym: &LatticeSymbol, eps: f64, window: &Window) -> Result<QuantizedOperator> {
    assemble(sym, eps, window, true)
}

/// Diagonal of the (twisted) quantization without assembling the rest.
pub fn quantized_diagonal(sym: &LatticeSymbol, eps: f64, window: &Window, twisted: bool) -> Result<Vec<c64>> {
    check_eps(eps)?;
    let mut d = vec![c64::new(0.0, 0.0); window.n_sites() * sym.dim()];
    visit_entries(sym, eps, window, twisted, true, |i, j, a| {
        debug_assert_eq!(i, j);
        d[i] += a;
    });
    Ok(d)
}

/// Whether the second-order Moyal term keeps its `ad_{d/dx}` part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdTerm {
    Keep,
    Drop,
}

/// `d0 + eps d1 + eps^2 d2` of the twisted Moyal product, truncated at
/// `order`:
/// `d0 = ab`, `d1 = (i/2){a, b}`,
/// `d2 = -(1/8){a, b}_2 + (i/4)(d_k a . ad b - ad a . d_k b)`.
pub fn moyal_asymptotic(a: &LatticeSymbol, b: &LatticeSymbol, order: usize, eps: f64, ad: AdTerm) -> Result<LatticeSymbol> {
    if order > 2 {
        return Err(Error::Unsupported(format!("Moyal expansion of order {order}; at most 2 is implemented")));
    }
    a.check_compatible(b)?;
    let mut out = a.mul(b);
    if order >= 1 {
        out = out.add(&moyal_d1(a, b).scale(c64::new(eps, 0.0)));
    }
    if order >= 2 {
        out = out.add(&moyal_d2(a, b, ad).scale(c64::new(eps * eps, 0.0)));
    }
    Ok(out.pruned(0.0))
}

/// `{a, b} = grad_X a . grad_k b - grad_k a . grad_X b`.
pub fn poisson(a: &LatticeSymbol, b: &LatticeSymbol) -> LatticeSymbol {
    let mut out = a.zero_like();
    for mu in 0..2 {
        out = out.add(&a.dx(mu).mul(&b.dk(mu)));
        out = out.add(&a.dk(mu).mul(&b.dx(mu)).scale(c64::new(-1.0, 0.0)));
    }
    out
}

/// `{a, b}_2 = sum_{mu nu} a_{k k} b_{X X} + a_{X X} b_{k k} - 2 a_{k_mu X_nu} b_{X_mu k_nu}`.
pub fn poisson2(a: &LatticeSymbol, b: &LatticeSymbol) -> LatticeSymbol {
    let mut out = a.zero_like();
    for mu in 0..2 {
        for nu in 0..2 {
            out = out.add(&a.dk(mu).dk(nu).mul(&b.dx(mu).dx(nu)));
            out = out.add(&a.dx(mu).dx(nu).mul(&b.dk(mu).dk(nu)));
            out = out.add(&a.dk(mu).dx(nu).mul(&b.dx(mu).dk(nu)).scale(c64::new(-2.0, 0.0)));
        }
    }
    out
}

pub fn moyal_d1(a: &LatticeSymbol, b: &LatticeSymbol) -> LatticeSymbol {
    poisson(a, b).scale(0.5 * I)
}

pub fn moyal_d2(a: &LatticeSymbol, b: &LatticeSymbol, ad: AdTerm) -> LatticeSymbol {
    let mut out = poisson2(a, b).scale(c64::new(-0.125, 0.0));
    if ad == AdTerm::Keep {
        out = out.add(&moyal_d2_ad(a, b));
    }
    out
}

/// `(i/4)(d_k a . ad b - ad a . d_k b)`.
pub fn moyal_d2_ad(a: &LatticeSymbol, b: &LatticeSymbol) -> LatticeSymbol {
    let mut out = a.zero_like();
    for mu in 0..2 {
        out = out.add(&a.dk(mu).mul(&b.ad(mu)));
        out = out.add(&a.ad(mu).mul(&b.dk(mu)).scale(c64::new(-1.0, 0.0)));
    }
    out.scale(0.25 * I)
}

/// Options of [`compose_residual`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeOptions {
    pub twisted: bool,
    pub ad: AdTerm,
    pub probes: usize,
    pub seed: u64,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions { twisted: true, ad: AdTerm::Keep, probes: 8, seed: 0 }
    }
}

/// `max_v |(Op(a) Op(b) - Op(a #_2 b)) v|` over random unit vectors `v`
/// supported on the window interior.
pub fn compose_residual(a: &LatticeSymbol, b: &LatticeSymbol, eps: f64, window: &Window, opts: &ComposeOptions) -> Result<f64> {
    a.check_compatible(b)?;
    let bw = a.bandwidth().max(b.bandwidth());
    if window.margin < 2 * bw {
        return invalid(format!("window margin {} below twice the symbol bandwidth {bw}", window.margin));
    }
    if opts.probes == 0 {
        return invalid("at least one probe vector is needed");
    }
    let q = |s: &LatticeSymbol| if opts.twisted { quantize_twisted(s, eps, window) } else { quantize(s, eps, window) };
    let oa = q(a)?;
    let ob = q(b)?;
    let ad = if opts.twisted { opts.ad } else { AdTerm::Drop };
    let oc = q(&moyal_asymptotic(a, b, 2, eps, ad)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = oa.dim();
    let mut worst = 0.0f64;
    for _ in 0..opts.probes {
        let mut v: Vec<c64> = (0..n)
            .map(|i| if oa.is_interior_index(i) { c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) } else { c64::new(0.0, 0.0) })
            .collect();
        let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        let ab = oa.apply(&ob.apply(&v));
        let c = oc.apply(&v);
        let r = ab.iter().zip(&c).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Smooth cutoff `chi_N(X) = s_N(t1) s_N(t2)`, with `X = J(t1 a1 + t2 a2)`,
/// equal to one on `N J Omega = {|t_i| <= N/2}` and zero outside
/// `(N+1) J Omega`. The one-dimensional step is the standard
/// `psi(u) / (psi(u) + psi(1-u))` gluing of `psi(u) = e^{-1/u}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub n: usize,
}

impl Cutoff {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("cutoff size N must be at least 1");
        }
        Ok(Cutoff { n })
    }

    pub fn profile(&self, t: f64) -> f64 {
        let u = 2.0 * (t.abs() - self.n as f64 / 2.0);
        if u <= 0.0 {
            return 1.0;
        }
        if u >= 1.0 {
            return 0.0;
        }
        let psi = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
        let up = psi(u);
        let down = psi(1.0 - u);
        down / (up + down)
    }

    /// Cell coordinates `t` with `X = J(t1 a1 + t2 a2)`.
    pub fn cell_coords(lat: &Lattice2D, x: Vec2) -> Vec2 {
        frac_coords(rot_j(lat.a1), rot_j(lat.a2), x)
    }

    pub fn value(&self, lat: &Lattice2D, x: Vec2) -> f64 {
        let t = Cutoff::cell_coords(lat, x);
        self.profile(t[0]) * self.profile(t[1])
    }
}

/// Both sides of the trace-per-unit-area identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceCheck {
    pub lhs: c64,
    pub rhs: c64,
    /// `|Omega*| / (2 pi)^2` times the coefficient l1 norm.
    pub scale: f64,
}

/// Smallest window whose sites cover the support of `chi_N(-eps R)`, plus a
/// margin of the symbol bandwidth.
pub fn trace_window(sym: &LatticeSymbol, eps: f64, chi: &Cutoff) -> Result<Window> {
    check_eps(eps)?;
    let half = cutoff_reach(&sym.lattice, eps, chi) + sym.bandwidth() + 1;
    Window::new(half, sym.bandwidth())
}

/// Largest `|n_i|` of a site `R = n1 a1 + n2 a2` with `-eps R` in `(N+1) J Omega`.
fn cutoff_reach(lat: &Lattice2D, eps: f64, chi: &Cutoff) -> i64 {
    let h = (chi.n as f64 + 1.0) / 2.0;
    let mut reach = 0.0f64;
    for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let x = add(scale(s1 * h, rot_j(lat.a1)), scale(s2 * h, rot_j(lat.a2)));
        let n = frac_coords(lat.a1, lat.a2, scale(-1.0 / eps, x));
        reach = reach.max(n[0].abs()).max(n[1].abs());
    }
    reach.ceil() as i64
}

/// `lhs = eps^2 / |N J Omega| Tr[Op^c_eps(a) Op_eps(chi_N^2)]` from the exact
/// window matrices (`Op_eps(chi^2)` is diagonal, `R -> chi^2(-eps R)`), and
/// `rhs = (2 pi)^-2 avg_{J Omega} int_{Omega*} Tr a`, which only sees the
/// `(Q, rho) = 0` coefficient.
pub fn trace_check(sym: &LatticeSymbol, chi: &Cutoff, eps: f64, window: &Window) -> Result<TraceCheck> {
    check_eps(eps)?;
    let need = cutoff_reach(&sym.lattice, eps, chi) + sym.bandwidth();
    if window.half < need {
        return invalid(format!("window half-size {} does not cover the cutoff support (needs {need})", window.half));
    }
    let lat = &sym.lattice;
    let n = sym.dim();
    let diag = quantized_diagonal(sym, eps, window, true)?;
    let mut lhs = c64::new(0.0, 0.0);
    for site in 0..window.n_sites() {
        let r = sym.rho_vec(window.site(site));
        let w = chi.value(lat, scale(-eps, r)).powi(2);
        if w == 0.0 {
            continue;
        }
        for g in 0..n {
            lhs += diag[site * n + g] * w;
        }
    }
    let cell = lat.cell_area * (chi.n * chi.n) as f64;
    lhs *= eps * eps / cell;
    let pref = lat.recip_cell_area() / (4.0 * PI * PI);
    let rhs = sym.terms.get(&TermKey { q: [0, 0], rho: [0, 0] }).map(crate::linalg::trace).unwrap_or(c64::new(0.0, 0.0)) * pref;
    Ok(TraceCheck { lhs, rhs, scale: pref * sym.l1_norm() })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples");
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
