//! Thin helpers over `faer` plus a small in-place solver for the tiny
//! resolvents evaluated inside quadrature loops.

use crate::error::{Error, Result};
use faer::{Mat, Side};
pub use num_complex::Complex64 as c64;

pub type CMat = Mat<c64>;

pub const I: c64 = c64 { re: 0.0, im: 1.0 };

pub fn zeros(n: usize) -> CMat {
    Mat::zeros(n, n)
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) })
}

pub fn from_rows(rows: &[&[c64]]) -> CMat {
    let n = rows.len();
    Mat::from_fn(n, rows[0].len(), |i, j| rows[i][j])
}

pub fn adjoint(a: &CMat) -> CMat {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn hermiticity_defect(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..=j.min(a.nrows() - 1) {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

pub fn hermitize(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// `c a`.
pub fn scaled(a: &CMat, c: c64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * c)
}

/// `y += c x`.
pub fn axpy(y: &mut CMat, c: c64, x: &CMat) {
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            y[(i, j)] += x[(i, j)] * c;
        }
    }
}

pub fn trace(a: &CMat) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn eigvalsh(a: &CMat) -> Result<Vec<f64>> {
    let ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver failed on {}x{}: {e:?}", a.nrows(), a.ncols())))?;
    Ok(ev)
}

/// Ascending eigenvalues and the unitary whose columns are eigenvectors.
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver failed on {}x{}: {e:?}", a.nrows(), a.ncols())))?;
    let s = e.S();
    let n = a.nrows();
    let vals: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    let u = e.U().to_owned();
    // faer returns eigenvalues ascending already; keep the contract explicit
    debug_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    Ok((vals, u))
}

/// Dense row-major work matrix for small in-place solves.
#[derive(Clone, Debug)]
pub struct SmallSolver {
    n: usize,
    lu: Vec<c64>,
    piv: Vec<usize>,
}

impl SmallSolver {
    pub fn new(n: usize) -> Self {
        SmallSolver { n, lu: vec![c64::new(0.0, 0.0); n * n], piv: vec![0; n] }
    }

    /// Factor `z I - a` with partial pivoting.
    pub fn factor_shifted(&mut self, z: c64, a: &CMat) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                self.lu[i * n + j] = -a[(i, j)];
            }
            self.lu[i * n + i] += z;
        }
        for k in 0..n {
            let mut p = k;
            let mut best = self.lu[k * n + k].norm();
            for i in k + 1..n {
                let v = self.lu[i * n + k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Numerical(format!("singular shifted matrix at z = {z}")));
            }
            self.piv[k] = p;
            if p != k {
                for j in 0..n {
                    self.lu.swap(k * n + j, p * n + j);
                }
            }
            let inv = c64::new(1.0, 0.0) / self.lu[k * n + k];
            for i in k + 1..n {
                let l = self.lu[i * n + k] * inv;
                self.lu[i * n + k] = l;
                if l != c64::new(0.0, 0.0) {
                    for j in k + 1..n {
                        let u = self.lu[k * n + j];
                        self.lu[i * n + j] -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    /// Inverse of the factored matrix, written column-major into `out`.
    pub fn inverse_into(&self, out: &mut CMat) {
        let n = self.n;
        let mut col = vec![c64::new(0.0, 0.0); n];
        for c in 0..n {
            col.iter_mut().for_each(|v| *v = c64::new(0.0, 0.0));
            col[c] = c64::new(1.0, 0.0);
            for k in 0..n {
                let p = self.piv[k];
                if p != k {
                    col.swap(k, p);
                }
            }
            for i in 0..n {
                let mut s = col[i];
                for j in 0..i {
                    s -= self.lu[i * n + j] * col[j];
                }
                col[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for j in i + 1..n {
                    s -= self.lu[i * n + j] * col[j];
                }
                col[i] = s / self.lu[i * n + i];
            }
            for i in 0..n {
                out[(i, c)] = col[i];
            }
        }
    }
}

/// Sum `f(i)` over `0..n` in fixed-size chunks combined pairwise, so the
/// result does not depend on how rayon schedules the chunks.
pub fn pairwise_sum<T, F>(n: usize, chunk: usize, zero: T, f: F) -> T
where
    T: Send + Clone + std::ops::Add<Output = T>,
    F: Fn(std::ops::Range<usize>) -> T + Sync,
{
    use rayon::prelude::*;
    let chunk = chunk.max(1);
    let nchunks = n.div_ceil(chunk);
    let mut parts: Vec<T> = (0..nchunks)
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(n)))
        .collect();
    if parts.is_empty() {
        return zero;
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().unwrap_or(zero)
}
