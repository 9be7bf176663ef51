//! Divided differences `f[x_0, ..., x_m]` of a test function, stable for
//! coincident and nearly coincident nodes.
//!
//! These are the exact values of the Helffer-Sjöstrand integrals
//! `-(1/pi) int dbar f~(z) prod_j (z - x_j)^{-1} dL(z)`, which is how the
//! semiclassical module evaluates resolvent words without a complex grid.

use super::testfn::TestFunction;

/// Clusters narrower than this fraction of the local Taylor radius are
/// expanded around their centre instead of being split by the recursion.
const CLUSTER_FRACTION: f64 = 0.125;
const MAX_EXTRA_ORDER: usize = 40;

pub fn divided_difference(f: &TestFunction, pts: &[f64]) -> f64 {
    let mut x = pts.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite nodes"));
    let m = x.len();
    assert!(m > 0, "divided difference needs at least one node");
    let (lo, hi) = f.support();
    if x[m - 1] <= lo || x[0] >= hi {
        return 0.0;
    }
    let mut memo = vec![f64::NAN; m * m];
    dd(f, &x, 0, m - 1, &mut memo)
}

fn dd(f: &TestFunction, x: &[f64], i: usize, j: usize, memo: &mut [f64]) -> f64 {
    let m = x.len();
    let key = i * m + j;
    if !memo[key].is_nan() {
        return memo[key];
    }
    let v = if i == j {
        f.eval(x[i])
    } else {
        let c = 0.5 * (x[i] + x[j]);
        let (lo, hi) = f.support();
        if x[j] <= lo || x[i] >= hi {
            0.0
        } else if x[j] - x[i] <= CLUSTER_FRACTION * f.taylor_radius(c) {
            cluster(f, &x[i..=j], c)
        } else {
            (dd(f, x, i + 1, j, memo) - dd(f, x, i, j - 1, memo)) / (x[j] - x[i])
        }
    };
    memo[key] = v;
    v
}

/// `sum_{k >= m} t_k(c) h_{k-m}(x - c)` with `h` the complete homogeneous
/// symmetric polynomials.
fn cluster(f: &TestFunction, x: &[f64], c: f64) -> f64 {
    let m = x.len() - 1;
    let spread = x.iter().fold(0.0f64, |a, &v| a.max((v - c).abs()));
    if spread == 0.0 {
        return f.taylor(c, m)[m];
    }
    let order = m + MAX_EXTRA_ORDER;
    let t = f.taylor(c, order);
    let extra = MAX_EXTRA_ORDER;
    // h[r] for r = 0..=extra over all nodes
    let mut h = vec![0.0; extra + 1];
    h[0] = 1.0;
    for &xv in x {
        let d = xv - c;
        for r in 1..=extra {
            h[r] += d * h[r - 1];
        }
    }
    let mut s = 0.0;
    let mut tail = 0.0;
    for r in 0..=extra {
        let term = t[m + r] * h[r];
        s += term;
        tail = term.abs();
        if r > 4 && tail <= 1e-17 * s.abs() {
            break;
        }
    }
    let _ = tail;
    s
}

/// Multiplicity vectors of all multisets of size `1..=max_len` over `n`
/// values, ordered by size, with their table keys.
#[derive(Debug, Clone)]
pub struct DdLayout {
    pub n: usize,
    pub max_len: usize,
    strides: Vec<usize>,
    size: usize,
    entries: Vec<LayoutEntry>,
}

#[derive(Debug, Clone)]
struct LayoutEntry {
    key: usize,
    size: usize,
    mult: Vec<usize>,
}

impl DdLayout {
    pub fn new(n: usize, max_len: usize) -> Self {
        let base = max_len + 1;
        let strides: Vec<usize> = (0..n).map(|a| base.pow(a as u32)).collect();
        let size = base.pow(n as u32);
        let mut entries = Vec::new();
        for key in 1..size {
            let mut k = key;
            let mut mult = vec![0; n];
            for m in mult.iter_mut() {
                *m = k % base;
                k /= base;
            }
            let tot: usize = mult.iter().sum();
            if tot <= max_len {
                entries.push(LayoutEntry { key, size: tot, mult });
            }
        }
        entries.sort_by_key(|e| (e.size, e.key));
        DdLayout { n, max_len, strides, size, entries }
    }
}

/// Divided differences over all node multisets drawn from a fixed set of
/// distinct values, keyed by multiplicity vectors. Used for an `n x n`
/// spectrum and words with up to `max_len` resolvents.
#[derive(Debug, Clone)]
pub struct DividedDifferences {
    pub values: Vec<f64>,
    pub max_len: usize,
    table: Vec<f64>,
    strides: Vec<usize>,
}

impl DividedDifferences {
    /// Builds the table bottom-up: a multiset spanning two clusters of
    /// nearly equal values is split by the recursion on its extreme nodes,
    /// whose gap is then at least the cluster threshold; a multiset inside
    /// one cluster is expanded around the cluster centre.
    pub fn new(f: &TestFunction, values: &[f64], max_len: usize) -> Self {
        Self::with_layout(f, values, &DdLayout::new(values.len(), max_len))
    }

    /// As [`DividedDifferences::new`] with a precomputed key layout.
    pub fn with_layout(f: &TestFunction, values: &[f64], layout: &DdLayout) -> Self {
        let n = values.len();
        assert_eq!(n, layout.n, "layout built for a different number of values");
        let max_len = layout.max_len;
        let strides = layout.strides.clone();
        let mut table = vec![f64::NAN; layout.size];
        if n == 0 || max_len == 0 {
            return DividedDifferences { values: values.to_vec(), max_len, table, strides };
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite nodes"));
        // cluster labels along the sorted order
        let mut cluster = vec![0usize; n];
        let mut members: Vec<Vec<usize>> = vec![vec![order[0]]];
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            let c = 0.5 * (values[a] + values[b]);
            if values[b] - values[a] <= CLUSTER_FRACTION * f.taylor_radius(c) {
                members.last_mut().expect("nonempty").push(b);
            } else {
                members.push(vec![b]);
            }
            cluster[b] = members.len() - 1;
        }
        let (lo, hi) = f.support();
        let centres: Vec<f64> = members.iter().map(|m| m.iter().map(|&a| values[a]).sum::<f64>() / m.len() as f64).collect();
        let taylors: Vec<Vec<f64>> = members
            .iter()
            .zip(&centres)
            .map(|(m, &c)| {
                let extra = if m.len() > 1 { MAX_EXTRA_ORDER } else { 0 };
                f.taylor(c, max_len - 1 + extra)
            })
            .collect();
        let rank: Vec<usize> = {
            let mut r = vec![0; n];
            for (i, &a) in order.iter().enumerate() {
                r[a] = i;
            }
            r
        };
        let mut h = vec![0.0; MAX_EXTRA_ORDER + max_len + 1];
        for entry in &layout.entries {
            {
                let (key, sz, mult) = (entry.key, entry.size, &entry.mult);
                let present = (0..n).filter(|&a| mult[a] > 0);
                let amin = present.clone().min_by_key(|&a| rank[a]).expect("nonempty multiset");
                let amax = present.max_by_key(|&a| rank[a]).expect("nonempty multiset");
                let (vmin, vmax) = (values[amin], values[amax]);
                let v = if vmax <= lo || vmin >= hi {
                    0.0
                } else if cluster[amin] != cluster[amax] {
                    (table[key - strides[amin]] - table[key - strides[amax]]) / (vmax - vmin)
                } else {
                    let cl = cluster[amin];
                    let t = &taylors[cl];
                    let m = sz - 1;
                    if members[cl].len() == 1 {
                        t[m]
                    } else {
                        let c = centres[cl];
                        let extra = t.len() - 1 - m;
                        for x in h.iter_mut() {
                            *x = 0.0;
                        }
                        h[0] = 1.0;
                        for &a in &members[cl] {
                            let d = values[a] - c;
                            for _ in 0..mult[a] {
                                for r in 1..=extra {
                                    h[r] += d * h[r - 1];
                                }
                            }
                        }
                        (0..=extra).map(|r| t[m + r] * h[r]).sum()
                    }
                };
                table[key] = v;
            }
        }
        DividedDifferences { values: values.to_vec(), max_len, table, strides }
    }

    /// `f[values[idx_0], ..., values[idx_k]]`.
    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut key = 0;
        for &a in idx {
            key += self.strides[a];
        }
        self.table[key]
    }

    #[inline]
    pub fn key_of(&self, idx: &[usize]) -> usize {
        idx.iter().map(|&a| self.strides[a]).sum()
    }

    #[inline]
    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    #[inline]
    pub fn by_key(&self, key: usize) -> f64 {
        self.table[key]
    }
}
