//! Truncated Taylor series in one variable. Coefficient `k` holds
//! `f^(k)(x0) / k!`, so arithmetic on jets gives exact derivatives.

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub c: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Jet { c }
    }

    /// The affine map `x -> a + b (x - x0)`.
    pub fn affine(a: f64, b: f64, order: usize) -> Self {
        let mut j = Jet::constant(a, order);
        if order >= 1 {
            j.c[1] = b;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { c: self.c.iter().map(|a| s * a).collect() }
    }

    pub fn add_const(&self, s: f64) -> Jet {
        let mut j = self.clone();
        j.c[0] += s;
        j
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let n = self.c.len().min(o.c.len());
        let mut c = vec![0.0; n];
        for (k, ck) in c.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..=k {
                s += self.c[j] * o.c[k - j];
            }
            *ck = s;
        }
        Jet { c }
    }

    pub fn recip(&self) -> Jet {
        let n = self.c.len();
        let a0 = self.c[0];
        let mut r = vec![0.0; n];
        r[0] = 1.0 / a0;
        for k in 1..n {
            let mut s = 0.0;
            for j in 1..=k {
                s += self.c[j] * r[k - j];
            }
            r[k] = -s / a0;
        }
        Jet { c: r }
    }

    pub fn exp(&self) -> Jet {
        let n = self.c.len();
        let mut e = vec![0.0; n];
        e[0] = self.c[0].exp();
        for k in 1..n {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.c[j] * e[k - j];
            }
            e[k] = s / k as f64;
        }
        Jet { c: e }
    }

    /// Derivatives `f^(k)` rather than Taylor coefficients.
    pub fn derivatives(&self) -> Vec<f64> {
        let mut fact = 1.0;
        self.c
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if k > 0 {
                    fact *= k as f64;
                }
                v * fact
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_affine() {
        // exp(2 + 3 t): coefficients e^2 3^k / k!
        let j = Jet::affine(2.0, 3.0, 8).exp();
        let mut f = 1.0;
        for k in 0..=8 {
            if k > 0 {
                f *= k as f64;
            }
            let want = 2f64.exp() * 3f64.powi(k as i32) / f;
            assert!((j.c[k] - want).abs() < 1e-13 * want);
        }
    }

    #[test]
    fn recip_geometric() {
        // 1 / (1 - t) = sum t^k
        let j = Jet::affine(1.0, -1.0, 10).recip();
        for k in 0..=10 {
            assert!((j.c[k] - 1.0).abs() < 1e-15);
        }
        let x = Jet::affine(0.3, 1.0, 6);
        let p = x.mul(&x.recip());
        assert!((p.c[0] - 1.0).abs() < 1e-15);
        assert!(p.c[1..].iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn derivatives_scale_by_factorial() {
        let j = Jet::affine(0.0, 1.0, 5).exp();
        assert!(j.derivatives().iter().all(|d| (d - 1.0).abs() < 1e-14));
    }
}
