//! Stack-allocated 4x4 complex matrices for the pointwise symbol algebra.

use crate::linalg::{c64, CMat};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct M4(pub [[c64; 4]; 4]);

const Z: c64 = c64 { re: 0.0, im: 0.0 };

impl M4 {
    pub const ZERO: M4 = M4([[Z; 4]; 4]);

    pub fn identity() -> M4 {
        let mut m = M4::ZERO;
        for i in 0..4 {
            m.0[i][i] = c64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_cmat(a: &CMat) -> M4 {
        assert!(a.nrows() == 4 && a.ncols() == 4, "expected a 4x4 matrix");
        let mut m = M4::ZERO;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = a[(i, j)];
            }
        }
        m
    }

    pub fn to_cmat(&self) -> CMat {
        CMat::from_fn(4, 4, |i, j| self.0[i][j])
    }

    pub fn diag(d: [c64; 4]) -> M4 {
        let mut m = M4::ZERO;
        for i in 0..4 {
            m.0[i][i] = d[i];
        }
        m
    }

    pub fn adjoint(&self) -> M4 {
        let mut m = M4::ZERO;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn trace(&self) -> c64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2] + self.0[3][3]
    }

    pub fn scale(&self, c: c64) -> M4 {
        let mut m = *self;
        for r in m.0.iter_mut() {
            for x in r.iter_mut() {
                *x *= c;
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// `U^* self U`.
    pub fn conj_by(&self, u: &M4) -> M4 {
        u.adjoint() * *self * *u
    }
}

impl Add for M4 {
    type Output = M4;
    fn add(mut self, o: M4) -> M4 {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] += o.0[i][j];
            }
        }
        self
    }
}

impl AddAssign for M4 {
    fn add_assign(&mut self, o: M4) {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] += o.0[i][j];
            }
        }
    }
}

impl Sub for M4 {
    type Output = M4;
    fn sub(mut self, o: M4) -> M4 {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] -= o.0[i][j];
            }
        }
        self
    }
}

impl Neg for M4 {
    type Output = M4;
    fn neg(self) -> M4 {
        self.scale(c64::new(-1.0, 0.0))
    }
}

impl Mul for M4 {
    type Output = M4;
    fn mul(self, o: M4) -> M4 {
        let mut m = M4::ZERO;
        for i in 0..4 {
            for k in 0..4 {
                let a = self.0[i][k];
                if a == Z {
                    continue;
                }
                for j in 0..4 {
                    m.0[i][j] += a * o.0[k][j];
                }
            }
        }
        m
    }
}
