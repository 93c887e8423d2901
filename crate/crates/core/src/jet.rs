//! Second-order forward-mode differentiation in `(t, x, y)`.
//!
//! Manufactured sources need first and second derivatives of closed-form
//! solutions; carrying value, gradient and Hessian through the arithmetic
//! gives them to rounding accuracy.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub const T: usize = 0;
pub const X: usize = 1;
pub const Y: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: [f64; 3],
    pub h: [[f64; 3]; 3],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; 3], h: [[0.0; 3]; 3] }
    }

    pub fn variable(v: f64, which: usize) -> Self {
        let mut j = Self::constant(v);
        j.d[which] = 1.0;
        j
    }

    /// Seeds for the three independent variables.
    pub fn vars(t: f64, x: [f64; 2]) -> (Jet, Jet, Jet) {
        (Jet::variable(t, T), Jet::variable(x[0], X), Jet::variable(x[1], Y))
    }

    /// Chain rule for a scalar function with value `f0`, derivative `f1`
    /// and second derivative `f2` at `self.v`.
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f0);
        for a in 0..3 {
            out.d[a] = f1 * self.d[a];
            for b in 0..3 {
                out.h[a][b] = f1 * self.h[a][b] + f2 * self.d[a] * self.d[b];
            }
        }
        out
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn dt(&self) -> f64 {
        self.d[T]
    }

    pub fn grad(&self) -> [f64; 2] {
        [self.d[X], self.d[Y]]
    }

    pub fn hessian_xy(&self) -> [[f64; 2]; 2] {
        [[self.h[X][X], self.h[X][Y]], [self.h[Y][X], self.h[Y][Y]]]
    }

    pub fn laplacian(&self) -> f64 {
        self.h[X][X] + self.h[Y][Y]
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for a in 0..3 {
            self.d[a] += o.d[a];
            for b in 0..3 {
                self.h[a][b] += o.h[a][b];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = Jet::constant(self.v * o.v);
        for a in 0..3 {
            out.d[a] = self.v * o.d[a] + o.v * self.d[a];
            for b in 0..3 {
                out.h[a][b] = self.v * o.h[a][b]
                    + o.v * self.h[a][b]
                    + self.d[a] * o.d[b]
                    + o.d[a] * self.d[b];
            }
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, c: f64) -> Jet {
        self.v -= c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, c: f64) -> Jet {
        self.v *= c;
        for a in 0..3 {
            self.d[a] *= c;
            for b in 0..3 {
                self.h[a][b] *= c;
            }
        }
        self
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, j: Jet) -> Jet {
        j + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, j: Jet) -> Jet {
        -j + self
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, j: Jet) -> Jet {
        j * self
    }
}
