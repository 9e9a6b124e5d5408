//! Forward-mode dual numbers used to differentiate the device equations.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Largest `state_dim + 2` among the catalog models.
pub const MAX_VARS: usize = 8;

/// Number type the device equations are written against.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: [f64; MAX_VARS],
}

impl Dual {
    pub fn var(v: f64, index: usize) -> Self {
        let mut g = [0.0; MAX_VARS];
        g[index] = 1.0;
        Self { v, g }
    }

    fn map(self, v: f64, dv: f64) -> Self {
        let mut g = self.g;
        g.iter_mut().for_each(|x| *x *= dv);
        Self { v, g }
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Self {
            v,
            g: [0.0; MAX_VARS],
        }
    }
    fn sin(self) -> Self {
        self.map(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.map(self.v.cos(), -self.v.sin())
    }
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.map(r, 0.5 / r)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        let mut g = self.g;
        g.iter_mut().zip(o.g).for_each(|(a, b)| *a += b);
        Dual { v: self.v + o.v, g }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        let mut g = self.g;
        g.iter_mut().zip(o.g).for_each(|(a, b)| *a -= b);
        Dual { v: self.v - o.v, g }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        let mut g = [0.0; MAX_VARS];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = self.g[k] * o.v + self.v * o.g[k];
        }
        Dual { v: self.v * o.v, g }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut g = [0.0; MAX_VARS];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = (self.g[k] - v * o.g[k]) * inv;
        }
        Dual { v, g }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.map(-self.v, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(self, o: f64) -> Dual {
        Dual {
            v: self.v + o,
            g: self.g,
        }
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(self, o: f64) -> Dual {
        Dual {
            v: self.v - o,
            g: self.g,
        }
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, o: f64) -> Dual {
        self.map(self.v * o, o)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, o: f64) -> Dual {
        self.map(self.v / o, 1.0 / o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::var(2.0, 0);
        let y = Dual::var(3.0, 1);
        let f = x * y / (x + 1.0);
        // f = xy/(x+1): df/dx = y/(x+1)^2, df/dy = x/(x+1)
        assert!((f.v - 2.0).abs() < 1e-15);
        assert!((f.g[0] - 3.0 / 9.0).abs() < 1e-15);
        assert!((f.g[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trig_and_sqrt() {
        let x = Dual::var(0.3, 2);
        assert!((x.sin().g[2] - 0.3f64.cos()).abs() < 1e-15);
        assert!((x.cos().g[2] + 0.3f64.sin()).abs() < 1e-15);
        assert!((x.sqrt().g[2] - 0.5 / 0.3f64.sqrt()).abs() < 1e-15);
    }
}
