//! Forward-mode dual numbers with a fixed number of tangent directions.
//!
//! Used to differentiate per-segment curve evaluation with respect to the
//! segment's local control data. The [`Scalar`] trait lets the same curve
//! code run on plain `f64` and on [`Dual`].

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;

    fn scale(self, s: f64) -> Self {
        self * Self::cst(s)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const D: usize> {
    pub v: f64,
    pub d: [f64; D],
}

impl<const D: usize> Dual<D> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; D] }
    }

    /// A variable seeded along tangent direction `i`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; D];
        d[i] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn map_d(self, f: impl Fn(f64) -> f64) -> [f64; D] {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x = f(*x);
        }
        d
    }
}

impl<const D: usize> Add for Dual<D> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        Self { v: self.v + o.v, d }
    }
}

impl<const D: usize> Sub for Dual<D> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        Self { v: self.v - o.v, d }
    }
}

impl<const D: usize> Mul for Dual<D> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; D];
        for i in 0..D {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const D: usize> Div for Dual<D> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; D];
        for i in 0..D {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Self { v: q, d }
    }
}

impl<const D: usize> Neg for Dual<D> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: self.map_d(|x| -x),
        }
    }
}

impl<const D: usize> Scalar for Dual<D> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        let k = if r > 0.0 { 0.5 / r } else { 0.0 };
        Self {
            v: r,
            d: self.map_d(|x| x * k),
        }
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        Self {
            v: self.v * s,
            d: self.map_d(|x| x * s),
        }
    }
}
