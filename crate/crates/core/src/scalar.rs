//! Scalars shared by the model and chart code.
//!
//! Everything that has to run on both plain doubles and on [`Dev`] values is
//! written against [`Real`]. A `Dev` carries a reference value together with an
//! exact-ish deviation from it, so a map can be evaluated at `p + δ` while `δ`
//! keeps its own relative precision even when `|δ| / |p|` is far below 1e-16.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_complex::Complex64;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn cst(x: f64) -> Self;
    fn sqrt(self) -> Self;
    /// Full value as a double.
    fn val(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
}

/// Reference value `v` plus deviation `d`.
///
/// Arithmetic keeps `v` identical to what the plain `f64` code computes and
/// propagates `d` without ever forming `v + d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dev {
    pub v: f64,
    pub d: f64,
}

impl Dev {
    pub fn new(v: f64, d: f64) -> Self {
        Dev { v, d }
    }
}

impl Add for Dev {
    type Output = Dev;
    #[inline]
    fn add(self, o: Dev) -> Dev {
        Dev { v: self.v + o.v, d: self.d + o.d }
    }
}

impl AddAssign for Dev {
    #[inline]
    fn add_assign(&mut self, o: Dev) {
        *self = *self + o;
    }
}

impl Sub for Dev {
    type Output = Dev;
    #[inline]
    fn sub(self, o: Dev) -> Dev {
        Dev { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Neg for Dev {
    type Output = Dev;
    #[inline]
    fn neg(self) -> Dev {
        Dev { v: -self.v, d: -self.d }
    }
}

impl Mul for Dev {
    type Output = Dev;
    #[inline]
    fn mul(self, o: Dev) -> Dev {
        Dev { v: self.v * o.v, d: self.v * o.d + self.d * o.v + self.d * o.d }
    }
}

impl Div for Dev {
    type Output = Dev;
    #[inline]
    fn div(self, o: Dev) -> Dev {
        let q = self.v / o.v;
        Dev { v: q, d: (self.d - q * o.d) / (o.v + o.d) }
    }
}

impl Real for Dev {
    #[inline]
    fn cst(x: f64) -> Self {
        Dev { v: x, d: 0.0 }
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let den = (self.v + self.d).max(0.0).sqrt() + s;
        let d = if den > 0.0 { self.d / den } else { 0.0 };
        Dev { v: s, d }
    }
    #[inline]
    fn val(self) -> f64 {
        self.v + self.d
    }
}

/// Minimal complex number over a [`Real`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cx<T> {
    pub re: T,
    pub im: T,
}

impl<T: Real> Cx<T> {
    #[inline]
    pub fn new(re: T, im: T) -> Self {
        Cx { re, im }
    }
    #[inline]
    pub fn zero() -> Self {
        Cx { re: T::cst(0.0), im: T::cst(0.0) }
    }
    #[inline]
    pub fn from_c(z: Complex64) -> Self {
        Cx { re: T::cst(z.re), im: T::cst(z.im) }
    }
    #[inline]
    pub fn conj(self) -> Self {
        Cx { re: self.re, im: -self.im }
    }
    #[inline]
    pub fn norm_sqr(self) -> T {
        self.re * self.re + self.im * self.im
    }
    #[inline]
    pub fn scale(self, s: T) -> Self {
        Cx { re: self.re * s, im: self.im * s }
    }
    /// Product with a constant complex coefficient.
    #[inline]
    pub fn mul_c(self, z: Complex64) -> Self {
        let (a, b) = (T::cst(z.re), T::cst(z.im));
        Cx { re: self.re * a - self.im * b, im: self.re * b + self.im * a }
    }
    #[inline]
    pub fn mul_i(self) -> Self {
        Cx { re: -self.im, im: self.re }
    }
    pub fn to_c(self) -> Complex64 {
        Complex64::new(self.re.val(), self.im.val())
    }
}

impl<T: Real> Add for Cx<T> {
    type Output = Cx<T>;
    #[inline]
    fn add(self, o: Self) -> Self {
        Cx { re: self.re + o.re, im: self.im + o.im }
    }
}

impl<T: Real> Sub for Cx<T> {
    type Output = Cx<T>;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Cx { re: self.re - o.re, im: self.im - o.im }
    }
}

impl<T: Real> Mul for Cx<T> {
    type Output = Cx<T>;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Cx { re: self.re * o.re - self.im * o.im, im: self.re * o.im + self.im * o.re }
    }
}

impl<T: Real> Neg for Cx<T> {
    type Output = Cx<T>;
    #[inline]
    fn neg(self) -> Self {
        Cx { re: -self.re, im: -self.im }
    }
}

impl Cx<Dev> {
    pub fn refs(self) -> Cx<f64> {
        Cx { re: self.re.v, im: self.im.v }
    }
    pub fn devs(self) -> Cx<f64> {
        Cx { re: self.re.d, im: self.im.d }
    }
}
