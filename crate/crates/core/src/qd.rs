//! Quad-double arithmetic: an unevaluated sum of four doubles, about 62
//! significant digits.
//!
//! Additions and products follow the "sloppy" variants of Hida, Li and Bailey,
//! which bound the error relative to the operand magnitudes. That is the kind
//! of guarantee the chart code needs: a tiny coordinate next to an O(1) one
//! keeps its digits as long as cancellation between the large terms stays
//! below the working precision.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Qd(pub [f64; 4]);

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

#[inline]
fn three_sum(a: &mut f64, b: &mut f64, c: &mut f64) {
    let (t1, t2) = two_sum(*a, *b);
    let (s, t3) = two_sum(*c, t1);
    *a = s;
    let (u, v) = two_sum(t2, t3);
    *b = u;
    *c = v;
}

#[inline]
fn three_sum2(a: &mut f64, b: &mut f64, c: f64) {
    let (t1, t2) = two_sum(*a, *b);
    let (s, t3) = two_sum(c, t1);
    *a = s;
    *b = t2 + t3;
}

fn renorm(mut c0: f64, mut c1: f64, mut c2: f64, mut c3: f64, mut c4: f64) -> Qd {
    if !c0.is_finite() {
        return Qd([c0, 0.0, 0.0, 0.0]);
    }
    let (mut s0, mut s1);
    let (mut s2, mut s3) = (0.0, 0.0);
    (s0, c4) = quick_two_sum(c3, c4);
    (s0, c3) = quick_two_sum(c2, s0);
    (s0, c2) = quick_two_sum(c1, s0);
    (c0, c1) = quick_two_sum(c0, s0);

    (s0, s1) = quick_two_sum(c0, c1);
    if s1 != 0.0 {
        (s1, s2) = quick_two_sum(s1, c2);
        if s2 != 0.0 {
            (s2, s3) = quick_two_sum(s2, c3);
            if s3 != 0.0 {
                s3 += c4;
            } else {
                s2 += c4;
            }
        } else {
            (s1, s2) = quick_two_sum(s1, c3);
            if s2 != 0.0 {
                (s2, s3) = quick_two_sum(s2, c4);
            } else {
                (s1, s2) = quick_two_sum(s1, c4);
            }
        }
    } else {
        (s0, s1) = quick_two_sum(s0, c2);
        if s1 != 0.0 {
            (s1, s2) = quick_two_sum(s1, c3);
            if s2 != 0.0 {
                (s2, s3) = quick_two_sum(s2, c4);
            } else {
                (s1, s2) = quick_two_sum(s1, c4);
            }
        } else {
            (s0, s1) = quick_two_sum(s0, c3);
            if s1 != 0.0 {
                (s1, s2) = quick_two_sum(s1, c4);
            } else {
                (s0, s1) = quick_two_sum(s0, c4);
            }
        }
    }
    Qd([s0, s1, s2, s3])
}

impl Qd {
    pub const ZERO: Qd = Qd([0.0; 4]);

    pub fn from_f64(x: f64) -> Qd {
        Qd([x, 0.0, 0.0, 0.0])
    }

    pub fn hi(self) -> f64 {
        self.0[0]
    }

    pub fn abs(self) -> Qd {
        if self.0[0] < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn mul_f64(self, b: f64) -> Qd {
        let (p0, q0) = two_prod(self.0[0], b);
        let (p1, q1) = two_prod(self.0[1], b);
        let (p2, q2) = two_prod(self.0[2], b);
        let p3 = self.0[3] * b;
        let (s1, mut s2) = two_sum(q0, p1);
        let (mut q1, mut q2, mut p2) = (q1, q2, p2);
        three_sum(&mut s2, &mut q1, &mut p2);
        three_sum2(&mut q1, &mut q2, p3);
        renorm(p0, s1, s2, q1, q2 + p2)
    }

    /// Exact decimal-free rendering good to the full precision, for reports.
    pub fn to_string_sci(self) -> String {
        format!("{:.17e}{:+.3e}", self.0[0], self.0[1] + self.0[2])
    }
}

impl fmt::Display for Qd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0[0] + self.0[1])
    }
}

impl PartialOrd for Qd {
    fn partial_cmp(&self, o: &Qd) -> Option<Ordering> {
        let d = *self - *o;
        d.0[0].partial_cmp(&0.0)
    }
}

impl Add for Qd {
    type Output = Qd;
    fn add(self, b: Qd) -> Qd {
        let a = self.0;
        let b = b.0;
        let (s0, t0) = two_sum(a[0], b[0]);
        let (s1, mut t1) = two_sum(a[1], b[1]);
        let (mut s2, t2) = two_sum(a[2], b[2]);
        let (mut s3, t3) = two_sum(a[3], b[3]);
        let (s1, mut t0) = two_sum(s1, t0);
        three_sum(&mut s2, &mut t0, &mut t1);
        three_sum2(&mut s3, &mut t0, t2);
        renorm(s0, s1, s2, s3, t0 + t1 + t3)
    }
}

impl AddAssign for Qd {
    fn add_assign(&mut self, o: Qd) {
        *self = *self + o;
    }
}

impl Neg for Qd {
    type Output = Qd;
    fn neg(self) -> Qd {
        Qd([-self.0[0], -self.0[1], -self.0[2], -self.0[3]])
    }
}

impl Sub for Qd {
    type Output = Qd;
    fn sub(self, b: Qd) -> Qd {
        self + (-b)
    }
}

impl Mul for Qd {
    type Output = Qd;
    fn mul(self, b: Qd) -> Qd {
        let a = self.0;
        let b = b.0;
        let (p0, mut q0) = two_prod(a[0], b[0]);
        let (mut p1, mut q1) = two_prod(a[0], b[1]);
        let (mut p2, mut q2) = two_prod(a[1], b[0]);
        let (mut p3, q3) = two_prod(a[0], b[2]);
        let (mut p4, q4) = two_prod(a[1], b[1]);
        let (mut p5, q5) = two_prod(a[2], b[0]);
        three_sum(&mut p1, &mut p2, &mut q0);
        three_sum(&mut p2, &mut q1, &mut q2);
        three_sum(&mut p3, &mut p4, &mut p5);
        let (s0, t0) = two_sum(p2, p3);
        let (s1, t1) = two_sum(q1, p4);
        let mut s2 = q2 + p5;
        let (s1, t0b) = two_sum(s1, t0);
        s2 += t0b + t1;
        let s1 = s1 + (a[0] * b[3] + a[1] * b[2] + a[2] * b[1] + a[3] * b[0] + q0 + q3 + q4 + q5);
        renorm(p0, p1, s0, s1, s2)
    }
}

impl Div for Qd {
    type Output = Qd;
    fn div(self, b: Qd) -> Qd {
        let q0 = self.0[0] / b.0[0];
        let mut r = self - b.mul_f64(q0);
        let q1 = r.0[0] / b.0[0];
        r = r - b.mul_f64(q1);
        let q2 = r.0[0] / b.0[0];
        r = r - b.mul_f64(q2);
        let q3 = r.0[0] / b.0[0];
        r = r - b.mul_f64(q3);
        let q4 = r.0[0] / b.0[0];
        renorm(q0, q1, q2, q3, q4)
    }
}

impl Real for Qd {
    #[inline]
    fn cst(x: f64) -> Self {
        Qd::from_f64(x)
    }

    fn sqrt(self) -> Self {
        if self.0[0] <= 0.0 {
            return if self.0[0] == 0.0 { Qd::ZERO } else { Qd::from_f64(f64::NAN) };
        }
        let mut r = Qd::from_f64(1.0 / self.0[0].sqrt());
        let h = self.mul_f64(0.5);
        let half = Qd::from_f64(0.5);
        for _ in 0..3 {
            r = r + (half - h * (r * r)) * r;
        }
        r * self
    }

    #[inline]
    fn val(self) -> f64 {
        self.0[0] + self.0[1]
    }
}
