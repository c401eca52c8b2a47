//! Scalar abstraction over plain `f64` and double-double arithmetic.
//!
//! Orbits that are coded over long windows lose roughly `log10(sigma)` digits
//! per forward step, so the coding routines run on [`DD`] while the cone and
//! Jacobian code stays on `f64`.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use twofloat::TwoFloat;

/// Field operations shared by `f64` and [`DD`].
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn lit(x: f64) -> Self;
    fn approx(self) -> f64;

    fn zero() -> Self {
        Self::lit(0.0)
    }

    fn one() -> Self {
        Self::lit(1.0)
    }

    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn approx(self) -> f64 {
        self
    }
}

/// Double-double number backed by [`twofloat`], with a corrected quotient.
///
/// Division of two `TwoFloat` values in twofloat 0.8 keeps only about 53
/// bits, so the quotient is rebuilt from two divisions by the leading word.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct DD(TwoFloat);

impl DD {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }
}

impl From<f64> for DD {
    fn from(x: f64) -> Self {
        DD(TwoFloat::from(x))
    }
}

impl Add for DD {
    type Output = DD;
    #[inline]
    fn add(self, o: DD) -> DD {
        DD(self.0 + o.0)
    }
}

impl Sub for DD {
    type Output = DD;
    #[inline]
    fn sub(self, o: DD) -> DD {
        DD(self.0 - o.0)
    }
}

impl Mul for DD {
    type Output = DD;
    #[inline]
    fn mul(self, o: DD) -> DD {
        DD(self.0 * o.0)
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, o: DD) -> DD {
        let head = o.0.hi();
        let q1 = self.0 / head;
        let rest = self.0 - q1 * o.0;
        DD(q1 + rest / head)
    }
}

impl Neg for DD {
    type Output = DD;
    #[inline]
    fn neg(self) -> DD {
        DD(-self.0)
    }
}

impl Real for DD {
    #[inline]
    fn lit(x: f64) -> Self {
        DD::from(x)
    }
    #[inline]
    fn approx(self) -> f64 {
        self.hi() + self.lo()
    }
}

/// Closed interval with outward rounding on every operation.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Self {
        Interval {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Widen by one ulp on each side.
    pub fn outward(self) -> Interval {
        Interval {
            lo: self.lo.next_down(),
            hi: self.hi.next_up(),
        }
    }

    pub fn scale(self, k: f64) -> Interval {
        Interval::new(self.lo * k, self.hi * k).outward()
    }

    pub fn shift(self, k: f64) -> Interval {
        Interval::new(self.lo + k, self.hi + k).outward()
    }

    pub fn sqr(self) -> Interval {
        let a = self.lo * self.lo;
        let b = self.hi * self.hi;
        if self.contains(0.0) {
            Interval::new(0.0, a.max(b)).outward()
        } else {
            Interval::new(a, b).outward()
        }
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi).outward()
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, o: Interval) -> Interval {
        Interval::new(self.lo - o.hi, self.hi - o.lo).outward()
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        let p = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }.outward()
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}
