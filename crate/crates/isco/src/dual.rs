//! Forward-mode dual numbers with a fixed number of tangent lanes.
//!
//! Every superquadric has 11 unconstrained parameters, and each primitive is
//! rendered independently of the others, so an 11-lane dual number is enough
//! to carry exact derivatives of a whole render with respect to one
//! primitive's parameters. The same generic math runs on plain `f64` for
//! evaluation-only paths.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by `f64` and [`Dual`].
///
/// The operations are exactly the ones the superquadric/render math needs;
/// `powf` assumes a strictly positive base (callers clamp first).
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    /// Primal value, discarding tangents.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// `|x|` with sub-derivative 0 at 0.
    fn abs(self) -> Self;
    /// `self^p` for positive `self`; both base and exponent may carry tangents.
    fn powf(self, p: Self) -> Self;
    /// Clamp below by a constant; the clamped branch has zero derivative.
    fn max_const(self, c: f64) -> Self;
    fn scale(self, c: f64) -> Self;
}

impl Real for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powf(self, p: Self) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn max_const(self, c: f64) -> Self {
        if self > c {
            self
        } else {
            c
        }
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

/// Value plus `N` tangent lanes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

/// One lane per unconstrained superquadric parameter.
pub type Dual11 = Dual<11>;

impl<const N: usize> Dual<N> {
    #[inline]
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// Variable seeded with a unit tangent in `lane`.
    #[inline]
    pub fn variable(v: f64, lane: usize) -> Self {
        let mut d = [0.0; N];
        d[lane] = 1.0;
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d.iter()) {
            *a += *b;
        }
        Self { v: self.v + rhs.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d.iter()) {
            *a -= *b;
        }
        Self { v: self.v - rhs.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * rhs.v + rhs.d[i] * self.v;
        }
        Self { v: self.v * rhs.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        // primal uses a true division so the value lane stays bit-identical
        // to the plain f64 evaluation path
        let v = self.v / rhs.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * rhs.d[i]) / rhs.v;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = self.d;
        for a in d.iter_mut() {
            *a = -*a;
        }
        Self { v: -self.v, d }
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual::constant(v)
    }

    #[inline]
    fn value(self) -> f64 {
        self.v
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= e;
        }
        Self { v: e, d }
    }

    #[inline]
    fn ln(self) -> Self {
        let inv = 1.0 / self.v;
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= inv;
        }
        Self { v: self.v.ln(), d }
    }

    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= c;
        }
        Self { v: s, d }
    }

    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= -s;
        }
        Self { v: c, d }
    }

    #[inline]
    fn abs(self) -> Self {
        if self.v >= 0.0 {
            // sign 0 at the origin keeps the sub-derivative bounded
            if self.v == 0.0 {
                Self::constant(0.0)
            } else {
                self
            }
        } else {
            -self
        }
    }

    #[inline]
    fn powf(self, p: Self) -> Self {
        // d(u^w) = u^w * (w' ln u + w u'/u), valid for u > 0
        let w = self.v.powf(p.v);
        let ln_u = self.v.ln();
        let ratio = p.v / self.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = w * (p.d[i] * ln_u + ratio * self.d[i]);
        }
        Self { v: w, d }
    }

    #[inline]
    fn max_const(self, c: f64) -> Self {
        if self.v > c {
            self
        } else {
            Self::constant(c)
        }
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= c;
        }
        Self { v: self.v * c, d }
    }
}

/// Numerically stable logistic, generic over the scalar type.
#[inline]
pub fn logistic<S: Real>(x: S) -> S {
    let one = S::constant(1.0);
    if x.value() >= 0.0 {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Numerically stable softplus `ln(1 + e^x)`.
#[inline]
pub fn softplus<S: Real>(x: S) -> S {
    // max(x, 0) + ln(1 + e^-|x|), identical on both branches
    let one = S::constant(1.0);
    if x.value() >= 0.0 {
        x + (one + (-x).exp()).ln()
    } else {
        (one + x.exp()).ln()
    }
}

/// Inverse of [`softplus`] on (0, inf).
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp()).ln_1p()
    }
}

/// Inverse of the logistic on (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
