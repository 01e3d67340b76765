//! Scalars over the real or complex field.
//!
//! A [`Scalar`] is always stored as an `(re, im)` pair. Real computations keep
//! `im == 0` throughout, so the same arithmetic serves both fields and the
//! [`FieldTag`] only decides how values are parsed, printed and validated.

use core::fmt;
use core::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// The ground field of a computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldTag {
    Real,
    Complex,
}

impl FieldTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldTag::Real => "real",
            FieldTag::Complex => "complex",
        }
    }

    pub fn parse(s: &str) -> Option<FieldTag> {
        match s {
            "real" => Some(FieldTag::Real),
            "complex" => Some(FieldTag::Complex),
            _ => None,
        }
    }
}

impl fmt::Display for FieldTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Scalar {
    pub re: f64,
    pub im: f64,
}

impl Scalar {
    pub const ZERO: Scalar = Scalar { re: 0.0, im: 0.0 };
    pub const ONE: Scalar = Scalar { re: 1.0, im: 0.0 };

    #[inline]
    pub const fn new(re: f64, im: f64) -> Self {
        Scalar { re, im }
    }

    #[inline]
    pub const fn real(re: f64) -> Self {
        Scalar { re, im: 0.0 }
    }

    /// `modulus * exp(i * arg)`.
    pub fn from_polar(modulus: f64, arg: f64) -> Self {
        Scalar::new(modulus * libm::cos(arg), modulus * libm::sin(arg))
    }

    #[inline]
    pub fn abs(self) -> f64 {
        if self.im == 0.0 {
            libm::fabs(self.re)
        } else {
            libm::hypot(self.re, self.im)
        }
    }

    /// Argument in `(-pi, pi]`.
    #[inline]
    pub fn arg(self) -> f64 {
        libm::atan2(self.im, self.re)
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    #[inline]
    pub fn is_real(self) -> bool {
        self.im == 0.0
    }

    #[inline]
    pub fn conj(self) -> Self {
        Scalar::new(self.re, -self.im)
    }

    pub fn recip(self) -> Self {
        if self.im == 0.0 {
            return Scalar::real(1.0 / self.re);
        }
        let d = self.re * self.re + self.im * self.im;
        Scalar::new(self.re / d, -self.im / d)
    }

    #[inline]
    pub fn scale(self, k: f64) -> Self {
        Scalar::new(self.re * k, self.im * k)
    }

    /// Integer power by repeated squaring.
    pub fn powu(self, mut k: u64) -> Self {
        let mut base = self;
        let mut acc = Scalar::ONE;
        while k > 0 {
            if k & 1 == 1 {
                acc *= base;
            }
            k >>= 1;
            if k > 0 {
                base *= base;
            }
        }
        acc
    }
}

impl Add for Scalar {
    type Output = Scalar;
    #[inline]
    fn add(self, o: Scalar) -> Scalar {
        Scalar::new(self.re + o.re, self.im + o.im)
    }
}

impl AddAssign for Scalar {
    #[inline]
    fn add_assign(&mut self, o: Scalar) {
        self.re += o.re;
        self.im += o.im;
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    #[inline]
    fn sub(self, o: Scalar) -> Scalar {
        Scalar::new(self.re - o.re, self.im - o.im)
    }
}

impl SubAssign for Scalar {
    #[inline]
    fn sub_assign(&mut self, o: Scalar) {
        self.re -= o.re;
        self.im -= o.im;
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    #[inline]
    fn mul(self, o: Scalar) -> Scalar {
        if self.im == 0.0 && o.im == 0.0 {
            return Scalar::real(self.re * o.re);
        }
        Scalar::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

impl MulAssign for Scalar {
    #[inline]
    fn mul_assign(&mut self, o: Scalar) {
        *self = *self * o;
    }
}

impl Div for Scalar {
    type Output = Scalar;
    #[inline]
    fn div(self, o: Scalar) -> Scalar {
        if self.im == 0.0 && o.im == 0.0 {
            return Scalar::real(self.re / o.re);
        }
        self * o.recip()
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    #[inline]
    fn neg(self) -> Scalar {
        Scalar::new(-self.re, -self.im)
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::real(x)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im == 0.0 {
            write!(f, "{}", self.re)
        } else {
            write!(f, "{}{:+}i", self.re, self.im)
        }
    }
}
