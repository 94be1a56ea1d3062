//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All belief, message and response arithmetic is written against [`Real`],
//! which is implemented for `f32`, `f64` and the forward-mode [`Dual`] number.
//! The dual number lets the Lagrange-multiplier Newton step and the
//! closed-form fully connected solver obtain exact Jacobians by running the
//! same code path with a seeded derivative component.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub use dual::Dual;

/// Floating point scalar used throughout the crate.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`. Never fails for the implementors in this crate.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    /// Conversion from a count.
    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::lit(v as f64)
    }

    /// Value part as `f64` (for duals, the real component).
    #[inline]
    fn value(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Zero with no derivative component, so it can be skipped safely.
    #[inline]
    fn is_inert_zero(self) -> bool {
        self == Self::zero()
    }
}

impl Real for f32 {}
impl Real for f64 {}
impl Real for Dual {
    #[inline]
    fn is_inert_zero(self) -> bool {
        self.re == 0.0 && self.du == 0.0
    }
}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add<R: Real>(a: R, b: R) -> R {
    if a == R::neg_infinity() {
        return b;
    }
    if b == R::neg_infinity() {
        return a;
    }
    let m = if a > b { a } else { b };
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-sum-exp over a slice. Returns `-inf` for an empty slice.
pub fn log_sum_exp<R: Real>(xs: &[R]) -> R {
    let mut m = R::neg_infinity();
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == R::neg_infinity() {
        return m;
    }
    if m == R::infinity() {
        return m;
    }
    let s: R = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Shift a log table so that it is normalized (log-sum-exp zero), returning the shift.
pub fn log_normalize<R: Real>(xs: &mut [R]) -> R {
    let z = log_sum_exp(xs);
    if z.is_finite() {
        for x in xs.iter_mut() {
            *x -= z;
        }
    }
    z
}

/// `a - b` in log space where `a = -inf` means a zero numerator.
#[inline]
pub fn log_div<R: Real>(a: R, b: R) -> R {
    if a == R::neg_infinity() || b == R::neg_infinity() {
        R::neg_infinity()
    } else {
        a - b
    }
}

mod dual {
    use std::cmp::Ordering;
    use std::fmt;
    use std::iter::Sum;
    use std::num::FpCategory;
    use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

    use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

    /// First-order forward-mode dual number `re + du·ε`, `ε² = 0`.
    ///
    /// Comparisons look only at the real part so that generic code follows the
    /// same branch structure it would for plain floats.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct Dual {
        pub re: f64,
        pub du: f64,
    }

    impl Dual {
        pub const fn new(re: f64, du: f64) -> Self {
            Self { re, du }
        }

        /// Independent variable seeded with unit derivative.
        pub const fn variable(re: f64) -> Self {
            Self { re, du: 1.0 }
        }

        pub const fn constant(re: f64) -> Self {
            Self { re, du: 0.0 }
        }

        #[inline]
        fn chain(self, f: f64, df: f64) -> Self {
            Self { re: f, du: self.du * df }
        }
    }

    impl fmt::Display for Dual {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "{} + {}ε", self.re, self.du)
        }
    }

    impl PartialEq for Dual {
        fn eq(&self, other: &Self) -> bool {
            self.re == other.re
        }
    }

    impl PartialOrd for Dual {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            self.re.partial_cmp(&other.re)
        }
    }

    impl Add for Dual {
        type Output = Self;
        #[inline]
        fn add(self, o: Self) -> Self {
            Self::new(self.re + o.re, self.du + o.du)
        }
    }

    impl Sub for Dual {
        type Output = Self;
        #[inline]
        fn sub(self, o: Self) -> Self {
            Self::new(self.re - o.re, self.du - o.du)
        }
    }

    impl Mul for Dual {
        type Output = Self;
        #[inline]
        fn mul(self, o: Self) -> Self {
            Self::new(self.re * o.re, self.du * o.re + self.re * o.du)
        }
    }

    impl Div for Dual {
        type Output = Self;
        #[inline]
        fn div(self, o: Self) -> Self {
            let inv = 1.0 / o.re;
            Self::new(self.re * inv, (self.du * o.re - self.re * o.du) * inv * inv)
        }
    }

    impl Rem for Dual {
        type Output = Self;
        fn rem(self, o: Self) -> Self {
            // d(a mod b) = da - trunc(a/b) db
            let q = (self.re / o.re).trunc();
            Self::new(self.re % o.re, self.du - q * o.du)
        }
    }

    impl Neg for Dual {
        type Output = Self;
        #[inline]
        fn neg(self) -> Self {
            Self::new(-self.re, -self.du)
        }
    }

    impl AddAssign for Dual {
        fn add_assign(&mut self, o: Self) {
            *self = *self + o;
        }
    }
    impl SubAssign for Dual {
        fn sub_assign(&mut self, o: Self) {
            *self = *self - o;
        }
    }
    impl MulAssign for Dual {
        fn mul_assign(&mut self, o: Self) {
            *self = *self * o;
        }
    }
    impl DivAssign for Dual {
        fn div_assign(&mut self, o: Self) {
            *self = *self / o;
        }
    }
    impl RemAssign for Dual {
        fn rem_assign(&mut self, o: Self) {
            *self = *self % o;
        }
    }

    impl Sum for Dual {
        fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
            iter.fold(Self::zero(), |a, b| a + b)
        }
    }

    impl Zero for Dual {
        fn zero() -> Self {
            Self::constant(0.0)
        }
        fn is_zero(&self) -> bool {
            self.re == 0.0
        }
    }

    impl One for Dual {
        fn one() -> Self {
            Self::constant(1.0)
        }
    }

    impl Num for Dual {
        type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
        fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
            f64::from_str_radix(s, radix).map(Self::constant)
        }
    }

    impl ToPrimitive for Dual {
        fn to_i64(&self) -> Option<i64> {
            self.re.to_i64()
        }
        fn to_u64(&self) -> Option<u64> {
            self.re.to_u64()
        }
        fn to_f64(&self) -> Option<f64> {
            Some(self.re)
        }
    }

    impl FromPrimitive for Dual {
        fn from_i64(n: i64) -> Option<Self> {
            Some(Self::constant(n as f64))
        }
        fn from_u64(n: u64) -> Option<Self> {
            Some(Self::constant(n as f64))
        }
        fn from_f64(n: f64) -> Option<Self> {
            Some(Self::constant(n))
        }
    }

    impl NumCast for Dual {
        fn from<T: ToPrimitive>(n: T) -> Option<Self> {
            n.to_f64().map(Self::constant)
        }
    }

    impl Float for Dual {
        fn nan() -> Self {
            Self::constant(f64::NAN)
        }
        fn infinity() -> Self {
            Self::constant(f64::INFINITY)
        }
        fn neg_infinity() -> Self {
            Self::constant(f64::NEG_INFINITY)
        }
        fn neg_zero() -> Self {
            Self::constant(-0.0)
        }
        fn min_value() -> Self {
            Self::constant(f64::MIN)
        }
        fn min_positive_value() -> Self {
            Self::constant(f64::MIN_POSITIVE)
        }
        fn max_value() -> Self {
            Self::constant(f64::MAX)
        }
        fn is_nan(self) -> bool {
            self.re.is_nan() || self.du.is_nan()
        }
        fn is_infinite(self) -> bool {
            self.re.is_infinite()
        }
        fn is_finite(self) -> bool {
            self.re.is_finite() && self.du.is_finite()
        }
        fn is_normal(self) -> bool {
            self.re.is_normal()
        }
        fn classify(self) -> FpCategory {
            self.re.classify()
        }
        fn floor(self) -> Self {
            Self::constant(self.re.floor())
        }
        fn ceil(self) -> Self {
            Self::constant(self.re.ceil())
        }
        fn round(self) -> Self {
            Self::constant(self.re.round())
        }
        fn trunc(self) -> Self {
            Self::constant(self.re.trunc())
        }
        fn fract(self) -> Self {
            Self::new(self.re.fract(), self.du)
        }
        fn abs(self) -> Self {
            if self.re < 0.0 {
                -self
            } else {
                self
            }
        }
        fn signum(self) -> Self {
            Self::constant(self.re.signum())
        }
        fn is_sign_positive(self) -> bool {
            self.re.is_sign_positive()
        }
        fn is_sign_negative(self) -> bool {
            self.re.is_sign_negative()
        }
        fn mul_add(self, a: Self, b: Self) -> Self {
            self * a + b
        }
        fn recip(self) -> Self {
            Self::one() / self
        }
        fn powi(self, n: i32) -> Self {
            let f = self.re.powi(n);
            let df = if n == 0 { 0.0 } else { n as f64 * self.re.powi(n - 1) };
            self.chain(f, df)
        }
        fn powf(self, n: Self) -> Self {
            if n.du == 0.0 {
                let f = self.re.powf(n.re);
                let df = if n.re == 0.0 { 0.0 } else { n.re * self.re.powf(n.re - 1.0) };
                self.chain(f, df)
            } else {
                (self.ln() * n).exp()
            }
        }
        fn sqrt(self) -> Self {
            let f = self.re.sqrt();
            self.chain(f, 0.5 / f)
        }
        fn exp(self) -> Self {
            let f = self.re.exp();
            self.chain(f, f)
        }
        fn exp2(self) -> Self {
            let f = self.re.exp2();
            self.chain(f, f * std::f64::consts::LN_2)
        }
        fn ln(self) -> Self {
            self.chain(self.re.ln(), 1.0 / self.re)
        }
        fn log(self, base: Self) -> Self {
            self.ln() / base.ln()
        }
        fn log2(self) -> Self {
            self.chain(self.re.log2(), 1.0 / (self.re * std::f64::consts::LN_2))
        }
        fn log10(self) -> Self {
            self.chain(self.re.log10(), 1.0 / (self.re * std::f64::consts::LN_10))
        }
        fn max(self, o: Self) -> Self {
            if self.re >= o.re || o.re.is_nan() {
                self
            } else {
                o
            }
        }
        fn min(self, o: Self) -> Self {
            if self.re <= o.re || o.re.is_nan() {
                self
            } else {
                o
            }
        }
        fn abs_sub(self, o: Self) -> Self {
            if self.re > o.re {
                self - o
            } else {
                Self::zero()
            }
        }
        fn cbrt(self) -> Self {
            let f = self.re.cbrt();
            self.chain(f, 1.0 / (3.0 * f * f))
        }
        fn hypot(self, o: Self) -> Self {
            (self * self + o * o).sqrt()
        }
        fn sin(self) -> Self {
            self.chain(self.re.sin(), self.re.cos())
        }
        fn cos(self) -> Self {
            self.chain(self.re.cos(), -self.re.sin())
        }
        fn tan(self) -> Self {
            let t = self.re.tan();
            self.chain(t, 1.0 + t * t)
        }
        fn asin(self) -> Self {
            self.chain(self.re.asin(), 1.0 / (1.0 - self.re * self.re).sqrt())
        }
        fn acos(self) -> Self {
            self.chain(self.re.acos(), -1.0 / (1.0 - self.re * self.re).sqrt())
        }
        fn atan(self) -> Self {
            self.chain(self.re.atan(), 1.0 / (1.0 + self.re * self.re))
        }
        fn atan2(self, o: Self) -> Self {
            let d = self.re * self.re + o.re * o.re;
            Self::new(self.re.atan2(o.re), (o.re * self.du - self.re * o.du) / d)
        }
        fn sin_cos(self) -> (Self, Self) {
            (self.sin(), self.cos())
        }
        fn exp_m1(self) -> Self {
            self.chain(self.re.exp_m1(), self.re.exp())
        }
        fn ln_1p(self) -> Self {
            self.chain(self.re.ln_1p(), 1.0 / (1.0 + self.re))
        }
        fn sinh(self) -> Self {
            self.chain(self.re.sinh(), self.re.cosh())
        }
        fn cosh(self) -> Self {
            self.chain(self.re.cosh(), self.re.sinh())
        }
        fn tanh(self) -> Self {
            let t = self.re.tanh();
            self.chain(t, 1.0 - t * t)
        }
        fn asinh(self) -> Self {
            self.chain(self.re.asinh(), 1.0 / (self.re * self.re + 1.0).sqrt())
        }
        fn acosh(self) -> Self {
            self.chain(self.re.acosh(), 1.0 / (self.re * self.re - 1.0).sqrt())
        }
        fn atanh(self) -> Self {
            self.chain(self.re.atanh(), 1.0 / (1.0 - self.re * self.re))
        }
        fn integer_decode(self) -> (u64, i16, i8) {
            self.re.integer_decode()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_derivatives_match_closed_forms() {
        let x = Dual::variable(0.3);
        let y = (x * x).exp() * x.tanh() + x.atanh();
        let expected = (0.09f64).exp() * (2.0 * 0.3 * 0.3f64.tanh() + (1.0 - 0.3f64.tanh().powi(2)))
            + 1.0 / (1.0 - 0.09);
        assert!((y.du - expected).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_neg_infinity() {
        let v = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        assert_eq!(log_sum_exp(&v), 0.0);
        assert_eq!(log_sum_exp::<f64>(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_add(1000.0f64, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
