//! Scalar abstraction shared by every numeric kernel in the crate.
//!
//! All densities, samplers and diagnostics are written against [`Real`] so the
//! same code runs in `f32` or `f64`. Special functions that `num-traits` does
//! not provide (log-gamma, erfc) and the primitive random draws are hooks on
//! the trait, implemented once per concrete type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, Signed, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Open01, StandardNormal};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Signed
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + rustfft::FftNum
{
    fn ln_gamma(self) -> Self;
    fn erfc(self) -> Self;

    /// Uniform draw on the open interval (0, 1).
    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self;
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    fn exp1<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Gamma(shape, 1) draw.
    fn std_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;

    /// Default relative tolerance for adaptive quadrature at this precision.
    fn quad_tol() -> Self;
}

macro_rules! impl_real {
    ($t:ty, $lgamma:path, $erfc:path, $qtol:expr) => {
        impl Real for $t {
            #[inline]
            fn ln_gamma(self) -> Self {
                $lgamma(self)
            }
            #[inline]
            fn erfc(self) -> Self {
                $erfc(self)
            }
            #[inline]
            fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Open01.sample(rng)
            }
            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
            #[inline]
            fn exp1<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Exp1.sample(rng)
            }
            #[inline]
            fn std_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
                Gamma::new(shape, 1.0)
                    .expect("gamma shape must be positive and finite")
                    .sample(rng)
            }
            #[inline]
            fn quad_tol() -> Self {
                $qtol
            }
        }
    };
}

impl_real!(f64, libm::lgamma, libm::erfc, 1e-11);
impl_real!(f32, libm::lgammaf, libm::erfcf, 1e-5);

/// Converts an `f64` literal into `T`.
#[inline(always)]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    let s = xs.iter().fold(T::zero(), |acc, &x| acc + (x - m).exp());
    m + s.ln()
}

/// `log(1 - exp(-x))` for `x > 0`.
#[inline]
pub fn log1mexp<T: Real>(x: T) -> T {
    if x < T::LN_2() {
        (-(-x).exp_m1()).ln()
    } else {
        (-(-x).exp()).ln_1p()
    }
}
