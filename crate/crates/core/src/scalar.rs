//! Floating-point scalar abstraction shared by every numerical routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type usable by the filters, samplers and life tables.
///
/// Implemented for `f32` and `f64`. Random draws go through the trait so
/// that generic code does not have to restate `rand_distr` bounds.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from U(0, 1), never returning exactly 0.
    fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from Gamma(shape, 1).
    fn unit_gamma<R: Rng + ?Sized>(rng: &mut R, shape: Self) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                loop {
                    let u: $t = rng.random();
                    if u > 0.0 {
                        return u;
                    }
                }
            }

            #[inline]
            fn unit_gamma<R: Rng + ?Sized>(rng: &mut R, shape: Self) -> Self {
                Gamma::new(shape, 1.0)
                    .expect("gamma shape must be positive")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// `ln(2π)`.
#[inline]
pub(crate) fn ln_two_pi<F: Scalar>() -> F {
    (F::lit(2.0) * F::PI()).ln()
}

/// Log-density of N(mean, var) at `x`.
#[inline]
pub fn normal_log_pdf<F: Scalar>(x: F, mean: F, var: F) -> F {
    let d = x - mean;
    -F::lit(0.5) * (ln_two_pi::<F>() + var.ln() + d * d / var)
}

/// Draw from N(mean, var); `var` may be zero.
#[inline]
pub fn draw_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R, mean: F, var: F) -> F {
    mean + var.sqrt() * F::standard_normal(rng)
}

/// Draw from the inverse-gamma distribution IG(shape, scale).
#[inline]
pub fn draw_inverse_gamma<F: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: F, scale: F) -> F {
    scale / F::unit_gamma(rng, shape)
}
