//! Scalar abstraction so the network and sampler run in either `f32`
//! (fast training) or `f64` (gradient checks, oracles).

use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point element type for network and sampler state.
pub trait Element: ndarray::NdFloat + num_traits::FromPrimitive + std::iter::Sum {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn standard_normal<R: Rng>(rng: &mut R) -> Self;
    /// Uniform draw from `(-bound, bound)`.
    fn uniform_sym<R: Rng>(rng: &mut R, bound: f64) -> Self;
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample::<f32, _>(StandardNormal)
    }

    #[inline]
    fn uniform_sym<R: Rng>(rng: &mut R, bound: f64) -> Self {
        ((rng.gen::<f64>() * 2.0 - 1.0) * bound) as f32
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample::<f64, _>(StandardNormal)
    }

    #[inline]
    fn uniform_sym<R: Rng>(rng: &mut R, bound: f64) -> Self {
        (rng.gen::<f64>() * 2.0 - 1.0) * bound
    }
}
