//! Scalar abstraction shared by the optics and device models.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// Floating point type the physical models are written against: `f32` or `f64`.
///
/// The two sampling hooks exist because `rand_distr` bounds its distributions on
/// the concrete float, which a supertrait cannot express.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Mean above which Poisson pmf terms are evaluated in log space.
    const LINEAR_PMF_LIMIT: Self;

    /// Tolerance used by the normalization checks.
    const NORM_EPS: Self;

    /// Draw from Poisson(`mean`) for a strictly positive, finite mean.
    fn poisson_draw<R: Rng + ?Sized>(mean: Self, rng: &mut R) -> u64;

    /// Draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }
}

macro_rules! impl_real {
    ($t:ty, $limit:expr, $eps:expr) => {
        impl Real for $t {
            const LINEAR_PMF_LIMIT: Self = $limit;
            const NORM_EPS: Self = $eps;

            fn poisson_draw<R: Rng + ?Sized>(mean: Self, rng: &mut R) -> u64 {
                let dist = Poisson::new(mean).expect("mean checked by caller");
                let k: $t = dist.sample(rng);
                k as u64
            }

            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
        }
    };
}

impl_real!(f64, 700.0, 1e-12);
impl_real!(f32, 80.0, 1e-6);

/// Time in integer picoseconds. All bin and edge arithmetic happens here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Picos(pub u64);

impl Picos {
    pub const PER_SECOND: u64 = 1_000_000_000_000;

    /// Rounds to the nearest picosecond; negative or non-finite input clamps to zero.
    pub fn from_secs<T: Real>(s: T) -> Self {
        let ps = (s * T::lit(Self::PER_SECOND as f64)).round();
        Picos(ps.to_u64().unwrap_or(0))
    }

    pub fn as_secs<T: Real>(self) -> T {
        T::lit(self.0 as f64) / T::lit(Self::PER_SECOND as f64)
    }

    /// Seconds as `f64` for CSV output.
    pub fn secs_f64(self) -> f64 {
        self.0 as f64 / Self::PER_SECOND as f64
    }
}

impl Display for Picos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picos_round_trip() {
        assert_eq!(Picos::from_secs(0.01f64), Picos(10_000_000_000));
        assert_eq!(Picos::from_secs(300.0f64), Picos(300 * Picos::PER_SECOND));
        assert_eq!(Picos::from_secs(-1.0f64), Picos(0));
        assert_eq!(Picos(25_000_000_000).secs_f64(), 0.025);
    }
}
