//! Polarization algebra, dB arithmetic and photon-counting statistics.
//!
//! Polarization is carried as a single retardance `phi` applied by the phase
//! modulator plus a signed misalignment angle `theta` between the preparation
//! and analysis bases. The prepared state is `cos(phi/2)|H> + sin(phi/2)|V>`,
//! so `phi = 0` is horizontal and `phi = pi` is vertical.
//!
//! Voltage convention: 0 V gives `phi = 0` (H) and `v_pi` gives `phi = pi` (V).

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Phase-modulator retardance, always reduced into `[0, 2pi)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PolarizationPhase<T>(T);

impl<T: Real> PolarizationPhase<T> {
    pub fn new(phi: T) -> Self {
        let two_pi = T::TAU();
        let mut r = phi % two_pi;
        if r < T::zero() {
            r = r + two_pi;
        }
        if r >= two_pi {
            r = T::zero();
        }
        PolarizationPhase(r)
    }

    pub fn horizontal() -> Self {
        PolarizationPhase(T::zero())
    }

    pub fn vertical() -> Self {
        PolarizationPhase(T::PI())
    }

    pub fn radians(self) -> T {
        self.0
    }

    /// The phase shifted by `delta`, re-reduced.
    pub fn shifted(self, delta: T) -> Self {
        Self::new(self.0 + delta)
    }
}

/// Coefficients of `|H>` and `|V>` in the prepared state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateAmplitudes<T> {
    pub a_h: T,
    pub a_v: T,
}

impl<T: Real> StateAmplitudes<T> {
    pub fn norm_sq(&self) -> T {
        self.a_h * self.a_h + self.a_v * self.a_v
    }
}

/// Optical power in dBm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PowerLevel<T> {
    pub dbm: T,
}

impl<T: Real> PowerLevel<T> {
    pub fn from_dbm(dbm: T) -> Self {
        PowerLevel { dbm }
    }

    pub fn from_milliwatts(mw: T) -> Self {
        PowerLevel {
            dbm: T::lit(10.0) * mw.log10(),
        }
    }

    pub fn milliwatts(self) -> T {
        T::lit(10.0).powf(self.dbm / T::lit(10.0))
    }
}

/// Signed misalignment between the analysis and preparation bases, radians.
/// Zero means the polarization controllers are perfectly adjusted.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct AlignmentError<T>(pub T);

impl<T: Real> AlignmentError<T> {
    pub fn aligned() -> Self {
        AlignmentError(T::zero())
    }

    pub fn radians(self) -> T {
        self.0
    }
}

/// Retardance produced by `v` volts on a modulator with half-wave voltage `v_pi`.
pub fn phase_for_voltage<T: Real>(v: T, v_pi: T, v_offset: T) -> Result<PolarizationPhase<T>> {
    if !(v_pi > T::zero()) {
        return Err(Error::invalid("v_pi", format!("must be > 0, got {v_pi}")));
    }
    Ok(PolarizationPhase::new(T::PI() * (v - v_offset) / v_pi))
}

pub fn state_amplitudes<T: Real>(phi: PolarizationPhase<T>) -> StateAmplitudes<T> {
    let half = phi.radians() / T::lit(2.0);
    StateAmplitudes {
        a_h: half.cos(),
        a_v: half.sin(),
    }
}

/// Probability that the PBS routes the pulse to the H arm: `cos^2(phi/2 + theta)`.
pub fn pbs_h_probability<T: Real>(phi: PolarizationPhase<T>, misalign: AlignmentError<T>) -> T {
    let c = (phi.radians() / T::lit(2.0) + misalign.radians()).cos();
    c * c
}

/// Complement of [`pbs_h_probability`]: `sin^2(phi/2 + theta)`.
pub fn pbs_v_probability<T: Real>(phi: PolarizationPhase<T>, misalign: AlignmentError<T>) -> T {
    let s = (phi.radians() / T::lit(2.0) + misalign.radians()).sin();
    s * s
}

pub fn apply_attenuation<T: Real>(input: PowerLevel<T>, atten_db: T) -> Result<PowerLevel<T>> {
    if !(atten_db >= T::zero()) {
        return Err(Error::invalid(
            "atten_db",
            format!("attenuation must be >= 0 dB, got {atten_db}"),
        ));
    }
    Ok(PowerLevel {
        dbm: input.dbm - atten_db,
    })
}

pub fn fiber_loss_db<T: Real>(length_km: T, alpha_db_per_km: T) -> Result<T> {
    if !(length_km >= T::zero()) {
        return Err(Error::invalid("length_km", format!("must be >= 0, got {length_km}")));
    }
    if !(alpha_db_per_km >= T::zero()) {
        return Err(Error::invalid(
            "alpha_db_per_km",
            format!("must be >= 0, got {alpha_db_per_km}"),
        ));
    }
    Ok(length_km * alpha_db_per_km)
}

/// Linear power factor for a loss of `db` decibels.
pub fn db_to_factor<T: Real>(db: T) -> T {
    T::lit(10.0).powf(-db / T::lit(10.0))
}

/// Photon count drawn from Poisson(`mean`).
pub fn sample_poisson<T: Real, R: Rng + ?Sized>(mean: T, rng: &mut R) -> Result<u64> {
    if !(mean >= T::zero()) || !mean.is_finite() {
        return Err(Error::invalid("mean", format!("must be finite and >= 0, got {mean}")));
    }
    if mean == T::zero() {
        return Ok(0);
    }
    Ok(T::poisson_draw(mean, rng))
}

/// `P(K >= threshold)` for `K ~ Poisson(mean)` by direct pmf summation.
///
/// Terms follow `p(k+1) = p(k) * mean / (k+1)`, in linear space up to
/// [`Real::LINEAR_PMF_LIMIT`] and in log space beyond it. When the threshold
/// lies above the mean the upper tail is summed directly so that tiny tail
/// probabilities keep full relative precision. Returns NaN for a negative mean.
pub fn poisson_tail<T: Real>(mean: T, threshold: u64) -> T {
    if threshold == 0 {
        return T::one();
    }
    if !(mean >= T::zero()) {
        return T::nan();
    }
    if mean == T::zero() {
        return T::zero();
    }

    let log_space = mean > T::LINEAR_PMF_LIMIT;
    let ln_mean = mean.ln();
    let mut pmf = PmfTerms {
        k: 0,
        mean,
        ln_mean,
        log_space,
        value: if log_space { -mean } else { (-mean).exp() },
    };

    let t = T::from_u64(threshold).unwrap_or_else(T::infinity);
    if t <= mean {
        let mut lower = T::zero();
        for _ in 0..threshold {
            lower = lower + pmf.prob();
            pmf.advance();
        }
        (T::one() - lower).max(T::zero())
    } else {
        while pmf.k < threshold {
            pmf.advance();
        }
        // Beyond the mode the terms decrease monotonically.
        let mut upper = T::zero();
        loop {
            let p = pmf.prob();
            upper = upper + p;
            if p <= upper * T::epsilon() || p == T::zero() {
                break;
            }
            pmf.advance();
        }
        upper.min(T::one())
    }
}

struct PmfTerms<T> {
    k: u64,
    mean: T,
    ln_mean: T,
    log_space: bool,
    /// `p(k)` or `ln p(k)` depending on `log_space`.
    value: T,
}

impl<T: Real> PmfTerms<T> {
    fn prob(&self) -> T {
        if self.log_space {
            self.value.exp()
        } else {
            self.value
        }
    }

    fn advance(&mut self) {
        let next = T::from_u64(self.k + 1).unwrap_or_else(T::infinity);
        self.value = if self.log_space {
            self.value + self.ln_mean - next.ln()
        } else {
            self.value * self.mean / next
        };
        self.k += 1;
    }
}
