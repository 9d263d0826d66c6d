//! Parametric models of the instruments on the link: laser, intensity
//! modulator (IM), attenuator, phase modulator (PM), fiber with polarization
//! drift, and the PBS with its H-arm photon counter.
//!
//! The detector is calibrated directly in count-rate space against the three
//! plateaus observed during pulsed operation (H level, V leakage, dark), rather
//! than derived from optical power. Optical power is tracked separately in dB.

use rand::Rng;

use crate::error::{Error, Result};
use crate::optics::{
    db_to_factor, fiber_loss_db, pbs_h_probability, pbs_v_probability, phase_for_voltage, sample_poisson,
    AlignmentError, PolarizationPhase, PowerLevel,
};
use crate::scalar::{Picos, Real};
use crate::timing::ClockSpec;

/// CW laser feeding the intensity modulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec<T> {
    pub cw_power: PowerLevel<T>,
    pub wavelength_nm: T,
}

impl<T: Real> Default for SourceSpec<T> {
    fn default() -> Self {
        SourceSpec {
            cw_power: PowerLevel::from_dbm(T::zero()),
            wavelength_nm: T::lit(1550.0),
        }
    }
}

impl<T: Real> SourceSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > T::zero()) {
            return Err(Error::invalid("source.wavelength_nm", "must be > 0"));
        }
        if !self.cw_power.dbm.is_finite() {
            return Err(Error::invalid("source.cw_power_dbm", "must be finite"));
        }
        Ok(())
    }
}

/// Intensity modulator gating the CW beam into pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulatorSpec<T> {
    /// Suppression while the gate is closed.
    pub extinction_db: T,
    /// Fraction of each MCSS cycle, starting at the edge, during which light passes.
    pub gate_open_fraction: T,
}

impl<T: Real> Default for ModulatorSpec<T> {
    fn default() -> Self {
        ModulatorSpec {
            extinction_db: T::lit(30.0),
            gate_open_fraction: T::lit(0.5),
        }
    }
}

impl<T: Real> ModulatorSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.extinction_db > T::zero()) {
            return Err(Error::invalid("modulator.extinction_db", "must be > 0"));
        }
        if !(self.gate_open_fraction > T::zero() && self.gate_open_fraction < T::one()) {
            return Err(Error::invalid("modulator.gate_open_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// H-arm count rates calibrated at the reference fiber length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec<T> {
    /// Counts/s for a pure H pulse.
    pub signal_rate_h: T,
    /// Counts/s on the H arm during V pulses (finite H/V fidelity).
    pub leak_rate_v: T,
    /// Counts/s with no light.
    pub dark_rate: T,
}

impl<T: Real> Default for DetectorSpec<T> {
    fn default() -> Self {
        DetectorSpec {
            signal_rate_h: T::lit(2.0e4),
            leak_rate_v: T::lit(7.5e3),
            dark_rate: T::lit(2.5e3),
        }
    }
}

impl<T: Real> DetectorSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dark_rate >= T::zero()) {
            return Err(Error::invalid("detector.dark_rate", "must be >= 0"));
        }
        if !(self.leak_rate_v > self.dark_rate) {
            return Err(Error::invalid(
                "detector.leak_rate_v",
                format!("must exceed dark_rate ({})", self.dark_rate),
            ));
        }
        if !(self.signal_rate_h > self.leak_rate_v) || !self.signal_rate_h.is_finite() {
            return Err(Error::invalid(
                "detector.signal_rate_h",
                format!("must exceed leak_rate_v ({})", self.leak_rate_v),
            ));
        }
        Ok(())
    }
}

/// Parameters of the polarization drift: zero for `t_stable_s`, then a Wiener
/// walk of the misalignment angle, clamped to `+-theta_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec<T> {
    pub t_stable_s: T,
    pub sigma_rad_per_sqrt_s: T,
    pub theta_max: T,
}

impl<T: Real> Default for DriftSpec<T> {
    fn default() -> Self {
        DriftSpec {
            t_stable_s: T::lit(150.0),
            sigma_rad_per_sqrt_s: T::lit(2.0e-3),
            theta_max: T::FRAC_PI_4(),
        }
    }
}

impl<T: Real> DriftSpec<T> {
    pub fn disabled() -> Self {
        DriftSpec {
            sigma_rad_per_sqrt_s: T::zero(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_stable_s >= T::zero()) {
            return Err(Error::invalid("drift.t_stable_s", "must be >= 0"));
        }
        if !(self.sigma_rad_per_sqrt_s >= T::zero()) {
            return Err(Error::invalid("drift.sigma_rad_per_sqrt_s", "must be >= 0"));
        }
        if !(self.theta_max >= T::zero()) {
            return Err(Error::invalid("drift.theta_max", "must be >= 0"));
        }
        Ok(())
    }
}

/// Fiber between the sender and the PBS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec<T> {
    pub length_km: T,
    pub alpha_db_per_km: T,
    /// Length at which [`DetectorSpec`] was calibrated; only loss relative to
    /// this length changes the count rates.
    pub reference_length_km: T,
    pub drift: DriftSpec<T>,
}

impl<T: Real> Default for ChannelSpec<T> {
    fn default() -> Self {
        ChannelSpec {
            length_km: T::lit(5.0),
            alpha_db_per_km: T::lit(0.141),
            reference_length_km: T::lit(5.0),
            drift: DriftSpec::default(),
        }
    }
}

impl<T: Real> ChannelSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= T::zero()) {
            return Err(Error::invalid("channel.length_km", "must be >= 0"));
        }
        if !(self.alpha_db_per_km >= T::zero()) {
            return Err(Error::invalid("channel.alpha_db_per_km", "must be >= 0"));
        }
        if !(self.reference_length_km >= T::zero()) {
            return Err(Error::invalid("channel.reference_length_km", "must be >= 0"));
        }
        self.drift.validate()
    }

    pub fn loss_db(&self) -> Result<T> {
        fiber_loss_db(self.length_km, self.alpha_db_per_km)
    }

    /// Loss beyond the calibration length; negative for shorter links.
    pub fn extra_loss_db(&self) -> Result<T> {
        Ok(self.loss_db()? - fiber_loss_db(self.reference_length_km, self.alpha_db_per_km)?)
    }
}

/// A gated weak coherent pulse leaving the sender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalPulse<T> {
    pub emission: Picos,
    /// Mean detectable photon rate (counts/s) for a pure H pulse.
    pub rate_cps: T,
    pub phase: PolarizationPhase<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateState {
    Open,
    Closed,
}

/// Whether the intensity modulator passes light at `t`.
pub fn im_gate<T: Real>(t: Picos, clock: &ClockSpec<T>, spec: &ModulatorSpec<T>) -> GateState {
    let period = clock.period().0.max(1);
    let open_len = (spec.gate_open_fraction * T::lit(period as f64))
        .round()
        .to_u64()
        .unwrap_or(0);
    if t.0 % period < open_len {
        GateState::Open
    } else {
        GateState::Closed
    }
}

/// Power transmission of the intensity modulator at `t_s` seconds.
pub fn im_transmission<T: Real>(t_s: T, clock: &ClockSpec<T>, spec: &ModulatorSpec<T>) -> T {
    match im_gate(Picos::from_secs(t_s), clock, spec) {
        GateState::Open => T::one(),
        GateState::Closed => db_to_factor(spec.extinction_db),
    }
}

/// Phase modulator: sets the pulse retardance from the drive voltage.
pub fn pm_apply<T: Real>(pulse: OpticalPulse<T>, v: T, v_pi: T) -> Result<OpticalPulse<T>> {
    Ok(OpticalPulse {
        phase: phase_for_voltage(v, v_pi, T::zero())?,
        ..pulse
    })
}

/// Expected H-arm count rate.
///
/// Closed gate gives the dark rate. Open gate gives
/// `dark + L (signal - dark) P_H + L (leak - dark) P_V` with
/// `L = 10^(-extra_db / 10)`, so at zero extra loss and `theta = 0` the three
/// calibrated plateaus are reproduced exactly.
pub fn expected_h_rate<T: Real>(
    phi: PolarizationPhase<T>,
    theta: AlignmentError<T>,
    gate: GateState,
    spec: &DetectorSpec<T>,
    channel_extra_db: T,
) -> T {
    match gate {
        GateState::Closed => spec.dark_rate,
        GateState::Open => {
            let l = db_to_factor(channel_extra_db);
            spec.dark_rate
                + l * (spec.signal_rate_h - spec.dark_rate) * pbs_h_probability(phi, theta)
                + l * (spec.leak_rate_v - spec.dark_rate) * pbs_v_probability(phi, theta)
        }
    }
}

/// Counts registered over a window of `window_s` seconds at `rate` counts/s.
pub fn detect_counts<T: Real, R: Rng + ?Sized>(rate: T, window_s: T, rng: &mut R) -> Result<u64> {
    if !(rate >= T::zero()) {
        return Err(Error::invalid("rate", format!("must be >= 0, got {rate}")));
    }
    if !(window_s > T::zero()) {
        return Err(Error::invalid("window_s", format!("must be > 0, got {window_s}")));
    }
    sample_poisson(rate * window_s, rng)
}

/// Stateful misalignment walk. Queries must come at non-decreasing times.
#[derive(Debug, Clone)]
pub struct DriftProcess<T, R> {
    spec: DriftSpec<T>,
    rng: R,
    last_t: T,
    theta: T,
}

impl<T: Real, R: Rng> DriftProcess<T, R> {
    pub fn new(spec: DriftSpec<T>, rng: R) -> Self {
        DriftProcess {
            spec,
            rng,
            last_t: T::zero(),
            theta: T::zero(),
        }
    }

    pub fn spec(&self) -> &DriftSpec<T> {
        &self.spec
    }

    /// Misalignment at `t` seconds.
    pub fn angle_at(&mut self, t: T) -> Result<AlignmentError<T>> {
        if !(t >= T::zero()) {
            return Err(Error::invalid("t", "must be >= 0"));
        }
        if t < self.last_t {
            return Err(Error::ContractViolation(format!(
                "drift queried at t={t} after t={}",
                self.last_t
            )));
        }
        let from = self.last_t.max(self.spec.t_stable_s);
        if t > from && self.spec.sigma_rad_per_sqrt_s > T::zero() {
            let step = self.spec.sigma_rad_per_sqrt_s * (t - from).sqrt() * T::standard_normal(&mut self.rng);
            let limit = self.spec.theta_max;
            self.theta = (self.theta + step).max(-limit).min(limit);
        }
        self.last_t = t;
        Ok(AlignmentError(self.theta))
    }
}

/// One-shot form of [`DriftProcess::angle_at`].
pub fn drift_angle<T: Real, R: Rng>(process: &mut DriftProcess<T, R>, t: T) -> Result<AlignmentError<T>> {
    process.angle_at(t)
}
