use std::collections::VecDeque;

use crate::devices::{pm_apply, ChannelSpec, DetectorSpec, ModulatorSpec, OpticalPulse, SourceSpec};
use crate::error::{Error, Result};
use crate::link::{random_key, RngStreams, SimulatedLink};
use crate::optics::{db_to_factor, PolarizationPhase};
use crate::protocol::{
    calibrate_thresholds, classify_gated, estimate_qber, revealed_indices, usable_key, ClassifiedBit,
    ClassifierThresholds, Decision, QberEstimate,
};
use crate::scalar::{Picos, Real};
use crate::timing::{
    channel_events, fpga_schedule, gate_by_mcss, ttu_bin, ClockSpec, GatedSample, TagChannel, TagEvent, VoltageSchedule,
};

/// Everything needed to run one key-distribution session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig<T> {
    pub duration_s: T,
    pub clock: ClockSpec<T>,
    pub source: SourceSpec<T>,
    /// Attenuator setting between the modulators and the fiber.
    pub evoa_db: T,
    pub channel: ChannelSpec<T>,
    pub detector: DetectorSpec<T>,
    pub modulator: ModulatorSpec<T>,
    pub v_pi: T,
    pub bin_width_s: T,
    /// Offset of the retained bin into each cycle. `None` picks the middle of
    /// the modulator's open window.
    pub sample_offset_s: Option<T>,
    /// `None` calibrates from the detector plateaus.
    pub thresholds: Option<ClassifierThresholds>,
    pub qber_sample_fraction: T,
    /// Trailing window for the diagnostic windowed QBER.
    pub qber_window_s: T,
    pub seed: u64,
}

impl<T: Real> Default for SessionConfig<T> {
    fn default() -> Self {
        SessionConfig {
            duration_s: T::lit(300.0),
            clock: ClockSpec::default(),
            source: SourceSpec::default(),
            evoa_db: T::lit(21.55),
            channel: ChannelSpec::default(),
            detector: DetectorSpec::default(),
            modulator: ModulatorSpec::default(),
            v_pi: T::lit(4.0),
            bin_width_s: T::lit(0.01),
            sample_offset_s: None,
            thresholds: None,
            qber_sample_fraction: T::lit(0.1),
            qber_window_s: T::lit(30.0),
            seed: 0,
        }
    }
}

impl<T: Real> SessionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.clock.validate()?;
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        self.modulator.validate()?;
        if !(self.duration_s > T::zero()) || !self.duration_s.is_finite() {
            return Err(Error::invalid("duration_s", "must be > 0"));
        }
        if self.full_cycles() < 1 {
            return Err(Error::invalid(
                "duration_s",
                "duration x frequency must cover at least one full cycle",
            ));
        }
        if !(self.evoa_db >= T::zero()) {
            return Err(Error::invalid("evoa_db", "must be >= 0"));
        }
        if !(self.v_pi > T::zero()) {
            return Err(Error::invalid("v_pi", "must be > 0"));
        }
        if !(self.bin_width_s > T::zero()) || self.bin_width().0 == 0 {
            return Err(Error::invalid("bin_width_s", "must be >= 1 ps"));
        }
        if !(self.qber_sample_fraction > T::zero() && self.qber_sample_fraction < T::one()) {
            return Err(Error::invalid("qber_sample_fraction", "must lie in (0, 1)"));
        }
        if !(self.qber_window_s > T::zero()) {
            return Err(Error::invalid("qber_window_s", "must be > 0"));
        }
        let closed = T::one() - self.clock.duty;
        if (closed - self.modulator.gate_open_fraction).abs() > T::lit(1e-6) {
            return Err(Error::invalid(
                "modulator.gate_open_fraction",
                format!("must equal 1 - clock.duty ({closed}); the modulator is open while the clock is low"),
            ));
        }
        if let Some(t) = &self.thresholds {
            t.validate()?;
        }
        self.sample_offset()?;
        Ok(())
    }

    pub fn duration(&self) -> Picos {
        Picos::from_secs(self.duration_s)
    }

    pub fn full_cycles(&self) -> u64 {
        self.clock.full_cycles(self.duration())
    }

    pub fn bin_width(&self) -> Picos {
        Picos::from_secs(self.bin_width_s)
    }

    pub fn sample_offset(&self) -> Result<Picos> {
        let period = self.clock.period();
        let offset = match self.sample_offset_s {
            Some(s) if s >= T::zero() => Picos::from_secs(s),
            Some(_) => return Err(Error::invalid("timing.sample_offset_s", "must be >= 0")),
            None => Picos::from_secs(self.modulator.gate_open_fraction * period.as_secs::<T>() / T::lit(2.0)),
        };
        if offset >= period {
            return Err(Error::invalid(
                "timing.sample_offset_s",
                format!("must be shorter than the clock period ({} s)", period.secs_f64()),
            ));
        }
        Ok(offset)
    }

    pub fn resolved_thresholds(&self) -> Result<ClassifierThresholds> {
        match self.thresholds {
            Some(t) => Ok(t),
            None => calibrate_thresholds(&self.detector, self.bin_width_s),
        }
    }
}

/// Sender: loads the key into the FPGA and emits one pulse per cycle during
/// the open half, its polarization set by the cycle's drive voltage.
pub fn alice_run<T: Real>(
    key_bits: &[u8],
    config: &SessionConfig<T>,
) -> Result<(VoltageSchedule<T>, Vec<OpticalPulse<T>>)> {
    config.validate()?;
    let cycles = config.full_cycles();
    if key_bits.len() as u64 > cycles {
        return Err(Error::invalid(
            "key_bits",
            format!("{} bits do not fit in {} cycles", key_bits.len(), cycles),
        ));
    }
    let schedule = fpga_schedule(key_bits, config.v_pi)?;
    let period = config.clock.period().0;
    let rate = config.detector.signal_rate_h * db_to_factor(config.channel.extra_loss_db()?);
    let pulses = schedule
        .entries
        .iter()
        .map(|e| {
            let blank = OpticalPulse {
                emission: Picos(e.cycle * period),
                rate_cps: rate,
                phase: PolarizationPhase::horizontal(),
            };
            pm_apply(blank, e.voltage, config.v_pi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((schedule, pulses))
}

/// Receiver over already-gated samples.
pub fn bob_run(gated: &[GatedSample], thresholds: &ClassifierThresholds) -> Vec<ClassifiedBit> {
    classify_gated(gated, thresholds)
}

/// What Bob recovers from a raw time-tagger stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamAnalysis {
    pub edges: Vec<Picos>,
    pub gated: Vec<GatedSample>,
    pub classified: Vec<ClassifiedBit>,
    /// Sender bits recovered from the FPGA sync channel, one per full cycle.
    pub sender_bits: Vec<u8>,
}

/// Receiver over a merged tag stream: bin the detector channel, gate on the
/// recorded MCSS edges, classify.
pub fn bob_run_stream<T: Real>(tags: &[TagEvent], config: &SessionConfig<T>) -> Result<StreamAnalysis> {
    let thresholds = config.resolved_thresholds()?;
    let edges: Vec<Picos> = channel_events(tags, TagChannel::Mcss)
        .iter()
        .map(|e| e.timestamp)
        .collect();
    if edges.len() < 2 {
        return Err(Error::ContractViolation(
            "stream holds fewer than two MCSS edges; no full cycle to gate".into(),
        ));
    }
    let clicks = channel_events(tags, TagChannel::HDetector);
    let width = config.bin_width();
    let last_edge = edges.last().expect("checked above").0;
    let span_end = clicks.last().map_or(0, |e| e.timestamp.0 + 1).max(last_edge).max(1);
    let bins = ttu_bin(&clicks, width, Some(Picos(span_end)))?;
    let gated = gate_by_mcss(&bins, &edges, config.sample_offset()?);
    let classified = bob_run(&gated, &thresholds);

    let sync: Vec<Picos> = channel_events(tags, TagChannel::FpgaSync)
        .iter()
        .map(|e| e.timestamp)
        .collect();
    let sender_bits = edges[..edges.len() - 1]
        .iter()
        .map(|e| u8::from(sync.binary_search(e).is_ok()))
        .collect();
    Ok(StreamAnalysis {
        edges,
        gated,
        classified,
        sender_bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberPoint<T> {
    pub time_s: T,
    /// All comparisons so far; `None` while no bit has been compared.
    pub cumulative: Option<f64>,
    pub windowed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord<T> {
    pub cycle: u64,
    pub voltage: T,
    pub theta: T,
    pub count: Option<u64>,
    pub decision: Decision,
    pub alice_bit: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport<T> {
    pub thresholds: ClassifierThresholds,
    pub cycle_period: Picos,
    pub alice_key: Vec<u8>,
    /// Bob's decisions; erasures carry no bit.
    pub bob_key: Vec<Decision>,
    pub revealed: Vec<usize>,
    pub qber_series: Vec<QberPoint<T>>,
    pub per_cycle_log: Vec<CycleRecord<T>>,
    /// `None` when no revealed position could be compared.
    pub final_qber: Option<QberEstimate>,
}

impl<T: Real> SessionReport<T> {
    pub fn cycles(&self) -> usize {
        self.alice_key.len()
    }

    pub fn erasures(&self) -> usize {
        self.bob_key.iter().filter(|d| **d == Decision::Erasure).count()
    }

    /// Bit errors over the whole key, including unrevealed positions.
    pub fn key_errors(&self) -> usize {
        self.alice_key
            .iter()
            .zip(&self.bob_key)
            .filter(|(a, d)| d.bit().is_some_and(|b| b != **a))
            .count()
    }

    pub fn usable_key(&self) -> (Vec<u8>, Vec<u8>) {
        usable_key(&self.alice_key, &self.bob_key, &self.revealed)
    }
}

/// Full chain: source, IM, EVOA, PM, fiber with drift, PBS, detector, TTU,
/// gating, classification and QBER, for a random key filling every cycle.
pub fn run_session<T: Real>(config: &SessionConfig<T>) -> Result<SessionReport<T>> {
    config.validate()?;
    let key = random_key(&RngStreams::new(config.seed), config.full_cycles() as usize);
    run_session_with_key(config, &key)
}

pub fn run_session_with_key<T: Real>(config: &SessionConfig<T>, key: &[u8]) -> Result<SessionReport<T>> {
    let thresholds = config.resolved_thresholds()?;
    let (schedule, pulses) = alice_run(key, config)?;
    let link = SimulatedLink::new(config, &pulses)?;
    let gated = link.gated_samples()?;
    let classified = bob_run(&gated[..key.len()], &thresholds);
    let bob_key: Vec<Decision> = classified.iter().map(|c| c.decision).collect();

    let period = config.clock.period();
    let revealed = revealed_indices(key.len(), config.qber_sample_fraction.to_f64().unwrap_or(0.1));
    let window = Picos::from_secs(config.qber_window_s);

    let mut total = QberEstimate::default();
    let mut recent: VecDeque<(Picos, bool)> = VecDeque::new();
    let mut qber_series = Vec::with_capacity(revealed.len());
    for &i in &revealed {
        let t = Picos((i as u64 + 1) * period.0);
        if let Ok(est) = estimate_qber(key, &bob_key, &[i]) {
            recent.push_back((t, est.mismatches == 1));
            total = total.merge(est);
        } else {
            total.skipped_erasures += 1;
        }
        while recent.front().is_some_and(|(ts, _)| ts.0 + window.0 <= t.0) {
            recent.pop_front();
        }
        let windowed =
            (!recent.is_empty()).then(|| recent.iter().filter(|(_, m)| *m).count() as f64 / recent.len() as f64);
        qber_series.push(QberPoint {
            time_s: t.as_secs(),
            cumulative: (total.compared > 0).then(|| total.value()),
            windowed,
        });
    }

    let per_cycle_log = classified
        .iter()
        .zip(&schedule.entries)
        .zip(key)
        .map(|((c, s), &bit)| CycleRecord {
            cycle: c.cycle_index,
            voltage: s.voltage,
            theta: link.theta(c.cycle_index).radians(),
            count: c.raw_count,
            decision: c.decision,
            alice_bit: bit,
        })
        .collect();

    Ok(SessionReport {
        thresholds,
        cycle_period: period,
        alice_key: key.to_vec(),
        bob_key,
        final_qber: (total.compared > 0).then_some(total),
        revealed,
        qber_series,
        per_cycle_log,
    })
}
