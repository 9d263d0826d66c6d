//! The simulated physical chain between the FPGA and the time tagger.
//!
//! Every TTU bin draws its count from its own random stream, so any subset of
//! bins can be simulated without touching the others: the gated fast path used
//! by sessions and the full bin series used for plots see identical counts.
//! Drift is sampled once per MCSS cycle, at the instant Bob samples that cycle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::devices::{detect_counts, expected_h_rate, DriftProcess, GateState, OpticalPulse};
use crate::error::Result;
use crate::optics::{AlignmentError, PolarizationPhase};
use crate::protocol::SessionConfig;
use crate::scalar::{Picos, Real};
use crate::timing::{merge_streams, ClockSpec, CountSample, GatedSample, TagChannel, TagEvent};

/// Independent random streams derived from one session seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

/// What a random stream is used for; part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Key = 1,
    Detector = 2,
    Drift = 3,
    TagTimes = 4,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, kind: StreamKind, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((kind as u64) << 56) | (index & ((1 << 56) - 1)));
        rng
    }
}

/// Uniformly random key of `n` bits; stands in for the sender's QRNG.
pub fn random_key(streams: &RngStreams, n: usize) -> Vec<u8> {
    let mut rng = streams.stream(StreamKind::Key, 0);
    (0..n).map(|_| rng.random_range(0..=1u8)).collect()
}

/// Optical chain from the phase modulator to the H-arm detector.
#[derive(Debug, Clone)]
pub struct SimulatedLink<T> {
    clock: ClockSpec<T>,
    open_len: u64,
    bin_width: Picos,
    sample_offset: Picos,
    span: Picos,
    phases: Vec<PolarizationPhase<T>>,
    thetas: Vec<AlignmentError<T>>,
    extra_db: T,
    light_on: bool,
    config: SessionConfig<T>,
    streams: RngStreams,
}

impl<T: Real> SimulatedLink<T> {
    /// Builds the link for `pulses` (one per cycle, in order). Cycles without a
    /// pulse see the modulator idle at 0 V.
    pub fn new(config: &SessionConfig<T>, pulses: &[OpticalPulse<T>]) -> Result<Self> {
        config.validate()?;
        let clock = config.clock;
        let period = clock.period();
        let span = config.duration();
        let streams = RngStreams::new(config.seed);
        let sample_offset = config.sample_offset()?;

        // One drift sample per cycle, including a trailing partial cycle.
        let n_cycles = span.0.div_ceil(period.0).max(1);
        let mut drift = DriftProcess::new(config.channel.drift, streams.stream(StreamKind::Drift, 0));
        let thetas = (0..n_cycles)
            .map(|c| drift.angle_at(Picos(c * period.0 + sample_offset.0).as_secs()))
            .collect::<Result<Vec<_>>>()?;

        let open_len = (config.modulator.gate_open_fraction * T::lit(period.0 as f64))
            .round()
            .to_u64()
            .unwrap_or(0);

        Ok(SimulatedLink {
            clock,
            open_len,
            bin_width: config.bin_width(),
            sample_offset,
            span,
            phases: pulses.iter().map(|p| p.phase).collect(),
            thetas,
            extra_db: config.channel.extra_loss_db()?,
            light_on: true,
            config: config.clone(),
            streams,
        })
    }

    /// Same link with the laser switched off: only dark counts remain.
    pub fn dark(mut self) -> Self {
        self.light_on = false;
        self
    }

    pub fn span(&self) -> Picos {
        self.span
    }

    pub fn full_cycles(&self) -> u64 {
        self.clock.full_cycles(self.span)
    }

    pub fn bins_in_span(&self) -> u64 {
        self.span.0.div_ceil(self.bin_width.0)
    }

    pub fn theta(&self, cycle: u64) -> AlignmentError<T> {
        self.thetas
            .get(cycle as usize)
            .copied()
            .unwrap_or_else(|| *self.thetas.last().expect("at least one cycle"))
    }

    pub fn phase(&self, cycle: u64) -> PolarizationPhase<T> {
        self.phases
            .get(cycle as usize)
            .copied()
            .unwrap_or_else(PolarizationPhase::horizontal)
    }

    fn open_rate(&self, cycle: u64) -> T {
        if !self.light_on {
            return self.config.detector.dark_rate;
        }
        expected_h_rate(
            self.phase(cycle),
            self.theta(cycle),
            GateState::Open,
            &self.config.detector,
            self.extra_db,
        )
    }

    /// Expected counts in bin `bin`, integrating over gate and cycle boundaries.
    pub fn bin_mean(&self, bin: u64) -> T {
        let w = self.bin_width.0;
        let period = self.clock.period().0;
        let (start, end) = (bin * w, (bin + 1) * w);
        let dark = self.config.detector.dark_rate;
        let mut mean = T::zero();
        for cycle in start / period..=(end - 1) / period {
            let c0 = cycle * period;
            let open_end = c0 + self.open_len;
            let lo = start.max(c0);
            let hi = end.min(c0 + period);
            let open = hi.min(open_end).saturating_sub(lo);
            let closed = (hi - lo) - open;
            mean = mean + self.open_rate(cycle) * Picos(open).as_secs() + dark * Picos(closed).as_secs();
        }
        mean
    }

    /// Detector counts in bin `bin`.
    pub fn bin_count(&self, bin: u64) -> Result<u64> {
        let window = self.bin_width.as_secs::<T>();
        let mut rng = self.streams.stream(StreamKind::Detector, bin);
        detect_counts(self.bin_mean(bin) / window, window, &mut rng)
    }

    pub fn bin_sample(&self, bin: u64) -> Result<CountSample> {
        Ok(CountSample {
            bin_start: Picos(bin * self.bin_width.0),
            counts: self.bin_count(bin)?,
            bin_width: self.bin_width,
        })
    }

    /// Every TTU bin over the session span.
    pub fn bin_series(&self) -> Result<Vec<CountSample>> {
        (0..self.bins_in_span()).map(|b| self.bin_sample(b)).collect()
    }

    /// Bin that Bob keeps for `cycle`.
    pub fn gated_bin(&self, cycle: u64) -> u64 {
        (cycle * self.clock.period().0 + self.sample_offset.0) / self.bin_width.0
    }

    /// One retained sample per full cycle, drawing only the retained bins.
    pub fn gated_samples(&self) -> Result<Vec<GatedSample>> {
        (0..self.full_cycles())
            .map(|cycle| {
                Ok(GatedSample {
                    cycle,
                    sample: Some(self.bin_sample(self.gated_bin(cycle))?),
                })
            })
            .collect()
    }

    /// Merged time-tagger stream: detector clicks, MCSS edges, and FPGA sync
    /// marks at the start of every cycle driven at `v_pi`.
    pub fn tag_stream(&self, key_bits: &[u8]) -> Result<Vec<TagEvent>> {
        let w = self.bin_width.0;
        let mut clicks = Vec::new();
        for bin in 0..self.bins_in_span() {
            let n = self.bin_count(bin)?;
            let mut rng = self.streams.stream(StreamKind::TagTimes, bin);
            let lo = bin * w;
            let hi = ((bin + 1) * w).min(self.span.0);
            let mut ts: Vec<u64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
            ts.sort_unstable();
            clicks.extend(ts.into_iter().map(|t| TagEvent::new(TagChannel::HDetector, Picos(t))));
        }
        let period = self.clock.period().0;
        let mcss: Vec<TagEvent> = (0..=self.full_cycles())
            .map(|k| TagEvent::new(TagChannel::Mcss, Picos(k * period)))
            .collect();
        let sync: Vec<TagEvent> = key_bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(k, _)| TagEvent::new(TagChannel::FpgaSync, Picos(k as u64 * period)))
            .collect();
        Ok(merge_streams(&[clicks, mcss, sync]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::DriftSpec;
    use crate::protocol::alice_run;
    use crate::timing::{gate_by_mcss, mcss_edges, ttu_bin};

    fn config(duration: f64) -> SessionConfig<f64> {
        let mut c = SessionConfig {
            duration_s: duration,
            seed: 17,
            ..SessionConfig::default()
        };
        c.channel.drift = DriftSpec::disabled();
        c
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let s = RngStreams::new(1);
        let a: u64 = s.stream(StreamKind::Detector, 3).random();
        let b: u64 = s.stream(StreamKind::Detector, 3).random();
        let c: u64 = s.stream(StreamKind::Detector, 4).random();
        let d: u64 = s.stream(StreamKind::TagTimes, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(random_key(&s, 64), random_key(&s, 64));
    }

    #[test]
    fn bin_means_follow_plateaus() {
        let cfg = config(1.0);
        let key = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let (_, pulses) = alice_run(&key, &cfg).unwrap();
        let link = SimulatedLink::new(&cfg, &pulses).unwrap();
        // Cycle 0 is H: bins 0..5 open at 200, 5..10 closed at 25.
        for b in 0..5 {
            assert!((link.bin_mean(b) - 200.0).abs() < 1e-9);
        }
        for b in 5..10 {
            assert!((link.bin_mean(b) - 25.0).abs() < 1e-9);
        }
        // Cycle 1 is V.
        assert!((link.bin_mean(12) - 75.0).abs() < 1e-9);
        assert!((link.dark().bin_mean(12) - 25.0).abs() < 1e-9);
    }

    #[test]
    fn straddling_bins_integrate_partial_windows() {
        let mut cfg = config(1.0);
        cfg.clock.frequency_hz = 8.0; // 0.125 s cycles, open for 62.5 ms
        let (_, pulses) = alice_run(&[0; 8], &cfg).unwrap();
        let link = SimulatedLink::new(&cfg, &pulses).unwrap();
        // Bin 6 = [60, 70) ms: 2.5 ms open at 200/10ms, 7.5 ms dark.
        let want = 2.0e4 * 0.0025 + 2.5e3 * 0.0075;
        assert!((link.bin_mean(6) - want).abs() < 1e-9);
    }

    #[test]
    fn gated_fast_path_matches_full_series() {
        let mut cfg = config(3.0);
        cfg.channel.drift = DriftSpec {
            sigma_rad_per_sqrt_s: 0.05,
            t_stable_s: 0.5,
            ..DriftSpec::default()
        };
        let key = random_key(&RngStreams::new(4), 30);
        let (_, pulses) = alice_run(&key, &cfg).unwrap();
        let link = SimulatedLink::new(&cfg, &pulses).unwrap();
        let series = link.bin_series().unwrap();
        let edges = mcss_edges(cfg.duration(), &cfg.clock);
        let gated = gate_by_mcss(&series, &edges, cfg.sample_offset().unwrap());
        assert_eq!(gated, link.gated_samples().unwrap());
    }

    #[test]
    fn tag_stream_rebins_to_the_same_counts() {
        let cfg = config(2.0);
        let key = random_key(&RngStreams::new(8), 20);
        let (_, pulses) = alice_run(&key, &cfg).unwrap();
        let link = SimulatedLink::new(&cfg, &pulses).unwrap();
        let tags = link.tag_stream(&key).unwrap();
        let clicks: Vec<TagEvent> = tags
            .iter()
            .filter(|e| e.channel == TagChannel::HDetector)
            .copied()
            .collect();
        let rebinned = ttu_bin(&clicks, cfg.bin_width(), Some(link.span())).unwrap();
        assert_eq!(rebinned, link.bin_series().unwrap());
        let mcss = tags.iter().filter(|e| e.channel == TagChannel::Mcss).count();
        assert_eq!(mcss, 21);
        let sync = tags.iter().filter(|e| e.channel == TagChannel::FpgaSync).count();
        assert_eq!(sync, key.iter().filter(|&&b| b == 1).count());
        assert!(tags
            .windows(2)
            .all(|p| (p[0].timestamp, p[0].channel) <= (p[1].timestamp, p[1].channel)));
    }
}
