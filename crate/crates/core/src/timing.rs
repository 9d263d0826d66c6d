//! Master clock, FPGA voltage driver and time-tagging unit.
//!
//! All time arithmetic is done in integer picoseconds ([`Picos`]) so that bin
//! membership at exact boundaries never depends on float rounding. A bin with
//! index `b` covers `[b * width, (b + 1) * width)` measured from the stream
//! origin.

use crate::error::{Error, Result};
use crate::scalar::{Picos, Real};

/// Master clock synchronization signal (MCSS): a unipolar square wave.
///
/// Each cycle starts at an edge `k * period`. The signal is low for the first
/// `1 - duty` of the cycle (intensity modulator open) and high for the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockSpec<T> {
    pub frequency_hz: T,
    pub amplitude_v: T,
    pub duty: T,
}

impl<T: Real> Default for ClockSpec<T> {
    fn default() -> Self {
        ClockSpec {
            frequency_hz: T::lit(10.0),
            amplitude_v: T::lit(4.0),
            duty: T::lit(0.5),
        }
    }
}

impl<T: Real> ClockSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > T::zero()) || !self.frequency_hz.is_finite() {
            return Err(Error::invalid("clock.frequency_hz", "must be > 0"));
        }
        if !(self.duty > T::zero() && self.duty < T::one()) {
            return Err(Error::invalid("clock.duty", "must lie in (0, 1)"));
        }
        if self.period().0 == 0 {
            return Err(Error::invalid("clock.frequency_hz", "period shorter than 1 ps"));
        }
        Ok(())
    }

    /// Cycle length, truncated to whole picoseconds.
    pub fn period(&self) -> Picos {
        let p = (T::lit(Picos::PER_SECOND as f64) / self.frequency_hz).floor();
        Picos(p.to_u64().unwrap_or(0))
    }

    /// Number of complete cycles in `duration`.
    pub fn full_cycles(&self, duration: Picos) -> u64 {
        match self.period().0 {
            0 => 0,
            p => duration.0 / p,
        }
    }

    /// MCSS voltage at time `t`.
    pub fn level_at(&self, t: Picos) -> T {
        let period = self.period().0.max(1);
        let into = t.0 % period;
        let low_len = ((T::one() - self.duty) * T::lit(period as f64))
            .round()
            .to_u64()
            .unwrap_or(0);
        if into < low_len {
            T::zero()
        } else {
            self.amplitude_v
        }
    }
}

/// Time-tagger input channel. The discriminant is the on-disk channel code and
/// also the tie-break order when merging streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum TagChannel {
    HDetector = 0,
    Mcss = 1,
    /// One event at the start of every cycle in which the FPGA drives `v_pi`.
    FpgaSync = 2,
}

impl TagChannel {
    pub const ALL: [TagChannel; 3] = [TagChannel::HDetector, TagChannel::Mcss, TagChannel::FpgaSync];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            TagChannel::HDetector => "H_DETECTOR",
            TagChannel::Mcss => "MCSS",
            TagChannel::FpgaSync => "FPGA_SYNC",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagEvent {
    pub channel: TagChannel,
    pub timestamp: Picos,
}

impl TagEvent {
    pub fn new(channel: TagChannel, timestamp: Picos) -> Self {
        TagEvent { channel, timestamp }
    }
}

/// Detector counts accumulated over one TTU bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CountSample {
    pub bin_start: Picos,
    pub counts: u64,
    pub bin_width: Picos,
}

impl CountSample {
    pub fn bin_index(&self) -> u64 {
        self.bin_start.0 / self.bin_width.0
    }
}

/// Default TTU resolution: 10 ms, i.e. 100 samples per second.
pub const DEFAULT_BIN_WIDTH: Picos = Picos(10_000_000_000);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledVoltage<T> {
    pub cycle: u64,
    pub voltage: T,
}

/// The two-level drive applied to the phase modulator, one entry per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSchedule<T> {
    pub v_pi: T,
    pub entries: Vec<ScheduledVoltage<T>>,
}

impl<T: Real> VoltageSchedule<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inverse of [`fpga_schedule`]: `0 V -> 0`, `v_pi -> 1`.
    pub fn to_bits(&self) -> Result<Vec<u8>> {
        self.entries
            .iter()
            .map(|e| {
                if e.voltage == T::zero() {
                    Ok(0)
                } else if e.voltage == self.v_pi {
                    Ok(1)
                } else {
                    Err(Error::ContractViolation(format!(
                        "cycle {} drives {} V, outside {{0, {}}}",
                        e.cycle, e.voltage, self.v_pi
                    )))
                }
            })
            .collect()
    }
}

/// Cycle boundaries `k * period` for `k = 0..=full_cycles(duration)`.
pub fn mcss_edges<T: Real>(duration: Picos, clock: &ClockSpec<T>) -> Vec<Picos> {
    let period = clock.period().0;
    (0..=clock.full_cycles(duration)).map(|k| Picos(k * period)).collect()
}

/// Key bits to drive voltages: bit 0 -> 0 V, bit 1 -> `v_pi`.
pub fn fpga_schedule<T: Real>(key_bits: &[u8], v_pi: T) -> Result<VoltageSchedule<T>> {
    if key_bits.is_empty() {
        return Err(Error::invalid("key_bits", "key must not be empty"));
    }
    if !(v_pi > T::zero()) {
        return Err(Error::invalid("v_pi", format!("must be > 0, got {v_pi}")));
    }
    let entries = key_bits
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(ScheduledVoltage {
                cycle: i as u64,
                voltage: T::zero(),
            }),
            1 => Ok(ScheduledVoltage {
                cycle: i as u64,
                voltage: v_pi,
            }),
            other => Err(Error::invalid("key_bits", format!("bit {i} is {other}, not 0/1"))),
        })
        .collect::<Result<_>>()?;
    Ok(VoltageSchedule { v_pi, entries })
}

/// Histogram a single-channel, time-ordered event stream into contiguous bins.
///
/// With `span = Some(s)` the output covers `[0, s)` (`ceil(s / width)` bins) and
/// every event must fall inside it. Without a span the output runs up to the
/// bin holding the last event; an empty stream gives no bins.
pub fn ttu_bin(events: &[TagEvent], bin_width: Picos, span: Option<Picos>) -> Result<Vec<CountSample>> {
    if bin_width.0 == 0 {
        return Err(Error::invalid("bin_width", "must be > 0"));
    }
    if let Some(first) = events.first() {
        for pair in events.windows(2) {
            if pair[1].channel != first.channel {
                return Err(Error::ContractViolation(format!(
                    "mixed channels in one stream: {} and {}",
                    first.channel.name(),
                    pair[1].channel.name()
                )));
            }
            if pair[1].timestamp < pair[0].timestamp {
                return Err(Error::ContractViolation(format!(
                    "events out of order: {} after {}",
                    pair[1].timestamp, pair[0].timestamp
                )));
            }
        }
    }

    let w = bin_width.0;
    let n_bins = match (span, events.last()) {
        (Some(s), last) => {
            if let Some(last) = last {
                if last.timestamp >= s {
                    return Err(Error::ContractViolation(format!(
                        "event at {} lies outside the span {}",
                        last.timestamp, s
                    )));
                }
            }
            s.0.div_ceil(w)
        }
        (None, Some(last)) => last.timestamp.0 / w + 1,
        (None, None) => 0,
    };

    let mut bins: Vec<CountSample> = (0..n_bins)
        .map(|b| CountSample {
            bin_start: Picos(b * w),
            counts: 0,
            bin_width,
        })
        .collect();
    for e in events {
        bins[(e.timestamp.0 / w) as usize].counts += 1;
    }
    Ok(bins)
}

/// Result of gating for one MCSS cycle; `sample` is `None` when the tagger
/// stream did not cover the selected bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatedSample {
    pub cycle: u64,
    pub sample: Option<CountSample>,
}

/// Keep one bin per full MCSS cycle: the bin containing `edge + sample_offset`.
///
/// `samples` must be sorted by start time and share one bin width; gaps are
/// allowed and show up as `sample: None`.
pub fn gate_by_mcss(samples: &[CountSample], edges: &[Picos], sample_offset: Picos) -> Vec<GatedSample> {
    let full_cycles = edges.len().saturating_sub(1);
    let width = samples.first().map(|s| s.bin_width.0);
    (0..full_cycles)
        .map(|k| {
            let sample = width.and_then(|w| {
                let target_start = (edges[k].0 + sample_offset.0) / w * w;
                samples
                    .binary_search_by_key(&target_start, |s| s.bin_start.0)
                    .ok()
                    .map(|i| samples[i])
            });
            GatedSample {
                cycle: k as u64,
                sample,
            }
        })
        .collect()
}

/// Merge per-channel streams into one, ordered by timestamp with ties broken
/// by channel order. Each input must already be time-ordered.
pub fn merge_streams(streams: &[Vec<TagEvent>]) -> Vec<TagEvent> {
    let mut merged: Vec<TagEvent> = streams.iter().flatten().copied().collect();
    // Stable sort keeps intra-channel order for equal timestamps.
    merged.sort_by_key(|e| (e.timestamp, e.channel));
    merged
}

/// Events of one channel, in stream order.
pub fn channel_events(stream: &[TagEvent], channel: TagChannel) -> Vec<TagEvent> {
    stream.iter().filter(|e| e.channel == channel).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: u64 = Picos::PER_SECOND;

    fn clock(f: f64) -> ClockSpec<f64> {
        ClockSpec {
            frequency_hz: f,
            ..ClockSpec::default()
        }
    }

    #[test]
    fn edges_examples() {
        let c = clock(10.0);
        assert_eq!(c.full_cycles(Picos(300 * S)), 3000);
        assert_eq!(mcss_edges(Picos(300 * S), &c).len(), 3001);
        let one = mcss_edges(Picos(S), &c);
        let want: Vec<Picos> = (0..=10).map(|k| Picos(k * S / 10)).collect();
        assert_eq!(one, want);
        assert_eq!(c.full_cycles(Picos::from_secs(0.05)), 0);
        assert_eq!(mcss_edges(Picos::from_secs(0.05), &c), vec![Picos(0)]);
    }

    #[test]
    fn clock_level_is_square_wave() {
        let c = clock(10.0);
        assert_eq!(c.level_at(Picos::from_secs(0.0)), 0.0);
        assert_eq!(c.level_at(Picos::from_secs(0.049)), 0.0);
        assert_eq!(c.level_at(Picos::from_secs(0.05)), 4.0);
        assert_eq!(c.level_at(Picos::from_secs(0.099)), 4.0);
        assert_eq!(c.level_at(Picos::from_secs(0.1)), 0.0);
    }

    #[test]
    fn clock_validation() {
        assert!(clock(10.0).validate().is_ok());
        assert!(clock(0.0).validate().is_err());
        assert!(clock(-1.0).validate().is_err());
        let bad = ClockSpec {
            duty: 1.0,
            ..clock(10.0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = fpga_schedule(&[0, 1, 1, 0], 4.0f64).unwrap();
        let v: Vec<f64> = s.entries.iter().map(|e| e.voltage).collect();
        assert_eq!(v, vec![0.0, 4.0, 4.0, 0.0]);
        let zeros = fpga_schedule(&[0; 16], 4.0f64).unwrap();
        assert!(zeros.entries.iter().all(|e| e.voltage == 0.0));
        assert_eq!(fpga_schedule(&vec![1; 3000], 4.0f64).unwrap().len(), 3000);
        assert!(fpga_schedule::<f64>(&[], 4.0).is_err());
        assert!(fpga_schedule(&[2], 4.0f64).is_err());
    }

    #[test]
    fn binning_examples() {
        let w = DEFAULT_BIN_WIDTH;
        let events: Vec<TagEvent> = (0..200)
            .map(|i| TagEvent::new(TagChannel::HDetector, Picos(i * w.0 / 200)))
            .collect();
        let bins = ttu_bin(&events, w, None).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].counts, 200);

        assert!(ttu_bin(&[], w, None).unwrap().is_empty());
        let zeros = ttu_bin(&[], w, Some(Picos(S))).unwrap();
        assert_eq!(zeros.len(), 100);
        assert!(zeros.iter().all(|b| b.counts == 0));
    }

    #[test]
    fn binning_exact_boundaries() {
        let w = DEFAULT_BIN_WIDTH;
        let events = [
            TagEvent::new(TagChannel::HDetector, Picos(w.0 - 1)),
            TagEvent::new(TagChannel::HDetector, Picos(w.0)),
        ];
        let bins = ttu_bin(&events, w, None).unwrap();
        assert_eq!(bins.iter().map(|b| b.counts).collect::<Vec<_>>(), vec![1, 1]);
    }

    #[test]
    fn binning_contract_violations() {
        let w = DEFAULT_BIN_WIDTH;
        let unordered = [
            TagEvent::new(TagChannel::HDetector, Picos(5)),
            TagEvent::new(TagChannel::HDetector, Picos(4)),
        ];
        assert!(matches!(ttu_bin(&unordered, w, None), Err(Error::ContractViolation(_))));
        let mixed = [
            TagEvent::new(TagChannel::HDetector, Picos(1)),
            TagEvent::new(TagChannel::Mcss, Picos(2)),
        ];
        assert!(ttu_bin(&mixed, w, None).is_err());
        let outside = [TagEvent::new(TagChannel::HDetector, Picos(S))];
        assert!(ttu_bin(&outside, w, Some(Picos(S))).is_err());
        assert!(ttu_bin(&[], Picos(0), None).is_err());
    }

    #[test]
    fn gating_examples() {
        let c = clock(10.0);
        let w = DEFAULT_BIN_WIDTH;
        let offset = Picos::from_secs(0.025);
        let bins = ttu_bin(&[], w, Some(Picos(300 * S))).unwrap();
        assert_eq!(bins.len(), 30_000);
        let gated = gate_by_mcss(&bins, &mcss_edges(Picos(300 * S), &c), offset);
        assert_eq!(gated.len(), 3000);
        assert!(gated.iter().all(|g| g.sample.is_some()));
        // The retained bin is [0.02, 0.03) within each cycle.
        assert_eq!(gated[7].sample.unwrap().bin_start, Picos::from_secs(0.72));

        let span = Picos::from_secs(0.9);
        let bins = ttu_bin(&[], w, Some(span)).unwrap();
        assert_eq!(gate_by_mcss(&bins, &mcss_edges(span, &c), offset).len(), 9);

        let span = Picos::from_secs(0.1);
        let bins = ttu_bin(&[], w, Some(span)).unwrap();
        assert_eq!(gate_by_mcss(&bins, &mcss_edges(span, &c), offset).len(), 1);
    }

    #[test]
    fn gating_marks_missing_coverage() {
        let c = clock(10.0);
        let w = DEFAULT_BIN_WIDTH;
        let span = Picos(S);
        let mut bins = ttu_bin(&[], w, Some(span)).unwrap();
        // Drop the retained bin of cycle 3.
        bins.retain(|b| b.bin_start != Picos::from_secs(0.32));
        let gated = gate_by_mcss(&bins, &mcss_edges(span, &c), Picos::from_secs(0.025));
        assert_eq!(gated.len(), 10);
        assert!(gated[3].sample.is_none());
        assert_eq!(gated.iter().filter(|g| g.sample.is_none()).count(), 1);
        assert!(gate_by_mcss(&[], &mcss_edges(span, &c), Picos(0))
            .iter()
            .all(|g| g.sample.is_none()));
    }

    #[test]
    fn merge_orders_ties_by_channel() {
        let a = vec![TagEvent::new(TagChannel::FpgaSync, Picos(10))];
        let b = vec![
            TagEvent::new(TagChannel::HDetector, Picos(10)),
            TagEvent::new(TagChannel::HDetector, Picos(11)),
        ];
        let c = vec![TagEvent::new(TagChannel::Mcss, Picos(10))];
        let merged = merge_streams(&[a, b, c]);
        let order: Vec<_> = merged.iter().map(|e| (e.timestamp.0, e.channel)).collect();
        assert_eq!(
            order,
            vec![
                (10, TagChannel::HDetector),
                (10, TagChannel::Mcss),
                (10, TagChannel::FpgaSync),
                (11, TagChannel::HDetector)
            ]
        );
        assert_eq!(channel_events(&merged, TagChannel::HDetector).len(), 2);
    }

    proptest! {
        #[test]
        fn binning_conserves_events(mut ts in proptest::collection::vec(0u64..5 * S, 0..500),
                                    width in 1u64..S) {
            ts.sort_unstable();
            let events: Vec<TagEvent> = ts.iter().map(|&t| TagEvent::new(TagChannel::HDetector, Picos(t))).collect();
            let bins = ttu_bin(&events, Picos(width), None).unwrap();
            prop_assert_eq!(bins.iter().map(|b| b.counts).sum::<u64>(), events.len() as u64);
            for (i, b) in bins.iter().enumerate() {
                prop_assert_eq!(b.bin_start.0, i as u64 * width);
            }
        }

        #[test]
        fn gating_cardinality(ms in 1u64..20_000, f in 1u32..=100) {
            let c = clock(f as f64);
            let duration = Picos(ms * 1_000_000_000);
            let bins = ttu_bin(&[], DEFAULT_BIN_WIDTH, Some(duration)).unwrap();
            let gated = gate_by_mcss(&bins, &mcss_edges(duration, &c), Picos(0));
            prop_assert_eq!(gated.len() as u64, ms * f as u64 / 1000);
        }

        #[test]
        fn schedule_round_trip(bits in proptest::collection::vec(0u8..=1, 1..400)) {
            let s = fpga_schedule(&bits, 4.0f64).unwrap();
            prop_assert_eq!(s.to_bits().unwrap(), bits);
        }

        #[test]
        fn gating_is_idempotent(counts in proptest::collection::vec(0u64..300, 100..400)) {
            let c = clock(10.0);
            let w = DEFAULT_BIN_WIDTH;
            let bins: Vec<CountSample> = counts.iter().enumerate()
                .map(|(i, &n)| CountSample { bin_start: Picos(i as u64 * w.0), counts: n, bin_width: w })
                .collect();
            let span = Picos(bins.len() as u64 * w.0);
            let edges = mcss_edges(span, &c);
            let offset = Picos::from_secs(0.025);
            let once = gate_by_mcss(&bins, &edges, offset);
            let kept: Vec<CountSample> = once.iter().filter_map(|g| g.sample).collect();
            prop_assert_eq!(gate_by_mcss(&kept, &edges, offset), once);
        }
    }
}
