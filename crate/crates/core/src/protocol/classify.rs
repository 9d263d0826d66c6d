use std::fmt;

use crate::devices::DetectorSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::timing::{CountSample, GatedSample};

/// Count thresholds separating the dark, V and H levels of one gated bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassifierThresholds {
    /// Counts at or above this are signal; below is an erasure.
    pub t_signal: u64,
    /// Counts at or above this are H; signal below it is V.
    pub t_hv: u64,
}

impl ClassifierThresholds {
    pub fn new(t_signal: u64, t_hv: u64) -> Result<Self> {
        let t = ClassifierThresholds { t_signal, t_hv };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_signal >= self.t_hv {
            return Err(Error::invalid(
                "thresholds.t_signal",
                format!("must be below t_hv ({}), got {}", self.t_hv, self.t_signal),
            ));
        }
        Ok(())
    }
}

/// Per-cycle decision. H carries bit 0, V carries bit 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    H,
    V,
    Erasure,
}

impl Decision {
    pub fn bit(self) -> Option<u8> {
        match self {
            Decision::H => Some(0),
            Decision::V => Some(1),
            Decision::Erasure => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::H => "H",
            Decision::V => "V",
            Decision::Erasure => "ERASURE",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassifiedBit {
    pub cycle_index: u64,
    pub decision: Decision,
    /// `None` when the tagger stream had no bin for this cycle.
    pub raw_count: Option<u64>,
}

fn round_half_up<T: Real>(x: T) -> u64 {
    (x + T::lit(0.5)).floor().to_u64().unwrap_or(u64::MAX)
}

/// Thresholds at the midpoints between adjacent count plateaus.
pub fn calibrate_thresholds<T: Real>(detector: &DetectorSpec<T>, bin_width_s: T) -> Result<ClassifierThresholds> {
    detector.validate()?;
    if !(bin_width_s > T::zero()) {
        return Err(Error::invalid("bin_width_s", "must be > 0"));
    }
    let two = T::lit(2.0);
    let t_signal = round_half_up((detector.dark_rate + detector.leak_rate_v) / two * bin_width_s);
    let t_hv = round_half_up((detector.leak_rate_v + detector.signal_rate_h) / two * bin_width_s);
    ClassifierThresholds::new(t_signal, t_hv).map_err(|_| {
        Error::invalid(
            "detector",
            format!("plateaus too close to separate at a {bin_width_s} s bin"),
        )
    })
}

pub fn classify_count(count: u64, thresholds: &ClassifierThresholds) -> Decision {
    if count >= thresholds.t_hv {
        Decision::H
    } else if count >= thresholds.t_signal {
        Decision::V
    } else {
        Decision::Erasure
    }
}

pub fn classify(cycle_index: u64, sample: &CountSample, thresholds: &ClassifierThresholds) -> ClassifiedBit {
    ClassifiedBit {
        cycle_index,
        decision: classify_count(sample.counts, thresholds),
        raw_count: Some(sample.counts),
    }
}

/// Classify gated samples; missing samples become erasures.
pub fn classify_gated(gated: &[GatedSample], thresholds: &ClassifierThresholds) -> Vec<ClassifiedBit> {
    gated
        .iter()
        .map(|g| match &g.sample {
            Some(s) => classify(g.cycle, s, thresholds),
            None => ClassifiedBit {
                cycle_index: g.cycle,
                decision: Decision::Erasure,
                raw_count: None,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Picos;
    use proptest::prelude::*;

    fn defaults() -> ClassifierThresholds {
        calibrate_thresholds(&DetectorSpec::<f64>::default(), 0.01).unwrap()
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(
            defaults(),
            ClassifierThresholds {
                t_signal: 50,
                t_hv: 138
            }
        );
        let sym = DetectorSpec {
            signal_rate_h: 100.0,
            leak_rate_v: 50.0,
            dark_rate: 0.0,
        };
        assert_eq!(
            calibrate_thresholds(&sym, 1.0).unwrap(),
            ClassifierThresholds { t_signal: 25, t_hv: 75 }
        );
        let degenerate = DetectorSpec {
            leak_rate_v: 2.5e3,
            ..DetectorSpec::default()
        };
        assert!(calibrate_thresholds(&degenerate, 0.01).is_err());
        assert!(ClassifierThresholds::new(10, 10).is_err());
    }

    #[test]
    fn classify_examples() {
        let t = defaults();
        let s = |counts| CountSample {
            bin_start: Picos(0),
            counts,
            bin_width: Picos(10_000_000_000),
        };
        assert_eq!(classify(0, &s(200), &t).decision, Decision::H);
        assert_eq!(classify(0, &s(75), &t).decision, Decision::V);
        assert_eq!(classify(0, &s(25), &t).decision, Decision::Erasure);
        assert_eq!(classify_count(138, &t), Decision::H);
        assert_eq!(classify_count(137, &t), Decision::V);
        assert_eq!(classify_count(50, &t), Decision::V);
        assert_eq!(classify_count(49, &t), Decision::Erasure);
        let missing = classify_gated(&[GatedSample { cycle: 4, sample: None }], &t);
        assert_eq!(missing[0].decision, Decision::Erasure);
        assert_eq!(missing[0].raw_count, None);
    }

    proptest! {
        #[test]
        fn classification_is_total(count in any::<u64>(), a in 0u64..1000, gap in 1u64..1000) {
            let t = ClassifierThresholds::new(a, a + gap).unwrap();
            let d = classify_count(count, &t);
            let expected = if count >= t.t_hv { Decision::H }
                else if count >= t.t_signal { Decision::V }
                else { Decision::Erasure };
            prop_assert_eq!(d, expected);
        }
    }
}
