//! CSV and summary writers. Floats use Rust's shortest round-trip formatting,
//! so the same numbers always produce the same bytes.

use std::io::{self, Write};

use crate::protocol::{CycleRecord, QberPoint, SessionReport};
use crate::scalar::Real;

pub const CYCLE_HEADER: [&str; 6] = ["cycle", "voltage_v", "theta_rad", "count", "decision", "alice_bit"];
pub const QBER_HEADER: [&str; 3] = ["time_s", "qber_cumulative", "qber_windowed"];

fn opt<V: ToString>(v: Option<V>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes rows of pre-formatted fields under `header`.
pub fn write_csv<W: Write, I, R>(out: W, header: &[&str], rows: I) -> io::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

pub fn write_cycle_log<W: Write, T: Real>(out: W, records: &[CycleRecord<T>]) -> io::Result<()> {
    write_csv(
        out,
        &CYCLE_HEADER,
        records.iter().map(|r| {
            [
                r.cycle.to_string(),
                r.voltage.to_string(),
                r.theta.to_string(),
                opt(r.count),
                r.decision.as_str().to_string(),
                r.alice_bit.to_string(),
            ]
        }),
    )
}

/// QBER time series; undefined values are empty fields.
pub fn write_qber_series<W: Write, T: Real>(out: W, points: &[QberPoint<T>]) -> io::Result<()> {
    write_csv(
        out,
        &QBER_HEADER,
        points
            .iter()
            .map(|p| [p.time_s.to_string(), opt(p.cumulative), opt(p.windowed)]),
    )
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Parses text written by [`Summary::write`].
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Summary { entries }
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Headline numbers for a key-distribution session.
pub fn session_summary<T: Real>(report: &SessionReport<T>) -> Summary {
    let mut s = Summary::new();
    let (usable, _) = report.usable_key();
    let final_qber = report.final_qber;
    s.push("cycles", report.cycles())
        .push("bits_delivered", report.bob_key.len())
        .push("erasures", report.erasures())
        .push("key_errors", report.key_errors())
        .push("revealed", report.revealed.len())
        .push("compared", final_qber.map_or(0, |q| q.compared))
        .push("mismatches", final_qber.map_or(0, |q| q.mismatches))
        .push("final_qber", opt(final_qber.map(|q| q.value())))
        .push("usable_key_bits", usable.len())
        .push("t_signal", report.thresholds.t_signal)
        .push("t_hv", report.thresholds.t_hv);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Decision;

    #[test]
    fn cycle_log_format() {
        let rec = CycleRecord {
            cycle: 2,
            voltage: 4.0_f64,
            theta: 0.0,
            count: Some(77),
            decision: Decision::V,
            alice_bit: 1,
        };
        let erased = CycleRecord {
            count: None,
            decision: Decision::Erasure,
            ..rec
        };
        let mut buf = Vec::new();
        write_cycle_log(&mut buf, &[rec, erased]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "cycle,voltage_v,theta_rad,count,decision,alice_bit\n2,4,0,77,V,1\n2,4,0,,ERASURE,1\n"
        );
    }

    #[test]
    fn qber_series_undefined_is_empty() {
        let pts = [
            QberPoint {
                time_s: 0.1_f64,
                cumulative: None,
                windowed: None,
            },
            QberPoint {
                time_s: 1.1,
                cumulative: Some(0.0),
                windowed: Some(0.25),
            },
        ];
        let mut buf = Vec::new();
        write_qber_series(&mut buf, &pts).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time_s,qber_cumulative,qber_windowed\n0.1,,\n1.1,0,0.25\n"
        );
    }

    #[test]
    fn summary_round_trip() {
        let mut s = Summary::new();
        s.push("cycles", 3000).push("final_qber", "");
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(buf, b"cycles=3000\nfinal_qber=\n");
        assert_eq!(Summary::parse(std::str::from_utf8(&buf).unwrap()), s);
        assert_eq!(s.get("cycles"), Some("3000"));
    }
}
