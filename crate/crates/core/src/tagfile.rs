//! Time-tagger stream files.
//!
//! CSV: header `channel,timestamp_ps`, channel written by name
//! (`H_DETECTOR`, `MCSS`, `FPGA_SYNC`).
//! Binary: 9-byte records, channel code (u8) then timestamp in ps (u64 LE).

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::scalar::Picos;
use crate::timing::{TagChannel, TagEvent};

pub const RECORD_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum TagFileError {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {reason}")]
    Record { line: u64, reason: String },

    #[error("binary file length {0} is not a multiple of {RECORD_LEN}")]
    Truncated(usize),
}

pub fn write_csv<W: Write>(out: W, events: &[TagEvent]) -> Result<(), TagFileError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "timestamp_ps"])?;
    for e in events {
        w.write_record([e.channel.name(), &e.timestamp.0.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TagEvent>, TagFileError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["channel", "timestamp_ps"] {
        return Err(TagFileError::Record {
            line: 1,
            reason: "expected header `channel,timestamp_ps`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| TagFileError::Record { line, reason };
        let channel = TagChannel::from_name(&rec[0]).ok_or_else(|| bad(format!("unknown channel `{}`", &rec[0])))?;
        let ts = rec[1]
            .parse::<u64>()
            .map_err(|e| bad(format!("timestamp `{}`: {e}", &rec[1])))?;
        out.push(TagEvent::new(channel, Picos(ts)));
    }
    Ok(out)
}

pub fn write_binary<W: Write>(mut out: W, events: &[TagEvent]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(events.len() * RECORD_LEN);
    for e in events {
        buf.push(e.channel.code());
        buf.extend_from_slice(&e.timestamp.0.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<TagEvent>, TagFileError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() % RECORD_LEN != 0 {
        return Err(TagFileError::Truncated(buf.len()));
    }
    buf.chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let channel = TagChannel::from_code(rec[0]).ok_or_else(|| TagFileError::Record {
                line: i as u64,
                reason: format!("unknown channel code {}", rec[0]),
            })?;
            let ts = u64::from_le_bytes(rec[1..].try_into().expect("8 bytes"));
            Ok(TagEvent::new(channel, Picos(ts)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<TagEvent> {
        vec![
            TagEvent::new(TagChannel::Mcss, Picos(0)),
            TagEvent::new(TagChannel::FpgaSync, Picos(0)),
            TagEvent::new(TagChannel::HDetector, Picos(12_345)),
            TagEvent::new(TagChannel::HDetector, Picos(u64::MAX)),
        ]
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample()[..3]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "channel,timestamp_ps\nMCSS,0\nFPGA_SYNC,0\nH_DETECTOR,12345\n"
        );
    }

    #[test]
    fn binary_layout() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &sample()[2..3]).unwrap();
        assert_eq!(buf, [0, 0x39, 0x30, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_csv("channel,timestamp_ps\nLASER,5\n".as_bytes()).is_err());
        assert!(read_csv("channel,timestamp_ps\nMCSS,-5\n".as_bytes()).is_err());
        assert!(read_csv("chan,ts\nMCSS,5\n".as_bytes()).is_err());
        assert!(matches!(read_binary(&[0u8; 10][..]), Err(TagFileError::Truncated(10))));
        assert!(read_binary(&[7u8, 0, 0, 0, 0, 0, 0, 0, 0][..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trips(raw in proptest::collection::vec((0u8..3, any::<u64>()), 0..200)) {
            let events: Vec<TagEvent> = raw
                .iter()
                .map(|&(c, t)| TagEvent::new(TagChannel::from_code(c).unwrap(), Picos(t)))
                .collect();
            let mut csv_buf = Vec::new();
            write_csv(&mut csv_buf, &events).unwrap();
            prop_assert_eq!(read_csv(&csv_buf[..]).unwrap(), events.clone());
            let mut bin = Vec::new();
            write_binary(&mut bin, &events).unwrap();
            prop_assert_eq!(bin.len(), events.len() * RECORD_LEN);
            prop_assert_eq!(read_binary(&bin[..]).unwrap(), events);
        }
    }
}
