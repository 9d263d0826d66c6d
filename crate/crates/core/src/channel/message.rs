//! Line-framed wire format.
//!
//! ```text
//! KIND|session_id|sequence|payload_hex\n
//! ```
//!
//! `session_id` and `sequence` are unsigned decimal. `payload_hex` is the
//! lowercase hex of the payload bytes below (empty for no payload). Integers
//! are big-endian; bit lists are packed MSB-first, padding bits zero.
//!
//! | kind            | payload                                             |
//! |-----------------|-----------------------------------------------------|
//! | `HELLO`, `END`  | none                                                |
//! | `START`         | `u64` cycle count                                   |
//! | `CHUNK_REQUEST` | `u32` n, then n x `u32` key index                   |
//! | `CHUNK_REVEAL`  | `u32` n, then `ceil(n/8)` bytes of packed bits       |
//! | `QBER_REPORT`   | `u32` mismatches, `u32` n, then packed bits          |
//! | `ABORT`         | UTF-8 reason                                        |

use std::fmt;

use super::ChannelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Hello,
    Start,
    ChunkRequest,
    ChunkReveal,
    QberReport,
    End,
    Abort,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Hello,
        MessageKind::Start,
        MessageKind::ChunkRequest,
        MessageKind::ChunkReveal,
        MessageKind::QberReport,
        MessageKind::End,
        MessageKind::Abort,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::Start => "START",
            MessageKind::ChunkRequest => "CHUNK_REQUEST",
            MessageKind::ChunkReveal => "CHUNK_REVEAL",
            MessageKind::QberReport => "QBER_REPORT",
            MessageKind::End => "END",
            MessageKind::Abort => "ABORT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Body {
    Hello,
    Start {
        cycles: u64,
    },
    ChunkRequest {
        indices: Vec<u32>,
    },
    /// Sender's bits at the requested indices, in request order.
    ChunkReveal {
        bits: Vec<u8>,
    },
    /// Mismatch count plus the reporting side's own bits at the compared indices.
    QberReport {
        mismatches: u32,
        bits: Vec<u8>,
    },
    End,
    Abort {
        reason: String,
    },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Hello => MessageKind::Hello,
            Body::Start { .. } => MessageKind::Start,
            Body::ChunkRequest { .. } => MessageKind::ChunkRequest,
            Body::ChunkReveal { .. } => MessageKind::ChunkReveal,
            Body::QberReport { .. } => MessageKind::QberReport,
            Body::End => MessageKind::End,
            Body::Abort { .. } => MessageKind::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub session_id: u64,
    pub sequence: u64,
    pub body: Body,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}

fn pack_bits(bits: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&(bits.len() as u32).to_be_bytes());
    let mut packed = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b != 0 {
            packed[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out.extend_from_slice(&packed);
}

fn payload_bytes(body: &Body) -> Vec<u8> {
    let mut out = Vec::new();
    match body {
        Body::Hello | Body::End => {}
        Body::Start { cycles } => out.extend_from_slice(&cycles.to_be_bytes()),
        Body::ChunkRequest { indices } => {
            out.extend_from_slice(&(indices.len() as u32).to_be_bytes());
            for i in indices {
                out.extend_from_slice(&i.to_be_bytes());
            }
        }
        Body::ChunkReveal { bits } => pack_bits(bits, &mut out),
        Body::QberReport { mismatches, bits } => {
            out.extend_from_slice(&mismatches.to_be_bytes());
            pack_bits(bits, &mut out);
        }
        Body::Abort { reason } => out.extend_from_slice(reason.as_bytes()),
    }
    out
}

/// Serializes `msg` into one newline-terminated frame.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    format!(
        "{}|{}|{}|{}\n",
        msg.kind(),
        msg.session_id,
        msg.sequence,
        hex::encode(payload_bytes(&msg.body))
    )
    .into_bytes()
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ChannelError> {
        if self.bytes.len() < n {
            return Err(ChannelError::Malformed("payload truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ChannelError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ChannelError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bits(&mut self) -> Result<Vec<u8>, ChannelError> {
        let n = self.u32()? as usize;
        let packed = self.take(n.div_ceil(8))?;
        let bits: Vec<u8> = (0..n)
            .map(|i| u8::from(packed[i / 8] & (0x80 >> (i % 8)) != 0))
            .collect();
        if !n.is_multiple_of(8) && packed[n / 8] & (0xff >> (n % 8)) != 0 {
            return Err(ChannelError::Malformed("nonzero padding bits".into()));
        }
        Ok(bits)
    }

    fn finish(self) -> Result<(), ChannelError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(ChannelError::Malformed(format!(
                "{} trailing payload bytes",
                self.bytes.len()
            )))
        }
    }
}

fn parse_decimal(field: &str, what: &str) -> Result<u64, ChannelError> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) || (field.len() > 1 && field.starts_with('0')) {
        return Err(ChannelError::Malformed(format!("bad {what} `{field}`")));
    }
    field
        .parse()
        .map_err(|_| ChannelError::Malformed(format!("{what} `{field}` out of range")))
}

/// Parses one frame. The trailing newline is optional.
pub fn decode_message(frame: &[u8]) -> Result<Message, ChannelError> {
    let text = std::str::from_utf8(frame).map_err(|_| ChannelError::Malformed("frame is not UTF-8".into()))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let fields: Vec<&str> = text.split('|').collect();
    let [kind, session_id, sequence, payload_hex] = fields[..] else {
        return Err(ChannelError::Malformed(format!(
            "expected 4 fields, got {}",
            fields.len()
        )));
    };
    let kind = MessageKind::parse(kind).ok_or_else(|| ChannelError::Malformed(format!("unknown kind `{kind}`")))?;
    let session_id = parse_decimal(session_id, "session id")?;
    let sequence = parse_decimal(sequence, "sequence")?;
    if payload_hex.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(ChannelError::Malformed("payload hex must be lowercase".into()));
    }
    let payload = hex::decode(payload_hex).map_err(|e| ChannelError::Malformed(format!("payload hex: {e}")))?;

    let mut cur = Cursor { bytes: &payload };
    let body = match kind {
        MessageKind::Hello => Body::Hello,
        MessageKind::End => Body::End,
        MessageKind::Start => Body::Start { cycles: cur.u64()? },
        MessageKind::ChunkRequest => {
            let n = cur.u32()? as usize;
            let indices = (0..n).map(|_| cur.u32()).collect::<Result<_, _>>()?;
            Body::ChunkRequest { indices }
        }
        MessageKind::ChunkReveal => Body::ChunkReveal { bits: cur.bits()? },
        MessageKind::QberReport => {
            let mismatches = cur.u32()?;
            Body::QberReport {
                mismatches,
                bits: cur.bits()?,
            }
        }
        MessageKind::Abort => {
            let reason = String::from_utf8(cur.take(payload.len())?.to_vec())
                .map_err(|_| ChannelError::Malformed("abort reason is not UTF-8".into()))?;
            Body::Abort { reason }
        }
    };
    cur.finish()?;
    Ok(Message {
        session_id,
        sequence,
        body,
    })
}
