use std::time::Duration;

use super::message::{decode_message, encode_message, Body, Message, MessageKind};
use super::transport::{RecvError, Transport};
use super::ChannelError;
use crate::protocol::{Decision, QberEstimate};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndpointState {
    Idle,
    Running,
    Ended,
    Aborted(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// One side of the classical channel.
///
/// Bob drives the exchange: he opens with `HELLO`, requests chunks and closes
/// with `END`. Alice answers. Any local failure sends a best-effort `ABORT`
/// before the endpoint moves to [`EndpointState::Aborted`].
#[derive(Debug)]
pub struct Endpoint<Tr> {
    role: Role,
    session_id: u64,
    transport: Tr,
    state: EndpointState,
    timeout: Duration,
    next_send: u64,
    next_recv: u64,
    /// Own key; `None` marks a receiver erasure.
    bits: Vec<Option<u8>>,
    revealed: Vec<bool>,
    total: QberEstimate,
    transcript: Vec<(Direction, Message)>,
}

impl<Tr: Transport> Endpoint<Tr> {
    pub fn alice(transport: Tr, session_id: u64, key: &[u8]) -> Self {
        Self::new(
            Role::Alice,
            transport,
            session_id,
            key.iter().map(|&b| Some(b)).collect(),
        )
    }

    pub fn bob(transport: Tr, session_id: u64, decisions: &[Decision]) -> Self {
        Self::new(
            Role::Bob,
            transport,
            session_id,
            decisions.iter().map(|d| d.bit()).collect(),
        )
    }

    fn new(role: Role, transport: Tr, session_id: u64, bits: Vec<Option<u8>>) -> Self {
        Endpoint {
            role,
            session_id,
            transport,
            state: EndpointState::Idle,
            timeout: DEFAULT_TIMEOUT,
            next_send: 0,
            next_recv: 0,
            revealed: vec![false; bits.len()],
            bits,
            total: QberEstimate::default(),
            transcript: Vec::new(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> &EndpointState {
        &self.state
    }

    /// Every frame sent and received, in order.
    pub fn transcript(&self) -> &[(Direction, Message)] {
        &self.transcript
    }

    /// Totals over all completed rounds.
    pub fn total(&self) -> QberEstimate {
        self.total
    }

    /// Positions disclosed so far; unusable for the final key.
    pub fn revealed(&self) -> &[bool] {
        &self.revealed
    }

    fn send(&mut self, body: Body) -> Result<(), ChannelError> {
        let msg = Message {
            session_id: self.session_id,
            sequence: self.next_send,
            body,
        };
        self.next_send += 1;
        self.transport.send_frame(&encode_message(&msg))?;
        self.transcript.push((Direction::Sent, msg));
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, ChannelError> {
        let frame = self.transport.recv_frame(self.timeout).map_err(|e| match e {
            RecvError::Timeout => ChannelError::Timeout(self.timeout),
            RecvError::Closed => ChannelError::Closed,
            RecvError::TooLong => ChannelError::Malformed("frame too long".into()),
            RecvError::Io(e) => ChannelError::Io(e.to_string()),
        })?;
        let msg = decode_message(&frame)?;
        if msg.session_id != self.session_id {
            return Err(ChannelError::SessionMismatch {
                expected: self.session_id,
                got: msg.session_id,
            });
        }
        if msg.sequence != self.next_recv {
            return Err(ChannelError::SequenceGap {
                expected: self.next_recv,
                got: msg.sequence,
            });
        }
        self.next_recv += 1;
        self.transcript.push((Direction::Received, msg.clone()));
        if let Body::Abort { reason } = &msg.body {
            return Err(ChannelError::RemoteAbort(reason.clone()));
        }
        Ok(msg)
    }

    fn expect(&mut self, kind: MessageKind) -> Result<Body, ChannelError> {
        let msg = self.recv()?;
        if msg.kind() != kind {
            return Err(ChannelError::Unexpected {
                expected: kind,
                got: msg.kind(),
            });
        }
        Ok(msg.body)
    }

    /// Runs `f`; on failure notifies the peer and records the abort.
    fn guarded<R>(&mut self, f: impl FnOnce(&mut Self) -> Result<R, ChannelError>) -> Result<R, ChannelError> {
        if let EndpointState::Aborted(reason) = &self.state {
            return Err(ChannelError::Aborted(reason.clone()));
        }
        match f(self) {
            Ok(r) => Ok(r),
            Err(e) => {
                if !matches!(e, ChannelError::RemoteAbort(_) | ChannelError::Closed) {
                    let _ = self.send(Body::Abort { reason: e.to_string() });
                }
                self.state = EndpointState::Aborted(e.to_string());
                Err(e)
            }
        }
    }

    fn require_running(&self) -> Result<(), ChannelError> {
        if self.state != EndpointState::Running {
            return Err(ChannelError::Protocol(format!(
                "endpoint is {:?}, not running",
                self.state
            )));
        }
        Ok(())
    }

    /// `HELLO` both ways, then Alice announces the cycle count with `START`.
    pub fn handshake(&mut self) -> Result<(), ChannelError> {
        self.guarded(|ep| {
            if ep.state != EndpointState::Idle {
                return Err(ChannelError::Protocol("handshake on a started endpoint".into()));
            }
            let cycles = ep.bits.len() as u64;
            match ep.role {
                Role::Bob => {
                    ep.send(Body::Hello)?;
                    ep.expect(MessageKind::Hello)?;
                    let Body::Start { cycles: theirs } = ep.expect(MessageKind::Start)? else {
                        unreachable!("kind checked")
                    };
                    if theirs != cycles {
                        return Err(ChannelError::Protocol(format!(
                            "sender announced {theirs} cycles, receiver holds {cycles}"
                        )));
                    }
                }
                Role::Alice => {
                    ep.expect(MessageKind::Hello)?;
                    ep.send(Body::Hello)?;
                    ep.send(Body::Start { cycles })?;
                }
            }
            ep.state = EndpointState::Running;
            Ok(())
        })
    }

    /// Bob's half of one round. Indices where Bob holds an erasure are not
    /// requested. Returns the agreed result for this round.
    pub fn request_round(&mut self, indices: &[usize]) -> Result<QberEstimate, ChannelError> {
        self.guarded(|ep| {
            ep.require_running()?;
            if ep.role != Role::Bob {
                return Err(ChannelError::Protocol("only the receiver requests chunks".into()));
            }
            let mut round = QberEstimate::default();
            let mut wanted = Vec::new();
            for &i in indices {
                match ep.bits.get(i) {
                    None => return Err(ChannelError::Protocol(format!("index {i} beyond the key"))),
                    Some(None) => round.skipped_erasures += 1,
                    Some(Some(_)) => wanted.push(i),
                }
            }
            let wire: Vec<u32> = wanted
                .iter()
                .map(|&i| u32::try_from(i).map_err(|_| ChannelError::Protocol(format!("index {i} too large"))))
                .collect::<Result<_, _>>()?;
            ep.send(Body::ChunkRequest { indices: wire })?;

            let Body::ChunkReveal { bits: theirs } = ep.expect(MessageKind::ChunkReveal)? else {
                unreachable!("kind checked")
            };
            if theirs.len() != wanted.len() {
                return Err(ChannelError::Protocol(format!(
                    "reveal carries {} bits for {} requested indices",
                    theirs.len(),
                    wanted.len()
                )));
            }
            let mine: Vec<u8> = wanted.iter().map(|&i| ep.bits[i].expect("erasures filtered")).collect();
            let mismatches = mine.iter().zip(&theirs).filter(|(a, b)| a != b).count() as u32;
            for &i in &wanted {
                ep.revealed[i] = true;
            }
            ep.send(Body::QberReport { mismatches, bits: mine })?;

            let Body::QberReport { mismatches: ack, .. } = ep.expect(MessageKind::QberReport)? else {
                unreachable!("kind checked")
            };
            if ack != mismatches {
                return Err(ChannelError::Protocol(format!(
                    "peer counted {ack} mismatches, receiver counted {mismatches}"
                )));
            }
            round.mismatches = u64::from(mismatches);
            round.compared = wanted.len() as u64;
            ep.total = ep.total.merge(round);
            Ok(round)
        })
    }

    /// Alice's half of one round, or `None` once Bob closes with `END`.
    pub fn serve_round(&mut self) -> Result<Option<QberEstimate>, ChannelError> {
        self.guarded(|ep| {
            ep.require_running()?;
            if ep.role != Role::Alice {
                return Err(ChannelError::Protocol("only the sender serves chunks".into()));
            }
            let msg = ep.recv()?;
            let indices = match msg.body {
                Body::ChunkRequest { indices } => indices,
                Body::End => {
                    ep.send(Body::End)?;
                    ep.state = EndpointState::Ended;
                    return Ok(None);
                }
                other => {
                    return Err(ChannelError::Unexpected {
                        expected: MessageKind::ChunkRequest,
                        got: other.kind(),
                    })
                }
            };
            let mine = indices
                .iter()
                .map(|&i| {
                    ep.bits
                        .get(i as usize)
                        .copied()
                        .flatten()
                        .ok_or_else(|| ChannelError::Protocol(format!("requested index {i} beyond the key")))
                })
                .collect::<Result<Vec<u8>, _>>()?;
            for &i in &indices {
                ep.revealed[i as usize] = true;
            }
            ep.send(Body::ChunkReveal { bits: mine.clone() })?;

            let Body::QberReport {
                mismatches: claimed,
                bits: theirs,
            } = ep.expect(MessageKind::QberReport)?
            else {
                unreachable!("kind checked")
            };
            if theirs.len() != mine.len() {
                return Err(ChannelError::Protocol(format!(
                    "report carries {} bits for {} revealed",
                    theirs.len(),
                    mine.len()
                )));
            }
            let mismatches = mine.iter().zip(&theirs).filter(|(a, b)| a != b).count() as u32;
            if mismatches != claimed {
                return Err(ChannelError::Protocol(format!(
                    "receiver claimed {claimed} mismatches, sender counts {mismatches}"
                )));
            }
            ep.send(Body::QberReport { mismatches, bits: mine })?;
            let round = QberEstimate {
                mismatches: u64::from(mismatches),
                compared: indices.len() as u64,
                skipped_erasures: 0,
            };
            ep.total = ep.total.merge(round);
            Ok(Some(round))
        })
    }

    /// Bob closes the session; Alice's matching `END` completes it.
    pub fn close(&mut self) -> Result<(), ChannelError> {
        self.guarded(|ep| {
            ep.require_running()?;
            if ep.role != Role::Bob {
                return Err(ChannelError::Protocol("the receiver closes the session".into()));
            }
            ep.send(Body::End)?;
            ep.expect(MessageKind::End)?;
            ep.state = EndpointState::Ended;
            Ok(())
        })
    }
}

/// Alice's whole session: handshake, answer rounds until `END`.
pub fn run_alice<Tr: Transport>(ep: &mut Endpoint<Tr>) -> Result<QberEstimate, ChannelError> {
    ep.handshake()?;
    while ep.serve_round()?.is_some() {}
    Ok(ep.total())
}

/// Bob's whole session: handshake, one round per `chunk` revealed indices, close.
pub fn run_bob<Tr: Transport>(
    ep: &mut Endpoint<Tr>,
    revealed: &[usize],
    chunk: usize,
) -> Result<QberEstimate, ChannelError> {
    ep.handshake()?;
    for part in revealed.chunks(chunk.max(1)) {
        ep.request_round(part)?;
    }
    ep.close()?;
    Ok(ep.total())
}
