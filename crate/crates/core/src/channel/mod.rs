//! Classical channel used to reveal key chunks for QBER estimation.
//!
//! The channel is assumed authentic; there is no MAC or encryption. Frames
//! are text lines (see [`message`]) carried over an in-process pipe or TCP.

pub mod endpoint;
pub mod message;
pub mod transport;

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use thiserror::Error;

pub use endpoint::{run_alice, run_bob, Direction, Endpoint, EndpointState, Role, DEFAULT_TIMEOUT};
pub use message::{decode_message, encode_message, Body, Message, MessageKind};
pub use transport::{memory_pair, DropNth, MemoryTransport, RecvError, TcpTransport, Transport};

use crate::protocol::{Decision, QberEstimate};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("malformed frame: {0}")]
    Malformed(String),

    #[error("sequence gap: expected {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },

    #[error("session id mismatch: expected {expected}, got {got}")]
    SessionMismatch { expected: u64, got: u64 },

    #[error("expected {expected}, got {got}")]
    Unexpected { expected: MessageKind, got: MessageKind },

    #[error("timed out after {0:?}")]
    Timeout(Duration),

    #[error("peer closed the connection")]
    Closed,

    #[error("I/O error: {0}")]
    Io(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("peer aborted: {0}")]
    RemoteAbort(String),

    #[error("endpoint already aborted: {0}")]
    Aborted(String),
}

impl From<std::io::Error> for ChannelError {
    fn from(e: std::io::Error) -> Self {
        ChannelError::Io(e.to_string())
    }
}

/// Outcome seen by one endpoint after a full exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub total: QberEstimate,
    pub transcript: Vec<(Direction, Message)>,
    pub revealed: Vec<bool>,
}

impl ExchangeOutcome {
    fn from_endpoint<Tr: Transport>(ep: &Endpoint<Tr>, total: QberEstimate) -> Self {
        ExchangeOutcome {
            total,
            transcript: ep.transcript().to_vec(),
            revealed: ep.revealed().to_vec(),
        }
    }
}

/// Single QBER round between two in-process endpoints that are already
/// running. Returns each side's view of the round.
pub fn exchange_qber_round<A, B>(
    alice: &mut Endpoint<A>,
    bob: &mut Endpoint<B>,
    indices: &[usize],
) -> (
    Result<Option<QberEstimate>, ChannelError>,
    Result<QberEstimate, ChannelError>,
)
where
    A: Transport + Send,
    B: Transport + Send,
{
    thread::scope(|s| {
        let a = s.spawn(|| alice.serve_round());
        let b = bob.request_round(indices);
        (a.join().expect("alice thread panicked"), b)
    })
}

/// Full exchange over an in-process pipe.
pub fn exchange_in_memory(
    session_id: u64,
    alice_key: &[u8],
    bob_key: &[Decision],
    revealed: &[usize],
    chunk: usize,
) -> (
    Result<ExchangeOutcome, ChannelError>,
    Result<ExchangeOutcome, ChannelError>,
) {
    let (ta, tb) = memory_pair();
    let mut alice = Endpoint::alice(ta, session_id, alice_key);
    let mut bob = Endpoint::bob(tb, session_id, bob_key);
    thread::scope(|s| {
        let a = s.spawn(|| run_alice(&mut alice).map(|t| ExchangeOutcome::from_endpoint(&alice, t)));
        let b = run_bob(&mut bob, revealed, chunk).map(|t| ExchangeOutcome::from_endpoint(&bob, t));
        (a.join().expect("alice thread panicked"), b)
    })
}

/// Alice side over TCP: accept one connection on `listener` and serve it.
pub fn serve_alice_tcp(
    listener: &TcpListener,
    session_id: u64,
    alice_key: &[u8],
    timeout: Duration,
) -> Result<ExchangeOutcome, ChannelError> {
    let (stream, _) = listener.accept()?;
    let mut ep = Endpoint::alice(TcpTransport::new(stream)?, session_id, alice_key).with_timeout(timeout);
    let total = run_alice(&mut ep)?;
    Ok(ExchangeOutcome::from_endpoint(&ep, total))
}

/// Bob side over TCP, retrying the connection until `timeout` elapses.
pub fn connect_bob_tcp(
    addr: impl ToSocketAddrs + Clone,
    session_id: u64,
    bob_key: &[Decision],
    revealed: &[usize],
    chunk: usize,
    timeout: Duration,
) -> Result<ExchangeOutcome, ChannelError> {
    let deadline = std::time::Instant::now() + timeout;
    let stream = loop {
        match TcpStream::connect(addr.clone()) {
            Ok(s) => break s,
            Err(e) if std::time::Instant::now() >= deadline => return Err(e.into()),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    };
    let mut ep = Endpoint::bob(TcpTransport::new(stream)?, session_id, bob_key).with_timeout(timeout);
    let total = run_bob(&mut ep, revealed, chunk)?;
    Ok(ExchangeOutcome::from_endpoint(&ep, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Decision::{Erasure, H, V};

    const T: Duration = Duration::from_millis(300);

    fn keys() -> (Vec<u8>, Vec<Decision>) {
        let alice: Vec<u8> = (0..100).map(|i| (i % 3 == 0) as u8).collect();
        let bob = alice.iter().map(|&b| if b == 1 { V } else { H }).collect();
        (alice, bob)
    }

    fn running() -> (Endpoint<MemoryTransport>, Endpoint<MemoryTransport>) {
        let (alice_key, bob_key) = keys();
        let (ta, tb) = memory_pair();
        let mut a = Endpoint::alice(ta, 9, &alice_key).with_timeout(T);
        let mut b = Endpoint::bob(tb, 9, &bob_key).with_timeout(T);
        thread::scope(|s| {
            let h = s.spawn(|| a.handshake());
            b.handshake().unwrap();
            h.join().unwrap().unwrap();
        });
        (a, b)
    }

    #[test]
    fn matching_keys_give_zero() {
        let (mut a, mut b) = running();
        let idx: Vec<usize> = (0..100).step_by(7).collect();
        let (ra, rb) = exchange_qber_round(&mut a, &mut b, &idx);
        let (ra, rb) = (ra.unwrap().unwrap(), rb.unwrap());
        assert_eq!(ra.value(), 0.0);
        assert_eq!(rb.value(), 0.0);
        assert!(idx.iter().all(|&i| a.revealed()[i] && b.revealed()[i]));
        assert_eq!(a.revealed().iter().filter(|r| **r).count(), idx.len());
    }

    #[test]
    fn one_flip_in_a_hundred() {
        let (alice_key, mut bob_key) = keys();
        bob_key[42] = if bob_key[42] == H { V } else { H };
        let all: Vec<usize> = (0..100).collect();
        let (a, b) = exchange_in_memory(3, &alice_key, &bob_key, &all, 100);
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(a.total.value(), 0.01);
        assert_eq!(b.total.value(), 0.01);
    }

    #[test]
    fn erasures_are_not_requested() {
        let (alice_key, mut bob_key) = keys();
        bob_key[0] = Erasure;
        bob_key[1] = Erasure;
        let (a, b) = exchange_in_memory(3, &alice_key, &bob_key, &[0, 1, 2, 3], 2);
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(a.total.compared, 2);
        assert_eq!(b.total.compared, 2);
        assert_eq!(b.total.skipped_erasures, 2);
        assert!(!a.revealed[0] && a.revealed[2]);
    }

    #[test]
    fn transcript_shape() {
        let (alice_key, bob_key) = keys();
        let (a, b) = exchange_in_memory(5, &alice_key, &bob_key, &[0, 10, 20], 2);
        let kinds: Vec<(Direction, MessageKind)> = b.unwrap().transcript.iter().map(|(d, m)| (*d, m.kind())).collect();
        use Direction::{Received as R, Sent as S};
        use MessageKind::*;
        assert_eq!(
            kinds,
            vec![
                (S, Hello),
                (R, Hello),
                (R, Start),
                (S, ChunkRequest),
                (R, ChunkReveal),
                (S, QberReport),
                (R, QberReport),
                (S, ChunkRequest),
                (R, ChunkReveal),
                (S, QberReport),
                (R, QberReport),
                (S, End),
                (R, End),
            ]
        );
        let seqs: Vec<u64> = a
            .unwrap()
            .transcript
            .iter()
            .filter(|(d, _)| *d == S)
            .map(|(_, m)| m.sequence)
            .collect();
        assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn dropped_reveal_aborts_both_ends() {
        let (alice_key, bob_key) = keys();
        let (ta, tb) = memory_pair();
        // Alice sends HELLO(0), START(1), CHUNK_REVEAL(2): drop the reveal.
        // Alice waits longer so Bob's timeout fires first and his ABORT reaches her.
        let mut a = Endpoint::alice(DropNth::new(ta, 2), 1, &alice_key).with_timeout(3 * T);
        let mut b = Endpoint::bob(tb, 1, &bob_key).with_timeout(T);
        let started = std::time::Instant::now();
        let (ra, rb) = thread::scope(|s| {
            let h = s.spawn(|| run_alice(&mut a));
            let rb = run_bob(&mut b, &[0, 1, 2], 3);
            (h.join().unwrap(), rb)
        });
        assert!(matches!(rb, Err(ChannelError::Timeout(_))), "{rb:?}");
        assert!(matches!(ra, Err(ChannelError::RemoteAbort(_))), "{ra:?}");
        assert!(matches!(a.state(), EndpointState::Aborted(_)));
        assert!(matches!(b.state(), EndpointState::Aborted(_)));
        assert!(started.elapsed() < 3 * T);
    }

    #[test]
    fn dropped_hello_is_a_sequence_gap() {
        let (alice_key, bob_key) = keys();
        let (ta, tb) = memory_pair();
        let mut a = Endpoint::alice(DropNth::new(ta, 0), 1, &alice_key).with_timeout(T);
        let mut b = Endpoint::bob(tb, 1, &bob_key).with_timeout(T);
        let (ra, rb) = thread::scope(|s| {
            let h = s.spawn(|| run_alice(&mut a));
            let rb = run_bob(&mut b, &[0], 1);
            (h.join().unwrap(), rb)
        });
        assert_eq!(rb, Err(ChannelError::SequenceGap { expected: 0, got: 1 }));
        assert!(matches!(ra, Err(ChannelError::RemoteAbort(ref r)) if r.contains("sequence gap")));
    }

    #[test]
    fn malformed_frame_aborts() {
        let (alice_key, _) = keys();
        let (ta, mut tb) = memory_pair();
        let mut a = Endpoint::alice(ta, 1, &alice_key).with_timeout(T);
        tb.send_frame(b"HELLO|1|0|zz\n").unwrap();
        assert!(matches!(a.handshake(), Err(ChannelError::Malformed(_))));
        let abort = decode_message(&tb.recv_frame(T).unwrap()).unwrap();
        assert_eq!(abort.kind(), MessageKind::Abort);
        assert!(matches!(a.handshake(), Err(ChannelError::Aborted(_))));
    }

    #[test]
    fn wrong_session_id_aborts() {
        let (alice_key, bob_key) = keys();
        let (ta, tb) = memory_pair();
        let mut a = Endpoint::alice(ta, 1, &alice_key).with_timeout(T);
        let mut b = Endpoint::bob(tb, 2, &bob_key).with_timeout(T);
        let (ra, rb) = thread::scope(|s| {
            let h = s.spawn(|| a.handshake());
            let rb = b.handshake();
            (h.join().unwrap(), rb)
        });
        assert!(matches!(ra, Err(ChannelError::SessionMismatch { .. })));
        assert!(rb.is_err());
    }

    #[test]
    fn rounds_require_running_state() {
        let (alice_key, bob_key) = keys();
        let (ta, tb) = memory_pair();
        let _a = Endpoint::alice(ta, 1, &alice_key);
        let mut b = Endpoint::bob(tb, 1, &bob_key).with_timeout(T);
        assert!(matches!(b.request_round(&[0]), Err(ChannelError::Protocol(_))));
    }

    #[test]
    fn tcp_matches_memory() {
        let (alice_key, mut bob_key) = keys();
        bob_key[10] = Erasure;
        bob_key[20] = V;
        let revealed: Vec<usize> = (0..100).step_by(5).collect();
        let (ma, mb) = exchange_in_memory(77, &alice_key, &bob_key, &revealed, 6);
        let (ma, mb) = (ma.unwrap(), mb.unwrap());

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (ta, tb) = thread::scope(|s| {
            let h = s.spawn(|| serve_alice_tcp(&listener, 77, &alice_key, DEFAULT_TIMEOUT));
            let b = connect_bob_tcp(addr, 77, &bob_key, &revealed, 6, DEFAULT_TIMEOUT);
            (h.join().unwrap(), b)
        });
        let (ta, tb) = (ta.unwrap(), tb.unwrap());
        assert_eq!(ta, ma);
        assert_eq!(tb, mb);
        assert_eq!(ta.total.mismatches, 1);
        assert_eq!(ta.total.compared, 19);
    }
}
