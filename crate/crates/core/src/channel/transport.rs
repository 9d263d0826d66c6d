use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

/// Upper bound on a single frame; anything longer is treated as garbage.
pub const MAX_FRAME_LEN: usize = 1 << 20;

#[derive(Debug)]
pub enum RecvError {
    Timeout,
    Closed,
    TooLong,
    Io(io::Error),
}

/// Reliable, in-order delivery of newline-terminated frames.
pub trait Transport {
    fn send_frame(&mut self, frame: &[u8]) -> io::Result<()>;

    /// Next complete frame, including its trailing newline.
    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError>;
}

/// One end of an in-process duplex pipe.
#[derive(Debug)]
pub struct MemoryTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected in-process endpoints.
pub fn memory_pair() -> (MemoryTransport, MemoryTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        MemoryTransport { tx: a_tx, rx: a_rx },
        MemoryTransport { tx: b_tx, rx: b_rx },
    )
}

impl Transport for MemoryTransport {
    fn send_frame(&mut self, frame: &[u8]) -> io::Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| io::Error::new(ErrorKind::BrokenPipe, "peer dropped"))
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError> {
        match self.rx.recv_timeout(timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(RecvError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(RecvError::Closed),
        }
    }
}

/// Frames over a TCP stream.
#[derive(Debug)]
pub struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    /// Bytes of a frame whose newline has not arrived yet.
    pending: Vec<u8>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(TcpTransport {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            pending: Vec::new(),
        })
    }
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, frame: &[u8]) -> io::Result<()> {
        self.writer.write_all(frame)?;
        self.writer.flush()
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
            .map_err(RecvError::Io)?;
        match self.reader.read_until(b'\n', &mut self.pending) {
            Ok(0) => Err(RecvError::Closed),
            Ok(_) if self.pending.last() == Some(&b'\n') => Ok(std::mem::take(&mut self.pending)),
            Ok(_) => Err(RecvError::Closed),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if self.pending.len() > MAX_FRAME_LEN {
                    Err(RecvError::TooLong)
                } else {
                    Err(RecvError::Timeout)
                }
            }
            Err(e) => Err(RecvError::Io(e)),
        }
    }
}

/// Test helper: drops the `n`-th outgoing frame (0-based) and forwards the rest.
#[derive(Debug)]
pub struct DropNth<T> {
    inner: T,
    drop_index: usize,
    sent: usize,
}

impl<T> DropNth<T> {
    pub fn new(inner: T, drop_index: usize) -> Self {
        DropNth {
            inner,
            drop_index,
            sent: 0,
        }
    }
}

impl<T: Transport> Transport for DropNth<T> {
    fn send_frame(&mut self, frame: &[u8]) -> io::Result<()> {
        let i = self.sent;
        self.sent += 1;
        if i == self.drop_index {
            Ok(())
        } else {
            self.inner.send_frame(frame)
        }
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError> {
        self.inner.recv_frame(timeout)
    }
}
