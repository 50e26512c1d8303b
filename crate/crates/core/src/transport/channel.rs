//! Reliable, ordered frame delivery between the two endpoints.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::wire::{Frame, WireError};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("connection to peer lost: {0}")]
    Lost(String),
    #[error("bad frame from peer: {0}")]
    Wire(WireError),
}

impl From<WireError> for ChannelError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Io(io) => ChannelError::Lost(io.to_string()),
            other => ChannelError::Wire(other),
        }
    }
}

/// Ordered, exactly-once frame transport.
pub trait FrameChannel {
    fn send(&mut self, frame: &Frame) -> Result<(), ChannelError>;
    fn recv(&mut self) -> Result<Frame, ChannelError>;
}

impl<C: FrameChannel + ?Sized> FrameChannel for &mut C {
    fn send(&mut self, frame: &Frame) -> Result<(), ChannelError> {
        (**self).send(frame)
    }

    fn recv(&mut self) -> Result<Frame, ChannelError> {
        (**self).recv()
    }
}

/// Frames over a TCP connection.
pub struct StreamChannel {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl StreamChannel {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            reader,
            writer: BufWriter::new(stream),
        })
    }

    /// Connects to `addr`, retrying until `patience` runs out.
    pub fn connect(addr: SocketAddr, patience: Duration) -> Result<Self, ChannelError> {
        let start = Instant::now();
        loop {
            match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                Ok(s) => return Self::new(s).map_err(|e| ChannelError::Lost(e.to_string())),
                Err(e) if start.elapsed() >= patience => {
                    return Err(ChannelError::Lost(format!("connect {addr}: {e}")))
                }
                Err(_) => std::thread::sleep(Duration::from_millis(50)),
            }
        }
    }

    /// Accepts one connection, giving up after `patience`.
    pub fn accept(listener: &TcpListener, patience: Duration) -> Result<Self, ChannelError> {
        let lost = |e: io::Error| ChannelError::Lost(e.to_string());
        listener.set_nonblocking(true).map_err(lost)?;
        let start = Instant::now();
        loop {
            match listener.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false).map_err(lost)?;
                    return Self::new(s).map_err(lost);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if start.elapsed() >= patience {
                        return Err(ChannelError::Lost("peer never connected".into()));
                    }
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(lost(e)),
            }
        }
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.reader.get_ref().set_read_timeout(timeout)
    }
}

impl FrameChannel for StreamChannel {
    fn send(&mut self, frame: &Frame) -> Result<(), ChannelError> {
        frame.write_to(&mut self.writer)?;
        self.writer.flush().map_err(|e| ChannelError::Lost(e.to_string()))
    }

    fn recv(&mut self) -> Result<Frame, ChannelError> {
        Ok(Frame::read_from(&mut self.reader)?)
    }
}

/// In-process channel carrying encoded frames, so the byte layout is
/// exercised exactly as on a socket.
pub struct MemoryChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    sent: Option<Sender<Vec<u8>>>,
}

impl MemoryChannel {
    pub fn pair() -> (MemoryChannel, MemoryChannel) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            MemoryChannel {
                tx: a_tx,
                rx: a_rx,
                sent: None,
            },
            MemoryChannel {
                tx: b_tx,
                rx: b_rx,
                sent: None,
            },
        )
    }

    /// Mirrors every outgoing encoded frame to `tap`.
    pub fn with_tap(mut self, tap: Sender<Vec<u8>>) -> Self {
        self.sent = Some(tap);
        self
    }
}

impl FrameChannel for MemoryChannel {
    fn send(&mut self, frame: &Frame) -> Result<(), ChannelError> {
        let bytes = frame.encode();
        if let Some(tap) = &self.sent {
            let _ = tap.send(bytes.clone());
        }
        self.tx
            .send(bytes)
            .map_err(|_| ChannelError::Lost("peer dropped".into()))
    }

    fn recv(&mut self) -> Result<Frame, ChannelError> {
        let bytes = self
            .rx
            .recv()
            .map_err(|_| ChannelError::Lost("peer dropped".into()))?;
        let (frame, used) = Frame::decode(&bytes)?;
        if used != bytes.len() {
            return Err(ChannelError::Wire(WireError::Malformed {
                kind: frame.name(),
                detail: "trailing bytes".into(),
            }));
        }
        Ok(frame)
    }
}
