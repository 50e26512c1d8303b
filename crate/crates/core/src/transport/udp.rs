//! Runs a rally endpoint over a real UDP socket.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::rally::{RallyEndpoint, RallyError};
use crate::extraction::RttSample;

#[derive(Debug, Error)]
pub enum UdpRallyError {
    #[error(transparent)]
    Rally(#[from] RallyError),
    #[error("socket error: {0}")]
    Io(#[from] io::Error),
}

/// Nanoseconds since a fixed origin on the monotonic clock.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }

    pub fn now(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

/// Drives `endpoint` to completion, exchanging datagrams with `peer`.
///
/// With `peer` unset, the source of the first datagram the endpoint answers
/// becomes the peer; this is how a responder finds its initiator. Datagrams
/// from any other address are dropped. Returns the endpoint's samples and
/// the elapsed rally time in nanoseconds.
pub fn run_udp_rally<E: RallyEndpoint>(
    socket: &UdpSocket,
    peer: Option<SocketAddr>,
    endpoint: &mut E,
) -> Result<(Vec<RttSample>, u64), UdpRallyError> {
    let clock = MonotonicClock::new();
    let mut peer = peer;
    let mut buf = [0u8; 64];

    let t0 = clock.now();
    if let Some(pkt) = endpoint.start(t0) {
        let to = peer.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "initiator needs a peer address"))?;
        socket.send_to(&pkt.encode(), to)?;
    }
    while !endpoint.is_done() {
        let timeout = endpoint
            .deadline()
            .map(|d| Duration::from_nanos(d.saturating_sub(clock.now()).max(1_000)));
        if endpoint.deadline().is_some_and(|d| clock.now() >= d) {
            if let Some(pkt) = endpoint.on_tick(clock.now())? {
                if let Some(to) = peer {
                    socket.send_to(&pkt.encode(), to)?;
                }
            }
            continue;
        }
        socket.set_read_timeout(timeout)?;
        let reply = match socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                // timestamp before anything else
                let at = clock.now();
                if peer.is_some_and(|p| p != from) {
                    continue;
                }
                let reply = endpoint.on_datagram(&buf[..n], at)?;
                if reply.is_some() && peer.is_none() {
                    peer = Some(from);
                }
                reply
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                endpoint.on_tick(clock.now())?
            }
            // ICMP port unreachable surfaces here on some platforms
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => None,
            Err(e) => return Err(e.into()),
        };
        if let (Some(pkt), Some(to)) = (reply, peer) {
            socket.send_to(&pkt.encode(), to)?;
        }
    }
    Ok((endpoint.samples(), clock.now() - t0))
}
