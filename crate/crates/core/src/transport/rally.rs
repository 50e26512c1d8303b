//! Probe/echo rally state machines.
//!
//! The initiator sends `PROBE(i)`; the responder answers with `ECHO(i)`, and
//! the echo's arrival triggers `PROBE(i+1)`. Each side measures only its own
//! round trips on its own clock:
//!
//! * initiator sample `i` = arrival of `ECHO(i)` - departure of `PROBE(i)`
//! * responder sample `i` = arrival of `PROBE(i+1)` - departure of `ECHO(i)`
//!
//! so aligned samples share the transit of `ECHO(i)`.
//!
//! The machines do no I/O. A driver feeds them datagrams and clock readings
//! (nanoseconds on any monotonic clock) and transmits whatever packet they
//! hand back. The UDP driver and the chain simulator both sit on top of this.

use thiserror::Error;

use super::wire::{PacketKind, RallyPacket, SessionId};
use crate::extraction::{RttSample, SampleStatus};

pub const DEFAULT_TIMEOUT_NS: u64 = 2_000_000_000;
pub const DEFAULT_MAX_CONSECUTIVE_TIMEOUTS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RallyError {
    #[error("{0} consecutive timeouts; peer unreachable")]
    TooManyTimeouts(u32),
}

/// Pacing between the end of one round and the next probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Turnaround {
    #[default]
    Immediate,
    /// Probes are spaced at least this many nanoseconds apart.
    MinGap(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RallyConfig {
    pub session_id: SessionId,
    pub rounds: u32,
    pub timeout_ns: u64,
    pub max_consecutive_timeouts: u32,
    pub turnaround: Turnaround,
}

impl RallyConfig {
    pub fn new(session_id: SessionId, rounds: u32) -> Self {
        Self {
            session_id,
            rounds,
            timeout_ns: DEFAULT_TIMEOUT_NS,
            max_consecutive_timeouts: DEFAULT_MAX_CONSECUTIVE_TIMEOUTS,
            turnaround: Turnaround::Immediate,
        }
    }
}

/// Common driver interface for both roles.
pub trait RallyEndpoint {
    /// Called once before any other event. May return the first packet.
    fn start(&mut self, now: u64) -> Option<RallyPacket>;
    fn on_datagram(&mut self, bytes: &[u8], now: u64) -> Result<Option<RallyPacket>, RallyError>;
    /// Called when the clock reaches [`deadline`](Self::deadline).
    fn on_tick(&mut self, now: u64) -> Result<Option<RallyPacket>, RallyError>;
    fn deadline(&self) -> Option<u64>;
    fn is_done(&self) -> bool;
    fn samples(&self) -> Vec<RttSample>;
}

fn to_samples(statuses: &[SampleStatus]) -> Vec<RttSample> {
    statuses
        .iter()
        .enumerate()
        .map(|(i, &status)| RttSample {
            index: i as u32,
            status,
        })
        .collect()
}

#[derive(Debug)]
pub struct Initiator {
    cfg: RallyConfig,
    samples: Vec<SampleStatus>,
    /// Probe in flight: (seq, departure time).
    pending: Option<(u32, u64)>,
    /// Probe waiting for its pacing slot: (seq, earliest departure).
    scheduled: Option<(u32, u64)>,
    last_probe_at: Option<u64>,
    consecutive_timeouts: u32,
    done: bool,
}

impl Initiator {
    pub fn new(cfg: RallyConfig) -> Self {
        let rounds = cfg.rounds as usize;
        Self {
            cfg,
            samples: vec![SampleStatus::TimedOut; rounds],
            pending: None,
            scheduled: None,
            last_probe_at: None,
            consecutive_timeouts: 0,
            done: rounds == 0,
        }
    }

    fn send_probe(&mut self, seq: u32, now: u64) -> RallyPacket {
        self.pending = Some((seq, now));
        self.last_probe_at = Some(now);
        RallyPacket::probe(self.cfg.session_id, seq)
    }

    fn advance(&mut self, next: u32, now: u64) -> Option<RallyPacket> {
        if next >= self.cfg.rounds {
            self.done = true;
            return None;
        }
        let earliest = match (self.cfg.turnaround, self.last_probe_at) {
            (Turnaround::MinGap(gap), Some(last)) => last.saturating_add(gap),
            _ => now,
        };
        if earliest <= now {
            Some(self.send_probe(next, now))
        } else {
            self.scheduled = Some((next, earliest));
            None
        }
    }
}

impl RallyEndpoint for Initiator {
    fn start(&mut self, now: u64) -> Option<RallyPacket> {
        if self.done {
            return None;
        }
        Some(self.send_probe(0, now))
    }

    fn on_datagram(&mut self, bytes: &[u8], now: u64) -> Result<Option<RallyPacket>, RallyError> {
        let Some(pkt) = RallyPacket::decode(bytes) else {
            return Ok(None);
        };
        if pkt.kind != PacketKind::Echo || pkt.session_id != self.cfg.session_id {
            return Ok(None);
        }
        match self.pending {
            Some((seq, sent)) if seq == pkt.seq => {
                self.samples[seq as usize] = SampleStatus::Ok(now.saturating_sub(sent).max(1));
                self.pending = None;
                self.consecutive_timeouts = 0;
                Ok(self.advance(seq + 1, now))
            }
            // late echo for a round already given up on
            _ => Ok(None),
        }
    }

    fn on_tick(&mut self, now: u64) -> Result<Option<RallyPacket>, RallyError> {
        if let Some((seq, at)) = self.scheduled {
            if now >= at {
                self.scheduled = None;
                return Ok(Some(self.send_probe(seq, now)));
            }
        }
        if let Some((seq, sent)) = self.pending {
            if now >= sent.saturating_add(self.cfg.timeout_ns) {
                self.pending = None;
                self.samples[seq as usize] = SampleStatus::TimedOut;
                self.consecutive_timeouts += 1;
                if self.consecutive_timeouts >= self.cfg.max_consecutive_timeouts {
                    return Err(RallyError::TooManyTimeouts(self.consecutive_timeouts));
                }
                return Ok(self.advance(seq + 1, now));
            }
        }
        Ok(None)
    }

    fn deadline(&self) -> Option<u64> {
        if self.done {
            return None;
        }
        match (self.scheduled, self.pending) {
            (Some((_, at)), _) => Some(at),
            (None, Some((_, sent))) => Some(sent.saturating_add(self.cfg.timeout_ns)),
            (None, None) => None,
        }
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn samples(&self) -> Vec<RttSample> {
        to_samples(&self.samples)
    }
}

#[derive(Debug)]
pub struct Responder {
    cfg: RallyConfig,
    samples: Vec<SampleStatus>,
    /// Most recent echo: (seq, departure time).
    last_echo: Option<(u32, u64)>,
    idle_since: u64,
    consecutive_timeouts: u32,
    done: bool,
}

impl Responder {
    pub fn new(cfg: RallyConfig) -> Self {
        let rounds = cfg.rounds as usize;
        Self {
            cfg,
            samples: vec![SampleStatus::TimedOut; rounds],
            last_echo: None,
            idle_since: 0,
            consecutive_timeouts: 0,
            done: rounds == 0,
        }
    }
}

impl RallyEndpoint for Responder {
    fn start(&mut self, now: u64) -> Option<RallyPacket> {
        self.idle_since = now;
        None
    }

    fn on_datagram(&mut self, bytes: &[u8], now: u64) -> Result<Option<RallyPacket>, RallyError> {
        let Some(pkt) = RallyPacket::decode(bytes) else {
            return Ok(None);
        };
        if self.done
            || pkt.kind != PacketKind::Probe
            || pkt.session_id != self.cfg.session_id
            || pkt.seq >= self.cfg.rounds
        {
            return Ok(None);
        }
        if let Some((prev, sent)) = self.last_echo {
            if pkt.seq <= prev {
                return Ok(None);
            }
            // A gap leaves the previous and skipped rounds timed out.
            if pkt.seq == prev + 1 {
                self.samples[prev as usize] = SampleStatus::Ok(now.saturating_sub(sent).max(1));
            }
        }
        self.last_echo = Some((pkt.seq, now));
        self.idle_since = now;
        self.consecutive_timeouts = 0;
        if pkt.seq + 1 == self.cfg.rounds {
            self.samples[pkt.seq as usize] = SampleStatus::Discarded;
            self.done = true;
        }
        Ok(Some(RallyPacket::echo(self.cfg.session_id, pkt.seq)))
    }

    fn on_tick(&mut self, now: u64) -> Result<Option<RallyPacket>, RallyError> {
        if self.done || now < self.idle_since.saturating_add(self.cfg.timeout_ns) {
            return Ok(None);
        }
        self.consecutive_timeouts += 1;
        self.idle_since = now;
        // The initiator moves on by one round per timeout, so once enough
        // silence has passed to cover every remaining round it has finished.
        if let Some((last, _)) = self.last_echo {
            if last as u64 + self.consecutive_timeouts as u64 + 1 >= self.cfg.rounds as u64 {
                self.done = true;
                return Ok(None);
            }
        }
        if self.consecutive_timeouts >= self.cfg.max_consecutive_timeouts {
            return Err(RallyError::TooManyTimeouts(self.consecutive_timeouts));
        }
        Ok(None)
    }

    fn deadline(&self) -> Option<u64> {
        (!self.done).then(|| self.idle_since.saturating_add(self.cfg.timeout_ns))
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn samples(&self) -> Vec<RttSample> {
        to_samples(&self.samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SID: SessionId = [9; 16];

    fn cfg(rounds: u32) -> RallyConfig {
        let mut c = RallyConfig::new(SID, rounds);
        c.timeout_ns = 1_000;
        c.max_consecutive_timeouts = 3;
        c
    }

    #[test]
    fn lossless_exchange_pairs_rounds() {
        let mut a = Initiator::new(cfg(3));
        let mut b = Responder::new(cfg(3));
        b.start(0);
        // one-way delay 10, responder turnaround immediate
        let mut t = 0;
        let mut probe = a.start(t).unwrap();
        while !a.is_done() {
            t += 10;
            let echo = b.on_datagram(&probe.encode(), t).unwrap().unwrap();
            assert_eq!(echo.seq, probe.seq);
            t += 10;
            match a.on_datagram(&echo.encode(), t).unwrap() {
                Some(p) => probe = p,
                None => break,
            }
        }
        assert!(a.is_done() && b.is_done());
        let rtts: Vec<_> = a.samples().iter().map(|s| s.rtt()).collect();
        assert_eq!(rtts, vec![Some(20), Some(20), Some(20)]);
        let bs = b.samples();
        assert_eq!(bs[0].rtt(), Some(20));
        assert_eq!(bs[1].rtt(), Some(20));
        assert_eq!(bs[2].status, SampleStatus::Discarded);
    }

    #[test]
    fn initiator_times_out_and_moves_on() {
        let mut a = Initiator::new(cfg(5));
        let p0 = a.start(0).unwrap();
        assert_eq!(p0.seq, 0);
        assert_eq!(a.deadline(), Some(1_000));
        assert_eq!(a.on_tick(999).unwrap(), None);
        let p1 = a.on_tick(1_000).unwrap().unwrap();
        assert_eq!(p1.seq, 1);
        // stale echo for 0 is ignored
        assert_eq!(a.on_datagram(&RallyPacket::echo(SID, 0).encode(), 1_001).unwrap(), None);
        assert!(a.on_tick(2_000).unwrap().is_some());
        assert_eq!(a.on_tick(3_000), Err(RallyError::TooManyTimeouts(3)));
    }

    #[test]
    fn initiator_ignores_foreign_packets() {
        let mut a = Initiator::new(cfg(2));
        a.start(0);
        assert_eq!(a.on_datagram(b"junk", 5).unwrap(), None);
        assert_eq!(a.on_datagram(&RallyPacket::echo([1; 16], 0).encode(), 5).unwrap(), None);
        assert_eq!(a.on_datagram(&RallyPacket::probe(SID, 0).encode(), 5).unwrap(), None);
        assert_eq!(a.deadline(), Some(1_000));
    }

    #[test]
    fn responder_marks_gaps() {
        let mut b = Responder::new(cfg(6));
        b.start(0);
        b.on_datagram(&RallyPacket::probe(SID, 0).encode(), 10).unwrap();
        b.on_datagram(&RallyPacket::probe(SID, 1).encode(), 30).unwrap();
        // probe 2 lost; 3 arrives
        b.on_datagram(&RallyPacket::probe(SID, 3).encode(), 90).unwrap();
        // duplicate ignored
        assert_eq!(b.on_datagram(&RallyPacket::probe(SID, 3).encode(), 95).unwrap(), None);
        let s = b.samples();
        assert_eq!(s[0].rtt(), Some(20));
        assert_eq!(s[1].status, SampleStatus::TimedOut);
        assert_eq!(s[2].status, SampleStatus::TimedOut);
    }

    #[test]
    fn responder_concludes_after_tail_silence() {
        let mut b = Responder::new(cfg(4));
        b.start(0);
        b.on_datagram(&RallyPacket::probe(SID, 0).encode(), 10).unwrap();
        b.on_datagram(&RallyPacket::probe(SID, 1).encode(), 20).unwrap();
        // probes 2 and 3 never arrive
        b.on_tick(1_020).unwrap();
        assert!(!b.is_done());
        b.on_tick(2_020).unwrap();
        assert!(b.is_done());
        assert_eq!(b.samples()[1].status, SampleStatus::TimedOut);
    }

    #[test]
    fn responder_gives_up_without_initiator() {
        let mut b = Responder::new(cfg(100));
        b.start(0);
        b.on_tick(1_000).unwrap();
        b.on_tick(2_000).unwrap();
        assert_eq!(b.on_tick(3_000), Err(RallyError::TooManyTimeouts(3)));
    }

    #[test]
    fn min_gap_delays_next_probe() {
        let mut c = cfg(3);
        c.turnaround = Turnaround::MinGap(100);
        let mut a = Initiator::new(c);
        a.start(0);
        assert_eq!(a.on_datagram(&RallyPacket::echo(SID, 0).encode(), 40).unwrap(), None);
        assert_eq!(a.deadline(), Some(100));
        let p = a.on_tick(100).unwrap().unwrap();
        assert_eq!(p.seq, 1);
        assert_eq!(a.on_datagram(&RallyPacket::echo(SID, 1).encode(), 130).unwrap(), None);
        assert_eq!(a.samples()[1].rtt(), Some(30));
    }
}
