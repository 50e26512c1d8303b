//! Discrete-event simulation of the rally over a chain of hops.
//!
//! The real [`Initiator`] and [`Responder`] state machines run against a
//! virtual nanosecond clock. Every datagram crosses each hop with an
//! independent delay, and Eve notes when it passes her node.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use super::topology::{ChainTopology, TopologyError};
use crate::extraction::RttSample;
use crate::transport::{Initiator, RallyConfig, RallyEndpoint, RallyError, RallyPacket, Responder};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("rally aborted: {0}")]
    Rally(#[from] RallyError),
    #[error("simulation needs at least one round")]
    NoRounds,
}

/// Eve's timing of each round: from the probe passing her node on its way
/// to Bob until the echo passes back.
#[derive(Debug, Clone, PartialEq)]
pub struct EveObservation {
    /// Indexed by round; `None` where she missed either packet.
    pub intervals: Vec<Option<f64>>,
}

impl EveObservation {
    pub fn rounds(&self) -> usize {
        self.intervals.len()
    }

    pub fn observed(&self) -> usize {
        self.intervals.iter().flatten().count()
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedRally {
    pub alice: Vec<RttSample>,
    pub bob: Vec<RttSample>,
    pub eve: EveObservation,
    /// Every datagram put on the wire, when capture was requested.
    pub datagrams: Option<Vec<Vec<u8>>>,
    /// Virtual time at which the last endpoint finished.
    pub duration_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Target {
    Alice,
    Bob,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Arrival {
    at: u64,
    order: u64,
    to: Target,
    bytes: [u8; crate::transport::wire::RALLY_PACKET_LEN],
}

/// Options beyond the topology.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub rally: RallyConfig,
    pub capture: bool,
}

impl SimOptions {
    pub fn new(rally: RallyConfig) -> Self {
        Self { rally, capture: false }
    }
}

struct Wire<'a, R: Rng> {
    topo: &'a ChainTopology,
    rng: &'a mut R,
    queue: BinaryHeap<Reverse<Arrival>>,
    order: u64,
    eve_out: Vec<Option<f64>>,
    eve_in: Vec<Option<f64>>,
    capture: Option<Vec<Vec<u8>>>,
}

impl<R: Rng> Wire<'_, R> {
    fn send(&mut self, pkt: RallyPacket, from_alice: bool, now: u64) {
        let bytes = pkt.encode();
        if let Some(c) = self.capture.as_mut() {
            c.push(bytes.to_vec());
        }
        let hops = self.topo.hops.len();
        let dropped_at = (self.topo.drop_prob > 0.0 && self.rng.random_bool(self.topo.drop_prob))
            .then(|| self.rng.random_range(0..hops));

        let mut t = now;
        let mut eve_saw = None;
        for step in 0..hops {
            // node the packet is at before crossing this hop
            let (node, hop) = if from_alice { (step, step) } else { (hops - step, hops - step - 1) };
            if node == self.topo.eve_position {
                eve_saw = Some(t);
            }
            if dropped_at == Some(hop) {
                break;
            }
            t += self.topo.hops[hop].sample_ns(self.rng);
            if step + 1 == hops && self.topo.eve_position == if from_alice { hops } else { 0 } {
                eve_saw = Some(t);
            }
        }
        if let Some(at) = eve_saw {
            let stamp = at as f64 + self.topo.eve_jitter.sample(self.rng);
            let slot = if from_alice { &mut self.eve_out } else { &mut self.eve_in };
            if let Some(s) = slot.get_mut(pkt.seq as usize) {
                *s = Some(stamp);
            }
        }
        if dropped_at.is_none() {
            self.order += 1;
            self.queue.push(Reverse(Arrival {
                at: t,
                order: self.order,
                to: if from_alice { Target::Bob } else { Target::Alice },
                bytes,
            }));
        }
    }
}

/// Runs one full rally over `topo`, drawing all randomness from `rng`.
pub fn simulate_rallies<R: Rng>(
    topo: &ChainTopology,
    options: &SimOptions,
    rng: &mut R,
) -> Result<SimulatedRally, SimError> {
    topo.validate()?;
    let rounds = options.rally.rounds as usize;
    if rounds == 0 {
        return Err(SimError::NoRounds);
    }
    let mut alice = Initiator::new(options.rally.clone());
    let mut bob = Responder::new(options.rally.clone());
    let mut wire = Wire {
        topo,
        rng,
        queue: BinaryHeap::new(),
        order: 0,
        eve_out: vec![None; rounds],
        eve_in: vec![None; rounds],
        capture: options.capture.then(Vec::new),
    };

    let mut now = 0;
    bob.start(now);
    if let Some(p) = alice.start(now) {
        wire.send(p, true, now);
    }
    while !(alice.is_done() && bob.is_done()) {
        let next_arrival = wire.queue.peek().map(|Reverse(a)| a.at);
        let deadlines = [alice.deadline(), bob.deadline()];
        let next_deadline = deadlines.iter().flatten().min().copied();
        match (next_arrival, next_deadline) {
            (Some(a), d) if d.is_none_or(|d| a <= d) => {
                let Reverse(arr) = wire.queue.pop().unwrap();
                now = arr.at;
                match arr.to {
                    Target::Bob => {
                        if let Some(p) = bob.on_datagram(&arr.bytes, now)? {
                            wire.send(p, false, now);
                        }
                    }
                    Target::Alice => {
                        if let Some(p) = alice.on_datagram(&arr.bytes, now)? {
                            wire.send(p, true, now);
                        }
                    }
                }
            }
            (_, Some(d)) => {
                now = now.max(d);
                if deadlines[0].is_some_and(|x| x <= now) {
                    if let Some(p) = alice.on_tick(now)? {
                        wire.send(p, true, now);
                    }
                }
                if deadlines[1].is_some_and(|x| x <= now) {
                    if let Some(p) = bob.on_tick(now)? {
                        wire.send(p, false, now);
                    }
                }
            }
            (None, None) => break,
            (Some(_), None) => unreachable!("covered by the first arm"),
        }
    }

    let intervals = wire
        .eve_out
        .iter()
        .zip(&wire.eve_in)
        .map(|(o, i)| match (o, i) {
            (Some(o), Some(i)) => Some(i - o),
            _ => None,
        })
        .collect();
    Ok(SimulatedRally {
        alice: alice.samples(),
        bob: bob.samples(),
        eve: EveObservation { intervals },
        datagrams: wire.capture,
        duration_ns: now,
    })
}
