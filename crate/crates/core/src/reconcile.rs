//! Bit-pair iteration.
//!
//! Each iteration splits the string into adjacent disjoint pairs and both
//! parties publish the parity of every pair. Where parities agree the first
//! bit is kept; where they disagree both bits are dropped. A trailing odd
//! bit is dropped. Both sides run exactly the same rule, so they stay
//! aligned without further negotiation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::stats::ParityStats;
use crate::transport::{ChannelError, Frame, FrameChannel, SessionId};
use crate::BitString;

#[derive(Debug, Error)]
pub enum ReconcileError {
    #[error("parity vector length {got} does not match {expected} pairs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("expected parity vector for iteration {expected}, peer sent iteration {got}")]
    IterationMismatch { expected: u8, got: u8 },
    #[error("expected PARITY_VECTOR, peer sent {0}")]
    UnexpectedFrame(&'static str),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub kept: BitString,
    pub stats: ParityStats,
    pub iteration_index: u32,
    /// One bit per pair, set where the pair was kept. Public.
    pub keep_mask: BitString,
}

/// Parity statistics of every iteration run so far.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReconciliationTranscript {
    pub iterations: Vec<ParityStats>,
    pub initial_length: u64,
    pub final_length: u64,
}

const INTERLEAVE_TAG: &[u8] = b"rttkey/interleave/v1";

/// Public reordering applied once to the aligned bits before the first
/// iteration.
///
/// Neighbouring rounds of a chained rally share a transit, which leaves a
/// small correlation between the errors of adjacent bits. A fixed shuffle
/// derived from the session id spreads neighbours apart so that adjacent
/// pairs behave like independent draws.
pub fn interleave(bits: &BitString, session_id: &SessionId) -> BitString {
    let mut h = Sha256::new();
    h.update(session_id);
    h.update(INTERLEAVE_TAG);
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut order: Vec<usize> = (0..bits.len()).collect();
    order.shuffle(&mut rng);
    order.into_iter().map(|i| bits.get(i).unwrap()).collect()
}

/// XOR of each adjacent disjoint pair.
pub fn pair_parities(bits: &BitString) -> BitString {
    (0..bits.len() / 2)
        .map(|i| bits.get(2 * i).unwrap() ^ bits.get(2 * i + 1).unwrap())
        .collect()
}

/// Keeps the first bit of each pair whose local and remote parities agree.
pub fn keep_agreeing(
    bits: &BitString,
    local_par: &BitString,
    remote_par: &BitString,
) -> Result<IterationResult, ReconcileError> {
    keep_agreeing_at(bits, local_par, remote_par, 0)
}

fn keep_agreeing_at(
    bits: &BitString,
    local_par: &BitString,
    remote_par: &BitString,
    iteration_index: u32,
) -> Result<IterationResult, ReconcileError> {
    let pairs = bits.len() / 2;
    for par in [local_par, remote_par] {
        if par.len() != pairs {
            return Err(ReconcileError::LengthMismatch {
                expected: pairs,
                got: par.len(),
            });
        }
    }
    let keep_mask: BitString = local_par.iter().zip(remote_par.iter()).map(|(a, b)| a == b).collect();
    let kept = apply_keep_mask(bits, &keep_mask);
    let mismatches = (pairs - kept.len()) as u64;
    Ok(IterationResult {
        kept,
        stats: ParityStats {
            mismatches,
            pairs: pairs as u64,
        },
        iteration_index,
        keep_mask,
    })
}

/// First bit of every pair selected by `mask`.
pub fn apply_keep_mask(bits: &BitString, mask: &BitString) -> BitString {
    mask.iter()
        .enumerate()
        .filter(|(_, keep)| *keep)
        .map(|(i, _)| bits.get(2 * i).unwrap())
        .collect()
}

/// Which side of a lock-step exchange speaks first. The two endpoints use
/// opposite turns so neither blocks on a full socket buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    SendFirst,
    ReceiveFirst,
}

/// Sends `frame` and returns the peer's frame, in the order given by `turn`.
pub fn exchange<C: FrameChannel + ?Sized>(channel: &mut C, frame: &Frame, turn: Turn) -> Result<Frame, ChannelError> {
    match turn {
        Turn::SendFirst => {
            channel.send(frame)?;
            channel.recv()
        }
        Turn::ReceiveFirst => {
            let got = channel.recv()?;
            channel.send(frame)?;
            Ok(got)
        }
    }
}

/// One lock-step iteration: publish our parities, read the peer's, apply
/// the keep rule.
pub fn run_iteration<C: FrameChannel + ?Sized>(
    bits: &BitString,
    channel: &mut C,
    iteration_index: u32,
    turn: Turn,
) -> Result<IterationResult, ReconcileError> {
    let local = pair_parities(bits);
    let tag = iteration_index as u8;
    let outgoing = Frame::ParityVector {
        iteration: tag,
        bits: local.clone(),
    };
    let remote = match exchange(channel, &outgoing, turn)? {
        Frame::ParityVector { iteration, bits } => {
            if iteration != tag {
                return Err(ReconcileError::IterationMismatch {
                    expected: tag,
                    got: iteration,
                });
            }
            bits
        }
        other => return Err(ReconcileError::UnexpectedFrame(other.name())),
    };
    keep_agreeing_at(bits, &local, &remote, iteration_index)
}

/// Runs iterations one at a time and records their statistics.
#[derive(Debug, Clone)]
pub struct Reconciler {
    bits: BitString,
    turn: Turn,
    transcript: ReconciliationTranscript,
    masks: Vec<BitString>,
}

impl Reconciler {
    pub fn new(bits: BitString, turn: Turn) -> Self {
        let n = bits.len() as u64;
        Self {
            bits,
            turn,
            transcript: ReconciliationTranscript {
                iterations: Vec::new(),
                initial_length: n,
                final_length: n,
            },
            masks: Vec::new(),
        }
    }

    pub fn step<C: FrameChannel + ?Sized>(&mut self, channel: &mut C) -> Result<ParityStats, ReconcileError> {
        let index = self.transcript.iterations.len() as u32;
        let result = run_iteration(&self.bits, channel, index, self.turn)?;
        self.bits = result.kept;
        self.transcript.iterations.push(result.stats);
        self.transcript.final_length = self.bits.len() as u64;
        self.masks.push(result.keep_mask);
        Ok(result.stats)
    }

    pub fn iterations_done(&self) -> u32 {
        self.transcript.iterations.len() as u32
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn transcript(&self) -> &ReconciliationTranscript {
        &self.transcript
    }

    /// Public keep decisions of each iteration, in order.
    pub fn keep_masks(&self) -> &[BitString] {
        &self.masks
    }

    pub fn into_bits(self) -> BitString {
        self.bits
    }
}
