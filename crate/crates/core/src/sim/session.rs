//! Complete two-party sessions over the simulated chain, with the ground
//! truth needed to score them.

use std::sync::mpsc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::chain::{simulate_rallies, SimError, SimOptions, SimulatedRally};
use super::eve::{bsc_pair, eve_bits, eve_track_reconciliation, EveError};
use super::topology::ChainTopology;
use crate::extraction::{self, DiscardSet, ExtractionError};
use crate::planner::PlannerConfig;
use crate::reconcile::{interleave, ReconcileError, Reconciler, Turn};
use crate::session::{run_session, Role, SecrecyAudit, SessionConfig, SessionError, SessionOutcome};
use crate::transcript::{Transcript, TranscriptSource};
use crate::transport::{MemoryChannel, RallyConfig, SessionId};
use crate::BitString;

#[derive(Debug, thiserror::Error)]
pub enum SimSessionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Eve(#[from] EveError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
}

/// Aligned strings of all three parties, in the order reconciliation sees
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub alice: BitString,
    pub bob: BitString,
    pub eve: BitString,
    pub discard_union: DiscardSet,
    pub tie_union: DiscardSet,
}

impl GroundTruth {
    /// Replays discard and tie handling exactly as the two endpoints will.
    pub fn from_rally(rally: &SimulatedRally, session_id: &SessionId) -> Result<Self, SimSessionError> {
        let union = extraction::local_discards(&rally.alice)?.union(&extraction::local_discards(&rally.bob)?);
        let a = extraction::extract_bits(&extraction::apply_discards(&rally.alice, &union)?)?;
        let b = extraction::extract_bits(&extraction::apply_discards(&rally.bob, &union)?)?;
        let ties = a.ties.union(&b.ties);
        let survivors: Vec<u32> = (0..rally.alice.len() as u32).filter(|i| !union.contains(*i)).collect();
        let eve = eve_bits(&rally.eve, &survivors, &ties)?;
        Ok(Self {
            alice: interleave(&a.without(&ties), session_id),
            bob: interleave(&b.without(&ties), session_id),
            eve: interleave(&eve, session_id),
            discard_union: union,
            tie_union: ties,
        })
    }

    pub fn audit(&self) -> Option<SecrecyAudit> {
        SecrecyAudit::from_bits(&self.alice, &self.bob, &self.eve)
    }
}

#[derive(Debug, Clone)]
pub struct SimSessionConfig {
    pub session_id: SessionId,
    pub rounds: u32,
    pub planner: PlannerConfig,
    pub seed: u64,
    /// Keep copies of every datagram and frame put on the wire.
    pub capture: bool,
}

impl SimSessionConfig {
    pub fn new(session_id: SessionId, rounds: u32, seed: u64) -> Self {
        Self {
            session_id,
            rounds,
            planner: PlannerConfig::default(),
            seed,
            capture: false,
        }
    }
}

#[derive(Debug)]
pub struct SimSessionResult {
    pub rally: SimulatedRally,
    pub truth: GroundTruth,
    pub alice: Result<SessionOutcome, SessionError>,
    pub bob: Result<SessionOutcome, SessionError>,
    /// True Alice/Bob and Alice/Eve disagreement, raw and after each
    /// iteration. Present when Alice's session got through reconciliation.
    pub ber_ab: Option<Vec<f64>>,
    pub ber_eve: Option<Vec<f64>>,
    /// Encoded frames sent by either side, when capture was on.
    pub frames: Option<Vec<Vec<u8>>>,
}

impl SimSessionResult {
    pub fn keys_agree(&self) -> bool {
        match (&self.alice, &self.bob) {
            (Ok(a), Ok(b)) => a.key.key() == b.key.key(),
            _ => false,
        }
    }

    pub fn transcript(&self) -> Option<Transcript> {
        let outcome = self.alice.as_ref().ok()?;
        Some(Transcript {
            source: TranscriptSource::Simulate,
            iterations: outcome.report.iterations.clone(),
            ber_ab: self.ber_ab.clone(),
            ber_eve: self.ber_eve.clone(),
            report: Some(outcome.report.clone()),
        })
    }
}

/// One seeded rally on the chain: the pieces each process of a two-process
/// simulated run needs.
pub fn simulate_chain(
    topo: &ChainTopology,
    session_id: SessionId,
    rounds: u32,
    seed: u64,
    capture: bool,
) -> Result<(SimulatedRally, GroundTruth), SimSessionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut options = SimOptions::new(RallyConfig::new(session_id, rounds));
    options.capture = capture;
    let rally = simulate_rallies(topo, &options, &mut rng)?;
    let truth = GroundTruth::from_rally(&rally, &session_id)?;
    Ok((rally, truth))
}

/// Runs a whole session: seeded rally, then both roles over an in-memory
/// framed channel on two threads.
pub fn simulate_session(topo: &ChainTopology, cfg: &SimSessionConfig) -> Result<SimSessionResult, SimSessionError> {
    let (rally, truth) = simulate_chain(topo, cfg.session_id, cfg.rounds, cfg.seed, cfg.capture)?;
    let session_cfg = SessionConfig {
        session_id: cfg.session_id,
        planner: cfg.planner.clone(),
        audit: truth.audit(),
    };

    let (ca, cb) = MemoryChannel::pair();
    let (tap_tx, tap_rx) = mpsc::channel();
    let (mut ca, mut cb) = if cfg.capture {
        (ca.with_tap(tap_tx.clone()), cb.with_tap(tap_tx))
    } else {
        drop(tap_tx);
        (ca, cb)
    };
    let (alice, bob) = std::thread::scope(|s| {
        let bob_cfg = session_cfg.clone();
        let bob_samples = &rally.bob;
        let handle = s.spawn(move || {
            let out = run_session(Role::Responder, bob_samples, &bob_cfg, &mut cb);
            drop(cb);
            out
        });
        let alice = run_session(Role::Initiator, &rally.alice, &session_cfg, &mut ca);
        // unblock the peer if this side aborted early
        drop(ca);
        (alice, handle.join().expect("responder thread panicked"))
    });
    let frames = cfg.capture.then(|| tap_rx.try_iter().collect());

    let (ber_ab, ber_eve) = match &alice {
        Ok(outcome) => {
            let masks = &outcome.trace.keep_masks;
            (
                Some(eve_track_reconciliation(&truth.bob, &truth.alice, masks)?),
                Some(eve_track_reconciliation(&truth.eve, &truth.alice, masks)?),
            )
        }
        Err(_) => (None, None),
    };
    Ok(SimSessionResult {
        rally,
        truth,
        alice,
        bob,
        ber_ab,
        ber_eve,
        frames,
    })
}

/// Reconciles a BSC(`e`) pair of `n` bits for a fixed number of iterations
/// and records the true error rate before and after each one.
pub fn simulate_bsc_reconciliation(n: usize, e: f64, iterations: u32, seed: u64) -> Result<Transcript, SimSessionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y) = bsc_pair(n, e, &mut rng);
    let (mut ca, mut cb) = MemoryChannel::pair();
    let (ra, rb) = std::thread::scope(|s| {
        let y = y.clone();
        let handle = s.spawn(move || -> Result<Reconciler, ReconcileError> {
            let mut rb = Reconciler::new(y, Turn::ReceiveFirst);
            for _ in 0..iterations {
                rb.step(&mut cb)?;
            }
            Ok(rb)
        });
        let mut ra = Reconciler::new(x.clone(), Turn::SendFirst);
        let mut res = Ok(());
        for _ in 0..iterations {
            if let Err(err) = ra.step(&mut ca) {
                res = Err(err);
                break;
            }
        }
        drop(ca);
        (res.map(|_| ra), handle.join().expect("peer thread panicked"))
    });
    let (ra, _rb) = (ra?, rb?);
    let ber_ab = eve_track_reconciliation(&y, &x, ra.keep_masks())?;
    Ok(Transcript {
        source: TranscriptSource::Simulate,
        iterations: ra.transcript().iterations.clone(),
        ber_ab: Some(ber_ab),
        ber_eve: None,
        report: None,
    })
}
