//! One key-agreement session after the rally: discard exchange, extraction,
//! tie exchange, adaptive reconciliation, privacy amplification and key
//! confirmation.
//!
//! Both roles run the same code. Every decision is a function of public
//! data, so the two endpoints stay in lock-step without negotiation; the
//! plan and the key digest are exchanged only to confirm.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{self, DiscardSet, ExtractionError, RttSample};
use crate::planner::{self, PlanDecision, PlanError, PlannerConfig, ReconciliationPlan};
use crate::privacyamp::{verify_key, FinalKey, PrivacyAmpError};
use crate::reconcile::{exchange, interleave, ReconcileError, Reconciler, Turn};
use crate::stats::{self, ParityStats};
use crate::transport::{ChannelError, Frame, FrameChannel, SessionId};
use crate::BitString;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Initiator,
    Responder,
}

impl Role {
    fn turn(self) -> Turn {
        match self {
            Role::Initiator => Turn::SendFirst,
            Role::Responder => Turn::ReceiveFirst,
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    PrivacyAmp(#[from] PrivacyAmpError),
    #[error("expected {expected}, peer sent {got}")]
    UnexpectedFrame { expected: &'static str, got: &'static str },
    #[error("peer discard set names round {index} of {rounds}")]
    DiscardRange { index: u32, rounds: usize },
    #[error("secrecy is impossible: eavesdropper audit bounds the key rate at {bound}")]
    SecrecyImpossible { bound: f64 },
}

impl SessionError {
    /// Short machine-readable cause for reports and exit messages.
    pub fn cause(&self) -> &'static str {
        match self {
            SessionError::Channel(_) => "channel-loss",
            SessionError::Reconcile(ReconcileError::Channel(_)) => "channel-loss",
            SessionError::Reconcile(_) | SessionError::UnexpectedFrame { .. } | SessionError::DiscardRange { .. } => {
                "desync"
            }
            SessionError::Extraction(_) => "extraction",
            SessionError::Plan(PlanError::SecrecyImpossible { .. }) | SessionError::SecrecyImpossible { .. } => {
                "secrecy-impossible"
            }
            SessionError::Plan(PlanError::Mismatch { .. }) => "plan-mismatch",
            SessionError::Plan(_) => "planning",
            SessionError::PrivacyAmp(PrivacyAmpError::DigestMismatch) => "digest-mismatch",
            SessionError::PrivacyAmp(_) => "privacy-amplification",
        }
    }
}

/// What the eavesdropper could know, computed from ground truth when the
/// channel is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecrecyAudit {
    /// `I(X;Y)` for the measured Alice/Bob disagreement, in bits per bit.
    pub mutual_information: f64,
    /// Plug-in `H(X|Z)` of Alice's bits given Eve's.
    pub eve_conditional_entropy: f64,
}

impl SecrecyAudit {
    /// Upper bound on the secret-key rate.
    pub fn bound(&self) -> f64 {
        self.mutual_information.min(self.eve_conditional_entropy)
    }

    /// Audits aligned Alice, Bob and Eve strings.
    pub fn from_bits(alice: &BitString, bob: &BitString, eve: &BitString) -> Option<Self> {
        let e = alice.error_rate(bob)?;
        Some(Self {
            mutual_information: stats::bsc_capacity(e).ok()?,
            eve_conditional_entropy: stats::conditional_entropy(alice, eve)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub session_id: SessionId,
    pub planner: PlannerConfig,
    pub audit: Option<SecrecyAudit>,
}

impl SessionConfig {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            planner: PlannerConfig::default(),
            audit: None,
        }
    }
}

/// Shared statistics of a completed session. Both roles produce identical
/// reports apart from `role`, `local_losses` and the timing fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub role: Role,
    pub rounds: usize,
    pub local_losses: usize,
    pub discards: usize,
    pub ties: usize,
    pub aligned_bits: usize,
    pub iterations: Vec<ParityStats>,
    pub plan: ReconciliationPlan,
    pub estimated_ber: f64,
    pub reconciled_length: u64,
    pub key_length: usize,
    pub key_digest: String,
    pub secrecy_upper_bound: f64,
    pub audit_bound: Option<f64>,
    pub elapsed_ns: u64,
}

impl SessionReport {
    pub fn key_rate_bits_per_minute(&self) -> f64 {
        if self.elapsed_ns == 0 {
            return 0.0;
        }
        self.key_length as f64 * 60e9 / self.elapsed_ns as f64
    }

    /// `field,value` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,value\n");
        let mut row = |k: &str, v: String| writeln!(out, "{k},{v}").unwrap();
        row("role", format!("{:?}", self.role).to_lowercase());
        row("rounds", self.rounds.to_string());
        row("local_losses", self.local_losses.to_string());
        row("discards", self.discards.to_string());
        row("ties", self.ties.to_string());
        row("aligned_bits", self.aligned_bits.to_string());
        for (i, s) in self.iterations.iter().enumerate() {
            row(&format!("iteration_{i}_mismatches"), s.mismatches.to_string());
            row(&format!("iteration_{i}_pairs"), s.pairs.to_string());
        }
        row("total_iterations", self.plan.total_iterations.to_string());
        row("pa_block_size", self.plan.pa_block_size.to_string());
        row("ir_target_ber", format!("{:e}", self.plan.ir_target_ber));
        row("estimated_ber", format!("{:.6}", self.estimated_ber));
        row("secrecy_upper_bound", format!("{:.6}", self.secrecy_upper_bound));
        if let Some(b) = self.audit_bound {
            row("audit_bound", format!("{b:.6}"));
        }
        row("reconciled_length", self.reconciled_length.to_string());
        row("key_length", self.key_length.to_string());
        row("key_digest", self.key_digest.clone());
        row("elapsed_ns", self.elapsed_ns.to_string());
        row("key_rate_bits_per_minute", format!("{:.3}", self.key_rate_bits_per_minute()));
        out
    }
}

/// Public record needed to replay what an observer sees.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub discard_union: DiscardSet,
    pub tie_union: DiscardSet,
    pub keep_masks: Vec<BitString>,
}

#[derive(Debug)]
pub struct SessionOutcome {
    pub key: FinalKey,
    pub report: SessionReport,
    pub trace: SessionTrace,
}

fn exchange_discards<C: FrameChannel + ?Sized>(
    channel: &mut C,
    local: &DiscardSet,
    turn: Turn,
    rounds: usize,
) -> Result<DiscardSet, SessionError> {
    match exchange(channel, &Frame::DiscardSet(local.clone()), turn)? {
        Frame::DiscardSet(remote) => {
            if let Some(&index) = remote.indices().last().filter(|&&i| i as usize >= rounds) {
                return Err(SessionError::DiscardRange { index, rounds });
            }
            Ok(local.union(&remote))
        }
        other => Err(SessionError::UnexpectedFrame {
            expected: "DISCARD_SET",
            got: other.name(),
        }),
    }
}

/// Aligned, tie-free, interleaved bits from this party's samples, plus the
/// public discard record. No key material leaves this function except the
/// returned bits.
fn align<C: FrameChannel + ?Sized>(
    samples: &[RttSample],
    session_id: &SessionId,
    channel: &mut C,
    turn: Turn,
) -> Result<(BitString, DiscardSet, DiscardSet, usize), SessionError> {
    let local = extraction::local_discards(samples)?;
    let union = exchange_discards(channel, &local, turn, samples.len())?;
    let survivors = extraction::apply_discards(samples, &union)?;
    let extracted = extraction::extract_bits(&survivors)?;
    let ties = exchange_discards(channel, &extracted.ties, turn, samples.len())?;
    let bits = interleave(&extracted.without(&ties), session_id);
    Ok((bits, union, ties, local.len()))
}

/// Runs the post-rally protocol for one role.
pub fn run_session<C: FrameChannel + ?Sized>(
    role: Role,
    samples: &[RttSample],
    cfg: &SessionConfig,
    channel: &mut C,
) -> Result<SessionOutcome, SessionError> {
    cfg.planner.validate()?;
    if let Some(audit) = cfg.audit {
        if audit.bound() <= 0.0 {
            return Err(SessionError::SecrecyImpossible { bound: audit.bound() });
        }
    }
    let turn = role.turn();
    let (bits, discard_union, tie_union, local_losses) = align(samples, &cfg.session_id, channel, turn)?;
    let aligned_bits = bits.len();

    let mut reconciler = Reconciler::new(bits, turn);
    let plan = loop {
        reconciler.step(channel)?;
        match planner::make_plan(&reconciler.transcript().iterations, &cfg.planner)? {
            PlanDecision::Committed(plan) => break plan,
            PlanDecision::NotYet { .. } => {}
        }
    };
    match exchange(channel, &Frame::PlanCommit(plan), turn)? {
        Frame::PlanCommit(remote) => planner::cross_check(&plan, &remote)?,
        other => {
            return Err(SessionError::UnexpectedFrame {
                expected: "PLAN_COMMIT",
                got: other.name(),
            })
        }
    }
    while reconciler.iterations_done() < plan.total_iterations {
        reconciler.step(channel)?;
    }

    let transcript = reconciler.transcript().clone();
    let keep_masks = reconciler.keep_masks().to_vec();
    // fewer than k reconciled bits yields an empty, still confirmed, key
    let mut reconciled = reconciler.into_bits();
    let key = FinalKey::derive(&reconciled, plan.pa_block_size as usize, cfg.session_id)?;
    reconciled.wipe();
    let remote_digest = match exchange(channel, &Frame::KeyDigest(*key.digest()), turn)? {
        Frame::KeyDigest(d) => d,
        other => {
            return Err(SessionError::UnexpectedFrame {
                expected: "KEY_DIGEST",
                got: other.name(),
            })
        }
    };
    let key = verify_key(key, &remote_digest)?;

    let estimated_ber = planner::initial_ber_estimate(&transcript.iterations)?;
    let report = SessionReport {
        role,
        rounds: samples.len(),
        local_losses,
        discards: discard_union.len(),
        ties: tie_union.len(),
        aligned_bits,
        iterations: transcript.iterations,
        plan,
        estimated_ber,
        reconciled_length: transcript.final_length,
        key_length: key.len(),
        key_digest: hex::encode(key.digest()),
        secrecy_upper_bound: plan.predicted_secrecy_bound,
        audit_bound: cfg.audit.map(|a| a.bound()),
        elapsed_ns: 0,
    };
    Ok(SessionOutcome {
        key,
        report,
        trace: SessionTrace {
            discard_union,
            tie_union,
            keep_masks,
        },
    })
}
