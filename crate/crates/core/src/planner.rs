//! Choosing how many reconciliation iterations to run and how hard to
//! compress afterwards.
//!
//! The planner is a pure function of the public parity statistics and the
//! configuration, so both endpoints reach the same plan independently and
//! only exchange it to confirm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{
    self, ber_interval_from_parities, invert_parity_mismatch, BerInterval, ParityStats, StatsError,
};

pub const DEFAULT_EVE_BER_FLOOR: f64 = 0.01;
pub const DEFAULT_FINAL_KEY_BER: f64 = 1e-6;
pub const DEFAULT_LEAKAGE_BUDGET: f64 = 1e-3;
pub const DEFAULT_ITERATION_CAP: u32 = 32;
pub const DEFAULT_BLOCK_CAP: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("block size would exceed {cap} to reach the leakage budget")]
    BlockSizeCap { cap: u32 },
    #[error("reconciliation did not converge within {cap} iterations")]
    NonConvergent { cap: u32 },
    #[error("no parity statistics to plan from")]
    NoEvidence,
    #[error("secrecy is impossible: secret-key rate bound is {bound}")]
    SecrecyImpossible { bound: f64 },
    #[error("plan mismatch: local {local:?}, peer {remote:?}")]
    Mismatch {
        local: ReconciliationPlan,
        remote: ReconciliationPlan,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Assumed lower bound on the eavesdropper's per-bit error.
    pub eve_ber_floor: f64,
    pub final_key_ber_target: f64,
    /// Eavesdropper information allowed per final key bit, in bits.
    pub per_bit_leakage_budget: f64,
    pub z: f64,
    pub iteration_cap: u32,
    pub block_cap: u32,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            eve_ber_floor: DEFAULT_EVE_BER_FLOOR,
            final_key_ber_target: DEFAULT_FINAL_KEY_BER,
            per_bit_leakage_budget: DEFAULT_LEAKAGE_BUDGET,
            z: stats::DEFAULT_Z,
            iteration_cap: DEFAULT_ITERATION_CAP,
            block_cap: DEFAULT_BLOCK_CAP,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let open_half = |name: &str, v: f64| {
            if v > 0.0 && v < 0.5 {
                Ok(())
            } else {
                Err(PlanError::Config(format!("{name} = {v} must lie in (0, 0.5)")))
            }
        };
        open_half("eve_ber_floor", self.eve_ber_floor)?;
        open_half("final_key_ber_target", self.final_key_ber_target)?;
        if !(self.per_bit_leakage_budget > 0.0) {
            return Err(PlanError::Config("leakage budget must be positive".into()));
        }
        if !(self.z > 0.0) {
            return Err(PlanError::Config("z must be positive".into()));
        }
        if self.iteration_cap == 0 || self.iteration_cap > u8::MAX as u32 {
            return Err(PlanError::Config("iteration cap must be in 1..=255".into()));
        }
        if self.block_cap == 0 {
            return Err(PlanError::Config("block cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationPlan {
    /// Iterations in total, counting those already run.
    pub total_iterations: u32,
    pub pa_block_size: u32,
    pub ir_target_ber: f64,
    pub predicted_secrecy_bound: f64,
}

/// Iteration count needed to push BER `e` down to a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationsNeeded {
    pub count: u32,
    /// False when the cap was hit before reaching the target.
    pub converged: bool,
}

pub fn iterations_needed(e: f64, target: f64) -> IterationsNeeded {
    iterations_needed_capped(e, target, DEFAULT_ITERATION_CAP)
}

pub fn iterations_needed_capped(e: f64, target: f64, cap: u32) -> IterationsNeeded {
    let mut ber = e.clamp(0.0, 0.5);
    for n in 0..=cap {
        if ber <= target {
            return IterationsNeeded {
                count: n,
                converged: true,
            };
        }
        ber = stats::pair_iteration_unchecked(ber);
    }
    IterationsNeeded {
        count: cap,
        converged: false,
    }
}

pub fn iteration_interval(ber: BerInterval, target: f64) -> (IterationsNeeded, IterationsNeeded) {
    iteration_interval_capped(ber, target, DEFAULT_ITERATION_CAP)
}

fn iteration_interval_capped(ber: BerInterval, target: f64, cap: u32) -> (IterationsNeeded, IterationsNeeded) {
    (
        iterations_needed_capped(ber.lo(), target, cap),
        iterations_needed_capped(ber.hi(), target, cap),
    )
}

/// Commits to the larger end once the interval spans at most two values.
pub fn commit_rule(interval: (u32, u32)) -> Option<u32> {
    let (lo, hi) = interval;
    (hi - lo <= 1).then_some(hi)
}

/// Smallest XOR block size leaving the eavesdropper at most `budget` bits of
/// information per output bit, given her per-bit error is at least `eve_floor`.
pub fn choose_block_size(eve_floor: f64, budget: f64) -> Result<u32, PlanError> {
    choose_block_size_capped(eve_floor, budget, DEFAULT_BLOCK_CAP)
}

pub fn choose_block_size_capped(eve_floor: f64, budget: f64, cap: u32) -> Result<u32, PlanError> {
    if !(eve_floor > 0.0 && eve_floor <= 0.5) {
        return Err(PlanError::Config(format!("eve floor {eve_floor} outside (0, 0.5]")));
    }
    if !(budget > 0.0) {
        return Err(PlanError::Config("leakage budget must be positive".into()));
    }
    for k in 1..=cap {
        let p = stats::eve_parity_error(eve_floor, k)?;
        if stats::bsc_capacity(p)? <= budget {
            return Ok(k);
        }
    }
    Err(PlanError::BlockSizeCap { cap })
}

/// Per-bit BER the reconciled string must reach so that XOR blocks of `k`
/// bits still meet `final_target`.
pub fn compensate_ir_target(final_target: f64, k: u32) -> Result<f64, PlanError> {
    if !(final_target > 0.0 && final_target < 0.5) {
        return Err(PlanError::Config(format!("final target {final_target} outside (0, 0.5)")));
    }
    if k == 0 {
        return Err(StatsError::ZeroBlock.into());
    }
    // (1 - (1 - 2t)^(1/k)) / 2
    Ok(-((-2.0 * final_target).ln_1p() / k as f64).exp_m1() / 2.0)
}

/// Interval on the *initial* channel BER implied by every iteration's
/// parity statistics.
///
/// Iteration `j` sees bits whose error went through the pair recursion `j`
/// times, so its interval is pulled back through the inverse recursion and
/// intersected with the others. If sampling noise makes the intervals
/// disjoint the hull is used instead.
pub fn pooled_initial_interval(transcript: &[ParityStats], z: f64) -> Result<BerInterval, PlanError> {
    let mut pooled: Option<BerInterval> = None;
    let mut hull: Option<BerInterval> = None;
    let mut disjoint = false;
    for (j, s) in transcript.iter().enumerate() {
        if s.pairs == 0 {
            continue;
        }
        let local = ber_interval_from_parities(*s, z)?;
        let mut lo = local.lo();
        let mut hi = local.hi();
        for _ in 0..j {
            lo = stats::invert_pair_iteration_ber(lo)?;
            hi = stats::invert_pair_iteration_ber(hi)?;
        }
        let back = BerInterval::new(lo, hi);
        hull = Some(hull.map_or(back, |h| h.hull(&back)));
        pooled = match pooled {
            None => Some(back),
            Some(p) => match p.intersect(&back) {
                Some(i) => Some(i),
                None => {
                    disjoint = true;
                    Some(p)
                }
            },
        };
    }
    let chosen = if disjoint { hull } else { pooled };
    chosen.ok_or(PlanError::NoEvidence)
}

/// Point estimate of the initial channel BER from the first iteration.
pub fn initial_ber_estimate(transcript: &[ParityStats]) -> Result<f64, PlanError> {
    let first = transcript.first().ok_or(PlanError::NoEvidence)?;
    let m = first.mismatch_rate().ok_or(PlanError::NoEvidence)?;
    Ok(invert_parity_mismatch(m))
}

/// Outcome of a planning round.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanDecision {
    Committed(ReconciliationPlan),
    /// The iteration-count interval is still too wide; run another
    /// iteration and plan again.
    NotYet {
        initial_ber: BerInterval,
        interval: (u32, u32),
    },
}

/// Plans from the statistics of the iterations run so far.
///
/// Iterations already performed are a floor on both ends of the count
/// interval, so the interval always narrows to a committable width before
/// the iteration cap.
pub fn make_plan(transcript: &[ParityStats], config: &PlannerConfig) -> Result<PlanDecision, PlanError> {
    config.validate()?;
    if transcript.is_empty() {
        return Err(PlanError::NoEvidence);
    }
    let done = transcript.len() as u32;

    let estimate = initial_ber_estimate(transcript)?;
    let bound = stats::secrecy_upper_bound(estimate)?;
    if bound <= 0.0 {
        return Err(PlanError::SecrecyImpossible { bound });
    }

    let k = choose_block_size_capped(config.eve_ber_floor, config.per_bit_leakage_budget, config.block_cap)?;
    let ir_target = compensate_ir_target(config.final_key_ber_target, k)?;
    let initial = pooled_initial_interval(transcript, config.z)?;
    let (lo, hi) = iteration_interval_capped(initial, ir_target, config.iteration_cap);

    if !hi.converged && done >= config.iteration_cap {
        return Err(PlanError::NonConvergent {
            cap: config.iteration_cap,
        });
    }
    let interval = (lo.count.max(done), hi.count.max(done));
    match commit_rule(interval).filter(|_| hi.converged) {
        Some(total) => Ok(PlanDecision::Committed(ReconciliationPlan {
            total_iterations: total,
            pa_block_size: k,
            ir_target_ber: ir_target,
            predicted_secrecy_bound: bound,
        })),
        None if done >= config.iteration_cap => Err(PlanError::NonConvergent {
            cap: config.iteration_cap,
        }),
        None => Ok(PlanDecision::NotYet {
            initial_ber: initial,
            interval,
        }),
    }
}

/// Fails unless both endpoints committed to the same plan.
pub fn cross_check(local: &ReconciliationPlan, remote: &ReconciliationPlan) -> Result<(), PlanError> {
    let same = local.total_iterations == remote.total_iterations
        && local.pa_block_size == remote.pa_block_size
        && local.ir_target_ber.to_bits() == remote.ir_target_ber.to_bits()
        && local.predicted_secrecy_bound.to_bits() == remote.predicted_secrecy_bound.to_bits();
    if same {
        Ok(())
    } else {
        Err(PlanError::Mismatch {
            local: *local,
            remote: *remote,
        })
    }
}

/// Final-key BER predicted for a channel starting at `initial_ber`.
pub fn predicted_final_ber(initial_ber: f64, plan: &ReconciliationPlan) -> f64 {
    let mut e = initial_ber.clamp(0.0, 0.5);
    for _ in 0..plan.total_iterations {
        e = stats::pair_iteration_unchecked(e);
    }
    stats::xor_error_unchecked(e, plan.pa_block_size as f64)
}

/// Eavesdropper information per final key bit at the configured floor.
pub fn predicted_eve_leakage(eve_floor: f64, plan: &ReconciliationPlan) -> Result<f64, PlanError> {
    let p = stats::eve_parity_error(eve_floor, plan.pa_block_size)?;
    Ok(stats::bsc_capacity(p)?)
}
