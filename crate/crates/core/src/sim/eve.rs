//! Eavesdropper bookkeeping and Monte-Carlo checks of the channel model.

use rand::Rng;
use thiserror::Error;

use super::chain::EveObservation;
use super::delay::DelayModel;
use crate::extraction::DiscardSet;
use crate::reconcile::apply_keep_mask;
use crate::BitString;

pub const MIN_MONTE_CARLO_ROUNDS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EveError {
    #[error("eve has no observation of round {0}")]
    Missing(u32),
    #[error("eve and truth strings differ in length ({eve} vs {truth})")]
    LengthMismatch { eve: usize, truth: usize },
    #[error("keep mask {iteration} has {got} entries for {expected} pairs")]
    MaskMismatch { iteration: usize, expected: usize, got: usize },
    #[error("need at least {MIN_MONTE_CARLO_ROUNDS} rounds, got {0}")]
    TooFewRounds(usize),
}

/// Eve's bits for the rounds in `survivors`, thresholded at her own median
/// over those rounds, then with the rounds in `drop` removed.
///
/// A value equal to her median reads as 0; she has no tie exchange.
pub fn eve_bits(obs: &EveObservation, survivors: &[u32], drop: &DiscardSet) -> Result<BitString, EveError> {
    let mut values = Vec::with_capacity(survivors.len());
    for &i in survivors {
        let v = obs.intervals.get(i as usize).copied().flatten().ok_or(EveError::Missing(i))?;
        values.push(v);
    }
    if values.is_empty() {
        return Ok(BitString::new());
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // compared doubled, like the legitimate parties
    let median_x2 = if n % 2 == 1 { 2.0 * sorted[n / 2] } else { sorted[n / 2 - 1] + sorted[n / 2] };
    Ok(survivors
        .iter()
        .zip(&values)
        .filter(|(i, _)| !drop.contains(**i))
        .map(|(_, &v)| 2.0 * v > median_x2)
        .collect())
}

/// Eve's error rate against the legitimate kept bits, before reconciliation
/// (entry 0) and after each public keep mask is applied.
pub fn eve_track_reconciliation(
    eve: &BitString,
    truth: &BitString,
    keep_masks: &[BitString],
) -> Result<Vec<f64>, EveError> {
    if eve.len() != truth.len() {
        return Err(EveError::LengthMismatch {
            eve: eve.len(),
            truth: truth.len(),
        });
    }
    let mut e = eve.clone();
    let mut t = truth.clone();
    let mut out = Vec::with_capacity(keep_masks.len() + 1);
    out.push(e.error_rate(&t).unwrap_or(0.0));
    for (iteration, mask) in keep_masks.iter().enumerate() {
        if mask.len() != t.len() / 2 {
            return Err(EveError::MaskMismatch {
                iteration,
                expected: t.len() / 2,
                got: mask.len(),
            });
        }
        e = apply_keep_mask(&e, mask);
        t = apply_keep_mask(&t, mask);
        out.push(e.error_rate(&t).unwrap_or(0.0));
    }
    Ok(out)
}

/// Disagreement rate of median-thresholded `T1+T2` and `T2+T3` with all
/// three transits drawn independently from `model`.
pub fn monte_carlo_ber<R: Rng + ?Sized>(model: &DelayModel, rounds: usize, rng: &mut R) -> Result<f64, EveError> {
    if rounds < MIN_MONTE_CARLO_ROUNDS {
        return Err(EveError::TooFewRounds(rounds));
    }
    let mut a = Vec::with_capacity(rounds);
    let mut b = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let (t1, t2, t3) = (model.sample(rng), model.sample(rng), model.sample(rng));
        a.push(t1 + t2);
        b.push(t2 + t3);
    }
    let med = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 { 2.0 * s[n / 2] } else { s[n / 2 - 1] + s[n / 2] }
    };
    let (ma, mb) = (med(&a), med(&b));
    let mut kept = 0usize;
    let mut errors = 0usize;
    for (&x, &y) in a.iter().zip(&b) {
        // drop rounds sitting exactly on either median
        if 2.0 * x == ma || 2.0 * y == mb {
            continue;
        }
        kept += 1;
        errors += ((2.0 * x > ma) != (2.0 * y > mb)) as usize;
    }
    Ok(if kept == 0 { 0.0 } else { errors as f64 / kept as f64 })
}

/// A uniform string and a copy passed through a BSC with error `e`.
pub fn bsc_pair<R: Rng + ?Sized>(n: usize, e: f64, rng: &mut R) -> (BitString, BitString) {
    let x: BitString = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let y = x.iter().map(|b| b ^ rng.random_bool(e)).collect();
    (x, y)
}
