//! Turning aligned round-trip times into bits by median thresholding.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::BitString;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error("sample index {0} appears more than once")]
    DuplicateIndex(u32),
    #[error("sample {position} has index {index}; samples must be numbered 0..N without gaps")]
    IndexGap { position: usize, index: u32 },
    #[error("discard set is missing locally unusable index {0}")]
    MissingDiscard(u32),
    #[error("need at least 2 surviving samples, have {0}")]
    TooFewSamples(usize),
    #[error("sample {0} is not a completed measurement")]
    NotSurviving(u32),
    #[error("discard indices must be strictly increasing")]
    Unsorted,
    #[error("discard index {index} is beyond the session's {rounds} rounds")]
    OutOfRange { index: u32, rounds: u32 },
}

/// Outcome of one round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleStatus {
    /// Completed; round-trip time in nanoseconds of the local monotonic clock.
    Ok(u64),
    TimedOut,
    /// Structurally undefined, e.g. the responder's final round.
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttSample {
    pub index: u32,
    pub status: SampleStatus,
}

impl RttSample {
    pub fn ok(index: u32, rtt_ns: u64) -> Self {
        debug_assert!(rtt_ns > 0);
        Self {
            index,
            status: SampleStatus::Ok(rtt_ns),
        }
    }

    pub fn timed_out(index: u32) -> Self {
        Self {
            index,
            status: SampleStatus::TimedOut,
        }
    }

    pub fn discarded(index: u32) -> Self {
        Self {
            index,
            status: SampleStatus::Discarded,
        }
    }

    pub fn rtt(&self) -> Option<u64> {
        match self.status {
            SampleStatus::Ok(ns) => Some(ns),
            _ => None,
        }
    }
}

/// Strictly increasing set of round indices to drop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscardSet {
    indices: Vec<u32>,
}

impl DiscardSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates a received index list.
    pub fn from_sorted(indices: Vec<u32>) -> Result<Self, ExtractionError> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExtractionError::Unsorted);
        }
        Ok(Self { indices })
    }

    pub fn check_range(&self, rounds: u32) -> Result<(), ExtractionError> {
        match self.indices.last() {
            Some(&index) if index >= rounds => Err(ExtractionError::OutOfRange { index, rounds }),
            _ => Ok(()),
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: u32) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn union(&self, other: &DiscardSet) -> DiscardSet {
        let merged: BTreeSet<u32> = self.indices.iter().chain(&other.indices).copied().collect();
        DiscardSet {
            indices: merged.into_iter().collect(),
        }
    }
}

impl FromIterator<u32> for DiscardSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let set: BTreeSet<u32> = iter.into_iter().collect();
        DiscardSet {
            indices: set.into_iter().collect(),
        }
    }
}

fn check_indexing(samples: &[RttSample]) -> Result<(), ExtractionError> {
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.index) {
            return Err(ExtractionError::DuplicateIndex(s.index));
        }
    }
    for (position, s) in samples.iter().enumerate() {
        if s.index as usize != position {
            return Err(ExtractionError::IndexGap {
                position,
                index: s.index,
            });
        }
    }
    Ok(())
}

/// Indices of rounds this party could not measure.
pub fn local_discards(samples: &[RttSample]) -> Result<DiscardSet, ExtractionError> {
    check_indexing(samples)?;
    Ok(samples
        .iter()
        .filter(|s| s.rtt().is_none())
        .map(|s| s.index)
        .collect())
}

/// Drops every sample named in `union`, which must cover all local losses.
pub fn apply_discards(samples: &[RttSample], union: &DiscardSet) -> Result<Vec<RttSample>, ExtractionError> {
    let mut out = Vec::with_capacity(samples.len().saturating_sub(union.len()));
    for s in samples {
        if union.contains(s.index) {
            continue;
        }
        if s.rtt().is_none() {
            return Err(ExtractionError::MissingDiscard(s.index));
        }
        out.push(*s);
    }
    Ok(out)
}

/// Bits extracted from one party's surviving samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub bits: BitString,
    /// Round index of each bit.
    pub indices: Vec<u32>,
    /// Rounds whose time equalled the median and so carry no bit.
    pub ties: DiscardSet,
    /// Twice the median, kept exact for integer nanoseconds.
    pub median_x2: u128,
}

impl Extraction {
    /// Removes the bits of the given rounds, typically the peer's ties.
    pub fn without(&self, drop: &DiscardSet) -> BitString {
        self.indices
            .iter()
            .zip(self.bits.iter())
            .filter(|(i, _)| !drop.contains(**i))
            .map(|(_, b)| b)
            .collect()
    }
}

/// Twice the median of `values`; even counts average the middle pair.
pub fn median_x2(values: &mut [u64]) -> Option<u128> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    values.sort_unstable();
    Some(if n % 2 == 1 {
        2 * values[n / 2] as u128
    } else {
        values[n / 2 - 1] as u128 + values[n / 2] as u128
    })
}

/// Thresholds surviving samples at their own median: above is 1, below is 0.
pub fn extract_bits(samples: &[RttSample]) -> Result<Extraction, ExtractionError> {
    if samples.len() < 2 {
        return Err(ExtractionError::TooFewSamples(samples.len()));
    }
    let mut rtts = Vec::with_capacity(samples.len());
    for s in samples {
        rtts.push(s.rtt().ok_or(ExtractionError::NotSurviving(s.index))?);
    }
    let median_x2 = median_x2(&mut rtts.clone()).expect("non-empty");

    let mut bits = BitString::with_capacity(samples.len());
    let mut indices = Vec::with_capacity(samples.len());
    let mut ties = Vec::new();
    for (s, &rtt) in samples.iter().zip(&rtts) {
        let scaled = 2 * rtt as u128;
        if scaled == median_x2 {
            ties.push(s.index);
        } else {
            bits.push(scaled > median_x2);
            indices.push(s.index);
        }
    }
    Ok(Extraction {
        bits,
        indices,
        ties: ties.into_iter().collect(),
        median_x2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn oks(rtts: &[u64]) -> Vec<RttSample> {
        rtts.iter()
            .enumerate()
            .map(|(i, &r)| RttSample::ok(i as u32, r))
            .collect()
    }

    #[test]
    fn local_discards_filters_timeouts() {
        assert!(local_discards(&oks(&[1, 2, 3])).unwrap().is_empty());
        let s = vec![RttSample::ok(0, 5), RttSample::timed_out(1), RttSample::ok(2, 7)];
        assert_eq!(local_discards(&s).unwrap().indices(), &[1]);
    }

    #[test]
    fn local_discards_rejects_bad_indexing() {
        let dup = vec![RttSample::ok(0, 5), RttSample::ok(0, 7)];
        assert_eq!(local_discards(&dup), Err(ExtractionError::DuplicateIndex(0)));
        let gap = vec![RttSample::ok(0, 5), RttSample::ok(2, 7)];
        assert!(matches!(local_discards(&gap), Err(ExtractionError::IndexGap { .. })));
    }

    #[test]
    fn local_discards_with_one_percent_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<_> = (0..30_000)
            .map(|i| {
                if rng.random_bool(0.01) {
                    RttSample::timed_out(i)
                } else {
                    RttSample::ok(i, 1000)
                }
            })
            .collect();
        let n = local_discards(&samples).unwrap().len() as f64;
        // 300 expected, binomial sd ~17.2
        assert!((n - 300.0).abs() < 4.0 * 17.3, "{n}");
    }

    #[test]
    fn apply_discards_cases() {
        let s = oks(&[4, 5, 6]);
        assert_eq!(apply_discards(&s, &DiscardSet::new()).unwrap(), s);
        let kept = apply_discards(&s, &[1].into_iter().collect()).unwrap();
        assert_eq!(kept.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 2]);
        let lossy = vec![RttSample::ok(0, 5), RttSample::timed_out(1)];
        assert_eq!(
            apply_discards(&lossy, &DiscardSet::new()),
            Err(ExtractionError::MissingDiscard(1))
        );
    }

    #[test]
    fn disjoint_drop_sets_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let make = |rng: &mut ChaCha8Rng| -> Vec<RttSample> {
            (0..2000)
                .map(|i| {
                    if rng.random_bool(0.03) {
                        RttSample::timed_out(i)
                    } else {
                        RttSample::ok(i, rng.random_range(1..1_000_000))
                    }
                })
                .collect()
        };
        let a = make(&mut rng);
        let b = make(&mut rng);
        let union = local_discards(&a).unwrap().union(&local_discards(&b).unwrap());
        let a = apply_discards(&a, &union).unwrap();
        let b = apply_discards(&b, &union).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.index == y.index));
    }

    #[test]
    fn threshold_examples() {
        let e = extract_bits(&oks(&[1, 2, 4, 5])).unwrap();
        assert_eq!(e.bits.to_string(), "0011");
        assert!(e.ties.is_empty());
        assert_eq!(e.median_x2, 6);

        let e = extract_bits(&oks(&[1, 2, 3, 4, 5])).unwrap();
        assert_eq!(e.bits.to_string(), "0011");
        assert_eq!(e.ties.indices(), &[2]);

        assert_eq!(extract_bits(&oks(&[1])), Err(ExtractionError::TooFewSamples(1)));
        let s = vec![RttSample::ok(0, 1), RttSample::timed_out(1)];
        assert_eq!(extract_bits(&s), Err(ExtractionError::NotSurviving(1)));
    }

    #[test]
    fn peer_ties_line_up() {
        let a = extract_bits(&oks(&[10, 20, 30, 40, 50])).unwrap();
        let b = extract_bits(&oks(&[12, 33, 31, 8, 60])).unwrap();
        let ties = a.ties.union(&b.ties);
        assert_eq!(a.without(&ties).len(), b.without(&ties).len());
    }

    #[test]
    fn normal_rtts_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(50e6, 2e6).unwrap();
        let rtts: Vec<u64> = (0..100_000).map(|_| normal.sample(&mut rng) as u64).collect();
        let e = extract_bits(&oks(&rtts)).unwrap();
        let frac = e.bits.count_ones() as f64 / e.bits.len() as f64;
        assert!((frac - 0.5).abs() < 0.01);
    }

    #[test]
    fn discard_set_validation() {
        assert!(DiscardSet::from_sorted(vec![1, 1]).is_err());
        assert!(DiscardSet::from_sorted(vec![3, 2]).is_err());
        let d = DiscardSet::from_sorted(vec![1, 5]).unwrap();
        assert!(d.check_range(6).is_ok());
        assert!(d.check_range(5).is_err());
    }

    proptest! {
        #[test]
        fn distinct_values_split_evenly(mut rtts in proptest::collection::hash_set(1u64..1_000_000, 2..300)) {
            let rtts: Vec<u64> = rtts.drain().collect();
            let e = extract_bits(&oks(&rtts)).unwrap();
            let ones = e.bits.count_ones() as i64;
            let zeros = e.bits.len() as i64 - ones;
            prop_assert_eq!(ones, zeros);
        }

        #[test]
        fn invariant_under_increasing_transform(rtts in proptest::collection::vec(1u64..100_000, 2..200)) {
            let base = extract_bits(&oks(&rtts)).unwrap();
            let warped: Vec<u64> = rtts.iter().map(|&r| 3 * r * r + 17).collect();
            let other = extract_bits(&oks(&warped)).unwrap();
            prop_assert_eq!(base.bits, other.bits);
            prop_assert_eq!(base.ties, other.ties);
        }
    }
}
