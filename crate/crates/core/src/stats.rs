//! Statistical kernels for the round-trip-time channel.
//!
//! Everything here is a pure function of its arguments. Probabilities are
//! plain `f64`s; functions that take a probability validate its range and
//! return [`StatsError::Domain`] instead of producing NaNs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard score used for confidence intervals unless configured otherwise.
pub const DEFAULT_Z: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    Domain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("confidence interval needs at least one trial")]
    NoTrials,
    #[error("{successes} successes out of {trials} trials")]
    TooManySuccesses { successes: u64, trials: u64 },
    #[error("block size must be at least 1")]
    ZeroBlock,
}

fn check(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64, StatsError> {
    if value.is_nan() || value < lo || value > hi {
        Err(StatsError::Domain { name, value, lo, hi })
    } else {
        Ok(value)
    }
}

/// Confidence interval on a bit-error probability, kept within `[0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerInterval {
    lo: f64,
    hi: f64,
}

impl BerInterval {
    /// Builds an interval, clamping both ends into `[0, 0.5]` and ordering them.
    ///
    /// A channel with error rate above one half is the same channel with its
    /// output relabelled, so values above 0.5 collapse onto 0.5.
    pub fn new(a: f64, b: f64) -> Self {
        let a = a.clamp(0.0, 0.5);
        let b = b.clamp(0.0, 0.5);
        Self {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn point(e: f64) -> Self {
        Self::new(e, e)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, e: f64) -> bool {
        self.lo <= e && e <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn intersect(&self, other: &BerInterval) -> Option<BerInterval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(BerInterval { lo, hi })
    }

    pub fn hull(&self, other: &BerInterval) -> BerInterval {
        BerInterval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

/// Interval on a generic binomial proportion, within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ProportionInterval {
    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Parity disagreement counts from one reconciliation iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ParityStats {
    pub mismatches: u64,
    pub pairs: u64,
}

impl ParityStats {
    pub fn new(mismatches: u64, pairs: u64) -> Result<Self, StatsError> {
        if mismatches > pairs {
            return Err(StatsError::TooManySuccesses {
                successes: mismatches,
                trials: pairs,
            });
        }
        Ok(Self { mismatches, pairs })
    }

    pub fn mismatch_rate(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.mismatches as f64 / self.pairs as f64)
    }

    /// Number of pair bits that survive the keep rule.
    pub fn kept(&self) -> u64 {
        self.pairs - self.mismatches
    }
}

/// Binary entropy in bits, with `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64, StatsError> {
    let p = check("p", p, 0.0, 1.0)?;
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// Capacity of a binary symmetric channel with crossover probability `e`.
pub fn bsc_capacity(e: f64) -> Result<f64, StatsError> {
    let e = check("e", e, 0.0, 1.0)?;
    // 1 - H(e) loses everything near e = 1/2; use the series there instead.
    let d = 1.0 - 2.0 * e;
    if d.abs() < 1e-3 {
        // 1 - H((1 - d)/2) = sum_{n>=1} d^{2n} / (2n(2n-1) ln 2)
        let d2 = d * d;
        let mut term = d2;
        let mut sum = 0.0;
        for n in 1..=6 {
            let n = n as f64;
            sum += term / (2.0 * n * (2.0 * n - 1.0));
            term *= d2;
        }
        return Ok(sum / std::f64::consts::LN_2);
    }
    Ok(1.0 - entropy_unchecked(e))
}

/// Upper bound on the secret-key rate between two parties whose bits differ
/// through a BSC with error `e_ab`: the mutual information of that channel.
pub fn secrecy_upper_bound(e_ab: f64) -> Result<f64, StatsError> {
    let e = check("e_ab", e_ab, 0.0, 0.5)?;
    bsc_capacity(e)
}

/// Bit error rate between two median-thresholded round-trip times that
/// share one of three i.i.d. symmetric transit times.
pub fn theoretical_ber_symmetric() -> f64 {
    1.0 / 3.0
}

/// Error rate of the kept bits after one bit-pair iteration over BSC(e).
pub fn pair_iteration_ber(e: f64) -> Result<f64, StatsError> {
    let e = check("e", e, 0.0, 0.5)?;
    Ok(pair_iteration_unchecked(e))
}

pub(crate) fn pair_iteration_unchecked(e: f64) -> f64 {
    let a = e * e;
    let b = (1.0 - e) * (1.0 - e);
    a / (a + b)
}

/// Inverse of [`pair_iteration_ber`] on `[0, 0.5]`.
pub fn invert_pair_iteration_ber(y: f64) -> Result<f64, StatsError> {
    let y = check("y", y, 0.0, 0.5)?;
    // e/(1-e) = sqrt(y/(1-y))
    let s = y.sqrt();
    Ok(s / (s + (1.0 - y).sqrt()))
}

/// Probability that a pair's parities disagree over BSC(e).
pub fn parity_mismatch_rate(e: f64) -> Result<f64, StatsError> {
    let e = check("e", e, 0.0, 0.5)?;
    Ok(2.0 * e * (1.0 - e))
}

/// Channel error rate whose pair-parity mismatch rate is `m`.
///
/// Mismatch rates above one half are outside the model and map to 0.5.
pub fn invert_parity_mismatch(m: f64) -> f64 {
    let m = m.clamp(0.0, 0.5);
    // (1 - sqrt(1 - 2m)) / 2, rearranged to avoid cancellation for small m
    m / (1.0 + (1.0 - 2.0 * m).max(0.0).sqrt())
}

/// Agresti-Coull interval for a binomial proportion at standard score `z`.
pub fn agresti_coull(successes: u64, trials: u64, z: f64) -> Result<ProportionInterval, StatsError> {
    if trials == 0 {
        return Err(StatsError::NoTrials);
    }
    if successes > trials {
        return Err(StatsError::TooManySuccesses { successes, trials });
    }
    if z.is_nan() || z <= 0.0 {
        return Err(StatsError::Domain {
            name: "z",
            value: z,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let z2 = z * z;
    let n = trials as f64 + z2;
    let p = (successes as f64 + z2 / 2.0) / n;
    let half = z * (p * (1.0 - p) / n).sqrt();
    Ok(ProportionInterval {
        lo: (p - half).max(0.0),
        hi: (p + half).min(1.0),
    })
}

/// Confidence interval on the channel BER from observed parity mismatches.
pub fn ber_interval_from_parities(stats: ParityStats, z: f64) -> Result<BerInterval, StatsError> {
    let ci = agresti_coull(stats.mismatches, stats.pairs, z)?;
    Ok(BerInterval::new(
        invert_parity_mismatch(ci.lo),
        invert_parity_mismatch(ci.hi),
    ))
}

/// Error probability of the XOR of `k` bits, each independently wrong with
/// probability `eps`.
pub fn eve_parity_error(eps: f64, k: u32) -> Result<f64, StatsError> {
    let eps = check("eps", eps, 0.0, 0.5)?;
    if k == 0 {
        return Err(StatsError::ZeroBlock);
    }
    Ok(xor_error_unchecked(eps, k as f64))
}

pub(crate) fn xor_error_unchecked(eps: f64, k: f64) -> f64 {
    if eps >= 0.5 {
        return 0.5;
    }
    // (1 - (1 - 2 eps)^k) / 2
    -(k * (-2.0 * eps).ln_1p()).exp_m1() / 2.0
}

/// Plug-in estimate of `H(X | Z)` in bits from paired binary samples.
///
/// Returns `None` for empty or unequal-length inputs.
pub fn conditional_entropy(x: &crate::BitString, z: &crate::BitString) -> Option<f64> {
    if x.len() != z.len() || x.is_empty() {
        return None;
    }
    let mut counts = [[0u64; 2]; 2];
    for (xb, zb) in x.iter().zip(z.iter()) {
        counts[zb as usize][xb as usize] += 1;
    }
    let n = x.len() as f64;
    let h = counts
        .iter()
        .map(|row| {
            let total = row[0] + row[1];
            if total == 0 {
                0.0
            } else {
                total as f64 / n * entropy_unchecked(row[1] as f64 / total as f64)
            }
        })
        .sum();
    Some(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Enumerates the four joint error patterns of a bit pair.
    fn pair_oracle(e: f64) -> (f64, f64) {
        let mut agree = 0.0;
        let mut kept_err = 0.0;
        let mut mismatch = 0.0;
        for e1 in [false, true] {
            for e2 in [false, true] {
                let p = (if e1 { e } else { 1.0 - e }) * (if e2 { e } else { 1.0 - e });
                if e1 == e2 {
                    agree += p;
                    if e1 {
                        kept_err += p;
                    }
                } else {
                    mismatch += p;
                }
            }
        }
        (kept_err / agree, mismatch)
    }

    // Sums the probability of odd-weight error patterns over k bits.
    fn xor_oracle(eps: f64, k: u32) -> f64 {
        (0u32..1 << k)
            .filter(|pat| pat.count_ones() % 2 == 1)
            .map(|pat| {
                let w = pat.count_ones() as i32;
                eps.powi(w) * (1.0 - eps).powi(k as i32 - w)
            })
            .sum()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(1.0 / 3.0).unwrap() - 0.918_296).abs() < 1e-6);
        assert!(binary_entropy(1.2).is_err());
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn capacity_values() {
        let c = bsc_capacity(1.0 / 3.0).unwrap();
        assert!((c - 0.0817).abs() < 1e-4);
        assert_eq!(format!("{c:.2}"), "0.08");
        assert_eq!(bsc_capacity(0.0).unwrap(), 1.0);
        assert_eq!(bsc_capacity(0.5).unwrap(), 0.0);
        assert!(bsc_capacity(2.0).is_err());
    }

    #[test]
    fn capacity_series_matches_direct_form() {
        for e in [0.4995, 0.49999, 0.5004] {
            let direct = 1.0 - entropy_unchecked(e);
            assert!((bsc_capacity(e).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn secrecy_bound_values() {
        assert!((secrecy_upper_bound(1.0 / 3.0).unwrap() - 0.0817).abs() < 1e-4);
        assert_eq!(secrecy_upper_bound(0.5).unwrap(), 0.0);
        assert!((secrecy_upper_bound(0.11).unwrap() - 0.5002).abs() < 5e-4);
        assert!(secrecy_upper_bound(0.6).is_err());
    }

    #[test]
    fn symmetric_ber_is_one_third() {
        assert_eq!(theoretical_ber_symmetric(), 1.0 / 3.0);
    }

    #[test]
    fn pair_iteration_matches_enumeration() {
        let (kept, mis) = pair_oracle(1.0 / 3.0);
        assert!((kept - 0.2).abs() < 1e-12);
        assert!((mis - 4.0 / 9.0).abs() < 1e-12);
        assert!((pair_iteration_ber(1.0 / 3.0).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(pair_iteration_ber(0.0).unwrap(), 0.0);
        assert_eq!(pair_iteration_ber(0.5).unwrap(), 0.5);
        assert!(pair_iteration_ber(0.7).is_err());
        for e in [0.01, 0.05, 0.1, 0.25, 0.4] {
            let (kept, mis) = pair_oracle(e);
            assert!((pair_iteration_ber(e).unwrap() - kept).abs() < 1e-14);
            assert!((parity_mismatch_rate(e).unwrap() - mis).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatch_rate_values() {
        assert!((parity_mismatch_rate(1.0 / 3.0).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(parity_mismatch_rate(0.0).unwrap(), 0.0);
        assert_eq!(parity_mismatch_rate(0.5).unwrap(), 0.5);
        assert!(parity_mismatch_rate(-0.01).is_err());
    }

    #[test]
    fn mismatch_inversion() {
        assert!((invert_parity_mismatch(4.0 / 9.0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(invert_parity_mismatch(0.0), 0.0);
        assert_eq!(invert_parity_mismatch(0.6), 0.5);
        assert_eq!(invert_parity_mismatch(0.5), 0.5);
    }

    #[test]
    fn agresti_coull_values() {
        let ci = agresti_coull(50, 100, 2.0).unwrap();
        assert!((ci.lo - 0.4019).abs() < 1e-3);
        assert!((ci.hi - 0.5981).abs() < 1e-3);
        assert_eq!(agresti_coull(0, 100, 2.0).unwrap().lo, 0.0);
        assert_eq!(agresti_coull(100, 100, 2.0).unwrap().hi, 1.0);
        assert_eq!(agresti_coull(0, 0, 2.0), Err(StatsError::NoTrials));
        assert!(agresti_coull(5, 4, 2.0).is_err());
        assert!(agresti_coull(1, 4, 0.0).is_err());
    }

    #[test]
    fn parity_interval_values() {
        let ci = ber_interval_from_parities(ParityStats::new(444, 1000).unwrap(), 2.0).unwrap();
        assert!(ci.contains(1.0 / 3.0), "{ci:?}");
        let ci = ber_interval_from_parities(ParityStats::new(0, 1000).unwrap(), 2.0).unwrap();
        assert_eq!(ci.lo(), 0.0);
        assert!(ber_interval_from_parities(ParityStats::default(), 2.0).is_err());
    }

    #[test]
    fn parity_interval_monotone_in_mismatches() {
        let pairs = 400;
        let mut prev = BerInterval::point(0.0);
        for m in 0..=pairs {
            let ci = ber_interval_from_parities(ParityStats::new(m, pairs).unwrap(), 2.0).unwrap();
            assert!(ci.lo() >= prev.lo() && ci.hi() >= prev.hi(), "m = {m}");
            assert!(ci.lo() <= ci.hi());
            prev = ci;
        }
    }

    #[test]
    fn eve_parity_error_values() {
        assert!((eve_parity_error(0.02, 4).unwrap() - 0.075_326_7).abs() < 1e-6);
        assert!((xor_oracle(0.02, 4) - 0.075_326_7).abs() < 1e-6);
        for k in [1, 7, 100] {
            assert_eq!(eve_parity_error(0.0, k).unwrap(), 0.0);
            assert_eq!(eve_parity_error(0.5, k).unwrap(), 0.5);
        }
        assert_eq!(eve_parity_error(0.1, 0), Err(StatsError::ZeroBlock));
        assert!(eve_parity_error(0.6, 2).is_err());
    }

    #[test]
    fn eve_parity_error_composes_by_enumeration() {
        for eps in [0.02, 0.1, 0.3] {
            for k in 1..=6u32 {
                assert!((eve_parity_error(eps, k).unwrap() - xor_oracle(eps, k)).abs() < 1e-12);
                for a in 1..k {
                    let pa = eve_parity_error(eps, a).unwrap();
                    let pb = eve_parity_error(eps, k - a).unwrap();
                    let composed = pa * (1.0 - pb) + pb * (1.0 - pa);
                    assert!((eve_parity_error(eps, k).unwrap() - composed).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conditional_entropy_extremes() {
        let x = crate::BitString::parse("0110100110010110").unwrap();
        assert_eq!(conditional_entropy(&x, &x), Some(0.0));
        let z = crate::BitString::zeros(x.len());
        assert!((conditional_entropy(&x, &z).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(conditional_entropy(&x, &crate::BitString::zeros(3)), None);
    }

    proptest! {
        #[test]
        fn pair_iteration_never_increases_error(e in 0.0f64..=0.5) {
            let f = pair_iteration_ber(e).unwrap();
            prop_assert!(f <= e);
            if e > 1e-9 && e < 0.5 - 1e-9 {
                prop_assert!(f < e);
            }
        }

        #[test]
        fn mismatch_inversion_round_trips(e in 0.0f64..=0.5) {
            let back = invert_parity_mismatch(parity_mismatch_rate(e).unwrap());
            // Near 0.5 the map flattens, so compare in mismatch space there.
            if e < 0.49 {
                prop_assert!((back - e).abs() < 1e-12, "e={} back={}", e, back);
            } else {
                prop_assert!((parity_mismatch_rate(back).unwrap() - parity_mismatch_rate(e).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn pair_iteration_inverse_round_trips(e in 0.0f64..=0.5) {
            let back = invert_pair_iteration_ber(pair_iteration_ber(e).unwrap()).unwrap();
            prop_assert!((back - e).abs() < 1e-9);
        }

        #[test]
        fn capacity_decreasing_and_symmetric(a in 0.0f64..0.5, b in 0.0f64..0.5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi - lo > 1e-6 {
                prop_assert!(bsc_capacity(lo).unwrap() > bsc_capacity(hi).unwrap());
            }
            prop_assert!((bsc_capacity(a).unwrap() - bsc_capacity(1.0 - a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn eve_error_grows_with_block(eps in 0.001f64..0.499, k in 1u32..500) {
            prop_assert!(eve_parity_error(eps, k + 1).unwrap() >= eve_parity_error(eps, k).unwrap());
            prop_assert!((eve_parity_error(eps, 1).unwrap() - eps).abs() < 1e-15);
        }

        #[test]
        fn agresti_coull_narrows_with_trials(num in 0u64..=10, scale in 1u64..50) {
            let small = agresti_coull(num * scale, 10 * scale, 2.0).unwrap();
            let large = agresti_coull(num * scale * 4, 40 * scale, 2.0).unwrap();
            prop_assert!(large.width() < small.width());
        }
    }
}
