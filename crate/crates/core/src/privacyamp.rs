//! Block-parity privacy amplification and key confirmation.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::transport::SessionId;
use crate::BitString;

/// Domain-separation tag mixed into every key digest. Identical for both
/// roles so the digests are directly comparable.
pub const DIGEST_TAG: &[u8] = b"rttkey/final-key/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrivacyAmpError {
    #[error("block size must be at least 1")]
    ZeroBlock,
    #[error("key digests differ; key material destroyed")]
    DigestMismatch,
}

/// XOR of each full block of `k` bits. Leftover bits are dropped.
pub fn parity_compress(bits: &BitString, k: usize) -> Result<BitString, PrivacyAmpError> {
    if k == 0 {
        return Err(PrivacyAmpError::ZeroBlock);
    }
    let blocks = bits.len() / k;
    Ok((0..blocks)
        .map(|b| (b * k..b * k + k).fold(false, |acc, i| acc ^ bits.get(i).unwrap()))
        .collect())
}

pub fn key_digest(key: &BitString, session_id: &SessionId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(key.to_bytes());
    h.update(session_id);
    h.update(DIGEST_TAG);
    h.finalize().into()
}

#[derive(Clone, PartialEq, Eq)]
pub struct FinalKey {
    key: BitString,
    digest: [u8; 32],
    source_session: SessionId,
}

impl FinalKey {
    pub fn new(key: BitString, source_session: SessionId) -> Self {
        let digest = key_digest(&key, &source_session);
        Self {
            key,
            digest,
            source_session,
        }
    }

    /// Compresses reconciled bits with blocks of `k` and wraps the result.
    pub fn derive(reconciled: &BitString, k: usize, session: SessionId) -> Result<Self, PrivacyAmpError> {
        Ok(Self::new(parity_compress(reconciled, k)?, session))
    }

    pub fn key(&self) -> &BitString {
        &self.key
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn session(&self) -> &SessionId {
        &self.source_session
    }

    pub fn len(&self) -> usize {
        self.key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key.is_empty()
    }

    pub fn into_key(mut self) -> BitString {
        std::mem::take(&mut self.key)
    }
}

impl std::fmt::Debug for FinalKey {
    // never print key bits
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FinalKey")
            .field("len", &self.key.len())
            .field("digest", &hex::encode(self.digest))
            .finish()
    }
}

impl Drop for FinalKey {
    fn drop(&mut self) {
        self.key.wipe();
    }
}

/// Returns the key if the peer's digest matches; otherwise wipes it.
pub fn verify_key(local: FinalKey, remote_digest: &[u8; 32]) -> Result<FinalKey, PrivacyAmpError> {
    if local.digest == *remote_digest {
        Ok(local)
    } else {
        drop(local);
        Err(PrivacyAmpError::DigestMismatch)
    }
}

/// Pearson chi-square statistic of 4-bit nibble counts, 15 degrees of
/// freedom under uniformity.
pub fn nibble_chi_square(bits: &BitString) -> Option<f64> {
    let nibbles = bits.len() / 4;
    if nibbles == 0 {
        return None;
    }
    let mut counts = [0u64; 16];
    for n in 0..nibbles {
        let v = (0..4).fold(0usize, |acc, j| (acc << 1) | bits.get(4 * n + j).unwrap() as usize);
        counts[v] += 1;
    }
    let expected = nibbles as f64 / 16.0;
    Some(counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum())
}

/// Upper 1% point of chi-square with 15 degrees of freedom.
pub const CHI_SQUARE_15_P01: f64 = 30.578;
