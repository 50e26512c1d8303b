//! Packed bit strings.
//!
//! Bits are stored most-significant-bit first within each byte, which is also
//! the order they travel in on the wire. Pad bits after the last valid bit are
//! always zero in the exported byte form.

use std::fmt;

use bitvec::prelude::*;

/// A packed sequence of key bits.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bits: BitVec<u8, Msb0>,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bits: BitVec::with_capacity(bits),
        }
    }

    /// All-zero string of the given length.
    pub fn zeros(len: usize) -> Self {
        Self {
            bits: BitVec::repeat(false, len),
        }
    }

    /// Rebuilds a string from packed bytes, ignoring pad bits past `len`.
    ///
    /// Returns `None` if `bytes` is too short or has the wrong size for `len`.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let mut bits = BitVec::<u8, Msb0>::from_slice(bytes);
        bits.truncate(len);
        Some(Self { bits })
    }

    /// Parses a string of `'0'`/`'1'` characters; whitespace and `_` are skipped.
    pub fn parse(text: &str) -> Option<Self> {
        let mut out = Self::new();
        for c in text.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                c if c.is_whitespace() || c == '_' => {}
                _ => return None,
            }
        }
        Some(out)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        self.bits.get(index).map(|b| *b)
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.bits.set(index, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().by_vals()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.count_ones()
    }

    /// Packed bytes with zeroed trailing pad; `len().div_ceil(8)` bytes long.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bits = self.bits.clone();
        bits.set_uninitialized(false);
        bits.into_vec()
    }

    /// Number of positions where the two strings differ, over the common prefix.
    pub fn hamming_distance(&self, other: &BitString) -> usize {
        let n = self.len().min(other.len());
        (self.bits[..n].to_bitvec() ^ &other.bits[..n]).count_ones()
    }

    /// Fraction of disagreeing positions; `None` for unequal or empty strings.
    pub fn error_rate(&self, other: &BitString) -> Option<f64> {
        if self.len() != other.len() || self.is_empty() {
            return None;
        }
        Some(self.hamming_distance(other) as f64 / self.len() as f64)
    }

    /// Bitwise XOR of two equal-length strings.
    pub fn xor(&self, other: &BitString) -> Option<BitString> {
        if self.len() != other.len() {
            return None;
        }
        Some(Self {
            bits: self.bits.clone() ^ &other.bits,
        })
    }

    /// Overwrites every bit with zero and empties the string.
    pub fn wipe(&mut self) {
        self.bits.fill(false);
        self.bits.set_uninitialized(false);
        self.bits.clear();
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self {
            bits: iter.into_iter().collect(),
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len() <= 64 {
            write!(f, "BitString({self})")
        } else {
            write!(f, "BitString(len={})", self.len())
        }
    }
}
