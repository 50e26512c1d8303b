//! Secret-key agreement from round-trip-time randomness.
//!
//! Two endpoints rally UDP packets so that consecutive round trips share a
//! transit time, threshold their own RTTs at the median, reconcile the
//! resulting correlated bit strings by bit-pair iteration and compress the
//! result with block-parity hashing.

pub mod bits;
pub mod cli;
pub mod extraction;
pub mod planner;
pub mod privacyamp;
pub mod reconcile;
pub mod session;
pub mod sim;
pub mod stats;
pub mod transcript;
pub mod transport;

pub use bits::BitString;
