//! In-process chain simulator with an eavesdropper.

pub mod chain;
pub mod delay;
pub mod eve;
pub mod session;
pub mod topology;

pub use chain::{simulate_rallies, EveObservation, SimError, SimOptions, SimulatedRally};
pub use delay::{DelayModel, DelayModelError};
pub use eve::{bsc_pair, eve_bits, eve_track_reconciliation, monte_carlo_ber, EveError};
pub use topology::{ChainTopology, TopologyError};
pub use session::{
    simulate_bsc_reconciliation, simulate_chain, simulate_session, GroundTruth, SimSessionConfig, SimSessionError,
    SimSessionResult,
};
