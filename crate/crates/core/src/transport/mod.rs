//! Network side of a session: the UDP rally that produces round-trip
//! samples, and the framed stream that carries reconciliation traffic.

pub mod channel;
pub mod rally;
pub mod udp;
pub mod wire;

pub use channel::{ChannelError, FrameChannel, MemoryChannel, StreamChannel};
pub use rally::{Initiator, RallyConfig, RallyEndpoint, RallyError, Responder, Turnaround};
pub use udp::{run_udp_rally, MonotonicClock, UdpRallyError};
pub use wire::{Frame, PacketKind, RallyPacket, SessionId, WireError};
