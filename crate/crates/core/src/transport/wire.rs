//! Byte layouts for rally datagrams and reconciliation frames.
//!
//! All multi-byte integers are big-endian. Packets carry sequence numbers
//! only; no clock reading is ever encoded.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::extraction::DiscardSet;
use crate::planner::ReconciliationPlan;
use crate::BitString;

pub const MAGIC: [u8; 4] = *b"KSRT";
pub const VERSION: u8 = 0x01;
pub const RALLY_PACKET_LEN: usize = 26;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME_PAYLOAD: usize = 1 << 24;
pub const FRAME_HEADER_LEN: usize = 5;

pub type SessionId = [u8; 16];

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated input: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown frame type 0x{0:02x}")]
    UnknownFrame(u8),
    #[error("frame payload of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("malformed {kind} payload: {detail}")]
    Malformed { kind: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Probe = 0x01,
    Echo = 0x02,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RallyPacket {
    pub kind: PacketKind,
    pub session_id: SessionId,
    pub seq: u32,
}

impl RallyPacket {
    pub fn probe(session_id: SessionId, seq: u32) -> Self {
        Self {
            kind: PacketKind::Probe,
            session_id,
            seq,
        }
    }

    pub fn echo(session_id: SessionId, seq: u32) -> Self {
        Self {
            kind: PacketKind::Echo,
            session_id,
            seq,
        }
    }

    pub fn encode(&self) -> [u8; RALLY_PACKET_LEN] {
        let mut out = [0u8; RALLY_PACKET_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4] = VERSION;
        out[5] = self.kind as u8;
        out[6..22].copy_from_slice(&self.session_id);
        out[22..26].copy_from_slice(&self.seq.to_be_bytes());
        out
    }

    /// Parses a datagram. Anything that is not a well-formed current-version
    /// packet yields `None` and is to be ignored by the caller.
    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != RALLY_PACKET_LEN || bytes[..4] != MAGIC || bytes[4] != VERSION {
            return None;
        }
        let kind = match bytes[5] {
            0x01 => PacketKind::Probe,
            0x02 => PacketKind::Echo,
            _ => return None,
        };
        let mut session_id = [0u8; 16];
        session_id.copy_from_slice(&bytes[6..22]);
        let seq = u32::from_be_bytes(bytes[22..26].try_into().unwrap());
        Some(Self {
            kind,
            session_id,
            seq,
        })
    }
}

pub mod frame_type {
    pub const DISCARD_SET: u8 = 0x10;
    pub const PARITY_VECTOR: u8 = 0x11;
    pub const PLAN_COMMIT: u8 = 0x12;
    pub const KEY_DIGEST: u8 = 0x13;
}

/// One message on the reconciliation stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    DiscardSet(DiscardSet),
    ParityVector { iteration: u8, bits: BitString },
    PlanCommit(ReconciliationPlan),
    KeyDigest([u8; 32]),
}

impl Frame {
    pub fn type_byte(&self) -> u8 {
        match self {
            Frame::DiscardSet(_) => frame_type::DISCARD_SET,
            Frame::ParityVector { .. } => frame_type::PARITY_VECTOR,
            Frame::PlanCommit(_) => frame_type::PLAN_COMMIT,
            Frame::KeyDigest(_) => frame_type::KEY_DIGEST,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Frame::DiscardSet(_) => "DISCARD_SET",
            Frame::ParityVector { .. } => "PARITY_VECTOR",
            Frame::PlanCommit(_) => "PLAN_COMMIT",
            Frame::KeyDigest(_) => "KEY_DIGEST",
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            Frame::DiscardSet(set) => {
                let mut p = Vec::with_capacity(4 + 4 * set.len());
                p.extend_from_slice(&(set.len() as u32).to_be_bytes());
                for i in set.indices() {
                    p.extend_from_slice(&i.to_be_bytes());
                }
                p
            }
            Frame::ParityVector { iteration, bits } => {
                let mut p = Vec::with_capacity(5 + bits.len().div_ceil(8));
                p.push(*iteration);
                p.extend_from_slice(&(bits.len() as u32).to_be_bytes());
                p.extend_from_slice(&bits.to_bytes());
                p
            }
            Frame::PlanCommit(plan) => {
                let mut p = Vec::with_capacity(24);
                p.extend_from_slice(&plan.total_iterations.to_be_bytes());
                p.extend_from_slice(&plan.pa_block_size.to_be_bytes());
                p.extend_from_slice(&plan.ir_target_ber.to_bits().to_be_bytes());
                p.extend_from_slice(&plan.predicted_secrecy_bound.to_bits().to_be_bytes());
                p
            }
            Frame::KeyDigest(d) => d.to_vec(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
        out.push(self.type_byte());
        out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Decodes one frame from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
        let (ty, len) = parse_header(bytes)?;
        let total = FRAME_HEADER_LEN + len;
        if bytes.len() < total {
            return Err(WireError::Truncated {
                need: total,
                have: bytes.len(),
            });
        }
        let frame = Self::from_payload(ty, &bytes[FRAME_HEADER_LEN..total])?;
        Ok((frame, total))
    }

    pub fn from_payload(ty: u8, p: &[u8]) -> Result<Frame, WireError> {
        let malformed = |kind: &'static str, detail: String| WireError::Malformed { kind, detail };
        match ty {
            frame_type::DISCARD_SET => {
                let count = read_u32(p, 0).ok_or_else(|| malformed("DISCARD_SET", "missing count".into()))? as usize;
                if p.len() != 4 + 4 * count {
                    return Err(malformed(
                        "DISCARD_SET",
                        format!("count {count} needs {} bytes, have {}", 4 + 4 * count, p.len()),
                    ));
                }
                let indices = (0..count).map(|i| read_u32(p, 4 + 4 * i).unwrap()).collect();
                let set = DiscardSet::from_sorted(indices).map_err(|e| malformed("DISCARD_SET", e.to_string()))?;
                Ok(Frame::DiscardSet(set))
            }
            frame_type::PARITY_VECTOR => {
                if p.len() < 5 {
                    return Err(malformed("PARITY_VECTOR", "short header".into()));
                }
                let iteration = p[0];
                let nbits = read_u32(p, 1).unwrap() as usize;
                let bits = BitString::from_bytes(&p[5..], nbits).ok_or_else(|| {
                    malformed(
                        "PARITY_VECTOR",
                        format!("{nbits} bits need {} bytes, have {}", nbits.div_ceil(8), p.len() - 5),
                    )
                })?;
                Ok(Frame::ParityVector { iteration, bits })
            }
            frame_type::PLAN_COMMIT => {
                if p.len() != 24 {
                    return Err(malformed("PLAN_COMMIT", format!("expected 24 bytes, have {}", p.len())));
                }
                Ok(Frame::PlanCommit(ReconciliationPlan {
                    total_iterations: read_u32(p, 0).unwrap(),
                    pa_block_size: read_u32(p, 4).unwrap(),
                    ir_target_ber: f64::from_bits(u64::from_be_bytes(p[8..16].try_into().unwrap())),
                    predicted_secrecy_bound: f64::from_bits(u64::from_be_bytes(p[16..24].try_into().unwrap())),
                }))
            }
            frame_type::KEY_DIGEST => {
                let d: [u8; 32] = p
                    .try_into()
                    .map_err(|_| malformed("KEY_DIGEST", format!("expected 32 bytes, have {}", p.len())))?;
                Ok(Frame::KeyDigest(d))
            }
            other => Err(WireError::UnknownFrame(other)),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), WireError> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, WireError> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        r.read_exact(&mut header)?;
        let (ty, len) = parse_header(&header)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Self::from_payload(ty, &payload)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(u8, usize), WireError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(WireError::Truncated {
            need: FRAME_HEADER_LEN,
            have: bytes.len(),
        });
    }
    let len = read_u32(bytes, 1).unwrap() as usize;
    if len > MAX_FRAME_PAYLOAD {
        return Err(WireError::TooLarge(len));
    }
    Ok((bytes[0], len))
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rally_packet_layout() {
        let sid = [0xAB; 16];
        let bytes = RallyPacket::probe(sid, 0x0102_0304).encode();
        assert_eq!(&bytes[..6], &[0x4B, 0x53, 0x52, 0x54, 0x01, 0x01]);
        assert_eq!(&bytes[6..22], &sid);
        assert_eq!(&bytes[22..], &[1, 2, 3, 4]);
        assert_eq!(RallyPacket::echo(sid, 7).encode()[5], 0x02);
    }

    #[test]
    fn rally_packet_rejects_garbage() {
        let good = RallyPacket::echo([1; 16], 9).encode();
        assert!(RallyPacket::decode(&good).is_some());
        let mut bad = good;
        bad[0] = b'X';
        assert!(RallyPacket::decode(&bad).is_none());
        let mut bad = good;
        bad[4] = 0x02;
        assert!(RallyPacket::decode(&bad).is_none());
        let mut bad = good;
        bad[5] = 0x03;
        assert!(RallyPacket::decode(&bad).is_none());
        assert!(RallyPacket::decode(&good[..25]).is_none());
        assert!(RallyPacket::decode(&[good.as_slice(), &[0]].concat()).is_none());
    }

    #[test]
    fn discard_set_bytes() {
        let f = Frame::DiscardSet([1].into_iter().collect());
        assert_eq!(f.encode(), vec![0x10, 0, 0, 0, 8, 0, 0, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn parity_vector_payload_len() {
        let f = Frame::ParityVector {
            iteration: 3,
            bits: BitString::parse("101101101101").unwrap(),
        };
        let bytes = f.encode();
        assert_eq!(u32::from_be_bytes(bytes[1..5].try_into().unwrap()), 1 + 4 + 2);
        assert_eq!(&bytes[5..], &[3, 0, 0, 0, 12, 0b1011_0110, 0b1101_0000]);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(Frame::decode(&[0x10, 0, 0]), Err(WireError::Truncated { .. })));
        assert!(matches!(Frame::decode(&[0x42, 0, 0, 0, 0]), Err(WireError::UnknownFrame(0x42))));
        assert!(matches!(
            Frame::decode(&[0x10, 0, 0, 0, 8, 0, 0, 0, 2, 0, 0, 0, 1]),
            Err(WireError::Malformed { .. })
        ));
        // unsorted indices
        assert!(Frame::decode(&[0x10, 0, 0, 0, 12, 0, 0, 0, 2, 0, 0, 0, 5, 0, 0, 0, 1]).is_err());
        assert!(matches!(Frame::decode(&[0x13, 0, 0, 0, 1, 0]), Err(WireError::Malformed { .. })));
        assert!(matches!(Frame::decode(&[0x11, 0xFF, 0, 0, 0]), Err(WireError::TooLarge(_))));
    }

    proptest! {
        #[test]
        fn rally_packet_round_trips(kind in any::<bool>(), sid in any::<[u8; 16]>(), seq in any::<u32>()) {
            let p = if kind { RallyPacket::probe(sid, seq) } else { RallyPacket::echo(sid, seq) };
            prop_assert_eq!(RallyPacket::decode(&p.encode()), Some(p));
        }

        #[test]
        fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            let _ = RallyPacket::decode(&bytes);
            let _ = Frame::decode(&bytes);
        }
    }
}
