//! Round message encoding.
//!
//! Header (little-endian): `u64 round_id`, `u32 sender`, `u32 recipient`,
//! `u8 kind`. Bodies:
//!
//! | kind | body |
//! |------|------|
//! | 0 client share | fixed-point vector |
//! | 1 compute partial | fixed-point vector, then an id set |
//! | 2 participant set | id set |
//! | 3 abort | id set of dropped clients |
//!
//! An id set is a `u32` count followed by that many `u32` client ids.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointVector;
use crate::transport::PartyId;

pub const HEADER_LEN: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    ClientShare = 0,
    ComputePartial = 1,
    ParticipantSet = 2,
    Abort = 3,
}

impl TryFrom<u8> for MessageKind {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Self::ClientShare,
            1 => Self::ComputePartial,
            2 => Self::ParticipantSet,
            3 => Self::Abort,
            other => return Err(Error::Codec(format!("unknown message kind {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    ClientShare(FixedPointVector),
    ComputePartial {
        q: FixedPointVector,
        clients: BTreeSet<u32>,
    },
    ParticipantSet(BTreeSet<u32>),
    Abort {
        dropped: BTreeSet<u32>,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::ClientShare(_) => MessageKind::ClientShare,
            Payload::ComputePartial { .. } => MessageKind::ComputePartial,
            Payload::ParticipantSet(_) => MessageKind::ParticipantSet,
            Payload::Abort { .. } => MessageKind::Abort,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub round_id: u64,
    pub sender: PartyId,
    pub recipient: PartyId,
    pub payload: Payload,
}

fn write_ids(out: &mut Vec<u8>, ids: &BTreeSet<u32>) {
    out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
}

fn read_ids(bytes: &[u8]) -> Result<(BTreeSet<u32>, usize)> {
    let count = bytes
        .get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| Error::Codec("truncated id set".into()))?;
    let body = count
        .checked_mul(4)
        .and_then(|n| bytes.get(4..4 + n))
        .ok_or_else(|| Error::Codec("truncated id set".into()))?;
    let ids: BTreeSet<u32> = body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if ids.len() != count {
        return Err(Error::Codec("repeated id in set".into()));
    }
    Ok((ids, 4 + 4 * count))
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 64);
        out.extend_from_slice(&self.round_id.to_le_bytes());
        out.extend_from_slice(&self.sender.raw().to_le_bytes());
        out.extend_from_slice(&self.recipient.raw().to_le_bytes());
        out.push(self.payload.kind() as u8);
        match &self.payload {
            Payload::ClientShare(v) => v.write_to(&mut out),
            Payload::ComputePartial { q, clients } => {
                q.write_to(&mut out);
                write_ids(&mut out, clients);
            }
            Payload::ParticipantSet(ids) | Payload::Abort { dropped: ids } => {
                write_ids(&mut out, ids)
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Codec("truncated message header".into()));
        }
        let round_id = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let sender = PartyId::from_raw(u32::from_le_bytes(bytes[8..12].try_into().unwrap()));
        let recipient = PartyId::from_raw(u32::from_le_bytes(bytes[12..16].try_into().unwrap()));
        let kind = MessageKind::try_from(bytes[16])?;
        let body = &bytes[HEADER_LEN..];
        let (payload, used) = match kind {
            MessageKind::ClientShare => {
                let (v, used) = FixedPointVector::read_from(body)?;
                (Payload::ClientShare(v), used)
            }
            MessageKind::ComputePartial => {
                let (q, used_q) = FixedPointVector::read_from(body)?;
                let (clients, used_ids) = read_ids(&body[used_q..])?;
                (Payload::ComputePartial { q, clients }, used_q + used_ids)
            }
            MessageKind::ParticipantSet => {
                let (ids, used) = read_ids(body)?;
                (Payload::ParticipantSet(ids), used)
            }
            MessageKind::Abort => {
                let (dropped, used) = read_ids(body)?;
                (Payload::Abort { dropped }, used)
            }
        };
        if used != body.len() {
            return Err(Error::Codec(format!(
                "{} trailing bytes",
                body.len() - used
            )));
        }
        Ok(Self {
            round_id,
            sender,
            recipient,
            payload,
        })
    }
}

/// Reads the round id of an encoded message without decoding the rest.
pub fn peek_round_id(frame: &[u8]) -> Option<u64> {
    (frame.len() >= HEADER_LEN).then(|| u64::from_le_bytes(frame[..8].try_into().unwrap()))
}
