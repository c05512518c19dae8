//! Channels between clients, compute nodes and the aggregator.
//!
//! Every party owns one [`Endpoint`]. Frames are opaque byte strings; the
//! protocol layer puts its own header inside them. Two networks are provided:
//! [`InProcNetwork`] (queues, frames delivered verbatim) and [`TcpNetwork`]
//! (length-prefixed AES-GCM-256 frames over loopback sockets). Either can be
//! wrapped in a [`FaultyNetwork`] to replay a [`FaultScript`].

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

mod fault;
mod inproc;
mod tcp;

pub use fault::{Fault, FaultAction, FaultScript, FaultyNetwork};
pub use inproc::InProcNetwork;
pub use tcp::{KeyStore, TcpNetwork, MAX_FRAME_LEN};

const COMPUTE_BIT: u32 = 0x8000_0000;

/// Identifier of a party on the network.
///
/// Clients use ids below `2^31`, compute node `k` is `2^31 + k`, and the
/// aggregator is `u32::MAX`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartyId(u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Client(u32),
    Compute(u32),
    Aggregator,
}

impl PartyId {
    pub const AGGREGATOR: PartyId = PartyId(u32::MAX);

    pub fn client(index: u32) -> Self {
        assert!(index < COMPUTE_BIT, "client index {index} out of range");
        PartyId(index)
    }

    pub fn compute(index: u32) -> Self {
        assert!(
            index < COMPUTE_BIT - 1,
            "compute index {index} out of range"
        );
        PartyId(COMPUTE_BIT | index)
    }

    pub fn from_raw(raw: u32) -> Self {
        PartyId(raw)
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn role(self) -> Role {
        if self == Self::AGGREGATOR {
            Role::Aggregator
        } else if self.0 & COMPUTE_BIT != 0 {
            Role::Compute(self.0 & !COMPUTE_BIT)
        } else {
            Role::Client(self.0)
        }
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role() {
            Role::Client(i) => write!(f, "client-{i}"),
            Role::Compute(k) => write!(f, "compute-{k}"),
            Role::Aggregator => f.write_str("aggregator"),
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum TransportError {
    #[error("channel closed")]
    ChannelClosed,
    #[error("receive timed out")]
    Timeout,
    #[error("fault injected for {party} in round {round_id}")]
    FaultInjected { party: PartyId, round_id: u64 },
    #[error("frame from {from} failed authentication")]
    AuthenticationFailed { from: PartyId },
    #[error("no key for link {0} <-> {1}")]
    MissingKey(PartyId, PartyId),
    #[error("unknown peer {0}")]
    UnknownPeer(PartyId),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One party's connection to the network.
pub trait Endpoint: Send {
    fn party(&self) -> PartyId;

    /// Sends one frame to `to`. Delivery is at most once.
    fn send(&mut self, to: PartyId, frame: &[u8]) -> Result<(), TransportError>;

    /// Sends a frame that becomes visible to the receiver only after `delay`.
    ///
    /// The default blocks the sender for `delay`.
    fn send_delayed(
        &mut self,
        to: PartyId,
        frame: &[u8],
        delay: Duration,
    ) -> Result<(), TransportError> {
        std::thread::sleep(delay);
        self.send(to, frame)
    }

    /// Blocks for at most `timeout` waiting for the next frame.
    fn recv_with_timeout(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;
}

/// Factory for endpoints. Creating an endpoint for a party that already has one
/// replaces the old inbox.
pub trait Network: Send {
    fn endpoint(&mut self, party: PartyId) -> Result<Box<dyn Endpoint>, TransportError>;
}

impl<N: Network + ?Sized> Network for Box<N> {
    fn endpoint(&mut self, party: PartyId) -> Result<Box<dyn Endpoint>, TransportError> {
        (**self).endpoint(party)
    }
}

/// Which network implementation to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Inproc,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Self::Inproc),
            "tcp" => Ok(Self::Tcp),
            other => Err(format!(
                "unknown transport {other:?} (expected inproc or tcp)"
            )),
        }
    }
}
