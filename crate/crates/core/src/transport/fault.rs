use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Endpoint, Network, PartyId, TransportError};
use crate::protocol::wire::peek_round_id;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    /// Every send from the party in that round fails.
    DropBeforeSend,
    /// The first `sent` frames go out, then the party crashes.
    CrashAfterPartialSend { sent: usize },
    /// Frames become visible to receivers only after the delay.
    Delay {
        #[serde(with = "millis")]
        delay: Duration,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub party: PartyId,
    pub round_id: u64,
    pub action: FaultAction,
}

/// Deterministic list of faults, keyed by party and round.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultScript {
    pub faults: Vec<Fault>,
}

impl FaultScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, party: PartyId, round_id: u64, action: FaultAction) -> Self {
        self.faults.push(Fault {
            party,
            round_id,
            action,
        });
        self
    }

    pub fn action_for(&self, party: PartyId, round_id: u64) -> Option<FaultAction> {
        self.faults
            .iter()
            .find(|f| f.party == party && f.round_id == round_id)
            .map(|f| f.action)
    }
}

/// Wraps every endpoint of `inner` so that outgoing frames follow the script.
pub struct FaultyNetwork<N> {
    inner: N,
    script: Arc<FaultScript>,
}

impl<N: Network> FaultyNetwork<N> {
    pub fn new(inner: N, script: FaultScript) -> Self {
        Self {
            inner,
            script: Arc::new(script),
        }
    }

    pub fn inner(&self) -> &N {
        &self.inner
    }
}

impl<N: Network> Network for FaultyNetwork<N> {
    fn endpoint(&mut self, party: PartyId) -> Result<Box<dyn Endpoint>, TransportError> {
        let inner = self.inner.endpoint(party)?;
        Ok(Box::new(FaultyEndpoint {
            inner,
            script: Arc::clone(&self.script),
            sent: HashMap::new(),
        }))
    }
}

struct FaultyEndpoint {
    inner: Box<dyn Endpoint>,
    script: Arc<FaultScript>,
    sent: HashMap<u64, usize>,
}

impl Endpoint for FaultyEndpoint {
    fn party(&self) -> PartyId {
        self.inner.party()
    }

    fn send(&mut self, to: PartyId, frame: &[u8]) -> Result<(), TransportError> {
        let party = self.party();
        let Some(round_id) = peek_round_id(frame) else {
            return self.inner.send(to, frame);
        };
        let injected = TransportError::FaultInjected { party, round_id };
        match self.script.action_for(party, round_id) {
            None => self.inner.send(to, frame),
            Some(FaultAction::DropBeforeSend) => Err(injected),
            Some(FaultAction::CrashAfterPartialSend { sent }) => {
                let count = self.sent.entry(round_id).or_default();
                if *count >= sent {
                    return Err(injected);
                }
                *count += 1;
                self.inner.send(to, frame)
            }
            Some(FaultAction::Delay { delay }) => self.inner.send_delayed(to, frame, delay),
        }
    }

    fn send_delayed(
        &mut self,
        to: PartyId,
        frame: &[u8],
        delay: Duration,
    ) -> Result<(), TransportError> {
        self.inner.send_delayed(to, frame, delay)
    }

    fn recv_with_timeout(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.inner.recv_with_timeout(timeout)
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}
