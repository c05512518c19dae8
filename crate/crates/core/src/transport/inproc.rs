use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::{Endpoint, Network, PartyId, TransportError};

struct Envelope {
    deliver_at: Option<Instant>,
    frame: Vec<u8>,
}

type Registry = Arc<Mutex<HashMap<PartyId, Sender<Envelope>>>>;

/// In-memory network: one unbounded queue per party.
#[derive(Clone, Default)]
pub struct InProcNetwork {
    registry: Registry,
}

impl InProcNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    /// Removes `party` from the network. Its endpoint sees `ChannelClosed` once
    /// queued frames are drained, and sends to it fail.
    pub fn disconnect(&self, party: PartyId) {
        self.registry.lock().unwrap().remove(&party);
    }
}

impl Network for InProcNetwork {
    fn endpoint(&mut self, party: PartyId) -> Result<Box<dyn Endpoint>, TransportError> {
        let (tx, rx) = mpsc::channel();
        self.registry.lock().unwrap().insert(party, tx);
        Ok(Box::new(InProcEndpoint {
            party,
            registry: Arc::clone(&self.registry),
            inbox: rx,
            pending: Vec::new(),
        }))
    }
}

struct InProcEndpoint {
    party: PartyId,
    registry: Registry,
    inbox: Receiver<Envelope>,
    // delayed frames that arrived early, sorted by release time
    pending: Vec<(Instant, Vec<u8>)>,
}

impl InProcEndpoint {
    fn deliver(&self, to: PartyId, envelope: Envelope) -> Result<(), TransportError> {
        let tx = self
            .registry
            .lock()
            .unwrap()
            .get(&to)
            .cloned()
            .ok_or(TransportError::ChannelClosed)?;
        tx.send(envelope).map_err(|_| TransportError::ChannelClosed)
    }

    fn hold(&mut self, at: Instant, frame: Vec<u8>) {
        let pos = self.pending.partition_point(|(t, _)| *t <= at);
        self.pending.insert(pos, (at, frame));
    }
}

impl Endpoint for InProcEndpoint {
    fn party(&self) -> PartyId {
        self.party
    }

    fn send(&mut self, to: PartyId, frame: &[u8]) -> Result<(), TransportError> {
        self.deliver(
            to,
            Envelope {
                deliver_at: None,
                frame: frame.to_vec(),
            },
        )
    }

    fn send_delayed(
        &mut self,
        to: PartyId,
        frame: &[u8],
        delay: Duration,
    ) -> Result<(), TransportError> {
        self.deliver(
            to,
            Envelope {
                deliver_at: Some(Instant::now() + delay),
                frame: frame.to_vec(),
            },
        )
    }

    fn recv_with_timeout(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            let now = Instant::now();
            if let Some((at, _)) = self.pending.first() {
                if *at <= now {
                    return Ok(self.pending.remove(0).1);
                }
            }
            if now >= deadline {
                return Err(TransportError::Timeout);
            }
            let wake = self
                .pending
                .first()
                .map_or(deadline, |(at, _)| (*at).min(deadline));
            match self.inbox.recv_timeout(wake - now) {
                Ok(Envelope {
                    deliver_at: Some(at),
                    frame,
                }) if at > Instant::now() => self.hold(at, frame),
                Ok(envelope) => return Ok(envelope.frame),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) if self.pending.is_empty() => {
                    return Err(TransportError::ChannelClosed)
                }
                Err(RecvTimeoutError::Disconnected) => {
                    // only delayed frames remain
                    let (at, _) = self.pending[0];
                    if at > deadline {
                        std::thread::sleep(deadline.saturating_duration_since(Instant::now()));
                        return Err(TransportError::Timeout);
                    }
                    std::thread::sleep(at.saturating_duration_since(Instant::now()));
                }
            }
        }
    }
}
