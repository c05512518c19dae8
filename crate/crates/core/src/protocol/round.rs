use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{CryptoRng, Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::parties::{client_prepare, final_sum, reconcile_sets, ComputeNode, RoundResult};
use super::wire::{Message, Payload};
use super::ProtocolConfig;
use crate::error::{Error, Result};
use crate::transport::{Endpoint, Network, PartyId, Role, TransportError};

/// Runs one complete round over `network`:
/// prepare, send shares, collect, exchange participant sets, reconcile,
/// publish partials, and sum.
///
/// Clients run sequentially on one thread, each compute node on its own
/// thread, and the aggregator on the caller's thread. Every client gets an
/// independent generator seeded from `rng`, so identical seeds give identical
/// sums on any transport.
pub fn run_round<R: Rng + CryptoRng + ?Sized>(
    inputs: &[Vec<f64>],
    config: &ProtocolConfig,
    network: &mut dyn Network,
    round_id: u64,
    rng: &mut R,
) -> Result<RoundResult> {
    config.validate()?;
    if inputs.len() != config.n_clients {
        return Err(Error::InvalidParameter(format!(
            "{} client inputs for a {}-client round",
            inputs.len(),
            config.n_clients
        )));
    }
    if let Some(bad) = inputs.iter().find(|z| z.len() != config.dimension) {
        return Err(Error::DimensionMismatch {
            expected: config.dimension,
            found: bad.len(),
        });
    }
    let seeds: Vec<[u8; 32]> = (0..config.n_clients).map(|_| rng.random()).collect();

    let compute_eps = (0..config.n_compute as u32)
        .map(|k| network.endpoint(PartyId::compute(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut aggregator = network.endpoint(PartyId::AGGREGATOR)?;
    let client_eps = (0..config.n_clients as u32)
        .map(|i| network.endpoint(PartyId::client(i)))
        .collect::<Result<Vec<_>, _>>()?;

    let (client_outcome, compute_outcomes) = std::thread::scope(|s| {
        let clients = s.spawn(|| drive_clients(client_eps, inputs, &seeds, config, round_id));
        let nodes: Vec<_> = compute_eps
            .into_iter()
            .enumerate()
            .map(|(k, ep)| s.spawn(move || run_compute_node(ep, k as u32, config, round_id)))
            .collect();
        let client_outcome = clients.join().expect("client driver panicked");
        let compute_outcomes: Vec<_> = nodes
            .into_iter()
            .map(|h| h.join().expect("compute node panicked"))
            .collect();
        (client_outcome, compute_outcomes)
    });
    client_outcome?;
    let shares_received = compute_outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut partials = Vec::with_capacity(config.n_compute);
    let mut aborted: Option<BTreeSet<u32>> = None;
    let mut heard = BTreeSet::new();
    let wait = config.collect_timeout + Duration::from_secs(1);
    while heard.len() < config.n_compute {
        let frame = aggregator.recv_with_timeout(wait)?;
        let Ok(msg) = Message::decode(&frame) else {
            continue;
        };
        let Role::Compute(k) = msg.sender.role() else {
            continue;
        };
        if msg.round_id != round_id || !heard.insert(k) {
            continue;
        }
        match msg.payload {
            Payload::ComputePartial { q, clients } => partials.push(super::ComputePartial {
                compute_id: k,
                round_id,
                contributing_clients: clients,
                q,
            }),
            Payload::Abort { dropped } => {
                aborted.get_or_insert_with(BTreeSet::new).extend(dropped);
            }
            _ => {
                heard.remove(&k);
            }
        }
    }
    if let Some(dropped) = aborted {
        return Err(Error::TooManyDropouts {
            dropped,
            tolerance: config.collusion_tolerance,
        });
    }
    let mut result = final_sum(&partials, config)?;
    result.shares_received = shares_received;
    Ok(result)
}

fn drive_clients(
    endpoints: Vec<Box<dyn Endpoint>>,
    inputs: &[Vec<f64>],
    seeds: &[[u8; 32]],
    config: &ProtocolConfig,
    round_id: u64,
) -> Result<()> {
    for (i, mut ep) in endpoints.into_iter().enumerate() {
        let mut rng = ChaCha20Rng::from_seed(seeds[i]);
        let set = client_prepare(i as u32, round_id, &inputs[i], config, &mut rng)?;
        for (k, share) in set.messages.into_iter().enumerate() {
            let to = PartyId::compute(k as u32);
            let frame = Message {
                round_id,
                sender: ep.party(),
                recipient: to,
                payload: Payload::ClientShare(share),
            }
            .encode();
            match ep.send(to, &frame) {
                Ok(()) => {}
                // the client crashed; the rest of its shares never leave
                Err(TransportError::FaultInjected { .. }) => break,
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(())
}

enum Incoming {
    Share(u32, crate::fixedpoint::FixedPointVector),
    PeerSet(u32, BTreeSet<u32>),
}

/// Decodes a frame addressed to compute node `k`; stale or foreign frames yield `None`.
fn classify(frame: &[u8], round_id: u64, k: u32) -> Option<Incoming> {
    let msg = Message::decode(frame).ok()?;
    if msg.round_id != round_id {
        return None;
    }
    match (msg.sender.role(), msg.payload) {
        (Role::Client(c), Payload::ClientShare(share)) => Some(Incoming::Share(c, share)),
        (Role::Compute(j), Payload::ParticipantSet(set)) if j != k => {
            Some(Incoming::PeerSet(j, set))
        }
        _ => None,
    }
}

fn run_compute_node(
    mut ep: Box<dyn Endpoint>,
    k: u32,
    config: &ProtocolConfig,
    round_id: u64,
) -> Result<usize> {
    let me = ep.party();
    let mut node = ComputeNode::new(k, round_id, config);
    let mut peer_sets: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();

    let mut collecting = true;
    while collecting && node.received_count() < config.n_clients {
        match ep.recv_with_timeout(config.collect_timeout) {
            Ok(frame) => match classify(&frame, round_id, k) {
                Some(Incoming::Share(c, share)) => node.accept(c, share)?,
                Some(Incoming::PeerSet(j, set)) => {
                    peer_sets.insert(j, set);
                }
                None => {}
            },
            Err(TransportError::Timeout) => collecting = false,
            Err(e) => return Err(e.into()),
        }
    }
    let received = node.received_count();
    let own = node.contributing();
    for j in (0..config.n_compute as u32).filter(|&j| j != k) {
        let to = PartyId::compute(j);
        let frame = Message {
            round_id,
            sender: me,
            recipient: to,
            payload: Payload::ParticipantSet(own.clone()),
        }
        .encode();
        ep.send(to, &frame)?;
    }

    // Peers may still be waiting out their own collection timeout.
    let deadline = Instant::now() + 2 * config.collect_timeout + Duration::from_secs(2);
    while peer_sets.len() + 1 < config.n_compute {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(TransportError::Timeout.into());
        }
        match ep.recv_with_timeout(left) {
            Ok(frame) => {
                // late client shares no longer count
                if let Some(Incoming::PeerSet(j, set)) = classify(&frame, round_id, k) {
                    peer_sets.insert(j, set);
                }
            }
            Err(TransportError::Timeout) => return Err(TransportError::Timeout.into()),
            Err(e) => return Err(e.into()),
        }
    }

    let sets = std::iter::once(&own).chain(peer_sets.values());
    let payload = match reconcile_sets(sets, config) {
        Ok(agreed) => {
            let partial = node.partial_over(&agreed)?;
            Payload::ComputePartial {
                q: partial.q,
                clients: partial.contributing_clients,
            }
        }
        Err(Error::TooManyDropouts { dropped, .. }) => Payload::Abort { dropped },
        Err(e) => return Err(e),
    };
    let frame = Message {
        round_id,
        sender: me,
        recipient: PartyId::AGGREGATOR,
        payload,
    }
    .encode();
    ep.send(PartyId::AGGREGATOR, &frame)?;
    Ok(received)
}
