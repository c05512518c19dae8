use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, Rng};
use serde::Serialize;

use super::ProtocolConfig;
use crate::dp::sample_gaussian_noise;
use crate::error::{Error, Result};
use crate::fixedpoint::{zero_sum_blinding, FixedPointVector};

/// The `M` messages one client sends in a round; message `k` goes to compute node `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientMessageSet {
    pub round_id: u64,
    pub client_id: u32,
    pub messages: Vec<FixedPointVector>,
}

/// Builds a client's messages: `encode(z + noise) + r_1, r_2, ..., r_M` with
/// `sum r_k = 0`.
pub fn client_prepare<R: Rng + CryptoRng + ?Sized>(
    client_id: u32,
    round_id: u64,
    z: &[f64],
    config: &ProtocolConfig,
    rng: &mut R,
) -> Result<ClientMessageSet> {
    client_prepare_traced(client_id, round_id, z, config, rng).map(|(set, _)| set)
}

/// Like [`client_prepare`], also returning the noise the client added.
///
/// A client always knows its own noise; simulations use this to model
/// colluding clients that reveal it.
pub fn client_prepare_traced<R: Rng + CryptoRng + ?Sized>(
    client_id: u32,
    round_id: u64,
    z: &[f64],
    config: &ProtocolConfig,
    rng: &mut R,
) -> Result<(ClientMessageSet, Vec<f64>)> {
    if z.len() != config.dimension {
        return Err(Error::DimensionMismatch {
            expected: config.dimension,
            found: z.len(),
        });
    }
    let params = config.fp_params;
    // The clean input must be representable even when the noise is clipped.
    FixedPointVector::encode(z, params)?;

    let noise = sample_gaussian_noise(config.sigma_client, config.dimension, rng);
    let noisy: Vec<f64> = z.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let encoded = if config.clip_noise {
        FixedPointVector::encode_saturating(&noisy, params)
    } else {
        FixedPointVector::encode(&noisy, params)?
    };

    let mut messages = zero_sum_blinding(params, config.dimension, config.n_compute, rng)?;
    messages[0].add_assign(&encoded)?;
    Ok((
        ClientMessageSet {
            round_id,
            client_id,
            messages,
        },
        noise,
    ))
}

/// A compute node's published sum over a set of clients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComputePartial {
    pub compute_id: u32,
    pub round_id: u64,
    pub contributing_clients: BTreeSet<u32>,
    pub q: FixedPointVector,
}

/// Receiving side of one compute node for one round.
#[derive(Clone, Debug)]
pub struct ComputeNode {
    id: u32,
    round_id: u64,
    dimension: usize,
    template: FixedPointVector,
    received: BTreeMap<u32, FixedPointVector>,
}

impl ComputeNode {
    pub fn new(id: u32, round_id: u64, config: &ProtocolConfig) -> Self {
        Self {
            id,
            round_id,
            dimension: config.dimension,
            template: FixedPointVector::zeros(config.fp_params, config.dimension),
            received: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn accept(&mut self, client_id: u32, share: FixedPointVector) -> Result<()> {
        if share.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: share.dimension(),
            });
        }
        if share.params() != self.template.params() {
            return Err(Error::ParamsMismatch);
        }
        if self.received.contains_key(&client_id) {
            return Err(Error::DuplicateClient(client_id));
        }
        self.received.insert(client_id, share);
        Ok(())
    }

    pub fn received_count(&self) -> usize {
        self.received.len()
    }

    pub fn contributing(&self) -> BTreeSet<u32> {
        self.received.keys().copied().collect()
    }

    pub fn partial(&self) -> ComputePartial {
        self.partial_over(&self.contributing())
            .expect("own client set is always available")
    }

    /// Re-sums over an agreed client set, which must be a subset of what this node received.
    pub fn partial_over(&self, clients: &BTreeSet<u32>) -> Result<ComputePartial> {
        let mut q = self.template.clone();
        for c in clients {
            let share = self.received.get(c).ok_or_else(|| {
                Error::InconsistentPartials(format!(
                    "compute node {} has no share from client {c}",
                    self.id
                ))
            })?;
            q.add_assign(share)?;
        }
        Ok(ComputePartial {
            compute_id: self.id,
            round_id: self.round_id,
            contributing_clients: clients.clone(),
            q,
        })
    }
}

/// Sums the shares one compute node received.
pub fn compute_aggregate(
    compute_id: u32,
    round_id: u64,
    messages: &[(u32, FixedPointVector)],
    config: &ProtocolConfig,
) -> Result<ComputePartial> {
    let mut node = ComputeNode::new(compute_id, round_id, config);
    for (client, share) in messages {
        node.accept(*client, share.clone())?;
    }
    Ok(node.partial())
}

fn dropped_from(n_clients: usize, participating: &BTreeSet<u32>) -> BTreeSet<u32> {
    (0..n_clients as u32)
        .filter(|c| !participating.contains(c))
        .collect()
}

/// Intersects the client sets seen by the compute nodes and checks the dropout budget.
pub fn reconcile_sets<'a, I>(sets: I, config: &ProtocolConfig) -> Result<BTreeSet<u32>>
where
    I: IntoIterator<Item = &'a BTreeSet<u32>>,
{
    let mut iter = sets.into_iter();
    let mut agreed = iter.next().cloned().unwrap_or_default();
    for s in iter {
        agreed.retain(|c| s.contains(c));
    }
    agreed.retain(|&c| (c as usize) < config.n_clients);
    let dropped = dropped_from(config.n_clients, &agreed);
    if dropped.len() > config.collusion_tolerance {
        return Err(Error::TooManyDropouts {
            dropped,
            tolerance: config.collusion_tolerance,
        });
    }
    Ok(agreed)
}

pub fn reconcile_participants(
    partials: &[ComputePartial],
    config: &ProtocolConfig,
) -> Result<BTreeSet<u32>> {
    if partials.len() != config.n_compute {
        return Err(Error::InconsistentPartials(format!(
            "expected {} partials, got {}",
            config.n_compute,
            partials.len()
        )));
    }
    reconcile_sets(partials.iter().map(|p| &p.contributing_clients), config)
}

/// Output of one round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundResult {
    pub round_id: u64,
    /// Decoded noisy sum over participating clients.
    pub dp_sum: Vec<f64>,
    #[serde(skip)]
    pub raw_sum: FixedPointVector,
    pub participating_clients: BTreeSet<u32>,
    pub dropped_clients: BTreeSet<u32>,
    /// Client shares each compute node received before reconciliation.
    pub shares_received: Vec<usize>,
}

/// Adds the compute partials into the final noisy sum.
pub fn final_sum(partials: &[ComputePartial], config: &ProtocolConfig) -> Result<RoundResult> {
    let first = partials
        .first()
        .ok_or_else(|| Error::InconsistentPartials("no partials".into()))?;
    if partials.len() != config.n_compute {
        return Err(Error::InconsistentPartials(format!(
            "expected {} partials, got {}",
            config.n_compute,
            partials.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for p in partials {
        if p.round_id != first.round_id {
            return Err(Error::InconsistentPartials(format!(
                "rounds {} and {} mixed",
                first.round_id, p.round_id
            )));
        }
        if p.q.dimension() != first.q.dimension() || p.q.params() != first.q.params() {
            return Err(Error::InconsistentPartials(
                "dimension or format differs".into(),
            ));
        }
        if p.contributing_clients != first.contributing_clients {
            return Err(Error::InconsistentPartials(
                "partials cover different client sets".into(),
            ));
        }
        if !seen.insert(p.compute_id) {
            return Err(Error::InconsistentPartials(format!(
                "two partials from compute node {}",
                p.compute_id
            )));
        }
    }
    let participating = first.contributing_clients.clone();
    let dropped = dropped_from(config.n_clients, &participating);
    if dropped.len() > config.collusion_tolerance {
        return Err(Error::TooManyDropouts {
            dropped,
            tolerance: config.collusion_tolerance,
        });
    }
    let raw_sum =
        FixedPointVector::sum(partials.iter().map(|p| &p.q))?.expect("partials are non-empty");
    Ok(RoundResult {
        round_id: first.round_id,
        dp_sum: raw_sum.decode(),
        raw_sum,
        participating_clients: participating,
        dropped_clients: dropped,
        shares_received: Vec::new(),
    })
}
