//! The distributed compute protocol for noisy secure sums.
//!
//! Each client adds its share of Gaussian noise, splits the encoded result
//! into `M` additive shares with zero-sum blinding, and sends share `k` to
//! compute node `k`. Compute nodes agree on the set of clients every node
//! heard from, sum their shares over that set, and publish the partial. The
//! partials add up to the noisy total; the blinding cancels exactly.

mod config;
mod parties;
mod round;
pub mod wire;

pub use config::ProtocolConfig;
pub use parties::{
    client_prepare, client_prepare_traced, compute_aggregate, final_sum, reconcile_participants,
    reconcile_sets, ClientMessageSet, ComputeNode, ComputePartial, RoundResult,
};
pub use round::run_round;
