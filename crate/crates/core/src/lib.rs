//! Differentially private secure summation and distributed Bayesian linear
//! regression.
//!
//! * [`fixedpoint`]: modular fixed-point vectors and additive secret sharing.
//! * [`dp`]: Gaussian-mechanism calibration, central and distributed.
//! * [`protocol`]: the client / compute node / aggregator round.
//! * [`transport`]: in-process and encrypted TCP channels, fault injection.
//! * [`blr`]: sufficient-statistics perturbation for linear regression with projection.
//! * [`harness`]: experiment drivers used by the command-line tool.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blr;
pub mod dp;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod protocol;
pub mod transport;

pub use dp::{NoisePlan, PrivacyBudget, QuerySensitivity};
pub use error::{Error, Result};
pub use fixedpoint::{FixedPointParams, FixedPointVector};
pub use protocol::{ProtocolConfig, RoundResult};
pub use transport::{PartyId, TransportKind};
