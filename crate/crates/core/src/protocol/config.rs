use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dp::NoisePlan;
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointParams;

/// Public parameters of one protocol round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_clients: usize,
    pub n_compute: usize,
    pub collusion_tolerance: usize,
    pub dimension: usize,
    pub fp_params: FixedPointParams,
    /// Per-dimension noise std each client adds.
    pub sigma_client: f64,
    /// Idle time after which a compute node stops waiting for client shares.
    #[serde(with = "millis")]
    pub collect_timeout: Duration,
    /// Clamp `z + noise` into the fixed-point range instead of failing.
    pub clip_noise: bool,
}

impl ProtocolConfig {
    pub fn new(n_clients: usize, n_compute: usize, dimension: usize) -> Self {
        Self {
            n_clients,
            n_compute,
            collusion_tolerance: 0,
            dimension,
            fp_params: FixedPointParams::default(),
            sigma_client: 0.0,
            collect_timeout: Duration::from_millis(200),
            clip_noise: true,
        }
    }

    pub fn with_collusion_tolerance(mut self, t: usize) -> Self {
        self.collusion_tolerance = t;
        self
    }

    pub fn with_sigma(mut self, sigma_client: f64) -> Self {
        self.sigma_client = sigma_client;
        self
    }

    pub fn with_plan(mut self, plan: &NoisePlan) -> Self {
        self.sigma_client = plan.sigma_client;
        self.collusion_tolerance = plan.collusion_tolerance;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.collect_timeout = timeout;
        self
    }

    pub fn with_fp_params(mut self, params: FixedPointParams) -> Self {
        self.fp_params = params;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_compute < 2 {
            return Err(Error::InvalidParameter(format!(
                "at least 2 compute nodes are required, got {}",
                self.n_compute
            )));
        }
        if self.n_clients <= self.collusion_tolerance + 1 {
            return Err(Error::InsufficientClients {
                n_clients: self.n_clients,
                collusion_tolerance: self.collusion_tolerance,
            });
        }
        if self.n_clients >= 1 << 31 {
            return Err(Error::InvalidParameter("too many clients".into()));
        }
        if self.dimension == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(self.sigma_client >= 0.0) || !self.sigma_client.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise std {} must be finite and >= 0",
                self.sigma_client
            )));
        }
        Ok(())
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
