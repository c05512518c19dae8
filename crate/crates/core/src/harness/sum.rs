use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{derive_rng, SeedPart};
use crate::blr::DcaSettings;
use crate::dp::{distributed_sigma, gaussian_sigma, PrivacyBudget, QuerySensitivity};
use crate::error::{Error, Result};
use crate::protocol::{run_round, ProtocolConfig, RoundResult};

/// One-shot noisy sum. Noise is added only when both `epsilon` and
/// `sensitivity` are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SumSpec {
    pub epsilon: Option<f64>,
    pub delta: f64,
    /// L2 sensitivity of one client's vector.
    pub sensitivity: Option<f64>,
    pub protocol: DcaSettings,
    pub seed: u64,
}

impl Default for SumSpec {
    fn default() -> Self {
        Self {
            epsilon: None,
            delta: super::DEFAULT_DELTA,
            sensitivity: None,
            protocol: DcaSettings::default(),
            seed: 0,
        }
    }
}

/// Reads one client vector per CSV row (no header).
pub fn read_client_vectors<P: AsRef<Path>>(path: P) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let row = record?
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn run_sum(inputs: &[Vec<f64>], spec: &SumSpec) -> Result<RoundResult> {
    let dim = inputs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidParameter("no client vectors".into()))?;
    let settings = &spec.protocol;
    let mut config = ProtocolConfig::new(inputs.len(), settings.n_compute, dim)
        .with_collusion_tolerance(settings.collusion_tolerance)
        .with_fp_params(settings.fp_params)
        .with_timeout(Duration::from_millis(settings.collect_timeout_ms));
    if let (Some(eps), Some(l2)) = (spec.epsilon, spec.sensitivity) {
        let budget = PrivacyBudget::new(eps, spec.delta)?;
        let sigma = gaussian_sigma(QuerySensitivity::new(l2, dim)?, budget)?;
        config = config.with_plan(&distributed_sigma(
            sigma,
            inputs.len(),
            settings.collusion_tolerance,
        )?);
    }
    let mut network = settings.network();
    let mut rng = derive_rng(spec.seed, &[SeedPart::Str("sum")]);
    run_round(inputs, &config, &mut *network, 0, &mut rng)
}
