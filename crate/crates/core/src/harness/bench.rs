use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{derive_rng, SeedPart};
use crate::blr::DcaSettings;
use crate::error::{Error, Result};
use crate::protocol::{run_round, ProtocolConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub n_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub repeats: usize,
    /// Per-client noise std used in every round.
    pub sigma_client: f64,
    pub protocol: DcaSettings,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            n_values: vec![100, 1000, 10_000],
            d_values: vec![10, 100, 1000],
            repeats: 5,
            sigma_client: 1.0,
            protocol: DcaSettings::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub mean_secs: f64,
    pub min_secs: f64,
    pub max_secs: f64,
    /// Client shares each compute node received, identical across repeats.
    pub shares_per_node: Vec<usize>,
}

/// Times full protocol rounds on uniform random inputs for every `(N, d)` cell.
///
/// Cells run one after another so timings do not contend with each other.
pub fn run_protocol_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    let mut rows = Vec::new();
    for &n in &spec.n_values {
        for &d in &spec.d_values {
            let mut rng = derive_rng(
                spec.seed,
                &[
                    SeedPart::Str("bench"),
                    SeedPart::U64(n as u64),
                    SeedPart::U64(d as u64),
                ],
            );
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let config = ProtocolConfig::new(n, spec.protocol.n_compute, d)
                .with_collusion_tolerance(spec.protocol.collusion_tolerance)
                .with_sigma(spec.sigma_client)
                .with_fp_params(spec.protocol.fp_params)
                .with_timeout(Duration::from_millis(spec.protocol.collect_timeout_ms));
            let mut times = Vec::with_capacity(spec.repeats);
            let mut shares = Vec::new();
            for rep in 0..spec.repeats {
                let mut network = spec.protocol.network();
                let start = Instant::now();
                let result = run_round(&inputs, &config, &mut *network, rep as u64, &mut rng)?;
                times.push(start.elapsed().as_secs_f64());
                shares = result.shares_received;
            }
            rows.push(BenchRow {
                n,
                d,
                m: spec.protocol.n_compute,
                mean_secs: times.iter().sum::<f64>() / times.len() as f64,
                min_secs: times.iter().copied().fold(f64::INFINITY, f64::min),
                max_secs: times.iter().copied().fold(0.0, f64::max),
                shares_per_node: shares,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,d,m,mean_secs,min_secs,max_secs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.d, r.m, r.mean_secs, r.min_secs, r.max_secs
        ));
    }
    out
}

/// Least-squares slope of `log(mean time)` against `log(N d)`.
pub fn fit_growth_exponent(rows: &[BenchRow]) -> Option<f64> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_secs > 0.0)
        .map(|r| (((r.n * r.d) as f64).ln(), r.mean_secs.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
