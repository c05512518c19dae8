//! Experiment drivers: method comparison, scaling-factor tables, protocol
//! benchmarks, synthetic data and one-shot sums.
//!
//! Every driver takes an explicit master seed; per-cell generators are
//! derived from it with [`derive_rng`], so reruns produce identical tables.

mod bench;
mod compare;
mod scaling;
mod sum;
mod synthetic;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub use bench::{bench_csv, fit_growth_exponent, run_protocol_bench, BenchRow, BenchSpec};
pub use compare::{
    run_comparison, DataSource, ExperimentSpec, Method, ResultRow, ResultTable,
    DEFAULT_ASSUMED_BOUND, DEFAULT_EPSILONS, DEFAULT_RANGE_LENGTH,
};
pub use scaling::{run_scaling_factor, scaling_csv, ScalingRow, ScalingSpec};
pub use sum::{read_client_vectors, run_sum, SumSpec};
pub use synthetic::generate_synthetic;

pub const DEFAULT_DELTA: f64 = 1e-5;

/// Labels mixed into a derived seed.
#[derive(Clone, Copy, Debug)]
pub enum SeedPart<'a> {
    Str(&'a str),
    U64(u64),
    F64(f64),
}

/// 32-byte seed from a master seed and a label path.
pub fn derive_seed(master: u64, parts: &[SeedPart<'_>]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"dca harness seed v1");
    h.update(master.to_le_bytes());
    for part in parts {
        match part {
            SeedPart::Str(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            SeedPart::U64(v) => {
                h.update([1u8]);
                h.update(v.to_le_bytes());
            }
            SeedPart::F64(v) => {
                h.update([2u8]);
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

pub fn derive_rng(master: u64, parts: &[SeedPart<'_>]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_seed(master, parts))
}

/// Hex SHA-256 of the JSON form of a config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").expect("writing to a String");
    }
    Ok(out)
}

/// Provenance written next to every result table.
#[derive(Clone, Debug, Serialize)]
pub struct Metadata<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub version: &'static str,
    pub config: &'a T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<serde_json::Value>,
}

impl<'a, T: Serialize> Metadata<'a, T> {
    pub fn new(command: &'a str, seed: u64, config: &'a T) -> Result<Self> {
        Ok(Self {
            command,
            seed,
            config_hash: config_hash(config)?,
            version: env!("CARGO_PKG_VERSION"),
            config,
            timings: None,
        })
    }
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`, creating it if needed.
pub fn write_outputs<T: Serialize>(
    dir: &Path,
    stem: &str,
    csv: &str,
    metadata: &Metadata<'_, T>,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, csv)?;
    let mut json = serde_json::to_string_pretty(metadata)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

/// Median and interquartile range with linear interpolation.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        if v.is_empty() {
            return f64::NAN;
        }
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.75) - q(0.25))
}
