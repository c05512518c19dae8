use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_rng, SeedPart};
use crate::dp::{distributed_sigma, sample_gaussian_noise, scaling_factor};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSpec {
    pub n_values: Vec<usize>,
    pub t_values: Vec<usize>,
    /// `(N, T)` cells that also get a Monte-Carlo variance measurement.
    pub spot_cells: Vec<(usize, usize)>,
    /// Simulated rounds per spot cell.
    pub rounds: usize,
    /// Noise dimensions per simulated round.
    pub dimension: usize,
    pub seed: u64,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self {
            n_values: vec![2, 5, 10, 20, 50, 100, 200, 500, 1000, 10_000],
            t_values: vec![0, 1, 5, 10, 50],
            spot_cells: vec![(10, 0), (100, 10), (1000, 50)],
            rounds: 2000,
            dimension: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub t: usize,
    pub factor: f64,
    /// Measured aggregate noise variance over `sigma_std^2`.
    pub measured: Option<f64>,
}

/// Empirical variance of `N` clients' summed noise, relative to a unit central std.
pub(crate) fn measure_variance_ratio(
    n: usize,
    t: usize,
    rounds: usize,
    dimension: usize,
    seed: u64,
) -> Result<f64> {
    let plan = distributed_sigma(1.0, n, t)?;
    let mut rng = derive_rng(
        seed,
        &[
            SeedPart::Str("scaling"),
            SeedPart::U64(n as u64),
            SeedPart::U64(t as u64),
        ],
    );
    let mut sum_sq = 0.0;
    for _ in 0..rounds {
        let mut total = vec![0.0; dimension];
        for _ in 0..n {
            for (acc, e) in total.iter_mut().zip(sample_gaussian_noise(
                plan.sigma_client,
                dimension,
                &mut rng,
            )) {
                *acc += e;
            }
        }
        sum_sq += total.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(sum_sq / (rounds * dimension) as f64)
}

/// Analytic factor `N / (N - T - 1)` for every valid cell, plus measured
/// ratios for the spot cells. Cells with `N <= T + 1` are skipped.
pub fn run_scaling_factor(spec: &ScalingSpec) -> Result<Vec<ScalingRow>> {
    let mut cells: Vec<(usize, usize)> = spec
        .n_values
        .iter()
        .flat_map(|&n| spec.t_values.iter().map(move |&t| (n, t)))
        .chain(spec.spot_cells.iter().copied())
        .filter(|&(n, t)| n > t + 1)
        .collect();
    cells.sort_unstable_by_key(|&(n, t)| (t, n));
    cells.dedup();
    cells
        .par_iter()
        .map(|&(n, t)| {
            let measured = if spec.spot_cells.contains(&(n, t)) {
                Some(measure_variance_ratio(
                    n,
                    t,
                    spec.rounds,
                    spec.dimension,
                    spec.seed,
                )?)
            } else {
                None
            };
            Ok(ScalingRow {
                n,
                t,
                factor: scaling_factor(n, t),
                measured,
            })
        })
        .collect()
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("n,t,factor,measured\n");
    for r in rows {
        let measured = r.measured.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.n, r.t, r.factor, measured));
    }
    out
}
