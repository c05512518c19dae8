//! Bayesian linear regression by sufficient-statistics perturbation.
//!
//! The model is `y | x ~ N(x'b, 1/lambda)`, `b ~ N(0, I/lambda0)`, with data
//! assumed zero-centred. The posterior depends on the data only through
//! `sum x x'` and `sum x y`, so privatizing those `d(d+1)/2 + d` numbers is
//! enough. Clipping ("projection") every coordinate into `[-c_j, c_j]` bounds
//! the sensitivity of that query; the distributed fit estimates good bounds
//! from DP marginal standard deviations and a grid search on synthetic
//! auxiliary data.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{CryptoRng, Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{
    blr_sensitivity_per_dim, blr_stat_dimension, distributed_sigma, gaussian_sigma,
    sample_gaussian_noise, scaling_factor, PrivacyBudget, QuerySensitivity,
};
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointParams;
use crate::protocol::{run_round, ProtocolConfig};
use crate::transport::{InProcNetwork, KeyStore, Network, TcpNetwork, TransportKind};

/// Floor applied to DP marginal std estimates.
pub const STD_FLOOR: f64 = 0.5;
/// Share of the budget spent on marginal std estimation.
pub const DEFAULT_STD_SHARE: f64 = 0.2;
pub const DEFAULT_GRID_POINTS: usize = 20;
pub const DEFAULT_GRID_LOW: f64 = 0.1;
pub const DEFAULT_GRID_HIGH: f64 = 2.1;
pub const DEFAULT_REPEATS: usize = 10;

/// Ridge increments tried, as multiples of `lambda0`, when the perturbed
/// precision is not positive definite.
pub const RIDGE_LADDER: [f64; 17] = [
    0.0, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10, 1e11, 1e12,
];

/// Evenly spaced threshold multipliers, `points` values from `low` to `high` inclusive.
pub fn threshold_grid(points: usize, low: f64, high: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![low],
        _ => (0..points)
            .map(|i| low + (high - low) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn default_threshold_grid() -> Vec<f64> {
    threshold_grid(DEFAULT_GRID_POINTS, DEFAULT_GRID_LOW, DEFAULT_GRID_HIGH)
}

/// Features (`n x d`) and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from rows of `d` features followed by the target.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width < 2 {
            return Err(Error::InvalidParameter(
                "need at least one row with one feature and a target".into(),
            ));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                found: bad.len(),
            });
        }
        let d = width - 1;
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        let y = DVector::from_fn(rows.len(), |i, _| rows[i][d]);
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut r: Vec<f64> = self.x.row(i).iter().copied().collect();
        r.push(self.y[i]);
        r
    }

    /// One `(x_i, y_i)` row per client.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
        }
    }

    pub fn projected(&self, bounds: &ProjectionBounds) -> Result<Self> {
        bounds.check_width(self.d() + 1)?;
        let t = &bounds.thresholds;
        let d = self.d();
        Ok(Self {
            x: DMatrix::from_fn(self.n(), d, |i, j| clamp(self.x[(i, j)], t[j])),
            y: self.y.map(|v| clamp(v, t[d])),
        })
    }

    /// Scales every column (targets included) to a range of length `len`.
    pub fn rescaled_to_range(&self, len: f64) -> Self {
        let scale = |col: &[f64]| {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if hi > lo {
                len / (hi - lo)
            } else {
                1.0
            }
        };
        let mut x = self.x.clone();
        for mut col in x.column_iter_mut() {
            let s = scale(col.as_slice());
            col *= s;
        }
        let y = &self.y * scale(self.y.as_slice());
        Self { x, y }
    }

    /// Root mean square per column (features then target), i.e. the std of zero-centred data.
    pub fn marginal_std(&self) -> Vec<f64> {
        let n = self.n().max(1) as f64;
        let mut out: Vec<f64> = self
            .x
            .column_iter()
            .map(|c| (c.norm_squared() / n).sqrt())
            .collect();
        out.push((self.y.norm_squared() / n).sqrt());
        out
    }

    pub fn mean_absolute_error(&self, posterior: &BlrPosterior) -> f64 {
        let pred = &self.x * &posterior.mean;
        (pred - &self.y).abs().mean()
    }

    /// Headerless CSV: `d` feature columns then the target.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::InvalidParameter(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for i in 0..self.n() {
            line.clear();
            for v in self.x.row(i).iter() {
                line.push_str(&v.to_string());
                line.push(',');
            }
            line.push_str(&self.y[i].to_string());
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

fn clamp(v: f64, c: f64) -> f64 {
    v.max(-c).min(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Assumed,
    Estimated,
}

/// Symmetric clipping thresholds for `d` features followed by the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBounds {
    pub thresholds: Vec<f64>,
    pub provenance: Provenance,
}

impl ProjectionBounds {
    pub fn new(thresholds: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if thresholds.is_empty() || thresholds.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must be strictly positive, got {thresholds:?}"
            )));
        }
        Ok(Self {
            thresholds,
            provenance,
        })
    }

    /// Common bound `c_x` for all `d` features and `c_y` for the target.
    pub fn uniform(d: usize, c_x: f64, c_y: f64) -> Result<Self> {
        let mut t = vec![c_x; d];
        t.push(c_y);
        Self::new(t, Provenance::Assumed)
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if self.thresholds.len() != width {
            return Err(Error::DimensionMismatch {
                expected: self.thresholds.len(),
                found: width,
            });
        }
        Ok(())
    }

    pub fn sensitivity(&self) -> Result<QuerySensitivity> {
        blr_sensitivity_per_dim(&self.thresholds)
    }
}

/// Clamps each component of `x` into `[-c_j, c_j]`.
pub fn project(x: &[f64], bounds: &ProjectionBounds) -> Vec<f64> {
    x.iter()
        .zip(&bounds.thresholds)
        .map(|(&v, &c)| clamp(v, c))
        .collect()
}

/// `sum x x'`, `sum x y` and the sample count.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStatistics {
    pub xx: DMatrix<f64>,
    pub xy: DVector<f64>,
    pub n: usize,
}

pub fn suff_stats(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<SufficientStatistics> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    Ok(SufficientStatistics {
        xx: x.tr_mul(x),
        xy: x.tr_mul(y),
        n: x.nrows(),
    })
}

impl SufficientStatistics {
    pub fn zeros(d: usize) -> Self {
        Self {
            xx: DMatrix::zeros(d, d),
            xy: DVector::zeros(d),
            n: 0,
        }
    }

    pub fn d(&self) -> usize {
        self.xy.len()
    }

    /// Upper triangle of `xx` row by row, then `xy`.
    pub fn flatten(&self) -> Vec<f64> {
        let d = self.d();
        let mut out = Vec::with_capacity(blr_stat_dimension(d));
        for j in 0..d {
            for k in j..d {
                out.push(self.xx[(j, k)]);
            }
        }
        out.extend(self.xy.iter());
        out
    }

    pub fn unflatten(v: &[f64], d: usize, n: usize) -> Result<Self> {
        if v.len() != blr_stat_dimension(d) {
            return Err(Error::DimensionMismatch {
                expected: blr_stat_dimension(d),
                found: v.len(),
            });
        }
        let mut xx = DMatrix::zeros(d, d);
        let mut it = v.iter();
        for j in 0..d {
            for k in j..d {
                let val = *it.next().expect("length checked");
                xx[(j, k)] = val;
                xx[(k, j)] = val;
            }
        }
        let xy = DVector::from_iterator(d, it.copied());
        Ok(Self { xx, xy, n })
    }
}

/// Flattened statistics of a single record: what one client contributes.
pub fn record_stats(row: &[f64]) -> Vec<f64> {
    let d = row.len() - 1;
    let (x, y) = (&row[..d], row[d]);
    let mut out = Vec::with_capacity(blr_stat_dimension(d));
    for j in 0..d {
        for k in j..d {
            out.push(x[j] * x[k]);
        }
    }
    out.extend(x.iter().map(|xj| xj * y));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlrPosterior {
    pub precision: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub lambda0: f64,
    pub lambda: f64,
    /// Ridge added to the precision so it factorizes; zero for clean statistics.
    pub ridge: f64,
}

/// Closed-form posterior `precision = lambda0 I + lambda xx`, `mean = precision^-1 lambda xy`.
pub fn posterior(s: &SufficientStatistics, lambda0: f64, lambda: f64) -> Result<BlrPosterior> {
    if !(lambda0 > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda0={lambda0} and lambda={lambda} must be positive"
        )));
    }
    let d = s.d();
    if s.xx.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s.xx.nrows(),
        });
    }
    let sym = (&s.xx + s.xx.transpose()) * 0.5;
    let base = DMatrix::identity(d, d) * lambda0 + sym * lambda;
    let rhs = &s.xy * lambda;
    for step in RIDGE_LADDER {
        let ridge = step * lambda0;
        let precision = &base + DMatrix::identity(d, d) * ridge;
        if let Some(chol) = Cholesky::new(precision.clone()) {
            let mean = chol.solve(&rhs);
            if mean.iter().all(|v| v.is_finite()) {
                return Ok(BlrPosterior {
                    precision,
                    mean,
                    lambda0,
                    lambda,
                    ridge,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite)
}

impl BlrPosterior {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        Ok(x.iter().zip(self.mean.iter()).map(|(a, b)| a * b).sum())
    }
}

/// Draws `n` points from the model: `x ~ N(0, I)`, `b ~ N(0, lambda0 I)`,
/// `y ~ N(x'b, lambda)`. Returns the data and the weights.
pub fn generate_auxiliary<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    lambda0: f64,
    lambda: f64,
    rng: &mut R,
) -> (Dataset, DVector<f64>) {
    let beta = DVector::from_fn(d, |_, _| {
        lambda0.sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = DVector::from_fn(n, |_, _| {
        lambda.sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    let y = &x * &beta + noise;
    (Dataset { x, y }, beta)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Picks `(p_x, p_y)` from `grid`, as multiples of the auxiliary marginal std,
/// minimizing the median simulated DP prediction error over `repeats` noise draws.
///
/// One multiplier is shared by all features; the target gets its own.
/// `noise_factor` scales the simulated noise variance (1 for a trusted
/// aggregator, `N/(N-T-1)` for the distributed setting).
pub fn grid_search_thresholds<R: Rng + ?Sized>(
    aux: &Dataset,
    budget: PrivacyBudget,
    grid: &[f64],
    repeats: usize,
    noise_factor: f64,
    options: &FitOptions,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if grid.is_empty() || repeats == 0 {
        return Err(Error::InvalidParameter(
            "grid must be non-empty and repeats >= 1".into(),
        ));
    }
    let d = aux.d();
    let stds = aux.marginal_std();
    let (x_std, y_std) = (&stds[..d], stds[d]);

    let projected_x: Vec<DMatrix<f64>> = grid
        .iter()
        .map(|p| {
            DMatrix::from_fn(aux.n(), d, |i, j| {
                clamp(aux.x[(i, j)], p * x_std[j].max(f64::MIN_POSITIVE))
            })
        })
        .collect();
    let xx: Vec<DMatrix<f64>> = projected_x.iter().map(|x| x.tr_mul(x)).collect();
    let projected_y: Vec<DVector<f64>> = grid
        .iter()
        .map(|p| aux.y.map(|v| clamp(v, p * y_std.max(f64::MIN_POSITIVE))))
        .collect();

    let cells: Vec<(usize, usize, u64)> = (0..grid.len())
        .flat_map(|a| (0..grid.len()).map(move |b| (a, b)))
        .map(|(a, b)| (a, b, rng.random()))
        .collect();

    let scores = cells
        .par_iter()
        .map(|&(a, b, seed)| -> Result<f64> {
            let mut cell_rng = ChaCha20Rng::seed_from_u64(seed);
            let mut bounds: Vec<f64> = x_std.iter().map(|s| grid[a] * s).collect();
            bounds.push(grid[b] * y_std);
            let bounds: Vec<f64> = bounds.iter().map(|c| c.max(f64::MIN_POSITIVE)).collect();
            let sigma =
                gaussian_sigma(blr_sensitivity_per_dim(&bounds)?, budget)? * noise_factor.sqrt();
            let clean = SufficientStatistics {
                xx: xx[a].clone(),
                xy: projected_x[a].tr_mul(&projected_y[b]),
                n: aux.n(),
            }
            .flatten();
            let mut errors = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let noise = sample_gaussian_noise(sigma, clean.len(), &mut cell_rng);
                let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
                let stats = SufficientStatistics::unflatten(&noisy, d, aux.n())?;
                let post = posterior(&stats, options.lambda0, options.lambda)?;
                errors.push(aux.mean_absolute_error(&post));
            }
            Ok(median(&mut errors))
        })
        .collect::<Result<Vec<_>>>()?;

    let best = scores
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    Ok((grid[cells[best].0], grid[cells[best].1]))
}

/// Settings for distributed aggregation through the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcaSettings {
    pub n_compute: usize,
    pub collusion_tolerance: usize,
    pub fp_params: FixedPointParams,
    pub collect_timeout_ms: u64,
    pub transport: TransportKind,
    /// Master secret for per-link keys on the TCP transport.
    #[serde(skip, default = "default_master_key")]
    pub master_key: [u8; 32],
}

fn default_master_key() -> [u8; 32] {
    [0x5a; 32]
}

impl Default for DcaSettings {
    fn default() -> Self {
        Self {
            n_compute: 3,
            collusion_tolerance: 0,
            fp_params: FixedPointParams::default(),
            collect_timeout_ms: 2000,
            transport: TransportKind::Inproc,
            master_key: default_master_key(),
        }
    }
}

impl DcaSettings {
    pub fn network(&self) -> Box<dyn Network> {
        match self.transport {
            TransportKind::Inproc => Box::new(InProcNetwork::new()),
            TransportKind::Tcp => Box::new(TcpNetwork::new(KeyStore::from_master(self.master_key))),
        }
    }
}

/// How noisy sums are formed: by one trusted party, or through the protocol.
#[derive(Clone, Debug, PartialEq)]
pub enum Aggregation {
    Trusted,
    Distributed(DcaSettings),
}

impl Aggregation {
    /// Total noise variance relative to the central mechanism.
    pub fn noise_factor(&self, n_clients: usize) -> f64 {
        match self {
            Aggregation::Trusted => 1.0,
            Aggregation::Distributed(s) => scaling_factor(n_clients, s.collusion_tolerance),
        }
    }

    /// Noisy sum of `rows` calibrated to `sensitivity` and `budget`.
    /// Returns the sum and the number of rows that contributed.
    pub fn perturbed_sum<R: Rng + CryptoRng + ?Sized>(
        &self,
        rows: &[Vec<f64>],
        sensitivity: QuerySensitivity,
        budget: PrivacyBudget,
        round_id: u64,
        rng: &mut R,
    ) -> Result<(Vec<f64>, usize)> {
        let dim = sensitivity.dimension;
        let sigma_std = gaussian_sigma(sensitivity, budget)?;
        match self {
            Aggregation::Trusted => {
                let mut sum = vec![0.0; dim];
                for r in rows {
                    if r.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            found: r.len(),
                        });
                    }
                    sum.iter_mut().zip(r).for_each(|(s, v)| *s += v);
                }
                let noise = sample_gaussian_noise(sigma_std, dim, rng);
                sum.iter_mut().zip(noise).for_each(|(s, e)| *s += e);
                Ok((sum, rows.len()))
            }
            Aggregation::Distributed(settings) => {
                let plan = distributed_sigma(sigma_std, rows.len(), settings.collusion_tolerance)?;
                let config = ProtocolConfig::new(rows.len(), settings.n_compute, dim)
                    .with_plan(&plan)
                    .with_fp_params(settings.fp_params)
                    .with_timeout(std::time::Duration::from_millis(
                        settings.collect_timeout_ms,
                    ));
                let mut network = settings.network();
                let result = run_round(rows, &config, &mut *network, round_id, rng)?;
                Ok((result.dp_sum, result.participating_clients.len()))
            }
        }
    }
}

/// Hyperparameters shared by all fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub lambda0: f64,
    pub lambda: f64,
    /// Fraction of the budget spent estimating marginal stds.
    pub std_share: f64,
    pub grid: Vec<f64>,
    pub repeats: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda: 1.0,
            std_share: DEFAULT_STD_SHARE,
            grid: default_threshold_grid(),
            repeats: DEFAULT_REPEATS,
        }
    }
}

/// A fitted model with the bounds and budget that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub posterior: BlrPosterior,
    /// Bounds the final statistics were computed under, if any.
    pub bounds: Option<ProjectionBounds>,
    pub budget_spent: Option<PrivacyBudget>,
    /// Records that contributed to the final statistics.
    pub n: usize,
}

impl FitReport {
    /// JSON object with mean, row-major precision, `n`, budget spent and ridge.
    pub fn to_json(&self) -> serde_json::Value {
        let p = &self.posterior;
        let d = p.mean.len();
        let precision: Vec<f64> = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| p.precision[(i, j)])
            .collect();
        serde_json::json!({
            "mean": p.mean.iter().collect::<Vec<_>>(),
            "precision": precision,
            "dimension": d,
            "n": self.n,
            "lambda0": p.lambda0,
            "lambda": p.lambda,
            "budget_spent": self.budget_spent.map(|b| serde_json::json!({
                "epsilon": b.epsilon(),
                "delta": b.delta(),
            })),
            "ridge_increment": p.ridge,
            "bounds": self.bounds.as_ref().map(|b| &b.thresholds),
        })
    }
}

pub fn fit_non_private(data: &Dataset, options: &FitOptions) -> Result<FitReport> {
    let stats = suff_stats(&data.x, &data.y)?;
    Ok(FitReport {
        posterior: posterior(&stats, options.lambda0, options.lambda)?,
        bounds: None,
        budget_spent: None,
        n: data.n(),
    })
}

fn stats_rows(data: &Dataset) -> Vec<Vec<f64>> {
    (0..data.n()).map(|i| record_stats(&data.row(i))).collect()
}

/// Projects to `bounds` and perturbs the sufficient statistics once.
pub fn fit_perturbed<R: Rng + CryptoRng + ?Sized>(
    data: &Dataset,
    bounds: &ProjectionBounds,
    budget: PrivacyBudget,
    aggregation: &Aggregation,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitReport> {
    let projected = data.projected(bounds)?;
    let rows = stats_rows(&projected);
    let (sum, n) = aggregation.perturbed_sum(&rows, bounds.sensitivity()?, budget, 2, rng)?;
    let stats = SufficientStatistics::unflatten(&sum, data.d(), n)?;
    Ok(FitReport {
        posterior: posterior(&stats, options.lambda0, options.lambda)?,
        bounds: Some(bounds.clone()),
        budget_spent: Some(budget),
        n,
    })
}

/// Central-noise baseline without bound estimation.
pub fn fit_trusted_aggregator<R: Rng + CryptoRng + ?Sized>(
    data: &Dataset,
    bounds: &ProjectionBounds,
    budget: PrivacyBudget,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitReport> {
    fit_perturbed(data, bounds, budget, &Aggregation::Trusted, options, rng)
}

/// DP marginal std of each column from a noisy sum of squares.
///
/// `rows` must already be clipped to `assumed`. Estimates are floored at
/// [`STD_FLOOR`] and capped at the bound.
pub fn estimate_marginal_std<R: Rng + CryptoRng + ?Sized>(
    rows: &[Vec<f64>],
    assumed: &ProjectionBounds,
    budget: PrivacyBudget,
    aggregation: &Aggregation,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let width = assumed.len();
    let squares: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).collect())
        .collect();
    let l2 = assumed
        .thresholds
        .iter()
        .map(|c| c.powi(4))
        .sum::<f64>()
        .sqrt();
    let sensitivity = QuerySensitivity::new(l2, width)?;
    let (sum, n) = aggregation.perturbed_sum(&squares, sensitivity, budget, 1, rng)?;
    let floor = STD_FLOOR * STD_FLOOR;
    Ok(sum
        .iter()
        .zip(&assumed.thresholds)
        .map(|(s, c)| {
            let var = (s / n.max(1) as f64).max(floor).min((c * c).max(floor));
            var.sqrt()
        })
        .collect())
}

/// Full pipeline with bound estimation: clip to the assumed bounds, estimate
/// marginal stds with part of the budget, pick threshold multipliers on
/// auxiliary data, clip to the tightened bounds, and perturb the statistics
/// with the rest of the budget.
pub fn fit_with_projection<R: Rng + CryptoRng + ?Sized>(
    data: &Dataset,
    assumed: &ProjectionBounds,
    budget: PrivacyBudget,
    aggregation: &Aggregation,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitReport> {
    if !(options.std_share > 0.0 && options.std_share < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "std budget share {} must lie in (0, 1)",
            options.std_share
        )));
    }
    let d = data.d();
    let parts = budget.split(&[options.std_share, 1.0 - options.std_share])?;
    let (std_budget, main_budget) = (parts[0], parts[1]);

    let clipped = data.projected(assumed)?;
    let stds = estimate_marginal_std(&clipped.rows(), assumed, std_budget, aggregation, rng)?;

    let (aux, _) = generate_auxiliary(data.n(), d, options.lambda0, options.lambda, rng);
    let (p_x, p_y) = grid_search_thresholds(
        &aux,
        main_budget,
        &options.grid,
        options.repeats,
        aggregation.noise_factor(data.n()),
        options,
        rng,
    )?;

    let thresholds: Vec<f64> = stds
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let p = if j < d { p_x } else { p_y };
            (p * s).min(assumed.thresholds[j])
        })
        .collect();
    let bounds = ProjectionBounds::new(thresholds, Provenance::Estimated)?;
    let mut report = fit_perturbed(&clipped, &bounds, main_budget, aggregation, options, rng)?;
    report.budget_spent = Some(budget);
    Ok(report)
}

/// The distributed pipeline with bound estimation over the protocol.
pub fn fit_distributed<R: Rng + CryptoRng + ?Sized>(
    data: &Dataset,
    assumed: &ProjectionBounds,
    budget: PrivacyBudget,
    settings: &DcaSettings,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitReport> {
    if data.n() <= settings.collusion_tolerance + 1 {
        return Err(Error::InsufficientClients {
            n_clients: data.n(),
            collusion_tolerance: settings.collusion_tolerance,
        });
    }
    fit_with_projection(
        data,
        assumed,
        budget,
        &Aggregation::Distributed(settings.clone()),
        options,
        rng,
    )
}

/// Baseline that noises every clipped record and fits non-privately.
///
/// Replacing one record moves it by at most `2 c_j` per coordinate, so the
/// per-record sensitivity is `2 * ||c||_2`.
pub fn fit_input_perturbation<R: Rng + ?Sized>(
    data: &Dataset,
    bounds: &ProjectionBounds,
    budget: PrivacyBudget,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitReport> {
    let projected = data.projected(bounds)?;
    let l2 = 2.0 * bounds.thresholds.iter().map(|c| c * c).sum::<f64>().sqrt();
    let sigma = gaussian_sigma(QuerySensitivity::new(l2, bounds.len())?, budget)?;
    let d = data.d();
    let x = projected
        .x
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    let y = projected
        .y
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    let _ = d;
    let noisy = Dataset { x, y };
    let mut report = fit_non_private(&noisy, options)?;
    report.bounds = Some(bounds.clone());
    report.budget_spent = Some(budget);
    Ok(report)
}
