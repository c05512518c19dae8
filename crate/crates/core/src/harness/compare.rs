use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_rng, median_iqr, SeedPart, DEFAULT_DELTA};
use crate::blr::{
    fit_input_perturbation, fit_non_private, fit_perturbed, fit_with_projection,
    generate_auxiliary, Aggregation, Dataset, DcaSettings, FitOptions, FitReport, ProjectionBounds,
};
use crate::dp::PrivacyBudget;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILONS: [f64; 6] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0];
/// Columns are rescaled to this range length before fitting.
pub const DEFAULT_RANGE_LENGTH: f64 = 10.0;
/// Bound assumed for every column of rescaled data.
pub const DEFAULT_ASSUMED_BOUND: f64 = 7.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "NP")]
    NonPrivate,
    #[serde(rename = "input_perturbation")]
    InputPerturbation,
    #[serde(rename = "TA")]
    TrustedAggregator,
    #[serde(rename = "TA_proj")]
    TrustedAggregatorProjected,
    #[serde(rename = "DDP")]
    Distributed,
    #[serde(rename = "DDP_proj")]
    DistributedProjected,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::NonPrivate,
        Method::InputPerturbation,
        Method::TrustedAggregator,
        Method::TrustedAggregatorProjected,
        Method::Distributed,
        Method::DistributedProjected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NonPrivate => "NP",
            Method::InputPerturbation => "input_perturbation",
            Method::TrustedAggregator => "TA",
            Method::TrustedAggregatorProjected => "TA_proj",
            Method::Distributed => "DDP",
            Method::DistributedProjected => "DDP_proj",
        }
    }

    pub fn is_private(self) -> bool {
        self != Method::NonPrivate
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Draws `n + test_size` rows from the auxiliary model.
    Synthetic {
        n: usize,
        d: usize,
        lambda0: f64,
        lambda: f64,
    },
    /// Headerless CSV, features then target; `test_size` rows are held out per run.
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub source: DataSource,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub cv_runs: usize,
    pub test_size: usize,
    /// Rescale every column to this range length; `None` leaves data as is.
    pub range_length: Option<f64>,
    pub assumed_bound: f64,
    pub protocol: DcaSettings,
    pub fit: FitOptions,
    pub seed: u64,
    /// Fill the `wall_time` column. Off by default so tables are reproducible.
    pub record_timings: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            source: DataSource::Synthetic {
                n: 5000,
                d: 10,
                lambda0: 1.0,
                lambda: 1.0,
            },
            epsilons: DEFAULT_EPSILONS.to_vec(),
            delta: DEFAULT_DELTA,
            cv_runs: 25,
            test_size: 1000,
            range_length: Some(DEFAULT_RANGE_LENGTH),
            assumed_bound: DEFAULT_ASSUMED_BOUND,
            protocol: DcaSettings::default(),
            fit: FitOptions::default(),
            seed: 0,
            record_timings: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.epsilons.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one method and one epsilon".into(),
            ));
        }
        if self.cv_runs == 0 || self.test_size == 0 {
            return Err(Error::InvalidParameter(
                "cv_runs and test_size must be positive".into(),
            ));
        }
        for &eps in &self.epsilons {
            PrivacyBudget::new(eps, self.delta)?;
        }
        if !(self.assumed_bound > 0.0) {
            return Err(Error::InvalidParameter(
                "assumed bound must be positive".into(),
            ));
        }
        if let Some(len) = self.range_length {
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::InvalidParameter(
                    "range length must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Full dataset (train pool plus test rows) after optional rescaling.
    pub fn load_data(&self) -> Result<Dataset> {
        let data = match &self.source {
            DataSource::Synthetic {
                n,
                d,
                lambda0,
                lambda,
            } => {
                let mut rng = derive_rng(self.seed, &[SeedPart::Str("data")]);
                generate_auxiliary(n + self.test_size, *d, *lambda0, *lambda, &mut rng).0
            }
            DataSource::Csv { path } => Dataset::read_csv(path)?,
        };
        if data.n() <= self.test_size + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} rows cannot hold out a test set of {}",
                data.n(),
                self.test_size
            )));
        }
        Ok(match self.range_length {
            Some(len) => data.rescaled_to_range(len),
            None => data,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub epsilon: f64,
    pub median_mae: f64,
    pub iqr: f64,
    pub n: usize,
    pub d: usize,
    pub runs: usize,
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, method: Method, epsilon: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.epsilon == epsilon)
    }

    /// CSV with a header. The `wall_time` column appears only if any row has a timing.
    pub fn to_csv(&self) -> String {
        let timed = self.rows.iter().any(|r| r.wall_time.is_some());
        let mut out = String::from("method,epsilon,median_mae,iqr,n,d,runs");
        out.push_str(if timed { ",wall_time\n" } else { "\n" });
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.method, r.epsilon, r.median_mae, r.iqr, r.n, r.d, r.runs
            ));
            if timed {
                out.push_str(&format!(",{}", r.wall_time.unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

fn fit_one(
    method: Method,
    train: &Dataset,
    budget: PrivacyBudget,
    spec: &ExperimentSpec,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> Result<FitReport> {
    let assumed = ProjectionBounds::uniform(train.d(), spec.assumed_bound, spec.assumed_bound)?;
    let distributed = Aggregation::Distributed(spec.protocol.clone());
    match method {
        Method::NonPrivate => fit_non_private(train, &spec.fit),
        Method::InputPerturbation => {
            fit_input_perturbation(train, &assumed, budget, &spec.fit, rng)
        }
        Method::TrustedAggregator => fit_perturbed(
            train,
            &assumed,
            budget,
            &Aggregation::Trusted,
            &spec.fit,
            rng,
        ),
        Method::Distributed => fit_perturbed(train, &assumed, budget, &distributed, &spec.fit, rng),
        Method::TrustedAggregatorProjected => fit_with_projection(
            train,
            &assumed,
            budget,
            &Aggregation::Trusted,
            &spec.fit,
            rng,
        ),
        Method::DistributedProjected => {
            fit_with_projection(train, &assumed, budget, &distributed, &spec.fit, rng)
        }
    }
}

/// Fits every method at every epsilon on `cv_runs` random train/test splits
/// and reports the median test MAE.
///
/// The split of run `r` depends only on the master seed and `r`, so all
/// methods see the same splits. Fit noise is seeded by `(method, epsilon, r)`.
pub fn run_comparison(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let data = spec.load_data()?;
    let pool = data.n() - spec.test_size;
    let n_train = match spec.source {
        DataSource::Synthetic { n, .. } => n.min(pool),
        DataSource::Csv { .. } => pool,
    };

    let splits: Vec<(Dataset, Dataset)> = (0..spec.cv_runs)
        .map(|run| {
            let mut idx: Vec<usize> = (0..data.n()).collect();
            idx.shuffle(&mut derive_rng(
                spec.seed,
                &[SeedPart::Str("split"), SeedPart::U64(run as u64)],
            ));
            let test = data.select(&idx[..spec.test_size]);
            let train = data.select(&idx[spec.test_size..spec.test_size + n_train]);
            (train, test)
        })
        .collect();

    let cells: Vec<(Method, f64)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.epsilons.iter().map(move |&e| (m, e)))
        .collect();

    let rows = cells
        .par_iter()
        .map(|&(method, epsilon)| -> Result<ResultRow> {
            let start = Instant::now();
            let budget = PrivacyBudget::new(epsilon, spec.delta)?;
            let maes = (0..spec.cv_runs)
                .into_par_iter()
                .map(|run| {
                    let (train, test) = &splits[run];
                    let mut rng = derive_rng(
                        spec.seed,
                        &[
                            SeedPart::Str(method.name()),
                            SeedPart::F64(epsilon),
                            SeedPart::U64(run as u64),
                        ],
                    );
                    let report = fit_one(method, train, budget, spec, &mut rng)?;
                    Ok(test.mean_absolute_error(&report.posterior))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (median_mae, iqr) = median_iqr(&maes);
            Ok(ResultRow {
                method,
                epsilon,
                median_mae,
                iqr,
                n: n_train,
                d: data.d(),
                runs: maes.len(),
                wall_time: spec.record_timings.then(|| start.elapsed().as_secs_f64()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable { rows })
}
