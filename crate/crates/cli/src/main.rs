use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use dca_core::blr::DcaSettings;
use dca_core::harness::{
    bench_csv, fit_growth_exponent, generate_synthetic, read_client_vectors, run_comparison,
    run_protocol_bench, run_scaling_factor, run_sum, scaling_csv, write_outputs, BenchSpec,
    DataSource, ExperimentSpec, Metadata, Method, ScalingSpec, SumSpec,
};
use dca_core::TransportKind;

#[derive(Parser, Debug)]
#[command(name = "dca", version, about = "Distributed differentially private sums and regression")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with the settings for the chosen subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    transport: Option<TransportKind>,
    /// Privacy epsilon; comma separated where a command accepts several.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Number of clients (data rows); comma separated where a command accepts several.
    #[arg(long, global = true, value_delimiter = ',')]
    n_clients: Vec<usize>,
    #[arg(long, global = true)]
    n_compute: Option<usize>,
    /// Collusion tolerance T; comma separated for `scaling-factor`.
    #[arg(long, global = true, value_delimiter = ',')]
    collusion_t: Vec<usize>,
    /// Record wall-clock timings (outputs are then no longer byte-reproducible).
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic regression dataset.
    GenData(GenDataArgs),
    /// Compare private regression methods across epsilons.
    Compare(CompareArgs),
    /// Tabulate the distributed noise scaling factor.
    ScalingFactor(ScalingArgs),
    /// Time protocol rounds over a grid of client counts and dimensions.
    BenchProtocol(BenchArgs),
    /// Run one noisy sum over client vectors read from CSV.
    Sum(SumArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Headerless CSV (features then target) instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    #[arg(long)]
    cv_runs: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args, Debug)]
struct ScalingArgs {
    #[arg(long)]
    rounds: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args, Debug)]
struct SumArgs {
    /// Headerless CSV with one client vector per row.
    #[arg(long)]
    input: PathBuf,
    /// L2 sensitivity of one client's vector; required with `--eps`.
    #[arg(long)]
    sensitivity: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataSpec {
    n: usize,
    d: usize,
    lambda0: f64,
    lambda: f64,
    seed: u64,
}

impl Default for GenDataSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 10,
            lambda0: 1.0,
            lambda: 1.0,
            seed: 0,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(args) => gen_data(&cli.common, args),
        Command::Compare(args) => compare(&cli.common, args),
        Command::ScalingFactor(args) => scaling(&cli.common, args),
        Command::BenchProtocol(args) => bench(&cli.common, args),
        Command::Sum(args) => sum(&cli.common, args),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn single<T: Copy>(values: &[T], flag: &str) -> Result<Option<T>> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => bail!("{flag} takes a single value for this command"),
    }
}

fn apply_protocol(common: &Common, settings: &mut DcaSettings) -> Result<()> {
    if let Some(t) = common.transport {
        settings.transport = t;
    }
    if let Some(m) = common.n_compute {
        settings.n_compute = m;
    }
    if let Some(t) = single(&common.collusion_t, "--collusion-t")? {
        settings.collusion_tolerance = t;
    }
    Ok(())
}

fn report(paths: (PathBuf, PathBuf)) {
    println!("wrote {} and {}", paths.0.display(), paths.1.display());
}

fn gen_data(common: &Common, args: &GenDataArgs) -> Result<()> {
    let mut spec: GenDataSpec = load_config(common.config.as_deref())?;
    if let Some(n) = single(&common.n_clients, "--n-clients")? {
        spec.n = n;
    }
    spec.d = args.dim.unwrap_or(spec.d);
    spec.lambda0 = args.lambda0.unwrap_or(spec.lambda0);
    spec.lambda = args.lambda.unwrap_or(spec.lambda);
    spec.seed = common.seed.unwrap_or(spec.seed);

    fs::create_dir_all(&common.out)?;
    let data_path = common.out.join("data.csv");
    let file = BufWriter::new(File::create(&data_path)?);
    let data = generate_synthetic(spec.n, spec.d, spec.lambda0, spec.lambda, spec.seed, file)?;
    let summary = format!("n,d\n{},{}\n", data.n(), data.d());
    let meta = Metadata::new("gen-data", spec.seed, &spec)?;
    report(write_outputs(&common.out, "gen-data", &summary, &meta)?);
    println!("wrote {}", data_path.display());
    Ok(())
}

fn compare(common: &Common, args: &CompareArgs) -> Result<()> {
    let mut spec: ExperimentSpec = load_config(common.config.as_deref())?;
    if !common.eps.is_empty() {
        spec.epsilons = common.eps.clone();
    }
    if let Some(delta) = common.delta {
        spec.delta = delta;
    }
    if !args.methods.is_empty() {
        spec.methods = args.methods.clone();
    }
    spec.cv_runs = args.cv_runs.unwrap_or(spec.cv_runs);
    spec.test_size = args.test_size.unwrap_or(spec.test_size);
    if let Some(path) = &args.data {
        spec.source = DataSource::Csv { path: path.clone() };
    }
    let n_clients = single(&common.n_clients, "--n-clients")?;
    match &mut spec.source {
        DataSource::Synthetic { n, d, .. } => {
            *n = n_clients.unwrap_or(*n);
            *d = args.dim.unwrap_or(*d);
        }
        DataSource::Csv { .. } if n_clients.is_some() || args.dim.is_some() => {
            bail!("--n-clients and --dim apply to synthetic data only")
        }
        DataSource::Csv { .. } => {}
    }
    apply_protocol(common, &mut spec.protocol)?;
    spec.seed = common.seed.unwrap_or(spec.seed);
    spec.record_timings |= common.timings;

    let start = Instant::now();
    let table = run_comparison(&spec)?;
    let mut meta = Metadata::new("compare", spec.seed, &spec)?;
    if spec.record_timings {
        meta.timings = Some(json!({ "total_secs": start.elapsed().as_secs_f64() }));
    }
    report(write_outputs(&common.out, "compare", &table.to_csv(), &meta)?);
    for row in &table.rows {
        println!(
            "{:<18} eps={:<5} median MAE {:.4} (IQR {:.4})",
            row.method, row.epsilon, row.median_mae, row.iqr
        );
    }
    Ok(())
}

fn scaling(common: &Common, args: &ScalingArgs) -> Result<()> {
    let mut spec: ScalingSpec = load_config(common.config.as_deref())?;
    if !common.n_clients.is_empty() {
        spec.n_values = common.n_clients.clone();
    }
    if !common.collusion_t.is_empty() {
        spec.t_values = common.collusion_t.clone();
    }
    spec.rounds = args.rounds.unwrap_or(spec.rounds);
    spec.seed = common.seed.unwrap_or(spec.seed);

    let start = Instant::now();
    let rows = run_scaling_factor(&spec)?;
    let mut meta = Metadata::new("scaling-factor", spec.seed, &spec)?;
    if common.timings {
        meta.timings = Some(json!({ "total_secs": start.elapsed().as_secs_f64() }));
    }
    report(write_outputs(
        &common.out,
        "scaling-factor",
        &scaling_csv(&rows),
        &meta,
    )?);
    Ok(())
}

fn bench(common: &Common, args: &BenchArgs) -> Result<()> {
    let mut spec: BenchSpec = load_config(common.config.as_deref())?;
    if !common.n_clients.is_empty() {
        spec.n_values = common.n_clients.clone();
    }
    if !args.dims.is_empty() {
        spec.d_values = args.dims.clone();
    }
    spec.repeats = args.repeats.unwrap_or(spec.repeats);
    apply_protocol(common, &mut spec.protocol)?;
    spec.seed = common.seed.unwrap_or(spec.seed);

    let rows = run_protocol_bench(&spec)?;
    let exponent = fit_growth_exponent(&rows);
    let mut meta = Metadata::new("bench-protocol", spec.seed, &spec)?;
    // benchmark output is timing by nature
    meta.timings = Some(json!({ "growth_exponent": exponent }));
    report(write_outputs(
        &common.out,
        "bench-protocol",
        &bench_csv(&rows),
        &meta,
    )?);
    if let Some(e) = exponent {
        println!("time grows like (N d)^{e:.3}");
    }
    Ok(())
}

fn sum(common: &Common, args: &SumArgs) -> Result<()> {
    let mut spec: SumSpec = load_config(common.config.as_deref())?;
    if let Some(eps) = single(&common.eps, "--eps")? {
        spec.epsilon = Some(eps);
    }
    if let Some(delta) = common.delta {
        spec.delta = delta;
    }
    if args.sensitivity.is_some() {
        spec.sensitivity = args.sensitivity;
    }
    if spec.epsilon.is_some() != spec.sensitivity.is_some() {
        bail!("--eps and --sensitivity must be given together");
    }
    apply_protocol(common, &mut spec.protocol)?;
    spec.seed = common.seed.unwrap_or(spec.seed);

    let inputs = read_client_vectors(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    if let Some(n) = single(&common.n_clients, "--n-clients")? {
        if n != inputs.len() {
            bail!("--n-clients {n} but {} has {} rows", args.input.display(), inputs.len());
        }
    }
    let result = run_sum(&inputs, &spec)?;
    let mut csv = String::from("index,value\n");
    for (i, v) in result.dp_sum.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    let meta = Metadata::new("sum", spec.seed, &spec)?;
    report(write_outputs(&common.out, "sum", &csv, &meta)?);
    let round_path = common.out.join("sum-round.json");
    fs::write(&round_path, serde_json::to_string_pretty(&result)? + "\n")?;
    println!(
        "{} of {} clients participated",
        result.participating_clients.len(),
        inputs.len()
    );
    Ok(())
}
