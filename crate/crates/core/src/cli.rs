//! Command-line front end.
//!
//! Every command writes its artifacts plus a `manifest.json` into `--out`.
//! The manifest records the resolved configuration, its SHA-256, the seed,
//! the crate version and digests of the input files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::driver::{fit, fit_from, FitConfig, FitResult, Method, StopReason};
use crate::error::{Error, Result};
use crate::eval::{evaluate, exact_zero_count};
use crate::io::{
    read_coo_file, read_json, read_model_file, write_coo_file, write_json, write_model_file,
};
use crate::kruskal::ZeroColumn;
use crate::sparse_tensor::SparseCountTensor;
use crate::synth::{generate, GenConfig};

pub const EXIT_NOT_CONVERGED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub const BENCH_CSV_HEADER: &str =
    "method,rank,seed,converged,outer_iterations,time_to_tau,final_objective,exact_zeros";

#[derive(Debug, Parser)]
#[command(
    name = "cpkl",
    version,
    about = "Sparse count tensor CP factorization under the KL objective"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic count tensor and its ground-truth model.
    Generate(GenerateArgs),
    /// Fit a CP model to a COO tensor.
    Factorize(FactorizeArgs),
    /// Score a model against a truth model and/or a tensor.
    Evaluate(EvaluateArgs),
    /// Sweep methods, ranks and seeds and tabulate time to tolerance.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    /// COO tensor file.
    #[arg(long)]
    pub tensor: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit configuration (JSON); flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from this model file instead of a random model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: FitOverrides,
    /// Exit with status 1 when the fit does not reach `tau`.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Default, Args)]
pub struct FitOverrides {
    /// pdnr, pqnr or mu.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub outer_max: Option<usize>,
    /// Seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Only update the first factor matrix.
    #[arg(long)]
    pub mode1_only: bool,
    /// Row-solve threads, 0 for all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Benchmark sweep. Exactly one of `tensor` and `generate` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub tensor: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenConfig>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub ranks: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_outer_max")]
    pub outer_max: usize,
    #[serde(default)]
    pub time_limit: Option<f64>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub mode1_only: bool,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_tau() -> f64 {
    1e-4
}

fn default_outer_max() -> usize {
    200
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tensor.is_some() == self.generate.is_some() {
            return Err(Error::InvalidConfig(
                "exactly one of tensor and generate must be given".into(),
            ));
        }
        if self.methods.is_empty() || self.ranks.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "methods, ranks and seeds must be nonempty".into(),
            ));
        }
        for config in self.fit_configs() {
            config.validate()?;
        }
        Ok(())
    }

    /// One configuration per (method, rank, seed), in table order.
    pub fn fit_configs(&self) -> Vec<FitConfig> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &rank in &self.ranks {
                for &seed in &self.seeds {
                    out.push(FitConfig {
                        tau: self.tau,
                        outer_max: self.outer_max,
                        time_limit: self.time_limit,
                        seed,
                        workers: self.workers,
                        mode1_only: self.mode1_only,
                        ..FitConfig::new(method, rank)
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
}

impl Manifest {
    fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(&config)?,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn write(mut self, out: &Path, outputs: &[&str]) -> Result<()> {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        write_json(&self, out.join("manifest.json"))
    }
}

/// SHA-256 of the compact JSON encoding. Object keys are sorted, so equal
/// configurations hash equally regardless of field order in the source.
pub fn config_hash(config: &Value) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

/// Written by `factorize` next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub method: Method,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub final_kkt: f64,
    pub objective: f64,
    pub outer_iterations: usize,
    pub exact_zeros: usize,
    pub dead_components: Vec<ZeroColumn>,
    pub seconds: f64,
}

/// What a successful command wants the process to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Factorize(args) => cmd_factorize(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Bench(args) => cmd_bench(&args),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_value(path: &Path) -> Result<Value> {
    read_json(path)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Outcome> {
    let mut config: GenConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let (tensor, truth) = generate(&config)?;
    create_dir(&args.out)?;
    write_coo_file(&tensor, args.out.join("tensor.coo"))?;
    write_model_file(&truth, args.out.join("truth.json"))?;
    let mut manifest = Manifest::new("generate", &config, Some(config.seed))?;
    manifest.input(&args.config)?;
    manifest.write(&args.out, &["tensor.coo", "truth.json"])?;
    eprintln!(
        "generated {:?} tensor: {} nonzeros, {} samples",
        config.dims,
        tensor.nnz(),
        tensor.total_count()
    );
    Ok(Outcome::Done)
}

/// Reads the optional config file and applies the command-line overrides.
pub fn resolve_fit_config(path: Option<&Path>, overrides: &FitOverrides) -> Result<FitConfig> {
    let mut map = match path {
        Some(p) => match read_value(p)? {
            Value::Object(m) => m,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{}: expected a JSON object",
                    p.display()
                )))
            }
        },
        None => Map::new(),
    };
    let mut set = |key: &str, v: Value| {
        map.insert(key.into(), v);
    };
    if let Some(m) = overrides.method {
        set("method", Value::from(m.name()));
    }
    if let Some(r) = overrides.rank {
        set("rank", Value::from(r));
    }
    if let Some(t) = overrides.tau {
        set("tau", Value::from(t));
    }
    if let Some(o) = overrides.outer_max {
        set("outer_max", Value::from(o));
    }
    if let Some(t) = overrides.time_limit {
        set("time_limit", Value::from(t));
    }
    if let Some(s) = overrides.seed {
        set("seed", Value::from(s));
    }
    if overrides.mode1_only {
        set("mode1_only", Value::from(true));
    }
    if let Some(w) = overrides.workers {
        set("workers", Value::from(w));
    }
    let config: FitConfig = serde_json::from_value(Value::Object(map))?;
    config.validate()?;
    Ok(config)
}

pub fn cmd_factorize(args: &FactorizeArgs) -> Result<Outcome> {
    let config = resolve_fit_config(args.config.as_deref(), &args.overrides)?;
    let tensor = read_coo_file(&args.tensor)?;
    let start = Instant::now();
    let result = match &args.init {
        Some(p) => fit_from(&tensor, read_model_file(p)?, &config)?,
        None => fit(&tensor, &config)?,
    };
    let seconds = start.elapsed().as_secs_f64();

    create_dir(&args.out)?;
    write_model_file(&result.model, args.out.join("model.json"))?;
    let trace_path = args.out.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    result
        .trace
        .write_csv(std::io::BufWriter::new(file))
        .map_err(|e| Error::io(&trace_path, e))?;
    let summary = summarize(&tensor, &config, &result, seconds);
    write_json(&summary, args.out.join("summary.json"))?;

    let mut manifest = Manifest::new("factorize", &config, Some(config.seed))?;
    manifest.input(&args.tensor)?;
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    if let Some(p) = &args.init {
        manifest.input(p)?;
    }
    manifest.write(&args.out, &["model.json", "trace.csv", "summary.json"])?;

    eprintln!(
        "{}: {:?} after {} outer iterations, kkt {:.3e}, objective {:.6}",
        config.method,
        result.stop_reason,
        result.trace.len(),
        result.final_kkt,
        summary.objective
    );
    if args.strict && !result.converged {
        return Ok(Outcome::NotConverged);
    }
    Ok(Outcome::Done)
}

fn summarize(
    tensor: &SparseCountTensor,
    config: &FitConfig,
    result: &FitResult,
    seconds: f64,
) -> FitSummary {
    FitSummary {
        method: config.method,
        converged: result.converged,
        stop_reason: result.stop_reason,
        final_kkt: result.final_kkt,
        objective: result.model.kl_objective(tensor),
        outer_iterations: result.trace.len(),
        exact_zeros: exact_zero_count(&result.model).total,
        dead_components: result.dead_components.clone(),
        seconds,
    }
}

#[derive(Debug, Serialize)]
struct EvaluateConfig<'a> {
    model: &'a Path,
    truth: Option<&'a Path>,
    tensor: Option<&'a Path>,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Outcome> {
    let model = read_model_file(&args.model)?;
    let truth = args.truth.as_ref().map(read_model_file).transpose()?;
    let tensor = args.tensor.as_ref().map(read_coo_file).transpose()?;
    let report = evaluate(&model, truth.as_ref(), tensor.as_ref())?;

    create_dir(&args.out)?;
    write_json(&report, args.out.join("report.json"))?;
    let config = EvaluateConfig {
        model: &args.model,
        truth: args.truth.as_deref(),
        tensor: args.tensor.as_deref(),
    };
    let mut manifest = Manifest::new("evaluate", &config, None)?;
    for p in [Some(&args.model), args.truth.as_ref(), args.tensor.as_ref()]
        .into_iter()
        .flatten()
    {
        manifest.input(p)?;
    }
    manifest.write(&args.out, &["report.json"])?;
    let text = serde_json::to_string_pretty(&report)?;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(Outcome::Done)
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub rank: usize,
    pub seed: u64,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Wall time of the fit, present only when it reached `tau`.
    pub time_to_tau: Option<f64>,
    pub final_objective: f64,
    pub exact_zeros: usize,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.17e},{}",
            self.method,
            self.rank,
            self.seed,
            self.converged,
            self.outer_iterations,
            self.time_to_tau
                .map(|t| format!("{t:.6}"))
                .unwrap_or_default(),
            self.final_objective,
            self.exact_zeros
        )
    }
}

pub fn run_bench(tensor: &SparseCountTensor, config: &BenchConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for fit_config in config.fit_configs() {
        let start = Instant::now();
        let result = fit(tensor, &fit_config)?;
        let seconds = start.elapsed().as_secs_f64();
        rows.push(BenchRow {
            method: fit_config.method,
            rank: fit_config.rank,
            seed: fit_config.seed,
            converged: result.converged,
            outer_iterations: result.trace.len(),
            time_to_tau: result.converged.then_some(seconds),
            final_objective: result.model.kl_objective(tensor),
            exact_zeros: exact_zero_count(&result.model).total,
        });
        eprintln!(
            "{}",
            rows.last().map(BenchRow::csv_line).unwrap_or_default()
        );
    }
    Ok(rows)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Outcome> {
    let mut config: BenchConfig = read_json(&args.config)?;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.validate()?;
    let tensor = match (&config.tensor, &config.generate) {
        (Some(path), _) => read_coo_file(path)?,
        (None, Some(g)) => generate(g)?.0,
        (None, None) => unreachable!("validated"),
    };
    let rows = run_bench(&tensor, &config)?;

    create_dir(&args.out)?;
    let mut csv = String::from(BENCH_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    let csv_path = args.out.join("bench.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let mut manifest = Manifest::new("bench", &config, None)?;
    manifest.input(&args.config)?;
    if let Some(p) = &config.tensor {
        manifest.input(p)?;
    }
    manifest.write(&args.out, &["bench.csv"])?;
    Ok(Outcome::Done)
}
