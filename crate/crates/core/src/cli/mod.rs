//! Command-line experiment runner.
//!
//! Each subcommand resolves its configuration from built-in defaults, an
//! optional TOML file (`--config`, unknown keys rejected) and flags, in that
//! order, and embeds the resolved configuration in what it writes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{self, Strategy, SyncConfig, TrainReport};
use crate::cost;
use crate::data::{self, Dataset};
use crate::exec::ExecMode;
use crate::gdci::{self, VerifyOptions};
use crate::mask::{self, MaskMoments, MaskStrategy};
use crate::nn::{ActivationKind, Loss, Model, ModelDims};
use crate::rng::derive_seed;

#[derive(Debug, Parser)]
#[command(name = "ist", version, about = "Independent subnet training experiments")]
pub struct Cli {
    /// Worker execution: `parallel` (thread pool) or `sequential`.
    #[arg(long, global = true, default_value = "parallel")]
    pub exec: ExecMode,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a blob or CSV dataset; writes metrics.csv and report.json.
    Train(TrainArgs),
    /// Traffic and FLOP sweep over n; writes cost.csv.
    Costmodel(CostArgs),
    /// Compressed-iterate descent checks; writes gdci_report.json.
    GdciVerify(GdciArgs),
    /// Monte-Carlo moments of iid mask plans; writes mask_stats.json.
    MaskStats(MaskArgs),
    /// Generate a blob dataset as CSV.
    GenData(GenArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "J")]
    pub j: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Layer widths, e.g. `64,128,128,10`.
    #[arg(long)]
    pub dims: Option<ModelDims>,
    #[arg(long)]
    pub mask: Option<MaskStrategy>,
    #[arg(long)]
    pub activation: Option<ActivationKind>,
    /// Train on this CSV instead of generated blobs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dims: Option<ModelDims>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long = "J")]
    pub j: Option<usize>,
    /// Site counts to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GdciArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keep probability; default picks ω at 0.4 of the admissible cap.
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dims: Option<ModelDims>,
    /// Site counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV file.
    #[arg(long, default_value = "blobs.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 64,
            per_class: 1200,
            spread: 1.0,
            seed: 7,
        }
    }
}

impl BlobSpec {
    pub fn generate(&self) -> crate::Result<Dataset> {
        data::gen_blobs(self.classes, self.dim, self.per_class, self.spread, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub batch: usize,
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dims: ModelDims,
    pub mask: MaskStrategy,
    pub activation: ActivationKind,
    /// CSV dataset; blobs are generated when absent.
    pub data: Option<PathBuf>,
    pub blobs: BlobSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ist,
            n: 2,
            j: 10,
            batch: 32,
            eta: 0.05,
            epochs: 5,
            seed: 0,
            dims: ModelDims::new(vec![64, 128, 128, 10]).expect("valid default widths"),
            mask: MaskStrategy::Balanced,
            activation: ActivationKind::Relu,
            data: None,
            blobs: BlobSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn sync_config(&self, exec: ExecMode) -> SyncConfig {
        SyncConfig {
            strategy: self.strategy,
            n_sites: self.n,
            local_iters: self.j,
            batch: self.batch,
            eta: self.eta,
            epochs: self.epochs,
            seed: self.seed,
            mask_strategy: self.mask,
            loss: Loss::CrossEntropy,
            exec,
        }
    }

    /// Seed of the initial weights.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init", 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub dims: ModelDims,
    pub batch: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub n: Vec<usize>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::new(vec![1000, 4000, 4000, 4000, 200]).expect("valid default widths"),
            batch: 512,
            j: 10,
            n: vec![1, 2, 4, 8, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub dims: ModelDims,
    pub n: Vec<usize>,
    pub samples: u64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::new(vec![8, 16, 16, 16, 4]).expect("valid default widths"),
            n: vec![2, 4, 8],
            samples: 100_000,
            seed: 0,
        }
    }
}

/// Output of `train`: resolved configuration next to the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub init_seed: u64,
    pub dataset_sha256: String,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStatsEntry {
    pub n: usize,
    pub moments: MaskMoments,
    pub marginal_z: f64,
    pub cross_z: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStatsRun {
    pub config: MaskConfig,
    pub entries: Vec<MaskStatsEntry>,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn resolve_train(args: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut c: TrainConfig = load_config(args.config.as_deref())?;
    set(&mut c.strategy, args.strategy);
    set(&mut c.n, args.n);
    set(&mut c.j, args.j);
    set(&mut c.batch, args.batch);
    set(&mut c.eta, args.eta);
    set(&mut c.epochs, args.epochs);
    set(&mut c.seed, args.seed);
    set(&mut c.dims, args.dims.clone());
    set(&mut c.mask, args.mask);
    set(&mut c.activation, args.activation);
    if args.data.is_some() {
        c.data = args.data.clone();
    }
    Ok(c)
}

pub fn train(args: &TrainArgs, exec: ExecMode) -> anyhow::Result<TrainRun> {
    let config = resolve_train(args)?;
    let sync = config.sync_config(exec);
    sync.validate()?;
    let dataset = match &config.data {
        Some(path) => data::load_csv(path).with_context(|| format!("loading {}", path.display()))?,
        None => config.blobs.generate()?,
    };
    if config.dims.input() != dataset.n_features() || config.dims.output() != dataset.n_classes() {
        bail!(
            "dims {} do not fit the dataset ({} features, {} classes)",
            config.dims,
            dataset.n_features(),
            dataset.n_classes()
        );
    }
    let dataset_sha256 = hex(&Sha256::digest(dataset.to_csv_string().as_bytes()));
    let model = Model::init(config.dims.clone(), config.activation, config.init_seed());
    let outcome = cluster::run(&model, &dataset, &sync)?;
    let run = TrainRun {
        init_seed: config.init_seed(),
        config,
        dataset_sha256,
        report: outcome.report,
    };
    write(&args.out.join("metrics.csv"), &run.report.metrics_csv())?;
    write(&args.out.join("report.json"), &to_json(&run)?)?;
    Ok(run)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn costmodel(args: &CostArgs) -> anyhow::Result<String> {
    let mut c: CostConfig = load_config(args.config.as_deref())?;
    set(&mut c.dims, args.dims.clone());
    set(&mut c.batch, args.batch);
    set(&mut c.j, args.j);
    set(&mut c.n, args.n.clone());
    let rows = cost::emit_cost_sweep(&c.dims, c.batch, c.j, &c.n)?;
    let comment = format!("dims={} batch={} J={}", c.dims, c.batch, c.j);
    let csv = cost::cost_sweep_csv(&rows, &comment);
    write(&args.out.join("cost.csv"), &csv)?;
    Ok(csv)
}

pub fn gdci_verify(args: &GdciArgs, exec: ExecMode) -> anyhow::Result<gdci::GdciReport> {
    let mut c: VerifyOptions = load_config(args.config.as_deref())?;
    if args.xi.is_some() {
        c.xi = args.xi;
    }
    set(&mut c.iterations, args.t);
    set(&mut c.runs, args.runs);
    set(&mut c.seed, args.seed);
    let report = gdci::verify(&c, exec)?;
    write(&args.out.join("gdci_report.json"), &to_json(&report)?)?;
    Ok(report)
}

pub fn mask_stats(args: &MaskArgs, exec: ExecMode) -> anyhow::Result<MaskStatsRun> {
    let mut c: MaskConfig = load_config(args.config.as_deref())?;
    set(&mut c.dims, args.dims.clone());
    set(&mut c.n, args.n.clone());
    set(&mut c.samples, args.samples);
    set(&mut c.seed, args.seed);
    if c.n.is_empty() {
        bail!("no site counts given");
    }
    let mut entries = Vec::with_capacity(c.n.len());
    for &n in &c.n {
        let moments = mask::moment_report(&c.dims, n, c.samples, derive_seed(c.seed, "mask-stats", n as u64), exec)?;
        let (marginal_z, cross_z) = (moments.marginal_z(), moments.cross_z());
        entries.push(MaskStatsEntry {
            n,
            passed: marginal_z <= 3.0 && cross_z <= 3.0,
            marginal_z,
            cross_z,
            moments,
        });
    }
    let run = MaskStatsRun { config: c, entries };
    write(&args.out.join("mask_stats.json"), &to_json(&run)?)?;
    Ok(run)
}

pub fn gen_data(args: &GenArgs) -> anyhow::Result<Dataset> {
    let mut c: BlobSpec = load_config(args.config.as_deref())?;
    set(&mut c.classes, args.classes);
    set(&mut c.dim, args.dim);
    set(&mut c.per_class, args.per_class);
    set(&mut c.spread, args.spread);
    set(&mut c.seed, args.seed);
    let dataset = c.generate()?;
    write(&args.out, &dataset.to_csv_string())?;
    Ok(dataset)
}

/// Run one parsed command, printing a short summary on stdout.
pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => {
            let run = train(a, cli.exec)?;
            if let Some(last) = run.report.epochs.last() {
                println!(
                    "{} n={} epoch={} test_acc={:.4} floats={}",
                    run.config.strategy.name(),
                    run.config.n,
                    last.epoch,
                    last.test_acc,
                    run.report.ledger.total_floats()
                );
            }
            println!("wrote {}", a.out.display());
        }
        Command::Costmodel(a) => {
            print!("{}", costmodel(a)?);
        }
        Command::GdciVerify(a) => {
            let r = gdci_verify(a, cli.exec)?;
            println!(
                "xi={} omega={:.3e} theorem: min={:.4e} rhs={:.4e} corollary admissible={} lemma2={} properties={}",
                r.xi,
                r.omega,
                r.theorem.observed_min,
                r.theorem.rhs.unwrap_or(f64::NAN),
                r.corollary.admissible,
                r.lemma2.passed,
                r.unbiasedness.iter().all(|u| u.passed) && r.variance.iter().all(|v| v.passed)
            );
            if !r.passed {
                bail!("verification failed; see {}", a.out.join("gdci_report.json").display());
            }
        }
        Command::MaskStats(a) => {
            let run = mask_stats(a, cli.exec)?;
            for e in &run.entries {
                println!("n={} marginal_z={:.3} cross_z={:.3} passed={}", e.n, e.marginal_z, e.cross_z, e.passed);
            }
            if run.entries.iter().any(|e| !e.passed) {
                bail!("moment check outside three standard errors");
            }
        }
        Command::GenData(a) => {
            let d = gen_data(a)?;
            println!("wrote {} rows to {}", d.len(), a.out.display());
        }
    }
    Ok(())
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
