//! Command-line interface: argument definitions, run manifests and the
//! subcommand implementations behind the `seed` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{self, CsvOptions, Dataset, Registry, SplitKind, SplitRatio, Splits};
use crate::error::{Result, SeedError};
use crate::model::{ModelConfig, SeedModel, Variant};
use crate::spatial::GraphVariant;
use crate::spectral::{self, SyntheticSpec};
use crate::training::{self, MetricsReport, TrainConfig};

/// Split ratio used for datasets absent from the registry.
pub const DEFAULT_SPLIT: &str = "7:1:2";
const MAX_GRID: usize = 100_000;

#[derive(Debug, Parser)]
#[command(name = "seed", version, about = "Spectral-entropy guided multivariate forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, metrics and manifest to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Spectral entropy and autocorrelation analysis.
    Analyze(AnalyzeArgs),
    /// Train every ablation variant with a shared seed.
    Ablate(TrainArgs),
    /// Generate a synthetic dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Registry name (sets the split ratio and date column); defaults to the file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Train:val:test ratio, overriding the registry (e.g. 7:1:2).
    #[arg(long, value_name = "RATIO")]
    pub split_ratio: Option<String>,
    /// Whether the first column holds timestamps [default: from registry, else true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub date_col: Option<bool>,
    /// TOML or JSON file adding or replacing registry entries.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    Tanh,
    Softmax,
}

impl From<GraphArg> for GraphVariant {
    fn from(g: GraphArg) -> Self {
        match g {
            GraphArg::Tanh => GraphVariant::Tanh,
            GraphArg::Softmax => GraphVariant::Softmax,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 96)]
    pub lookback: usize,
    #[arg(long, default_value_t = 96)]
    pub horizon: usize,
    #[arg(long, default_value_t = 16)]
    pub patch_len: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    /// Attention heads and graph heads.
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Neighbours kept per node [default: max(2, ceil(n/2))].
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long, value_enum, default_value_t = GraphArg::Tanh)]
    pub graph: GraphArg,
    /// full, wo_tattn, wo_cse, re_s1, re_s2, re_f1, re_f2, re_f3, re_c1, re_c2.
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    /// Weight of the entropy-matching loss.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
}

impl ModelArgs {
    pub fn model_config(&self, n_vars: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_vars,
            lookback: self.lookback,
            horizon: self.horizon,
            patch_len: self.patch_len,
            d_model: self.d_model,
            attn_heads: self.heads,
            gcn_heads: self.heads,
            knn_k: self.knn_k,
            graph_variant: self.graph.into(),
            lambda: self.lambda,
            n_layers: self.layers,
            variant: self.variant,
            seed,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            lambda: self.model.lambda,
            patience: self.patience,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`; supplies checkpoint and data settings.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint file [default: RUN/model.ckpt].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: SplitKind,
    /// Directory for the metrics file [default: RUN].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct AnalyzeArgs {
    /// Sine-plus-noise study over a grid of noise fractions.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: bool,
    /// Noise fractions as start:stop:step or a comma list.
    #[arg(long, default_value = "0:1:0.1")]
    pub alphas: String,
    #[arg(long, default_value_t = 24)]
    pub period: usize,
    #[arg(long, default_value_t = 512)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV to analyse column by column.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub date_col: Option<bool>,
    /// Output CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Sine channels at distinct periods followed by Gaussian noise channels.
    Mixed,
    /// One sine-plus-noise channel per grid value of --alphas.
    Alpha,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Mixed)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 4)]
    pub sines: usize,
    #[arg(long, default_value_t = 4)]
    pub noise: usize,
    #[arg(long, default_value_t = 4000)]
    pub length: usize,
    #[arg(long, default_value = "0:1:0.25")]
    pub alphas: String,
    #[arg(long, default_value_t = 24)]
    pub period: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIdentity {
    pub name: String,
    pub path: Option<PathBuf>,
    pub rows: usize,
    pub n_vars: usize,
    pub split: SplitRatio,
    pub date_col: bool,
    pub rejected_rows: usize,
    /// Git-style SHA-256 blob hash of the file contents.
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetIdentity,
    pub config_hash: String,
    pub out_dir: PathBuf,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, model: ModelConfig, train: TrainConfig, dataset: DatasetIdentity, out_dir: &Path) -> Result<Self> {
        let canonical = serde_json::to_vec(&(&model, &train, &dataset))?;
        Ok(Self {
            command: command.into(),
            config_hash: git_blob_hash(&canonical),
            model,
            train,
            dataset,
            out_dir: out_dir.to_path_buf(),
            version: env!("CARGO_PKG_VERSION").into(),
        })
    }
}

/// `sha256("blob <len>\0" ++ bytes)` in hex, as git's SHA-256 object format.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Alpha grids

/// Parses `start:stop:step` (inclusive, rounded to 12 decimals), a comma
/// separated list, or a single value.
pub fn parse_alpha_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |msg: String| SeedError::config(format!("alpha grid {s:?}: {msg}"));
    let num = |p: &str| -> Result<f64> {
        let v: f64 = p.trim().parse().map_err(|_| bad(format!("{p:?} is not a number")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(format!("{p:?} is not finite")))
        }
    };
    let s_trim = s.trim();
    if s_trim.is_empty() {
        return Err(bad("empty".into()));
    }
    if s_trim.contains(':') {
        let parts: Vec<&str> = s_trim.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step".into()));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 {
            return Err(bad("step must be positive".into()));
        }
        if stop < start {
            return Err(bad("stop is below start".into()));
        }
        let steps = ((stop - start) / step + 1e-9).floor();
        if !steps.is_finite() || steps >= MAX_GRID as f64 {
            return Err(bad(format!("more than {MAX_GRID} points")));
        }
        return Ok((0..=steps as usize)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect());
    }
    let values: Vec<f64> = s_trim.split(',').map(num).collect::<Result<_>>()?;
    if values.len() > MAX_GRID {
        return Err(bad(format!("more than {MAX_GRID} points")));
    }
    Ok(values)
}

// ---------------------------------------------------------------------------
// Commands

/// Applies `SEED_NUM_THREADS` to the global worker pool.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SEED_NUM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| SeedError::config(format!("SEED_NUM_THREADS={v:?} is not a positive integer")))?;
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a),
    }
}

pub struct LoadedData {
    pub dataset: Dataset,
    pub identity: DatasetIdentity,
}

pub fn load_data(args: &DataArgs) -> Result<LoadedData> {
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| SeedError::config("--data is required"))?;
    let mut registry = Registry::builtin();
    if let Some(p) = &args.registry {
        registry.load_override(p)?;
    }
    let name = args.dataset.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let entry = registry.get(&name);
    let split: SplitRatio = match (&args.split_ratio, entry) {
        (Some(s), _) => s.parse()?,
        (None, Some(e)) => e.split_ratio()?,
        (None, None) => DEFAULT_SPLIT.parse()?,
    };
    let date_col = args.date_col.unwrap_or(entry.is_none_or(|e| e.date_col));
    let bytes = std::fs::read(path).map_err(|e| SeedError::io(path, e))?;
    let mut dataset = data::read_csv(bytes.as_slice(), &name, &CsvOptions { date_col })?;
    dataset.split = Some(split);
    dataset.frequency = entry.and_then(|e| e.frequency.clone());
    let identity = DatasetIdentity {
        name,
        path: Some(path.clone()),
        rows: dataset.n_rows(),
        n_vars: dataset.n_vars(),
        split,
        date_col,
        rejected_rows: dataset.rejected_rows,
        content_hash: git_blob_hash(&bytes),
    };
    Ok(LoadedData { dataset, identity })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| SeedError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| SeedError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| SeedError::io(path, e))
}

fn prepare_splits(dataset: &Dataset, split: SplitRatio, config: &ModelConfig) -> Result<Splits> {
    Ok(data::prepare(dataset, split, config.lookback, config.horizon, true)?.0)
}

fn train_one(args: &TrainArgs, loaded: &LoadedData, variant: Variant) -> Result<(SeedModel, MetricsReport, RunManifest)> {
    let mut model_args = args.model.clone();
    model_args.variant = variant;
    let config = model_args.model_config(loaded.dataset.n_vars(), args.seed);
    let train_cfg = args.train_config();
    let manifest = RunManifest::new("train", config.clone(), train_cfg.clone(), loaded.identity.clone(), &args.out)?;
    let splits = prepare_splits(&loaded.dataset, loaded.identity.split, &config)?;
    let model = SeedModel::new(config)?;
    let quiet = args.quiet;
    let (model, report) = training::train_with(model, &splits, &train_cfg, |log| {
        if !quiet {
            eprintln!(
                "[{variant}] epoch {:>3}  train loss {:.6}  val mse {:.6}{}",
                log.epoch,
                log.train_loss,
                log.val_mse,
                if log.improved { "  *" } else { "" }
            );
        }
    })?;
    Ok((model, report, manifest))
}

pub fn cmd_train(args: &TrainArgs) -> Result<MetricsReport> {
    let loaded = load_data(&args.data)?;
    create_dir(&args.out)?;
    let (model, report, manifest) = train_one(args, &loaded, args.model.variant)?;
    checkpoint::save(&model, &args.out.join("model.ckpt"))?;
    write_json(&args.out.join("metrics.json"), &report)?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(report)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport> {
    let manifest: Option<RunManifest> = match &args.run {
        Some(dir) => Some(read_json(&dir.join("manifest.json"))?),
        None => None,
    };
    let ckpt_path = match (&args.checkpoint, &args.run) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("model.ckpt"),
        (None, None) => return Err(SeedError::config("eval needs --checkpoint or --run")),
    };
    let model = checkpoint::load(&ckpt_path)?;
    let data_args = match (&args.data.data, &manifest) {
        (Some(_), _) => args.data.clone(),
        (None, Some(m)) => DataArgs {
            data: m.dataset.path.clone(),
            dataset: Some(m.dataset.name.clone()),
            split_ratio: Some(m.dataset.split.to_string()),
            date_col: Some(m.dataset.date_col),
            registry: None,
        },
        (None, None) => return Err(SeedError::config("eval needs --data or --run")),
    };
    let loaded = load_data(&data_args)?;
    let config = model.config();
    if loaded.dataset.n_vars() != config.n_vars {
        return Err(SeedError::config(format!(
            "checkpoint expects {} variables, data has {}",
            config.n_vars,
            loaded.dataset.n_vars()
        )));
    }
    let eval_batch = manifest.as_ref().map_or(TrainConfig::default().eval_batch, |m| m.train.eval_batch);
    let splits = prepare_splits(&loaded.dataset, loaded.identity.split, config)?;
    let mut report = training::evaluate(&model, splits.get(args.split), eval_batch)?;
    if let Some(m) = &manifest {
        if m.model != *config {
            return Err(SeedError::config("checkpoint does not match the run manifest"));
        }
    }
    report.epochs = 0;
    let out = args.out.clone().or_else(|| args.run.clone());
    if let Some(dir) = out {
        create_dir(&dir)?;
        write_json(&dir.join(format!("eval_{}.json", args.split)), &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(report)
}

/// One row per variant; returned in the order of [`Variant::ALL`].
pub fn cmd_ablate(args: &TrainArgs) -> Result<Vec<(Variant, MetricsReport)>> {
    let loaded = load_data(&args.data)?;
    create_dir(&args.out)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let (_, report, manifest) = train_one(args, &loaded, variant)?;
        let dir = args.out.join(variant.name());
        create_dir(&dir)?;
        write_json(&dir.join("metrics.json"), &report)?;
        write_json(&dir.join("manifest.json"), &manifest)?;
        rows.push((variant, report));
    }
    let csv = ablation_csv(&rows);
    let path = args.out.join("ablation.csv");
    std::fs::write(&path, &csv).map_err(|e| SeedError::io(&path, e))?;
    print!("{csv}");
    Ok(rows)
}

pub fn ablation_csv(rows: &[(Variant, MetricsReport)]) -> String {
    let mut out = String::from("variant,mse,mae\n");
    for (v, r) in rows {
        out.push_str(&format!("{},{},{}\n", v.name(), r.mse, r.mae));
    }
    out
}

/// Per-variable analysis rows and notes about degenerate columns.
pub fn analyze_dataset(dataset: &Dataset, period: usize) -> Result<(String, Vec<String>)> {
    let mut out = String::from("variable,spectral_entropy,acf_peak\n");
    let mut notes = Vec::new();
    let max_lag = (2 * period).min(dataset.n_rows().saturating_sub(1));
    if max_lag == 0 {
        return Err(SeedError::data("need at least two rows to analyse"));
    }
    for (c, name) in dataset.columns.iter().enumerate() {
        let x = dataset.column(c);
        let entropy = spectral::spectral_entropy_or_zero(&x, None)?;
        let acf_peak = match spectral::autocorrelation(&x, max_lag) {
            Ok(acf) => acf.into_iter().fold(f64::NEG_INFINITY, f64::max),
            Err(SeedError::Degenerate(_)) => {
                notes.push(format!(
                    "{name}: constant column; spectral entropy reported as 0 and autocorrelation peak as 0"
                ));
                0.0
            }
            Err(e) => return Err(e),
        };
        out.push_str(&format!("{name},{entropy},{acf_peak}\n"));
    }
    Ok((out, notes))
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let (csv, notes) = match (&args.data, args.synthetic) {
        (Some(_), true) => return Err(SeedError::config("--synthetic and --data are mutually exclusive")),
        (None, true) => {
            let alphas = parse_alpha_grid(&args.alphas)?;
            let spec = SyntheticSpec {
                alpha: 0.0,
                period: args.period,
                length: args.length,
                seed: args.seed,
            };
            (spectral::study_to_csv(&spectral::acf_entropy_study(&alphas, &spec)?), Vec::new())
        }
        (Some(path), false) => {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let default = Registry::builtin().get(&name).is_none_or(|e| e.date_col);
            let date_col = args.date_col.unwrap_or(default);
            let ds = data::load_csv(path, &CsvOptions { date_col })?;
            analyze_dataset(&ds, args.period)?
        }
        (None, false) => return Err(SeedError::config("analyze needs --synthetic or --data")),
    };
    for n in &notes {
        eprintln!("note: {n}");
    }
    match &args.out {
        Some(p) => std::fs::write(p, csv).map_err(|e| SeedError::io(p, e)),
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| SeedError::io("<stdout>", e)),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let ds = match args.kind {
        SynthKind::Mixed => data::synthetic_mixed(args.sines, args.noise, args.length, args.seed)?,
        SynthKind::Alpha => {
            let alphas = parse_alpha_grid(&args.alphas)?;
            let mut cols = Vec::with_capacity(alphas.len());
            for &alpha in &alphas {
                cols.push(spectral::generate_synthetic(&SyntheticSpec {
                    alpha,
                    period: args.period,
                    length: args.length,
                    seed: args.seed,
                })?);
            }
            let values = (0..args.length).flat_map(|t| cols.iter().map(move |c| c[t])).collect();
            let names = alphas.iter().map(|a| format!("alpha_{a}")).collect();
            Dataset::from_rows("synthetic_alpha", names, values)?
        }
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data::save_csv(&ds, &args.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn alpha_grids() {
        let g = parse_alpha_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
        assert_eq!(parse_alpha_grid("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_alpha_grid("0.25").unwrap(), vec![0.25]);
        assert_eq!(parse_alpha_grid("0:0:1").unwrap(), vec![0.0]);
        for bad in ["", "1:0:0.1", "0:1:0", "0:1:-1", "a,b", "0:1", "0:1:1e-9", "nan", "0:inf:1"] {
            assert!(parse_alpha_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn blob_hash_matches_git_format() {
        // sha256 of "blob 0\0", as produced by `git hash-object` in sha256 repositories
        assert_eq!(
            git_blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn help_documents_flags() {
        let mut cmd = Cli::command();
        cmd.build();
        let train = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for flag in [
            "--data", "--dataset", "--split-ratio", "--date-col", "--lookback", "--horizon", "--patch-len",
            "--d-model", "--heads", "--knn-k", "--graph", "--variant", "--lambda", "--epochs", "--batch",
            "--lr", "--seed", "--out",
        ] {
            assert!(train.contains(flag), "{flag}");
        }
        let eval = cmd.find_subcommand_mut("eval").unwrap().render_long_help().to_string();
        assert!(eval.contains("--split "));
    }

    #[test]
    fn argument_parsing() {
        let cli = Cli::try_parse_from([
            "seed", "train", "--data", "x.csv", "--variant", "wo_cse", "--graph", "softmax", "--out", "o", "--date-col",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.model.variant, Variant::WoCse);
        assert_eq!(a.model.lookback, 96);
        assert_eq!(a.data.date_col, Some(true));
        let cfg = a.model.model_config(3, 7);
        assert_eq!((cfg.graph_variant, cfg.seed, cfg.n_vars), (GraphVariant::Softmax, 7, 3));
        assert!(Cli::try_parse_from(["seed", "analyze", "--synthetic", "--data", "x.csv"]).is_err());
        assert!(Cli::try_parse_from(["seed", "train", "--data", "x.csv", "--out", "o", "--variant", "nope"]).is_err());
    }

    #[test]
    fn constant_column_is_noted() {
        let values: Vec<f64> = (0..50).flat_map(|t| [2.0, (t as f64 * 0.7).sin()]).collect();
        let ds = Dataset::from_rows("c", vec!["flat".into(), "wave".into()], values).unwrap();
        let (csv, notes) = analyze_dataset(&ds, 12).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("flat,0,"));
        assert_eq!(notes.len(), 1);
    }
}
