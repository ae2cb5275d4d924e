//! Batch pipeline behind the `gfv` binary.
//!
//! Every subcommand reads and writes files under `--out` and records its
//! effective configuration in `<out>/run.json`, keyed by subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gfv_core::calibration::{self, CalibrationError, ThresholdEntry, ThresholdTable};
use gfv_core::dataset::synthetic::SyntheticCorpus;
use gfv_core::dataset::{
    self, stream_seed, CachedPreprocessor, Country, DatasetError, ForgeOptions, ForgeReport, Manifest, PairOptions,
    PairSample, Split,
};
use gfv_core::evaluation::{self, CountryEvaluation, EvaluationError};
use gfv_core::imaging::{self, ImagingError};
use gfv_core::network::{self, ArchitectureConfig, NetworkError, SiameseParams, TrainConfig};
use gfv_core::{DocClass, InputTensor};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Dataset(e) => e.kind(),
            Self::Imaging(e) => e.kind(),
            Self::Network(e) => e.kind(),
            Self::Calibration(e) => e.kind(),
            Self::Evaluation(e) => e.kind(),
            Self::Usage(_) => "Usage",
            Self::Io { .. } => "Io",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "gfv", version, about = "Identity-document forgery detection on guilloche patterns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic corpus of guilloche documents into --root.
    Synth(SynthArgs),
    /// Ingest --root, generate copy-move forgeries and split train/test.
    Forge(Options),
    /// Train the twin network on pairs from the train split.
    Train(Options),
    /// Derive one threshold per country from train-split pairs.
    Calibrate(Options),
    /// Measure TAR/FRR/FAR and ROC curves on test-split pairs.
    Eval(Options),
    /// Decide whether a query document is genuine given a genuine reference.
    Verify(VerifyArgs),
}

/// Flags shared by the pipeline subcommands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Options {
    /// Corpus root with one directory per country code.
    #[arg(long, default_value = "corpus")]
    pub root: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Manifest path [default: <out>/manifest.jsonl].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub block_size: usize,
    #[arg(long, default_value_t = 1)]
    pub zones_per_doc: usize,
    /// Side of the square network input.
    #[arg(long, default_value_t = 300)]
    pub resolution: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().margin)]
    pub margin: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Restrict to these countries (repeatable or comma separated).
    #[arg(long = "country", value_delimiter = ',')]
    pub countries: Vec<Country>,
    /// Threshold table [default: <out>/thresholds.json].
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Model checkpoint [default: <out>/checkpoint.gfv].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Similar pairs sampled per country.
    #[arg(long, default_value_t = 40)]
    pub n_similar: usize,
    /// Dissimilar pairs sampled per country.
    #[arg(long, default_value_t = 40)]
    pub n_dissimilar: usize,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub train_fraction: f64,
    /// Train one model per country instead of one pooled model.
    #[arg(long)]
    pub per_country_model: bool,
    /// Allow template/scan pairs.
    #[arg(long)]
    pub allow_cross_source: bool,
    /// Also evaluate at this threshold instead of the calibrated one.
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl Default for Options {
    fn default() -> Self {
        let cli = Cli::parse_from(["gfv", "train"]);
        match cli.command {
            Command::Train(o) => o,
            _ => unreachable!(),
        }
    }
}

impl Options {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join("manifest.jsonl"))
    }

    pub fn thresholds_path(&self) -> PathBuf {
        self.thresholds.clone().unwrap_or_else(|| self.out.join("thresholds.json"))
    }

    /// Checkpoint of the pooled model, or of one country with `--per-country-model`.
    pub fn checkpoint_path(&self, country: Option<Country>) -> PathBuf {
        let base = self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.gfv"));
        match (self.per_country_model, country) {
            (true, Some(c)) => {
                let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
                let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("gfv");
                base.with_file_name(format!("{stem}_{}.{ext}", c.code()))
            }
            _ => base,
        }
    }

    pub fn arch(&self) -> ArchitectureConfig {
        ArchitectureConfig::with_resolution(self.resolution)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.lr,
            margin: self.margin,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    fn pair_options(&self) -> PairOptions {
        PairOptions {
            allow_cross_source: self.allow_cross_source,
        }
    }

    fn selected(&self, manifest: &Manifest) -> Vec<Country> {
        manifest
            .countries()
            .into_iter()
            .filter(|c| self.countries.is_empty() || self.countries.contains(c))
            .collect()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Where to write the corpus.
    #[arg(long, default_value = "corpus")]
    pub root: PathBuf,
    #[arg(long = "country", value_delimiter = ',', default_values_t = [Country::Fin, Country::Grc, Country::Svk])]
    pub countries: Vec<Country>,
    #[arg(long, default_value_t = 20)]
    pub docs: usize,
    /// Side of the square documents, in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Known-genuine document.
    #[arg(long)]
    pub reference: PathBuf,
    /// Document to check.
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub country: Country,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub resolution: usize,
}

/// Merges this subcommand's configuration into `<out>/run.json`.
pub fn record_run<C: Serialize>(out: &Path, subcommand: &str, config: &C) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("run.json");
    let mut runs: BTreeMap<String, serde_json::Value> = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    let value = serde_json::to_value(config).expect("config serializes");
    runs.insert(subcommand.to_string(), value);
    let text = serde_json::to_string_pretty(&runs).expect("json") + "\n";
    std::fs::write(&path, text).map_err(io_err(&path))
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json") + "\n";
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>, CliError> {
    let corpus = SyntheticCorpus {
        countries: args.countries.clone(),
        docs_per_country: args.docs,
        size: args.size,
        seed: args.seed,
    };
    Ok(corpus.write(&args.root)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ForgeSummary {
    pub genuine: usize,
    pub forged: usize,
    pub train: usize,
    pub test: usize,
    pub skipped: usize,
}

/// Ingest, forge and split. Writes forged images, the manifest and `forge_report.json`.
pub fn cmd_forge(opts: &Options) -> Result<(Manifest, ForgeSummary), CliError> {
    record_run(&opts.out, "forge", opts)?;
    let (manifest, ingest_report) = dataset::ingest(&opts.root)?;
    for dir in &ingest_report.skipped_dirs {
        log::warn!("skipped directory {dir}");
    }
    let records: Vec<_> = manifest
        .records()
        .iter()
        .filter(|r| opts.countries.is_empty() || opts.countries.contains(&r.country))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(DatasetError::EmptyCorpus(opts.root.clone()).into());
    }
    let manifest = Manifest::new(records, opts.seed)?;
    let annotations = dataset::load_annotations(&manifest)?;
    let forge_options = ForgeOptions {
        block_size: opts.block_size,
        zones_per_doc: opts.zones_per_doc,
        seed: opts.seed,
        out_dir: opts.out.clone(),
    };
    let (forged, report): (Manifest, ForgeReport) = dataset::generate_forged_set(&manifest, &forge_options, &annotations)?;
    let split = dataset::split(&forged, opts.train_fraction, opts.seed)?;
    split.write(&opts.manifest_path())?;
    write_json(&opts.out.join("forge_report.json"), &report)?;
    let splits = split.splits().expect("split manifest");
    let summary = ForgeSummary {
        genuine: split.count_class(DocClass::Genuine),
        forged: split.count_class(DocClass::Forged),
        train: splits.iter().filter(|&&s| s == Split::Train).count(),
        test: splits.iter().filter(|&&s| s == Split::Test).count(),
        skipped: report.skipped().count(),
    };
    Ok((split, summary))
}

fn pairs_for(
    opts: &Options,
    manifest: &Manifest,
    country: Country,
    split: Split,
    purpose: &str,
) -> Result<Vec<PairSample>, CliError> {
    let seed = stream_seed(opts.seed, purpose);
    Ok(dataset::sample_pairs(
        manifest,
        country,
        opts.n_similar,
        opts.n_dissimilar,
        split,
        seed,
        opts.pair_options(),
    )?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoints: Vec<PathBuf>,
    pub pairs: usize,
    pub final_epoch_loss: f64,
}

/// Trains on train-split pairs of every selected country and saves the checkpoint and loss trace.
pub fn cmd_train(opts: &Options) -> Result<TrainSummary, CliError> {
    record_run(&opts.out, "train", opts)?;
    let manifest = Manifest::read(&opts.manifest_path())?;
    let countries = opts.selected(&manifest);
    let arch = opts.arch();
    let config = opts.train_config();
    let pre = CachedPreprocessor::new(arch.input_h, arch.input_w);
    let mut groups: Vec<(Option<Country>, Vec<PairSample>)> = Vec::new();
    for &country in &countries {
        let pairs = pairs_for(opts, &manifest, country, Split::Train, "train-pairs")?;
        if opts.per_country_model {
            groups.push((Some(country), pairs));
        } else if let Some((_, pooled)) = groups.first_mut() {
            pooled.extend(pairs);
        } else {
            groups.push((None, pairs));
        }
    }
    if groups.is_empty() {
        return Err(NetworkError::EmptyTrainingSet.into());
    }
    let mut summary = TrainSummary {
        checkpoints: Vec::new(),
        pairs: 0,
        final_epoch_loss: f64::NAN,
    };
    for (country, pairs) in &groups {
        let label = country.map_or("pooled".to_string(), |c| c.to_string());
        let trace_path = match country {
            Some(c) => opts.out.join(format!("loss_trace_{}.csv", c.code())),
            None => opts.out.join("loss_trace.csv"),
        };
        let result = network::train_with_progress::<f32>(&arch, &config, pairs, &pre, |epoch, loss| {
            log::info!("[{label}] epoch {}/{}: loss {loss:.6}", epoch + 1, config.epochs);
        });
        let (params, trace) = match result {
            Ok(v) => v,
            Err(NetworkError::DivergenceDetected { epoch, batch, trace }) => {
                trace.write_csv(&trace_path)?;
                return Err(NetworkError::DivergenceDetected { epoch, batch, trace }.into());
            }
            Err(e) => return Err(e.into()),
        };
        trace.write_csv(&trace_path)?;
        let path = opts.checkpoint_path(*country);
        network::save_checkpoint(&params, &path)?;
        summary.checkpoints.push(path);
        summary.pairs += pairs.len();
        summary.final_epoch_loss = trace.epoch_means().last().copied().unwrap_or(f64::NAN);
    }
    Ok(summary)
}

fn load_model(opts: &Options, country: Country) -> Result<SiameseParams<f32>, CliError> {
    Ok(network::load_checkpoint(&opts.checkpoint_path(Some(country)), &opts.arch())?)
}

#[derive(Debug, Clone)]
pub struct CalibrationSummary {
    pub thresholds: ThresholdTable,
    /// Countries that could not be calibrated, with the reason.
    pub failed: Vec<(Country, String)>,
}

impl Serialize for ThresholdTableView<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.entries().serialize(s)
    }
}

struct ThresholdTableView<'a>(&'a ThresholdTable);

/// Per-country thresholds from train-split pairs; writes the table and `calibration/distances_<country>.csv`.
pub fn cmd_calibrate(opts: &Options) -> Result<CalibrationSummary, CliError> {
    record_run(&opts.out, "calibrate", opts)?;
    let manifest = Manifest::read(&opts.manifest_path())?;
    let arch = opts.arch();
    let pre = CachedPreprocessor::new(arch.input_h, arch.input_w);
    let mut table = ThresholdTable::new();
    let mut failed = Vec::new();
    let mut dumps = Vec::new();
    let mut pooled_model = None;
    for country in opts.selected(&manifest) {
        let pairs = match pairs_for(opts, &manifest, country, Split::Train, "calibration-pairs") {
            Ok(p) => p,
            Err(CliError::Dataset(e @ DatasetError::InsufficientDocuments { .. })) => {
                log::warn!("{country}: {e}");
                failed.push((country, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let params = if opts.per_country_model {
            load_model(opts, country)?
        } else {
            if pooled_model.is_none() {
                pooled_model = Some(load_model(opts, country)?);
            }
            pooled_model.clone().expect("loaded")
        };
        let (sim, dis) = calibration::compute_distances(&params, &pairs, &pre)?;
        let stats = calibration::distance_stats(&sim, &dis, country)?;
        let record = calibration::determine_threshold(&stats)?;
        log::info!(
            "{country}: lambda {:.4} range [{:.4}, {:.4}] overlap {} accuracy {:.3}",
            record.lambda,
            record.range_lo,
            record.range_hi,
            record.overlap,
            record.calibration_accuracy()
        );
        table.insert(ThresholdEntry::from(&record));
        let to64 = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
        dumps.push((country, to64(&sim), to64(&dis)));
    }
    table.write(&opts.thresholds_path())?;
    let dir = opts.out.join("calibration");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (country, sim, dis) in dumps {
        write_distances(&dir.join(format!("distances_{}.csv", country.code())), &sim, &dis)?;
    }
    Ok(CalibrationSummary { thresholds: table, failed })
}

fn write_distances(path: &Path, sim: &[f64], dis: &[f64]) -> Result<(), CliError> {
    let mut text = String::from("class,distance\n");
    for (class, list) in [("similar", sim), ("dissimilar", dis)] {
        for d in list {
            text.push_str(&format!("{class},{d:?}\n"));
        }
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Test-split metrics at the calibrated thresholds; writes `eval/metrics.csv` and per-country CSVs.
pub fn cmd_eval(opts: &Options) -> Result<Vec<CountryEvaluation>, CliError> {
    record_run(&opts.out, "eval", opts)?;
    let manifest = Manifest::read(&opts.manifest_path())?;
    let table = ThresholdTable::read(&opts.thresholds_path())?;
    let arch = opts.arch();
    let pre = CachedPreprocessor::new(arch.input_h, arch.input_w);
    let mut evaluations = Vec::new();
    let mut pooled_model = None;
    for country in opts.selected(&manifest) {
        let lambda = match (opts.lambda, table.lambda(country)) {
            (Some(l), _) => l,
            (None, Ok(l)) => l,
            (None, Err(e)) => {
                log::warn!("{e}; skipping");
                continue;
            }
        };
        let pairs = match pairs_for(opts, &manifest, country, Split::Test, "eval-pairs") {
            Ok(p) => p,
            Err(CliError::Dataset(e @ DatasetError::InsufficientDocuments { .. })) => {
                log::warn!("{country}: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let params = if opts.per_country_model {
            load_model(opts, country)?
        } else {
            if pooled_model.is_none() {
                pooled_model = Some(load_model(opts, country)?);
            }
            pooled_model.clone().expect("loaded")
        };
        let (sim, dis) = calibration::compute_distances(&params, &pairs, &pre)?;
        let sim: Vec<f64> = sim.iter().map(|&x| f64::from(x)).collect();
        let dis: Vec<f64> = dis.iter().map(|&x| f64::from(x)).collect();
        let report = evaluation::compute_metrics(&sim, &dis, lambda, country)?;
        log::info!(
            "{country}: lambda {lambda:.4} TAR {:.3} FRR {:.3} FAR {:.3}",
            report.tar,
            report.frr,
            report.far
        );
        let roc = evaluation::roc_curve(&sim, &dis)?;
        evaluations.push(CountryEvaluation {
            report,
            roc,
            similar: sim,
            dissimilar: dis,
        });
    }
    evaluation::export_report(&evaluations, &opts.out.join("eval"))?;
    Ok(evaluations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    #[serde(rename = "GENUINE")]
    Genuine,
    #[serde(rename = "FORGED")]
    Forged,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub decision: Decision,
    pub distance: f64,
    pub lambda: f64,
}

fn load_input(path: &Path, side: usize) -> Result<InputTensor, CliError> {
    let img = imaging::load_grayscale(path)?;
    Ok(InputTensor::from_image(imaging::resize_bilinear(&img, side, side)?))
}

/// Compares a query with a genuine reference of the same country.
pub fn cmd_verify(args: &VerifyArgs) -> Result<Verdict, CliError> {
    let table = ThresholdTable::read(&args.thresholds)?;
    let lambda = table.lambda(args.country)?;
    let arch = ArchitectureConfig::with_resolution(args.resolution);
    let params: SiameseParams<f32> = network::load_checkpoint(&args.checkpoint, &arch)?;
    let reference = load_input(&args.reference, args.resolution)?;
    let query = load_input(&args.query, args.resolution)?;
    let both = params.embed_batch(&[&reference, &query])?;
    let distance = f64::from(network::pair_distance(&both[0], &both[1])?);
    let decision = match evaluation::classify_pair(distance, lambda) {
        dataset::PairLabel::Similar => Decision::Genuine,
        dataset::PairLabel::Dissimilar => Decision::Forged,
    };
    Ok(Verdict {
        decision,
        distance,
        lambda,
    })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result: Result<(i32, String), CliError> = match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|written| (0, format!("{{\"documents\":{}}}", written.len()))),
        Command::Forge(o) => cmd_forge(o).map(|(_, s)| (0, json(&s))),
        Command::Train(o) => cmd_train(o).map(|s| (0, json(&s))),
        Command::Calibrate(o) => cmd_calibrate(o).map(|s| {
            let view = serde_json::json!({
                "thresholds": ThresholdTableView(&s.thresholds),
                "failed": s.failed,
            });
            (0, view.to_string())
        }),
        Command::Eval(o) => cmd_eval(o).map(|evals| {
            let reports: Vec<_> = evals.iter().map(|e| &e.report).collect();
            (0, json(&reports))
        }),
        Command::Verify(a) => cmd_verify(a).map(|v| {
            let code = match v.decision {
                Decision::Genuine => 0,
                Decision::Forged => 2,
            };
            let name = match v.decision {
                Decision::Genuine => "GENUINE",
                Decision::Forged => "FORGED",
            };
            (code, format!("{name} distance={} lambda={}", v.distance, v.lambda))
        }),
    };
    match result {
        Ok((code, text)) => {
            println!("{text}");
            code
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

fn json<V: Serialize>(v: &V) -> String {
    serde_json::to_string(v).expect("json")
}
