//! Command-line front end: `synth`, `run`, `label`, `eval`.
//!
//! Exit codes: 0 success, 1 I/O or checkpoint failure, 2 configuration error,
//! 3 data error, 4 divergence.

pub mod config;
pub mod output;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use self::config::{Overrides, RunConfig};
use self::output::*;
use crate::data::{load_csv, split, split_deployment, synth_generate, write_csv, CsvSchema, SynthConfig, WindowPolicy};
use crate::error::{Error, Result};
use crate::metrics::{confusion, Averaging, Decision, MetricsReport};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::ssl::{assign_pseudo_labels, run_crupl};
use crate::tempcnn::predict_proba;

#[derive(Debug, Parser)]
#[command(name = "crupl", version, about = "Curriculum pseudo-labeling for multichannel time-series windows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset and its schema.
    Synth(SynthArgs),
    /// Train, pseudo-label and (with ground truth) score a dataset.
    Run(RunArgs),
    /// Label new windows with a finished run's network and thresholds.
    Label(LabelArgs),
    /// Score a pseudo-label file against a truth file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with synth keys (classes, per_class, channels, length, class_margin, seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Base name of the written `<name>.csv` and `<name>.schema.toml`.
    #[arg(long, default_value = "synth")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "crupl-run")]
    pub out_dir: PathBuf,
    /// Maximum curriculum iterations (overrides `curriculum.max_iterations`).
    #[arg(long)]
    pub curriculum_cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Output directory of a previous `run`.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Schema of `--input`; defaults to the pre-windowed layout of the run's data.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Defaults to `<run-dir>/labels.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub decisions: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Report micro averages in the table row instead of macro.
    #[arg(long)]
    pub micro: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } | Error::CurriculumAbort { .. } => 4,
        Error::Io { .. } | Error::Checkpoint(_) => 1,
        Error::Dimension(_)
        | Error::InvalidValue(_)
        | Error::DegenerateBatch(_)
        | Error::Stratification(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::Precondition(_)
        | Error::Join(_) => 3,
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Label(a) => cmd_label(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.classes = a.classes.unwrap_or(cfg.classes);
    cfg.per_class = a.per_class.unwrap_or(cfg.per_class);
    cfg.channels = a.channels.unwrap_or(cfg.channels);
    cfg.length = a.length.unwrap_or(cfg.length);
    cfg.class_margin = a.margin.unwrap_or(cfg.class_margin);
    cfg.validate()?;
    let canonical = toml::to_string(&cfg).expect("synth config serializes");
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));

    let ds = synth_generate(&cfg)?;
    create_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join(format!("{}.csv", a.name));
    let schema_path = a.out_dir.join(format!("{}.schema.toml", a.name));
    let comments = vec![
        hash_comment(&hash),
        format!("synth {}", canonical.trim().replace('\n', ", ")),
    ];
    write_csv(&ds, &csv_path, &comments)?;
    let schema = CsvSchema::for_dataset(&ds);
    write_file(&schema_path, format!("# {}\n{}", hash_comment(&hash), schema.to_toml()))?;
    println!("wrote {} windows to {}", ds.len(), csv_path.display());
    for (name, n) in ds.class_names().iter().zip(ds.class_counts().unwrap_or_default()) {
        println!("  {name}: {n}");
    }
    Ok(())
}

fn schema_for(cfg: &RunConfig) -> Result<CsvSchema> {
    let path = match &cfg.data.schema {
        Some(p) => cfg.resolve(p),
        None => cfg.resolve(&cfg.data.path).with_extension("schema.toml"),
    };
    CsvSchema::load(&path)
}

pub fn cmd_run(a: &RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.apply(&Overrides {
        seed: a.seed,
        curriculum_cap: a.curriculum_cap,
    });
    cfg.validate()?;
    let hash = cfg.hash();
    log::info!("config hash {hash}");

    let schema = schema_for(&cfg)?;
    let data = load_csv(&cfg.resolve(&cfg.data.path), &schema)?;
    let (part, mode) = match &cfg.data.unlabeled_path {
        Some(u) => {
            let pool = load_csv(&cfg.resolve(u), &schema)?;
            (split_deployment(&data, &pool, &cfg.split_spec())?, "deployment")
        }
        None => (split(&data, &cfg.split_spec())?, "evaluation"),
    };
    log::info!(
        "{mode} mode: {} labeled, {} validation, {} unlabeled windows",
        part.labeled.len(),
        part.validation.len(),
        part.unlabeled.len()
    );

    create_dir(&a.out_dir)?;
    let outcome = match run_crupl(&part, &cfg.crupl()) {
        Ok(o) => o,
        Err(Error::CurriculumAbort {
            iteration,
            last_good,
            source,
        }) => {
            let p = a.out_dir.join(LAST_GOOD_CHECKPOINT);
            save_checkpoint(&last_good, Some(hash.clone()), &p)?;
            log::error!("saved the network from before iteration {iteration} to {}", p.display());
            return Err(Error::CurriculumAbort {
                iteration,
                last_good,
                source,
            });
        }
        Err(e) => return Err(e),
    };

    let out = |name: &str| a.out_dir.join(name);
    let names = part.unlabeled.class_names();
    save_checkpoint(&outcome.network, Some(hash.clone()), &out(CHECKPOINT))?;
    write_pseudo_labels(
        &out(PSEUDO_LABELS),
        part.unlabeled.ids(),
        names,
        &outcome.labels,
        Some(&outcome.curriculum.first_selected),
        &hash,
    )?;
    write_csv(&part.unlabeled, &out(UNLABELED), &[hash_comment(&hash)])?;
    if let Some(hidden) = &part.hidden {
        write_truth(&out(HIDDEN_TRUTH), hidden.ids(), hidden.labels(), names, &hash)?;
    }
    if let Some(m) = &outcome.metrics {
        write_metrics(&a.out_dir, m, cfg.metrics.averaging, &hash)?;
        println!(
            "accuracy {:.4} over {} scored windows, abstained {} ({:.1}%), macro FPR {:.4}",
            m.accuracy,
            m.scored,
            m.abstained,
            100.0 * m.abstention_rate,
            m.macro_avg.fpr
        );
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash.clone(),
        config: cfg.clone(),
        data: DataSummary {
            mode: mode.to_string(),
            channels: part.labeled.channels(),
            length: part.labeled.length(),
            class_names: names.to_vec(),
            labeled: part.labeled.len(),
            validation: part.validation.len(),
            unlabeled: part.unlabeled.len(),
        },
        param_count: outcome.network.param_count(),
        feature_stats: outcome.feature_stats.clone(),
        thresholds: outcome.thresholds.clone(),
        epochs: EpochCounts {
            warmup_supervised: outcome.warmup.supervised.epochs.len(),
            warmup_consistency: outcome.warmup.consistency.epochs.len(),
        },
        curriculum: outcome.curriculum.iterations.clone(),
        abstained: outcome.labels.abstained(),
        accuracy: outcome.metrics.as_ref().map(|m| m.accuracy),
    };
    write_json(&out(MANIFEST), &manifest)?;
    println!("wrote run outputs to {}", a.out_dir.display());
    Ok(())
}

fn write_metrics(dir: &Path, m: &MetricsReport, averaging: Averaging, hash: &str) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(METRICS_JSON), m)?;
    write_file(
        &dir.join(METRICS_CSV),
        format!("# {}\n{}", hash_comment(hash), m.table_csv(averaging)),
    )
}

pub fn cmd_label(a: &LabelArgs) -> Result<()> {
    let manifest = Manifest::load(&a.run_dir.join(MANIFEST))?;
    let (network, ckpt_hash) = load_checkpoint(&a.run_dir.join(CHECKPOINT))?;
    if ckpt_hash.as_deref() != Some(manifest.config_hash.as_str()) {
        return Err(Error::Checkpoint("checkpoint and manifest come from different runs".into()));
    }
    let schema = match &a.schema {
        Some(p) => CsvSchema::load(p)?,
        None => CsvSchema {
            channels: manifest.data.channels,
            window: WindowPolicy::Prewindowed {
                length: manifest.data.length,
            },
            label_column: Some("label".into()),
            id_column: Some("sample_id".into()),
            class_names: manifest.data.class_names.clone(),
        },
    };
    if schema.class_names != manifest.data.class_names {
        return Err(Error::Schema("input schema declares different classes than the run".into()));
    }
    let ds = load_csv(&a.input, &schema)?;
    if ds.channels() != manifest.data.channels || ds.length() != manifest.data.length {
        return Err(Error::dim(format!(
            "input windows are [{}, {}] but the run used [{}, {}]",
            ds.channels(),
            ds.length(),
            manifest.data.channels,
            manifest.data.length
        )));
    }
    let started = Instant::now();
    let x = manifest.feature_stats.apply(ds.x())?;
    let probs = predict_proba(&network, &x)?;
    let result = assign_pseudo_labels(&probs, &manifest.thresholds)?;
    let elapsed = started.elapsed().as_secs_f64();
    if !ds.is_empty() {
        log::info!(
            "labeled {} windows in {elapsed:.3}s ({:.1} µs per window)",
            ds.len(),
            1e6 * elapsed / ds.len() as f64
        );
    }
    let path = a.output.clone().unwrap_or_else(|| a.run_dir.join("labels.csv"));
    write_pseudo_labels(&path, ds.ids(), ds.class_names(), &result, None, &manifest.config_hash)?;
    println!(
        "wrote {} decisions ({} abstained) to {}",
        ds.len(),
        result.abstained(),
        path.display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let decisions = read_decisions(&a.decisions)?;
    let truth = read_truth(&a.truth)?;
    let index: HashMap<&str, usize> = decisions
        .class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut t = Vec::new();
    let mut d: Vec<Decision> = Vec::new();
    let mut missing = 0usize;
    for (id, dec) in decisions.ids.iter().zip(&decisions.decisions) {
        match truth.get(id) {
            Some(name) => {
                let c = *index.get(name.as_str()).ok_or_else(|| {
                    Error::Schema(format!("truth label {name:?} for {id} is not a class of the decisions file"))
                })?;
                t.push(c);
                d.push(*dec);
            }
            None => missing += 1,
        }
    }
    if t.is_empty() && !decisions.ids.is_empty() {
        return Err(Error::Join(format!(
            "no sample_id in {} appears in {}",
            a.decisions.display(),
            a.truth.display()
        )));
    }
    if missing > 0 {
        log::warn!("{missing} decisions have no ground truth and are not scored");
    }
    let cm = confusion(&t, &d, decisions.class_names.len())?;
    let report = MetricsReport::new(&cm, &decisions.class_names, a.micro);
    let hash = read_hash_comment(&a.decisions).unwrap_or_else(|| "unknown".into());
    let averaging = if a.micro { Averaging::Micro } else { Averaging::Macro };
    write_metrics(&a.out_dir, &report, averaging, &hash)?;
    println!(
        "accuracy {:.4} over {} scored windows, abstention {:.1}%",
        report.accuracy,
        report.scored,
        100.0 * report.abstention_rate
    );
    Ok(())
}
