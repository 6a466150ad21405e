//! Argument parsing and the seven subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use copsd::corpus::{
    build_corpus, load_vocab, read_jsonl, CorpusSpec, Dialect, DistillRecord, EvalRecord, PretrainRecord, Vocab,
    DISTILL_FILE, PRETRAIN_FILE, VOCAB_FILE,
};
use copsd::distill::{train_copsd, DistillConfig, DistillError};
use copsd::eval::{evaluate, write_metrics_csv, EvalConfig, RunLabel};
use copsd::grpo::{train_grpo, GrpoConfig};
use copsd::model::{load_checkpoint, save_checkpoint, ModelCheckpoint};

use crate::config::load_config;
use crate::manifest::{corpus_hash, FileRef, RunManifest, MANIFEST_FILE};
use crate::plot::plot_metrics;
use crate::pretrain::{pretrain, PretrainConfig};
use crate::report::{build_report, load_all_metrics, write_report};
use crate::CliError;

pub const BASE_CHECKPOINT: &str = "base.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_loss.csv";
pub const STEP_LOG: &str = "step_log.csv";
pub const THREADS_ENV: &str = "COPSD_THREADS";

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt-{step:06}.ckpt")
}

#[derive(Debug, Parser)]
#[command(name = "copsd", version, about = "Desk-scale crosslingual on-policy self-distillation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the synthetic corpus and vocabulary.
    GenCorpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base model on pretrain.jsonl.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run self-distillation for one dialect.
    Distill(TrainArgs),
    /// Run the GRPO baseline for one dialect.
    Grpo(TrainArgs),
    /// Sample and score a checkpoint on an evaluation set.
    Eval(EvalArgs),
    /// Aggregate metrics CSVs into a results table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw SVG charts from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub dialect: String,
    /// Corpus directory holding distill.jsonl and vocab.json.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the name of the output directory.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// eval.jsonl; vocab.json is read from the same directory.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Metrics CSV, appended to when it exists.
    #[arg(long)]
    pub out: PathBuf,
    /// Write every generation as JSONL.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Restrict to one dialect; all dialects in the set otherwise.
    #[arg(long)]
    pub dialect: Option<String>,
    /// EvalConfig JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub step: Option<u64>,
}

fn config_or_default<T>(path: Option<&Path>) -> Result<T, CliError>
where
    T: serde::de::DeserializeOwned + Serialize + Default,
{
    match path {
        Some(p) => load_config(p),
        None => Ok(T::default()),
    }
}

fn snapshot<T: Serialize>(config: &T) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let fail = |e: csv::Error| CliError::Integrity(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn run_id_for(explicit: Option<&str>, out: &Path) -> String {
    explicit.map(str::to_string).unwrap_or_else(|| {
        out.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    })
}

fn load_ckpt(path: &Path) -> Result<ModelCheckpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint not found: {}", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

/// Installs the global thread pool, capped by `COPSD_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::GenCorpus { config, out } => cmd_gen_corpus(config.as_deref(), &out),
        Command::Pretrain { config, corpus, out } => cmd_pretrain(config.as_deref(), &corpus, &out),
        Command::Distill(args) => cmd_distill(&args),
        Command::Grpo(args) => cmd_grpo(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Report { runs, out } => cmd_report(&runs, &out),
        Command::Plot { metrics, out } => cmd_plot(&metrics, &out),
    }
}

pub fn cmd_gen_corpus(config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let spec: CorpusSpec = config_or_default(config)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new(&run_id_for(None, out), "gen-corpus", snapshot(&spec));
    for path in build_corpus(&spec, out)? {
        let role = path.file_name().unwrap().to_string_lossy().into_owned();
        manifest.add_output(&role, &path)?;
    }
    manifest.corpus_hash = Some(corpus_hash(out)?);
    manifest.write(out)?;
    log::info!("corpus written to {}", out.display());
    Ok(())
}

pub fn cmd_pretrain(config: Option<&Path>, corpus: &Path, out: &Path) -> Result<(), CliError> {
    let cfg: PretrainConfig = config_or_default(config)?;
    let hash = corpus_hash(corpus)?;
    if let Some(expected) = &cfg.expected_corpus_hash {
        if *expected != hash {
            return Err(CliError::Integrity(format!(
                "corpus hash {hash} does not match expected {expected}"
            )));
        }
    }
    let docs: Vec<PretrainRecord> = read_jsonl(&corpus.join(PRETRAIN_FILE))?;
    create_dir(out)?;
    let mut manifest = RunManifest::new(&run_id_for(None, out), "pretrain", snapshot(&cfg));
    manifest.corpus_hash = Some(hash);
    let outcome = pretrain(&docs, &cfg)?;
    let ckpt = out.join(BASE_CHECKPOINT);
    save_checkpoint(&outcome.model, cfg.steps, &ckpt)?;
    let log_path = out.join(PRETRAIN_LOG);
    write_csv(&log_path, &outcome.log)?;
    manifest.add_output("checkpoint", &ckpt)?;
    manifest.add_output("loss_curve", &log_path)?;
    manifest.write(out)?;
    log::info!(
        "pretrained {} steps, final loss {:.4}",
        cfg.steps,
        outcome.log.last().map(|l| l.loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

struct TrainSetup {
    vocab: Vocab,
    records: Vec<DistillRecord>,
    dialect: Dialect,
    base: ModelCheckpoint,
    manifest: RunManifest,
}

fn train_setup(args: &TrainArgs, subcommand: &str, config: serde_json::Value) -> Result<TrainSetup, CliError> {
    let vocab = load_vocab(&args.corpus.join(VOCAB_FILE))?;
    let dialect = vocab.parse_dialect(&args.dialect)?;
    let base = load_ckpt(&args.base)?;
    let records: Vec<DistillRecord> = read_jsonl(&args.corpus.join(DISTILL_FILE))?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new(&run_id_for(args.run_id.as_deref(), &args.out), subcommand, config);
    manifest.corpus_hash = Some(corpus_hash(&args.corpus)?);
    manifest.lineage.push(FileRef::of("base_checkpoint", &args.base)?);
    Ok(TrainSetup {
        vocab,
        records,
        dialect,
        base,
        manifest,
    })
}

fn checkpoint_writer<'a>(
    out: &'a Path,
    written: &'a mut Vec<PathBuf>,
) -> impl FnMut(u64, &copsd::model::Model) -> Result<(), DistillError> + 'a {
    move |step, model| {
        let path = out.join(checkpoint_name(step));
        save_checkpoint(model, step, &path)?;
        written.push(path);
        Ok(())
    }
}

fn finish_training(mut manifest: RunManifest, out: &Path, checkpoints: &[PathBuf]) -> Result<(), CliError> {
    for p in checkpoints {
        manifest.add_output("checkpoint", p)?;
    }
    manifest.add_output("step_log", &out.join(STEP_LOG))?;
    manifest.write(out)?;
    Ok(())
}

pub fn cmd_distill(args: &TrainArgs) -> Result<(), CliError> {
    let cfg: DistillConfig = config_or_default(args.config.as_deref())?;
    let s = train_setup(args, "distill", snapshot(&cfg))?;
    let mut written = Vec::new();
    let outcome = train_copsd(
        &s.base.model,
        &s.vocab,
        &s.records,
        s.dialect,
        &cfg,
        checkpoint_writer(&args.out, &mut written),
    )?;
    write_csv(&args.out.join(STEP_LOG), &outcome.log)?;
    finish_training(s.manifest, &args.out, &written)?;
    log::info!("distilled {} for {} steps", s.dialect.name(), cfg.total_steps);
    Ok(())
}

pub fn cmd_grpo(args: &TrainArgs) -> Result<(), CliError> {
    let cfg: GrpoConfig = config_or_default(args.config.as_deref())?;
    let s = train_setup(args, "grpo", snapshot(&cfg))?;
    let mut written = Vec::new();
    let outcome = train_grpo(
        &s.base.model,
        &s.vocab,
        &s.records,
        s.dialect,
        &cfg,
        false,
        checkpoint_writer(&args.out, &mut written),
    )?;
    write_csv(&args.out.join(STEP_LOG), &outcome.log)?;
    finish_training(s.manifest, &args.out, &written)?;
    log::info!("grpo on {} for {} steps", s.dialect.name(), cfg.total_steps);
    Ok(())
}

/// Method name, run id and step for a checkpoint, from the manifest next to
/// it when there is one.
fn label_for(args: &EvalArgs, ckpt: &ModelCheckpoint) -> Result<RunLabel, CliError> {
    let dir = args.ckpt.parent().unwrap_or(Path::new("."));
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(RunManifest::read(&manifest_path)?)
    } else {
        None
    };
    let sub = manifest.as_ref().map(|m| m.subcommand.as_str());
    let method = match (&args.method, sub) {
        (Some(m), _) => m.clone(),
        (None, Some("distill")) => "copsd".into(),
        (None, Some("grpo")) => "grpo".into(),
        _ => "base".into(),
    };
    let run_id = args
        .run_id
        .clone()
        .or_else(|| manifest.map(|m| m.run_id))
        .unwrap_or_else(|| run_id_for(None, dir));
    // a base model is step 0 of every trajectory built on it
    let step = args.step.unwrap_or(if method == "base" { 0 } else { ckpt.step_tag });
    Ok(RunLabel { run_id, method, step })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg: EvalConfig = config_or_default(args.config.as_deref())?;
    if let Some(b) = &args.budgets {
        cfg.budgets = b.clone();
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dir = args.eval.parent().unwrap_or(Path::new("."));
    let vocab = load_vocab(&dir.join(VOCAB_FILE))?;
    let set: Vec<EvalRecord> = read_jsonl(&args.eval)?;
    let dialects: Vec<Dialect> = match &args.dialect {
        Some(name) => vec![vocab.parse_dialect(name)?],
        None => vocab
            .dialects()
            .filter(|d| set.iter().any(|r| r.dialect == d.name()))
            .collect(),
    };
    if dialects.is_empty() {
        return Err(CliError::Integrity(format!("{}: no evaluation records", args.eval.display())));
    }
    let ckpt = load_ckpt(&args.ckpt)?;
    let label = label_for(args, &ckpt)?;
    let mut dump = match &args.dump {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => None,
    };
    let mut append = args.out.exists();
    for d in dialects {
        let e = evaluate(&ckpt.model, &vocab, &set, d, &cfg, &label)?;
        write_metrics_csv(&args.out, &e.records, append)?;
        append = true;
        if let (Some(w), Some(p)) = (dump.as_mut(), &args.dump) {
            for g in &e.generations {
                let line = serde_json::to_string(&DumpLine { dialect: d.name(), generation: g }).expect("serializes");
                writeln!(w, "{line}").map_err(|e| CliError::io(p, e))?;
            }
        }
        for r in &e.records {
            log::info!(
                "{} {} step {} budget {}: pass@{} {:.2}%",
                label.method,
                r.dialect,
                r.step,
                r.budget,
                r.k,
                r.pass_at_k_pct
            );
        }
    }
    if let (Some(mut w), Some(p)) = (dump, &args.dump) {
        w.flush().map_err(|e| CliError::io(p, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DumpLine<'a> {
    dialect: String,
    #[serde(flatten)]
    generation: &'a copsd::eval::GenerationRecord,
}

pub fn cmd_report(runs: &Path, out: &Path) -> Result<(), CliError> {
    let records = load_all_metrics(runs)?;
    let rows = build_report(&records)?;
    write_report(out, &rows)?;
    log::info!("report with {} rows written to {}", rows.len(), out.display());
    Ok(())
}

pub fn cmd_plot(metrics: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(metrics).map_err(|e| CliError::io(metrics, e))?;
    let (files, warnings) = plot_metrics(&text, &metrics.display().to_string())?;
    for w in warnings {
        log::warn!("{w}");
    }
    create_dir(out)?;
    for (name, svg) in files {
        let path = out.join(name);
        std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
