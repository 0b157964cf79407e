//! The `cicd` commands as library functions.
//!
//! Each command returns a [`CliError`] whose [`CliError::exit_code`] is what
//! the binary exits with: 2 for configuration or generator parameters, 3 for
//! data, 4 for checkpoints, 1 for anything else.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cicd_core::data::{gen_synthetic, load_jsonl, write_jsonl, SyntheticParams};
use cicd_core::explain::explain;
use cicd_core::metrics::Metrics;
use cicd_core::train::{encode_all, evaluate_model, init_model, split_dev, train};
use cicd_core::{checkpoint, CheckpointError, ConfigError, DataError, ModelConfig, ModelError};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model error: {0}")]
    Model(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(c) => CliError::Config(c),
            ModelError::Data(d) => CliError::Data(d),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(DataError::InvalidParams(_)) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Model(_) | CliError::Output { .. } => 1,
        }
    }
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(output_err(path))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).expect("serialisable");
    writeln!(w).and_then(|_| w.flush()).map_err(output_err(path))
}

fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub data: PathBuf,
    pub dev: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub ablate: Vec<String>,
}

/// Files written by `train`.
pub const TRAIN_ARTIFACTS: [&str; 4] = ["best.ckpt", "final.ckpt", "trace.jsonl", "config.resolved.json"];

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_dev_micro_f1: Option<f64>,
    pub epochs: usize,
    pub n_parameters: usize,
}

/// Resolves the configuration: preset, then file, then flags.
pub fn resolve_config(args: &TrainArgs) -> Result<ModelConfig, ConfigError> {
    if args.config.is_none() && args.preset.is_none() {
        return Err(ConfigError::Invalid("give --config, --preset, or both".into()));
    }
    let file = args.config.as_deref().map(read_json).transpose()?;
    let mut overrides = Map::new();
    if let Some(seed) = args.seed {
        overrides.insert("seed".into(), seed.into());
    }
    if let Some(epochs) = args.epochs {
        overrides.insert("epochs".into(), epochs.into());
    }
    let mut cfg = ModelConfig::resolve(args.preset.as_deref(), file.as_ref(), &Value::Object(overrides))?;
    for tag in &args.ablate {
        cfg.ablate(tag)?;
    }
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let cfg = resolve_config(args)?;
    let corpus = load_jsonl(&args.data, cfg.labels)?;
    let (train_set, dev_set) = match &args.dev {
        Some(dev) => (corpus, load_jsonl(dev, cfg.labels)?),
        None => split_dev(corpus, cfg.dev_fraction),
    };
    if train_set.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let model = init_model(cfg, &train_set)?;
    let train_enc = encode_all(&model, &train_set)?;
    let dev_enc = encode_all(&model, &dev_set)?;
    log::info!(
        "training on {} instances, {} dev, {} parameters",
        train_enc.len(),
        dev_enc.len(),
        model.num_parameters()
    );

    std::fs::create_dir_all(&args.out).map_err(output_err(&args.out))?;
    write_json(&args.out.join("config.resolved.json"), &model.config)?;
    let trace_path = args.out.join("trace.jsonl");
    let mut trace = create(&trace_path)?;
    let mut write_err = None;
    let n_parameters = model.num_parameters();
    let outcome = train(model, &train_enc, &dev_enc, |record| {
        let line = serde_json::to_string(record).expect("serialisable");
        if let Err(e) = writeln!(trace, "{line}").and_then(|_| trace.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(output_err(&trace_path)(e));
    }
    checkpoint::save(&outcome.best, args.out.join("best.ckpt"))?;
    checkpoint::save(&outcome.final_model, args.out.join("final.ckpt"))?;
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_dev_micro_f1: outcome.trace.get(outcome.best_epoch.wrapping_sub(1)).and_then(|r| r.dev_micro_f1),
        epochs: outcome.trace.len(),
        n_parameters,
    })
}

/// Scores a checkpoint on a corpus, optionally writing the report as JSON.
pub fn cmd_eval(checkpoint_path: &Path, data: &Path, out: Option<&Path>) -> Result<Metrics, CliError> {
    let model = checkpoint::load(checkpoint_path)?;
    let instances = load_jsonl(data, model.config.labels)?;
    if instances.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let encoded = encode_all(&model, &instances)?;
    let (_, metrics) = evaluate_model(&model, &encoded)?;
    if let Some(out) = out {
        write_json(out, &metrics)?;
    }
    Ok(metrics)
}

/// Writes one explanation per instance as JSON lines. Returns the count.
pub fn cmd_explain(checkpoint_path: &Path, data: &Path, out: &Path) -> Result<usize, CliError> {
    let model = checkpoint::load(checkpoint_path)?;
    let instances = load_jsonl(data, model.config.labels)?;
    let mut w = create(out)?;
    for inst in &instances {
        let dump = explain(&model, inst)?;
        let line = serde_json::to_string(&dump).expect("serialisable");
        writeln!(w, "{line}").map_err(output_err(out))?;
    }
    w.flush().map_err(output_err(out))?;
    Ok(instances.len())
}

/// Path of the gold-metadata sidecar for a generated corpus.
pub fn gold_path(out: &Path) -> PathBuf {
    out.with_extension("gold.jsonl")
}

/// Generates a synthetic corpus plus its gold sidecar. Returns the instance count.
pub fn cmd_gen(params_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<usize, CliError> {
    let mut params = match params_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| DataError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            SyntheticParams::from_json_str(&text)?
        }
        None => SyntheticParams::default(),
    };
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let corpus = gen_synthetic(&params)?;
    let mut w = create(out)?;
    write_jsonl(&mut w, &corpus.instances, corpus.labels)
        .and_then(|_| w.flush())
        .map_err(output_err(out))?;
    let gold = gold_path(out);
    let mut g = create(&gold)?;
    for meta in &corpus.gold {
        let line = serde_json::to_string(meta).expect("serialisable");
        writeln!(g, "{line}").map_err(output_err(&gold))?;
    }
    g.flush().map_err(output_err(&gold))?;
    Ok(corpus.instances.len())
}

/// Human-readable metrics table.
pub fn format_metrics(m: &Metrics) -> String {
    let mut s = format!("n = {}  micF1 = {:.4}  macF1 = {:.4}\n", m.n, m.micro_f1, m.macro_f1);
    for c in &m.per_class {
        s += &format!(
            "  {:<10} P {:.4}  R {:.4}  F1 {:.4}  (support {})\n",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    s
}
