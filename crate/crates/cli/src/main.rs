use std::path::PathBuf;
use std::process::ExitCode;

use cicd_cli::{cmd_eval, cmd_explain, cmd_gen, cmd_train, format_metrics, CliError, TrainArgs};
use clap::{Parser, Subcommand};

/// Dual-view claim verification.
#[derive(Parser)]
#[command(name = "cicd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes best.ckpt, final.ckpt, trace.jsonl and
    /// config.resolved.json into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// snopes2, politifact3, fever3 or synthetic
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        data: PathBuf,
        /// Separate dev corpus; otherwise the tail of --data is held out.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Ablation tag, e.g. "-CED", "-selected I", "-word.", "-inconsistency loss".
        #[arg(long, allow_hyphen_values = true)]
        ablate: Vec<String>,
    },
    /// Score a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the report as JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump attention maps, selection and losses per instance as JSON lines.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic planted-evidence corpus and its .gold.jsonl sidecar.
    Gen {
        /// Generator parameters as JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            preset,
            data,
            dev,
            out,
            seed,
            epochs,
            ablate,
        } => {
            let s = cmd_train(&TrainArgs {
                config,
                preset,
                data,
                dev,
                out: out.clone(),
                seed,
                epochs,
                ablate,
            })?;
            println!(
                "trained {} epochs ({} parameters); best epoch {} dev micF1 {}; artifacts in {}",
                s.epochs,
                s.n_parameters,
                s.best_epoch,
                s.best_dev_micro_f1.map_or("n/a".into(), |v| format!("{v:.4}")),
                out.display()
            );
        }
        Command::Eval { checkpoint, data, out } => {
            let m = cmd_eval(&checkpoint, &data, out.as_deref())?;
            if out.is_some() {
                print!("{}", format_metrics(&m));
            } else {
                println!("{}", serde_json::to_string_pretty(&m).expect("serialisable"));
            }
        }
        Command::Explain { checkpoint, data, out } => {
            let n = cmd_explain(&checkpoint, &data, &out)?;
            println!("wrote {n} explanations to {}", out.display());
        }
        Command::Gen { config, out, seed } => {
            let n = cmd_gen(config.as_deref(), &out, seed)?;
            println!("wrote {n} instances to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("CICD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot cap worker threads: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
