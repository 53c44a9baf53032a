//! Command-line entry point for the temporal KGQA pipeline.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tkgqa::harness::{self, RunConfig};

#[derive(Parser)]
#[command(name = "tkgqa", about = "Temporal knowledge-graph question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set lr=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic facts TSV and question splits
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Pretrain the KG embedding tables alone and checkpoint them
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Train the full pipeline; keeps the best-dev checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Evaluate a saved checkpoint on the test split
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the full model and every single-flag-off variant
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, harness::HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            harness::ConfigError::Parse {
                line: 0,
                msg: format!("--set expects key=value, got {kv:?}"),
            }
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), harness::HarnessError> {
    match cli.command {
        Command::Generate { common, seed } => {
            let cfg = load_config(&common)?;
            harness::generate(&cfg, seed)?;
            println!(
                "wrote {}, {}, {}, {}",
                cfg.facts.display(),
                cfg.train.display(),
                cfg.dev.display(),
                cfg.test.display()
            );
        }
        Command::Pretrain { common, seed } => {
            let cfg = load_config(&common)?;
            let trace = harness::pretrain(&cfg, seed)?;
            for (i, loss) in trace.iter().enumerate() {
                println!("pretrain epoch {:>3}  loss {loss:.6}", i + 1);
            }
            println!("checkpoint saved to {}", cfg.checkpoint.display());
        }
        Command::Train { common, seed } => {
            let cfg = load_config(&common)?;
            let out = harness::train(&cfg, seed)?;
            for (i, loss) in out.pretrain_trace.iter().enumerate() {
                println!("pretrain epoch {:>3}  loss {loss:.6}", i + 1);
            }
            println!(
                "epoch {:>3}  dev hits@1 {:.4}  (initial)",
                0, out.dev_reports[0].overall.hits1
            );
            for (i, loss) in out.loss_trace.iter().enumerate() {
                println!(
                    "epoch {:>3}  loss {loss:.6}  dev hits@1 {:.4}",
                    i + 1,
                    out.dev_reports[i + 1].overall.hits1
                );
            }
            println!("best epoch: {}", out.best_epoch);
            println!("{}", out.best_report().table());
            std::fs::create_dir_all(&cfg.checkpoint)
                .and_then(|_| {
                    std::fs::write(
                        cfg.checkpoint.join("dev_report.json"),
                        out.best_report().to_json(),
                    )
                })
                .map_err(tkgqa::params::CheckpointError::from)?;
        }
        Command::Evaluate { common } => {
            let cfg = load_config(&common)?;
            let (report, outcomes) = harness::evaluate(&cfg)?;
            println!("{}", report.table());
            let mut dump = String::new();
            for o in &outcomes {
                dump.push_str(&serde_json::to_string(o).expect("outcome serializes"));
                dump.push('\n');
            }
            std::fs::write(cfg.checkpoint.join("test_report.json"), report.to_json())
                .and_then(|_| std::fs::write(cfg.checkpoint.join("test_outcomes.jsonl"), dump))
                .map_err(tkgqa::params::CheckpointError::from)?;
            println!("{}", report.to_json());
        }
        Command::Ablate { common, seed } => {
            let cfg = load_config(&common)?;
            let out = harness::ablate(&cfg, seed)?;
            println!("{}", out.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
