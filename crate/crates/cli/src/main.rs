use clap::{Parser, Subcommand};
use mftrr_cli::commands::{
    ablation_table, cmd_ablate, cmd_eval, cmd_gen_data, cmd_grad_check, cmd_rank, cmd_train,
    grad_check_table,
};
use mftrr_cli::config::{load_config, RunConfig};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

/// Multimodal topic-post quality ranking: synthetic data, training,
/// evaluation, ranking, ablations, and gradient verification.
#[derive(Parser)]
#[command(name = "mftrr", version, arg_required_else_help = true)]
struct Cli {
    /// Flat key = value config file (JSON-typed values).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random substream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData {
        /// Output dataset path (JSON Lines).
        #[arg(long)]
        out: PathBuf,
        /// Topic count override.
        #[arg(long)]
        topics: Option<usize>,
        /// Posts per topic override.
        #[arg(long)]
        posts: Option<usize>,
    },
    /// Train a model and write a checkpoint plus CSV epoch log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Ablation variant.
        #[arg(long, default_value = "none")]
        ablate: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on one split; prints MAP, NDCG@3, NDCG@5.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["train", "val", "test"], default_value = "test")]
        split: String,
        #[arg(long, default_value = "none")]
        ablate: String,
    },
    /// Rank the posts of one topic file; prints "index<TAB>score" lines.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Topic file: dataset header line plus exactly one topic line.
        #[arg(long)]
        topic: PathBuf,
    },
    /// Train and evaluate the full model and all six ablation variants.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Verify analytic gradients against finite differences.
    GradCheck,
}

fn effective_config(
    cli: &Cli,
    extra: &[(String, serde_json::Value)],
) -> Result<RunConfig, mftrr_core::Error> {
    let mut overrides: Vec<(String, serde_json::Value)> = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), json!(seed)));
    }
    overrides.extend(extra.iter().cloned());
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    for line in cfg.echo_lines() {
        eprintln!("config: {line}");
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let usage = |e: mftrr_core::Error| (2u8, e.to_string());

    match &cli.command {
        Command::GenData { out, topics, posts } => {
            let mut extra = Vec::new();
            if let Some(t) = topics {
                extra.push(("topics".to_string(), json!(t)));
            }
            if let Some(p) = posts {
                extra.push(("posts_per_topic".to_string(), json!(p)));
            }
            let cfg = effective_config(&cli, &extra).map_err(usage)?;
            let summary = cmd_gen_data(&cfg, out).map_err(usage)?;
            println!("{summary}");
        }
        Command::Train { data, checkpoint, ablate, epochs, lr } => {
            let mut extra = Vec::new();
            if let Some(e) = epochs {
                extra.push(("epochs".to_string(), json!(e)));
            }
            if let Some(lr) = lr {
                extra.push(("learning_rate".to_string(), json!(lr)));
            }
            let cfg = effective_config(&cli, &extra).map_err(usage)?;
            let outcome = cmd_train(&cfg, data, checkpoint, ablate).map_err(usage)?;
            for e in &outcome.log {
                eprintln!(
                    "epoch {}: loss={:.6} val MAP={:.4} NDCG@3={:.4} NDCG@5={:.4}",
                    e.epoch, e.train_loss, e.val_map, e.val_ndcg3, e.val_ndcg5
                );
            }
            println!(
                "wrote {} and {}",
                outcome.checkpoint.display(),
                outcome.log_path.display()
            );
        }
        Command::Eval { checkpoint, data, split, ablate } => {
            let cfg = effective_config(&cli, &[]).map_err(usage)?;
            let line = cmd_eval(&cfg, checkpoint, data, split, ablate).map_err(usage)?;
            println!("{line}");
        }
        Command::Rank { checkpoint, topic } => {
            let cfg = effective_config(&cli, &[]).map_err(usage)?;
            let ranking = cmd_rank(&cfg, checkpoint, topic).map_err(usage)?;
            for (idx, score) in ranking {
                println!("{idx}\t{score}");
            }
        }
        Command::Ablate { data, epochs, lr } => {
            let mut extra = Vec::new();
            if let Some(e) = epochs {
                extra.push(("epochs".to_string(), json!(e)));
            }
            if let Some(lr) = lr {
                extra.push(("learning_rate".to_string(), json!(lr)));
            }
            let cfg = effective_config(&cli, &extra).map_err(usage)?;
            let rows = cmd_ablate(&cfg, data, |variant| eprintln!("training variant {variant}"))
                .map_err(usage)?;
            print!("{}", ablation_table(&rows));
        }
        Command::GradCheck => {
            let cfg = effective_config(&cli, &[]).map_err(usage)?;
            let report = cmd_grad_check(&cfg).map_err(usage)?;
            print!("{}", grad_check_table(&report));
            if !report.passed() {
                return Err((1, "gradient verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
