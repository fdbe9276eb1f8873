//! `lvdiff`: train, generate, evaluate, synth and ablate.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lvpipe::commands::{cmd_ablate, cmd_evaluate, cmd_generate, cmd_synth, cmd_train, CHECKPOINT_FILE};
use lvpipe::{PipelineError, RunConfig, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "lvdiff", version, about = "Chunked video diffusion toolkit")]
struct Cli {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `[run] out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `[schedule] kind`: naive, linear, cosine or sigmoid.
    #[arg(long, global = true)]
    schedule: Option<String>,
    #[arg(long, global = true)]
    eps_min: Option<f64>,
    #[arg(long, global = true)]
    eps_max: Option<f64>,
    /// Sigmoid steepness.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Overrides `[cache] shuffle_window`.
    #[arg(long, global = true)]
    shuffle_s: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic corpus; writes a checkpoint and loss curve.
    Train,
    /// Generate a latent video with its bank snapshot and provenance log.
    Generate {
        /// Defaults to `<out>/checkpoint.lvck`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write drift reports for a frame directory or `.lvt` file.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write the synthetic corpus as frame directories.
    Synth,
    /// Run the schedule/context grid and write a comparison CSV.
    Ablate {
        /// Uses freshly initialized weights when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.run.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(kind) = cli.schedule {
        cfg.schedule.kind = kind;
    }
    if let Some(v) = cli.eps_min {
        cfg.schedule.eps_min = v;
    }
    if let Some(v) = cli.eps_max {
        cfg.schedule.eps_max = v;
    }
    if let Some(v) = cli.alpha {
        cfg.schedule.alpha = v;
    }
    if let Some(s) = cli.shuffle_s {
        cfg.cache.shuffle_window = s;
    }
    cfg.validate()?;
    let out = cfg.run.out_dir.clone();
    match cli.command {
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!(
                "trained {} steps: eval L_BF {:.6} -> {:.6} (ratio {:.4})",
                s.steps, s.initial_eval_l_bf, s.final_eval_l_bf, s.ratio
            );
        }
        Command::Generate { checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let g = cmd_generate(&cfg, &ckpt)?;
            println!(
                "generated {} chunks: {}, {}, {}",
                g.rollout.chunks.len(),
                g.latents.display(),
                g.snapshot.display(),
                g.provenance.display()
            );
        }
        Command::Evaluate { input } => {
            let report = cmd_evaluate(&input, &cfg.vde, &out)?;
            for (kind, o) in &report.metrics {
                match o.vde() {
                    Some(v) => println!("{kind}: {v:.6}"),
                    None => println!("{kind}: undefined"),
                }
            }
        }
        Command::Synth => {
            let dirs = cmd_synth(&cfg)?;
            println!("wrote {} videos under {}", dirs.len(), out.join("corpus").display());
        }
        Command::Ablate { checkpoint } => {
            let rows = cmd_ablate(&cfg, checkpoint.as_deref())?;
            println!("wrote {} ablation rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lvdiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
