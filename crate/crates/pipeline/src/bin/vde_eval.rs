//! `vde-eval`: drift report for one video.
//!
//! Writes the JSON report to `--out` and the flat CSV next to it with a
//! `.csv` extension. Exit codes: 0 success, 2 config error, 3 numeric
//! failure, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use lvde::io::read_video;
use lvde::{evaluate, Plugins, VdeConfig, WeightKind};
use lvpipe::{PipelineError, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "vde-eval", version, about = "Video drift error report")]
struct Cli {
    /// Frame directory (PGM/PPM) or `.lvt` file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    segments: usize,
    #[arg(long, default_value = "linear")]
    weights: WeightKind,
    #[arg(long = "flow-tau", default_value_t = 0.05)]
    flow_tau: f64,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = VdeConfig {
        n_segments: cli.segments,
        weight_kind: cli.weights,
        flow_tau: cli.flow_tau,
        ..VdeConfig::default()
    };
    cfg.validate()?;
    let video = read_video(&cli.input)?;
    let report = evaluate(&video, &cfg, &Plugins::default())?;
    if let Some(dir) = cli.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::file(dir, e))?;
    }
    let open = |p: &PathBuf| std::fs::File::create(p).map_err(|e| PipelineError::file(p, e));
    report.write_json(open(&cli.out)?)?;
    let csv = cli.out.with_extension("csv");
    report.write_csv(open(&csv)?)?;
    for (kind, o) in &report.metrics {
        match o.vde() {
            Some(v) => println!("{kind}: {v:.6}"),
            None => println!("{kind}: undefined"),
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
            eprintln!("vde-eval: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

