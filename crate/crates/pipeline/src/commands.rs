//! The `lvdiff` verbs as library functions.
//!
//! All randomness comes from the configured seed through named streams, so
//! every command is reproducible from its config file alone.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lvcore::denoiser::{
    bf_samples, generate_video, mean_bf_loss, read_checkpoint, train_step, write_checkpoint, BlockDenoiser,
    Checkpoint, ChunkProvenance, DenoiserError, LossReport, SamplerConfig, TrainState, TrainVideo,
    VideoRollout,
};
use lvcore::kv::{write_snapshot, HashEmbedder, KvError};
use lvcore::schedule::ScheduleKind;
use lvcore::{RandomSource, TensorError};
use lvde::io::{read_video, write_frame_dir, write_lvt};
use lvde::{evaluate, MetricKind, Plugins, VdeConfig, VdeReport};

use crate::config::RunConfig;
use crate::corpus::{embed_prompt, latents_to_frames, prompt, synth_corpus, SynthVideo};
use crate::error::{PipelineError, Result};

const INIT_STREAM: u64 = 0x696e_6974;
const TRAIN_STREAM: u64 = 0x7472_6e;
const EVAL_STREAM: u64 = 0x6576_616c;
const GENERATE_STREAM: u64 = 0x6765_6e;

pub const CHECKPOINT_FILE: &str = "checkpoint.lvck";
pub const LOSS_FILE: &str = "losses.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const LATENTS_FILE: &str = "latents.lvt";
pub const SNAPSHOT_FILE: &str = "bank.lvkv";
pub const PROVENANCE_FILE: &str = "provenance.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn root(cfg: &RunConfig) -> RandomSource {
    RandomSource::new(cfg.run.seed)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::file(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::file(path, e))
}

/// Freshly initialized generator and discriminator for `cfg`.
pub fn init_state(cfg: &RunConfig) -> Result<TrainState> {
    let mut rng = root(cfg).split(&[INIT_STREAM]);
    let net = BlockDenoiser::new(cfg.denoiser_config(), &mut rng)?;
    Ok(TrainState::new(net, &cfg.train_config(), &mut rng)?)
}

pub fn corpus(cfg: &RunConfig) -> Result<Vec<SynthVideo>> {
    synth_corpus(&cfg.corpus, &root(cfg))
}

pub fn train_videos(cfg: &RunConfig, corpus: &[SynthVideo]) -> Vec<TrainVideo> {
    let embedder = HashEmbedder::new(cfg.denoiser.embed_dim);
    corpus.iter().map(|v| v.train_video(&embedder)).collect()
}

/// Block forcing loss averaged over `draws` fixed draws of time, noise
/// and teacher context.
pub fn eval_bf_loss(
    net: &BlockDenoiser,
    videos: &[TrainVideo],
    sampler: &SamplerConfig,
    rng: &RandomSource,
    draws: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for d in 0..draws {
        let samples = bf_samples(net, videos, sampler, &rng.split(&[d as u64]))?;
        total += mean_bf_loss(net, &samples)?.item();
    }
    Ok(total / draws as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub initial_eval_l_bf: f64,
    pub final_eval_l_bf: f64,
    pub ratio: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub losses: Vec<LossReport>,
    pub summary: Option<TrainSummary>,
    /// Set when a step hit a non-finite loss; `state` is the last good one.
    pub failure: Option<PipelineError>,
}

/// Overflow or a non-finite value anywhere in a step.
fn diverged(e: &DenoiserError) -> bool {
    matches!(
        e,
        DenoiserError::NonFiniteLoss
            | DenoiserError::Tensor(TensorError::NonFinite { .. })
            | DenoiserError::Kv(KvError::Tensor(TensorError::NonFinite { .. }) | KvError::DegenerateImportance)
    )
}

/// Runs `cfg.train.steps` training steps on the configured corpus.
pub fn train(cfg: &RunConfig, mut on_step: impl FnMut(usize, &LossReport)) -> Result<TrainOutcome> {
    let sampler = cfg.sampler_config()?;
    let tcfg = cfg.train_config();
    let videos = train_videos(cfg, &corpus(cfg)?);
    let mut state = init_state(cfg)?;
    let eval_rng = root(cfg).split(&[EVAL_STREAM]);
    let initial = eval_bf_loss(&state.net, &videos, &sampler, &eval_rng, cfg.train.eval_draws)?;
    let train_rng = root(cfg).split(&[TRAIN_STREAM]);
    let mut losses = Vec::with_capacity(cfg.train.steps);
    for i in 0..cfg.train.steps {
        match train_step(&mut state, &videos, &sampler, &tcfg, &train_rng) {
            Ok(report) => {
                on_step(i, &report);
                losses.push(report);
            }
            Err(e) if diverged(&e) => {
                return Ok(TrainOutcome {
                    state,
                    losses,
                    summary: None,
                    failure: Some(PipelineError::Numeric(format!("training diverged at step {i}: {e}"))),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let fin = match eval_bf_loss(&state.net, &videos, &sampler, &eval_rng, cfg.train.eval_draws) {
        Ok(v) => v,
        Err(PipelineError::Denoiser(e)) if diverged(&e) => {
            return Ok(TrainOutcome {
                state,
                losses,
                summary: None,
                failure: Some(PipelineError::Numeric(format!("final evaluation diverged: {e}"))),
            });
        }
        Err(e) => return Err(e),
    };
    Ok(TrainOutcome {
        state,
        losses,
        summary: Some(TrainSummary {
            steps: cfg.train.steps,
            initial_eval_l_bf: initial,
            final_eval_l_bf: fin,
            ratio: fin / initial,
        }),
        failure: None,
    })
}

pub fn write_loss_csv(losses: &[LossReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["step", "l_bf", "loss_g", "loss_d"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.l_bf.to_string(), l.loss_g.to_string(), l.loss_d.to_string()])?;
    }
    w.flush().map_err(|e| PipelineError::file(path, e))
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        net: state.net.clone(),
        disc: Some(state.disc.clone()),
    };
    let mut w = create(path)?;
    write_checkpoint(&ckpt, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| PipelineError::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = fs::File::open(path).map_err(|e| PipelineError::file(path, e))?;
    read_checkpoint(std::io::BufReader::new(f)).map_err(|e| PipelineError::file(path, e))
}

/// Trains and writes the checkpoint, the per-step loss curve and a
/// summary. On a non-finite loss only the partial curve is written.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dir = &cfg.run.out_dir;
    ensure_dir(dir)?;
    let out = train(cfg, |_, _| {})?;
    write_loss_csv(&out.losses, &dir.join(LOSS_FILE))?;
    if let Some(e) = out.failure {
        return Err(e);
    }
    save_checkpoint(&out.state, &dir.join(CHECKPOINT_FILE))?;
    let summary = out.summary.expect("completed run has a summary");
    let path = dir.join(TRAIN_SUMMARY_FILE);
    serde_json::to_writer_pretty(create(&path)?, &summary).map_err(|e| PipelineError::file(&path, e))?;
    Ok(summary)
}

/// Prompt embeddings for the first `n` chunks of the configured scene. The
/// phase labels follow the scheduled length, so a shorter run reuses the
/// prompts of a longer one.
pub fn prompts(cfg: &RunConfig, n: usize) -> Vec<lvcore::Tensor> {
    let embedder = HashEmbedder::new(cfg.denoiser.embed_dim);
    let planned = cfg.schedule.n_chunks.max(n);
    (0..n).map(|k| embed_prompt(&embedder, &prompt(cfg.corpus.scene, k, planned))).collect()
}

pub fn generate_with(net: &BlockDenoiser, cfg: &RunConfig, sampler: &SamplerConfig) -> Result<VideoRollout> {
    let n = cfg.generate_chunks();
    Ok(generate_video(net, &prompts(cfg, n), n, sampler, &root(cfg).split(&[GENERATE_STREAM]))?)
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn write_provenance(rows: &[ChunkProvenance], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["chunk", "t_start", "seq_ctx", "semantic", "context_chunks", "context_tokens"])?;
    for p in rows {
        w.write_record([
            p.chunk.to_string(),
            p.t_start.to_string(),
            join(&p.seq_ctx),
            join(&p.semantic),
            join(&p.context_chunks()),
            p.context_tokens.to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::file(path, e))
}

/// Compact provenance: `chunk:ctx;ctx|chunk:...`.
pub fn provenance_signature(rows: &[ChunkProvenance]) -> String {
    rows.iter()
        .map(|p| format!("{}:{}", p.chunk, join(&p.context_chunks())))
        .collect::<Vec<_>>()
        .join("|")
}

#[derive(Debug)]
pub struct GenerateOutput {
    pub rollout: VideoRollout,
    pub latents: PathBuf,
    pub snapshot: PathBuf,
    pub provenance: PathBuf,
}

/// Generates from a checkpoint whose architecture must match the config,
/// then writes the latent video, the bank snapshot and the provenance log.
pub fn cmd_generate(cfg: &RunConfig, checkpoint: &Path) -> Result<GenerateOutput> {
    let ckpt = load_checkpoint(checkpoint)?;
    if *ckpt.net.config() != cfg.denoiser_config() {
        return Err(PipelineError::Config(format!(
            "checkpoint {} was trained with {:?}, config specifies {:?}",
            checkpoint.display(),
            ckpt.net.config(),
            cfg.denoiser_config()
        )));
    }
    let rollout = generate_with(&ckpt.net, cfg, &cfg.sampler_config()?)?;
    let dir = &cfg.run.out_dir;
    ensure_dir(dir)?;
    let chunks: Vec<lvcore::Tensor> = rollout.chunks.iter().map(|c| c.latents.clone()).collect();
    let latents = dir.join(LATENTS_FILE);
    write_lvt(&latents_to_frames(&chunks)?, &latents)?;
    let snapshot = dir.join(SNAPSHOT_FILE);
    let mut w = create(&snapshot)?;
    write_snapshot(&rollout.bank, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| PipelineError::file(&snapshot, e))?;
    let provenance = dir.join(PROVENANCE_FILE);
    write_provenance(&rollout.provenance, &provenance)?;
    Ok(GenerateOutput {
        rollout,
        latents,
        snapshot,
        provenance,
    })
}

pub fn write_report(report: &VdeReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(dir)?;
    let json = dir.join(REPORT_JSON);
    report.write_json(create(&json)?)?;
    let csv = dir.join(REPORT_CSV);
    report.write_csv(create(&csv)?)?;
    Ok((json, csv))
}

/// Scores a frame directory or `.lvt` file and writes the JSON and CSV
/// reports into `out_dir`.
pub fn cmd_evaluate(input: &Path, vde: &VdeConfig, out_dir: &Path) -> Result<VdeReport> {
    let video = read_video(input)?;
    let report = evaluate(&video, vde, &Plugins::default())?;
    write_report(&report, out_dir)?;
    Ok(report)
}

/// Writes every corpus video as a PPM frame directory plus its latents
/// and prompts. Returns the video directories.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let base = cfg.run.out_dir.join("corpus");
    let mut dirs = Vec::new();
    for (v, video) in corpus(cfg)?.iter().enumerate() {
        let dir = base.join(format!("video_{v:03}"));
        write_frame_dir(&video.frames, &dir.join("frames"))?;
        write_lvt(&latents_to_frames(&video.latents)?, &dir.join(LATENTS_FILE))?;
        let mut text = String::new();
        for p in &video.prompts {
            writeln!(text, "{p}").expect("string write");
        }
        let path = dir.join("prompts.txt");
        fs::write(&path, text).map_err(|e| PipelineError::file(&path, e))?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub schedule: ScheduleKind,
    pub top_l: usize,
    pub tau: f64,
    pub shuffle_window: usize,
    pub chunks: usize,
    pub mean_context_chunks: f64,
    pub mean_context_tokens: f64,
    pub peak_bank_entries: usize,
    /// Drift of the generated latent video per metric; `None` where the
    /// metric was undefined.
    pub vde: Vec<(MetricKind, Option<f64>)>,
    pub provenance: String,
}

/// Generates one video per grid cell and records its context usage,
/// latent-video drift and provenance.
pub fn ablate(cfg: &RunConfig, net: &BlockDenoiser) -> Result<Vec<AblationRow>> {
    let base = cfg.sampler_config()?;
    let taus = if cfg.ablate.taus.is_empty() { vec![base.cache.tau] } else { cfg.ablate.taus.clone() };
    let windows = if cfg.ablate.shuffle_windows.is_empty() {
        vec![base.shuffle_window]
    } else {
        cfg.ablate.shuffle_windows.clone()
    };
    let mut rows = Vec::new();
    for kind in &cfg.ablate.schedules {
        let kind: ScheduleKind = kind.parse()?;
        for &l in &cfg.ablate.top_l {
            for &tau in &taus {
                for &s in &windows {
                    let mut sampler = base.clone();
                    sampler.schedule.kind = kind;
                    sampler.cache.top_l = l;
                    sampler.cache.tau = tau;
                    sampler.shuffle_window = s;
                    let r = generate_with(net, cfg, &sampler)?;
                    let n = r.provenance.len();
                    let chunks: Vec<lvcore::Tensor> = r.chunks.iter().map(|c| c.latents.clone()).collect();
                    let report = evaluate(&latents_to_frames(&chunks)?, &cfg.vde, &Plugins::default())?;
                    rows.push(AblationRow {
                        schedule: kind,
                        top_l: l,
                        tau,
                        shuffle_window: s,
                        chunks: n,
                        mean_context_chunks: r.provenance.iter().map(|p| p.context_chunks().len()).sum::<usize>()
                            as f64
                            / n as f64,
                        mean_context_tokens: r.provenance.iter().map(|p| p.context_tokens).sum::<usize>() as f64
                            / n as f64,
                        peak_bank_entries: r.peak_bank_entries,
                        vde: MetricKind::ALL.iter().map(|k| (*k, report.get(*k).vde())).collect(),
                        provenance: provenance_signature(&r.provenance),
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = [
        "schedule",
        "top_l",
        "tau",
        "shuffle_window",
        "chunks",
        "mean_context_chunks",
        "mean_context_tokens",
        "peak_bank_entries",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(MetricKind::ALL.iter().map(|k| format!("vde_{k}")));
    header.push("provenance".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.schedule.to_string(),
            r.top_l.to_string(),
            r.tau.to_string(),
            r.shuffle_window.to_string(),
            r.chunks.to_string(),
            r.mean_context_chunks.to_string(),
            r.mean_context_tokens.to_string(),
            r.peak_bank_entries.to_string(),
        ];
        rec.extend(r.vde.iter().map(|(_, v)| v.map_or_else(String::new, |v| v.to_string())));
        rec.push(r.provenance.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| PipelineError::file(path, e))
}

/// Runs the ablation grid with a checkpoint's weights, or a fresh
/// initialization when none is given, and writes `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<AblationRow>> {
    let net = match checkpoint {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if *ckpt.net.config() != cfg.denoiser_config() {
                return Err(PipelineError::Config(format!(
                    "checkpoint {} does not match the configured denoiser",
                    p.display()
                )));
            }
            ckpt.net
        }
        None => init_state(cfg)?.net,
    };
    let rows = ablate(cfg, &net)?;
    ensure_dir(&cfg.run.out_dir)?;
    write_ablation_csv(&rows, &cfg.run.out_dir.join(ABLATION_FILE))?;
    Ok(rows)
}
