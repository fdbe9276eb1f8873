use std::fs;
use std::path::Path;

use lvcore::RandomSource;
use lvde::{MetricKind, VdeReport};
use lvpipe::commands::{
    cmd_ablate, cmd_evaluate, cmd_generate, cmd_synth, cmd_train, init_state, save_checkpoint, ABLATION_FILE,
    CHECKPOINT_FILE, LATENTS_FILE, LOSS_FILE, PROVENANCE_FILE, REPORT_CSV, REPORT_JSON,
};
use lvpipe::corpus::{latents_to_frames, CHANNELS, FRAME_SIZE};
use lvpipe::{synth_corpus, CorpusSpec, PipelineError, RunConfig, SceneKind, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC};

/// A small, fast configuration writing into `dir`.
fn small(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.out_dir = dir.to_path_buf();
    cfg.run.seed = 5;
    cfg.denoiser.d_model = 16;
    cfg.denoiser.n_heads = 2;
    cfg.denoiser.head_dim = 8;
    cfg.denoiser.n_layers = 1;
    cfg.denoiser.ff_dim = 32;
    cfg.denoiser.chunk_len = 4;
    cfg.denoiser.sample_steps = 3;
    cfg.corpus.frames_per_chunk = 4;
    cfg.corpus.n_chunks = 3;
    cfg.corpus.n_videos = 1;
    cfg.cache.probe_recent = 8;
    cfg.cache.probe_random = 8;
    cfg.train.steps = 2;
    cfg.train.eval_draws = 1;
    cfg.vde.n_segments = 3;
    cfg.validate().unwrap();
    cfg
}

fn spec(scene: SceneKind, drift: f64) -> CorpusSpec {
    CorpusSpec {
        scene,
        n_videos: 3,
        n_chunks: 5,
        frames_per_chunk: 4,
        drift,
    }
}

#[test]
fn static_scene_repeats_one_frame() {
    let rng = RandomSource::new(1);
    for v in synth_corpus(&spec(SceneKind::Static, 0.3), &rng).unwrap() {
        let first = v.frames.frame(0).data.to_vec();
        assert!(v.frames.frames().all(|f| f.data == first.as_slice()));
        assert_eq!(v.frames.len(), 20);
        assert_eq!((v.frames.height(), v.frames.width(), v.frames.channels()), (FRAME_SIZE, FRAME_SIZE, CHANNELS));
    }
}

#[test]
fn zero_blur_drift_matches_static() {
    let rng = RandomSource::new(2);
    let a = synth_corpus(&spec(SceneKind::Static, 0.0), &rng).unwrap();
    let b = synth_corpus(&spec(SceneKind::BlurDrift, 0.0), &rng).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.frames, y.frames);
        assert_eq!(x.latents, y.latents);
    }
}

#[test]
fn brightness_drift_raises_the_mean_by_m_per_chunk() {
    let m = 0.04;
    let rng = RandomSource::new(3);
    for v in synth_corpus(&spec(SceneKind::BrightnessDrift, m), &rng).unwrap() {
        let mean = |t: usize| {
            let d = v.frames.frame(t).data;
            d.iter().sum::<f64>() / d.len() as f64
        };
        for c in 1..5 {
            let step = mean(c * 4) - mean((c - 1) * 4);
            assert!((step - m).abs() <= 1e-6, "chunk {c}: {step}");
        }
    }
}

#[test]
fn moving_square_moves() {
    let v = &synth_corpus(&spec(SceneKind::MovingSquare, 0.0), &RandomSource::new(4)).unwrap()[0];
    assert!((1..v.frames.len()).all(|t| v.frames.frame(t).data != v.frames.frame(t - 1).data));
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.steps = 0;
    cmd_train(&cfg).unwrap();
    let init = dir.path().join("init.lvck");
    save_checkpoint(&init_state(&cfg).unwrap(), &init).unwrap();
    assert_eq!(fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap(), fs::read(init).unwrap());
    let curve = fs::read_to_string(dir.path().join(LOSS_FILE)).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn training_is_bit_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = cmd_train(&small(a.path())).unwrap();
    let sb = cmd_train(&small(b.path())).unwrap();
    assert_eq!(sa, sb);
    for f in [CHECKPOINT_FILE, LOSS_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let curve = fs::read_to_string(a.path().join(LOSS_FILE)).unwrap();
    assert_eq!(curve.lines().count(), 3);
}

#[test]
fn divergent_training_keeps_the_partial_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.lr = 1e200;
    cfg.train.clip_norm = 0.0;
    cfg.train.steps = 20;
    let err = cmd_train(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_NUMERIC, "{err}");
    let rows = fs::read_to_string(dir.path().join(LOSS_FILE)).unwrap().lines().count() - 1;
    assert!(rows < 20, "{rows}");
    assert!(!dir.path().join(CHECKPOINT_FILE).exists());
}

fn trained(dir: &Path) -> RunConfig {
    let cfg = small(dir);
    cmd_train(&cfg).unwrap();
    cfg
}

fn context_sets(path: &Path) -> Vec<(usize, Vec<usize>)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let ctx = r[4].split(';').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
            (r[0].parse().unwrap(), ctx)
        })
        .collect()
}

#[test]
fn single_chunk_has_empty_context() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = trained(dir.path());
    cfg.generate.n_chunks = 1;
    let out = cmd_generate(&cfg, &dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(context_sets(&out.provenance), vec![(0, vec![])]);
}

#[test]
fn generation_log_respects_causality_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = trained(dir.path());
    cfg.generate.n_chunks = 8;
    let ckpt = dir.path().join(CHECKPOINT_FILE);
    let out = cmd_generate(&cfg, &ckpt).unwrap();
    let rows = context_sets(&out.provenance);
    assert_eq!(rows.len(), 8);
    for (c, ctx) in &rows {
        assert!(ctx.len() <= 4);
        assert!(ctx.iter().all(|i| i < c));
        assert_eq!(ctx.len(), (*c).min(4));
    }
    let first = fs::read(dir.path().join(LATENTS_FILE)).unwrap();
    cmd_generate(&cfg, &ckpt).unwrap();
    assert_eq!(fs::read(dir.path().join(LATENTS_FILE)).unwrap(), first);
    assert!(dir.path().join(PROVENANCE_FILE).exists());
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = trained(dir.path());
    cfg.denoiser.ff_dim = 48;
    let err = cmd_generate(&cfg, &dir.path().join(CHECKPOINT_FILE)).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    let missing = cmd_generate(&small(dir.path()), &dir.path().join("nope.lvck")).unwrap_err();
    assert_eq!(missing.exit_code(), EXIT_IO);
}

fn write_video(cfg: &RunConfig, scene: SceneKind, drift: f64, dir: &Path) -> std::path::PathBuf {
    let mut c = cfg.clone();
    c.corpus.scene = scene;
    c.corpus.drift = drift;
    c.corpus.n_videos = 1;
    c.corpus.n_chunks = 5;
    c.run.out_dir = dir.to_path_buf();
    cmd_synth(&c).unwrap().remove(0).join("frames")
}

#[test]
fn evaluate_static_and_drifted_videos() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let vde = cfg.vde.clone();
    let still = write_video(&cfg, SceneKind::Static, 0.0, &dir.path().join("s"));
    let blur = write_video(&cfg, SceneKind::BlurDrift, 0.4, &dir.path().join("b"));

    let rs = cmd_evaluate(&still, &vde, &dir.path().join("rs")).unwrap();
    for kind in MetricKind::ALL {
        assert!(rs.get(kind).vde().unwrap() <= 1e-9, "{kind}");
    }
    let rb = cmd_evaluate(&blur, &vde, &dir.path().join("rb")).unwrap();
    assert!(rb.get(MetricKind::Clarity).vde().unwrap() > rs.get(MetricKind::Clarity).vde().unwrap());

    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("rb").join(REPORT_JSON)).unwrap()).unwrap();
    let from_json = VdeReport::from_json(&json).unwrap();
    assert_eq!(from_json, rb);
    let mut rdr = csv::Reader::from_path(dir.path().join("rb").join(REPORT_CSV)).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let q = rb.get(MetricKind::parse(&rec[0]).unwrap()).q().unwrap()[rec[1].parse::<usize>().unwrap() - 1];
        assert_eq!(rec[2].parse::<f64>().unwrap().to_bits(), q.to_bits());
    }
}

#[test]
fn evaluate_names_the_unreadable_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let frames = write_video(&cfg, SceneKind::Static, 0.0, &dir.path().join("s"));
    let bad = frames.join("frame_00002.ppm");
    fs::write(&bad, b"not an image").unwrap();
    let err = cmd_evaluate(&frames, &cfg.vde, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_IO);
    assert!(err.to_string().contains("frame_00002.ppm"), "{err}");
}

#[test]
fn synth_writes_readable_latents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let dirs = cmd_synth(&cfg).unwrap();
    let lat = lvde::io::read_lvt(&dirs[0].join(LATENTS_FILE)).unwrap();
    let corpus = synth_corpus(&cfg.corpus, &RandomSource::new(cfg.run.seed)).unwrap();
    assert_eq!(lat.len(), latents_to_frames(&corpus[0].latents).unwrap().len());
    let prompts = fs::read_to_string(dirs[0].join("prompts.txt")).unwrap();
    assert_eq!(prompts.lines().next(), Some("chunk 0: moving_square opening"));
}

#[test]
fn ablation_grid_rows_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.generate.n_chunks = 6;
    cfg.schedule.n_chunks = 6;
    let rows = cmd_ablate(&cfg, None).unwrap();
    assert_eq!(rows.len(), 8);
    let mut rdr = csv::Reader::from_path(dir.path().join(ABLATION_FILE)).unwrap();
    assert_eq!(rdr.records().count(), 8);
    for pair in rows.chunks(2) {
        assert_eq!((pair[0].top_l, pair[1].top_l), (0, 2));
        assert_ne!(pair[0].provenance, pair[1].provenance);
    }
}

fn run(bin: &str, args: &[&str]) -> std::process::Output {
    std::process::Command::new(bin).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let lvdiff = env!("CARGO_BIN_EXE_lvdiff");
    let vde_eval = env!("CARGO_BIN_EXE_vde-eval");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[cache]\ntua = 1\n").unwrap();
    assert_eq!(run(lvdiff, &["--config", bad.to_str().unwrap(), "synth"]).status.code(), Some(2));
    let missing = dir.path().join("missing");
    let out = run(vde_eval, &["--input", missing.to_str().unwrap(), "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(run(vde_eval, &["--weights", "cubic"]).status.code(), Some(2));

    let cfg = small(dir.path());
    let frames = write_video(&cfg, SceneKind::BlurDrift, 0.3, &dir.path().join("v"));
    let report = dir.path().join("r").join("out.json");
    let out = run(
        vde_eval,
        &[
            "--input",
            frames.to_str().unwrap(),
            "--segments",
            "4",
            "--weights",
            "log",
            "--flow-tau",
            "0.05",
            "--out",
            report.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = VdeReport::from_json(&serde_json::from_slice(&fs::read(&report).unwrap()).unwrap()).unwrap();
    assert_eq!(r.n_segments, 4);
    assert!(report.with_extension("csv").exists());

    let out = run(vde_eval, &["--input", frames.to_str().unwrap(), "--segments", "50", "--out", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_schedule_overrides_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let lvdiff = env!("CARGO_BIN_EXE_lvdiff");
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(lvdiff, &["--schedule", "cubic", "--out", out, "synth"]).status.code(), Some(2));
    assert_eq!(run(lvdiff, &["--shuffle-s", "0", "--out", out, "synth"]).status.code(), Some(2));
    assert_eq!(run(lvdiff, &["--eps-min", "0.9", "--eps-max", "0.5", "--out", out, "synth"]).status.code(), Some(2));
    let ok = run(lvdiff, &["--schedule", "sigmoid", "--alpha", "4", "--shuffle-s", "2", "--out", out, "synth"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
}

#[test]
fn error_codes_by_kind() {
    assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
    assert_eq!(PipelineError::Numeric("x".into()).exit_code(), 3);
    assert_eq!(PipelineError::file("a", "b").exit_code(), 4);
}
