//! Subcommand implementations.
//!
//! Every command either writes all of its advertised outputs or removes the
//! partial ones before exiting nonzero. The one exception is the trainer's
//! abort checkpoint, which is the contractual artifact of a failed run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use claws_core::checkpoint::load_checkpoint;
use claws_core::dataset::{
    fit_stats as core_fit_stats, load_annotations, load_manifest, load_stats, load_video_features,
    normalize, save_stats, synth_generate, Manifest, PreprocStats, Split, SynthConfig,
    VideoFeatures,
};
use claws_core::evaluation::{
    evaluate, expand_to_frames, score_video, write_scores_csv, write_summary_csv,
};
use claws_core::model::{ClawsParams, ModelConfig};
use claws_core::tape::Mode;
use claws_core::trainer::train as core_train;

use crate::config::FileConfig;
use crate::{EvalArgs, FitStatsArgs, ScoreArgs, SynthArgs, TrainArgs};

/// One `--ablation key=on|off` toggle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub key: AblationKey,
    pub on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKey {
    Rbs,
    Nsm1,
    Nsm2,
    LossTsS,
    LossC,
}

pub fn parse_ablation(s: &str) -> Result<Ablation, String> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=on|off, got {s:?}"))?;
    let key = match key {
        "rbs" => AblationKey::Rbs,
        "nsm1" => AblationKey::Nsm1,
        "nsm2" => AblationKey::Nsm2,
        "loss-ts-s" => AblationKey::LossTsS,
        "loss-c" => AblationKey::LossC,
        other => {
            return Err(format!(
                "unknown ablation key {other:?} (expected rbs, nsm1, nsm2, loss-ts-s, loss-c)"
            ))
        }
    };
    let on = match value {
        "on" => true,
        "off" => false,
        other => return Err(format!("ablation value must be on or off, got {other:?}")),
    };
    Ok(Ablation { key, on })
}

/// Removes the listed paths unless `disarm` was called; keeps failed
/// commands from leaving partial outputs behind.
struct OutputGuard {
    paths: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        Self {
            paths: Vec::new(),
            armed: true,
        }
    }

    fn track(&mut self, path: impl Into<PathBuf>) {
        self.paths.push(path.into());
    }

    fn disarm(mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for path in &self.paths {
            if path.is_dir() {
                let _ = std::fs::remove_dir_all(path);
            } else {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}

pub fn synth(config: &FileConfig, args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_train_normal: args.train_normal,
        n_train_abnormal: args.train_abnormal,
        n_test_normal: args.test_normal,
        n_test_abnormal: args.test_abnormal,
        segments_min: args.segments_min,
        segments_max: args.segments_max,
        feature_dim: args.feature_dim.unwrap_or_else(|| config.feature_dim()),
        anomaly_fraction: args.anomaly_fraction,
        shift_magnitude: args.shift_magnitude,
        temporal_rho: args.temporal_rho,
        frames_per_segment: config.frames_per_segment(),
        seed: args.seed,
    };

    let mut guard = OutputGuard::new();
    guard.track(args.out_dir.join("features"));
    guard.track(args.out_dir.join("train_manifest.csv"));
    guard.track(args.out_dir.join("test_manifest.csv"));
    guard.track(args.out_dir.join("test_annotations.csv"));

    let out = synth_generate(&args.out_dir, &cfg)?;
    guard.disarm();

    println!("{}", out.train_manifest.display());
    println!("{}", out.test_manifest.display());
    println!("{}", out.annotations.display());
    println!(
        "{} feature files under {}",
        out.feature_files.len(),
        args.out_dir.join("features").display()
    );
    Ok(())
}

fn load_videos(manifest: &Manifest, dim: usize) -> Result<Vec<VideoFeatures>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            load_video_features(manifest, e, dim)
                .with_context(|| format!("loading features for {}", e.video_id))
        })
        .collect()
}

fn load_normalized(manifest: &Manifest, stats: &PreprocStats) -> Result<Vec<VideoFeatures>> {
    load_videos(manifest, stats.dim())?
        .iter()
        .map(|v| Ok(normalize(v, stats)?))
        .collect()
}

pub fn fit_stats(config: &FileConfig, args: &FitStatsArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest, Split::Train)?;
    let dim = args.feature_dim.unwrap_or_else(|| config.feature_dim());
    let videos = load_videos(&manifest, dim)?;
    let with_scale = args.variance_scaling || config.variance_scaling();
    let stats = core_fit_stats(&videos, with_scale)?;

    let mut guard = OutputGuard::new();
    guard.track(&args.out);
    save_stats(&args.out, &stats)?;
    guard.disarm();

    println!(
        "{} (dimension {}, {} segment vectors)",
        args.out.display(),
        stats.dim(),
        stats.computed_over
    );
    Ok(())
}

fn apply_train_ablations(cfg: &mut claws_core::trainer::TrainConfig, ablations: &[Ablation]) {
    for a in ablations {
        match a.key {
            AblationKey::Rbs => cfg.toggles.rbs = a.on,
            AblationKey::Nsm1 => cfg.toggles.nsm1 = a.on,
            AblationKey::Nsm2 => cfg.toggles.nsm2 = a.on,
            AblationKey::LossTsS => cfg.toggles.loss_ts_s = a.on,
            AblationKey::LossC => cfg.toggles.loss_c = a.on,
        }
    }
}

pub fn train(config: &FileConfig, args: &TrainArgs) -> Result<()> {
    let mut cfg = config.train_config()?;
    if let Some(v) = args.total_iters {
        cfg.total_iters = v;
        cfg.lr_drop_at = cfg.lr_drop_at.min(v);
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.feature_dim {
        cfg.dims.d = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    apply_train_ablations(&mut cfg, &args.ablations);

    let manifest = load_manifest(&args.manifest, Split::Train)?;
    let stats = load_stats(&args.stats)?;
    if stats.dim() != cfg.dims.d {
        bail!(
            "stats dimension {} does not match configured feature dimension {}",
            stats.dim(),
            cfg.dims.d
        );
    }
    let videos = load_normalized(&manifest, &stats)?;

    let result = core_train(&videos, &cfg, Some(&args.out_dir));
    match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let final_path = outcome.final_checkpoint.expect("out_dir was given");
            println!("{}", final_path.display());
            println!("{}", args.out_dir.join("metrics.csv").display());
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "iteration {}: total loss {}",
                    last.iteration, last.loss.total
                );
            }
            Ok(())
        }
        Err(err) => {
            // Remove incomplete artifacts; the abort checkpoint stays.
            for name in ["checkpoint_final.bin", "metrics.csv", "clusters.csv"] {
                let _ = std::fs::remove_file(args.out_dir.join(name));
            }
            if let Ok(entries) = std::fs::read_dir(&args.out_dir) {
                for entry in entries.flatten() {
                    let name = entry.file_name();
                    let name = name.to_string_lossy();
                    if name.starts_with("checkpoint_") && name != "checkpoint_abort.bin" {
                        let _ = std::fs::remove_file(entry.path());
                    }
                }
            }
            Err(err.into())
        }
    }
}

fn eval_model_config(config: &FileConfig, ablations: &[Ablation]) -> Result<ModelConfig> {
    let mut cfg = ModelConfig {
        use_nsm1: config.model.nsm1.unwrap_or(true),
        use_nsm2: config.model.nsm2.unwrap_or(true),
        dropout_rate: config.dropout_rate(),
        mode: Mode::Eval,
        gate_after_relu: config.model.gate_after_relu.unwrap_or(false),
    };
    for a in ablations {
        match a.key {
            AblationKey::Nsm1 => cfg.use_nsm1 = a.on,
            AblationKey::Nsm2 => cfg.use_nsm2 = a.on,
            other => bail!("ablation {other:?} does not apply at inference (only nsm1, nsm2)"),
        }
    }
    Ok(cfg)
}

fn load_model(path: &Path, stats: &PreprocStats) -> Result<ClawsParams> {
    let (params, _) = load_checkpoint(path)?;
    if params.dims().d != stats.dim() {
        bail!(
            "checkpoint dimension {} does not match stats dimension {}",
            params.dims().d,
            stats.dim()
        );
    }
    Ok(params)
}

pub fn eval(config: &FileConfig, args: &EvalArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest, Split::Test)?;
    let annotations = load_annotations(&args.annotations, &manifest)?;
    let stats = load_stats(&args.stats)?;
    let params = load_model(&args.checkpoint, &stats)?;
    let videos = load_normalized(&manifest, &stats)?;
    let model_cfg = eval_model_config(config, &args.ablations)?;
    let window = args.batch_size.unwrap_or_else(|| config.batch_size());

    let outcome = evaluate(
        &videos,
        &annotations,
        &params,
        &model_cfg,
        window,
        config.frames_per_segment(),
    )?;

    std::fs::create_dir_all(&args.out_dir)?;
    let scores_path = args.out_dir.join("scores.csv");
    let summary_path = args.out_dir.join("summary.csv");
    let mut guard = OutputGuard::new();
    guard.track(&scores_path);
    guard.track(&summary_path);
    write_scores_csv(&scores_path, &outcome)?;
    write_summary_csv(&summary_path, &outcome)?;
    guard.disarm();

    println!(
        "auc {} eer {} over {} frames ({} anomalous)",
        outcome.roc.auc, outcome.roc.eer, outcome.num_frames, outcome.num_anomalous_frames
    );
    if args.per_video {
        match outcome.per_video_auc {
            Some(auc) => println!("per-video mean auc {auc}"),
            None => println!("per-video mean auc undefined (no video has both classes)"),
        }
    }
    Ok(())
}

pub fn score(config: &FileConfig, args: &ScoreArgs) -> Result<()> {
    let stats = load_stats(&args.stats)?;
    let params = load_model(&args.checkpoint, &stats)?;
    let model_cfg = eval_model_config(config, &args.ablations)?;
    let window = args.batch_size.unwrap_or_else(|| config.batch_size());
    let p = config.frames_per_segment();

    // Wrap the lone feature file in a single-entry manifest.
    let file_name = args
        .features
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let parent = args
        .features
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let manifest = Manifest {
        entries: vec![claws_core::dataset::ManifestEntry {
            video_id: file_name.clone(),
            label: claws_core::dataset::Label::Normal,
            num_frames: usize::MAX,
            feature_path: file_name,
        }],
        split: Split::Test,
        base_dir: parent,
    };
    let video = load_video_features(&manifest, &manifest.entries[0], stats.dim())?;
    let video = normalize(&video, &stats)?;
    let num_frames = args.num_frames.unwrap_or_else(|| video.num_segments() * p);

    let segment_scores = score_video(&video, &params, &model_cfg, window)?;
    let series = expand_to_frames(&video.video_id, &segment_scores, num_frames, p)?;

    // Exit quietly when the reader closes the pipe early (score | head).
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let written = (|| -> std::io::Result<()> {
        use std::io::Write;
        writeln!(out, "frame,score")?;
        for (frame, s) in series.scores.iter().enumerate() {
            writeln!(out, "{frame},{s}")?;
        }
        out.flush()
    })();
    match written {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}
