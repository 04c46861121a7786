//! Synthetic weak-label dataset generator.
//!
//! Normal segments are standard Gaussian in dimension d; consecutive
//! segments are temporally correlated (each dimension follows a stationary
//! AR(1) process with exactly standard-normal marginals), mirroring how
//! features extracted from consecutive video segments resemble one
//! another. Abnormal videos carry one contiguous run of segments (a
//! configurable fraction of the video) with a constant shift added to the
//! first few dimensions. Frame annotations mark exactly those segments'
//! frame ranges. A desk-scale stand-in for an external feature extractor.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    save_annotations, save_manifest, write_feature_file, FrameAnnotations, Label, Manifest,
    ManifestEntry, Split,
};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, standard_normal, STREAM_SYNTH};
use crate::tensor::Matrix;

/// Number of leading dimensions that receive the anomaly shift.
const SHIFTED_DIMS: usize = 4;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_train_normal: usize,
    pub n_train_abnormal: usize,
    pub n_test_normal: usize,
    pub n_test_abnormal: usize,
    /// Segments per video, sampled uniformly from this inclusive range.
    pub segments_min: usize,
    pub segments_max: usize,
    pub feature_dim: usize,
    /// Fraction of an abnormal video's segments covered by the anomalous run.
    pub anomaly_fraction: f64,
    /// Added to the first dimensions of anomalous segments; 0 makes them
    /// statistically indistinguishable from normal ones.
    pub shift_magnitude: f64,
    /// Autocorrelation of consecutive segments' base features, in [0, 1).
    /// 0 gives independent segments; marginals stay standard normal either
    /// way.
    pub temporal_rho: f64,
    pub frames_per_segment: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train_normal: 40,
            n_train_abnormal: 40,
            n_test_normal: 20,
            n_test_abnormal: 20,
            segments_min: 64,
            segments_max: 192,
            feature_dim: 16,
            anomaly_fraction: 0.3,
            shift_magnitude: 3.0,
            temporal_rho: 0.99,
            frames_per_segment: 16,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_normal + self.n_train_abnormal == 0 {
            return Err(Error::Config("need at least one training video".into()));
        }
        if self.segments_min == 0 || self.segments_min > self.segments_max {
            return Err(Error::Config(format!(
                "bad segment range {}..={}",
                self.segments_min, self.segments_max
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction < 1.0) {
            return Err(Error::Config(format!(
                "anomaly_fraction must be in (0, 1), got {}",
                self.anomaly_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.temporal_rho) {
            return Err(Error::Config(format!(
                "temporal_rho must be in [0, 1), got {}",
                self.temporal_rho
            )));
        }
        if self.frames_per_segment == 0 {
            return Err(Error::Config("frames_per_segment must be >= 1".into()));
        }
        Ok(())
    }
}

/// Files written by one [`synth_generate`] call.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub annotations: PathBuf,
    pub feature_files: Vec<PathBuf>,
}

/// Generate feature files, manifests, and test frame annotations under
/// `out_dir`. Deterministic in the seed: regeneration produces bitwise
/// identical files.
pub fn synth_generate(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let feature_dir = out_dir.join("features");
    std::fs::create_dir_all(&feature_dir)?;

    let mut feature_files = Vec::new();
    let mut annotations = FrameAnnotations::default();
    let mut video_index: u64 = 0;

    let mut make_split = |split: Split,
                          n_normal: usize,
                          n_abnormal: usize,
                          annotations: &mut FrameAnnotations,
                          feature_files: &mut Vec<PathBuf>|
     -> Result<Vec<ManifestEntry>> {
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let mut entries = Vec::new();
        for (label, count) in [(Label::Normal, n_normal), (Label::Abnormal, n_abnormal)] {
            let kind = match label {
                Label::Normal => "normal",
                Label::Abnormal => "abnormal",
            };
            for i in 0..count {
                let video_id = format!("{prefix}_{kind}_{i:03}");
                let mut rng = derived_rng(cfg.seed, STREAM_SYNTH, video_index);
                video_index += 1;

                let m = rng.random_range(cfg.segments_min..=cfg.segments_max);
                // Stationary AR(1) down each dimension: x_0 ~ N(0,1),
                // x_t = rho*x_{t-1} + sqrt(1-rho^2)*N(0,1), so every
                // segment is marginally standard normal.
                let rho = cfg.temporal_rho;
                let innovation = (1.0 - rho * rho).sqrt();
                let mut data = vec![0.0f64; m * cfg.feature_dim];
                for dim in 0..cfg.feature_dim {
                    let mut state = standard_normal(&mut rng);
                    data[dim] = state;
                    for seg in 1..m {
                        state = rho * state + innovation * standard_normal(&mut rng);
                        data[seg * cfg.feature_dim + dim] = state;
                    }
                }
                if label == Label::Abnormal {
                    let (start, count) = anomalous_run(&mut rng, m, cfg.anomaly_fraction);
                    let shifted = SHIFTED_DIMS.min(cfg.feature_dim);
                    for seg in start..start + count {
                        for dim in 0..shifted {
                            data[seg * cfg.feature_dim + dim] += cfg.shift_magnitude;
                        }
                    }
                    if split == Split::Test {
                        annotations.insert(
                            video_id.clone(),
                            (
                                start * cfg.frames_per_segment,
                                (start + count) * cfg.frames_per_segment - 1,
                            ),
                        );
                    }
                }

                let features = Matrix::from_raw(m, cfg.feature_dim, data);
                let rel_path = format!("features/{video_id}.clws");
                let abs_path = out_dir.join(&rel_path);
                write_feature_file(&abs_path, &features)?;
                feature_files.push(abs_path);

                entries.push(ManifestEntry {
                    video_id,
                    label,
                    num_frames: m * cfg.frames_per_segment,
                    feature_path: rel_path,
                });
            }
        }
        Ok(entries)
    };

    let train_entries = make_split(
        Split::Train,
        cfg.n_train_normal,
        cfg.n_train_abnormal,
        &mut annotations,
        &mut feature_files,
    )?;
    let test_entries = make_split(
        Split::Test,
        cfg.n_test_normal,
        cfg.n_test_abnormal,
        &mut annotations,
        &mut feature_files,
    )?;

    let train_manifest_path = out_dir.join("train_manifest.csv");
    save_manifest(
        &train_manifest_path,
        &Manifest {
            entries: train_entries,
            split: Split::Train,
            base_dir: out_dir.to_path_buf(),
        },
    )?;

    let test_manifest_path = out_dir.join("test_manifest.csv");
    save_manifest(
        &test_manifest_path,
        &Manifest {
            entries: test_entries,
            split: Split::Test,
            base_dir: out_dir.to_path_buf(),
        },
    )?;

    let annotations_path = out_dir.join("test_annotations.csv");
    save_annotations(&annotations_path, &annotations)?;

    Ok(SynthOutput {
        train_manifest: train_manifest_path,
        test_manifest: test_manifest_path,
        annotations: annotations_path,
        feature_files,
    })
}

/// Contiguous anomalous run: at least one segment, covering roughly
/// `fraction` of the video, at a random position.
fn anomalous_run(rng: &mut ChaCha8Rng, m: usize, fraction: f64) -> (usize, usize) {
    let count = ((m as f64 * fraction).round() as usize).clamp(1, m);
    let start = rng.random_range(0..=m - count);
    (start, count)
}
