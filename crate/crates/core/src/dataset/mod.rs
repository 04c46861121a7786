//! Data ingestion: manifests, per-video feature files, mean normalization,
//! fixed-size batching, the random batch selector, and a synthetic dataset
//! generator for end-to-end experiments without an external feature
//! extractor.

mod batching;
mod features;
mod manifest;
mod stats;
mod synth;

pub use batching::{make_epoch_order, segment_batches};
pub use features::{load_video_features, write_feature_file, FEATURE_MAGIC};
pub use manifest::{
    load_annotations, load_manifest, save_annotations, save_manifest, FrameAnnotations,
};
pub use stats::{fit_stats, load_stats, normalize, save_stats, PreprocStats};
pub use synth::{synth_generate, SynthConfig, SynthOutput};

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Video-level weak label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Abnormal),
            _ => Err(Error::Config("label must be 0 or 1".into())),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    /// Regression target broadcast to every segment of a batch.
    pub fn as_f64(self) -> f64 {
        self.as_u8() as f64
    }
}

/// Which split a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub label: Label,
    pub num_frames: usize,
    /// Stored verbatim; resolve against [`Manifest::base_dir`] when opening.
    pub feature_path: String,
}

/// Parsed and validated manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    /// Directory of the manifest file, for resolving relative feature paths.
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Absolute-or-joined path of one entry's feature file.
    pub fn feature_path(&self, entry: &ManifestEntry) -> PathBuf {
        let p = PathBuf::from(&entry.feature_path);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }
}

/// One video's ordered segment feature vectors plus its weak label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub video_id: String,
    pub label: Label,
    /// m_i x d, one row per segment in temporal order.
    pub features: Matrix,
    pub num_frames: usize,
}

impl VideoFeatures {
    pub fn num_segments(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// A window of temporally consecutive segments from one video; the unit of
/// one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub video_id: String,
    pub label: Label,
    /// b_actual x d, rows in temporal order.
    pub features: Matrix,
    /// Index of the first segment within the parent video.
    pub segment_offset: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}
