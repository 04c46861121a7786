//! Run configuration: a TOML file provides defaults, command-line flags
//! override individual values. Unknown keys are rejected.

use std::path::Path;

use anyhow::{Context, Result};
use claws_core::losses::LossConfig;
use claws_core::model::ModelDims;
use claws_core::trainer::{ClusterMode, RmsPropConfig, Toggles, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub feature_dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub frames_per_segment: Option<usize>,
    pub variance_scaling: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub z1: Option<usize>,
    pub z2: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub nsm1: Option<bool>,
    pub nsm2: Option<bool>,
    pub gate_after_relu: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub total_iters: Option<u64>,
    pub lr: Option<f64>,
    pub lr_drop_at: Option<u64>,
    pub lr_drop_factor: Option<f64>,
    pub seed: Option<u64>,
    pub rmsprop_decay: Option<f64>,
    pub rmsprop_eps: Option<f64>,
    pub rbs: Option<bool>,
    pub loss_ts_s: Option<bool>,
    pub loss_c: Option<bool>,
    pub cluster_mode: Option<String>,
    pub grad_clip: Option<f64>,
    pub log_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
        }
    }
}

impl FileConfig {
    pub fn feature_dim(&self) -> usize {
        self.data.feature_dim.unwrap_or(2048)
    }

    pub fn batch_size(&self) -> usize {
        self.data.batch_size.unwrap_or(64)
    }

    pub fn frames_per_segment(&self) -> usize {
        self.data.frames_per_segment.unwrap_or(16)
    }

    pub fn variance_scaling(&self) -> bool {
        self.data.variance_scaling.unwrap_or(false)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.feature_dim(),
            z1: self.model.z1.unwrap_or(512),
            z2: self.model.z2.unwrap_or(32),
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        self.model.dropout_rate.unwrap_or(0.6)
    }

    pub fn loss_config(&self) -> LossConfig {
        let defaults = LossConfig::default();
        LossConfig {
            lambda1: self.loss.lambda1.unwrap_or(defaults.lambda1),
            lambda2: self.loss.lambda2.unwrap_or(defaults.lambda2),
            alpha: self.loss.alpha.unwrap_or(defaults.alpha),
        }
    }

    pub fn cluster_mode(&self) -> Result<ClusterMode> {
        match self.train.cluster_mode.as_deref() {
            None | Some("frozen-assignment") => Ok(ClusterMode::FrozenAssignment),
            Some("frozen-scalar") => Ok(ClusterMode::FrozenScalar),
            Some(other) => anyhow::bail!(
                "cluster_mode must be \"frozen-assignment\" or \"frozen-scalar\", got {other:?}"
            ),
        }
    }

    /// Train configuration with file values over library defaults; the
    /// caller then lays CLI flags on top.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        Ok(TrainConfig {
            total_iters: self.train.total_iters.unwrap_or(defaults.total_iters),
            lr: self.train.lr.unwrap_or(defaults.lr),
            lr_drop_at: self.train.lr_drop_at.unwrap_or(defaults.lr_drop_at),
            lr_drop_factor: self.train.lr_drop_factor.unwrap_or(defaults.lr_drop_factor),
            batch_size: self.batch_size(),
            seed: self.train.seed.unwrap_or(0),
            rmsprop: RmsPropConfig {
                decay: self.train.rmsprop_decay.unwrap_or(0.99),
                eps: self.train.rmsprop_eps.unwrap_or(1e-8),
            },
            toggles: Toggles {
                rbs: self.train.rbs.unwrap_or(true),
                nsm1: self.model.nsm1.unwrap_or(true),
                nsm2: self.model.nsm2.unwrap_or(true),
                loss_ts_s: self.train.loss_ts_s.unwrap_or(true),
                loss_c: self.train.loss_c.unwrap_or(true),
            },
            loss: self.loss_config(),
            dropout_rate: self.dropout_rate(),
            gate_after_relu: self.model.gate_after_relu.unwrap_or(false),
            cluster_mode: self.cluster_mode()?,
            dims: self.dims(),
            grad_clip: self.train.grad_clip.filter(|&c| c > 0.0),
            log_every: self.train.log_every.unwrap_or(defaults.log_every),
            checkpoint_every: self.train.checkpoint_every.unwrap_or(0),
        })
    }
}
