//! RMSProp training loop: epoch-wise cluster refresh, randomized batch
//! order, ablation toggles, metrics logging, and atomic checkpointing.
//!
//! The loop is strictly sequential and fully deterministic given (seed,
//! config, data): dropout streams are derived from the seed and iteration,
//! the batch order from the seed and epoch, and k-means sub-seeds from the
//! seed, epoch, and video index.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use crate::checkpoint::save_checkpoint;
use crate::clustering::{
    batch_cluster_distance, epoch_refresh, write_cluster_log, ClusterLogRow, ClusterState,
};
use crate::dataset::{make_epoch_order, segment_batches, Batch, Label, VideoFeatures};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossConfig, CLUSTER_DISTANCE_EPS};
use crate::model::{forward, ClawsParams, ModelConfig, ModelDims, PARAM_NAMES};
use crate::rng::{derived_rng, STREAM_DROPOUT};
use crate::tape::{Mode, Var};
use crate::tensor::Matrix;

/// Non-centered RMSProp state: one running squared-gradient average per
/// parameter tensor, in PARAM_NAMES order, plus the iteration counter.
#[derive(Debug, Clone)]
pub struct OptState {
    pub v: Vec<Matrix>,
    pub iteration: u64,
}

impl OptState {
    pub fn new(params: &ClawsParams) -> Self {
        Self {
            v: params
                .fields()
                .iter()
                .map(|f| Matrix::zeros(f.rows(), f.cols()))
                .collect(),
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            eps: 1e-8,
        }
    }
}

/// Component switches for ablation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    /// Random batch order; off means sequential video order.
    pub rbs: bool,
    pub nsm1: bool,
    pub nsm2: bool,
    /// Temporal smoothness + sparsity pair.
    pub loss_ts_s: bool,
    /// Clustering distance loss.
    pub loss_c: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            rbs: true,
            nsm1: true,
            nsm2: true,
            loss_ts_s: true,
            loss_c: true,
        }
    }
}

impl Toggles {
    /// Plain backbone: sequential order, no suppression, regression loss only.
    pub fn backbone_only() -> Self {
        Self {
            rbs: false,
            nsm1: false,
            nsm2: false,
            loss_ts_s: false,
            loss_c: false,
        }
    }
}

/// How the clustering loss consumes the epoch clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMode {
    /// Freeze assignments, recompute the center distance differentiably
    /// from the current batch rows (default; gradients flow).
    FrozenAssignment,
    /// Use the epoch-start scalar distance as a constant (logging-only;
    /// contributes to the reported loss but has zero gradient).
    FrozenScalar,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub total_iters: u64,
    pub lr: f64,
    pub lr_drop_at: u64,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub rmsprop: RmsPropConfig,
    pub toggles: Toggles,
    pub loss: LossConfig,
    pub dropout_rate: f64,
    pub gate_after_relu: bool,
    pub cluster_mode: ClusterMode,
    pub dims: ModelDims,
    /// Optional global gradient-norm clip; disabled by default.
    pub grad_clip: Option<f64>,
    pub log_every: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 100_000,
            lr: 1e-4,
            lr_drop_at: 80_000,
            lr_drop_factor: 0.1,
            batch_size: 64,
            seed: 0,
            rmsprop: RmsPropConfig::default(),
            toggles: Toggles::default(),
            loss: LossConfig::default(),
            dropout_rate: 0.6,
            gate_after_relu: false,
            cluster_mode: ClusterMode::FrozenAssignment,
            dims: ModelDims::default(),
            grad_clip: None,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_drop_factor must be in (0, 1], got {}",
                self.lr_drop_factor
            )));
        }
        if self.lr_drop_at > self.total_iters {
            return Err(Error::Config(format!(
                "lr_drop_at {} exceeds total_iters {}",
                self.lr_drop_at, self.total_iters
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.rmsprop.decay >= 0.0 && self.rmsprop.decay < 1.0) {
            return Err(Error::Config(format!(
                "rmsprop decay must be in [0, 1), got {}",
                self.rmsprop.decay
            )));
        }
        if self.rmsprop.eps <= 0.0 {
            return Err(Error::Config("rmsprop eps must be > 0".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        self.loss.validate()?;
        self.dims.validate()?;
        self.model_config().validate()
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            use_nsm1: self.toggles.nsm1,
            use_nsm2: self.toggles.nsm2,
            dropout_rate: self.dropout_rate,
            mode: Mode::Train,
            gate_after_relu: self.gate_after_relu,
        }
    }
}

/// Step schedule: `lr` before `lr_drop_at`, `lr * factor` from it onward.
pub fn lr_at(iteration: u64, cfg: &TrainConfig) -> f64 {
    if iteration < cfg.lr_drop_at {
        cfg.lr
    } else {
        cfg.lr * cfg.lr_drop_factor
    }
}

/// One RMSProp update over all parameter tensors:
/// v <- decay*v + (1-decay)*g^2; theta <- theta - lr*g/(sqrt(v) + eps).
/// Rejects non-finite gradients with the offending parameter name.
pub fn rmsprop_step(
    params: &mut ClawsParams,
    grads: &[Matrix],
    state: &mut OptState,
    lr: f64,
    cfg: &RmsPropConfig,
    iteration: u64,
) -> Result<()> {
    debug_assert_eq!(grads.len(), PARAM_NAMES.len());
    for (name, g) in PARAM_NAMES.iter().zip(grads) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                iteration,
                param: name,
                norm: g.l2_norm(),
            });
        }
    }
    for ((theta, v), g) in params
        .fields_mut()
        .into_iter()
        .zip(state.v.iter_mut())
        .zip(grads)
    {
        for ((t, vv), gg) in theta
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_mut_slice())
            .zip(g.as_slice())
        {
            *vv = cfg.decay * *vv + (1.0 - cfg.decay) * gg * gg;
            *t -= lr * gg / (vv.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// One metrics-log row, emitted every `log_every` iterations.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub iteration: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Metrics CSV: `iteration,lr,pred,cluster,ts,sparsity,total`.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from("iteration,lr,pred,cluster,ts,sparsity,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration,
            r.lr,
            r.loss.pred,
            r.loss.cluster,
            r.loss.ts,
            r.loss.sparsity,
            r.loss.total
        ));
    }
    crate::binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(out.as_bytes());
        Ok(())
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ClawsParams,
    pub opt_state: OptState,
    pub metrics: Vec<MetricsRow>,
    pub cluster_log: Vec<ClusterLogRow>,
    pub warnings: Vec<String>,
    /// Path of the final checkpoint when an output directory was given.
    pub final_checkpoint: Option<PathBuf>,
}

/// Train from scratch over the given (already normalized) videos.
///
/// When `out_dir` is set, checkpoints land there (`checkpoint_final.bin`
/// plus periodic `checkpoint_<iter>.bin`), along with `metrics.csv` and,
/// if the clustering loss is active, `clusters.csv`. On a non-finite loss
/// the loop aborts after writing an emergency checkpoint.
pub fn train(
    train_set: &[VideoFeatures],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for v in train_set {
        if v.dim() != cfg.dims.d {
            return Err(Error::Dimension {
                op: "train",
                detail: format!(
                    "video {} has dimension {}, config d is {}",
                    v.video_id,
                    v.dim(),
                    cfg.dims.d
                ),
            });
        }
    }

    let mut warnings = Vec::new();
    let n_abnormal = train_set
        .iter()
        .filter(|v| v.label == Label::Abnormal)
        .count();
    if n_abnormal == 0 || n_abnormal == train_set.len() {
        warnings.push(format!(
            "training set is single-class ({} of {} abnormal); scores cannot calibrate",
            n_abnormal,
            train_set.len()
        ));
    }

    let batches: Vec<Batch> = train_set
        .iter()
        .flat_map(|v| segment_batches(v, cfg.batch_size))
        .collect();
    if batches.is_empty() {
        return Err(Error::Config(
            "no trainable batches (every video shorter than 2 segments)".into(),
        ));
    }
    let k = batches.len();
    let segments_by_video: HashMap<&str, usize> = train_set
        .iter()
        .map(|v| (v.video_id.as_str(), v.num_segments()))
        .collect();

    let mut params = ClawsParams::init(cfg.seed, cfg.dims);
    let mut opt = OptState::new(&params);
    let model_cfg = cfg.model_config();
    let mut cluster_states: BTreeMap<String, ClusterState> = BTreeMap::new();
    let mut cluster_log = Vec::new();
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..k).collect();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    for it in 0..cfg.total_iters {
        let epoch = it / k as u64;
        let pos = (it % k as u64) as usize;
        if pos == 0 {
            if cfg.toggles.rbs {
                order = make_epoch_order(k, epoch, cfg.seed);
            }
            if cfg.toggles.loss_c {
                cluster_states = epoch_refresh(
                    train_set,
                    &params,
                    &model_cfg,
                    cfg.batch_size,
                    cfg.seed,
                    epoch,
                )?;
                for (video_id, state) in &cluster_states {
                    cluster_log.push(ClusterLogRow {
                        video_id: video_id.clone(),
                        epoch,
                        d: state.d,
                        degenerate: state.degenerate,
                    });
                }
            }
        }

        let batch = &batches[order[pos]];
        let mut dropout_rng = derived_rng(cfg.seed, STREAM_DROPOUT, it);
        let mut trace = forward(batch, &params, &model_cfg, &mut dropout_rng)?;

        // Regression against the weak label broadcast over the batch.
        let targets = vec![batch.label.as_f64(); batch.len()];
        let pred_var = trace.tape.mse(trace.scores_var, &targets)?;

        // Clustering term under the frozen epoch state.
        let cluster_var: Option<Var> = if cfg.toggles.loss_c {
            let state = cluster_states.get(&batch.video_id);
            match (state, cfg.cluster_mode) {
                (Some(state), ClusterMode::FrozenAssignment) if !state.degenerate => {
                    let assigns = &state.assignments
                        [batch.segment_offset..batch.segment_offset + batch.len()];
                    let m = segments_by_video[batch.video_id.as_str()];
                    match batch_cluster_distance(&mut trace.tape, trace.r1_var, assigns, m)? {
                        Some(d_var) => Some(match batch.label {
                            Label::Normal => trace.tape.min_const(d_var, cfg.loss.alpha)?,
                            Label::Abnormal => {
                                trace.tape.recip_clamped(d_var, CLUSTER_DISTANCE_EPS)?
                            }
                        }),
                        None => None,
                    }
                }
                (Some(state), ClusterMode::FrozenScalar) if !state.degenerate => {
                    let value =
                        crate::losses::clustering_loss(state.d, batch.label, cfg.loss.alpha)?;
                    Some(trace.tape.constant(Matrix::scalar(value)))
                }
                _ => None,
            }
        } else {
            None
        };

        let ts_s_vars = if cfg.toggles.loss_ts_s {
            let ts = trace.tape.temporal_smoothness(trace.scores_var)?;
            let sp = trace.tape.sparsity_sum(trace.scores_var);
            Some((ts, sp))
        } else {
            None
        };

        let mut terms: Vec<(Var, f64)> = vec![(pred_var, cfg.loss.lambda1)];
        if let Some(c) = cluster_var {
            terms.push((c, 1.0 - cfg.loss.lambda1));
        }
        if let Some((ts, sp)) = ts_s_vars {
            terms.push((sp, cfg.loss.lambda2));
            terms.push((ts, cfg.loss.lambda2));
        }
        let total_var = trace.tape.weighted_sum(&terms)?;

        let breakdown = LossBreakdown {
            pred: trace.tape.value(pred_var).scalar_value(),
            cluster: cluster_var.map_or(0.0, |v| trace.tape.value(v).scalar_value()),
            ts: ts_s_vars.map_or(0.0, |(ts, _)| trace.tape.value(ts).scalar_value()),
            sparsity: ts_s_vars.map_or(0.0, |(_, sp)| trace.tape.value(sp).scalar_value()),
            total: trace.tape.value(total_var).scalar_value(),
        };
        if !breakdown.total.is_finite() {
            if let Some(dir) = out_dir {
                save_checkpoint(dir.join("checkpoint_abort.bin"), &params, &opt)?;
            }
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!("{breakdown:?}"),
            });
        }

        let grads = trace.tape.backward(total_var, 1.0)?;
        let mut param_grads: Vec<Matrix> = trace
            .params
            .0
            .iter()
            .zip(params.fields())
            .map(|(var, field)| {
                grads
                    .get(*var)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(field.rows(), field.cols()))
            })
            .collect();

        if let Some(clip) = cfg.grad_clip {
            let global_norm = param_grads
                .iter()
                .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if global_norm > clip {
                let scale = clip / global_norm;
                for g in &mut param_grads {
                    for v in g.as_mut_slice() {
                        *v *= scale;
                    }
                }
            }
        }

        let lr = lr_at(it, cfg);
        if let Err(err) = rmsprop_step(&mut params, &param_grads, &mut opt, lr, &cfg.rmsprop, it) {
            if let Some(dir) = out_dir {
                save_checkpoint(dir.join("checkpoint_abort.bin"), &params, &opt)?;
            }
            return Err(err);
        }
        opt.iteration = it + 1;

        if (it + 1) % cfg.log_every == 0 {
            metrics.push(MetricsRow {
                iteration: it + 1,
                lr,
                loss: breakdown,
            });
        }
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = out_dir {
                save_checkpoint(
                    dir.join(format!("checkpoint_{:08}.bin", it + 1)),
                    &params,
                    &opt,
                )?;
            }
        }
    }

    let mut final_checkpoint = None;
    if let Some(dir) = out_dir {
        let path = dir.join("checkpoint_final.bin");
        save_checkpoint(&path, &params, &opt)?;
        write_metrics_csv(dir.join("metrics.csv"), &metrics)?;
        if cfg.toggles.loss_c {
            write_cluster_log(dir.join("clusters.csv"), &cluster_log)?;
        }
        final_checkpoint = Some(path);
    }

    Ok(TrainOutcome {
        params,
        opt_state: opt,
        metrics,
        cluster_log,
        warnings,
        final_checkpoint,
    })
}
