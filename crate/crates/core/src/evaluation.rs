//! Frame-level scoring and ROC/AUC against frame annotations.
//!
//! Segment scores expand to frames (each frame takes its segment's score;
//! tail frames inherit the last segment's). All test videos' frames are
//! pooled into a single ROC; ties form one threshold step and the area is
//! the trapezoidal integral, which equals the pairwise rank statistic.
//! A per-video averaged mode exists behind a flag.

use std::path::Path;

use crate::dataset::{FrameAnnotations, Label, VideoFeatures};
use crate::error::{Error, Result};
use crate::model::{forward_features, ClawsParams, ModelConfig};
use crate::rng::derived_rng;
use crate::tensor::Matrix;

/// One test video's per-frame scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve with trapezoidal AUC and the equal-error rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    /// Points sorted by false-positive rate, from (0,0) to (1,1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
}

/// Spread segment scores over frames: frame f takes score of segment
/// floor(f / p); frames past the last full segment inherit its score.
/// `num_frames` must lie in [m*p, (m+1)*p + p).
pub fn expand_to_frames(
    video_id: &str,
    segment_scores: &[f64],
    num_frames: usize,
    frames_per_segment: usize,
) -> Result<FrameScoreSeries> {
    let m = segment_scores.len();
    if m == 0 {
        return Err(Error::Usage(format!(
            "video {video_id} has no segment scores"
        )));
    }
    if frames_per_segment == 0 {
        return Err(Error::Config("frames_per_segment must be >= 1".into()));
    }
    let p = frames_per_segment;
    if num_frames < m * p || num_frames >= (m + 2) * p {
        return Err(Error::Dimension {
            op: "expand_to_frames",
            detail: format!(
                "video {video_id}: {m} segments of {p} frames cannot cover {num_frames} frames"
            ),
        });
    }
    let scores = (0..num_frames)
        .map(|f| segment_scores[(f / p).min(m - 1)])
        .collect();
    Ok(FrameScoreSeries {
        video_id: video_id.to_string(),
        scores,
    })
}

/// Binary frame labels from annotation intervals: 1 inside any interval,
/// else 0. Intervals are inclusive and must fit in [0, num_frames).
pub fn frame_labels(
    annotations: &FrameAnnotations,
    video_id: &str,
    num_frames: usize,
) -> Result<Vec<u8>> {
    let mut labels = vec![0u8; num_frames];
    for &(start, end) in annotations.intervals(video_id) {
        if start > end || end >= num_frames {
            return Err(Error::Config(format!(
                "interval ({start}, {end}) out of range for video {video_id} with {num_frames} frames"
            )));
        }
        for l in &mut labels[start..=end] {
            *l = 1;
        }
    }
    Ok(labels)
}

/// ROC/AUC over pooled scores. Tied scores form a single threshold step;
/// the trapezoidal area then equals the probability that a positive
/// outranks a negative, counting ties as half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "roc_auc",
            detail: format!("{} scores vs {} labels", scores.len(), labels.len()),
        });
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes, got {pos} positive and {neg} negative frames"
        )));
    }

    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let threshold = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == threshold {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    let eer = equal_error_rate(&points);
    Ok(RocResult { points, auc, eer })
}

/// The rate where false positives and false negatives coincide, linearly
/// interpolated along the curve.
fn equal_error_rate(points: &[RocPoint]) -> f64 {
    // g = fpr + tpr - 1 is non-decreasing along the curve from -1 to +1.
    for w in points.windows(2) {
        let g0 = w[0].fpr + w[0].tpr - 1.0;
        let g1 = w[1].fpr + w[1].tpr - 1.0;
        if g1 < 0.0 {
            continue;
        }
        if g1 == g0 {
            return w[0].fpr.max(1.0 - w[0].tpr);
        }
        let t = -g0 / (g1 - g0);
        return w[0].fpr + t * (w[1].fpr - w[0].fpr);
    }
    1.0
}

/// Eval-mode segment scores for one video, windowed by `window` segments.
///
/// The suppression softmax spreads each column's unit mass over the rows of
/// its window, so a short remainder window would hand every row an inflated
/// share and distort its scores. Remainder segments are therefore scored
/// inside the last full-size window (overlapping the previous one), keeping
/// the gating mass identical for every segment. Videos shorter than one
/// window are scored in a single window of their own length.
pub fn score_video(
    video: &VideoFeatures,
    params: &ClawsParams,
    cfg: &ModelConfig,
    window: usize,
) -> Result<Vec<f64>> {
    let eval_cfg = cfg.eval();
    let m = video.num_segments();
    let d = video.dim();
    let mut scores = Vec::with_capacity(m);
    // Eval mode never draws from the stream; any generator works.
    let mut rng = derived_rng(0, 0, 0);
    let mut start = 0;
    while start < m {
        let remaining = m - start;
        let (win_start, len, keep_from) = if remaining >= window || start == 0 {
            (start, window.min(remaining), 0)
        } else {
            // Overlap backward to a full window; keep only the new rows.
            (m - window, window, window - remaining)
        };
        let data: Vec<f64> = (win_start..win_start + len)
            .flat_map(|r| video.features.row(r).iter().copied())
            .collect();
        let features = Matrix::from_raw(len, d, data);
        let trace = forward_features(&features, params, &eval_cfg, &mut rng)?;
        scores.extend_from_slice(&trace.scores[keep_from..]);
        start += len - keep_from;
    }
    debug_assert_eq!(scores.len(), m);
    Ok(scores)
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub roc: RocResult,
    pub series: Vec<FrameScoreSeries>,
    /// Pooled frame labels aligned with `series` order.
    pub labels: Vec<Vec<u8>>,
    pub num_frames: usize,
    pub num_anomalous_frames: usize,
    /// Mean per-video AUC over videos with both classes (the flag-gated
    /// alternative protocol); None when no video qualifies.
    pub per_video_auc: Option<f64>,
}

/// Score every test video, expand to frames, pool, and compute a single
/// ROC/AUC. Every abnormal video must have annotation intervals and every
/// normal one must have none.
pub fn evaluate(
    test_set: &[VideoFeatures],
    annotations: &FrameAnnotations,
    params: &ClawsParams,
    cfg: &ModelConfig,
    window: usize,
    frames_per_segment: usize,
) -> Result<EvalOutcome> {
    if test_set.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let mut series = Vec::with_capacity(test_set.len());
    let mut labels = Vec::with_capacity(test_set.len());
    for video in test_set {
        let has_intervals = !annotations.intervals(&video.video_id).is_empty();
        match video.label {
            Label::Abnormal if !has_intervals => {
                return Err(Error::Config(format!(
                    "missing frame annotations for abnormal test video {}",
                    video.video_id
                )));
            }
            Label::Normal if has_intervals => {
                return Err(Error::Config(format!(
                    "normal test video {} has frame annotations",
                    video.video_id
                )));
            }
            _ => {}
        }
        let segment_scores = score_video(video, params, cfg, window)?;
        series.push(expand_to_frames(
            &video.video_id,
            &segment_scores,
            video.num_frames,
            frames_per_segment,
        )?);
        labels.push(frame_labels(
            annotations,
            &video.video_id,
            video.num_frames,
        )?);
    }

    let pooled_scores: Vec<f64> = series
        .iter()
        .flat_map(|s| s.scores.iter().copied())
        .collect();
    let pooled_labels: Vec<u8> = labels.iter().flat_map(|l| l.iter().copied()).collect();
    let num_anomalous_frames = pooled_labels.iter().filter(|&&l| l == 1).count();
    let roc = roc_auc(&pooled_scores, &pooled_labels)?;

    let mut per_video = Vec::new();
    for (s, l) in series.iter().zip(&labels) {
        if l.contains(&1) && l.contains(&0) {
            per_video.push(roc_auc(&s.scores, l)?.auc);
        }
    }
    let per_video_auc = if per_video.is_empty() {
        None
    } else {
        Some(per_video.iter().sum::<f64>() / per_video.len() as f64)
    };

    Ok(EvalOutcome {
        roc,
        num_frames: pooled_labels.len(),
        num_anomalous_frames,
        series,
        labels,
        per_video_auc,
    })
}

/// Score dump: `video_id,frame,score,label`, all videos in one file.
pub fn write_scores_csv(path: impl AsRef<Path>, outcome: &EvalOutcome) -> Result<()> {
    let mut out = String::from("video_id,frame,score,label\n");
    for (series, labels) in outcome.series.iter().zip(&outcome.labels) {
        for (frame, (score, label)) in series.scores.iter().zip(labels).enumerate() {
            out.push_str(&format!("{},{frame},{score},{label}\n", series.video_id));
        }
    }
    crate::binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(out.as_bytes());
        Ok(())
    })
}

/// Summary CSV: `auc,eer,num_frames,num_anomalous_frames`.
pub fn write_summary_csv(path: impl AsRef<Path>, outcome: &EvalOutcome) -> Result<()> {
    let out = format!(
        "auc,eer,num_frames,num_anomalous_frames\n{},{},{},{}\n",
        outcome.roc.auc, outcome.roc.eer, outcome.num_frames, outcome.num_anomalous_frames
    );
    crate::binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(out.as_bytes());
        Ok(())
    })
}
