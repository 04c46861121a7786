//! Epoch-start 2-means over each video's intermediate representations.
//!
//! Assignments are frozen for the epoch; during training the center
//! distance is recomputed differentiably from the current batch rows under
//! those frozen assignments, so the clustering loss can actually move
//! parameters. The epoch-start distance d_i is kept for logging and for the
//! frozen-scalar mode.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::dataset::VideoFeatures;
use crate::error::{Error, Result};
use crate::model::{intermediate_representation, ClawsParams, ModelConfig};
use crate::rng::{derived_rng, STREAM_KMEANS};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// Frozen per-video clustering for one epoch.
#[derive(Debug, Clone)]
pub struct ClusterState {
    /// Per-segment cluster membership (false = cluster 0).
    pub assignments: Vec<bool>,
    pub centers: [Vec<f64>; 2],
    /// Center distance normalized by the segment count.
    pub d: f64,
    /// Set when the video cannot produce two clusters (fewer than two
    /// segments, or zero-variance representations).
    pub degenerate: bool,
    pub epoch: u64,
}

/// Result of one 2-means run.
#[derive(Debug, Clone)]
pub struct Kmeans2 {
    pub assignments: Vec<bool>,
    pub centers: [Vec<f64>; 2],
    pub degenerate: bool,
    pub iterations: usize,
}

/// Lloyd iteration with k = 2 and distance-squared-proportional seeding,
/// deterministic in `seed`. Terminates at an assignment fixpoint or after
/// `max_iters`. An emptied cluster is repaired by moving the point farthest
/// from its center into it. Fewer than two points, or all points identical,
/// yields a degenerate single-cluster result.
pub fn kmeans2(points: &Matrix, seed: u64, max_iters: usize) -> Result<Kmeans2> {
    if !points.is_finite() {
        return Err(Error::Domain("kmeans2 requires finite points".into()));
    }
    let m = points.rows();
    let z = points.cols();
    if m < 2 {
        let center = if m == 1 {
            points.row(0).to_vec()
        } else {
            vec![0.0; z]
        };
        return Ok(Kmeans2 {
            assignments: vec![false; m],
            centers: [center.clone(), center],
            degenerate: true,
            iterations: 0,
        });
    }

    let mut rng = derived_rng(seed, STREAM_KMEANS, 0);

    // Seeding: first center uniform, second proportional to squared
    // distance from the first.
    let first = rng.random_range(0..m);
    let d2: Vec<f64> = (0..m)
        .map(|r| sq_dist(points.row(r), points.row(first)))
        .collect();
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        // All points identical: both centers coincide.
        let center = points.row(first).to_vec();
        return Ok(Kmeans2 {
            assignments: vec![false; m],
            centers: [center.clone(), center],
            degenerate: true,
            iterations: 0,
        });
    }
    let mut pick = rng.random::<f64>() * total;
    let mut second = m - 1;
    for (r, &w) in d2.iter().enumerate() {
        if pick < w {
            second = r;
            break;
        }
        pick -= w;
    }

    let mut centers = [points.row(first).to_vec(), points.row(second).to_vec()];
    let mut assignments = vec![false; m];
    let mut prev_wcss = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        // Assignment step; ties go to cluster 0.
        let mut changed = false;
        for (r, slot) in assignments.iter_mut().enumerate() {
            let a = sq_dist(points.row(r), &centers[1]) < sq_dist(points.row(r), &centers[0]);
            if a != *slot {
                *slot = a;
                changed = true;
            }
        }

        // Empty-cluster repair: move the point farthest from its center.
        for cluster in [false, true] {
            if assignments.contains(&cluster) {
                continue;
            }
            let farthest = (0..m)
                .max_by(|&a, &b| {
                    let da = sq_dist(points.row(a), &centers[usize::from(assignments[a])]);
                    let db = sq_dist(points.row(b), &centers[usize::from(assignments[b])]);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assignments[farthest] = cluster;
            changed = true;
        }

        // Update step.
        centers = recompute_centers(points, &assignments);

        let wcss = within_cluster_ss(points, &assignments, &centers);
        debug_assert!(
            wcss <= prev_wcss + 1e-9,
            "Lloyd iteration increased WCSS: {prev_wcss} -> {wcss}"
        );
        prev_wcss = wcss;

        if !changed {
            break;
        }
    }

    Ok(Kmeans2 {
        assignments,
        centers,
        degenerate: false,
        iterations,
    })
}

/// Center distance of one video normalized by its segment count:
/// ||c1 - c2|| / m.
pub fn video_distance(centers: &[Vec<f64>; 2], m: usize) -> f64 {
    debug_assert!(m >= 1);
    sq_dist(&centers[0], &centers[1]).sqrt() / m as f64
}

/// Recompute clustering for every training video from its current
/// intermediate representation. Deterministic in (seed, epoch, params);
/// results keyed by video id.
pub fn epoch_refresh(
    videos: &[VideoFeatures],
    params: &ClawsParams,
    model_cfg: &ModelConfig,
    window: usize,
    seed: u64,
    epoch: u64,
) -> Result<BTreeMap<String, ClusterState>> {
    let eval_cfg = model_cfg.eval();
    let mut out = BTreeMap::new();
    for (idx, video) in videos.iter().enumerate() {
        let repr = intermediate_representation(video, params, &eval_cfg, window)?;
        let sub_seed = seed
            ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (idx as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        let km = kmeans2(&repr, sub_seed, 100)?;
        let d = if km.degenerate {
            0.0
        } else {
            video_distance(&km.centers, video.num_segments())
        };
        out.insert(
            video.video_id.clone(),
            ClusterState {
                assignments: km.assignments,
                centers: km.centers,
                d,
                degenerate: km.degenerate,
                epoch,
            },
        );
    }
    Ok(out)
}

/// Differentiable in-batch center distance under frozen assignments.
/// Returns `None` when the batch rows fall in a single cluster, in which
/// case the clustering loss is skipped for this batch.
pub fn batch_cluster_distance(
    tape: &mut Tape,
    rows: Var,
    frozen_assignments: &[bool],
    m: usize,
) -> Result<Option<Var>> {
    let has_zero = frozen_assignments.iter().any(|&a| !a);
    let has_one = frozen_assignments.iter().any(|&a| a);
    if !has_zero || !has_one {
        return Ok(None);
    }
    tape.cluster_distance(rows, frozen_assignments, m).map(Some)
}

/// One diagnostic row per (video, epoch).
#[derive(Debug, Clone)]
pub struct ClusterLogRow {
    pub video_id: String,
    pub epoch: u64,
    pub d: f64,
    pub degenerate: bool,
}

/// Optional diagnostic dump: `video_id,epoch,d_i,degenerate`.
pub fn write_cluster_log(path: impl AsRef<Path>, rows: &[ClusterLogRow]) -> Result<()> {
    let mut out = String::from("video_id,epoch,d_i,degenerate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.video_id, r.epoch, r.d, r.degenerate as u8
        ));
    }
    crate::binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(out.as_bytes());
        Ok(())
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn recompute_centers(points: &Matrix, assignments: &[bool]) -> [Vec<f64>; 2] {
    let z = points.cols();
    let mut centers = [vec![0.0; z], vec![0.0; z]];
    let mut counts = [0usize; 2];
    for (r, &a) in assignments.iter().enumerate() {
        let c = usize::from(a);
        counts[c] += 1;
        for (acc, v) in centers[c].iter_mut().zip(points.row(r)) {
            *acc += v;
        }
    }
    for (center, count) in centers.iter_mut().zip(counts) {
        if count > 0 {
            for v in center.iter_mut() {
                *v /= count as f64;
            }
        }
    }
    centers
}

fn within_cluster_ss(points: &Matrix, assignments: &[bool], centers: &[Vec<f64>; 2]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(r, &a)| sq_dist(points.row(r), &centers[usize::from(a)]))
        .sum()
}
