//! Fixed-size batching and the random batch selector.

use rand::Rng;

use super::{Batch, VideoFeatures};
use crate::rng::{derived_rng, STREAM_EPOCH_ORDER};
use crate::tensor::Matrix;

/// Cut a video into consecutive non-overlapping windows of `b` segments.
/// A final remainder window is kept if it has at least 2 rows (the temporal
/// smoothness loss needs two), otherwise dropped. Every batch inherits the
/// video label.
pub fn segment_batches(video: &VideoFeatures, b: usize) -> Vec<Batch> {
    assert!(b >= 2, "batch size must be >= 2");
    let m = video.num_segments();
    let d = video.dim();
    let mut batches = Vec::new();
    let mut start = 0;
    while start < m {
        let len = b.min(m - start);
        if len >= 2 {
            let data: Vec<f64> = (start..start + len)
                .flat_map(|r| video.features.row(r).iter().copied())
                .collect();
            batches.push(Batch {
                video_id: video.video_id.clone(),
                label: video.label,
                features: Matrix::from_raw(len, d, data),
                segment_offset: start,
            });
        }
        start += b;
    }
    batches
}

/// Uniform random permutation of `[0, k)`, deterministic in (seed, epoch).
/// One epoch visits every batch exactly once.
pub fn make_epoch_order(k: usize, epoch: u64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    let mut rng = derived_rng(seed, STREAM_EPOCH_ORDER, epoch);
    // Fisher-Yates.
    for i in (1..k).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}
