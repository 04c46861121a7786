//! Mean normalization statistics, fitted over the training split only.

use std::io::Cursor;
use std::path::Path;

use super::VideoFeatures;
use crate::binio;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const STATS_MAGIC: &[u8; 8] = b"CLWSSTAT";
const STATS_VERSION: u32 = 1;

/// Per-dimension training-set mean (and optional scale).
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocStats {
    pub mean: Vec<f64>,
    /// Per-dimension standard deviation, populated only when variance
    /// scaling was requested at fit time.
    pub scale: Option<Vec<f64>>,
    /// Number of segment vectors the statistics were computed over.
    pub computed_over: u64,
}

impl PreprocStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Average every dimension over every segment vector of every training
/// video. With `with_scale`, also record per-dimension standard deviations
/// (floored at 1e-12) for optional variance scaling.
pub fn fit_stats(train: &[VideoFeatures], with_scale: bool) -> Result<PreprocStats> {
    let mut videos = train.iter();
    let first = videos
        .next()
        .ok_or_else(|| Error::Config("fit_stats needs at least one training video".into()))?;
    let d = first.dim();

    let mut sum = vec![0.0f64; d];
    let mut count: u64 = 0;
    for v in train {
        if v.dim() != d {
            return Err(Error::Dimension {
                op: "fit_stats",
                detail: format!(
                    "video {} has dimension {}, expected {d}",
                    v.video_id,
                    v.dim()
                ),
            });
        }
        for r in 0..v.num_segments() {
            for (s, x) in sum.iter_mut().zip(v.features.row(r)) {
                *s += x;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config(
            "fit_stats needs at least one segment vector".into(),
        ));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();

    let scale = if with_scale {
        let mut sq = vec![0.0f64; d];
        for v in train {
            for r in 0..v.num_segments() {
                for ((s, x), m) in sq.iter_mut().zip(v.features.row(r)).zip(&mean) {
                    *s += (x - m) * (x - m);
                }
            }
        }
        Some(
            sq.iter()
                .map(|s| (s / count as f64).sqrt().max(1e-12))
                .collect(),
        )
    } else {
        None
    };

    Ok(PreprocStats {
        mean,
        scale,
        computed_over: count,
    })
}

/// Subtract the training mean from every segment vector (and divide by the
/// scale when present). Not idempotent: applying it twice subtracts the
/// mean twice.
pub fn normalize(video: &VideoFeatures, stats: &PreprocStats) -> Result<VideoFeatures> {
    if video.dim() != stats.dim() {
        return Err(Error::Dimension {
            op: "normalize",
            detail: format!(
                "video dimension {} vs stats dimension {}",
                video.dim(),
                stats.dim()
            ),
        });
    }
    let d = video.dim();
    let mut data = video.features.as_slice().to_vec();
    for row in data.chunks_exact_mut(d) {
        for (x, m) in row.iter_mut().zip(&stats.mean) {
            *x -= m;
        }
        if let Some(scale) = &stats.scale {
            for (x, s) in row.iter_mut().zip(scale) {
                *x /= s;
            }
        }
    }
    Ok(VideoFeatures {
        video_id: video.video_id.clone(),
        label: video.label,
        features: Matrix::from_raw(video.num_segments(), d, data),
        num_frames: video.num_frames,
    })
}

pub fn save_stats(path: impl AsRef<Path>, stats: &PreprocStats) -> Result<()> {
    binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(STATS_MAGIC);
        binio::write_u32(buf, STATS_VERSION)?;
        binio::write_u32(buf, stats.dim() as u32)?;
        binio::write_u64(buf, stats.computed_over)?;
        binio::write_f64_slice(buf, &stats.mean)?;
        match &stats.scale {
            Some(scale) => {
                buf.push(1);
                binio::write_f64_slice(buf, scale)?;
            }
            None => buf.push(0),
        }
        Ok(())
    })
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<PreprocStats> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let mut r = Cursor::new(bytes.as_slice());
    binio::read_magic(&mut r, STATS_MAGIC, path)?;
    let version = binio::read_u32(&mut r, path, "version")?;
    if version != STATS_VERSION {
        return Err(binio::format_err(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let d = binio::read_u32(&mut r, path, "dimension")? as usize;
    let computed_over = binio::read_u64(&mut r, path, "count")?;
    let mean = binio::read_f64_vec(&mut r, d, path)?;
    let mut flag = [0u8; 1];
    std::io::Read::read_exact(&mut r, &mut flag)
        .map_err(|_| binio::format_err(path, "truncated scale flag"))?;
    let scale = match flag[0] {
        0 => None,
        1 => Some(binio::read_f64_vec(&mut r, d, path)?),
        v => return Err(binio::format_err(path, format!("bad scale flag {v}"))),
    };
    Ok(PreprocStats {
        mean,
        scale,
        computed_over,
    })
}
