//! Per-video feature file format.
//!
//! Little-endian binary, one file per video: magic `CLWSFEAT`, version
//! u32 = 1, segment count m u32, dimension d u32, then m*d IEEE-754 f32
//! values in segment order. Values are widened to f64 on load.

use std::io::Cursor;
use std::path::Path;

use super::{Manifest, ManifestEntry, VideoFeatures};
use crate::binio;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"CLWSFEAT";
const FEATURE_VERSION: u32 = 1;

/// Read one entry's feature file, checking the dimension against the
/// configured `expected_dim`.
pub fn load_video_features(
    manifest: &Manifest,
    entry: &ManifestEntry,
    expected_dim: usize,
) -> Result<VideoFeatures> {
    let path = manifest.feature_path(entry);
    let bytes = std::fs::read(&path)?;
    let matrix = read_feature_matrix(&bytes, &path)?;
    if matrix.cols() != expected_dim {
        return Err(Error::Dimension {
            op: "load_video_features",
            detail: format!(
                "{} has dimension {}, configured dimension is {expected_dim}",
                path.display(),
                matrix.cols()
            ),
        });
    }
    Ok(VideoFeatures {
        video_id: entry.video_id.clone(),
        label: entry.label,
        features: matrix,
        num_frames: entry.num_frames,
    })
}

fn read_feature_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut r = Cursor::new(bytes);
    binio::read_magic(&mut r, FEATURE_MAGIC, path)?;
    let version = binio::read_u32(&mut r, path, "version")?;
    if version != FEATURE_VERSION {
        return Err(binio::format_err(
            path,
            format!("unsupported version {version}, expected {FEATURE_VERSION}"),
        ));
    }
    let m = binio::read_u32(&mut r, path, "segment count")? as usize;
    let d = binio::read_u32(&mut r, path, "dimension")? as usize;
    if m == 0 || d == 0 {
        return Err(binio::format_err(path, format!("degenerate shape {m}x{d}")));
    }
    let values = binio::read_f32_vec(&mut r, m * d, path)?;
    let remaining = bytes.len() as u64 - r.position();
    if remaining != 0 {
        return Err(binio::format_err(
            path,
            format!("{remaining} trailing bytes after payload"),
        ));
    }
    Matrix::from_vec(m, d, values)
}

/// Write segment features (m x d, f64 in memory) as the f32 on-disk format.
pub fn write_feature_file(path: impl AsRef<Path>, features: &Matrix) -> Result<()> {
    let path = path.as_ref();
    binio::atomic_write(path, |buf| {
        buf.extend_from_slice(FEATURE_MAGIC);
        binio::write_u32(buf, FEATURE_VERSION)?;
        binio::write_u32(buf, features.rows() as u32)?;
        binio::write_u32(buf, features.cols() as u32)?;
        binio::write_f32_slice(buf, features.as_slice())?;
        Ok(())
    })
}
