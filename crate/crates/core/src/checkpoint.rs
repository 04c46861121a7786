//! Checkpoint file format.
//!
//! Little-endian binary: magic `CLWSCKPT`, version u32 = 1, dims (d, z1,
//! z2) as u32 each, then every parameter tensor as f64 values in
//! [`PARAM_NAMES`](crate::model::PARAM_NAMES) order, then the optimizer's
//! squared-gradient averages in the same layout, then the iteration counter
//! as u64. Writes are atomic (temp file + rename).

use std::io::Cursor;
use std::path::Path;

use crate::binio;
use crate::error::Result;
use crate::model::{ClawsParams, ModelDims};
use crate::tensor::Matrix;
use crate::trainer::OptState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLWSCKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ClawsParams, opt: &OptState) -> Result<()> {
    let dims = params.dims();
    binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        binio::write_u32(buf, CHECKPOINT_VERSION)?;
        binio::write_u32(buf, dims.d as u32)?;
        binio::write_u32(buf, dims.z1 as u32)?;
        binio::write_u32(buf, dims.z2 as u32)?;
        for field in params.fields() {
            binio::write_f64_slice(buf, field.as_slice())?;
        }
        for v in &opt.v {
            binio::write_f64_slice(buf, v.as_slice())?;
        }
        binio::write_u64(buf, opt.iteration)?;
        Ok(())
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ClawsParams, OptState)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let mut r = Cursor::new(bytes.as_slice());
    binio::read_magic(&mut r, CHECKPOINT_MAGIC, path)?;
    let version = binio::read_u32(&mut r, path, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(binio::format_err(
            path,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let dims = ModelDims {
        d: binio::read_u32(&mut r, path, "d")? as usize,
        z1: binio::read_u32(&mut r, path, "z1")? as usize,
        z2: binio::read_u32(&mut r, path, "z2")? as usize,
    };
    dims.validate()
        .map_err(|e| binio::format_err(path, e.to_string()))?;

    let read_tensors = |r: &mut Cursor<&[u8]>| -> Result<Vec<Matrix>> {
        dims.field_shapes()
            .iter()
            .map(|&(rows, cols)| {
                let data = binio::read_f64_vec(r, rows * cols, path)?;
                Matrix::from_vec(rows, cols, data)
            })
            .collect()
    };
    let params = ClawsParams::from_fields(dims, read_tensors(&mut r)?)?;
    let v = read_tensors(&mut r)?;
    let iteration = binio::read_u64(&mut r, path, "iteration")?;
    let remaining = bytes.len() as u64 - r.position();
    if remaining != 0 {
        return Err(binio::format_err(
            path,
            format!("{remaining} trailing bytes after checkpoint payload"),
        ));
    }
    Ok((params, OptState { v, iteration }))
}
