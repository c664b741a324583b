//! Middlebury `.flo` optical-flow files.
//!
//! Layout: the float 202021.25 as a sanity tag, then width and height as
//! little-endian i32, then h×w×(u,v) float32 pairs in row-major order. We
//! surface the field as (2,H,W) with channel 0 the x displacement.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array3;

use crate::elem::{c, Elem};
use crate::error::{Error, Result};

const MAGIC: f32 = 202021.25;

pub fn load_flow<F: Elem>(path: &Path) -> Result<Array3<F>> {
    let bytes = fs::read(path).map_err(|e| Error::bad_file(path, &format!("read: {e}")))?;
    if bytes.len() < 12 {
        return Err(Error::bad_file(path, "shorter than the 12-byte flow header"));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(Error::bad_file(path, &format!("bad flow magic {magic}, want {MAGIC}")));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(Error::bad_file(path, &format!("non-positive flow size {w}×{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expect = 12 + h * w * 2 * 4;
    if bytes.len() != expect {
        return Err(Error::bad_file(path, &format!("{} bytes, want {expect} for {w}×{h}", bytes.len())));
    }
    let mut flow = Array3::zeros((2, h, w));
    let mut off = 12;
    for y in 0..h {
        for x in 0..w {
            let u = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            let v = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
            if !u.is_finite() || !v.is_finite() {
                return Err(Error::bad_file(path, &format!("non-finite flow vector at ({x},{y})")));
            }
            flow[[0, y, x]] = c::<F>(u as f64);
            flow[[1, y, x]] = c::<F>(v as f64);
            off += 8;
        }
    }
    Ok(flow)
}

pub fn write_flow<F: Elem>(flow: &Array3<F>, path: &Path) -> Result<()> {
    let (ch, h, w) = flow.dim();
    if ch != 2 {
        return Err(Error::shape("(2,H,W) flow", format!("{:?}", flow.dim())));
    }
    let mut buf = Vec::with_capacity(12 + h * w * 8);
    buf.extend_from_slice(&MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            buf.extend_from_slice(&(flow[[0, y, x]].to_f64_() as f32).to_le_bytes());
            buf.extend_from_slice(&(flow[[1, y, x]].to_f64_() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::bad_file(path, &format!("create: {e}")))?;
    f.write_all(&buf).map_err(|e| Error::bad_file(path, &format!("write: {e}")))?;
    Ok(())
}
