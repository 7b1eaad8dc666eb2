//! Middlebury `.flo` optical flow files.
//!
//! Layout, all little-endian: `f32` magic 202021.25 (the bytes `PIEH`),
//! `i32` width, `i32` height, then `width * height` interleaved `(dx, dy)`
//! `f32` pairs in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::warp::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            what: "flo header",
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic { what: "flo" });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            what: "flo header",
            expected: 12,
            found: bytes.len(),
        });
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if w <= 0 || h <= 0 {
        return Err(Error::Parse(format!(
            "flo dimensions {w}x{h} must be positive"
        )));
    }
    let (w, h) = (w as usize, h as usize);
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Parse(format!("flo dimensions {w}x{h} overflow")))?;
    let payload = &bytes[12..];
    if payload.len() < need {
        return Err(Error::Truncated {
            what: "flo payload",
            expected: need,
            found: payload.len(),
        });
    }
    let hw = w * h;
    let mut data = vec![0.0; 2 * hw];
    for (p, pair) in payload[..need].chunks_exact(8).enumerate() {
        data[p] = f32::from_le_bytes(pair[0..4].try_into().expect("4 bytes")) as f64;
        data[hw + p] = f32::from_le_bytes(pair[4..8].try_into().expect("4 bytes")) as f64;
    }
    FlowField::from_tensor(Tensor::new([2, h, w], data)?)
}

/// Values are stored as `f32`.
pub fn encode_flo<W: Write>(flow: &FlowField, mut out: W) -> Result<()> {
    let (h, w) = (flow.height(), flow.width());
    let dims = |v: usize| {
        i32::try_from(v).map_err(|_| Error::invalid(format!("flow dimension {v} exceeds i32")))
    };
    out.write_all(&FLO_MAGIC.to_le_bytes())?;
    out.write_all(&dims(w)?.to_le_bytes())?;
    out.write_all(&dims(h)?.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * w * h);
    for (dx, dy) in flow.dx().iter().zip(flow.dy()) {
        buf.extend_from_slice(&(*dx as f32).to_le_bytes());
        buf.extend_from_slice(&(*dy as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    decode_flo(&fs::read(path).map_err(|e| Error::file(path, e))?)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode_flo(flow, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::file(path, e))
}
