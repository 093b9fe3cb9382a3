//! On-disk formats: the `TNSR` tensor container and binary PGM frame dumps.
//!
//! `TNSR` layout, all integers little-endian:
//!
//! | bytes | field                         |
//! |-------|-------------------------------|
//! | 4     | magic `"TNSR"`                |
//! | 2     | version, `u16` = 1            |
//! | 1     | dtype code, `u8` = 0 (f32)    |
//! | 1     | rank, `u8` = 4                |
//! | 16    | shape, four `u32`             |
//! | 4·n   | payload, little-endian `f32`  |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

pub const MAGIC: [u8; 4] = *b"TNSR";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 24;

pub fn encode_tensor(t: &Tensor4) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(4);
    for d in t.dims() {
        // Shapes beyond u32 cannot be produced by this crate's constructors in practice.
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    if bytes[6] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[6]));
    }
    if bytes[7] != 4 {
        return Err(Error::UnsupportedRank(bytes[7]));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let o = 8 + 4 * i;
        *d = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    }
    let shape = Shape::from_dims(dims)?;
    let needed = HEADER_LEN + 4 * shape.numel();
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::TrailingBytes {
            found: bytes.len() - needed,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor4::from_vec(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor4) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Maps one (frame, channel) plane to 8-bit grey levels.
///
/// Values are stretched linearly from the plane's `[min, max]` onto
/// `[0, 255]` with rounding; a constant plane maps to 128.
pub fn plane_to_gray(t: &Tensor4, frame: usize, channel: usize) -> Result<Vec<u8>> {
    let s = t.shape();
    if frame >= s.frames || channel >= s.channels {
        return Err(Error::IndexOutOfRange {
            index: vec![frame, channel],
            shape: s.dims().to_vec(),
        });
    }
    let start = s.offset(frame, channel, 0, 0);
    let plane = &t.data()[start..start + s.plane_len()];
    let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if hi == lo {
        return Ok(vec![128; plane.len()]);
    }
    let range = hi as f64 - lo as f64;
    Ok(plane
        .iter()
        .map(|&v| (255.0 * (v as f64 - lo as f64) / range).round().clamp(0.0, 255.0) as u8)
        .collect())
}

pub fn encode_pgm(t: &Tensor4, frame: usize, channel: usize) -> Result<Vec<u8>> {
    let pixels = plane_to_gray(t, frame, channel)?;
    let s = t.shape();
    let mut out = format!("P5\n{} {}\n255\n", s.width, s.height).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn write_frame_pgm(path: impl AsRef<Path>, t: &Tensor4, frame: usize, channel: usize) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(t, frame, channel)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
