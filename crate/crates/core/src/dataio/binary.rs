//! zlib-compressed raster containers.
//!
//! `HHT1` height raster: `b"HHT1"`, width u32 LE, height u32 LE, then a zlib
//! stream of `width * height` f32 LE values, row-major.
//!
//! `SMP1` score map: `b"SMP1"`, width u32 LE, height u32 LE, classes u8, then
//! a zlib stream of `classes` row-major f32 LE planes.

use std::io::Write;

use flate2::write::ZlibEncoder;
use flate2::{Compression, Decompress, FlushDecompress, Status};

use super::DataError;
use crate::raster::Raster;
use crate::scoremap::ScoreMap;

pub const HHT_MAGIC: &[u8; 4] = b"HHT1";
pub const SMP_MAGIC: &[u8; 4] = b"SMP1";

/// Per-pixel sums further than this from 1 are renormalized on read.
pub const SCORE_SUM_EXACT: f64 = 1e-4;
/// Per-pixel sums further than this from 1 are rejected.
pub const SCORE_SUM_REJECT: f64 = 1e-2;

fn compress(values: impl Iterator<Item = f32>) -> Vec<u8> {
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
    let mut buf = Vec::with_capacity(64 * 1024);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 64 * 1024 {
            enc.write_all(&buf).expect("in-memory write");
            buf.clear();
        }
    }
    enc.write_all(&buf).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

/// Deflate cannot expand data by more than about 1032:1.
const MAX_ZLIB_RATIO: u64 = 1040;

fn decompress(stream: &[u8], expected: u64) -> Result<Vec<f32>, DataError> {
    if expected > (stream.len() as u64 + 16) * MAX_ZLIB_RATIO {
        return Err(DataError::Format(format!(
            "header claims {expected} payload bytes from a {}-byte stream",
            stream.len()
        )));
    }
    let mut out = Vec::with_capacity(expected as usize + 1);
    let mut z = Decompress::new(true);
    let status = z
        .decompress_vec(stream, &mut out, FlushDecompress::Finish)
        .map_err(|e| DataError::Format(format!("zlib payload: {e}")))?;
    if status != Status::StreamEnd {
        return Err(DataError::Format(format!(
            "zlib payload ends early or exceeds {expected} bytes"
        )));
    }
    if z.total_in() != stream.len() as u64 {
        return Err(DataError::Format(format!(
            "{} trailing bytes after the zlib payload",
            stream.len() as u64 - z.total_in()
        )));
    }
    if out.len() as u64 != expected {
        return Err(DataError::Format(format!(
            "payload is {} bytes, expected {expected}",
            out.len()
        )));
    }
    Ok(out
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn header<'a>(bytes: &'a [u8], magic: &[u8; 4], extra: usize) -> Result<(u32, u32, &'a [u8]), DataError> {
    let need = 12 + extra;
    if bytes.len() < need {
        return Err(DataError::Truncated {
            needed: need,
            got: bytes.len(),
        });
    }
    if &bytes[..4] != magic {
        return Err(DataError::Magic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: bytes[..4].to_vec(),
        });
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    Ok((w, h, &bytes[12..]))
}

pub fn encode_hht(raster: &Raster<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HHT_MAGIC);
    out.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    out.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    out.extend(compress(raster.as_slice().iter().copied()));
    out
}

pub fn decode_hht(bytes: &[u8]) -> Result<Raster<f32>, DataError> {
    let (w, h, rest) = header(bytes, HHT_MAGIC, 0)?;
    let n = w as u64 * h as u64;
    let values = decompress(rest, 4 * n)?;
    if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DataError::Format(format!(
            "height value {} at pixel {i} is not finite and non-negative",
            values[i]
        )));
    }
    Ok(Raster::from_vec(w as usize, h as usize, values).expect("length checked"))
}

pub fn encode_smp(map: &ScoreMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SMP_MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.push(u8::try_from(map.n_classes()).expect("at most 255 classes"));
    out.extend(compress(map.as_slice().iter().copied()));
    out
}

/// Decodes and checks per-pixel sums: within 1e-4 of one the map is kept
/// as stored, within 1e-2 it is renormalized, otherwise rejected.
pub fn decode_smp(bytes: &[u8]) -> Result<ScoreMap, DataError> {
    let (w, h, rest) = header(bytes, SMP_MAGIC, 1)?;
    let c = rest[0] as usize;
    if c == 0 {
        return Err(DataError::Format("score map declares zero classes".into()));
    }
    let n = w as u64 * h as u64;
    let values = decompress(&rest[1..], 4 * n * c as u64)?;
    if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DataError::Format(format!(
            "score {} at index {i} is not finite and non-negative",
            values[i]
        )));
    }
    let mut map = ScoreMap::from_planes(w as usize, h as usize, c, values)
        .ok_or_else(|| DataError::Format("score map shape".into()))?;
    let n = n as usize;
    for p in 0..n {
        let sum: f64 = (0..c).map(|k| map.score(k, p) as f64).sum();
        let dev = (sum - 1.0).abs();
        if dev > SCORE_SUM_REJECT {
            return Err(DataError::ScoreSum { pixel: p, sum });
        }
        if dev > SCORE_SUM_EXACT {
            let data = map.as_mut_slice();
            for k in 0..c {
                data[k * n + p] = (data[k * n + p] as f64 / sum) as f32;
            }
        }
    }
    Ok(map)
}
