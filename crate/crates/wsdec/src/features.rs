//! Per-video feature files: the magic bytes `WSDC`, a little-endian `u32`
//! version (1), `u32` step count, `u32` feature dimension, then the values as
//! row-major little-endian `f32`.

use std::fs;
use std::path::Path;

use wsdec_core::data::VideoFeatures;
use wsdec_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WSDC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// File name of a video's features inside a feature directory.
pub fn file_name(video_id: &str) -> String {
    format!("{video_id}.wsdc")
}

pub fn encode(values: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(values.cols() as u32).to_le_bytes());
    for &v in values.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a WSDC feature file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (steps, dim) = (word(8) as usize, word(12) as usize);
    let expected = steps
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "size overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("{steps} x {dim} values need {expected} bytes, found {}", payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Tensor::from_vec(steps, dim, data))
}

pub fn write(path: &Path, values: &Tensor) -> Result<()> {
    fs::write(path, encode(values)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, duration: f64) -> Result<VideoFeatures> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(VideoFeatures::new(decode(&bytes, path)?, duration)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_f32_exact() {
        let t = Tensor::from_vec(2, 3, vec![0.5, -1.25, 3.0, 1e-3, 7.0, -0.0]);
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"WSDC");
        assert_eq!(bytes.len(), 16 + 24);
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!((back.rows(), back.cols()), (2, 3));
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn rejects_bad_headers_and_lengths() {
        let t = Tensor::from_vec(2, 2, vec![1.0; 4]);
        let mut bytes = encode(&t);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        bytes[4] = 2;
        assert!(decode(&bytes, Path::new("x")).is_err());
        assert!(decode(b"WSD", Path::new("x")).is_err());
    }
}
