//! `EMG-FEAT v1` feature files.
//!
//! Layout: an ASCII header line `EMG-FEAT v1 <L> <T> <D>\n`, then exactly
//! `L·T·D` little-endian IEEE-754 `f32` values, layer-major, then
//! frame-major, then dimension.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matcher::FeatureStack;

pub const FEATURE_MAGIC: &str = "EMG-FEAT";
pub const FEATURE_VERSION: &str = "v1";

fn err(path: &Path, message: impl Into<String>) -> Error {
    Error::FeatureFile {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses a feature file already in memory. `path` is only used in error
/// messages.
pub fn decode_features(bytes: &[u8], fps: f64, path: &Path) -> Result<FeatureStack> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| err(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| err(path, "header is not ASCII"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 5 || fields[0] != FEATURE_MAGIC || fields[1] != FEATURE_VERSION {
        return Err(err(
            path,
            format!("bad header `{header}`, expected `{FEATURE_MAGIC} {FEATURE_VERSION} <L> <T> <D>`"),
        ));
    }
    let dims: Vec<usize> = fields[2..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(path, format!("bad shape in header `{header}`: {e}")))?;
    let (layers, frames, dim) = (dims[0], dims[1], dims[2]);
    let count = layers
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| err(path, "shape overflows"))?;
    let payload = &bytes[newline + 1..];
    let expected = count * 4;
    if payload.len() != expected {
        let kind = if payload.len() < expected {
            "truncated payload"
        } else {
            "trailing bytes after payload"
        };
        return Err(err(
            path,
            format!("{kind}: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(err(path, format!("non-finite value {} at element {i}", data[i])));
    }
    FeatureStack::new(layers, frames, dim, data, fps).map_err(|e| err(path, e.to_string()))
}

pub fn read_features(path: impl AsRef<Path>, fps: f64) -> Result<FeatureStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| err(path, e.to_string()))?;
    decode_features(&bytes, fps, path)
}

pub fn encode_features(stack: &FeatureStack) -> Vec<u8> {
    let mut out = format!(
        "{FEATURE_MAGIC} {FEATURE_VERSION} {} {} {}\n",
        stack.layers(),
        stack.frames(),
        stack.dim()
    )
    .into_bytes();
    out.reserve(stack.data().len() * 4);
    for v in stack.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_features(path: impl AsRef<Path>, stack: &FeatureStack) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| err(path, e.to_string()))?;
    f.write_all(&encode_features(stack))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn one_element_file() {
        let mut bytes = b"EMG-FEAT v1 1 1 1\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let s = decode_features(&bytes, 1.0, p()).unwrap();
        assert_eq!((s.layers(), s.frames(), s.dim()), (1, 1, 1));
        assert_eq!(s.get(0, 0, 0), 1.0);
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let mut bytes = b"EMG-FEAT v1 1 2 2\n".to_vec();
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let msg = decode_features(&bytes, 1.0, p()).unwrap_err().to_string();
        assert!(msg.contains("truncated") && msg.contains("16") && msg.contains("12"), "{msg}");
    }

    #[test]
    fn header_errors() {
        for bad in [
            &b"EMG-FEAT v2 1 1 1\n"[..],
            b"EMG-FEAT v1 1 1\n",
            b"FEAT v1 1 1 1\n",
            b"EMG-FEAT v1 1 x 1\n",
            b"EMG-FEAT v1 1 1 1",
        ] {
            assert!(decode_features(bad, 1.0, p()).is_err());
        }
    }

    #[test]
    fn rejects_nan_and_trailing_bytes() {
        let mut bytes = b"EMG-FEAT v1 1 1 1\n".to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_features(&bytes, 1.0, p()).is_err());

        let mut bytes = b"EMG-FEAT v1 1 1 1\n".to_vec();
        bytes.extend_from_slice(&[0u8; 5]);
        assert!(decode_features(&bytes, 1.0, p()).unwrap_err().to_string().contains("trailing"));
    }
}
