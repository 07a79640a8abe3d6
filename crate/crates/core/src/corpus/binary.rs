//! Raw little-endian component files.

use std::fs;
use std::path::Path;

use super::element::Element;
use crate::error::{GssError, Result};

pub(crate) fn write_elements<T: Element>(path: &Path, values: &[T]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.put_le(&mut buf);
    }
    fs::write(path, buf).map_err(|e| GssError::io(path, e))
}

/// Reads exactly `count` elements; any other file size is an error.
pub(crate) fn read_elements<T: Element>(path: &Path, count: usize, what: &str) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| GssError::io(path, e))?;
    if bytes.len() != count * T::BYTES {
        return Err(GssError::mismatch(
            format!("{what} ({})", path.display()),
            count * T::BYTES,
            bytes.len(),
        ));
    }
    Ok(bytes.chunks_exact(T::BYTES).map(T::get_le).collect())
}

pub(crate) fn write_indices(path: &Path, values: &[usize]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for &v in values {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| GssError::io(path, e))
}

pub(crate) fn read_indices(path: &Path, count: usize, what: &str) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| GssError::io(path, e))?;
    if bytes.len() != count * 8 {
        return Err(GssError::mismatch(
            format!("{what} ({})", path.display()),
            count * 8,
            bytes.len(),
        ));
    }
    bytes
        .chunks_exact(8)
        .map(|c| {
            let v = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            usize::try_from(v).map_err(|_| GssError::InvalidGraph(format!("index {v} overflows")))
        })
        .collect()
}
