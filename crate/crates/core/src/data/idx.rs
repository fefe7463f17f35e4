//! MNIST IDX container: big-endian `u32` magic, `u32` count, dims, raw `u8` payload.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{NvcError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw IDX image file contents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Reads a whole file, transparently gunzipping names ending in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| NvcError::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends before {what}"),
        })
}

fn check_magic(bytes: &[u8], path: &Path, kind: &'static str, expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0, path, "magic number")?;
    if found != expected {
        return Err(NvcError::BadMagic { kind, found, expected });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let available = bytes.len().saturating_sub(start);
    if available < len {
        return Err(NvcError::Truncated {
            path: path.to_path_buf(),
            detail: format!("expected {len} payload bytes, found {available}"),
        });
    }
    Ok(&bytes[start..start + len])
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, path, "IDX images", IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4, path, "image count")? as usize;
    let rows = be_u32(bytes, 8, path, "row count")? as usize;
    let cols = be_u32(bytes, 12, path, "column count")? as usize;
    let pixels = payload(bytes, 16, count * rows * cols, path)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, path, "IDX labels", LABELS_MAGIC)?;
    let count = be_u32(bytes, 4, path, "label count")? as usize;
    Ok(payload(bytes, 8, count, path)?.to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(&read_maybe_gz(path)?, path)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&read_maybe_gz(path)?, path)
}
