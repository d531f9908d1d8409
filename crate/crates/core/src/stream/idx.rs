//! IDX container reader/writer (the MNIST file format).
//!
//! Layout: a big-endian `u32` magic whose low byte is the number of
//! dimensions and whose third byte is the element type (`0x08` = unsigned
//! byte), followed by one big-endian `u32` per dimension and the raw payload.
//! Files starting with the gzip signature `1F 8B` are decompressed first.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw IDX contents: dimensions and unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1F, 0x8B]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, 0, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an IDX file, insisting on `expected_magic`. Offsets in errors
/// refer to the (decompressed) IDX byte stream.
pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxFile> {
    let bytes = read_bytes(path)?;
    parse_idx(path, &bytes, expected_magic)
}

pub(crate) fn parse_idx(path: &Path, bytes: &[u8], expected_magic: u32) -> Result<IdxFile> {
    let word = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| format_err(path, offset as u64, "truncated header"))
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(format_err(
            path,
            0,
            format!("magic number {magic:#010x}, expected {expected_magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xFF) as usize;
    let dims = (0..ndims)
        .map(|i| word(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < expected {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("truncated payload: {available} of {expected} bytes"),
        ));
    }
    if available > expected {
        return Err(format_err(
            path,
            (header + expected) as u64,
            format!("{} trailing bytes after payload", available - expected),
        ));
    }
    Ok(IdxFile {
        magic,
        dims,
        payload: bytes[header..].to_vec(),
    })
}

/// Serialises an IDX file (uncompressed).
pub fn write_idx<W: Write>(mut w: W, file: &IdxFile) -> Result<()> {
    w.write_all(&file.magic.to_be_bytes())?;
    for &d in &file.dims {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    w.write_all(&file.payload)?;
    Ok(())
}

/// Loads an image/label IDX pair. Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_idx(images_path, IMAGES_MAGIC)?;
    let labels = read_idx(labels_path, LABELS_MAGIC)?;
    let count = images.dims[0];
    if labels.dims[0] != count {
        return Err(format_err(
            labels_path,
            4,
            format!(
                "label count {} does not match image count {count} in {}",
                labels.dims[0],
                images_path.display()
            ),
        ));
    }
    if count == 0 {
        return Err(format_err(images_path, 4, "empty image file"));
    }
    let sample_shape = images.dims[1..].to_vec();
    let d: usize = sample_shape.iter().product();
    let pixels: Vec<f64> = images.payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let inputs = Matrix::from_vec(count, d, pixels)?;
    let labels: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, num_classes, sample_shape)
}

/// Inverse of [`load_idx`] for byte-valued data: `(images, labels)` files.
pub fn dataset_to_idx(ds: &Dataset) -> Result<(IdxFile, IdxFile)> {
    let mut payload = Vec::with_capacity(ds.inputs().as_slice().len());
    for &x in ds.inputs().as_slice() {
        let b = (x * 255.0).round();
        if !(0.0..=255.0).contains(&b) {
            return Err(Error::usage(format!("pixel value {x} not representable")));
        }
        payload.push(b as u8);
    }
    let mut dims = vec![ds.len()];
    dims.extend_from_slice(ds.sample_shape());
    let labels = ds
        .labels()
        .iter()
        .map(|&y| u8::try_from(y).map_err(|_| Error::usage(format!("label {y} exceeds a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    Ok((
        IdxFile {
            magic: IMAGES_MAGIC,
            dims,
            payload,
        },
        IdxFile {
            magic: LABELS_MAGIC,
            dims: vec![ds.len()],
            payload: labels,
        },
    ))
}
