//! IDX container format (MNIST).
//!
//! Images: magic `0x00000803`, then big-endian `u32` count, rows, cols and
//! `count * rows * cols` pixel bytes. Labels: magic `0x00000801`, count, then
//! one byte per label.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn ingest_err(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| ingest_err(path, bytes.len() as u64, "file truncated inside header"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ingest_err(path, 0, format!("cannot read file: {e}")))
}

/// Returns `(rows, cols, pixels)` with one byte per pixel.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(ingest_err(path, 0, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = read_u32(&bytes, 4, path)? as usize;
    let rows = read_u32(&bytes, 8, path)? as usize;
    let cols = read_u32(&bytes, 12, path)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(ingest_err(
            path,
            bytes.len() as u64,
            format!("file truncated: header declares {count} images of {rows}x{cols} ({needed} bytes)"),
        ));
    }
    if bytes.len() > needed {
        return Err(ingest_err(path, needed as u64, "trailing bytes after declared images"));
    }
    Ok((rows, cols, bytes[16..].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(ingest_err(path, 0, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = read_u32(&bytes, 4, path)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(ingest_err(
            path,
            bytes.len() as u64,
            format!("file truncated: header declares {count} labels"),
        ));
    }
    if bytes.len() > needed {
        return Err(ingest_err(path, needed as u64, "trailing bytes after declared labels"));
    }
    Ok(bytes[8..].to_vec())
}

/// Loads an image/label file pair, scaling pixel bytes by 1/255.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<ImageDataset> {
    let (rows, cols, pixels) = read_idx_images(images)?;
    let label_bytes = read_idx_labels(labels)?;
    let count = if rows * cols == 0 { 0 } else { pixels.len() / (rows * cols) };
    if label_bytes.len() != count {
        return Err(ingest_err(
            labels,
            4,
            format!("{} labels but {} declares {count} images", label_bytes.len(), images.display()),
        ));
    }
    let scaled = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    ImageDataset::new(1, rows, cols, scaled, label_bytes.iter().map(|&y| y as usize).collect())
}

/// Loads `(train, test)` from a directory holding the four standard MNIST files.
pub fn load_mnist_dir(dir: &Path) -> Result<(ImageDataset, ImageDataset)> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let count = pixels.len() / (rows * cols);
    let mut f = fs::File::create(path)?;
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}
