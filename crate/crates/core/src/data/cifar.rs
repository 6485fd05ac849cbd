//! CIFAR-100 binary format: each record is a coarse label byte, a fine label
//! byte and 3072 pixel bytes (three 32x32 planes, R, G, B).

use std::fs;
use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};

const RECORD: usize = 2 + 3 * 32 * 32;

/// Loads one binary file using the fine (100-way) labels.
pub fn load_cifar100_bin(path: &Path) -> Result<ImageDataset> {
    let bytes = fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        offset: 0,
        reason: format!("cannot read file: {e}"),
    })?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % RECORD) as u64,
            reason: format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
        });
    }
    let n = bytes.len() / RECORD;
    let mut images = Vec::with_capacity(n * (RECORD - 2));
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let fine = rec[1] as usize;
        if fine >= 100 {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                offset: (r * RECORD + 1) as u64,
                reason: format!("fine label {fine} out of range"),
            });
        }
        labels.push(fine);
        images.extend(rec[2..].iter().map(|&p| p as f32 / 255.0));
    }
    ImageDataset::new(3, 32, 32, images, labels)
}

/// Loads `(train, test)` from a directory with `train.bin` and `test.bin`.
pub fn load_cifar100_dir(dir: &Path) -> Result<(ImageDataset, ImageDataset)> {
    Ok((load_cifar100_bin(&dir.join("train.bin"))?, load_cifar100_bin(&dir.join("test.bin"))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_fine_labels_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.bin");
        let mut bytes = Vec::new();
        for k in 0..3u8 {
            bytes.push(k);
            bytes.push(k * 30);
            bytes.extend(std::iter::repeat(k * 100).take(3072));
        }
        fs::write(&p, &bytes).unwrap();
        let ds = load_cifar100_bin(&p).unwrap();
        assert_eq!(ds.labels, vec![0, 30, 60]);
        assert_eq!((ds.channels, ds.height, ds.width), (3, 32, 32));
        assert_eq!(ds.image(2)[0], 200.0 / 255.0);
        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_cifar100_bin(&p), Err(Error::Ingestion { offset, .. }) if offset == 2 * RECORD as u64));
    }
}
