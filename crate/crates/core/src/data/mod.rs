//! Dataset ingestion and preparation.

mod cifar;
mod encode;
mod idx;
mod permute;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cifar::{load_cifar100_bin, load_cifar100_dir};
pub use encode::{encode, EncodedBatch, EncodingMode};
pub use idx::{load_mnist_dir, load_mnist_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use permute::{permute_pixels, Permutation};

use crate::error::{Error, Result};

/// Environment variable naming the dataset root.
pub const DATA_ENV: &str = "DSDSNN_DATA";

/// Images scaled to `[0, 1]`, stored `N × C × H × W`, with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl ImageDataset {
    pub fn new(channels: usize, height: usize, width: usize, images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let features = channels * height * width;
        if features == 0 || images.len() != labels.len() * features {
            return Err(Error::shape(format!(
                "{} image values do not match {} labels of {channels}x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        Ok(ImageDataset {
            channels,
            height,
            width,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let f = self.features();
        &self.images[i * f..(i + 1) * f]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> ImageDataset {
        let f = self.features();
        let mut images = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        ImageDataset {
            channels: self.channels,
            height: self.height,
            width: self.width,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Deterministic uniform subset of `n` samples (all of them if `n >= len`),
    /// kept in original order.
    pub fn sample_subset(&self, n: usize, seed: u64) -> ImageDataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }

    /// Gathers samples into a sample-major frame plus labels.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let f = self.features();
        let mut frame = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            frame.extend_from_slice(self.image(i));
        }
        (frame, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Splits by disjoint class subsets; labels are remapped to positions within
/// each subset.
pub fn split_by_class(ds: &ImageDataset, subsets: &[Vec<usize>]) -> Result<Vec<ImageDataset>> {
    let mut owner = std::collections::HashMap::new();
    for (t, subset) in subsets.iter().enumerate() {
        if subset.is_empty() {
            return Err(Error::input(format!("class subset {t} is empty")));
        }
        for &c in subset {
            if let Some(prev) = owner.insert(c, t) {
                return Err(Error::input(format!("class {c} appears in subsets {prev} and {t}")));
            }
        }
    }
    Ok(subsets
        .iter()
        .map(|subset| {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| subset.contains(&ds.labels[i])).collect();
            let mut part = ds.subset(&idx);
            for y in &mut part.labels {
                *y = subset.iter().position(|c| c == y).expect("filtered");
            }
            part
        })
        .collect())
}

/// Event-stream (N-MNIST) ingestion is not supported.
pub fn load_nmnist(path: &Path) -> Result<ImageDataset> {
    Err(Error::Unsupported(format!(
        "{}: neuromorphic event-stream datasets are not supported",
        path.display()
    )))
}

/// Dataset root: explicit path, else `$DSDSNN_DATA`, else `./data`.
pub fn resolve_data_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("data"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, classes: usize) -> ImageDataset {
        let images = (0..n * 4).map(|i| (i % 7) as f32 / 7.0).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        ImageDataset::new(1, 2, 2, images, labels).unwrap()
    }

    #[test]
    fn ten_way_split_of_hundred_classes() {
        let ds = toy(1000, 100);
        let subsets: Vec<Vec<usize>> = (0..10).map(|t| (t * 10..t * 10 + 10).collect()).collect();
        let parts = split_by_class(&ds, &subsets).unwrap();
        assert_eq!(parts.len(), 10);
        for p in &parts {
            assert_eq!(p.len(), 100);
            assert!(p.labels.iter().all(|&y| y < 10));
            assert_eq!(p.num_classes(), 10);
        }
        let twenty: Vec<Vec<usize>> = (0..20).map(|t| (t * 5..t * 5 + 5).collect()).collect();
        let parts = split_by_class(&ds, &twenty).unwrap();
        assert_eq!(parts.len(), 20);
        assert!(parts.iter().all(|p| p.num_classes() == 5));
    }

    #[test]
    fn overlapping_split_is_rejected() {
        let ds = toy(10, 5);
        assert!(matches!(split_by_class(&ds, &[vec![0, 1], vec![1, 2]]), Err(Error::Input(_))));
    }

    #[test]
    fn seeded_subset_is_deterministic() {
        let ds = toy(500, 10);
        let a = ds.sample_subset(100, 3);
        let b = ds.sample_subset(100, 3);
        let c = ds.sample_subset(100, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 100);
    }

    #[test]
    fn nmnist_is_unsupported() {
        assert!(matches!(load_nmnist(Path::new("x")), Err(Error::Unsupported(_))));
    }
}
