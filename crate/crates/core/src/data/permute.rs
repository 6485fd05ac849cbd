//! Fixed pixel permutations for permuted-MNIST style task streams.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageDataset;
use crate::error::{Error, Result};

/// `out[p] = in[indices[p]]` over the pixels of one channel plane.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    indices: Vec<u32>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            indices: (0..n as u32).collect(),
        }
    }

    /// Seeded Fisher-Yates shuffle.
    pub fn from_seed(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<u32> = (0..n as u32).collect();
        indices.shuffle(&mut rng);
        Permutation { indices }
    }

    pub fn from_indices(indices: Vec<u32>) -> Result<Self> {
        let mut seen = vec![false; indices.len()];
        for &i in &indices {
            match seen.get_mut(i as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(Error::input(format!("index {i} breaks the permutation"))),
            }
        }
        Ok(Permutation { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn is_identity(&self) -> bool {
        self.indices.iter().enumerate().all(|(i, &j)| i as u32 == j)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0u32; self.indices.len()];
        for (p, &src) in self.indices.iter().enumerate() {
            inv[src as usize] = p as u32;
        }
        Permutation { indices: inv }
    }

    pub fn apply(&self, plane: &[f32], out: &mut [f32]) {
        for (o, &src) in out.iter_mut().zip(&self.indices) {
            *o = plane[src as usize];
        }
    }
}

/// Applies the same permutation to every channel plane of every image.
pub fn permute_pixels(ds: &ImageDataset, perm: &Permutation) -> Result<ImageDataset> {
    let plane = ds.height * ds.width;
    if perm.len() != plane {
        return Err(Error::shape(format!(
            "permutation of {} pixels for {}x{} images",
            perm.len(),
            ds.height,
            ds.width
        )));
    }
    let mut images = vec![0.0f32; ds.images.len()];
    for (src, dst) in ds.images.chunks_exact(plane).zip(images.chunks_exact_mut(plane)) {
        perm.apply(src, dst);
    }
    ImageDataset::new(ds.channels, ds.height, ds.width, images, ds.labels.clone())
}
