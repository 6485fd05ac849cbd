//! Spike encoding of image batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// The analog frame is injected as input current at every step.
    #[default]
    ConstantCurrent,
    /// Each pixel spikes per step with probability equal to its intensity.
    PoissonRate,
}

/// Per-step network input for a batch, `T × B × features`.
///
/// Constant-current batches store the single frame once; [`EncodedBatch::step`]
/// returns it for every `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    batch: usize,
    features: usize,
    t_steps: usize,
    frames: Vec<Vec<f32>>,
}

impl EncodedBatch {
    /// A batch whose frame (`batch × features`, sample-major) is the same at every step.
    pub fn constant(frame: Vec<f32>, batch: usize, t_steps: usize) -> Result<Self> {
        if batch == 0 || t_steps == 0 || frame.is_empty() || frame.len() % batch != 0 {
            return Err(Error::shape(format!(
                "frame of {} values cannot split into {batch} samples",
                frame.len()
            )));
        }
        Ok(EncodedBatch {
            batch,
            features: frame.len() / batch,
            t_steps,
            frames: vec![frame],
        })
    }

    /// A batch with one frame per time step.
    pub fn per_step(frames: Vec<Vec<f32>>, batch: usize) -> Result<Self> {
        let t_steps = frames.len();
        let Some(first) = frames.first() else {
            return Err(Error::shape("no time steps"));
        };
        if batch == 0 || first.is_empty() || first.len() % batch != 0 {
            return Err(Error::shape("frame does not split into samples"));
        }
        if frames.iter().any(|f| f.len() != first.len()) {
            return Err(Error::shape("frames differ in length"));
        }
        Ok(EncodedBatch {
            batch,
            features: first.len() / batch,
            t_steps,
            frames,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    /// True when every step carries the same frame.
    pub fn is_static(&self) -> bool {
        self.frames.len() == 1
    }

    pub fn step(&self, t: usize) -> &[f32] {
        assert!(t < self.t_steps, "step {t} out of range");
        if self.is_static() {
            &self.frames[0]
        } else {
            &self.frames[t]
        }
    }
}

/// Encodes a sample-major batch (`batch × features`, values in `[0, 1]`).
pub fn encode(
    frame: &[f32],
    batch: usize,
    mode: EncodingMode,
    t_steps: usize,
    seed: u64,
) -> Result<EncodedBatch> {
    match mode {
        EncodingMode::ConstantCurrent => EncodedBatch::constant(frame.to_vec(), batch, t_steps),
        EncodingMode::PoissonRate => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames = (0..t_steps)
                .map(|_| {
                    frame
                        .iter()
                        .map(|&p| {
                            if rng.gen::<f32>() < p {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            EncodedBatch::per_step(frames, batch)
        }
    }
}
