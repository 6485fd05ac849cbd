//! Layer descriptions and the spatial kernels (im2col, average pooling) used
//! by the forward and backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> usize {
    1
}

/// A hidden layer in an architecture template.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HiddenSpec {
    /// Convolution followed by LIF neurons and optional average pooling.
    /// Each output channel is one neuron slot.
    Conv2d {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        pool: usize,
    },
    Dense {
        units: usize,
    },
}

/// Input geometry plus hidden layers. Output heads are added per task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub hidden: Vec<HiddenSpec>,
}

impl ArchitectureSpec {
    /// conv(32) → avgpool 2 → conv(64) → avgpool 2 → dense(512).
    pub fn mnist() -> Self {
        ArchitectureSpec {
            input: [1, 28, 28],
            hidden: vec![
                HiddenSpec::Conv2d {
                    channels: 32,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    pool: 2,
                },
                HiddenSpec::Conv2d {
                    channels: 64,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    pool: 2,
                },
                HiddenSpec::Dense { units: 512 },
            ],
        }
    }

    /// Eight 3×3 convolutions in four pooled stages, then one dense layer.
    pub fn cifar() -> Self {
        let conv = |channels, pool| HiddenSpec::Conv2d {
            channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool,
        };
        ArchitectureSpec {
            input: [3, 32, 32],
            hidden: vec![
                conv(64, 1),
                conv(64, 2),
                conv(128, 1),
                conv(128, 2),
                conv(256, 1),
                conv(256, 2),
                conv(512, 1),
                conv(512, 2),
                HiddenSpec::Dense { units: 512 },
            ],
        }
    }

    pub fn input_features(&self) -> usize {
        self.input.iter().product()
    }

    /// Resolves per-layer geometry, rejecting inconsistent templates.
    pub fn resolve(&self) -> Result<Vec<LayerSpec>> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(vec![format!(
                "architecture.input must be positive, got {:?}",
                self.input
            )]));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config(vec![
                "architecture.hidden must contain at least one layer".into(),
            ]));
        }
        if !matches!(self.hidden.last(), Some(HiddenSpec::Dense { .. })) {
            return Err(Error::Config(vec![
                "architecture.hidden must end with a dense layer (heads read dense units)".into(),
            ]));
        }
        let mut specs = Vec::with_capacity(self.hidden.len());
        let (mut slots, mut hh, mut ww) = (c, h, w);
        for (l, hidden) in self.hidden.iter().enumerate() {
            let spec = match *hidden {
                HiddenSpec::Conv2d {
                    channels,
                    kernel,
                    stride,
                    padding,
                    pool,
                } => {
                    if channels == 0 || kernel == 0 || stride == 0 || pool == 0 {
                        return Err(Error::Config(vec![format!(
                            "architecture.hidden[{l}]: channels, kernel, stride and pool must be positive"
                        )]));
                    }
                    if hh + 2 * padding < kernel || ww + 2 * padding < kernel {
                        return Err(Error::Config(vec![format!(
                            "architecture.hidden[{l}]: kernel {kernel} larger than padded input {hh}x{ww}"
                        )]));
                    }
                    let oh = (hh + 2 * padding - kernel) / stride + 1;
                    let ow = (ww + 2 * padding - kernel) / stride + 1;
                    if oh / pool == 0 || ow / pool == 0 {
                        return Err(Error::Config(vec![format!(
                            "architecture.hidden[{l}]: pooling {pool} collapses {oh}x{ow} output"
                        )]));
                    }
                    LayerSpec {
                        kind: LayerKind::Conv2d {
                            kernel,
                            stride,
                            padding,
                        },
                        in_units: slots,
                        out_units: channels,
                        in_hw: (hh, ww),
                        out_hw: (oh, ow),
                        pool,
                    }
                }
                HiddenSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Config(vec![format!(
                            "architecture.hidden[{l}]: units must be positive"
                        )]));
                    }
                    LayerSpec {
                        kind: LayerKind::Dense,
                        in_units: slots,
                        out_units: units,
                        in_hw: (hh, ww),
                        out_hw: (1, 1),
                        pool: 1,
                    }
                }
            };
            (slots, hh, ww) = (spec.out_units, spec.pooled_hw().0, spec.pooled_hw().1);
            specs.push(spec);
        }
        Ok(specs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense,
    OutputHead,
}

/// Resolved geometry of one layer.
///
/// `in_units` counts presynaptic slots (channels for a convolutional
/// predecessor) and `out_units` counts this layer's neuron slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_units: usize,
    pub out_units: usize,
    /// Spatial size of each presynaptic slot.
    pub in_hw: (usize, usize),
    /// Spatial size of each neuron map before pooling.
    pub out_hw: (usize, usize),
    pub pool: usize,
}

impl LayerSpec {
    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. })
    }

    /// Weights per (output slot, input slot) pair.
    pub fn inner(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { kernel, .. } => kernel * kernel,
            LayerKind::Dense | LayerKind::OutputHead => self.in_hw.0 * self.in_hw.1,
        }
    }

    pub fn in_spatial(&self) -> usize {
        self.in_hw.0 * self.in_hw.1
    }

    pub fn out_spatial(&self) -> usize {
        self.out_hw.0 * self.out_hw.1
    }

    pub fn pooled_hw(&self) -> (usize, usize) {
        (self.out_hw.0 / self.pool, self.out_hw.1 / self.pool)
    }

    pub fn pooled_spatial(&self) -> usize {
        let (h, w) = self.pooled_hw();
        h * w
    }

    pub fn weight_count(&self) -> usize {
        self.out_units * self.in_units * self.inner()
    }

    /// Fan multiplier per connected slot on the output side.
    pub(crate) fn fan_out_factor(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { kernel, .. } => kernel * kernel,
            LayerKind::Dense | LayerKind::OutputHead => 1,
        }
    }
}

/// Unfolds `x` (`[channels][batch][h*w]`) into the column matrix
/// `[channels*k*k][batch*oh*ow]`.
pub(crate) fn im2col(x: &[f32], channels: usize, batch: usize, spec: &LayerSpec) -> Vec<f32> {
    let LayerKind::Conv2d {
        kernel,
        stride,
        padding,
    } = spec.kind
    else {
        unreachable!("im2col on a non-convolutional layer")
    };
    let (h, w) = spec.in_hw;
    let (oh, ow) = spec.out_hw;
    let p = oh * ow;
    let n = batch * p;
    let mut col = vec![0.0f32; channels * kernel * kernel * n];
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for b in 0..batch {
                    let plane = &x[(c * batch + b) * h * w..(c * batch + b + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut dst[b * p + oy * ow..b * p + (oy + 1) * ow];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back to `[channels][batch][h*w]`.
pub(crate) fn col2im(col: &[f32], channels: usize, batch: usize, spec: &LayerSpec) -> Vec<f32> {
    let LayerKind::Conv2d {
        kernel,
        stride,
        padding,
    } = spec.kind
    else {
        unreachable!("col2im on a non-convolutional layer")
    };
    let (h, w) = spec.in_hw;
    let (oh, ow) = spec.out_hw;
    let p = oh * ow;
    let n = batch * p;
    let mut x = vec![0.0f32; channels * batch * h * w];
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &col[row * n..(row + 1) * n];
                for b in 0..batch {
                    let plane = &mut x[(c * batch + b) * h * w..(c * batch + b + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += src[b * p + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Non-overlapping average pooling over maps laid out as `[maps][h*w]`.
pub(crate) fn avg_pool(x: &[f32], maps: usize, hw: (usize, usize), k: usize) -> Vec<f32> {
    if k == 1 {
        return x.to_vec();
    }
    let (h, w) = hw;
    let (ph, pw) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f32;
    let mut out = vec![0.0f32; maps * ph * pw];
    for m in 0..maps {
        let src = &x[m * h * w..(m + 1) * h * w];
        let dst = &mut out[m * ph * pw..(m + 1) * ph * pw];
        for py in 0..ph {
            for px in 0..pw {
                let mut s = 0.0f32;
                for dy in 0..k {
                    for dx in 0..k {
                        s += src[(py * k + dy) * w + px * k + dx];
                    }
                }
                dst[py * pw + px] = s * scale;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool`].
pub(crate) fn avg_unpool(g: &[f32], maps: usize, hw: (usize, usize), k: usize) -> Vec<f32> {
    if k == 1 {
        return g.to_vec();
    }
    let (h, w) = hw;
    let (ph, pw) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f32;
    let mut out = vec![0.0f32; maps * h * w];
    for m in 0..maps {
        let src = &g[m * ph * pw..(m + 1) * ph * pw];
        let dst = &mut out[m * h * w..(m + 1) * h * w];
        for py in 0..ph {
            for px in 0..pw {
                let v = src[py * pw + px] * scale;
                for dy in 0..k {
                    for dx in 0..k {
                        dst[(py * k + dy) * w + px * k + dx] = v;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_template_geometry() {
        let specs = ArchitectureSpec::mnist().resolve().unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[0].out_hw, (28, 28));
        assert_eq!(specs[0].pooled_hw(), (14, 14));
        assert_eq!(specs[1].in_units, 32);
        assert_eq!(specs[1].pooled_hw(), (7, 7));
        assert_eq!(specs[2].in_units, 64);
        assert_eq!(specs[2].inner(), 49);
        assert_eq!(specs[2].weight_count(), 512 * 3136);
    }

    #[test]
    fn cifar_template_resolves() {
        let specs = ArchitectureSpec::cifar().resolve().unwrap();
        assert_eq!(specs.iter().filter(|s| s.is_conv()).count(), 8);
        assert_eq!(specs.last().unwrap().inner(), 4);
    }

    #[test]
    fn template_must_end_dense() {
        let arch = ArchitectureSpec {
            input: [1, 8, 8],
            hidden: vec![HiddenSpec::Conv2d {
                channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
                pool: 1,
            }],
        };
        assert!(matches!(arch.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        use rand::{Rng, SeedableRng};
        let spec = LayerSpec {
            kind: LayerKind::Conv2d {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            in_units: 2,
            out_units: 1,
            in_hw: (5, 6),
            out_hw: (3, 3),
            pool: 1,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (c, b) = (2, 3);
        let x: Vec<f32> = (0..c * b * 30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let col = im2col(&x, c, b, &spec);
        let y: Vec<f32> = (0..col.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = col2im(&y, c, b, &spec);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn pooling_pair_is_adjoint() {
        let x: Vec<f32> = (0..32).map(|i| i as f32).collect();
        let p = avg_pool(&x, 2, (4, 4), 2);
        assert_eq!(p.len(), 8);
        assert_eq!(p[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let g = vec![1.0; 8];
        let u = avg_unpool(&g, 2, (4, 4), 2);
        assert!(u.iter().all(|&v| v == 0.25));
    }
}
