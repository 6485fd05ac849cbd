//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use dsd_snn::snn::{LayerKind, SpikingNetwork};
use dsd_snn::structure::SlotStatus;

/// Double-precision copy of every weight in the network.
#[derive(Clone, Debug)]
pub struct RefWeights {
    pub layers: Vec<Vec<f64>>,
    pub heads: Vec<Vec<f64>>,
}

impl RefWeights {
    pub fn of(net: &SpikingNetwork) -> Self {
        RefWeights {
            layers: net
                .layers()
                .iter()
                .map(|l| l.weights().iter().map(|&w| w as f64).collect())
                .collect(),
            heads: net
                .heads()
                .iter()
                .map(|h| h.weights().iter().map(|&w| w as f64).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RefLif {
    pub tau: f64,
    pub v_th: f64,
    pub lambda: f64,
    pub t_steps: usize,
}

impl RefLif {
    /// Integral of the triangular surrogate, clamped at 0 and 1.
    pub fn soft_spike(&self, u: f64) -> f64 {
        let d = u - self.v_th;
        let w = 1.0 / self.lambda;
        if d <= -w {
            0.0
        } else if d >= w {
            1.0
        } else if d <= 0.0 {
            (1.0 + self.lambda * d).powi(2) / 2.0
        } else {
            1.0 - (1.0 - self.lambda * d).powi(2) / 2.0
        }
    }
}

/// Straight-loop forward pass of the smoothed network for one sample
/// (`x` is `C × H × W`). Returns the rates of head `head`.
pub fn reference_rates(net: &SpikingNetwork, w: &RefWeights, x: &[f64], head: usize, lif: RefLif) -> Vec<f64> {
    let [c0, h0, w0] = net.architecture().input;
    // maps[slot][y][x]; constant input.
    let input: Vec<Vec<f64>> = (0..c0).map(|c| x[c * h0 * w0..(c + 1) * h0 * w0].to_vec()).collect();
    let mut in_hw = (h0, w0);
    let mut in_active: Vec<bool> = vec![true; c0];
    // Spike maps per step, recomputed layer by layer.
    let mut steps: Vec<Vec<Vec<f64>>> = vec![input; lif.t_steps];
    for (l, layer) in net.layers().iter().enumerate() {
        let spec = layer.spec();
        let (oh, ow) = spec.out_hw;
        let out_units = spec.out_units;
        let inner = spec.inner();
        let active: Vec<bool> = (0..out_units)
            .map(|o| layer.pool().status(o) != SlotStatus::Empty)
            .collect();
        let mut u = vec![vec![0.0f64; oh * ow]; out_units];
        let mut o_prev = vec![vec![0.0f64; oh * ow]; out_units];
        let mut new_steps = Vec::with_capacity(lif.t_steps);
        for t in 0..lif.t_steps {
            let x_t = &steps[t];
            let mut pooled_out = vec![Vec::new(); out_units];
            for o in 0..out_units {
                if !active[o] {
                    pooled_out[o] = vec![0.0; spec.pooled_spatial()];
                    continue;
                }
                let mut spikes = vec![0.0f64; oh * ow];
                for p in 0..oh * ow {
                    let (py, px) = (p / ow, p % ow);
                    let mut cur = 0.0;
                    for i in 0..spec.in_units {
                        if !in_active[i] {
                            continue;
                        }
                        let base = (o * spec.in_units + i) * inner;
                        match spec.kind {
                            LayerKind::Conv2d {
                                kernel,
                                stride,
                                padding,
                            } => {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (py * stride + ky) as isize - padding as isize;
                                        let ix = (px * stride + kx) as isize - padding as isize;
                                        if iy < 0 || ix < 0 || iy >= in_hw.0 as isize || ix >= in_hw.1 as isize {
                                            continue;
                                        }
                                        cur += w.layers[l][base + ky * kernel + kx]
                                            * x_t[i][iy as usize * in_hw.1 + ix as usize];
                                    }
                                }
                            }
                            _ => {
                                for q in 0..inner {
                                    cur += w.layers[l][base + q] * x_t[i][q];
                                }
                            }
                        }
                    }
                    let un = lif.tau * u[o][p] * (1.0 - o_prev[o][p]) + cur;
                    u[o][p] = un;
                    let s = lif.soft_spike(un);
                    o_prev[o][p] = s;
                    spikes[p] = s;
                }
                let k = spec.pool;
                let (ph, pw) = spec.pooled_hw();
                let mut pooled = vec![0.0f64; ph * pw];
                for y in 0..ph {
                    for xx in 0..pw {
                        let mut acc = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                acc += spikes[(y * k + dy) * ow + xx * k + dx];
                            }
                        }
                        pooled[y * pw + xx] = acc / (k * k) as f64;
                    }
                }
                pooled_out[o] = pooled;
            }
            new_steps.push(pooled_out);
        }
        steps = new_steps;
        in_hw = spec.pooled_hw();
        in_active = active;
    }
    let hd = &net.heads()[head];
    let classes = hd.classes();
    let units = hd.in_units();
    let mut u = vec![0.0f64; classes];
    let mut o_prev = vec![0.0f64; classes];
    let mut counts = vec![0.0f64; classes];
    for t in 0..lif.t_steps {
        for c in 0..classes {
            let mut cur = 0.0;
            for i in 0..units {
                if in_active[i] {
                    cur += w.heads[head][c * units + i] * steps[t][i][0];
                }
            }
            let un = lif.tau * u[c] * (1.0 - o_prev[c]) + cur;
            u[c] = un;
            let s = lif.soft_spike(un);
            o_prev[c] = s;
            counts[c] += s;
        }
    }
    counts.iter().map(|c| c / lif.t_steps as f64).collect()
}

/// Mean softmax cross-entropy of `scale * rates` over a batch.
pub fn reference_loss(
    net: &SpikingNetwork,
    w: &RefWeights,
    xs: &[Vec<f64>],
    labels: &[usize],
    head: usize,
    lif: RefLif,
    scale: f64,
) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(labels) {
        let r = reference_rates(net, w, x, head, lif);
        let z: Vec<f64> = r.iter().map(|v| v * scale).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / xs.len() as f64
}

/// Reference pruning-score recurrence: `P_0 = 5`, then per epoch `e`
/// `P ← 0.99 P + exp(-e / eta) (2 s_e - rho)`. Returns the trajectory up to and
/// including the first negative value.
pub fn reference_scores(norm_s: &[f64], rho: f64, eta: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut p = 5.0f64;
    for (e, &s) in norm_s.iter().enumerate() {
        p = 0.99 * p + (-(e as f64) / eta).exp() * (2.0 * s - rho);
        out.push(p);
        if p < 0.0 {
            break;
        }
    }
    out
}

pub mod gradcheck {
    use super::*;
    use dsd_snn::data::EncodedBatch;
    use dsd_snn::snn::{
        cross_entropy_on_rates, ArchitectureSpec, ConnectivityMask, Gradients, HiddenSpec, LifParams, SpikeFn,
    };
    use dsd_snn::structure::{add_output_head, freeze_task, grow_for_task, wire_new_neurons, HeadInit, PruningState, WiringMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const MAX_WEIGHTS: usize = 200;

    /// Worst relative error between analytic and central-difference
    /// gradients, plus the number of coordinates compared.
    #[derive(Debug, Clone, Copy)]
    pub struct Outcome {
        pub max_rel_err: f64,
        pub coords: usize,
        /// Coordinates whose numeric gradient exceeds `1e-6` in magnitude.
        pub nonzero: usize,
        /// `max_i |a_i - n_i| / max_i |n_i|` over the whole gradient vector.
        pub norm_rel_err: f64,
    }

    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(floor)
    }

    fn random_arch(rng: &mut ChaCha8Rng) -> ArchitectureSpec {
        loop {
            let conv = rng.gen_bool(0.5);
            let arch = if conv {
                ArchitectureSpec {
                    input: [rng.gen_range(1..=2), 4, 4],
                    hidden: vec![
                        HiddenSpec::Conv2d {
                            channels: rng.gen_range(2..=3),
                            kernel: rng.gen_range(2..=3),
                            stride: 1,
                            padding: rng.gen_range(0..=1),
                            pool: rng.gen_range(1..=2),
                        },
                        HiddenSpec::Dense {
                            units: rng.gen_range(2..=4),
                        },
                    ],
                }
            } else {
                ArchitectureSpec {
                    input: [1, rng.gen_range(2..=4), rng.gen_range(2..=4)],
                    hidden: vec![
                        HiddenSpec::Dense {
                            units: rng.gen_range(3..=6),
                        },
                        HiddenSpec::Dense {
                            units: rng.gen_range(2..=5),
                        },
                    ],
                }
            };
            let Ok(specs) = arch.resolve() else { continue };
            let total: usize = specs.iter().map(|s| s.weight_count()).sum::<usize>()
                + 3 * specs.last().unwrap().out_units;
            if total <= MAX_WEIGHTS {
                return arch;
            }
        }
    }

    const MAX_DRAWS: usize = 50;
    const MIN_PEAK: f64 = 1e-3;

    fn redraw_weights(net: &mut SpikingNetwork, rng: &mut ChaCha8Rng) {
        for l in 0..net.layers().len() {
            let spec = *net.layer(l).spec();
            for o in 0..spec.out_units {
                let fan = (0..spec.in_units).filter(|&i| net.layer(l).is_connected(o, i)).count() * spec.inner();
                for i in 0..spec.in_units {
                    if net.layer(l).is_connected(o, i) {
                        for q in 0..spec.inner() {
                            let w = rng.gen_range(-1.0f32..3.0) / fan as f32;
                            net.set_weight(l, o, i, q, w).unwrap();
                        }
                    }
                }
            }
        }
        for h in 0..net.heads().len() {
            let units = net.heads()[h].in_units();
            let fan = (0..units).filter(|&i| net.heads()[h].is_connected(i)).count();
            for c in 0..net.heads()[h].classes() {
                for i in 0..units {
                    if net.heads()[h].is_connected(i) {
                        let w = rng.gen_range(-1.0f32..3.0) / fan as f32;
                        net.set_head_weight(h, c, i, w).unwrap();
                    }
                }
            }
        }
    }

    /// Trainable coordinates with a nonzero analytic gradient, their total and
    /// the largest gradient magnitude.
    fn live_coords(
        net: &SpikingNetwork,
        g: &Gradients,
        mask: &ConnectivityMask,
        head: usize,
    ) -> (usize, usize, f64) {
        let (mut live, mut total, mut peak) = (0, 0, 0.0f64);
        for l in 0..net.layers().len() {
            let spec = net.layer(l).spec();
            for o in 0..spec.out_units {
                for i in 0..spec.in_units {
                    if mask.layers[l].is_trainable(o, i) {
                        for q in 0..spec.inner() {
                            let v = g.layers[l].get(o, i, q);
                            total += 1;
                            live += (v != 0.0) as usize;
                            peak = peak.max(v.abs() as f64);
                        }
                    }
                }
            }
        }
        let hg = &g.head.as_ref().unwrap().1;
        for c in 0..net.heads()[head].classes() {
            for (i, &on) in mask.heads[head].iter().enumerate() {
                if on {
                    let v = hg.get(c, i, 0);
                    total += 1;
                    live += (v != 0.0) as usize;
                    peak = peak.max(v.abs() as f64);
                }
            }
        }
        (live, total, peak)
    }

    /// Builds a random small network (optionally with a frozen earlier task),
    /// then compares the backward pass of the smoothed network against
    /// central differences of the reference loss.
    pub fn run_instance(seed: u64, floor: f64) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = random_arch(&mut rng);
        let mut net = SpikingNetwork::new(&arch).unwrap();
        let classes = rng.gen_range(2..=3);
        let two_tasks = rng.gen_bool(0.5);
        let tasks = if two_tasks { 2 } else { 1 };
        let mut state = PruningState::new(net.layers().len(), 0.5, 1.0, 10.0);
        let mut head = 0;
        for task in 0..tasks {
            grow_for_task(&mut net, 30.0, seed ^ task as u64).unwrap();
            for l in 0..net.layers().len() {
                wire_new_neurons(&mut net, l, WiringMode::Reuse, 1.0, &mut rng);
            }
            head = add_output_head(&mut net, classes, task as u32, WiringMode::Reuse, HeadInit::Glorot(1.0), &mut rng).unwrap();
            if task + 1 < tasks {
                freeze_task(&mut net, &mut state, task as u32);
            }
        }
        let t_steps = rng.gen_range(1..=4);
        let params = LifParams {
            t_steps,
            spike_fn: SpikeFn::Smoothed,
            ..LifParams::default()
        };
        let lif = RefLif {
            tau: params.tau as f64,
            v_th: params.v_th as f64,
            lambda: params.lambda as f64,
            t_steps,
        };
        let scale = 4.0f32;
        let b = 2;
        let features = net.input_features();
        let frame: Vec<f32> = (0..b * features).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
        let xs: Vec<Vec<f64>> = frame
            .chunks(features)
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect();
        let batch = EncodedBatch::constant(frame, b, t_steps).unwrap();
        let mask = net.connectivity_mask();

        // Redraw weights until most trainable coordinates carry gradient, so
        // the instance is not a saturated or silent network.
        let mut grads = None;
        for _ in 0..MAX_DRAWS {
            redraw_weights(&mut net, &mut rng);
            let pass = net.forward(&batch, &params, true).unwrap();
            let (_, grad) = cross_entropy_on_rates(&pass.rates()[head], &labels, scale).unwrap();
            let g = net.backward(&pass, head, &grad).unwrap();
            let (live, total, peak) = live_coords(&net, &g, &mask, head);
            grads = Some(g);
            if 2 * live >= total && peak >= MIN_PEAK {
                break;
            }
        }
        let grads = grads.unwrap();
        let base = RefWeights::of(&net);
        let eps = 1e-6;
        let loss_at = |w: &RefWeights| reference_loss(&net, w, &xs, &labels, head, lif, scale as f64);
        let mut worst = 0.0f64;
        let mut coords = 0;
        let mut nonzero = 0;
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for l in 0..net.layers().len() {
            let spec = *net.layer(l).spec();
            let inner = spec.inner();
            for o in 0..spec.out_units {
                for i in 0..spec.in_units {
                    if !mask.layers[l].is_trainable(o, i) {
                        continue;
                    }
                    for q in 0..inner {
                        let idx = (o * spec.in_units + i) * inner + q;
                        let mut plus = base.clone();
                        plus.layers[l][idx] += eps;
                        let mut minus = base.clone();
                        minus.layers[l][idx] -= eps;
                        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                        let analytic = grads.layers[l].get(o, i, q) as f64;
                        worst = worst.max(rel_err(analytic, numeric, floor));
                        pairs.push((analytic, numeric));
                        coords += 1;
                        nonzero += (numeric.abs() > 1e-6) as usize;
                    }
                }
            }
        }
        let (gh, hgrad) = grads.head.as_ref().unwrap();
        assert_eq!(*gh, head);
        let units = net.heads()[head].in_units();
        for c in 0..classes {
            for i in 0..units {
                if !mask.heads[head][i] {
                    continue;
                }
                let idx = c * units + i;
                let mut plus = base.clone();
                plus.heads[head][idx] += eps;
                let mut minus = base.clone();
                minus.heads[head][idx] -= eps;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                let analytic = hgrad.get(c, i, 0) as f64;
                worst = worst.max(rel_err(analytic, numeric, floor));
                pairs.push((analytic, numeric));
                coords += 1;
                nonzero += (numeric.abs() > 1e-6) as usize;
            }
        }
        Outcome {
            max_rel_err: worst,
            coords,
            nonzero,
            norm_rel_err: {
                let diff = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
                let scale = pairs.iter().map(|(_, n)| n.abs()).fold(0.0, f64::max);
                if scale == 0.0 {
                    diff
                } else {
                    diff / scale
                }
            },
        }
    }
}

pub mod synthetic {
    use std::path::Path;

    use dsd_snn::continual::BenchmarkSpec;
    use dsd_snn::data::{write_idx_images, write_idx_labels};
    use dsd_snn::experiment::ExperimentConfig;
    use dsd_snn::snn::{ArchitectureSpec, HiddenSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const SIDE: usize = 8;
    pub const CLASSES: usize = 4;

    fn samples(n: usize, templates: &[Vec<f32>], rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
        let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % CLASSES;
            for &t in &templates[c] {
                let v = (0.75 * t + rng.gen_range(0.0f32..0.35)).min(1.0);
                pixels.push((v * 255.0).round() as u8);
            }
            labels.push(c as u8);
        }
        (pixels, labels)
    }

    /// Writes an MNIST-layout IDX dataset of 8×8 images with four classes
    /// under `root/mnist`.
    pub fn write_mnist(root: &Path, train: usize, test: usize, seed: u64) {
        let dir = root.join("mnist");
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let templates: Vec<Vec<f32>> = (0..CLASSES)
            .map(|_| (0..SIDE * SIDE).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect())
            .collect();
        let (p, l) = samples(train, &templates, &mut rng);
        write_idx_images(&dir.join("train-images-idx3-ubyte"), SIDE, SIDE, &p).unwrap();
        write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &l).unwrap();
        let (p, l) = samples(test, &templates, &mut rng);
        write_idx_images(&dir.join("t10k-images-idx3-ubyte"), SIDE, SIDE, &p).unwrap();
        write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &l).unwrap();
    }

    pub fn architecture() -> ArchitectureSpec {
        ArchitectureSpec {
            input: [1, SIDE, SIDE],
            hidden: vec![
                HiddenSpec::Conv2d {
                    channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    pool: 2,
                },
                HiddenSpec::Dense { units: 40 },
            ],
        }
    }

    /// A small permuted-task experiment over [`write_mnist`] data.
    pub fn experiment(tasks: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            name: "synthetic".into(),
            benchmark: BenchmarkSpec {
                tasks,
                train_per_task: Some(160),
                test_per_task: Some(80),
                architecture: architecture(),
                ..BenchmarkSpec::default()
            },
            ..ExperimentConfig::default()
        };
        cfg.train.epochs = 6;
        cfg.train.batch_size = 16;
        cfg.train.learning_rate = 0.1;
        cfg.train.rho_percent = 25.0;
        cfg.train.eval_batch_size = 32;
        cfg.train.probe_size = 16;
        cfg.cil.replay_per_task = 100;
        cfg.cil.classifier.epochs = 5;
        cfg
    }
}
