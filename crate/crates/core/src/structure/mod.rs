//! Neuron lifecycle: growth into Empty slots, wiring, importance-based
//! pruning and freezing. All structural mutation goes through here.

mod pool;
mod pruning;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use pool::{NeuronPool, PoolCounts, SlotStatus};
pub use pruning::{normalize_importance, PruningState, ALPHA, GAMMA, INITIAL_SCORE};

use crate::error::{Error, Result};
use crate::snn::{ConnectivityMask, LayerKind, OutputHead, SpikingNetwork};

/// Which previous-layer neurons a freshly grown neuron listens to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WiringMode {
    /// Frozen ∪ New of the previous layer.
    #[default]
    Reuse,
    /// New only (the no-reuse ablation).
    NewOnly,
}

impl WiringMode {
    fn admits(self, status: SlotStatus) -> bool {
        match self {
            WiringMode::Reuse => status != SlotStatus::Empty,
            WiringMode::NewOnly => status == SlotStatus::New,
        }
    }
}

/// How a new output head's weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadInit {
    /// Zero-mean uniform within `gain` times the Glorot bound.
    Glorot(f32),
    /// Positive weights with mean `drive / fan_in`, each jittered by up to
    /// ±50%. All classes start near the same rate, so the first softmax is
    /// close to uniform.
    Balanced(f32),
}

impl HeadInit {
    pub fn problem(&self) -> Option<String> {
        match *self {
            HeadInit::Glorot(g) if !(g.is_finite() && g > 0.0) => Some(format!("glorot gain must be positive, got {g}")),
            HeadInit::Balanced(d) if !(d.is_finite() && d > 0.0) => Some(format!("balanced drive must be positive, got {d}")),
            _ => None,
        }
    }

    fn draw(&self, fan_in: usize, classes: usize, rng: &mut impl Rng) -> f32 {
        match *self {
            HeadInit::Glorot(gain) => {
                let bound = gain * glorot_bound(fan_in, classes);
                rng.gen_range(-bound..=bound)
            }
            HeadInit::Balanced(drive) => drive / fan_in.max(1) as f32 * rng.gen_range(0.5..=1.5),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMode {
    /// Signed sum of input weights.
    #[default]
    Signed,
    /// Sum of absolute input weights.
    Abs,
}

/// Grows `ceil(rho% * N^l)` random Empty slots to New in every layer.
///
/// Capacity is checked for all layers before any slot changes, so a capacity
/// error leaves the network untouched.
pub fn grow_for_task(net: &mut SpikingNetwork, rho_percent: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    for layer in &net.layers {
        let needed = layer.pool.growth_size(rho_percent);
        let available = layer.pool.counts().empty;
        if needed > available {
            return Err(Error::Capacity {
                layer: layer.pool.layer(),
                needed,
                available,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.layers
        .iter_mut()
        .map(|layer| layer.pool.grow(rho_percent, &mut rng))
        .collect()
}

/// Connects every New neuron of layer `l` to the admitted neurons of the
/// previous layer (all input channels for the first layer) and draws fresh
/// input weights for them, uniform within `gain` times the Glorot bound of
/// the block being drawn (admitted inputs by New neurons), so every task
/// starts at the scale of the first. Frozen neurons are left alone.
pub fn wire_new_neurons(
    net: &mut SpikingNetwork,
    l: usize,
    mode: WiringMode,
    gain: f32,
    rng: &mut impl Rng,
) -> ConnectivityMask {
    let sources: Vec<bool> = if l == 0 {
        vec![true; net.layers[0].spec.in_units]
    } else {
        net.layers[l - 1]
            .pool
            .statuses()
            .iter()
            .map(|&s| mode.admits(s))
            .collect()
    };
    let layer = &mut net.layers[l];
    let spec = layer.spec;
    let inner = spec.inner();
    let fan_in = sources.iter().filter(|&&s| s).count() * inner;
    let fan_out = layer.pool.counts().new;
    let bound = gain * glorot_bound(fan_in, fan_out * spec.fan_out_factor());
    for o in layer.pool.slots_with(SlotStatus::New) {
        for (i, &src) in sources.iter().enumerate() {
            layer.set_connected(o, i, src);
            for w in layer.synapse_mut(o, i) {
                *w = if src { rng.gen_range(-bound..=bound) } else { 0.0 };
            }
        }
    }
    net.connectivity_mask()
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f32 {
    let fan = (fan_in + fan_out).max(1);
    (6.0 / fan as f32).sqrt()
}

/// Appends a head of `classes` neurons wired from the admitted neurons of the
/// last hidden layer; it becomes the head under training.
pub fn add_output_head(
    net: &mut SpikingNetwork,
    classes: usize,
    task: u32,
    mode: WiringMode,
    init: HeadInit,
    rng: &mut impl Rng,
) -> Result<usize> {
    if classes == 0 {
        return Err(Error::input("a head needs at least one class"));
    }
    let last = net.layers.last().expect("at least one layer");
    let connections: Vec<bool> = last.pool.statuses().iter().map(|&s| mode.admits(s)).collect();
    let units = connections.len();
    let fan_in = connections.iter().filter(|&&c| c).count();
    let mut weights = vec![0.0f32; classes * units];
    for c in 0..classes {
        for i in 0..units {
            if connections[i] {
                weights[c * units + i] = init.draw(fan_in, classes, rng);
            }
        }
    }
    net.heads.push(OutputHead {
        task,
        classes,
        weights,
        connections,
    });
    let id = net.heads.len() - 1;
    net.training_head = Some(id);
    Ok(id)
}

/// Importance `S` of every New neuron in layer `l`: the sum of its existing
/// input weights (all kernel taps for a channel).
pub fn importance(net: &SpikingNetwork, l: usize, mode: ImportanceMode) -> Vec<(usize, f64)> {
    let layer = &net.layers[l];
    let in_units = layer.spec.in_units;
    layer
        .pool
        .slots_with(SlotStatus::New)
        .into_iter()
        .map(|o| {
            let mut s = 0.0f64;
            for i in 0..in_units {
                if !layer.is_connected(o, i) {
                    continue;
                }
                for &w in layer.synapse(o, i) {
                    s += match mode {
                        ImportanceMode::Signed => w as f64,
                        ImportanceMode::Abs => (w as f64).abs(),
                    };
                }
            }
            (o, s)
        })
        .collect()
}

/// A neuron removed by pruning, with the input weights it held.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedNeuron {
    pub layer: usize,
    pub slot: usize,
    pub input_weights: Vec<f32>,
}

/// One epoch of the pruning function over every layer: importance,
/// normalization, score update and removal of neurons whose score went
/// negative. Advances the epoch counter.
///
/// Fails with [`Error::TaskAborted`] when no layer has a New neuron left.
pub fn pruning_step(
    net: &mut SpikingNetwork,
    state: &mut PruningState,
    mode: ImportanceMode,
    task: usize,
) -> Result<Vec<PrunedNeuron>> {
    let mut removed = Vec::new();
    for l in 0..net.layers.len() {
        let scores = importance(net, l, mode);
        if scores.is_empty() {
            continue;
        }
        let raw: Vec<f64> = scores.iter().map(|&(_, s)| s).collect();
        let norm = normalize_importance(&raw);
        let entries: Vec<(usize, f64)> = scores.iter().map(|&(slot, _)| slot).zip(norm).collect();
        let conv = matches!(net.layers[l].spec.kind, LayerKind::Conv2d { .. });
        for slot in state.step_layer(l, &entries, conv) {
            removed.push(PrunedNeuron {
                layer: l,
                slot,
                input_weights: net.layers[l].input_weights(slot).to_vec(),
            });
            remove_neuron(net, l, slot);
        }
    }
    state.advance_epoch();
    if net.layers.iter().all(|layer| layer.pool.counts().new == 0) {
        return Err(Error::TaskAborted {
            task,
            reason: "pruning removed every newly grown neuron in every layer".into(),
        });
    }
    Ok(removed)
}

/// Returns a New neuron to the Empty state, deleting its input and output synapses.
pub fn remove_neuron(net: &mut SpikingNetwork, l: usize, slot: usize) {
    let n_layers = net.layers.len();
    let layer = &mut net.layers[l];
    layer.pool.release(slot);
    for i in 0..layer.spec.in_units {
        layer.set_connected(slot, i, false);
        layer.synapse_mut(slot, i).fill(0.0);
    }
    if l + 1 < n_layers {
        let next = &mut net.layers[l + 1];
        for o in 0..next.spec.out_units {
            next.set_connected(o, slot, false);
            next.synapse_mut(o, slot).fill(0.0);
        }
    } else {
        for head in &mut net.heads {
            let units = head.connections.len();
            head.connections[slot] = false;
            for c in 0..head.classes {
                head.weights[c * units + slot] = 0.0;
            }
        }
    }
}

/// Freezes every surviving New neuron and closes the task's training window.
pub fn freeze_task(net: &mut SpikingNetwork, state: &mut PruningState, task: u32) -> Vec<Vec<usize>> {
    let frozen = net.layers.iter_mut().map(|layer| layer.pool.freeze_new(task)).collect();
    net.training_head = None;
    state.clear();
    frozen
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub kind: String,
    pub capacity: usize,
    pub empty: usize,
    pub new: usize,
    pub frozen: usize,
    pub active_weights: usize,
    pub capacity_weights: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub active: usize,
    pub capacity: usize,
    /// `active / capacity`, as a fraction.
    pub compression: f64,
    pub layers: Vec<LayerSummary>,
    pub heads: usize,
}

/// Counts synapse weights between non-Empty neurons against full capacity.
/// Each head counts `classes × last-layer capacity` toward the capacity.
pub fn parameter_stats(net: &SpikingNetwork) -> ParameterStats {
    let mut layers = Vec::with_capacity(net.layers.len());
    let (mut active, mut capacity) = (0usize, 0usize);
    for (l, layer) in net.layers.iter().enumerate() {
        let counts = layer.pool.counts();
        let connected = layer.connections.iter().filter(|&&c| c).count();
        let aw = connected * layer.spec.inner();
        let cw = layer.spec.weight_count();
        active += aw;
        capacity += cw;
        layers.push(LayerSummary {
            layer: l,
            kind: if layer.spec.is_conv() { "conv2d" } else { "dense" }.to_string(),
            capacity: layer.pool.capacity(),
            empty: counts.empty,
            new: counts.new,
            frozen: counts.frozen,
            active_weights: aw,
            capacity_weights: cw,
        });
    }
    for head in &net.heads {
        active += head.connections.iter().filter(|&&c| c).count() * head.classes;
        capacity += head.connections.len() * head.classes;
    }
    ParameterStats {
        active,
        capacity,
        compression: if capacity == 0 {
            0.0
        } else {
            active as f64 / capacity as f64
        },
        layers,
        heads: net.heads.len(),
    }
}
