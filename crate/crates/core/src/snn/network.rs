//! The layered spiking network: storage, forward simulation and BPTT.
//!
//! Weights are stored at full capacity with stable slot identity. Forward and
//! backward passes operate on packed copies restricted to non-Empty slots, so
//! the cost scales with the grown part of the network. Gradients are only
//! produced for weights into New neurons and the head being trained; nothing
//! upstream of a Frozen neuron is trainable, so the backward pass stops there.

use serde::{Deserialize, Serialize};

use super::gemm::{matmul, MatRef};
use super::layer::{avg_pool, avg_unpool, col2im, im2col, ArchitectureSpec, LayerSpec};
use super::lif::LifParams;
use super::tensor::Tensor;
use crate::data::EncodedBatch;
use crate::error::{Error, Result};
use crate::structure::{NeuronPool, SlotStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub(crate) spec: LayerSpec,
    /// `[out][in][inner]`
    pub(crate) weights: Vec<f32>,
    /// Synapse existence per (out slot, in slot).
    pub(crate) connections: Vec<bool>,
    pub(crate) pool: NeuronPool,
}

impl HiddenLayer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn pool(&self) -> &NeuronPool {
        &self.pool
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn is_connected(&self, out: usize, inp: usize) -> bool {
        self.connections[out * self.spec.in_units + inp]
    }

    /// All weights of one (out, in) synapse group.
    pub fn synapse(&self, out: usize, inp: usize) -> &[f32] {
        let inner = self.spec.inner();
        let start = (out * self.spec.in_units + inp) * inner;
        &self.weights[start..start + inner]
    }

    /// All input weights of one neuron, `[in][inner]`.
    pub fn input_weights(&self, out: usize) -> &[f32] {
        let row = self.spec.in_units * self.spec.inner();
        &self.weights[out * row..(out + 1) * row]
    }

    pub(crate) fn synapse_mut(&mut self, out: usize, inp: usize) -> &mut [f32] {
        let inner = self.spec.inner();
        let start = (out * self.spec.in_units + inp) * inner;
        &mut self.weights[start..start + inner]
    }

    pub(crate) fn set_connected(&mut self, out: usize, inp: usize, on: bool) {
        self.connections[out * self.spec.in_units + inp] = on;
    }
}

/// Per-task classification neurons reading the last hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputHead {
    pub(crate) task: u32,
    pub(crate) classes: usize,
    /// `[classes][in]`
    pub(crate) weights: Vec<f32>,
    /// Which last-layer slots feed this head.
    pub(crate) connections: Vec<bool>,
}

impl OutputHead {
    pub fn task(&self) -> u32 {
        self.task
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn in_units(&self) -> usize {
        self.connections.len()
    }

    pub fn is_connected(&self, inp: usize) -> bool {
        self.connections[inp]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikingNetwork {
    pub(crate) architecture: ArchitectureSpec,
    pub(crate) layers: Vec<HiddenLayer>,
    pub(crate) heads: Vec<OutputHead>,
    /// Head currently being trained, if a task is in progress.
    pub(crate) training_head: Option<usize>,
}

impl SpikingNetwork {
    /// A network with every slot Empty and no heads.
    pub fn new(architecture: &ArchitectureSpec) -> Result<Self> {
        let specs = architecture.resolve()?;
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(l, spec)| HiddenLayer {
                weights: vec![0.0; spec.weight_count()],
                connections: vec![false; spec.out_units * spec.in_units],
                pool: NeuronPool::new(l, spec.out_units),
                spec,
            })
            .collect();
        Ok(SpikingNetwork {
            architecture: architecture.clone(),
            layers,
            heads: Vec::new(),
            training_head: None,
        })
    }

    pub fn architecture(&self) -> &ArchitectureSpec {
        &self.architecture
    }

    pub fn layers(&self) -> &[HiddenLayer] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &HiddenLayer {
        &self.layers[l]
    }

    pub fn heads(&self) -> &[OutputHead] {
        &self.heads
    }

    pub fn training_head(&self) -> Option<usize> {
        self.training_head
    }

    pub fn input_features(&self) -> usize {
        self.architecture.input_features()
    }

    /// Overwrites one weight of an existing synapse.
    pub fn set_weight(&mut self, l: usize, out: usize, inp: usize, q: usize, value: f32) -> Result<()> {
        let layer = self
            .layers
            .get_mut(l)
            .ok_or_else(|| Error::input(format!("no layer {l}")))?;
        let (spec, inner) = (layer.spec, layer.spec.inner());
        if out >= spec.out_units || inp >= spec.in_units || q >= inner {
            return Err(Error::input(format!("synapse ({out}, {inp}, {q}) outside layer {l}")));
        }
        if !layer.is_connected(out, inp) {
            return Err(Error::state(format!("layer {l} has no synapse {inp} -> {out}")));
        }
        layer.synapse_mut(out, inp)[q] = value;
        Ok(())
    }

    /// Overwrites one weight of an existing head synapse.
    pub fn set_head_weight(&mut self, head: usize, class: usize, inp: usize, value: f32) -> Result<()> {
        let h = self
            .heads
            .get_mut(head)
            .ok_or_else(|| Error::input(format!("no head {head}")))?;
        if class >= h.classes || inp >= h.connections.len() {
            return Err(Error::input(format!("synapse ({class}, {inp}) outside head {head}")));
        }
        if !h.connections[inp] {
            return Err(Error::state(format!("head {head} is not connected to unit {inp}")));
        }
        let units = h.connections.len();
        h.weights[class * units + inp] = value;
        Ok(())
    }

    /// Slots feeding layer `l`: the previous layer's active slots, or every
    /// input channel for the first layer.
    fn active_inputs(&self, l: usize) -> Vec<usize> {
        if l == 0 {
            (0..self.layers[0].spec.in_units).collect()
        } else {
            self.layers[l - 1].pool.active_slots()
        }
    }

    /// Trainability of every synapse under the current structure.
    pub fn connectivity_mask(&self) -> ConnectivityMask {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let (out, inp) = (layer.spec.out_units, layer.spec.in_units);
                let mut trainable = vec![false; out * inp];
                for o in 0..out {
                    if layer.pool.status(o) == SlotStatus::New {
                        for i in 0..inp {
                            trainable[o * inp + i] = layer.connections[o * inp + i];
                        }
                    }
                }
                LayerMask {
                    in_units: inp,
                    trainable,
                    exists: (0..out).map(|o| layer.pool.is_active(o)).collect(),
                }
            })
            .collect();
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(h, head)| {
                if Some(h) == self.training_head {
                    head.connections.clone()
                } else {
                    vec![false; head.connections.len()]
                }
            })
            .collect();
        ConnectivityMask { layers, heads }
    }

    /// Simulates `t_steps` of LIF dynamics and returns per-head firing rates.
    ///
    /// With `record` set, the pass keeps what [`SpikingNetwork::backward`] needs.
    pub fn forward(
        &self,
        batch: &EncodedBatch,
        params: &LifParams,
        record: bool,
    ) -> Result<ForwardPass> {
        if self.heads.is_empty() {
            return Err(Error::state("network has no output heads"));
        }
        if batch.features() != self.input_features() {
            return Err(Error::shape(format!(
                "batch has {} features per sample, network expects {}",
                batch.features(),
                self.input_features()
            )));
        }
        if batch.t_steps() != params.t_steps {
            return Err(Error::shape(format!(
                "batch encodes {} steps, parameters ask for {}",
                batch.t_steps(),
                params.t_steps
            )));
        }
        let b = batch.batch();
        let t_steps = params.t_steps;
        let [channels, h, w] = self.architecture.input;

        // Network input as [channel][batch][h*w] per step.
        let frames = if batch.is_static() { 1 } else { t_steps };
        let mut x_steps: Vec<Vec<f32>> = (0..frames)
            .map(|t| {
                let src = batch.step(t);
                let hw = h * w;
                let mut x = vec![0.0f32; channels * b * hw];
                for s in 0..b {
                    for c in 0..channels {
                        x[(c * b + s) * hw..(c * b + s + 1) * hw]
                            .copy_from_slice(&src[s * channels * hw + c * hw..s * channels * hw + (c + 1) * hw]);
                    }
                }
                x
            })
            .collect();

        let mut layer_traces = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let active_in = self.active_inputs(l);
            let (out, trace) = run_layer(layer, &x_steps, active_in, b, params, record)?;
            x_steps = out;
            if let Some(trace) = trace {
                layer_traces.push(trace);
            }
        }

        let last_active = self.layers.last().unwrap().pool.active_slots();
        let mut rates = Vec::with_capacity(self.heads.len());
        let mut head_traces = Vec::new();
        for head in &self.heads {
            let (rate, trace) = run_head(head, &x_steps, &last_active, b, params, record)?;
            rates.push(rate);
            if let Some(trace) = trace {
                head_traces.push(trace);
            }
        }

        let trace = record.then(|| Trace {
            params: *params,
            layers: layer_traces,
            heads: head_traces,
            head_inputs: x_steps,
        });
        Ok(ForwardPass {
            rates,
            batch: b,
            trace,
        })
    }

    /// Reverse-mode gradients of a loss on one head's rates.
    ///
    /// `rate_grad` is `[batch][classes]` for head `head`. Gradients of
    /// synapses that do not exist or are not trainable are zero.
    pub fn backward(&self, pass: &ForwardPass, head: usize, rate_grad: &Tensor) -> Result<Gradients> {
        let trace = pass
            .trace
            .as_ref()
            .ok_or_else(|| Error::state("backward called without a recorded forward pass"))?;
        if trace.layers.len() != self.layers.len() || trace.heads.len() != self.heads.len() {
            return Err(Error::state("forward trace does not match the network structure"));
        }
        let head_ref = self
            .heads
            .get(head)
            .ok_or_else(|| Error::input(format!("no head {head}")))?;
        let b = pass.batch;
        let classes = head_ref.classes;
        if rate_grad.shape() != [b, classes] {
            return Err(Error::shape(format!(
                "rate gradient {:?} does not match [{b}, {classes}]",
                rate_grad.shape()
            )));
        }
        let params = &trace.params;
        let t_steps = params.t_steps;
        let inv_t = 1.0 / t_steps as f32;

        // Head: rate = mean_t O_t.
        let ht = &trace.heads[head];
        let mut g_o = vec![vec![0.0f32; classes * b]; t_steps];
        for g in g_o.iter_mut() {
            for s in 0..b {
                for c in 0..classes {
                    g[c * b + s] = rate_grad.data()[s * classes + c] * inv_t;
                }
            }
        }
        let all_rows: Vec<usize> = (0..classes).collect();
        let g_i = bptt(params, &all_rows, b, &ht.u, &ht.o, g_o);

        let last = self.layers.len() - 1;
        let last_active = &trace.layers[last].active_out;
        let n_act = last_active.len();
        let mut head_values = vec![0.0f32; classes * n_act];
        for (t, gi) in g_i.iter().enumerate() {
            let x = &trace.head_inputs[t];
            matmul(
                MatRef::row_major(gi, classes, b),
                MatRef::row_major(x, n_act, b).t(),
                &mut head_values,
                true,
            );
        }
        for (ci, &slot) in last_active.iter().enumerate() {
            if !head_ref.connections[slot] {
                for c in 0..classes {
                    head_values[c * n_act + ci] = 0.0;
                }
            }
        }
        let head_grad = LayerGrad {
            rows: all_rows.clone(),
            cols: last_active.clone(),
            inner: 1,
            values: head_values,
        };

        // Gradient w.r.t. the outputs of New neurons in the last hidden layer.
        let new_pos = new_positions(&self.layers[last].pool, last_active);
        let mut g_y: Vec<Vec<f32>> = if new_pos.is_empty() {
            Vec::new()
        } else {
            let w_sub = gather(&ht.packed, classes, n_act, 1, &all_rows, &new_pos);
            g_i.iter()
                .map(|gi| {
                    let mut gy = vec![0.0f32; new_pos.len() * b];
                    matmul(
                        MatRef::row_major(&w_sub, classes, new_pos.len()).t(),
                        MatRef::row_major(gi, classes, b),
                        &mut gy,
                        false,
                    );
                    gy
                })
                .collect()
        };

        let mut layer_grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let lt = &trace.layers[l];
            let spec = &layer.spec;
            let inner = spec.inner();
            let new_pos = new_positions(&layer.pool, &lt.active_out);
            let rows: Vec<usize> = new_pos.iter().map(|&p| lt.active_out[p]).collect();
            let k = lt.active_in.len() * inner;
            let mut values = vec![0.0f32; rows.len() * k];

            if rows.is_empty() || g_y.is_empty() {
                layer_grads.push(LayerGrad {
                    rows,
                    cols: lt.active_in.clone(),
                    inner,
                    values,
                });
                g_y = Vec::new();
                continue;
            }

            let n_new = rows.len();
            let g_o: Vec<Vec<f32>> = g_y
                .iter()
                .map(|gy| avg_unpool(gy, n_new * b, spec.out_hw, spec.pool))
                .collect();
            let g_i = bptt(params, &new_pos, lt.n, &lt.u, &lt.o, g_o);

            if lt.inputs.len() == 1 {
                let mut sum = g_i[0].clone();
                for gi in &g_i[1..] {
                    for (s, v) in sum.iter_mut().zip(gi) {
                        *s += *v;
                    }
                }
                matmul(
                    MatRef::row_major(&sum, n_new, lt.n),
                    MatRef::row_major(&lt.inputs[0], k, lt.n).t(),
                    &mut values,
                    false,
                );
            } else {
                for (gi, x) in g_i.iter().zip(&lt.inputs) {
                    matmul(
                        MatRef::row_major(gi, n_new, lt.n),
                        MatRef::row_major(x, k, lt.n).t(),
                        &mut values,
                        true,
                    );
                }
            }
            for (ri, &o) in rows.iter().enumerate() {
                for (ci, &i) in lt.active_in.iter().enumerate() {
                    if !layer.is_connected(o, i) {
                        values[(ri * lt.active_in.len() + ci) * inner..][..inner].fill(0.0);
                    }
                }
            }

            // Propagate to New neurons of the previous layer.
            g_y = Vec::new();
            if l > 0 {
                let prev_new = new_positions(&self.layers[l - 1].pool, &lt.active_in);
                if !prev_new.is_empty() {
                    let k_new = prev_new.len() * inner;
                    let w_sub = gather(&lt.packed, lt.active_out.len(), lt.active_in.len(), inner, &new_pos, &prev_new);
                    g_y = g_i
                        .iter()
                        .map(|gi| {
                            let mut gx = vec![0.0f32; k_new * lt.n];
                            matmul(
                                MatRef::row_major(&w_sub, n_new, k_new).t(),
                                MatRef::row_major(gi, n_new, lt.n),
                                &mut gx,
                                false,
                            );
                            if spec.is_conv() {
                                col2im(&gx, prev_new.len(), b, spec)
                            } else {
                                dense_to_maps(&gx, prev_new.len(), b, inner)
                            }
                        })
                        .collect();
                }
            }

            layer_grads.push(LayerGrad {
                rows,
                cols: lt.active_in.clone(),
                inner,
                values,
            });
        }
        layer_grads.reverse();

        Ok(Gradients {
            layers: layer_grads,
            head: Some((head, head_grad)),
        })
    }
}

/// Positions within `active` whose slot is New.
fn new_positions(pool: &NeuronPool, active: &[usize]) -> Vec<usize> {
    active
        .iter()
        .enumerate()
        .filter(|(_, &s)| pool.status(s) == SlotStatus::New)
        .map(|(p, _)| p)
        .collect()
}

/// Sub-matrix of a packed `[rows][cols*inner]` matrix.
fn gather(packed: &[f32], _rows: usize, cols: usize, inner: usize, row_pos: &[usize], col_pos: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(row_pos.len() * col_pos.len() * inner);
    for &r in row_pos {
        let row = &packed[r * cols * inner..(r + 1) * cols * inner];
        for &c in col_pos {
            out.extend_from_slice(&row[c * inner..(c + 1) * inner]);
        }
    }
    out
}

/// `[slot][batch][inner]` → `[slot*inner][batch]`.
fn maps_to_dense(x: &[f32], slots: usize, batch: usize, inner: usize) -> Vec<f32> {
    if inner == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0f32; slots * inner * batch];
    for c in 0..slots {
        for s in 0..batch {
            for p in 0..inner {
                out[(c * inner + p) * batch + s] = x[(c * batch + s) * inner + p];
            }
        }
    }
    out
}

/// Inverse of [`maps_to_dense`].
fn dense_to_maps(x: &[f32], slots: usize, batch: usize, inner: usize) -> Vec<f32> {
    if inner == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0f32; slots * batch * inner];
    for c in 0..slots {
        for s in 0..batch {
            for p in 0..inner {
                out[(c * batch + s) * inner + p] = x[(c * inner + p) * batch + s];
            }
        }
    }
    out
}

fn pack_weights(layer: &HiddenLayer, active_out: &[usize], active_in: &[usize]) -> Vec<f32> {
    let inner = layer.spec.inner();
    let mut packed = Vec::with_capacity(active_out.len() * active_in.len() * inner);
    for &o in active_out {
        for &i in active_in {
            packed.extend_from_slice(layer.synapse(o, i));
        }
    }
    packed
}

fn run_layer(
    layer: &HiddenLayer,
    x_steps: &[Vec<f32>],
    active_in: Vec<usize>,
    b: usize,
    params: &LifParams,
    record: bool,
) -> Result<(Vec<Vec<f32>>, Option<LayerTrace>)> {
    let spec = &layer.spec;
    let t_steps = params.t_steps;
    let active_out = layer.pool.active_slots();
    let m = active_out.len();
    let inner = spec.inner();
    let k = active_in.len() * inner;
    let n = b * spec.out_spatial();
    let packed = pack_weights(layer, &active_out, &active_in);

    let inputs: Vec<Vec<f32>> = x_steps
        .iter()
        .map(|x| {
            if spec.is_conv() {
                im2col(x, active_in.len(), b, spec)
            } else {
                maps_to_dense(x, active_in.len(), b, inner)
            }
        })
        .collect();
    let currents: Vec<Vec<f32>> = inputs
        .iter()
        .map(|x| {
            let mut c = vec![0.0f32; m * n];
            matmul(MatRef::row_major(&packed, m, k), MatRef::row_major(x, k, n), &mut c, false);
            c
        })
        .collect();
    if currents.iter().any(|c| c.iter().any(|v| v.is_nan())) {
        return Err(Error::Numeric(format!("NaN input current in layer {}", layer.pool.layer())));
    }

    let mut u_hist = Vec::with_capacity(if record { t_steps } else { 0 });
    let mut o_hist = Vec::with_capacity(if record { t_steps } else { 0 });
    let mut outputs = Vec::with_capacity(t_steps);
    let mut u = vec![0.0f32; m * n];
    let mut o = vec![0.0f32; m * n];
    for t in 0..t_steps {
        let cur = &currents[if currents.len() == 1 { 0 } else { t }];
        for j in 0..m * n {
            let un = params.integrate(u[j], o[j], cur[j]);
            u[j] = un;
            o[j] = params.fire(un);
        }
        outputs.push(avg_pool(&o, m * b, spec.out_hw, spec.pool));
        if record {
            u_hist.push(u.clone());
            o_hist.push(o.clone());
        }
    }

    let trace = record.then(|| LayerTrace {
        active_out,
        active_in,
        packed,
        inputs,
        u: u_hist,
        o: o_hist,
        n,
    });
    Ok((outputs, trace))
}

fn run_head(
    head: &OutputHead,
    x_steps: &[Vec<f32>],
    active_in: &[usize],
    b: usize,
    params: &LifParams,
    record: bool,
) -> Result<(Tensor, Option<HeadTrace>)> {
    let classes = head.classes;
    let k = active_in.len();
    let units = head.connections.len();
    let mut packed = Vec::with_capacity(classes * k);
    for c in 0..classes {
        for &i in active_in {
            packed.push(head.weights[c * units + i]);
        }
    }
    let mut u = vec![0.0f32; classes * b];
    let mut o = vec![0.0f32; classes * b];
    let mut counts = vec![0.0f32; classes * b];
    let mut cur = vec![0.0f32; classes * b];
    let mut u_hist = Vec::new();
    let mut o_hist = Vec::new();
    for x in x_steps {
        matmul(MatRef::row_major(&packed, classes, k), MatRef::row_major(x, k, b), &mut cur, false);
        for j in 0..classes * b {
            let un = params.integrate(u[j], o[j], cur[j]);
            u[j] = un;
            o[j] = params.fire(un);
            counts[j] += o[j];
        }
        if record {
            u_hist.push(u.clone());
            o_hist.push(o.clone());
        }
    }
    let inv_t = 1.0 / params.t_steps as f32;
    let mut rates = vec![0.0f32; b * classes];
    for c in 0..classes {
        for s in 0..b {
            rates[s * classes + c] = counts[c * b + s] * inv_t;
        }
    }
    let trace = record.then(|| HeadTrace {
        packed,
        u: u_hist,
        o: o_hist,
    });
    Ok((Tensor::new(vec![b, classes], rates)?, trace))
}

/// Backpropagation through time for the rows `rows` (positions into the
/// recorded `[rows][n]` state). `g_o[t]` holds dL/dO_t for those rows from
/// downstream; returns dL/dI_t per step.
fn bptt(
    params: &LifParams,
    rows: &[usize],
    n: usize,
    u: &[Vec<f32>],
    o: &[Vec<f32>],
    mut g_o: Vec<Vec<f32>>,
) -> Vec<Vec<f32>> {
    let t_steps = u.len();
    let mut carry = vec![0.0f32; rows.len() * n];
    for t in (0..t_steps).rev() {
        let g = &mut g_o[t];
        for (ri, &r) in rows.iter().enumerate() {
            let ut = &u[t][r * n..(r + 1) * n];
            let ot = &o[t][r * n..(r + 1) * n];
            let gr = &mut g[ri * n..(ri + 1) * n];
            let cr = &mut carry[ri * n..(ri + 1) * n];
            for j in 0..n {
                let (du, dout) = if t + 1 < t_steps {
                    params.integrate_partials(ut[j], ot[j])
                } else {
                    (0.0, 0.0)
                };
                let go = gr[j] + cr[j] * dout;
                let gu = go * params.surrogate(ut[j]) + cr[j] * du;
                gr[j] = gu;
                cr[j] = gu;
            }
        }
    }
    g_o
}

struct LayerTrace {
    active_out: Vec<usize>,
    active_in: Vec<usize>,
    packed: Vec<f32>,
    /// Column matrices (`[k][n]`), one per step or a single static one.
    inputs: Vec<Vec<f32>>,
    u: Vec<Vec<f32>>,
    o: Vec<Vec<f32>>,
    n: usize,
}

struct HeadTrace {
    packed: Vec<f32>,
    u: Vec<Vec<f32>>,
    o: Vec<Vec<f32>>,
}

struct Trace {
    params: LifParams,
    layers: Vec<LayerTrace>,
    heads: Vec<HeadTrace>,
    head_inputs: Vec<Vec<f32>>,
}

/// Result of [`SpikingNetwork::forward`].
pub struct ForwardPass {
    rates: Vec<Tensor>,
    batch: usize,
    trace: Option<Trace>,
}

impl ForwardPass {
    /// Firing rates per head, each `[batch][classes]` in `[0, 1]`.
    pub fn rates(&self) -> &[Tensor] {
        &self.rates
    }

    pub fn into_rates(self) -> Vec<Tensor> {
        self.rates
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Mean spike probability of each hidden layer over active neurons,
    /// positions and steps. Needs a recorded pass.
    pub fn layer_firing_rates(&self) -> Option<Vec<f64>> {
        let trace = self.trace.as_ref()?;
        Some(
            trace
                .layers
                .iter()
                .map(|lt| {
                    let (sum, count) = lt.o.iter().fold((0.0f64, 0usize), |(s, c), o| {
                        (s + o.iter().map(|&v| v as f64).sum::<f64>(), c + o.len())
                    });
                    if count == 0 {
                        0.0
                    } else {
                        sum / count as f64
                    }
                })
                .collect(),
        )
    }

    pub fn is_recorded(&self) -> bool {
        self.trace.is_some()
    }
}

/// Dense gradient block for one layer: rows are output slots, columns input slots.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub inner: usize,
    /// `[rows][cols][inner]`
    pub values: Vec<f32>,
}

impl LayerGrad {
    pub fn get(&self, out: usize, inp: usize, q: usize) -> f32 {
        let (Some(r), Some(c)) = (
            self.rows.iter().position(|&x| x == out),
            self.cols.iter().position(|&x| x == inp),
        ) else {
            return 0.0;
        };
        self.values[(r * self.cols.len() + c) * self.inner + q]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Gradients for every hidden layer plus the trained head.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub head: Option<(usize, LayerGrad)>,
}

impl Gradients {
    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(LayerGrad::is_zero)
            && self.head.as_ref().map_or(true, |(_, g)| g.is_zero())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerMask {
    in_units: usize,
    /// `[out][in]`
    pub trainable: Vec<bool>,
    /// Existence per neuron slot.
    pub exists: Vec<bool>,
}

impl LayerMask {
    pub fn is_trainable(&self, out: usize, inp: usize) -> bool {
        self.trainable[out * self.in_units + inp]
    }
}

/// Per-synapse trainability and per-neuron existence for a whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityMask {
    pub layers: Vec<LayerMask>,
    /// Trainable inputs per head; all false for heads not being trained.
    pub heads: Vec<Vec<bool>>,
}

impl ConnectivityMask {
    /// A mask that permits no update at all.
    pub fn frozen_like(&self) -> Self {
        ConnectivityMask {
            layers: self
                .layers
                .iter()
                .map(|m| LayerMask {
                    in_units: m.in_units,
                    trainable: vec![false; m.trainable.len()],
                    exists: m.exists.clone(),
                })
                .collect(),
            heads: self.heads.iter().map(|h| vec![false; h.len()]).collect(),
        }
    }
}

/// `w ← w − lr·g` wherever `mask` marks the synapse trainable; every other
/// weight is left bit-identical.
pub fn sgd_update(net: &mut SpikingNetwork, grads: &Gradients, lr: f32, mask: &ConnectivityMask) -> Result<()> {
    if grads.layers.len() != net.layers.len() || mask.layers.len() != net.layers.len() {
        return Err(Error::shape("gradients or mask do not match the network"));
    }
    if lr == 0.0 {
        return Ok(());
    }
    for (l, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
        let lm = &mask.layers[l];
        let inner = g.inner;
        for (ri, &o) in g.rows.iter().enumerate() {
            for (ci, &i) in g.cols.iter().enumerate() {
                if !lm.is_trainable(o, i) {
                    continue;
                }
                let gv = &g.values[(ri * g.cols.len() + ci) * inner..][..inner];
                for (w, gq) in layer.synapse_mut(o, i).iter_mut().zip(gv) {
                    *w -= lr * gq;
                }
            }
        }
    }
    if let Some((h, g)) = &grads.head {
        let head = net
            .heads
            .get_mut(*h)
            .ok_or_else(|| Error::input(format!("no head {h}")))?;
        let trainable = &mask.heads[*h];
        let units = head.connections.len();
        for (ri, &c) in g.rows.iter().enumerate() {
            for (ci, &i) in g.cols.iter().enumerate() {
                if trainable[i] {
                    head.weights[c * units + i] -= lr * g.values[ri * g.cols.len() + ci];
                }
            }
        }
    }
    Ok(())
}
