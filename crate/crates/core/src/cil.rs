//! Class-incremental inference: a replay buffer of raw training inputs and
//! a small task classifier over the network's concatenated head rates.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::continual::{infer_frames, til_correct, HeadRates, TaskSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::CilMetrics;
use crate::seed::{stream, Purpose};
use crate::snn::{argmax, SpikingNetwork};

pub const REPLAY_PER_TASK: usize = 2000;

/// Raw replayed inputs of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayTask {
    pub task: usize,
    /// Source positions within the task's training view, ascending.
    pub positions: Vec<usize>,
    /// `positions.len() × features`, sample-major.
    pub inputs: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    features: usize,
    tasks: Vec<ReplayTask>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, features: usize) -> Self {
        ReplayBuffer {
            capacity,
            features,
            tasks: Vec::new(),
        }
    }

    pub(crate) fn from_parts(capacity: usize, features: usize, tasks: Vec<ReplayTask>) -> Result<Self> {
        for t in &tasks {
            if t.positions.len() > capacity || t.inputs.len() != t.positions.len() * features {
                return Err(Error::Integrity(format!("replay entry for task {} is malformed", t.task)));
            }
        }
        Ok(ReplayBuffer {
            capacity,
            features,
            tasks,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn tasks(&self) -> &[ReplayTask] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.iter().map(|t| t.positions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stores `min(capacity, n)` uniformly chosen training inputs of `task`.
/// A task already in the buffer is replaced.
pub fn collect_replay(buffer: &mut ReplayBuffer, task: &TaskSpec, seed: u64) -> Result<()> {
    if task.train.features() != buffer.features {
        return Err(Error::shape(format!(
            "task {} has {} features, replay buffer holds {}",
            task.id,
            task.train.features(),
            buffer.features
        )));
    }
    let mut positions: Vec<usize> = (0..task.train.len()).collect();
    positions.shuffle(&mut stream(seed, task.id as u64, Purpose::Replay, 0));
    positions.truncate(buffer.capacity);
    positions.sort_unstable();
    let (inputs, _) = task.train.gather(&positions);
    buffer.tasks.retain(|t| t.task != task.id);
    buffer.tasks.push(ReplayTask {
        task: task.id,
        positions,
        inputs,
    });
    buffer.tasks.sort_by_key(|t| t.task);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Share of the buffer held out for validation.
    pub validation_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 100,
            epochs: 50,
            learning_rate: 0.01,
            batch_size: 64,
            validation_fraction: 0.1,
        }
    }
}

impl ClassifierConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.hidden == 0 {
            p.push("cil.hidden must be at least 1".into());
        }
        if self.batch_size == 0 {
            p.push("cil.batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            p.push(format!("cil.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            p.push(format!(
                "cil.validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        p
    }
}

/// Two-layer ReLU network from concatenated head rates to a task index
/// (the index of the head, in the order heads were added).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskClassifier {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    /// `[hidden][inputs]`
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// `[outputs][hidden]`
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl TaskClassifier {
    fn init(inputs: usize, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let b1 = (6.0 / (inputs + hidden) as f32).sqrt();
        let b2 = (6.0 / (hidden + outputs) as f32).sqrt();
        TaskClassifier {
            inputs,
            hidden,
            outputs,
            w1: (0..hidden * inputs).map(|_| rng.gen_range(-b1..=b1)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..outputs * hidden).map(|_| rng.gen_range(-b2..=b2)).collect(),
            b2: vec![0.0; outputs],
        }
    }

    fn hidden_act(&self, x: &[f32]) -> Vec<f32> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.inputs..(h + 1) * self.inputs];
                let z = self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>();
                z.max(0.0)
            })
            .collect()
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f32> {
        let a = self.hidden_act(x);
        (0..self.outputs)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f32>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        if self.outputs == 1 {
            0
        } else {
            argmax(&self.logits(x))
        }
    }
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut Vec<f32>], grads: &[Vec<f32>], lr: f32) {
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, &gi) in p.iter_mut().zip(g) {
                self.m[k] = B1 * self.m[k] + (1.0 - B1) * gi;
                self.v[k] = B2 * self.v[k] + (1.0 - B2) * gi * gi;
                *w -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8);
                k += 1;
            }
        }
    }
}

/// Trains a task classifier on `features` (`n × inputs`) with task targets.
/// Returns the classifier and its accuracy on the held-out split (1.0 when
/// nothing is held out).
pub fn fit_classifier(
    features: &[f32],
    inputs: usize,
    targets: &[usize],
    outputs: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(TaskClassifier, f64)> {
    let p = cfg.problems();
    if !p.is_empty() {
        return Err(Error::Config(p));
    }
    let n = targets.len();
    if n == 0 {
        return Err(Error::state("task classifier has no training samples"));
    }
    if features.len() != n * inputs || targets.iter().any(|&t| t >= outputs) {
        return Err(Error::shape("classifier features or targets do not match"));
    }
    let mut rng = stream(seed, 0, Purpose::Classifier, outputs as u64);
    let mut clf = TaskClassifier::init(inputs, cfg.hidden, outputs, &mut rng);
    if outputs == 1 {
        return Ok((clf, 1.0));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64) * cfg.validation_fraction).floor() as usize;
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();

    let (hd, d) = (cfg.hidden, inputs);
    let mut adam = Adam::new(hd * d + hd + outputs * hd + outputs);
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(cfg.batch_size) {
            let mut g1 = vec![0.0f32; hd * d];
            let mut gb1 = vec![0.0f32; hd];
            let mut g2 = vec![0.0f32; outputs * hd];
            let mut gb2 = vec![0.0f32; outputs];
            let inv = 1.0 / chunk.len() as f32;
            for &s in chunk {
                let x = &features[s * d..(s + 1) * d];
                let a = clf.hidden_act(x);
                let z = clf.logits(x);
                let max = z.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
                let e: Vec<f32> = z.iter().map(|&v| (v - max).exp()).collect();
                let sum: f32 = e.iter().sum();
                let mut da = vec![0.0f32; hd];
                for o in 0..outputs {
                    let dz = (e[o] / sum - if o == targets[s] { 1.0 } else { 0.0 }) * inv;
                    gb2[o] += dz;
                    for h in 0..hd {
                        g2[o * hd + h] += dz * a[h];
                        da[h] += dz * clf.w2[o * hd + h];
                    }
                }
                for h in 0..hd {
                    if a[h] <= 0.0 {
                        continue;
                    }
                    gb1[h] += da[h];
                    for (g, &xi) in g1[h * d..(h + 1) * d].iter_mut().zip(x) {
                        *g += da[h] * xi;
                    }
                }
            }
            let TaskClassifier { w1, b1, w2, b2, .. } = &mut clf;
            adam.step(&mut [w1, b1, w2, b2], &[g1, gb1, g2, gb2], cfg.learning_rate);
        }
    }
    let val_acc = if val.is_empty() {
        1.0
    } else {
        let hits = val
            .iter()
            .filter(|&&s| clf.predict(&features[s * d..(s + 1) * d]) == targets[s])
            .count();
        hits as f64 / val.len() as f64
    };
    Ok((clf, val_acc))
}

/// Retrains the task classifier from scratch on the network's head rates for
/// every replayed sample. The network is only read.
pub fn train_task_classifier(
    net: &SpikingNetwork,
    buffer: &ReplayBuffer,
    cfg: &ClassifierConfig,
    train: &TrainConfig,
) -> Result<(TaskClassifier, f64)> {
    if buffer.is_empty() {
        return Err(Error::state("replay buffer is empty"));
    }
    let heads = net.heads();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut width = 0;
    for entry in buffer.tasks() {
        let head = heads
            .iter()
            .position(|h| h.task() as usize == entry.task)
            .ok_or_else(|| Error::state(format!("replayed task {} has no head", entry.task)))?;
        let n = entry.positions.len();
        let d = buffer.features;
        let rates = infer_frames(net, n, train, entry.task, Purpose::Replay, |pos| {
            let mut frame = Vec::with_capacity(pos.len() * d);
            for &p in pos {
                frame.extend_from_slice(&entry.inputs[p * d..(p + 1) * d]);
            }
            frame
        })?;
        width = rates.width;
        features.extend_from_slice(&rates.values);
        targets.extend(std::iter::repeat(head).take(n));
    }
    fit_classifier(&features, width, &targets, heads.len(), cfg, train.seed)
}

/// Class-incremental prediction for one sample: the classifier picks a head,
/// then the largest rate within that head. Returns `(head, global class)`
/// where global classes number heads' classes consecutively.
pub fn predict_cil(rates: &HeadRates, sample: usize, classifier: &TaskClassifier) -> (usize, usize) {
    let head = classifier.predict(rates.row(sample));
    let class = argmax(rates.head(sample, head));
    (head, rates.offsets[head] + class)
}

/// Counts for one task's test set: correct task ids, correct CIL
/// predictions and correct predictions with the true head substituted.
pub fn cil_counts(
    rates: &HeadRates,
    true_head: usize,
    labels: &[usize],
    classifier: &TaskClassifier,
) -> (usize, usize, usize) {
    let (mut tid, mut cil) = (0, 0);
    for (s, &y) in labels.iter().enumerate().take(rates.samples) {
        let (head, global) = predict_cil(rates, s, classifier);
        if head == true_head {
            tid += 1;
            if global == rates.offsets[true_head] + y {
                cil += 1;
            }
        }
    }
    (tid, cil, til_correct(rates, true_head, labels))
}

/// CIL over the union of `tasks`' test sets.
pub fn evaluate_cil(
    net: &SpikingNetwork,
    classifier: &TaskClassifier,
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
    validation_accuracy: f64,
) -> Result<CilMetrics> {
    let mut m = empty_cil(tasks.len(), validation_accuracy);
    for task in tasks {
        let head = crate::continual::head_for_task(net, task.id)?;
        let rates = crate::continual::infer_rates(net, &task.test, cfg, None, task.id)?;
        let (a, b, c) = cil_counts(&rates, head, &task.test.labels(), classifier);
        add_counts(&mut m, task.test.len(), a, b, c);
    }
    finish_cil(&mut m);
    Ok(m)
}

pub(crate) fn empty_cil(tasks: usize, validation_accuracy: f64) -> CilMetrics {
    CilMetrics {
        tasks,
        samples: 0,
        task_id_correct: 0,
        cil_correct: 0,
        oracle_correct: 0,
        task_id_accuracy: 0.0,
        cil_accuracy: 0.0,
        oracle_accuracy: 0.0,
        classifier_validation_accuracy: validation_accuracy,
    }
}

pub(crate) fn add_counts(m: &mut CilMetrics, samples: usize, tid: usize, cil: usize, oracle: usize) {
    m.samples += samples;
    m.task_id_correct += tid;
    m.cil_correct += cil;
    m.oracle_correct += oracle;
}

pub(crate) fn finish_cil(m: &mut CilMetrics) {
    let n = m.samples.max(1) as f64;
    m.task_id_accuracy = m.task_id_correct as f64 / n;
    m.cil_accuracy = m.cil_correct as f64 / n;
    m.oracle_accuracy = m.oracle_correct as f64 / n;
}
