//! Task sequences and the task-incremental training loop.
//!
//! For every task: grow, wire, add a head, then train for `epochs` epochs
//! with one pruning step after each epoch's updates, and finally freeze.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{encode, load_cifar100_dir, load_mnist_dir, EncodingMode, ImageDataset, Permutation};
use crate::error::{Error, Result};
use crate::metrics::{digest_f32, EpochMetrics, TaskMetrics};
use crate::seed::{stream, stream_seed, Purpose};
use crate::snn::{argmax, cross_entropy_on_rates, sgd_update, ArchitectureSpec, LifParams, SpikingNetwork};
use crate::structure::{
    add_output_head, freeze_task, grow_for_task, parameter_stats, pruning_step, wire_new_neurons, HeadInit, ImportanceMode,
    PrunedNeuron, PruningState, WiringMode,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    #[default]
    PermutedMnist,
    SplitCifar100,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub kind: BenchmarkKind,
    pub tasks: usize,
    /// Seed for permutations and subsets.
    pub seed: u64,
    /// Task 0 keeps the original pixel order.
    pub identity_first: bool,
    /// Training samples per task; `None` keeps the whole split.
    pub train_per_task: Option<usize>,
    /// Test samples per task; `None` keeps the whole split.
    pub test_per_task: Option<usize>,
    /// Classes per task for class-split benchmarks.
    pub classes_per_task: usize,
    pub architecture: ArchitectureSpec,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            kind: BenchmarkKind::PermutedMnist,
            tasks: 5,
            seed: 0,
            identity_first: true,
            train_per_task: Some(10_000),
            test_per_task: None,
            classes_per_task: 10,
            architecture: ArchitectureSpec::mnist(),
        }
    }
}

impl BenchmarkSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.tasks == 0 {
            p.push("benchmark.tasks must be at least 1".into());
        }
        if self.train_per_task == Some(0) {
            p.push("benchmark.train_per_task must be positive".into());
        }
        if self.test_per_task == Some(0) {
            p.push("benchmark.test_per_task must be positive".into());
        }
        if self.kind == BenchmarkKind::SplitCifar100 {
            if self.classes_per_task == 0 || self.classes_per_task * self.tasks > 100 {
                p.push(format!(
                    "benchmark.classes_per_task {} x {} tasks does not fit 100 classes",
                    self.classes_per_task, self.tasks
                ));
            }
        }
        if let Err(Error::Config(errs)) = self.architecture.resolve() {
            p.extend(errs.into_iter().map(|e| format!("benchmark.{e}")));
        }
        p
    }
}

/// A view of one task's samples: a shared source dataset, the selected
/// indices, an optional pixel permutation and an optional label remap.
#[derive(Clone, Debug)]
pub struct TaskData {
    source: Arc<ImageDataset>,
    indices: Vec<usize>,
    permutation: Option<Permutation>,
    /// Global class → local label, for class-split tasks.
    label_map: Option<Vec<Option<usize>>>,
}

impl TaskData {
    pub fn new(
        source: Arc<ImageDataset>,
        indices: Vec<usize>,
        permutation: Option<Permutation>,
        label_map: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= source.len()) {
            return Err(Error::input(format!("sample index {bad} outside dataset of {}", source.len())));
        }
        if let Some(p) = &permutation {
            if p.len() != source.height * source.width {
                return Err(Error::shape("permutation does not match image size"));
            }
        }
        Ok(TaskData {
            source,
            indices,
            permutation,
            label_map,
        })
    }

    /// Every sample of `source`, unchanged.
    pub fn whole(source: Arc<ImageDataset>) -> Self {
        let indices = (0..source.len()).collect();
        TaskData {
            source,
            indices,
            permutation: None,
            label_map: None,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn features(&self) -> usize {
        self.source.features()
    }

    pub fn permutation(&self) -> Option<&Permutation> {
        self.permutation.as_ref()
    }

    pub fn label(&self, pos: usize) -> usize {
        let y = self.source.labels[self.indices[pos]];
        match &self.label_map {
            Some(map) => map[y].expect("task holds only mapped classes"),
            None => y,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|p| self.label(p)).collect()
    }

    /// Writes sample `pos` (`C × H × W`) into `out`.
    pub fn write_sample(&self, pos: usize, out: &mut [f32]) {
        let img = self.source.image(self.indices[pos]);
        match &self.permutation {
            None => out.copy_from_slice(img),
            Some(p) => {
                let plane = p.len();
                for (src, dst) in img.chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
                    p.apply(src, dst);
                }
            }
        }
    }

    /// Sample-major frame and labels for the given positions.
    pub fn gather(&self, positions: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let f = self.features();
        let mut frame = vec![0.0f32; positions.len() * f];
        for (k, &p) in positions.iter().enumerate() {
            self.write_sample(p, &mut frame[k * f..(k + 1) * f]);
        }
        (frame, positions.iter().map(|&p| self.label(p)).collect())
    }

    /// Materializes the view as a standalone dataset.
    pub fn to_dataset(&self) -> ImageDataset {
        let positions: Vec<usize> = (0..self.len()).collect();
        let (images, labels) = self.gather(&positions);
        ImageDataset {
            channels: self.source.channels,
            height: self.source.height,
            width: self.source.width,
            images,
            labels,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub id: usize,
    pub classes: usize,
    pub train: TaskData,
    pub test: TaskData,
    /// Global class ids of the task's local labels, for class-split tasks.
    pub class_subset: Option<Vec<usize>>,
}

fn sample_indices(len: usize, keep: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if let Some(n) = keep {
        if n < len {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
        }
    }
    idx
}

/// Loads the benchmark's dataset from `root` and builds its tasks.
///
/// Permuted MNIST reads the four IDX files from `root/mnist`; split CIFAR-100
/// reads `train.bin` and `test.bin` from `root/cifar-100-binary`.
pub fn build_benchmark(spec: &BenchmarkSpec, root: &Path) -> Result<Vec<TaskSpec>> {
    let (train, test) = match spec.kind {
        BenchmarkKind::PermutedMnist => load_mnist_dir(&root.join("mnist"))?,
        BenchmarkKind::SplitCifar100 => load_cifar100_dir(&root.join("cifar-100-binary"))?,
    };
    build_benchmark_from(spec, Arc::new(train), Arc::new(test))
}

/// Builds tasks from already loaded train and test splits.
pub fn build_benchmark_from(
    spec: &BenchmarkSpec,
    train: Arc<ImageDataset>,
    test: Arc<ImageDataset>,
) -> Result<Vec<TaskSpec>> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let [c, h, w] = spec.architecture.input;
    for ds in [&train, &test] {
        if [ds.channels, ds.height, ds.width] != [c, h, w] {
            return Err(Error::shape(format!(
                "dataset images are {}x{}x{}, architecture expects {c}x{h}x{w}",
                ds.channels, ds.height, ds.width
            )));
        }
    }
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let ts = t as u64;
        match spec.kind {
            BenchmarkKind::PermutedMnist => {
                let classes = train.num_classes().max(test.num_classes());
                let permutation = if t == 0 && spec.identity_first {
                    None
                } else {
                    Some(Permutation::from_seed(h * w, stream_seed(spec.seed, ts, Purpose::Permutation, 0)))
                };
                let tr = sample_indices(
                    train.len(),
                    spec.train_per_task,
                    stream_seed(spec.seed, ts, Purpose::TrainSubset, 0),
                );
                let te = sample_indices(
                    test.len(),
                    spec.test_per_task,
                    stream_seed(spec.seed, ts, Purpose::TestSubset, 0),
                );
                tasks.push(TaskSpec {
                    id: t,
                    classes,
                    train: TaskData::new(train.clone(), tr, permutation.clone(), None)?,
                    test: TaskData::new(test.clone(), te, permutation, None)?,
                    class_subset: None,
                });
            }
            BenchmarkKind::SplitCifar100 => {
                let k = spec.classes_per_task;
                let subset: Vec<usize> = (t * k..(t + 1) * k).collect();
                let mut map = vec![None; 100];
                for (local, &g) in subset.iter().enumerate() {
                    map[g] = Some(local);
                }
                let pick = |ds: &ImageDataset, keep: Option<usize>, purpose: Purpose| {
                    let all: Vec<usize> = (0..ds.len()).filter(|&i| map[ds.labels[i]].is_some()).collect();
                    let chosen = sample_indices(all.len(), keep, stream_seed(spec.seed, ts, purpose, 0));
                    chosen.into_iter().map(|p| all[p]).collect::<Vec<_>>()
                };
                let tr = pick(&train, spec.train_per_task, Purpose::TrainSubset);
                let te = pick(&test, spec.test_per_task, Purpose::TestSubset);
                tasks.push(TaskSpec {
                    id: t,
                    classes: k,
                    train: TaskData::new(train.clone(), tr, None, Some(map.clone()))?,
                    test: TaskData::new(test.clone(), te, None, Some(map))?,
                    class_subset: Some(subset),
                });
            }
        }
    }
    Ok(tasks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Percentage of each layer's capacity grown per task.
    pub rho_percent: f64,
    /// Pruning strength for convolutional layers.
    pub rho_c: f64,
    /// Pruning strength for dense layers.
    pub rho_f: f64,
    pub eta: f64,
    /// Turns the pruning function off (the no-pruning ablation).
    pub pruning: bool,
    pub wiring: WiringMode,
    /// Multiplier on the Glorot bound for freshly wired hidden weights.
    pub init_gain: f32,
    pub head_init: HeadInit,
    pub importance: ImportanceMode,
    pub lif: LifParams,
    pub encoding: EncodingMode,
    /// Multiplier applied to head rates before the softmax.
    pub readout_scale: f32,
    pub eval_batch_size: usize,
    /// Test samples per task whose head rates are digested after every task.
    pub probe_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            rho_percent: 10.0,
            rho_c: 0.5,
            rho_f: 1.0,
            eta: 10.0,
            pruning: true,
            wiring: WiringMode::Reuse,
            init_gain: 2.0,
            head_init: HeadInit::Balanced(4.0),
            importance: ImportanceMode::Signed,
            lif: LifParams::default(),
            encoding: EncodingMode::ConstantCurrent,
            readout_scale: 4.0,
            eval_batch_size: 250,
            probe_size: 64,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.epochs == 0 {
            p.push("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            p.push("train.batch_size must be at least 1".into());
        }
        if self.eval_batch_size == 0 {
            p.push("train.eval_batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            p.push(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.rho_percent > 0.0 && self.rho_percent <= 100.0) {
            p.push(format!("train.rho_percent must be in (0, 100], got {}", self.rho_percent));
        }
        if !self.rho_c.is_finite() {
            p.push(format!("train.rho_c must be finite, got {}", self.rho_c));
        }
        if !self.rho_f.is_finite() {
            p.push(format!("train.rho_f must be finite, got {}", self.rho_f));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            p.push(format!("train.eta must be positive, got {}", self.eta));
        }
        if !(self.init_gain.is_finite() && self.init_gain > 0.0) {
            p.push(format!("train.init_gain must be positive, got {}", self.init_gain));
        }
        if let Some(e) = self.head_init.problem() {
            p.push(format!("train.head_init: {e}"));
        }
        if !(self.readout_scale.is_finite() && self.readout_scale > 0.0) {
            p.push(format!("train.readout_scale must be positive, got {}", self.readout_scale));
        }
        p.extend(self.lif.problems().into_iter().map(|e| format!("train.lif.{e}")));
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// What one call of [`train_task`] did.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub head: usize,
    pub grown: Vec<Vec<usize>>,
    pub pruned: Vec<PrunedNeuron>,
    pub frozen: Vec<Vec<usize>>,
    pub epochs: Vec<EpochMetrics>,
    pub metrics: TaskMetrics,
    /// Wall-clock seconds per epoch.
    pub epoch_seconds: Vec<f64>,
}

/// Learns one task: grow, wire, add a head, train with per-epoch pruning, freeze.
pub fn train_task(
    net: &mut SpikingNetwork,
    pruning: &mut PruningState,
    task: &TaskSpec,
    cfg: &TrainConfig,
) -> Result<TaskOutcome> {
    cfg.validate()?;
    if task.train.is_empty() {
        return Err(Error::input(format!("task {} has no training samples", task.id)));
    }
    if task.train.features() != net.input_features() {
        return Err(Error::shape(format!(
            "task {} samples have {} features, network expects {}",
            task.id,
            task.train.features(),
            net.input_features()
        )));
    }
    let t = task.id as u64;
    let grown = grow_for_task(net, cfg.rho_percent, stream_seed(cfg.seed, t, Purpose::Growth, 0))?;
    for (l, slots) in grown.iter().enumerate() {
        pruning.register(l, slots);
    }
    let mut init_rng = stream(cfg.seed, t, Purpose::Init, 0);
    for l in 0..net.layers().len() {
        wire_new_neurons(net, l, cfg.wiring, cfg.init_gain, &mut init_rng);
    }
    let head = add_output_head(net, task.classes, task.id as u32, cfg.wiring, cfg.head_init, &mut init_rng)?;

    let layers = net.layers().len();
    let mut pruned_all = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let n = task.train.len();
    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, t, Purpose::Shuffle, epoch as u64));
        let mask = net.connectivity_mask();
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (frame, labels) = task.train.gather(chunk);
            let enc_seed = stream_seed(cfg.seed, t, Purpose::Encoding, ((epoch as u64) << 32) | b as u64);
            let batch = encode(&frame, chunk.len(), cfg.encoding, cfg.lif.t_steps, enc_seed)?;
            let pass = net.forward(&batch, &cfg.lif, true)?;
            let rates = &pass.rates()[head];
            let (loss, grad) = cross_entropy_on_rates(rates, &labels, cfg.readout_scale)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss in task {} epoch {epoch}", task.id)));
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(s, &y)| argmax(rates.row(s)) == y)
                .count();
            let grads = net.backward(&pass, head, &grad)?;
            sgd_update(net, &grads, cfg.learning_rate, &mask)?;
        }
        let mut pruned_counts = vec![0usize; layers];
        if cfg.pruning {
            let removed = pruning_step(net, pruning, cfg.importance, task.id)?;
            for p in &removed {
                pruned_counts[p.layer] += 1;
            }
            pruned_all.extend(removed);
        }
        let new_neurons = net.layers().iter().map(|l| l.pool().counts().new).collect();
        let m = EpochMetrics {
            task: task.id,
            epoch,
            loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            new_neurons,
            pruned: pruned_counts,
        };
        log::debug!(
            "task {} epoch {epoch}: loss {:.4}, train accuracy {:.4}, new {:?}",
            task.id,
            m.loss,
            m.train_accuracy,
            m.new_neurons
        );
        epochs.push(m);
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    let frozen = freeze_task(net, pruning, task.id as u32);

    let final_acc = epochs.last().map_or(0.0, |e| e.train_accuracy);
    let epochs_to_95 = epochs
        .iter()
        .position(|e| e.train_accuracy >= 0.95 * final_acc)
        .unwrap_or(0);
    let mut pruned_per_layer = vec![0usize; layers];
    for p in &pruned_all {
        pruned_per_layer[p.layer] += 1;
    }
    let metrics = TaskMetrics {
        task: task.id,
        grown: grown.iter().map(Vec::len).collect(),
        pruned: pruned_per_layer,
        frozen: frozen.iter().map(Vec::len).collect(),
        params: parameter_stats(net),
        epochs_to_95,
    };
    Ok(TaskOutcome {
        head,
        grown,
        pruned: pruned_all,
        frozen,
        epochs,
        metrics,
        epoch_seconds,
    })
}

/// Rates of every head for every sample of `data`, as `[sample][class]`
/// with heads concatenated in order.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadRates {
    pub samples: usize,
    /// Start of each head's classes within a row.
    pub offsets: Vec<usize>,
    pub width: usize,
    pub values: Vec<f32>,
}

impl HeadRates {
    pub fn row(&self, s: usize) -> &[f32] {
        &self.values[s * self.width..(s + 1) * self.width]
    }

    pub fn head(&self, s: usize, h: usize) -> &[f32] {
        let end = self.offsets.get(h + 1).copied().unwrap_or(self.width);
        &self.row(s)[self.offsets[h]..end]
    }
}

pub fn head_offsets(net: &SpikingNetwork) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(net.heads().len());
    let mut width = 0;
    for h in net.heads() {
        offsets.push(width);
        width += h.classes();
    }
    (offsets, width)
}

/// Runs inference over the first `limit` samples of `data` (all when `None`).
pub fn infer_rates(
    net: &SpikingNetwork,
    data: &TaskData,
    cfg: &TrainConfig,
    limit: Option<usize>,
    task: usize,
) -> Result<HeadRates> {
    let n = limit.map_or(data.len(), |l| l.min(data.len()));
    infer_frames(net, n, cfg, task, Purpose::Evaluation, |pos| data.gather(pos).0)
}

/// Runs inference over `n` samples; `gather` returns the sample-major
/// frame for a slice of sample positions. Encoding streams are keyed by
/// `(task, purpose, batch index)`.
pub fn infer_frames(
    net: &SpikingNetwork,
    n: usize,
    cfg: &TrainConfig,
    task: usize,
    purpose: Purpose,
    gather: impl Fn(&[usize]) -> Vec<f32>,
) -> Result<HeadRates> {
    let (offsets, width) = head_offsets(net);
    let mut values = Vec::with_capacity(n * width);
    let positions: Vec<usize> = (0..n).collect();
    for (b, chunk) in positions.chunks(cfg.eval_batch_size).enumerate() {
        let frame = gather(chunk);
        let seed = stream_seed(cfg.seed, task as u64, purpose, b as u64);
        let batch = encode(&frame, chunk.len(), cfg.encoding, cfg.lif.t_steps, seed)?;
        let pass = net.forward(&batch, &cfg.lif, false)?;
        for s in 0..chunk.len() {
            for r in pass.rates() {
                values.extend_from_slice(r.row(s));
            }
        }
    }
    Ok(HeadRates {
        samples: n,
        offsets,
        width,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilEvaluation {
    pub correct: Vec<usize>,
    pub totals: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub average: f64,
}

/// Number of samples whose within-head argmax matches the label.
pub fn til_correct(rates: &HeadRates, head: usize, labels: &[usize]) -> usize {
    (0..rates.samples)
        .filter(|&s| argmax(rates.head(s, head)) == labels[s])
        .count()
}

/// Task-incremental accuracy of each of `tasks` on its own head.
pub fn evaluate_til(net: &SpikingNetwork, tasks: &[TaskSpec], cfg: &TrainConfig) -> Result<TilEvaluation> {
    let mut correct = Vec::with_capacity(tasks.len());
    let mut totals = Vec::with_capacity(tasks.len());
    for task in tasks {
        let head = head_for_task(net, task.id)?;
        let rates = infer_rates(net, &task.test, cfg, None, task.id)?;
        correct.push(til_correct(&rates, head, &task.test.labels()));
        totals.push(task.test.len());
    }
    Ok(summarize_til(correct, totals))
}

pub fn summarize_til(correct: Vec<usize>, totals: Vec<usize>) -> TilEvaluation {
    let accuracy: Vec<f64> = correct
        .iter()
        .zip(&totals)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    let average = if accuracy.is_empty() {
        0.0
    } else {
        accuracy.iter().sum::<f64>() / accuracy.len() as f64
    };
    TilEvaluation {
        correct,
        totals,
        accuracy,
        average,
    }
}

/// The head trained for `task`.
pub fn head_for_task(net: &SpikingNetwork, task: usize) -> Result<usize> {
    net.heads()
        .iter()
        .position(|h| h.task() as usize == task)
        .ok_or_else(|| Error::input(format!("task {task} has not been learned")))
}

/// Digest of head `head`'s rates over the first `probe` rows of `rates`.
pub fn probe_digest(rates: &HeadRates, head: usize, probe: usize) -> String {
    let mut v = Vec::new();
    for s in 0..probe.min(rates.samples) {
        v.extend_from_slice(rates.head(s, head));
    }
    digest_f32(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::HiddenSpec;

    fn toy_source(n: usize, seed: u64) -> Arc<ImageDataset> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n * 16).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        let labels = (0..n).map(|i| i % 4).collect();
        Arc::new(ImageDataset::new(1, 4, 4, images, labels).unwrap())
    }

    fn toy_spec(tasks: usize) -> BenchmarkSpec {
        BenchmarkSpec {
            tasks,
            train_per_task: Some(40),
            test_per_task: Some(20),
            architecture: ArchitectureSpec {
                input: [1, 4, 4],
                hidden: vec![HiddenSpec::Dense { units: 20 }],
            },
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn permuted_tasks_share_source_and_differ_by_permutation() {
        let tasks = build_benchmark_from(&toy_spec(3), toy_source(100, 1), toy_source(50, 2)).unwrap();
        assert_eq!(tasks.len(), 3);
        assert!(tasks[0].train.permutation().is_none());
        assert_ne!(tasks[1].train.permutation(), tasks[2].train.permutation());
        assert_eq!(tasks[1].train.permutation(), tasks[1].test.permutation());
        assert_eq!(tasks[0].train.len(), 40);
        assert_eq!(tasks[0].test.len(), 20);
        let again = build_benchmark_from(&toy_spec(3), toy_source(100, 1), toy_source(50, 2)).unwrap();
        assert_eq!(again[2].train.to_dataset(), tasks[2].train.to_dataset());
        // Pixel multiset is preserved by the permutation.
        let a = tasks[1].train.to_dataset();
        let src = toy_source(100, 1);
        let mut x = a.image(0).to_vec();
        let first = tasks[1].train.indices[0];
        let mut y = src.image(first).to_vec();
        x.sort_by(f32::total_cmp);
        y.sort_by(f32::total_cmp);
        assert_eq!(x, y);
    }

    #[test]
    fn split_tasks_remap_labels() {
        let images = vec![0.5f32; 200 * 3 * 32 * 32];
        let labels = (0..200).map(|i| i % 100).collect();
        let ds = Arc::new(ImageDataset::new(3, 32, 32, images, labels).unwrap());
        let spec = BenchmarkSpec {
            kind: BenchmarkKind::SplitCifar100,
            tasks: 20,
            classes_per_task: 5,
            train_per_task: None,
            architecture: ArchitectureSpec::cifar(),
            ..BenchmarkSpec::default()
        };
        let tasks = build_benchmark_from(&spec, ds.clone(), ds).unwrap();
        assert_eq!(tasks.len(), 20);
        for t in &tasks {
            assert_eq!(t.classes, 5);
            assert_eq!(t.train.len(), 10);
            assert!(t.train.labels().iter().all(|&y| y < 5));
        }
    }

    #[test]
    fn config_problems_name_fields() {
        let cfg = TrainConfig {
            rho_percent: 0.0,
            epochs: 0,
            ..TrainConfig::default()
        };
        let p = cfg.problems();
        assert!(p.iter().any(|e| e.contains("rho_percent")));
        assert!(p.iter().any(|e| e.contains("epochs")));
    }

    #[test]
    fn training_freezes_survivors_and_rejects_unlearned_tasks() {
        let tasks = build_benchmark_from(&toy_spec(2), toy_source(100, 3), toy_source(400, 4)).unwrap();
        let spec = toy_spec(2);
        let mut net = SpikingNetwork::new(&spec.architecture).unwrap();
        let mut state = PruningState::new(1, 0.5, 1.0, 10.0);
        let cfg = TrainConfig {
            epochs: 2,
            rho_percent: 25.0,
            ..TrainConfig::default()
        };
        let out = train_task(&mut net, &mut state, &tasks[0], &cfg).unwrap();
        assert_eq!(out.epochs.len(), 2);
        assert!(net.layers().iter().all(|l| l.pool().counts().new == 0));
        let a = evaluate_til(&net, &tasks[..1], &cfg).unwrap();
        let b = evaluate_til(&net, &tasks[..1], &cfg).unwrap();
        assert_eq!(a, b);
        assert!(matches!(evaluate_til(&net, &tasks, &cfg), Err(Error::Input(_))));
    }
}
