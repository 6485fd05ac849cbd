//! Experiment orchestration: configuration and presets, the task sequence
//! with evaluation after every task, and run/resume with on-disk artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::cil::{
    add_counts, cil_counts, collect_replay, empty_cil, finish_cil, train_task_classifier, ClassifierConfig,
    ReplayBuffer, TaskClassifier, REPLAY_PER_TASK,
};
use crate::continual::{
    build_benchmark, head_for_task, infer_rates, probe_digest, til_correct, train_task, BenchmarkKind,
    BenchmarkSpec, TaskSpec, TrainConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{EpochTiming, MetricsRecord, TaskTiming, Timing};
use crate::snn::{ArchitectureSpec, SpikingNetwork};
use crate::structure::PruningState;

pub const METRICS_FILE: &str = "metrics.json";
pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CilConfig {
    pub enabled: bool,
    pub replay_per_task: usize,
    pub classifier: ClassifierConfig,
}

impl Default for CilConfig {
    fn default() -> Self {
        CilConfig {
            enabled: true,
            replay_per_task: REPLAY_PER_TASK,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub benchmark: BenchmarkSpec,
    pub train: TrainConfig,
    pub cil: CilConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "mnist-desk".into(),
            benchmark: BenchmarkSpec::default(),
            train: TrainConfig::default(),
            cil: CilConfig::default(),
        }
    }
}

/// Names accepted by [`preset`]; sweeps also take other values.
pub const PRESETS: &[&str] = &[
    "mnist-desk",
    "mnist-full",
    "ablation-no-pruning",
    "ablation-no-reuse",
    "sweep-rho-5",
    "sweep-rho-7.5",
    "sweep-rho-10",
    "sweep-rho-12.5",
    "sweep-rho-15",
    "sweep-rho-c-0.5",
    "sweep-rho-f-1",
    "cifar100-10",
    "cifar100-20",
];

/// A named configuration. Sweeps are `sweep-rho-<percent>`,
/// `sweep-rho-c-<value>` and `sweep-rho-f-<value>` on top of `mnist-desk`.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        name: name.to_string(),
        ..ExperimentConfig::default()
    };
    let parse = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::Config(vec![format!("preset {name}: '{v}' is not a number")]))
    };
    match name {
        "mnist-desk" => {}
        "mnist-full" => {
            cfg.benchmark.tasks = 10;
            cfg.benchmark.train_per_task = None;
        }
        "ablation-no-pruning" => cfg.train.pruning = false,
        "ablation-no-reuse" => cfg.train.wiring = crate::structure::WiringMode::NewOnly,
        "cifar100-10" | "cifar100-20" => {
            let tasks = if name == "cifar100-10" { 10 } else { 20 };
            cfg.benchmark = BenchmarkSpec {
                kind: BenchmarkKind::SplitCifar100,
                tasks,
                classes_per_task: 100 / tasks,
                train_per_task: None,
                architecture: ArchitectureSpec::cifar(),
                ..BenchmarkSpec::default()
            };
            cfg.train.rho_c = 0.75;
            cfg.train.rho_f = 1.25;
            cfg.cil.classifier.hidden = 500;
        }
        _ => {
            if let Some(v) = name.strip_prefix("sweep-rho-c-") {
                cfg.train.rho_c = parse(v)?;
            } else if let Some(v) = name.strip_prefix("sweep-rho-f-") {
                cfg.train.rho_f = parse(v)?;
            } else if let Some(v) = name.strip_prefix("sweep-rho-") {
                cfg.train.rho_percent = parse(v)?;
            } else {
                return Err(Error::Config(vec![format!(
                    "unknown preset '{name}' (known: {})",
                    PRESETS.join(", ")
                )]));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.benchmark.problems();
        p.extend(self.train.problems());
        if self.cil.enabled {
            if self.cil.replay_per_task == 0 {
                p.push("cil.replay_per_task must be at least 1".into());
            }
            p.extend(self.cil.classifier.problems());
        }
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

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Five tasks of 10,000 training samples each.
    pub fn apply_desk_scale(&mut self) {
        self.benchmark.tasks = 5;
        self.benchmark.train_per_task = Some(10_000);
    }

    /// Uses `seed` for both the benchmark and the training streams.
    pub fn set_seed(&mut self, seed: u64) {
        self.benchmark.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Everything a run carries from one task to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceState {
    pub net: SpikingNetwork,
    pub pruning: PruningState,
    pub metrics: MetricsRecord,
    pub replay: Option<ReplayBuffer>,
    pub classifier: Option<TaskClassifier>,
    pub classifier_validation: f64,
    pub next_task: usize,
}

impl SequenceState {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let net = SpikingNetwork::new(&cfg.benchmark.architecture)?;
        let pruning = PruningState::new(net.layers().len(), cfg.train.rho_c, cfg.train.rho_f, cfg.train.eta);
        let replay = cfg
            .cil
            .enabled
            .then(|| ReplayBuffer::new(cfg.cil.replay_per_task, net.input_features()));
        Ok(SequenceState {
            net,
            pruning,
            metrics: MetricsRecord::new(cfg.to_value()),
            replay,
            classifier: None,
            classifier_validation: 0.0,
            next_task: 0,
        })
    }
}

/// Learns `tasks[state.next_task..]` in order. After each task every learned
/// task is evaluated and `after_task` is called; returning `false` stops.
pub fn run_sequence(
    cfg: &ExperimentConfig,
    tasks: &[TaskSpec],
    state: &mut SequenceState,
    timing: &mut Timing,
    mut after_task: impl FnMut(&SequenceState, &Timing) -> Result<bool>,
) -> Result<()> {
    cfg.validate()?;
    state.pruning.rho_c = cfg.train.rho_c;
    state.pruning.rho_f = cfg.train.rho_f;
    state.pruning.eta = cfg.train.eta;
    while state.next_task < tasks.len() {
        let i = state.next_task;
        let task = &tasks[i];
        let started = Instant::now();
        let outcome = train_task(&mut state.net, &mut state.pruning, task, &cfg.train)?;
        for (e, &s) in outcome.epoch_seconds.iter().enumerate() {
            timing.epochs.push(EpochTiming {
                task: i,
                epoch: e,
                seconds: s,
            });
        }
        state.metrics.epochs.extend(outcome.epochs);
        state.metrics.tasks.push(outcome.metrics);
        let train_seconds = started.elapsed().as_secs_f64();

        let started = Instant::now();
        if let Some(buffer) = state.replay.as_mut() {
            collect_replay(buffer, task, cfg.train.seed)?;
            let (clf, val) = train_task_classifier(&state.net, buffer, &cfg.cil.classifier, &cfg.train)?;
            state.classifier = Some(clf);
            state.classifier_validation = val;
        }
        let classifier_seconds = started.elapsed().as_secs_f64();
        let started = Instant::now();
        evaluate_step(cfg, &tasks[..=i], state)?;
        timing.tasks.push(TaskTiming {
            task: i,
            train_seconds,
            classifier_seconds,
            evaluation_seconds: started.elapsed().as_secs_f64(),
        });
        state.next_task = i + 1;
        if !after_task(state, timing)? {
            break;
        }
    }
    Ok(())
}

/// Fills row `i` of the accuracy matrix, the probe digests and, with CIL on,
/// the CIL counts, all from one inference pass per task.
fn evaluate_step(cfg: &ExperimentConfig, learned: &[TaskSpec], state: &mut SequenceState) -> Result<()> {
    let m = &mut state.metrics;
    let i = learned.len() - 1;
    m.test_sizes.push(learned[i].test.len());
    let mut correct = Vec::with_capacity(learned.len());
    let mut digests = Vec::with_capacity(learned.len());
    let mut cil = state
        .classifier
        .as_ref()
        .map(|_| empty_cil(learned.len(), state.classifier_validation));
    for task in learned {
        let head = head_for_task(&state.net, task.id)?;
        let rates = infer_rates(&state.net, &task.test, &cfg.train, None, task.id)?;
        let labels = task.test.labels();
        correct.push(til_correct(&rates, head, &labels));
        digests.push(probe_digest(&rates, head, cfg.train.probe_size));
        if let (Some(c), Some(clf)) = (cil.as_mut(), state.classifier.as_ref()) {
            let (tid, hit, oracle) = cil_counts(&rates, head, &labels, clf);
            add_counts(c, task.test.len(), tid, hit, oracle);
        }
    }
    let accuracy: Vec<f64> = correct
        .iter()
        .zip(&m.test_sizes)
        .map(|(&c, &n)| c as f64 / n.max(1) as f64)
        .collect();
    m.average_accuracy.push(accuracy.iter().sum::<f64>() / accuracy.len() as f64);
    m.accuracy.push(accuracy);
    m.correct.push(correct);
    m.probe_digests.push(digests);
    if let Some(mut c) = cil {
        finish_cil(&mut c);
        m.cil.push(c);
    }
    Ok(())
}

/// Where a run reads data and writes artifacts.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub data_root: PathBuf,
}

impl RunPaths {
    pub fn metrics(&self) -> PathBuf {
        self.out_dir.join(METRICS_FILE)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.out_dir.join(CHECKPOINT_FILE)
    }
}

/// Options shared by [`run`] and [`resume`].
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stop once this many tasks have been learned in total.
    pub stop_after: Option<usize>,
}

/// One line per learned task.
pub fn task_summary(m: &MetricsRecord) -> String {
    let i = m.tasks_learned() - 1;
    let mut line = format!(
        "task {i}: accuracy {:.2}%, average {:.2}%",
        m.accuracy[i][i] * 100.0,
        m.average_accuracy[i] * 100.0
    );
    if let Some(t) = m.tasks.get(i) {
        line.push_str(&format!(", compression {:.2}%", t.params.compression * 100.0));
    }
    if let Some(c) = m.cil.last().filter(|c| c.tasks == i + 1) {
        line.push_str(&format!(
            ", task-id {:.2}%, CIL {:.2}%",
            c.task_id_accuracy * 100.0,
            c.cil_accuracy * 100.0
        ));
    }
    line
}

fn write_artifacts(paths: &RunPaths, state: &SequenceState, timing: &Timing) -> Result<()> {
    state.metrics.save(&paths.metrics())?;
    std::fs::write(paths.out_dir.join(ACCURACY_CSV), state.metrics.accuracy_csv())?;
    timing.save(&paths.out_dir.join(TIMING_FILE))?;
    checkpoint::save(&paths.checkpoint(), state)?;
    Ok(())
}

fn drive(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    opts: &RunOptions,
    mut state: SequenceState,
    mut timing: Timing,
    progress: &mut dyn FnMut(&str),
) -> Result<SequenceState> {
    std::fs::create_dir_all(&paths.out_dir)?;
    let load_started = Instant::now();
    let tasks = build_benchmark(&cfg.benchmark, &paths.data_root)?;
    log::info!("built {} tasks in {:.1}s", tasks.len(), load_started.elapsed().as_secs_f64());
    run_sequence(cfg, &tasks, &mut state, &mut timing, |s, t| {
        write_artifacts(paths, s, t)?;
        progress(&task_summary(&s.metrics));
        Ok(opts.stop_after.map_or(true, |n| s.next_task < n))
    })?;
    Ok(state)
}

/// Runs an experiment from scratch, writing metrics, CSV, timing and a
/// checkpoint to `paths.out_dir` after every task.
pub fn run(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    opts: &RunOptions,
    progress: &mut dyn FnMut(&str),
) -> Result<MetricsRecord> {
    cfg.validate()?;
    let state = SequenceState::new(cfg)?;
    Ok(drive(cfg, paths, opts, state, Timing::default(), progress)?.metrics)
}

/// Differences between the configuration stored in a checkpoint and `cfg`
/// that are allowed on resume. Benchmark changes are errors.
pub fn resume_changes(stored: &ExperimentConfig, cfg: &ExperimentConfig) -> Result<Vec<String>> {
    if stored.benchmark != cfg.benchmark {
        return Err(Error::Config(vec![
            "benchmark differs from the checkpoint; tasks would not match".into(),
        ]));
    }
    if stored.cil.enabled != cfg.cil.enabled {
        return Err(Error::Config(vec!["cil.enabled differs from the checkpoint".into()]));
    }
    let (a, b) = (
        serde_json::to_value(&stored.train)?,
        serde_json::to_value(&cfg.train)?,
    );
    let mut changes = Vec::new();
    if let (Some(a), Some(b)) = (a.as_object(), b.as_object()) {
        for (k, v) in b {
            if a.get(k) != Some(v) {
                changes.push(format!(
                    "train.{k} changed from {} to {v}; the new value applies to future tasks",
                    a.get(k).map_or("unset".to_string(), |x| x.to_string())
                ));
            }
        }
    }
    if stored.cil.classifier != cfg.cil.classifier {
        changes.push("cil.classifier changed; the new settings apply from the next retraining".into());
    }
    Ok(changes)
}

/// Continues a run from its checkpoint. With `cfg` absent the stored
/// configuration is used.
pub fn resume(
    checkpoint_path: &Path,
    cfg: Option<&ExperimentConfig>,
    paths: &RunPaths,
    opts: &RunOptions,
    progress: &mut dyn FnMut(&str),
) -> Result<MetricsRecord> {
    let mut state = checkpoint::load(checkpoint_path)?;
    let stored: ExperimentConfig = serde_json::from_value(state.metrics.config.clone())
        .map_err(|e| Error::Integrity(format!("checkpoint configuration is unreadable: {e}")))?;
    let cfg = match cfg {
        Some(c) => {
            c.validate()?;
            for w in resume_changes(&stored, c)? {
                log::warn!("{w}");
            }
            c.clone()
        }
        None => stored,
    };
    state.metrics.config = cfg.to_value();
    let timing_path = paths.out_dir.join(TIMING_FILE);
    let mut timing: Timing = std::fs::read_to_string(&timing_path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    timing.epochs.retain(|e| e.task < state.next_task);
    timing.tasks.retain(|t| t.task < state.next_task);
    Ok(drive(&cfg, paths, opts, state, timing, progress)?.metrics)
}
