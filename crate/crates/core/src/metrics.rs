//! Run metrics: accuracy matrix, per-epoch curves, structure statistics and
//! CIL results, with JSON persistence, CSV export and a text report.
//!
//! Wall-clock measurements live in [`Timing`], a separate file, so that two
//! identical runs produce byte-identical metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::ParameterStats;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub task: usize,
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    /// New neurons per layer after this epoch's pruning.
    pub new_neurons: Vec<usize>,
    /// Neurons pruned per layer at the end of this epoch.
    pub pruned: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: usize,
    pub grown: Vec<usize>,
    pub pruned: Vec<usize>,
    pub frozen: Vec<usize>,
    pub params: ParameterStats,
    /// First epoch whose training accuracy reached 95% of the final epoch's.
    pub epochs_to_95: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CilMetrics {
    /// Number of tasks learned when this evaluation ran.
    pub tasks: usize,
    pub samples: usize,
    pub task_id_correct: usize,
    pub cil_correct: usize,
    /// CIL correct count with the true task substituted for the classifier's guess.
    pub oracle_correct: usize,
    pub task_id_accuracy: f64,
    pub cil_accuracy: f64,
    pub oracle_accuracy: f64,
    /// Task-id accuracy on the held-out part of the replay buffer.
    pub classifier_validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    /// Effective configuration with every default resolved.
    pub config: serde_json::Value,
    /// `accuracy[i][j]`: accuracy on task `j` after learning task `i` (`j <= i`).
    pub accuracy: Vec<Vec<f64>>,
    pub correct: Vec<Vec<usize>>,
    pub test_sizes: Vec<usize>,
    /// Mean of `accuracy[i][0..=i]`.
    pub average_accuracy: Vec<f64>,
    /// FNV-1a digest of each learned head's rates on its task's probe batch,
    /// `probe_digests[i][j]` after learning task `i`.
    pub probe_digests: Vec<Vec<String>>,
    pub epochs: Vec<EpochMetrics>,
    pub tasks: Vec<TaskMetrics>,
    pub cil: Vec<CilMetrics>,
}

impl MetricsRecord {
    pub fn new(config: serde_json::Value) -> Self {
        MetricsRecord {
            schema_version: METRICS_SCHEMA_VERSION,
            config,
            accuracy: Vec::new(),
            correct: Vec::new(),
            test_sizes: Vec::new(),
            average_accuracy: Vec::new(),
            probe_digests: Vec::new(),
            epochs: Vec::new(),
            tasks: Vec::new(),
            cil: Vec::new(),
        }
    }

    pub fn tasks_learned(&self) -> usize {
        self.accuracy.len()
    }

    /// Final average TIL accuracy, if any task was learned.
    pub fn final_average(&self) -> Option<f64> {
        self.average_accuracy.last().copied()
    }

    /// Largest `A[j][j] - A[i][j]` over `i > j`.
    pub fn max_forgetting(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.accuracy.iter().enumerate() {
            for (j, &a) in row.iter().enumerate().take(i) {
                worst = worst.max(self.accuracy[j][j] - a);
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let record: MetricsRecord = serde_json::from_str(&text)?;
        if record.schema_version != METRICS_SCHEMA_VERSION {
            return Err(Error::Version {
                found: record.schema_version,
                expected: METRICS_SCHEMA_VERSION,
            });
        }
        Ok(record)
    }

    /// Lower-triangular accuracy matrix as CSV; cells above the diagonal are empty.
    pub fn accuracy_csv(&self) -> String {
        let n = self.accuracy.len();
        let mut out = String::from("after_task");
        for j in 0..n {
            let _ = write!(out, ",task_{j}");
        }
        out.push_str(",average,compression\n");
        for (i, row) in self.accuracy.iter().enumerate() {
            let _ = write!(out, "{i}");
            for j in 0..n {
                match row.get(j) {
                    Some(a) => {
                        let _ = write!(out, ",{a}");
                    }
                    None => out.push(','),
                }
            }
            let comp = self.tasks.get(i).map(|t| t.params.compression.to_string()).unwrap_or_default();
            let _ = writeln!(out, ",{},{comp}", self.average_accuracy[i]);
        }
        out
    }

    /// Human-readable table of the accuracy matrix, average and compression per step.
    pub fn render_report(&self) -> String {
        let n = self.accuracy.len();
        let mut out = String::new();
        let _ = write!(out, "{:>6}", "after");
        for j in 0..n {
            let _ = write!(out, " {:>8}", format!("T{j}"));
        }
        let _ = writeln!(out, " {:>8} {:>12}", "avg", "compression");
        for (i, row) in self.accuracy.iter().enumerate() {
            let _ = write!(out, "{:>6}", format!("T{i}"));
            for j in 0..n {
                match row.get(j) {
                    Some(a) => {
                        let _ = write!(out, " {:>7.2}%", a * 100.0);
                    }
                    None => {
                        let _ = write!(out, " {:>8}", "");
                    }
                }
            }
            let comp = self
                .tasks
                .get(i)
                .map(|t| format!("{:.2}%", t.params.compression * 100.0))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(out, " {:>7.2}% {:>12}", self.average_accuracy[i] * 100.0, comp);
        }
        for c in &self.cil {
            let _ = writeln!(
                out,
                "CIL after {} tasks: task-id {:.2}%, class-incremental {:.2}% (oracle task {:.2}%)",
                c.tasks,
                c.task_id_accuracy * 100.0,
                c.cil_accuracy * 100.0,
                c.oracle_accuracy * 100.0
            );
        }
        out
    }
}

/// Wall-clock seconds per training epoch and per task phase, kept apart
/// from the metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub epochs: Vec<EpochTiming>,
    #[serde(default)]
    pub tasks: Vec<TaskTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub task: usize,
    pub train_seconds: f64,
    /// Replay collection and task-classifier retraining.
    pub classifier_seconds: f64,
    pub evaluation_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub task: usize,
    pub epoch: usize,
    pub seconds: f64,
}

impl Timing {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// 64-bit FNV-1a over the bit patterns of `values`.
pub fn digest_f32(values: &[f32]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsRecord {
        let mut m = MetricsRecord::new(serde_json::json!({"k": 1}));
        m.accuracy = vec![vec![0.9], vec![0.9, 0.8], vec![0.85, 0.8, 0.7]];
        m.average_accuracy = vec![0.9, 0.85, 0.7833333333333333];
        m
    }

    #[test]
    fn report_is_lower_triangular() {
        let text = sample().render_report();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("90.00%"));
        assert_eq!(lines[3].matches('%').count(), 4);
        let csv = sample().accuracy_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "0,0.9,,,0.9,");
    }

    #[test]
    fn forgetting_is_measured_against_diagonal() {
        assert!((sample().max_forgetting() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = sample();
        m.save(&p).unwrap();
        assert_eq!(MetricsRecord::load(&p).unwrap(), m);
    }

    #[test]
    fn digest_distinguishes_bit_patterns() {
        assert_eq!(digest_f32(&[1.0, 2.0]), digest_f32(&[1.0, 2.0]));
        assert_ne!(digest_f32(&[0.0]), digest_f32(&[-0.0]));
    }
}
