use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Fixed constants of the pruning function.
pub const ALPHA: f64 = 2.0;
pub const GAMMA: f64 = 0.99;
pub const INITIAL_SCORE: f64 = 5.0;

/// Per-neuron pruning scores for the task in progress.
///
/// Each epoch, a New neuron with normalized importance `s` gets
/// `phi = ALPHA * s - rho` (`rho_c` for convolutional layers, `rho_f` for
/// dense ones) and its score is updated as
/// `P ← GAMMA * P + exp(-epoch / eta) * phi`. Neurons whose score drops below
/// zero are pruned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningState {
    pub alpha: f64,
    pub gamma: f64,
    pub rho_c: f64,
    pub rho_f: f64,
    pub eta: f64,
    /// Epoch index within the current task.
    pub epoch: u32,
    scores: Vec<BTreeMap<usize, f64>>,
}

impl PruningState {
    pub fn new(layers: usize, rho_c: f64, rho_f: f64, eta: f64) -> Self {
        PruningState {
            alpha: ALPHA,
            gamma: GAMMA,
            rho_c,
            rho_f,
            eta,
            epoch: 0,
            scores: vec![BTreeMap::new(); layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.scores.len()
    }

    /// Creates scores for freshly grown neurons and restarts the epoch count.
    pub fn register(&mut self, layer: usize, slots: &[usize]) {
        for &s in slots {
            self.scores[layer].insert(s, INITIAL_SCORE);
        }
        self.epoch = 0;
    }

    pub fn score(&self, layer: usize, slot: usize) -> Option<f64> {
        self.scores[layer].get(&slot).copied()
    }

    pub fn scores(&self, layer: usize) -> &BTreeMap<usize, f64> {
        &self.scores[layer]
    }

    pub fn rho(&self, conv: bool) -> f64 {
        if conv {
            self.rho_c
        } else {
            self.rho_f
        }
    }

    pub fn phi(&self, norm_s: f64, conv: bool) -> f64 {
        self.alpha * norm_s - self.rho(conv)
    }

    /// Updates the scores of `entries` (`(slot, normalized importance)`) for
    /// one layer at the current epoch, drops the scores that went negative and
    /// returns those slots in ascending order.
    pub fn step_layer(&mut self, layer: usize, entries: &[(usize, f64)], conv: bool) -> Vec<usize> {
        let decay = (-(self.epoch as f64) / self.eta).exp();
        let mut pruned = Vec::new();
        for &(slot, norm_s) in entries {
            let phi = self.phi(norm_s, conv);
            let p = self.scores[layer]
                .get_mut(&slot)
                .unwrap_or_else(|| panic!("no pruning score for layer {layer} slot {slot}"));
            *p = self.gamma * *p + decay * phi;
            if *p < 0.0 {
                pruned.push(slot);
            }
        }
        for s in &pruned {
            self.scores[layer].remove(s);
        }
        pruned.sort_unstable();
        pruned
    }

    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn clear(&mut self) {
        for s in &mut self.scores {
            s.clear();
        }
        self.epoch = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.scores.iter().all(BTreeMap::is_empty)
    }

    pub(crate) fn restore_scores(&mut self, scores: Vec<BTreeMap<usize, f64>>) {
        self.scores = scores;
    }
}

/// Min-max normalization to `[0, 1]`; a degenerate range maps everything to 1.
pub fn normalize_importance(values: &[f64]) -> Vec<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if !(range > 0.0) {
        return vec![1.0; values.len()];
    }
    values.iter().map(|&v| (v - min) / range).collect()
}
