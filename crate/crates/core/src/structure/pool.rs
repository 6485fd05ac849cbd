use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotStatus {
    Empty,
    New,
    Frozen,
}

/// Fixed-capacity slot partition of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronPool {
    layer: usize,
    status: Vec<SlotStatus>,
    /// Task that froze each slot. Bookkeeping only; inference never reads it.
    owner: Vec<Option<u32>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCounts {
    pub empty: usize,
    pub new: usize,
    pub frozen: usize,
}

impl NeuronPool {
    pub fn new(layer: usize, capacity: usize) -> Self {
        NeuronPool {
            layer,
            status: vec![SlotStatus::Empty; capacity],
            owner: vec![None; capacity],
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn capacity(&self) -> usize {
        self.status.len()
    }

    pub fn status(&self, slot: usize) -> SlotStatus {
        self.status[slot]
    }

    pub fn statuses(&self) -> &[SlotStatus] {
        &self.status
    }

    pub fn owner(&self, slot: usize) -> Option<u32> {
        self.owner[slot]
    }

    pub fn counts(&self) -> PoolCounts {
        let mut c = PoolCounts::default();
        for s in &self.status {
            match s {
                SlotStatus::Empty => c.empty += 1,
                SlotStatus::New => c.new += 1,
                SlotStatus::Frozen => c.frozen += 1,
            }
        }
        c
    }

    pub fn slots_with(&self, status: SlotStatus) -> Vec<usize> {
        (0..self.capacity())
            .filter(|&i| self.status[i] == status)
            .collect()
    }

    /// Frozen ∪ New, in slot order.
    pub fn active_slots(&self) -> Vec<usize> {
        (0..self.capacity())
            .filter(|&i| self.status[i] != SlotStatus::Empty)
            .collect()
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.status[slot] != SlotStatus::Empty
    }

    /// Number of slots a growth step of `rho_percent` claims: `ceil(rho% * N)`.
    pub fn growth_size(&self, rho_percent: f64) -> usize {
        // Tolerate representation error, e.g. 10% of 30 → 3.0000000000000004.
        let exact = rho_percent / 100.0 * self.capacity() as f64;
        (exact - 1e-9).ceil().max(0.0) as usize
    }

    /// Moves `ceil(rho% * N)` uniformly chosen Empty slots to New and returns
    /// them in ascending order.
    pub fn grow<R: Rng + ?Sized>(&mut self, rho_percent: f64, rng: &mut R) -> Result<Vec<usize>> {
        let needed = self.growth_size(rho_percent);
        let empty = self.slots_with(SlotStatus::Empty);
        if needed > empty.len() {
            return Err(Error::Capacity {
                layer: self.layer,
                needed,
                available: empty.len(),
            });
        }
        if needed == 0 {
            log::warn!(
                "layer {}: growth of {rho_percent}% of {} slots rounds to zero neurons",
                self.layer,
                self.capacity()
            );
            return Ok(Vec::new());
        }
        let mut chosen: Vec<usize> = empty.choose_multiple(rng, needed).copied().collect();
        chosen.sort_unstable();
        for &s in &chosen {
            self.status[s] = SlotStatus::New;
        }
        Ok(chosen)
    }

    pub(crate) fn release(&mut self, slot: usize) {
        assert_eq!(
            self.status[slot],
            SlotStatus::New,
            "only New slots can be pruned"
        );
        self.status[slot] = SlotStatus::Empty;
    }

    pub(crate) fn freeze_new(&mut self, task: u32) -> Vec<usize> {
        let mut frozen = Vec::new();
        for (i, s) in self.status.iter_mut().enumerate() {
            if *s == SlotStatus::New {
                *s = SlotStatus::Frozen;
                self.owner[i] = Some(task);
                frozen.push(i);
            }
        }
        frozen
    }

    pub(crate) fn from_parts(
        layer: usize,
        status: Vec<SlotStatus>,
        owner: Vec<Option<u32>>,
    ) -> Result<Self> {
        if status.len() != owner.len() {
            return Err(Error::Integrity("pool status/owner length mismatch".into()));
        }
        Ok(NeuronPool {
            layer,
            status,
            owner,
        })
    }
}
