//! Binary checkpoint of a [`SequenceState`].
//!
//! Layout: a 32-byte header (`DSDSNNCK`, format version, reserved word,
//! payload length, FNV-1a checksum of the payload) followed by the payload:
//! a length-prefixed JSON block with shapes, slot states, pruning scores,
//! metrics and the run configuration, then raw little-endian blobs for
//! weights, connection masks, the task classifier and replayed inputs.
//! Weights never pass through text, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cil::{ReplayBuffer, ReplayTask, TaskClassifier};
use crate::error::{Error, Result};
use crate::experiment::SequenceState;
use crate::metrics::MetricsRecord;
use crate::snn::{ArchitectureSpec, SpikingNetwork};
use crate::structure::{NeuronPool, PruningState, SlotStatus};

pub const MAGIC: &[u8; 8] = b"DSDSNNCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 32;

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    status: Vec<SlotStatus>,
    owner: Vec<Option<u32>>,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    task: u32,
    classes: usize,
}

#[derive(Serialize, Deserialize)]
struct PruningMeta {
    alpha: f64,
    gamma: f64,
    rho_c: f64,
    rho_f: f64,
    eta: f64,
    epoch: u32,
    scores: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    inputs: usize,
    hidden: usize,
    outputs: usize,
}

#[derive(Serialize, Deserialize)]
struct ReplayMeta {
    capacity: usize,
    features: usize,
    tasks: Vec<(usize, Vec<usize>)>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    next_task: usize,
    architecture: ArchitectureSpec,
    layers: Vec<LayerMeta>,
    heads: Vec<HeadMeta>,
    training_head: Option<usize>,
    pruning: PruningMeta,
    metrics: MetricsRecord,
    classifier: Option<ClassifierMeta>,
    classifier_validation: f64,
    replay: Option<ReplayMeta>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_bools(out: &mut Vec<u8>, v: &[bool]) {
    out.extend(v.iter().map(|&b| b as u8));
}

pub fn to_bytes(state: &SequenceState) -> Result<Vec<u8>> {
    let net = &state.net;
    let meta = Meta {
        next_task: state.next_task,
        architecture: net.architecture.clone(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerMeta {
                status: l.pool.statuses().to_vec(),
                owner: (0..l.pool.capacity()).map(|s| l.pool.owner(s)).collect(),
            })
            .collect(),
        heads: net
            .heads
            .iter()
            .map(|h| HeadMeta {
                task: h.task,
                classes: h.classes,
            })
            .collect(),
        training_head: net.training_head,
        pruning: PruningMeta {
            alpha: state.pruning.alpha,
            gamma: state.pruning.gamma,
            rho_c: state.pruning.rho_c,
            rho_f: state.pruning.rho_f,
            eta: state.pruning.eta,
            epoch: state.pruning.epoch,
            scores: (0..state.pruning.layers())
                .map(|l| state.pruning.scores(l).iter().map(|(&k, &v)| (k, v)).collect())
                .collect(),
        },
        metrics: state.metrics.clone(),
        classifier: state.classifier.as_ref().map(|c| ClassifierMeta {
            inputs: c.inputs,
            hidden: c.hidden,
            outputs: c.outputs,
        }),
        classifier_validation: state.classifier_validation,
        replay: state.replay.as_ref().map(|r| ReplayMeta {
            capacity: r.capacity(),
            features: r.features(),
            tasks: r.tasks().iter().map(|t| (t.task, t.positions.clone())).collect(),
        }),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut payload = Vec::with_capacity(json.len() + 8);
    payload.extend_from_slice(&(json.len() as u64).to_le_bytes());
    payload.extend_from_slice(&json);
    for l in &net.layers {
        put_f32s(&mut payload, &l.weights);
        put_bools(&mut payload, &l.connections);
    }
    for h in &net.heads {
        put_f32s(&mut payload, &h.weights);
        put_bools(&mut payload, &h.connections);
    }
    if let Some(c) = &state.classifier {
        for v in [&c.w1, &c.b1, &c.w2, &c.b2] {
            put_f32s(&mut payload, v);
        }
    }
    if let Some(r) = &state.replay {
        for t in r.tasks() {
            put_f32s(&mut payload, &t.inputs);
        }
    }
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!(
                "checkpoint ends inside {what} at byte {}",
                HEADER + self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn bools(&mut self, n: usize, what: &str) -> Result<Vec<bool>> {
        let at = HEADER + self.pos;
        let raw = self.take(n, what)?;
        raw.iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Integrity(format!("invalid mask byte {b} at byte {}", at + i))),
            })
            .collect()
    }
}

fn mismatch(what: impl Into<String>) -> Error {
    Error::Integrity(what.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<SequenceState> {
    if bytes.len() < HEADER {
        return Err(mismatch(format!(
            "checkpoint is {} bytes, shorter than its {HEADER}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(mismatch("not a checkpoint file (bad magic at byte 0)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let sum = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let payload = &bytes[HEADER..];
    if payload.len() as u64 != len {
        return Err(mismatch(format!(
            "checkpoint payload is {} bytes, header declares {len}",
            payload.len()
        )));
    }
    if fnv1a(payload) != sum {
        return Err(mismatch("checkpoint checksum mismatch"));
    }

    let mut r = Reader { bytes: payload, pos: 0 };
    let json_len = u64::from_le_bytes(r.take(8, "metadata length")?.try_into().unwrap()) as usize;
    let meta: Meta = serde_json::from_slice(r.take(json_len, "metadata")?)
        .map_err(|e| mismatch(format!("checkpoint metadata is malformed: {e}")))?;

    let mut net = SpikingNetwork::new(&meta.architecture).map_err(|e| mismatch(e.to_string()))?;
    if meta.layers.len() != net.layers.len() {
        return Err(mismatch("layer count does not match the architecture"));
    }
    for (l, (layer, lm)) in net.layers.iter_mut().zip(meta.layers).enumerate() {
        if lm.status.len() != layer.pool.capacity() {
            return Err(mismatch(format!("layer {l} slot count does not match the architecture")));
        }
        layer.pool = NeuronPool::from_parts(l, lm.status, lm.owner)?;
        layer.weights = r.f32s(layer.weights.len(), "layer weights")?;
        layer.connections = r.bools(layer.connections.len(), "layer connections")?;
    }
    let last_units = net.layers.last().map_or(0, |l| l.spec.out_units);
    for hm in meta.heads {
        let weights = r.f32s(hm.classes * last_units, "head weights")?;
        let connections = r.bools(last_units, "head connections")?;
        net.heads.push(crate::snn::OutputHead {
            task: hm.task,
            classes: hm.classes,
            weights,
            connections,
        });
    }
    if meta.training_head.is_some_and(|h| h >= net.heads.len()) {
        return Err(mismatch("training head index out of range"));
    }
    net.training_head = meta.training_head;

    let pm = meta.pruning;
    if pm.scores.len() != net.layers.len() {
        return Err(mismatch("pruning state layer count does not match"));
    }
    let mut pruning = PruningState::new(pm.scores.len(), pm.rho_c, pm.rho_f, pm.eta);
    pruning.alpha = pm.alpha;
    pruning.gamma = pm.gamma;
    pruning.epoch = pm.epoch;
    pruning.restore_scores(
        pm.scores
            .into_iter()
            .map(|v| v.into_iter().collect::<BTreeMap<_, _>>())
            .collect(),
    );

    let classifier = match meta.classifier {
        Some(c) => Some(TaskClassifier {
            inputs: c.inputs,
            hidden: c.hidden,
            outputs: c.outputs,
            w1: r.f32s(c.hidden * c.inputs, "classifier")?,
            b1: r.f32s(c.hidden, "classifier")?,
            w2: r.f32s(c.outputs * c.hidden, "classifier")?,
            b2: r.f32s(c.outputs, "classifier")?,
        }),
        None => None,
    };
    let replay = match meta.replay {
        Some(rm) => {
            let mut tasks = Vec::with_capacity(rm.tasks.len());
            for (task, positions) in rm.tasks {
                let inputs = r.f32s(positions.len() * rm.features, "replay inputs")?;
                tasks.push(ReplayTask {
                    task,
                    positions,
                    inputs,
                });
            }
            Some(ReplayBuffer::from_parts(rm.capacity, rm.features, tasks)?)
        }
        None => None,
    };
    if r.pos != payload.len() {
        return Err(mismatch(format!(
            "{} unexpected trailing bytes at byte {}",
            payload.len() - r.pos,
            HEADER + r.pos
        )));
    }
    Ok(SequenceState {
        net,
        pruning,
        metrics: meta.metrics,
        replay,
        classifier,
        classifier_validation: meta.classifier_validation,
        next_task: meta.next_task,
    })
}

/// Writes atomically: a temporary sibling file is renamed over `path`.
pub fn save(path: &Path, state: &SequenceState) -> Result<()> {
    let bytes = to_bytes(state)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SequenceState> {
    from_bytes(&std::fs::read(path)?)
}
