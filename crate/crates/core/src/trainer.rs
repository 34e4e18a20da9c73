//! Local, unsupervised training of each node's two networks.
//!
//! A node first records what it hears while running with its initial
//! networks. Training then replays that record: the recorded time stamps are
//! fixed, the node's own clock is re-simulated under the current parameters,
//! and the losses are differentiated through the whole replay. Period-network
//! passes and phase-network passes alternate in blocks.

use std::ops::Range;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SyncError};
use crate::neural::{sgd_step, FeatureScaling, InitScheme, Real, Tape, Var, WeightNetParams};
use crate::pfdsa::{pfdsa_run, scaling_for, LoopGains, NodeModels, SyncStore};
use crate::rng;
use crate::scenario::Scenario;
use crate::sim::Reception;
use crate::sim_core::{regime_of, timestamp, SlotRegime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    Period,
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub outer_epochs: usize,
    /// Passes per loop within one outer epoch.
    pub loop_epochs: usize,
    pub learning_rate: f64,
    pub gains: LoopGains,
    /// Frames recorded for training.
    pub frames: u64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Time residuals are divided by this before squaring.
    pub loss_time_unit_s: f64,
    /// Split the replay into independently differentiated chunks of this many
    /// slots; `None` differentiates the full trajectory.
    pub truncation_slots: Option<usize>,
    pub init: InitScheme,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            outer_epochs: 6,
            loop_epochs: 5,
            learning_rate: 0.1,
            gains: LoopGains::default(),
            frames: 126,
            clip_norm: Some(10.0),
            loss_time_unit_s: 5e-3,
            truncation_slots: None,
            init: InitScheme::UniformFanAverage,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SyncError::InvalidConfig(m.into()));
        if self.outer_epochs == 0 || self.loop_epochs == 0 {
            return bad("epoch counts must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.frames < 2 {
            return bad("training needs at least two recorded frames");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        if !(self.loss_time_unit_s > 0.0 && self.loss_time_unit_s.is_finite()) {
            return bad("loss time unit must be positive");
        }
        if self.truncation_slots == Some(0) {
            return bad("truncation length must be positive");
        }
        if !(self.gains.period.is_finite() && self.gains.phase.is_finite()) {
            return bad("loop gains must be finite");
        }
        Ok(())
    }

    pub fn passes(&self) -> usize {
        self.outer_epochs * 2 * self.loop_epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionRecord {
    pub slot: u64,
    pub transmitter: usize,
    /// `None` for the node's own slots and for below-threshold receptions.
    pub reception: Option<Reception>,
}

/// Everything one node observed while running its initial networks.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSet {
    pub node: usize,
    pub nodes: usize,
    pub initial_period_s: f64,
    /// Own clock phase in each slot of the first frame.
    pub first_frame_phases_s: Vec<f64>,
    pub records: Vec<AcquisitionRecord>,
    pub scaling: FeatureScaling,
}

impl AcquisitionSet {
    pub fn has_neighbors(&self) -> bool {
        self.records.iter().any(|r| r.reception.is_some())
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes;
        let ok = n >= 2
            && self.node < n
            && self.first_frame_phases_s.len() == n
            && self.records.len() >= 2 * n
            && self.records.iter().enumerate().all(|(k, r)| {
                r.slot == k as u64 && r.transmitter == k % n && (r.transmitter != self.node || r.reception.is_none())
            });
        if ok {
            Ok(())
        } else {
            Err(SyncError::Validation(format!("malformed acquisition set for node {}", self.node)))
        }
    }
}

/// Initial networks for every node, drawn from the seed's network stream.
pub fn initial_models(seed: u64, nodes: usize, scheme: InitScheme) -> Result<Vec<NodeModels>> {
    let mut r = rng::substream(seed, rng::NETWORK_INIT);
    (0..nodes)
        .map(|_| {
            Ok(NodeModels {
                period: WeightNetParams::init(&mut r, nodes, scheme)?,
                phase: WeightNetParams::init(&mut r, nodes, scheme)?,
            })
        })
        .collect()
}

/// Runs the scenario for `frames` frames with fixed `models` and returns each
/// node's record.
pub fn acquire(scenario: &Scenario, models: &[NodeModels], frames: u64, gains: &LoopGains) -> Result<Vec<AcquisitionSet>> {
    if frames < 2 {
        return Err(SyncError::InvalidConfig("acquisition needs at least two frames".into()));
    }
    let n = scenario.nodes();
    let trace = pfdsa_run(scenario, models, frames, gains)?;
    let scaling = scaling_for(scenario);
    (0..n)
        .map(|i| {
            let records = trace
                .records
                .iter()
                .map(|r| {
                    let tx = (r.slot % n as u64) as usize;
                    let reception = match scenario.link_table.link(i, tx) {
                        Some(l) if l.above_threshold => Some(Reception {
                            t_stamp: timestamp(r.phases[tx], l.delay_s)?,
                            power_dbm: l.received_power_dbm,
                        }),
                        _ => None,
                    };
                    Ok(AcquisitionRecord { slot: r.slot, transmitter: tx, reception })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AcquisitionSet {
                node: i,
                nodes: n,
                initial_period_s: scenario.initial_periods[i],
                first_frame_phases_s: trace.records[..n].iter().map(|r| r.phases[i]).collect(),
                records,
                scaling,
            })
        })
        .collect()
}

struct ReplayState<T> {
    phase: T,
    period: T,
    store: SyncStore<T>,
}

struct LossTerms<T> {
    period: Vec<T>,
    phase: Vec<T>,
}

impl<T> Default for LossTerms<T> {
    fn default() -> Self {
        LossTerms { period: Vec::new(), phase: Vec::new() }
    }
}

/// The first frame is replayed from the recorded phases: every slot in it is
/// collection-only, so no parameters are involved. Returns the state entering
/// slot `N` and the phase-loss terms of the first frame.
fn replay_prefix(set: &AcquisitionSet, config: &TrainingConfig) -> Result<(ReplayState<f64>, Vec<f64>)> {
    let n = set.nodes;
    let mut store = SyncStore::new(set.node, n, 0.0);
    let mut terms = Vec::new();
    for k in 0..n {
        debug_assert_eq!(regime_of(k as u64, n)?, SlotRegime::CollectOnly);
        let rec = &set.records[k];
        let phase = set.first_frame_phases_s[k];
        if let Some(r) = rec.reception {
            terms.push(((r.t_stamp - phase) / config.loss_time_unit_s).square() * ((k + 1) as f64).ln());
        }
        if rec.transmitter != set.node {
            store.ingest(rec.transmitter, rec.reception, phase);
        }
    }
    let phase = set.first_frame_phases_s[n - 1] + set.initial_period_s + 0.0;
    Ok((ReplayState { phase, period: set.initial_period_s, store }, terms))
}

fn replay_slots<T: Real>(
    set: &AcquisitionSet,
    models: &NodeModels<T>,
    state: &mut ReplayState<T>,
    slots: Range<usize>,
    config: &TrainingConfig,
    terms: &mut LossTerms<T>,
) -> Result<()> {
    let n = set.nodes;
    let unit = config.loss_time_unit_s;
    for k in slots {
        let rec = &set.records[k];
        let weight = ((k + 1) as f64).ln();
        if let Some(r) = rec.reception {
            let residual = (state.phase.constant_like(r.t_stamp) - state.phase) / unit;
            terms.phase.push(residual.square() * weight);
            if let Some(prev) = set.records[k - n].reception {
                let peer_period = (r.t_stamp - prev.t_stamp) / n as f64;
                let residual = (state.period.constant_like(peer_period) - state.period) / unit;
                terms.period.push(residual.square() * weight);
            }
        }
        if rec.transmitter != set.node {
            state.store.ingest(rec.transmitter, rec.reception, state.phase);
        }
        let (a, omega) = state.store.step(regime_of(k as u64, n)?, models, &config.gains, &set.scaling)?;
        let phase = state.phase + state.period + omega;
        let period = state.period + a / n as f64;
        if !(period.value() > 0.0) || !phase.value().is_finite() {
            return Err(SyncError::LoopDivergence { node: set.node, slot: k as u64, period: period.value() });
        }
        state.phase = phase;
        state.period = period;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayLosses {
    pub period: f64,
    pub phase: f64,
}

impl ReplayLosses {
    pub fn get(&self, kind: LoopKind) -> f64 {
        match kind {
            LoopKind::Period => self.period,
            LoopKind::Phase => self.phase,
        }
    }
}

fn sum_or_zero(terms: &[f64]) -> f64 {
    if terms.is_empty() {
        0.0
    } else {
        f64::sum(terms)
    }
}

/// Both losses of the replayed trajectory under `models`.
pub fn replay_losses(set: &AcquisitionSet, models: &NodeModels, config: &TrainingConfig) -> Result<ReplayLosses> {
    set.validate()?;
    let (mut state, prefix) = replay_prefix(set, config)?;
    let mut terms = LossTerms::default();
    replay_slots(set, models, &mut state, set.nodes..set.records.len(), config, &mut terms)?;
    Ok(ReplayLosses {
        period: sum_or_zero(&terms.period),
        phase: sum_or_zero(&prefix) + sum_or_zero(&terms.phase),
    })
}

/// Loss of `kind` and its gradient with respect to that loop's network
/// parameters, in flattened order.
pub fn loss_gradients(
    set: &AcquisitionSet,
    models: &NodeModels,
    kind: LoopKind,
    config: &TrainingConfig,
) -> Result<(f64, Vec<f64>)> {
    set.validate()?;
    let (mut state, prefix) = replay_prefix(set, config)?;
    let total = set.records.len();
    let chunk = config.truncation_slots.unwrap_or(total).max(1);
    let trained = match kind {
        LoopKind::Period => &models.period,
        LoopKind::Phase => &models.phase,
    };
    let mut grad = vec![0.0; trained.parameter_count()];
    let mut loss = match kind {
        LoopKind::Period => 0.0,
        LoopKind::Phase => sum_or_zero(&prefix),
    };

    let mut start = set.nodes;
    while start < total {
        let end = (start + chunk).min(total);
        let tape = Tape::with_capacity(64 * (end - start) + 8192, 1024 * (end - start) + 16384);
        let lifted = NodeModels { period: models.period.lift(&tape), phase: models.phase.lift(&tape) };
        let zero = tape.constant(0.0);
        let mut replay = ReplayState {
            phase: tape.constant(state.phase),
            period: tape.constant(state.period),
            store: state.store.map(zero, |&v| tape.constant(v)),
        };
        let mut terms = LossTerms::default();
        replay_slots(set, &lifted, &mut replay, start..end, config, &mut terms)?;
        let chunk_terms = match kind {
            LoopKind::Period => &terms.period,
            LoopKind::Phase => &terms.phase,
        };
        if !chunk_terms.is_empty() {
            let chunk_loss = Var::sum(chunk_terms);
            loss += chunk_loss.value();
            let g = tape.gradients(chunk_loss)?;
            let params = match kind {
                LoopKind::Period => &lifted.period,
                LoopKind::Phase => &lifted.phase,
            };
            for (acc, v) in grad.iter_mut().zip(params.iter()) {
                *acc += g.wrt(*v);
            }
        }
        state = ReplayState {
            phase: replay.phase.value(),
            period: replay.period.value(),
            store: replay.store.map(0.0, |v| v.value()),
        };
        start = end;
    }
    Ok((loss, grad))
}

/// Scales `grad` down to `max_norm` if it is longer. Returns the original norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub cycle: usize,
    pub pass: usize,
    #[serde(rename = "loop")]
    pub loop_kind: LoopKind,
    /// Loss before this pass's update.
    pub loss: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNode {
    pub models: NodeModels,
    pub history: Vec<PassRecord>,
}

/// Block-alternating gradient descent: in every outer epoch, `loop_epochs`
/// passes update the period network on the period loss, then `loop_epochs`
/// passes update the phase network on the phase loss.
pub fn train_node(set: &AcquisitionSet, initial: &NodeModels, config: &TrainingConfig) -> Result<TrainedNode> {
    config.validate()?;
    let mut models = initial.clone();
    let mut history = Vec::with_capacity(config.passes());
    for cycle in 0..config.outer_epochs {
        for pass in 0..2 * config.loop_epochs {
            let kind = if pass < config.loop_epochs { LoopKind::Period } else { LoopKind::Phase };
            let diverged = |reason: String| SyncError::TrainingDiverged { cycle, pass, reason };
            let (loss, mut grad) = loss_gradients(set, &models, kind, config).map_err(|e| match e {
                SyncError::LoopDivergence { .. } => diverged(e.to_string()),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(diverged(format!("{kind:?} loss is {loss}")));
            }
            let gradient_norm = match config.clip_norm {
                Some(c) => clip_global_norm(&mut grad, c),
                None => grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            };
            let target = match kind {
                LoopKind::Period => &mut models.period,
                LoopKind::Phase => &mut models.phase,
            };
            sgd_step(target, &grad, config.learning_rate).map_err(|e| match e {
                SyncError::NonFiniteGradient { index } => diverged(format!("non-finite gradient entry {index}")),
                other => other,
            })?;
            history.push(PassRecord { cycle, pass, loop_kind: kind, loss, gradient_norm });
        }
    }
    Ok(TrainedNode { models, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum NodeStatus {
    Trained,
    /// Never heard a peer; initial parameters kept.
    Isolated,
    /// Training failed; initial parameters kept.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: usize,
    pub status: NodeStatus,
    pub history: Vec<PassRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub initial: Vec<NodeModels>,
    pub models: Vec<NodeModels>,
    pub reports: Vec<NodeReport>,
}

/// Records once with freshly initialized networks, then trains every node
/// from its own record only.
pub fn train_all(scenario: &Scenario, config: &TrainingConfig, seed: u64) -> Result<TrainingOutcome> {
    config.validate()?;
    let n = scenario.nodes();
    let initial = initial_models(seed, n, config.init)?;
    let sets = acquire(scenario, &initial, config.frames, &config.gains)?;
    let results: Vec<(NodeModels, NodeReport)> = sets
        .par_iter()
        .zip(initial.par_iter())
        .map(|(set, init)| {
            let node = set.node;
            if !set.has_neighbors() {
                warn!("node {node} heard no peer; keeping its initial networks");
                return (init.clone(), NodeReport { node, status: NodeStatus::Isolated, history: Vec::new() });
            }
            match train_node(set, init, config) {
                Ok(t) => (t.models, NodeReport { node, status: NodeStatus::Trained, history: t.history }),
                Err(e) => {
                    warn!("training node {node} failed: {e}");
                    (init.clone(), NodeReport { node, status: NodeStatus::Failed(e.to_string()), history: Vec::new() })
                }
            }
        })
        .collect();
    let (models, reports) = results.into_iter().unzip();
    Ok(TrainingOutcome { initial, models, reports })
}
