//! The analytic baseline: received-power-proportional weights driving a
//! phase loop and, in the extended form, a nested period loop on the `3N`-slot
//! schedule.

use serde::{Deserialize, Serialize};

use crate::channel::dbm_to_mw;
use crate::error::{Result, SyncError};
use crate::metrics::Trace;
use crate::scenario::Scenario;
use crate::sim::{simulate, Corrections, Reception, SlotNode};
use crate::sim_core::SlotRegime;

/// What the period loop feeds on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodInput {
    /// `Δφ - Δφ_prev` as is. Two receptions from one peer are a frame apart,
    /// so this is `N` times the period mismatch and the loop over-corrects by
    /// that factor.
    Raw,
    /// `(Δφ - Δφ_prev) / N`, the per-slot period mismatch.
    #[default]
    PerSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EssbsConfig {
    pub phase_gain: f64,
    pub period_gain: f64,
    /// Gain of the phase-only loop with the period held at its initial value.
    pub classic_gain: f64,
    pub period_input: PeriodInput,
}

impl Default for EssbsConfig {
    fn default() -> Self {
        EssbsConfig { phase_gain: 0.3, period_gain: 0.3, classic_gain: 0.3, period_input: PeriodInput::PerSlot }
    }
}

impl EssbsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("phase", self.phase_gain), ("period", self.period_gain), ("classic", self.classic_gain)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(SyncError::InvalidConfig(format!("{name} gain must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// `α_j = P_j / Σ P_m` over masked-in peers, zero elsewhere. Powers are linear.
pub fn classic_weights(powers_mw: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if powers_mw.len() != mask.len() {
        return Err(SyncError::ShapeMismatch { expected: powers_mw.len(), actual: mask.len() });
    }
    let total: f64 = powers_mw.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p).sum();
    if !(total > 0.0) {
        return Err(SyncError::EmptyNeighborhood);
    }
    Ok(powers_mw.iter().zip(mask).map(|(&p, &m)| if m { p / total } else { 0.0 }).collect())
}

/// Per-node memory of the baseline loops. Vectors are indexed by node; the
/// node's own entry is never written.
#[derive(Debug, Clone, PartialEq)]
pub struct EssbsNodeState {
    pub own: usize,
    pub delta_phi: Vec<f64>,
    pub delta_phi_prev: Vec<f64>,
    /// `None` until the peer is first heard above threshold.
    pub stored_power_dbm: Vec<Option<f64>>,
    pub held_period_correction: f64,
}

impl EssbsNodeState {
    pub fn new(own: usize, nodes: usize) -> Self {
        EssbsNodeState {
            own,
            delta_phi: vec![0.0; nodes],
            delta_phi_prev: vec![0.0; nodes],
            stored_power_dbm: vec![None; nodes],
            held_period_correction: 0.0,
        }
    }

    /// Stores an above-threshold reception. Peers are never evicted.
    pub fn ingest(&mut self, peer: usize, t_stamp: f64, power_dbm: f64, own_phase: f64) {
        self.delta_phi_prev[peer] = self.delta_phi[peer];
        self.delta_phi[peer] = t_stamp - own_phase;
        self.stored_power_dbm[peer] = Some(power_dbm);
    }

    fn weights(&self) -> Result<Vec<f64>> {
        let powers: Vec<f64> = self.stored_power_dbm.iter().map(|p| p.map_or(0.0, dbm_to_mw)).collect();
        let mask: Vec<bool> = self.stored_power_dbm.iter().map(Option::is_some).collect();
        classic_weights(&powers, &mask)
    }

    fn weighted(&self, values: impl Fn(usize) -> f64) -> f64 {
        match self.weights() {
            Ok(alpha) => alpha.iter().enumerate().filter(|(_, &a)| a > 0.0).map(|(j, a)| a * values(j)).sum(),
            Err(_) => 0.0,
        }
    }

    pub fn phase_error(&self) -> f64 {
        self.weighted(|j| self.delta_phi[j])
    }

    pub fn period_error(&self, input: PeriodInput) -> f64 {
        let nodes = self.delta_phi.len() as f64;
        self.weighted(|j| {
            let diff = self.delta_phi[j] - self.delta_phi_prev[j];
            match input {
                PeriodInput::Raw => diff,
                PeriodInput::PerSlot => diff / nodes,
            }
        })
    }

    /// Extended loops: the period correction is computed on the first
    /// period-update slot and held for the rest of the interval; the phase
    /// correction fires on the phase-update slot.
    pub fn corrections(&mut self, regime: SlotRegime, config: &EssbsConfig) -> Corrections {
        match regime {
            SlotRegime::CollectOnly => {
                self.held_period_correction = 0.0;
                Corrections::default()
            }
            SlotRegime::PeriodUpdateFirst => {
                self.held_period_correction = config.period_gain * self.period_error(config.period_input);
                Corrections { period: self.held_period_correction, phase: 0.0 }
            }
            SlotRegime::PeriodUpdateHeld => Corrections { period: self.held_period_correction, phase: 0.0 },
            SlotRegime::PhaseUpdate => {
                self.held_period_correction = 0.0;
                Corrections { period: 0.0, phase: config.phase_gain * self.phase_error() }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Extended,
    /// Phase-only loop, corrected once per frame, period fixed.
    ClassicNoPeriod,
}

struct BaselineNode<'c> {
    state: EssbsNodeState,
    config: &'c EssbsConfig,
    variant: Variant,
}

impl SlotNode for BaselineNode<'_> {
    fn receive(&mut self, peer: usize, reception: Option<Reception>, own_phase: f64) {
        if let Some(r) = reception {
            self.state.ingest(peer, r.t_stamp, r.power_dbm, own_phase);
        }
    }

    fn corrections(&mut self, slot: u64, regime: SlotRegime) -> Result<Corrections> {
        Ok(match self.variant {
            Variant::Extended => self.state.corrections(regime, self.config),
            Variant::ClassicNoPeriod => {
                let nodes = self.state.delta_phi.len() as u64;
                if slot % nodes == nodes - 1 {
                    Corrections { period: 0.0, phase: self.config.classic_gain * self.state.phase_error() }
                } else {
                    Corrections::default()
                }
            }
        })
    }
}

fn run_variant(scenario: &Scenario, frames: u64, config: &EssbsConfig, variant: Variant) -> Result<Trace> {
    config.validate()?;
    let n = scenario.nodes();
    let mut nodes: Vec<BaselineNode> = (0..n)
        .map(|i| BaselineNode { state: EssbsNodeState::new(i, n), config, variant })
        .collect();
    simulate(scenario, &mut nodes, frames * n as u64)
}

/// Extended baseline over `frames` TDMA frames. A loop divergence ends the
/// trace early and is recorded in [`Trace::divergence`].
pub fn essbs_trace(scenario: &Scenario, frames: u64, config: &EssbsConfig) -> Result<Trace> {
    run_variant(scenario, frames, config, Variant::Extended)
}

/// As [`essbs_trace`], with divergence reported as an error.
pub fn essbs_run(scenario: &Scenario, frames: u64, config: &EssbsConfig) -> Result<Trace> {
    essbs_trace(scenario, frames, config)?.into_result()
}

/// Phase-only loop with the period fixed at its initial value.
pub fn classic_trace(scenario: &Scenario, frames: u64, config: &EssbsConfig) -> Result<Trace> {
    run_variant(scenario, frames, config, Variant::ClassicNoPeriod)
}
