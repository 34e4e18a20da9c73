//! Discrete-time clocks, TDMA slot ownership and the `3N`-slot update schedule.
//!
//! All times are seconds. Slot `k` is owned by node `(k mod N) + 1`; every
//! other node listens. Corrections are gated by [`regime_of`]: a cycle of `3N`
//! slots is `2N - 1` collection-only slots, `N` period-update slots (the first
//! of which computes the correction) and one phase-update slot.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SyncError};

/// Zero-based node index. Displayed with the 1-based numbering used for
/// transmission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    /// 1-based node number.
    pub fn number(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotRegime {
    CollectOnly,
    PeriodUpdateFirst,
    PeriodUpdateHeld,
    PhaseUpdate,
}

impl SlotRegime {
    pub fn is_period_update(self) -> bool {
        matches!(self, SlotRegime::PeriodUpdateFirst | SlotRegime::PeriodUpdateHeld)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub phase: f64,
    pub period: f64,
    pub initial_phase: f64,
    pub initial_period: f64,
}

impl ClockState {
    pub fn new(initial_phase: f64, initial_period: f64) -> Result<Self> {
        if !(initial_period > 0.0 && initial_period.is_finite()) || !initial_phase.is_finite() {
            return Err(SyncError::Validation(format!(
                "clock needs a positive finite period and finite phase, got period {initial_period:e}, phase {initial_phase:e}"
            )));
        }
        Ok(ClockState {
            phase: initial_phase,
            period: initial_period,
            initial_phase,
            initial_period,
        })
    }
}

pub(crate) fn check_nodes(nodes: usize) -> Result<()> {
    if nodes < 2 {
        return Err(SyncError::InvalidNetwork(format!(
            "need at least 2 nodes, got {nodes}"
        )));
    }
    Ok(())
}

pub fn slot_transmitter(k: u64, nodes: usize) -> Result<NodeId> {
    check_nodes(nodes)?;
    Ok(NodeId((k % nodes as u64) as usize))
}

pub fn regime_of(k: u64, nodes: usize) -> Result<SlotRegime> {
    check_nodes(nodes)?;
    let n = nodes as u64;
    let m = k % (3 * n);
    Ok(if m < 2 * n - 1 {
        SlotRegime::CollectOnly
    } else if m == 2 * n - 1 {
        SlotRegime::PeriodUpdateFirst
    } else if m < 3 * n - 1 {
        SlotRegime::PeriodUpdateHeld
    } else {
        SlotRegime::PhaseUpdate
    })
}

/// One slot of clock evolution: the phase advances by the current period plus
/// the phase correction, then the period moves by `period_correction / N`.
///
/// A non-positive resulting period is a [`SyncError::LoopDivergence`]; the
/// node and slot fields are left at zero for the simulation driver to fill.
pub fn advance_clock(
    state: &ClockState,
    period_correction: f64,
    phase_correction: f64,
    nodes: usize,
) -> Result<ClockState> {
    let phase = state.phase + state.period + phase_correction;
    let period = state.period + period_correction / nodes as f64;
    if !(period > 0.0) || !phase.is_finite() {
        return Err(SyncError::LoopDivergence { node: 0, slot: 0, period });
    }
    Ok(ClockState { phase, period, ..*state })
}

pub fn timestamp(tx_phase: f64, delay: f64) -> Result<f64> {
    if !(delay >= 0.0) {
        return Err(SyncError::InvalidChannel(format!(
            "propagation delay must be non-negative, got {delay:e}"
        )));
    }
    Ok(tx_phase + delay)
}
