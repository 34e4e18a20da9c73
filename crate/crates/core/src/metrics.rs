//! Synchronization quality measures and trace summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SyncError};

/// NPDR above which a run is flagged as diverged.
pub const DIVERGENCE_NPDR: f64 = 10.0;

/// State of every node at the start of one slot, together with the
/// corrections applied during that slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub slot: u64,
    pub phases: Vec<f64>,
    pub periods: Vec<f64>,
    pub period_corrections: Vec<f64>,
    pub phase_corrections: Vec<f64>,
}

impl TraceRecord {
    pub fn npdr(&self) -> f64 {
        npdr(&self.phases, &self.periods)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub node: usize,
    pub slot: u64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub nodes: usize,
    pub records: Vec<TraceRecord>,
    /// Set when a clock period left the valid range; the trace stops there.
    pub divergence: Option<Divergence>,
}

impl Trace {
    pub fn new(nodes: usize) -> Self {
        Trace { nodes, records: Vec::new(), divergence: None }
    }

    pub fn push(&mut self, record: TraceRecord) {
        assert_eq!(record.phases.len(), self.nodes, "node count changed within a trace");
        self.records.push(record);
    }

    pub fn npdr_series(&self) -> Vec<f64> {
        self.records.iter().map(TraceRecord::npdr).collect()
    }

    /// Turns a recorded divergence into an error.
    pub fn into_result(self) -> Result<Trace> {
        match self.divergence {
            Some(Divergence { node, slot, period }) => Err(SyncError::LoopDivergence { node, slot, period }),
            None => Ok(self),
        }
    }
}

/// Normalized phase difference range: `(max φ - min φ) / mean T`.
pub fn npdr(phases: &[f64], periods: &[f64]) -> f64 {
    let (lo, hi) = phases
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let mean_period = periods.iter().sum::<f64>() / periods.len() as f64;
    (hi - lo) / mean_period
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodSpread {
    pub mean: f64,
    pub range: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn period_spread(periods: &[f64]) -> PeriodSpread {
    let n = periods.len() as f64;
    let mean = periods.iter().sum::<f64>() / n;
    let (lo, hi) = periods
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let var = periods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    PeriodSpread { mean, range: hi - lo, std: var.sqrt() }
}

/// Offsets of each node's phase from the network mean phase.
pub fn mean_phase_offsets(phases: &[f64]) -> Vec<f64> {
    let mean = phases.iter().sum::<f64>() / phases.len() as f64;
    phases.iter().map(|p| p - mean).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub slots: usize,
    pub final_npdr: f64,
    /// Mean NPDR over the last 10% of the trace.
    pub steady_state_npdr: f64,
    pub initial_period_spread_s: f64,
    pub final_period_spread_s: f64,
    pub max_period_spread_s: f64,
    pub final_mean_period_s: f64,
    pub diverged: bool,
    pub divergence_slot: Option<u64>,
}

pub fn steady_state_window(len: usize) -> usize {
    (len / 10).max(1).min(len)
}

pub fn summarize(trace: &Trace) -> Result<Summary> {
    let (first, last) = match (trace.records.first(), trace.records.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SyncError::Validation("cannot summarize an empty trace".into())),
    };
    let series = trace.npdr_series();
    let window = steady_state_window(series.len());
    let tail = &series[series.len() - window..];
    let steady_state_npdr = tail.iter().sum::<f64>() / window as f64;
    let max_period_spread_s = trace
        .records
        .iter()
        .map(|r| period_spread(&r.periods).range)
        .fold(0.0, f64::max);
    let final_spread = period_spread(&last.periods);
    let npdr_blowup = series.iter().any(|&v| !(v <= DIVERGENCE_NPDR));
    Ok(Summary {
        slots: series.len(),
        final_npdr: *series.last().expect("non-empty"),
        steady_state_npdr,
        initial_period_spread_s: period_spread(&first.periods).range,
        final_period_spread_s: final_spread.range,
        max_period_spread_s,
        final_mean_period_s: final_spread.mean,
        diverged: npdr_blowup || trace.divergence.is_some(),
        divergence_slot: trace.divergence.map(|d| d.slot),
    })
}
