//! Slot-by-slot driver shared by every synchronization algorithm.
//!
//! Each slot the owner transmits; every other node hears it (or not, when the
//! link is below threshold), then all nodes compute their corrections for the
//! slot's regime and advance their clocks.

use crate::error::{Result, SyncError};
use crate::metrics::{Divergence, Trace, TraceRecord};
use crate::scenario::Scenario;
use crate::sim_core::{advance_clock, regime_of, slot_transmitter, timestamp, SlotRegime};

/// An above-threshold reception.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub t_stamp: f64,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Corrections {
    /// Period correction; the clock period moves by `period / N` this slot.
    pub period: f64,
    pub phase: f64,
}

pub trait SlotNode {
    /// Called once per slot for every node except the transmitter. `None`
    /// means the transmission arrived below threshold.
    fn receive(&mut self, peer: usize, reception: Option<Reception>, own_phase: f64);

    fn corrections(&mut self, slot: u64, regime: SlotRegime) -> Result<Corrections>;
}

/// Runs `slots` slots of `scenario` with one [`SlotNode`] per node.
///
/// A loop divergence stops the run and is recorded in the returned trace
/// rather than reported as an error.
pub fn simulate<S: SlotNode>(scenario: &Scenario, nodes: &mut [S], slots: u64) -> Result<Trace> {
    let n = scenario.nodes();
    if nodes.len() != n {
        return Err(SyncError::ShapeMismatch { expected: n, actual: nodes.len() });
    }
    let table = &scenario.link_table;
    let mut clocks = scenario.initial_clocks()?;
    let mut trace = Trace::new(n);
    trace.records.reserve(slots as usize);

    for k in 0..slots {
        let tx = slot_transmitter(k, n)?.index();
        let regime = regime_of(k, n)?;
        let tx_phase = clocks[tx].phase;
        for (i, node) in nodes.iter_mut().enumerate() {
            if i == tx {
                continue;
            }
            let link = table.link(i, tx).expect("complete link table");
            let reception = if link.above_threshold {
                Some(Reception { t_stamp: timestamp(tx_phase, link.delay_s)?, power_dbm: link.received_power_dbm })
            } else {
                None
            };
            node.receive(tx, reception, clocks[i].phase);
        }

        let corrections = nodes
            .iter_mut()
            .map(|node| node.corrections(k, regime))
            .collect::<Result<Vec<_>>>()?;
        trace.push(TraceRecord {
            slot: k,
            phases: clocks.iter().map(|c| c.phase).collect(),
            periods: clocks.iter().map(|c| c.period).collect(),
            period_corrections: corrections.iter().map(|c| c.period).collect(),
            phase_corrections: corrections.iter().map(|c| c.phase).collect(),
        });

        for (i, (clock, c)) in clocks.iter_mut().zip(&corrections).enumerate() {
            match advance_clock(clock, c.period, c.phase, n) {
                Ok(next) => *clock = next,
                Err(SyncError::LoopDivergence { period, .. }) => {
                    trace.divergence = Some(Divergence { node: i, slot: k, period });
                    return Ok(trace);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, GenerationConfig};

    struct Silent;

    impl SlotNode for Silent {
        fn receive(&mut self, _: usize, _: Option<Reception>, _: f64) {}
        fn corrections(&mut self, _: u64, _: SlotRegime) -> Result<Corrections> {
            Ok(Corrections::default())
        }
    }

    #[test]
    fn free_running_accumulates_initial_period() {
        let s = generate_scenario(4, &GenerationConfig::default()).unwrap();
        let k = 5000u64;
        let trace = simulate(&s, &mut (0..16).map(|_| Silent).collect::<Vec<_>>(), k + 1).unwrap();
        let last = trace.records.last().unwrap();
        for i in 0..16 {
            let t0 = s.initial_periods[i];
            let drift = last.phases[i] - s.initial_phases[i] - k as f64 * t0;
            assert!(drift.abs() <= 1e-12 * k as f64 * t0, "node {i}: {drift:e}");
            assert_eq!(last.periods[i], t0);
        }
    }

    struct Counting {
        own: usize,
        heard_self: bool,
        calls: u64,
    }

    impl SlotNode for Counting {
        fn receive(&mut self, peer: usize, _: Option<Reception>, _: f64) {
            self.heard_self |= peer == self.own;
            self.calls += 1;
        }
        fn corrections(&mut self, _: u64, _: SlotRegime) -> Result<Corrections> {
            Ok(Corrections::default())
        }
    }

    #[test]
    fn nodes_never_hear_themselves() {
        let s = generate_scenario(4, &GenerationConfig::default()).unwrap();
        let mut nodes: Vec<Counting> =
            (0..16).map(|own| Counting { own, heard_self: false, calls: 0 }).collect();
        simulate(&s, &mut nodes, 160).unwrap();
        assert!(nodes.iter().all(|n| !n.heard_self && n.calls == 150));
    }

    struct Shrinking;

    impl SlotNode for Shrinking {
        fn receive(&mut self, _: usize, _: Option<Reception>, _: f64) {}
        fn corrections(&mut self, _: u64, _: SlotRegime) -> Result<Corrections> {
            Ok(Corrections { period: -1e-3, phase: 0.0 })
        }
    }

    #[test]
    fn divergence_stops_the_trace() {
        let s = generate_scenario(4, &GenerationConfig::default()).unwrap();
        let trace = simulate(&s, &mut (0..16).map(|_| Shrinking).collect::<Vec<_>>(), 1000).unwrap();
        let d = trace.divergence.unwrap();
        assert_eq!(trace.records.len() as u64, d.slot + 1);
        assert!(d.period <= 0.0);
        assert!(matches!(trace.into_result(), Err(SyncError::LoopDivergence { .. })));
    }
}
