//! The learned-discriminator node: per-peer phase and period-difference
//! stores, network-weighted corrections and the per-slot state machine.
//!
//! Store and correction code is generic over [`Real`] so the trainer can run
//! the identical recursion on a tape.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SyncError};
use crate::metrics::Trace;
use crate::neural::{FeatureScaling, Real, WeightNetParams};
use crate::scenario::Scenario;
use crate::sim::{simulate, Corrections, Reception, SlotNode};
use crate::sim_core::SlotRegime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopGains {
    pub period: f64,
    pub phase: f64,
}

impl Default for LoopGains {
    fn default() -> Self {
        LoopGains { period: 0.3, phase: 0.3 }
    }
}

/// The two networks of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModels<T = f64> {
    pub period: WeightNetParams<T>,
    pub phase: WeightNetParams<T>,
}

/// Per-node feature memory. Vectors are indexed by node; the node's own entry
/// stays zero and is skipped when features are encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncStore<T = f64> {
    own: usize,
    zero: T,
    pub x_phi: Vec<T>,
    pub x_t: Vec<T>,
    /// `None` when the latest transmission of the peer was below threshold.
    pub power_dbm: Vec<Option<f64>>,
    pub held_period_correction: T,
}

impl<T: Real> SyncStore<T> {
    pub fn new(own: usize, nodes: usize, zero: T) -> Self {
        SyncStore {
            own,
            zero,
            x_phi: vec![zero; nodes],
            x_t: vec![zero; nodes],
            power_dbm: vec![None; nodes],
            held_period_correction: zero,
        }
    }

    pub fn own(&self) -> usize {
        self.own
    }

    pub fn nodes(&self) -> usize {
        self.x_phi.len()
    }

    /// `X_T` is updated from the previous `X_φ` before `X_φ` itself moves.
    /// A below-threshold slot clears the peer.
    pub fn ingest(&mut self, peer: usize, reception: Option<Reception>, own_phase: T) {
        match reception {
            Some(r) => {
                let delta = own_phase.constant_like(r.t_stamp) - own_phase;
                self.x_t[peer] = (delta - self.x_phi[peer]) / self.nodes() as f64;
                self.x_phi[peer] = delta;
                self.power_dbm[peer] = Some(r.power_dbm);
            }
            None => {
                self.x_t[peer] = self.zero;
                self.x_phi[peer] = self.zero;
                self.power_dbm[peer] = None;
            }
        }
    }

    fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes()).filter(move |&j| j != self.own)
    }

    pub fn mask(&self) -> Vec<bool> {
        self.peers().map(|j| self.power_dbm[j].is_some()).collect()
    }

    /// Network input for one loop: `(value, power)` pairs over peers in
    /// ascending order, zero pairs for absent peers.
    pub fn encode_features(&self, values: &[T], scaling: &FeatureScaling) -> Vec<T> {
        self.peers()
            .flat_map(|j| match self.power_dbm[j] {
                Some(p) => [values[j] / scaling.time_unit_s, self.zero.constant_like(scaling.power_feature(p))],
                None => [self.zero, self.zero],
            })
            .collect()
    }

    fn weighted_correction(
        &self,
        values: &[T],
        params: &WeightNetParams<T>,
        gain: f64,
        scaling: &FeatureScaling,
    ) -> Result<T> {
        let mask = self.mask();
        let features = self.encode_features(values, scaling);
        let weights = match params.forward(&features, &mask) {
            Ok(w) => w,
            Err(SyncError::EmptyNeighborhood) => return Ok(self.zero),
            Err(e) => return Err(e),
        };
        let terms: Vec<T> = self
            .peers()
            .zip(&weights)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((j, &w), _)| w * values[j])
            .collect();
        Ok(T::sum(&terms) * gain)
    }

    /// `A = ε_T Σ w_j X_T[j]` with weights from the period network.
    pub fn period_correction(&self, params: &WeightNetParams<T>, gain: f64, scaling: &FeatureScaling) -> Result<T> {
        self.weighted_correction(&self.x_t, params, gain, scaling)
    }

    /// `Ω = ε_φ Σ w_j X_φ[j]` with weights from the phase network.
    pub fn phase_correction(&self, params: &WeightNetParams<T>, gain: f64, scaling: &FeatureScaling) -> Result<T> {
        self.weighted_correction(&self.x_phi, params, gain, scaling)
    }

    /// Corrections `(A, Ω)` for the slot's regime. `A` is computed once per
    /// cycle and held through the period-update interval.
    pub fn step(
        &mut self,
        regime: SlotRegime,
        models: &NodeModels<T>,
        gains: &LoopGains,
        scaling: &FeatureScaling,
    ) -> Result<(T, T)> {
        Ok(match regime {
            SlotRegime::CollectOnly => {
                self.held_period_correction = self.zero;
                (self.zero, self.zero)
            }
            SlotRegime::PeriodUpdateFirst => {
                self.held_period_correction = self.period_correction(&models.period, gains.period, scaling)?;
                (self.held_period_correction, self.zero)
            }
            SlotRegime::PeriodUpdateHeld => (self.held_period_correction, self.zero),
            SlotRegime::PhaseUpdate => {
                self.held_period_correction = self.zero;
                (self.zero, self.phase_correction(&models.phase, gains.phase, scaling)?)
            }
        })
    }

    pub fn map<U: Real>(&self, zero: U, mut f: impl FnMut(&T) -> U) -> SyncStore<U> {
        SyncStore {
            own: self.own,
            zero,
            x_phi: self.x_phi.iter().map(&mut f).collect(),
            x_t: self.x_t.iter().map(&mut f).collect(),
            power_dbm: self.power_dbm.clone(),
            held_period_correction: f(&self.held_period_correction),
        }
    }
}

/// Time unit from the nominal period and the scenario's reception threshold.
pub fn scaling_for(scenario: &Scenario) -> FeatureScaling {
    FeatureScaling {
        time_unit_s: scenario.nominal_period_s(),
        p_th_dbm: scenario.link_table.p_th_dbm(),
        ..FeatureScaling::default()
    }
}

struct PfdsaNode<'m> {
    store: SyncStore<f64>,
    models: &'m NodeModels,
    gains: LoopGains,
    scaling: FeatureScaling,
}

impl SlotNode for PfdsaNode<'_> {
    fn receive(&mut self, peer: usize, reception: Option<Reception>, own_phase: f64) {
        self.store.ingest(peer, reception, own_phase);
    }

    fn corrections(&mut self, _slot: u64, regime: SlotRegime) -> Result<Corrections> {
        let (period, phase) = self.store.step(regime, self.models, &self.gains, &self.scaling)?;
        Ok(Corrections { period, phase })
    }
}

/// Runs the learned loops for `frames` frames. Divergence is recorded in the
/// trace.
pub fn pfdsa_trace(scenario: &Scenario, models: &[NodeModels], frames: u64, gains: &LoopGains) -> Result<Trace> {
    let n = scenario.nodes();
    if models.len() != n {
        return Err(SyncError::ShapeMismatch { expected: n, actual: models.len() });
    }
    if let Some(bad) = models.iter().find(|m| m.period.peers() + 1 != n || m.phase.peers() + 1 != n) {
        return Err(SyncError::ShapeMismatch { expected: n - 1, actual: bad.period.peers().min(bad.phase.peers()) });
    }
    let scaling = scaling_for(scenario);
    let mut nodes: Vec<PfdsaNode> = models
        .iter()
        .enumerate()
        .map(|(i, m)| PfdsaNode { store: SyncStore::new(i, n, 0.0), models: m, gains: *gains, scaling })
        .collect();
    simulate(scenario, &mut nodes, frames * n as u64)
}

pub fn pfdsa_run(scenario: &Scenario, models: &[NodeModels], frames: u64, gains: &LoopGains) -> Result<Trace> {
    pfdsa_trace(scenario, models, frames, gains)?.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkTable;
    use crate::neural::InitScheme;
    use crate::rng;
    use crate::scenario::{generate_scenario, GenerationConfig};
    use crate::sim_core::regime_of;
    use proptest::prelude::*;

    fn rx(t_stamp: f64) -> Option<Reception> {
        Some(Reception { t_stamp, power_dbm: -90.0 })
    }

    fn random_models(seed: u64, nodes: usize) -> NodeModels {
        let mut r = rng::substream(seed, "pfdsa-test");
        NodeModels {
            period: WeightNetParams::init(&mut r, nodes, InitScheme::UniformFanAverage).unwrap(),
            phase: WeightNetParams::init(&mut r, nodes, InitScheme::UniformFanAverage).unwrap(),
        }
    }

    #[test]
    fn ingest_examples() {
        let mut s = SyncStore::new(0, 16, 0.0);
        s.ingest(3, rx(3e-4), 0.0);
        assert!((s.x_t[3] - 1.875e-5).abs() < 1e-18);
        assert_eq!(s.x_phi[3], 3e-4);

        s.x_phi[3] = 2e-4;
        s.ingest(3, rx(1.28e-3), 1e-3);
        assert!((s.x_t[3] - 5e-6).abs() < 1e-18);
        assert!((s.x_phi[3] - 2.8e-4).abs() < 1e-18);

        s.ingest(3, None, 1e-3);
        assert_eq!((s.x_phi[3], s.x_t[3], s.power_dbm[3]), (0.0, 0.0, None));
    }

    #[test]
    fn correction_examples() {
        let scaling = FeatureScaling::default();
        let mut s = SyncStore::new(0, 4, 0.0);
        assert_eq!(s.period_correction(&random_models(1, 4).period, 0.3, &scaling).unwrap(), 0.0);

        s.power_dbm[2] = Some(-90.0);
        s.x_t[2] = 4e-6;
        let a = s.period_correction(&random_models(1, 4).period, 0.3, &scaling).unwrap();
        assert!((a - 1.2e-6).abs() < 1e-18);
        s.x_phi[2] = -2e-4;
        let w = s.phase_correction(&random_models(2, 4).phase, 0.3, &scaling).unwrap();
        assert!((w + 6e-5).abs() < 1e-18);

        let mut s = SyncStore::new(0, 4, 0.0);
        for (j, x) in [(1, 3e-6), (2, 6e-6), (3, 0.0)] {
            s.power_dbm[j] = Some(-90.0);
            s.x_t[j] = x;
        }
        let a = s.period_correction(&WeightNetParams::zeros(4), 0.3, &scaling).unwrap();
        assert!((a - 9e-7).abs() < 1e-18);
    }

    #[test]
    fn held_correction_applies_for_the_whole_interval() {
        let n = 4;
        let models = random_models(5, n);
        let mut s = SyncStore::new(0, n, 0.0);
        for j in 1..n {
            s.power_dbm[j] = Some(-80.0 - j as f64);
            s.x_t[j] = 1e-6 * j as f64;
            s.x_phi[j] = -1e-4 * j as f64;
        }
        let (mut total, mut first) = (0.0, None);
        for k in 0..(3 * n as u64) {
            let regime = regime_of(k, n).unwrap();
            let (a, w) = s.step(regime, &models, &LoopGains::default(), &FeatureScaling::default()).unwrap();
            assert_eq!(a != 0.0, regime.is_period_update());
            assert_eq!(w != 0.0, regime == SlotRegime::PhaseUpdate);
            if regime == SlotRegime::PeriodUpdateFirst {
                first = Some(a);
            }
            if regime.is_period_update() {
                assert_eq!(Some(a), first);
            }
            total += a / n as f64;
        }
        assert!((total - first.unwrap()).abs() < 1e-20);
    }

    fn synchronized(n: usize) -> Scenario {
        let table = LinkTable::uniform(n, -114.0, -80.0, 0.0).unwrap();
        Scenario::from_links(table, vec![5e-3; n], vec![2e-3; n]).unwrap()
    }

    #[test]
    fn synchronized_network_is_a_fixed_point() {
        let s = synchronized(5);
        let models: Vec<NodeModels> = (0..5).map(|i| random_models(i, 5)).collect();
        let trace = pfdsa_run(&s, &models, 100, &LoopGains::default()).unwrap();
        for r in &trace.records {
            assert_eq!(r.npdr(), 0.0);
            assert!(r.phase_corrections.iter().chain(&r.period_corrections).all(|&c| c == 0.0));
        }
    }

    #[test]
    fn zero_ppm_keeps_nominal_period() {
        let cfg = GenerationConfig { clock_accuracy_ppm: 0.0, ..Default::default() };
        let s = generate_scenario(8, &cfg).unwrap();
        let models: Vec<NodeModels> = (0..16).map(|i| random_models(i, 16)).collect();
        let trace = pfdsa_run(&s, &models, 100, &LoopGains::default()).unwrap();
        for r in &trace.records {
            assert!(r.periods.iter().all(|&t| (t - 5e-3).abs() < 1e-12));
        }
    }

    #[test]
    fn identical_inputs_give_identical_traces() {
        let s = generate_scenario(21, &GenerationConfig::default()).unwrap();
        let models: Vec<NodeModels> = (0..16).map(|i| random_models(100 + i, 16)).collect();
        let a = pfdsa_trace(&s, &models, 30, &LoopGains::default()).unwrap();
        let b = pfdsa_trace(&s, &models, 30, &LoopGains::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gating_and_bounded_steps_on_a_full_trace() {
        let s = generate_scenario(2, &GenerationConfig::default()).unwrap();
        let models: Vec<NodeModels> = (0..16).map(|i| random_models(200 + i, 16)).collect();
        let trace = pfdsa_trace(&s, &models, 60, &LoopGains::default()).unwrap();
        assert!(trace.divergence.is_none());
        for r in &trace.records {
            let regime = regime_of(r.slot, 16).unwrap();
            if !regime.is_period_update() {
                assert!(r.period_corrections.iter().all(|&a| a == 0.0));
            }
            if regime != SlotRegime::PhaseUpdate {
                assert!(r.phase_corrections.iter().all(|&w| w == 0.0));
            }
        }
    }

    proptest! {
        #[test]
        fn bounded_step_and_mask_invariance(
            seed in 0u64..1000,
            present in proptest::collection::vec(any::<bool>(), 5),
            values in proptest::collection::vec(-1e-3f64..1e-3, 6),
            junk in -1.0f64..1.0,
        ) {
            let n = 6;
            let models = random_models(seed, n);
            let scaling = FeatureScaling::default();
            let mut s = SyncStore::new(0, n, 0.0);
            for j in 1..n {
                if present[j - 1] {
                    s.ingest(j, rx(values[j]), 0.0);
                    s.ingest(j, rx(values[j] * 0.5), 0.0);
                } else {
                    s.ingest(j, None, 0.0);
                }
            }
            let a = s.period_correction(&models.period, 0.3, &scaling).unwrap();
            let w = s.phase_correction(&models.phase, 0.3, &scaling).unwrap();
            let max_t = s.x_t.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let max_phi = s.x_phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(a.abs() <= 0.3 * max_t * (1.0 + 1e-12));
            prop_assert!(w.abs() <= 0.3 * max_phi * (1.0 + 1e-12));

            // absent peers are encoded as zeros whatever their stale values
            let mut stale = s.clone();
            for j in 1..n {
                if !present[j - 1] {
                    stale.x_phi[j] = junk;
                    stale.x_t[j] = junk;
                }
            }
            prop_assert_eq!(stale.encode_features(&stale.x_phi, &scaling), s.encode_features(&s.x_phi, &scaling));
            prop_assert_eq!(stale.phase_correction(&models.phase, 0.3, &scaling).unwrap(), w);
        }
    }
}
