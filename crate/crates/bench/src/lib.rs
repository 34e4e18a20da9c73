//! Shared fixtures for the benchmarks.

use hdsync::harness::{find_scenario, ExperimentConfig};
use hdsync::neural::InitScheme;
use hdsync::pfdsa::NodeModels;
use hdsync::trainer::{acquire, initial_models, AcquisitionSet, TrainingConfig};
use hdsync::Scenario;

/// The first accepted default scenario for `seed`.
pub fn baseline_scenario(seed: u64) -> Scenario {
    find_scenario(&ExperimentConfig::default(), seed).expect("default config finds a scenario").0
}

pub fn untrained_models(scenario: &Scenario) -> Vec<NodeModels> {
    initial_models(scenario.seed, scenario.nodes(), InitScheme::UniformFanAverage).expect("valid node count")
}

/// Training records of every node under the default training config.
pub fn acquisition(scenario: &Scenario, models: &[NodeModels]) -> Vec<AcquisitionSet> {
    let cfg = TrainingConfig::default();
    acquire(scenario, models, cfg.frames, &cfg.gains).expect("acquisition runs")
}
