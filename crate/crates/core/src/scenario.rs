//! Reproducible experiment worlds: node placement, link table and initial
//! clocks, all derived from one seed.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{build_link_table, LinkTable, NodePlacement, RadioConfig};
use crate::error::{Result, SyncError};
use crate::rng;
use crate::sim_core::{check_nodes, ClockState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub nodes: usize,
    pub nominal_frequency_hz: f64,
    pub clock_accuracy_ppm: f64,
    pub radio: RadioConfig,
    pub placement_retries: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            nodes: 16,
            nominal_frequency_hz: 200.0,
            clock_accuracy_ppm: 150.0,
            radio: RadioConfig::default(),
            placement_retries: 100,
        }
    }
}

impl GenerationConfig {
    pub fn nominal_period_s(&self) -> f64 {
        1.0 / self.nominal_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        check_nodes(self.nodes)?;
        self.radio.validate()?;
        if !(self.nominal_frequency_hz > 0.0 && self.nominal_frequency_hz.is_finite()) {
            return Err(SyncError::InvalidConfig("nominal frequency must be positive".into()));
        }
        if !(self.clock_accuracy_ppm >= 0.0 && self.clock_accuracy_ppm < 1e6) {
            return Err(SyncError::InvalidConfig("clock accuracy must be in [0, 1e6) ppm".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub config: GenerationConfig,
    pub placements: Vec<NodePlacement>,
    pub link_table: LinkTable,
    #[serde(rename = "initial_period_s")]
    pub initial_periods: Vec<f64>,
    #[serde(rename = "initial_phase_s")]
    pub initial_phases: Vec<f64>,
}

impl Scenario {
    /// A scenario around a hand-made link table. Placements are nominal
    /// (nodes 1 m apart on a line) and do not drive the links.
    pub fn from_links(
        link_table: LinkTable,
        initial_periods: Vec<f64>,
        initial_phases: Vec<f64>,
    ) -> Result<Self> {
        let n = link_table.nodes();
        let config = GenerationConfig {
            nodes: n,
            radio: RadioConfig { p_th_dbm: link_table.p_th_dbm(), ..RadioConfig::default() },
            ..GenerationConfig::default()
        };
        let scenario = Scenario {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            config,
            placements: (0..n).map(|i| NodePlacement { x_m: i as f64, y_m: 0.0 }).collect(),
            link_table,
            initial_periods,
            initial_phases,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn nodes(&self) -> usize {
        self.placements.len()
    }

    pub fn initial_clocks(&self) -> Result<Vec<ClockState>> {
        self.initial_phases
            .iter()
            .zip(&self.initial_periods)
            .map(|(&phase, &period)| ClockState::new(phase, period))
            .collect()
    }

    pub fn nominal_period_s(&self) -> f64 {
        self.config.nominal_period_s()
    }

    /// Structural checks for scenarios loaded from disk or built by hand.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SyncError::Validation(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let n = self.placements.len();
        check_nodes(n).map_err(|e| SyncError::Validation(e.to_string()))?;
        if self.config.nodes != n
            || self.initial_periods.len() != n
            || self.initial_phases.len() != n
            || self.link_table.nodes() != n
        {
            return Err(SyncError::Validation(format!(
                "inconsistent node counts: placements {n}, config {}, periods {}, phases {}, links {}",
                self.config.nodes,
                self.initial_periods.len(),
                self.initial_phases.len(),
                self.link_table.nodes()
            )));
        }
        for (i, (&t, &phi)) in self.initial_periods.iter().zip(&self.initial_phases).enumerate() {
            if !(t > 0.0 && t.is_finite()) || !(0.0..=t).contains(&phi) {
                return Err(SyncError::Validation(format!(
                    "node {i}: period {t:e} s / phase {phi:e} s out of range"
                )));
            }
        }
        Ok(())
    }
}

pub fn generate_scenario(seed: u64, config: &GenerationConfig) -> Result<Scenario> {
    config.validate()?;
    let n = config.nodes;
    let side = config.radio.side_length_m;

    let mut placement_rng = rng::substream(seed, rng::PLACEMENT);
    let mut attempt = 0;
    let (placements, link_table) = loop {
        let placements: Vec<NodePlacement> = (0..n)
            .map(|_| NodePlacement {
                x_m: placement_rng.random_range(0.0..=side),
                y_m: placement_rng.random_range(0.0..=side),
            })
            .collect();
        match build_link_table(&placements, &config.radio) {
            Ok(table) => break (placements, table),
            Err(SyncError::CoLocated { .. }) if attempt < config.placement_retries => attempt += 1,
            Err(e) => return Err(e),
        }
    };

    let mut clock_rng = rng::substream(seed, rng::CLOCKS);
    let f_nom = config.nominal_frequency_hz;
    let spread = config.clock_accuracy_ppm * 1e-6;
    let mut initial_periods = Vec::with_capacity(n);
    let mut initial_phases = Vec::with_capacity(n);
    for _ in 0..n {
        let f = if spread == 0.0 {
            f_nom
        } else {
            clock_rng.random_range(f_nom * (1.0 - spread)..=f_nom * (1.0 + spread))
        };
        let period = 1.0 / f;
        let u: f64 = clock_rng.random_range(0.0..=1.0);
        initial_periods.push(period);
        initial_phases.push(u * period);
    }

    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        seed,
        config: config.clone(),
        placements,
        link_table,
        initial_periods,
        initial_phases,
    })
}

/// True when the ordered-link connectivity is within `tol` of `target` and the
/// above-threshold graph is connected.
pub fn accept_scenario(scenario: &Scenario, target: f64, tol: f64) -> bool {
    accept_links(&scenario.link_table, target, tol)
}

pub fn accept_links(table: &LinkTable, target: f64, tol: f64) -> bool {
    (table.connectivity_fraction() - target).abs() <= tol && table.is_connected()
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(scenario)?;
    fs::write(path, text).map_err(|e| SyncError::io(path, e))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| SyncError::io(path, e))?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| SyncError::parse(path, &e))?;
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_periods_within_accuracy() {
        let s = generate_scenario(3, &GenerationConfig::default()).unwrap();
        assert_eq!(s.nodes(), 16);
        // 5 ms ± 150 ppm, with the reciprocal's exact bounds
        let (lo, hi): (f64, f64) = (1.0 / (200.0 * (1.0 + 150e-6)), 1.0 / (200.0 * (1.0 - 150e-6)));
        assert!((lo - 4.99925e-3).abs() < 1e-9 && (hi - 5.00075e-3).abs() < 1e-9);
        for (&t, &phi) in s.initial_periods.iter().zip(&s.initial_phases) {
            assert!((lo..=hi).contains(&t), "{t}");
            assert!((0.0..=t).contains(&phi));
        }
        for p in &s.placements {
            assert!((0.0..=10_000.0).contains(&p.x_m) && (0.0..=10_000.0).contains(&p.y_m));
        }
    }

    #[test]
    fn zero_ppm_gives_nominal_period() {
        let cfg = GenerationConfig { clock_accuracy_ppm: 0.0, ..Default::default() };
        let s = generate_scenario(11, &cfg).unwrap();
        assert!(s.initial_periods.iter().all(|&t| t == 5e-3));
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let cfg = GenerationConfig::default();
        assert_eq!(generate_scenario(99, &cfg).unwrap(), generate_scenario(99, &cfg).unwrap());
        assert_ne!(generate_scenario(99, &cfg).unwrap(), generate_scenario(100, &cfg).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = GenerationConfig { nodes: 1, ..Default::default() };
        assert!(generate_scenario(0, &bad).is_err());
        let mut bad = GenerationConfig::default();
        bad.radio.side_length_m = 0.0;
        assert!(generate_scenario(0, &bad).is_err());
    }

    fn ring_table(n: usize, extra_chords: &[(usize, usize)], split: bool) -> LinkTable {
        let mut up = vec![vec![false; n]; n];
        let half = n / 2;
        for i in 0..n {
            let j = (i + 1) % n;
            let crosses = split && ((i < half) != (j < half));
            if !crosses {
                up[i][j] = true;
                up[j][i] = true;
            }
        }
        for &(a, b) in extra_chords {
            up[a][b] = true;
            up[b][a] = true;
        }
        let entries = (0..n).flat_map(|r| {
            let up = up.clone();
            (0..n).filter(move |&t| t != r).map(move |t| (r, t, if up[r][t] { -90.0 } else { -130.0 }, 1e-6))
        });
        LinkTable::from_links(n, -114.0, entries).unwrap()
    }

    #[test]
    fn acceptance_filter() {
        // ring (20 ordered links) + 4 chords (8) = 28 / 90
        let chords = [(0, 5), (2, 7), (1, 6), (3, 8)];
        let t = ring_table(10, &chords, false);
        assert!((t.connectivity_fraction() - 0.3111).abs() < 1e-3);
        assert!(accept_links(&t, 0.30, 0.05));

        let dense = ring_table(10, &[(0, 5), (2, 7), (1, 6), (3, 8), (4, 9), (0, 3), (1, 4), (2, 5), (5, 8), (6, 9),
            (0, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7), (6, 8), (7, 9), (0, 8), (1, 9), (0, 7), (1, 7), (2, 8)], false);
        assert!(dense.connectivity_fraction() > 0.7);
        assert!(!accept_links(&dense, 0.30, 0.05));

        // Two disconnected halves with the same link density.
        let within = [(0, 2), (1, 3), (0, 3), (5, 7), (6, 8), (5, 8), (1, 4)];
        let split = ring_table(10, &within, true);
        assert!((split.connectivity_fraction() - 0.30).abs() <= 0.05);
        assert!(!split.is_connected());
        assert!(!accept_links(&split, 0.30, 0.05));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = generate_scenario(5, &GenerationConfig::default()).unwrap();
        save_scenario(&s, &path).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), s);

        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"initial_period_s\"") && text.contains("\"p_th_dbm\""));
        assert!(text.contains("\"schema_version\""));
    }

    #[test]
    fn load_rejects_truncated_and_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scenario(5, &GenerationConfig::default()).unwrap();
        let text = serde_json::to_string_pretty(&s).unwrap();

        let truncated = dir.path().join("t.json");
        fs::write(&truncated, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_scenario(&truncated), Err(SyncError::Parse { line, .. }) if line > 0));

        let cfg = GenerationConfig { nodes: 2, ..Default::default() };
        let mut tiny = generate_scenario(1, &cfg).unwrap();
        tiny.placements.truncate(1);
        tiny.initial_periods.truncate(1);
        tiny.initial_phases.truncate(1);
        tiny.config.nodes = 1;
        tiny.link_table = LinkTable::from_links(1, -114.0, []).unwrap();
        let one = dir.path().join("one.json");
        fs::write(&one, serde_json::to_string(&tiny).unwrap()).unwrap();
        assert!(matches!(load_scenario(&one), Err(SyncError::Validation(_))));
    }
}
