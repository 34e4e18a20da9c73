//! Node geometry, two-ray path loss, propagation delay and neighborhoods.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SyncError};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePlacement {
    pub x_m: f64,
    pub y_m: f64,
}

impl NodePlacement {
    pub fn distance_m(&self, other: &NodePlacement) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub antenna_height_m: f64,
    pub p_th_dbm: f64,
    /// Lumped antenna / system gain added to the far-field two-ray budget.
    /// The default places the mean ordered-link connectivity of a uniform
    /// 16-node, 10 km deployment near 30 %.
    pub gain_offset_db: f64,
    pub side_length_m: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            tx_power_dbm: 33.0,
            antenna_height_m: 1.5,
            p_th_dbm: -114.0,
            gain_offset_db: -11.5,
            side_length_m: 10_000.0,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tx_power_dbm.is_finite()
            && self.p_th_dbm.is_finite()
            && self.gain_offset_db.is_finite()
            && self.antenna_height_m > 0.0
            && self.side_length_m > 0.0
            && self.side_length_m.is_finite();
        if !ok {
            return Err(SyncError::InvalidConfig(format!("bad radio config {self:?}")));
        }
        Ok(())
    }
}

/// Far-field two-ray ground-reflection received power:
/// `P_tx + G + 10 log10((h_t h_r)^2 / d^4)`.
pub fn received_power_dbm(
    tx_power_dbm: f64,
    tx_height_m: f64,
    rx_height_m: f64,
    distance_m: f64,
    gain_offset_db: f64,
) -> Result<f64> {
    if distance_m == 0.0 {
        return Err(SyncError::CoLocated { a: 0, b: 0 });
    }
    if !(distance_m > 0.0) || !(tx_height_m > 0.0) || !(rx_height_m > 0.0) {
        return Err(SyncError::InvalidChannel(format!(
            "distance and antenna heights must be positive (d={distance_m}, h_t={tx_height_m}, h_r={rx_height_m})"
        )));
    }
    let hh = tx_height_m * rx_height_m;
    let ratio = (hh * hh) / (distance_m * distance_m * distance_m * distance_m);
    Ok(tx_power_dbm + gain_offset_db + 10.0 * ratio.log10())
}

pub fn propagation_delay(distance_m: f64) -> f64 {
    distance_m / SPEED_OF_LIGHT_M_S
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub rx: usize,
    pub tx: usize,
    pub received_power_dbm: f64,
    pub delay_s: f64,
    pub above_threshold: bool,
}

/// Static per-link received power and delay for every ordered pair `(rx, tx)`,
/// `rx != tx`, stored row-major by receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTable {
    nodes: usize,
    p_th_dbm: f64,
    links: Vec<Link>,
}

impl LinkTable {
    fn slot(nodes: usize, rx: usize, tx: usize) -> usize {
        rx * (nodes - 1) + if tx < rx { tx } else { tx - 1 }
    }

    /// Builds a table from explicit `(rx, tx, power_dbm, delay_s)` entries.
    /// Every ordered pair must appear exactly once.
    pub fn from_links(
        nodes: usize,
        p_th_dbm: f64,
        entries: impl IntoIterator<Item = (usize, usize, f64, f64)>,
    ) -> Result<Self> {
        let expected = nodes * nodes.saturating_sub(1);
        let mut links: Vec<Option<Link>> = vec![None; expected];
        for (rx, tx, power, delay) in entries {
            if rx >= nodes || tx >= nodes || rx == tx {
                return Err(SyncError::Validation(format!("bad link ({rx}, {tx}) for {nodes} nodes")));
            }
            if !(delay >= 0.0) || !power.is_finite() {
                return Err(SyncError::InvalidChannel(format!(
                    "link ({rx}, {tx}) has power {power} dBm and delay {delay} s"
                )));
            }
            let slot = Self::slot(nodes, rx, tx);
            if links[slot].is_some() {
                return Err(SyncError::Validation(format!("duplicate link ({rx}, {tx})")));
            }
            links[slot] = Some(Link {
                rx,
                tx,
                received_power_dbm: power,
                delay_s: delay,
                above_threshold: power > p_th_dbm,
            });
        }
        let links = links
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| SyncError::Validation("link table is missing ordered pairs".into()))?;
        Ok(LinkTable { nodes, p_th_dbm, links })
    }

    /// Every ordered pair with the same power and delay.
    pub fn uniform(nodes: usize, p_th_dbm: f64, power_dbm: f64, delay_s: f64) -> Result<Self> {
        let entries = (0..nodes)
            .flat_map(|rx| (0..nodes).filter(move |&tx| tx != rx).map(move |tx| (rx, tx, power_dbm, delay_s)));
        Self::from_links(nodes, p_th_dbm, entries)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn p_th_dbm(&self) -> f64 {
        self.p_th_dbm
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, rx: usize, tx: usize) -> Option<&Link> {
        if rx == tx || rx >= self.nodes || tx >= self.nodes {
            return None;
        }
        self.links.get(Self::slot(self.nodes, rx, tx))
    }

    /// Transmitters heard above threshold at `rx`, ascending.
    pub fn neighbors(&self, rx: usize) -> Vec<usize> {
        (0..self.nodes)
            .filter(|&tx| self.link(rx, tx).is_some_and(|l| l.above_threshold))
            .collect()
    }

    /// Fraction of ordered links received above threshold.
    pub fn connectivity_fraction(&self) -> f64 {
        if self.nodes < 2 {
            return 0.0;
        }
        let up = self.links.iter().filter(|l| l.above_threshold).count();
        up as f64 / (self.nodes * (self.nodes - 1)) as f64
    }

    /// True when the above-threshold graph is strongly connected.
    pub fn is_connected(&self) -> bool {
        if self.nodes == 0 {
            return false;
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; self.nodes];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..self.nodes {
                    let link = if forward { self.link(v, u) } else { self.link(u, v) };
                    if !seen[v] && link.is_some_and(|l| l.above_threshold) {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

pub fn build_link_table(placements: &[NodePlacement], radio: &RadioConfig) -> Result<LinkTable> {
    radio.validate()?;
    let n = placements.len();
    let mut entries = Vec::with_capacity(n * n.saturating_sub(1));
    for rx in 0..n {
        for tx in 0..n {
            if rx == tx {
                continue;
            }
            let d = placements[rx].distance_m(&placements[tx]);
            if d == 0.0 {
                return Err(SyncError::CoLocated { a: rx.min(tx), b: rx.max(tx) });
            }
            let power = received_power_dbm(
                radio.tx_power_dbm,
                radio.antenna_height_m,
                radio.antenna_height_m,
                d,
                radio.gain_offset_db,
            )?;
            entries.push((rx, tx, power, propagation_delay(d)));
        }
    }
    LinkTable::from_links(n, radio.p_th_dbm, entries)
}

pub fn connectivity_fraction(table: &LinkTable) -> f64 {
    table.connectivity_fraction()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent route: split the two-ray budget into height gain and
    /// distance loss terms.
    fn hand_budget(p: f64, h: f64, d: f64) -> f64 {
        p + 20.0 * (h * h).log10() - 40.0 * d.log10()
    }

    #[test]
    fn two_ray_examples() {
        let far = received_power_dbm(33.0, 1.5, 1.5, 10_000.0, 0.0).unwrap();
        assert!((far - hand_budget(33.0, 1.5, 10_000.0)).abs() < 1e-10);
        assert!((far - -119.96).abs() < 0.005);
        assert!(far < -114.0);

        let mid = received_power_dbm(33.0, 1.5, 1.5, 7_000.0, 0.0).unwrap();
        assert!((mid - hand_budget(33.0, 1.5, 7_000.0)).abs() < 1e-10);
        assert!((mid - -113.76).abs() < 0.005);
        assert!(mid > -114.0);

        let near = received_power_dbm(33.0, 1.5, 1.5, 1.0, 0.0).unwrap();
        assert!((near - 40.04).abs() < 0.005);

        assert!(matches!(
            received_power_dbm(33.0, 1.5, 1.5, 0.0, 0.0),
            Err(SyncError::CoLocated { .. })
        ));
    }

    #[test]
    fn delay_examples() {
        assert_eq!(propagation_delay(0.0), 0.0);
        assert!((propagation_delay(2997.92458) - 1.0e-5).abs() < 1e-18);
        let diag = propagation_delay(10_000.0 * 2f64.sqrt());
        assert!((diag - 4.717e-5).abs() < 5e-9);
    }

    fn radio0() -> RadioConfig {
        RadioConfig { gain_offset_db: 0.0, ..RadioConfig::default() }
    }

    #[test]
    fn two_node_tables() {
        let near = [NodePlacement { x_m: 0.0, y_m: 0.0 }, NodePlacement { x_m: 1000.0, y_m: 0.0 }];
        let t = build_link_table(&near, &radio0()).unwrap();
        let p = t.link(0, 1).unwrap().received_power_dbm;
        let oracle = 33.0 + 10.0 * (1.5f64.powi(4) / 1e12).log10();
        assert!((p - oracle).abs() < 1e-12 && (p - -79.96).abs() < 0.005);
        assert!(t.link(0, 1).unwrap().above_threshold && t.link(1, 0).unwrap().above_threshold);
        assert_eq!(t.connectivity_fraction(), 1.0);

        let far = [NodePlacement { x_m: 0.0, y_m: 0.0 }, NodePlacement { x_m: 10_000.0, y_m: 0.0 }];
        let t = build_link_table(&far, &radio0()).unwrap();
        assert!(!t.link(0, 1).unwrap().above_threshold && !t.link(1, 0).unwrap().above_threshold);
        assert_eq!(t.connectivity_fraction(), 0.0);

        let one = build_link_table(&near[..1], &radio0()).unwrap();
        assert!(one.links().is_empty());
    }

    #[test]
    fn co_located_placement_rejected() {
        let p = [NodePlacement { x_m: 3.0, y_m: 4.0 }; 2];
        assert!(matches!(build_link_table(&p, &radio0()), Err(SyncError::CoLocated { .. })));
    }

    #[test]
    fn connectivity_of_full_and_empty_tables() {
        let full = LinkTable::from_links(
            4,
            -114.0,
            (0..4).flat_map(|r| (0..4).filter(move |&t| t != r).map(move |t| (r, t, -50.0, 0.0))),
        )
        .unwrap();
        assert_eq!(full.connectivity_fraction(), 1.0);
        assert!(full.is_connected());

        let empty = LinkTable::from_links(
            4,
            -114.0,
            (0..4).flat_map(|r| (0..4).filter(move |&t| t != r).map(move |t| (r, t, -150.0, 0.0))),
        )
        .unwrap();
        assert_eq!(empty.connectivity_fraction(), 0.0);
        assert!(!empty.is_connected());
    }

    proptest! {
        #[test]
        fn power_decreases_with_distance(d in 1.0f64..50_000.0, extra in 1e-3f64..1_000.0) {
            let a = received_power_dbm(33.0, 1.5, 1.5, d, 0.0).unwrap();
            let b = received_power_dbm(33.0, 1.5, 1.5, d + extra, 0.0).unwrap();
            prop_assert!(b < a);
        }

        #[test]
        fn tables_are_symmetric(coords in proptest::collection::vec((0.0f64..10_000.0, 0.0f64..10_000.0), 2..10)) {
            let placements: Vec<_> = coords.iter().map(|&(x_m, y_m)| NodePlacement { x_m, y_m }).collect();
            let t = match build_link_table(&placements, &RadioConfig::default()) {
                Ok(t) => t,
                Err(SyncError::CoLocated { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            for l in t.links() {
                let back = t.link(l.tx, l.rx).unwrap();
                prop_assert_eq!(l.received_power_dbm, back.received_power_dbm);
                prop_assert_eq!(l.delay_s, back.delay_s);
                prop_assert_eq!(l.above_threshold, l.received_power_dbm > t.p_th_dbm());
            }
        }
    }
}
