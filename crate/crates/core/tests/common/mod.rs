#![allow(dead_code, clippy::needless_range_loop)]

use hdsync::channel::LinkTable;
use hdsync::neural::{FeatureScaling, Linear};
use hdsync::trainer::{AcquisitionSet, TrainingConfig};
use hdsync::{NodeModels, Scenario, WeightNetParams};
use rand::Rng;

/// Fully connected 3-node network with distinct powers, delays and clocks.
pub fn triangle() -> Scenario {
    let entries = [
        (0, 1, -80.0, 2e-6),
        (1, 0, -80.0, 2e-6),
        (0, 2, -95.0, 7e-6),
        (2, 0, -95.0, 7e-6),
        (1, 2, -100.0, 5e-6),
        (2, 1, -100.0, 5e-6),
    ];
    let table = LinkTable::from_links(3, -114.0, entries).unwrap();
    Scenario::from_links(table, vec![5.0004e-3, 4.9997e-3, 5.0001e-3], vec![0.4e-3, 3.1e-3, 1.7e-3]).unwrap()
}

/// Random fully connected 3-node network: powers in [-110, -60] dBm, delays up
/// to 40 us, clocks within 150 ppm.
pub fn random_triangle<R: Rng>(rng: &mut R) -> Scenario {
    let mut entries = Vec::new();
    for a in 0..3usize {
        for b in (a + 1)..3 {
            let p = rng.random_range(-110.0..-60.0);
            let d = rng.random_range(0.0..40e-6);
            entries.push((a, b, p, d));
            entries.push((b, a, p, d));
        }
    }
    let table = LinkTable::from_links(3, -114.0, entries).unwrap();
    let periods: Vec<f64> = (0..3).map(|_| 1.0 / (200.0 * (1.0 + rng.random_range(-150e-6..150e-6)))).collect();
    let phases = periods.iter().map(|t| rng.random_range(0.0..*t)).collect();
    Scenario::from_links(table, periods, phases).unwrap()
}

/// Perfectly synchronized network on `table`: equal periods and phases.
pub fn synchronized(table: LinkTable, period: f64, phase: f64) -> Scenario {
    let n = table.nodes();
    Scenario::from_links(table, vec![period; n], vec![phase; n]).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dense(layer: &Linear, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layer.outputs);
    for o in 0..layer.outputs {
        let mut acc = layer.biases[o];
        for i in 0..layer.inputs {
            acc += layer.weights[o * layer.inputs + i] * x[i];
        }
        out.push(acc);
    }
    out
}

/// Plain forward pass: two sigmoid layers, linear output, softmax over the
/// masked-in entries only.
pub fn oracle_weights(params: &WeightNetParams, features: &[f64], mask: &[bool]) -> Vec<f64> {
    let h1: Vec<f64> = dense(&params.layers[0], features).into_iter().map(sigmoid).collect();
    let h2: Vec<f64> = dense(&params.layers[1], &h1).into_iter().map(sigmoid).collect();
    let z = dense(&params.layers[2], &h2);
    let e: Vec<f64> = z.iter().zip(mask).map(|(v, &m)| if m { v.exp() } else { 0.0 }).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

fn feature_vec(own: usize, values: &[f64], power: &[Option<f64>], scaling: &FeatureScaling) -> (Vec<f64>, Vec<bool>) {
    let mut f = Vec::new();
    let mut mask = Vec::new();
    for j in 0..values.len() {
        if j == own {
            continue;
        }
        match power[j] {
            Some(p) => {
                let pf = ((p - scaling.p_th_dbm) / scaling.power_span_db).clamp(0.0, scaling.power_clip);
                f.push(values[j] / scaling.time_unit_s);
                f.push(pf);
                mask.push(true);
            }
            None => {
                f.push(0.0);
                f.push(0.0);
                mask.push(false);
            }
        }
    }
    (f, mask)
}

fn combine(own: usize, values: &[f64], power: &[Option<f64>], params: &WeightNetParams, scaling: &FeatureScaling) -> f64 {
    let (f, mask) = feature_vec(own, values, power, scaling);
    if !mask.contains(&true) {
        return 0.0;
    }
    let w = oracle_weights(params, &f, &mask);
    let peers: Vec<usize> = (0..values.len()).filter(|&j| j != own).collect();
    peers.iter().zip(&w).map(|(&j, &wj)| wj * values[j]).sum()
}

/// Straight-line evaluation of both losses for one node's record:
///
/// * phase residual `t - phi` on every received slot,
/// * period residual `(t[k] - t[k-N]) / N - T` when both stamps exist,
/// * each squared in units of `loss_time_unit_s` and weighted by `ln(k+1)`,
///
/// with the node's own clock re-simulated from the recorded first frame.
pub fn oracle_losses(set: &AcquisitionSet, models: &NodeModels, cfg: &TrainingConfig) -> (f64, f64) {
    let n = set.nodes;
    let u = cfg.loss_time_unit_s;
    let me = set.node;
    let mut x_phi = vec![0.0; n];
    let mut x_t = vec![0.0; n];
    let mut power: Vec<Option<f64>> = vec![None; n];
    let mut phase = 0.0;
    let mut period = set.initial_period_s;
    let mut held = 0.0;
    let (mut l_t, mut l_phi) = (0.0, 0.0);
    for k in 0..set.records.len() {
        if k < n {
            phase = set.first_frame_phases_s[k];
        }
        let rec = set.records[k];
        let w = ((k + 1) as f64).ln();
        if let Some(r) = rec.reception {
            let e = (r.t_stamp - phase) / u;
            l_phi += w * e * e;
            if k >= n {
                if let Some(p) = set.records[k - n].reception {
                    let e = ((r.t_stamp - p.t_stamp) / n as f64 - period) / u;
                    l_t += w * e * e;
                }
            }
        }
        let j = rec.transmitter;
        if j != me {
            match rec.reception {
                Some(r) => {
                    let d = r.t_stamp - phase;
                    x_t[j] = (d - x_phi[j]) / n as f64;
                    x_phi[j] = d;
                    power[j] = Some(r.power_dbm);
                }
                None => {
                    x_t[j] = 0.0;
                    x_phi[j] = 0.0;
                    power[j] = None;
                }
            }
        }
        let m = k % (3 * n);
        let (a, omega) = if m + 1 < 2 * n {
            (0.0, 0.0)
        } else if m + 1 == 2 * n {
            held = cfg.gains.period * combine(me, &x_t, &power, &models.period, &set.scaling);
            (held, 0.0)
        } else if m + 1 < 3 * n {
            (held, 0.0)
        } else {
            (0.0, cfg.gains.phase * combine(me, &x_phi, &power, &models.phase, &set.scaling))
        };
        phase += period + omega;
        period += a / n as f64;
    }
    (l_t, l_phi)
}

/// Five-point central difference of `f` in every coordinate of `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let mut at = |d: f64| {
                probe[i] = x[i] + d;
                let v = f(&probe);
                probe[i] = x[i];
                v
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
        .collect()
}

/// Entry-wise comparison: an entry passes when its relative error is below
/// `1e-4` or its absolute error is at most `1e-8` (near-zero entries).
/// Returns `(max relative error over entries with |fd| >= 1e-4, max absolute
/// error, count of failing entries)`.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> (f64, f64, usize) {
    let (mut rel, mut abs, mut bad) = (0.0f64, 0.0f64, 0);
    for (&a, &n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        abs = abs.max(diff);
        if n.abs() >= 1e-4 {
            rel = rel.max(diff / n.abs());
        }
        if diff >= 1e-4 * n.abs() && diff > 1e-8 {
            bad += 1;
        }
    }
    (rel, abs, bad)
}
