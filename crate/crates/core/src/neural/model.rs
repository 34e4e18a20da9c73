//! JSON persistence for trained weight networks.
//!
//! The file carries everything needed to rebuild a network's inputs: layer
//! dimensions, the peer ordering convention and the feature scaling constants.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::WeightNetParams;
use crate::error::{Result, SyncError};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const FEATURE_ORDER: &str = "peers ascending by node index, each as (time / time_unit_s, power feature); own node skipped";

/// Input scaling shared by training and inference.
///
/// Times are divided by `time_unit_s` (the nominal period). Powers become
/// `(P_dbm - p_th_dbm) / power_span_db` clipped to `[0, power_clip]`. Peers
/// not heard above threshold are encoded as zero for both entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureScaling {
    pub time_unit_s: f64,
    pub p_th_dbm: f64,
    pub power_span_db: f64,
    pub power_clip: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        FeatureScaling { time_unit_s: 5e-3, p_th_dbm: -114.0, power_span_db: 60.0, power_clip: 1.5 }
    }
}

impl FeatureScaling {
    pub fn power_feature(&self, power_dbm: f64) -> f64 {
        ((power_dbm - self.p_th_dbm) / self.power_span_db).clamp(0.0, self.power_clip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub scenario_seed: u64,
    /// Zero-based node index.
    pub node: usize,
    #[serde(rename = "loop")]
    pub loop_kind: crate::trainer::LoopKind,
    pub params: WeightNetParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub nodes: usize,
    pub layer_dims: Vec<[usize; 2]>,
    pub activation: String,
    pub feature_order: String,
    pub scaling: FeatureScaling,
    pub models: Vec<ModelEntry>,
}

impl ModelFile {
    pub fn new(nodes: usize, scaling: FeatureScaling, models: Vec<ModelEntry>) -> Self {
        let layer_dims = models
            .first()
            .map(|m| m.params.layers.iter().map(|l| [l.inputs, l.outputs]).collect())
            .unwrap_or_default();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            nodes,
            layer_dims,
            activation: "sigmoid".into(),
            feature_order: FEATURE_ORDER.into(),
            scaling,
            models,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(SyncError::Validation(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        for m in &self.models {
            let dims: Vec<[usize; 2]> = m.params.layers.iter().map(|l| [l.inputs, l.outputs]).collect();
            let consistent = dims == self.layer_dims
                && m.params.peers() + 1 == self.nodes
                && m.node < self.nodes
                && m.params.layers.iter().all(|l| {
                    l.weights.len() == l.inputs * l.outputs && l.biases.len() == l.outputs
                })
                && m.params.is_finite();
            if !consistent {
                return Err(SyncError::Validation(format!(
                    "model for node {} ({:?}) does not match the declared layout",
                    m.node, m.loop_kind
                )));
            }
        }
        Ok(())
    }
}

pub fn save_models(file: &ModelFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string(file)?;
    fs::write(path, text).map_err(|e| SyncError::io(path, e))
}

pub fn load_models(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|e| SyncError::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| SyncError::parse(path, &e))?;
    file.validate()?;
    Ok(file)
}
