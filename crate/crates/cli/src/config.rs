//! Layered configuration: command-line flags override config-file values,
//! which override built-in defaults. The resolved snapshot of whatever a
//! command actually used is recorded in its manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use tusvol_core::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub compound: CompoundFileConfig,
    #[serde(default)]
    pub simulate: SimulateFileConfig,
    #[serde(default)]
    pub train: TrainFileConfig,
    #[serde(default)]
    pub segment: SegmentFileConfig,
    #[serde(default)]
    pub volume: VolumeFileConfig,
    #[serde(default)]
    pub stats: StatsFileConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundFileConfig {
    pub spacing: Option<f64>,
    pub kernel: Option<String>,
    pub hole_fill_radius: Option<usize>,
    pub padding: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFileConfig {
    pub subjects: Option<usize>,
    pub observers: Option<usize>,
    pub repeats: Option<usize>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_scale: Option<f64>,
    pub width: Option<usize>,
    pub input_size: Option<usize>,
    pub edge_weight_gain: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFileConfig {
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeFileConfig {
    pub correction_factor: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFileConfig {
    pub alpha: Option<f64>,
    pub loa_multiplier: Option<f64>,
    pub variability_method: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
