use super::{ActivationStats, LayerRecord, Network, TrainConfig};
use crate::events::DatasetStats;
use crate::{Error, Result, Shape};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_FORMAT: &str = "eventsnn-model";
const MODEL_VERSION: u32 = 1;

fn is_false(b: &bool) -> bool {
    !*b
}

/// How a model was trained, echoed into the file so the run can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub config: TrainConfig,
    pub history: Vec<f64>,
    pub train_accuracy: f64,
    pub crate_version: String,
}

/// On-disk model: the ANN before conversion, or the spiking network after
/// it (`converted` set, `v_thr` present on every weighted layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub converted: bool,
    pub input_shape: Shape,
    pub classes: usize,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<TrainMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_stats: Option<ActivationStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_stats: Option<DatasetStats>,
    /// Initial-charge mode of a converted model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<crate::convert::ChargeMode>,
}

impl ModelFile {
    pub fn from_network(net: &Network) -> Self {
        Self::blank(net.input_shape(), net.classes(), net.records())
    }

    pub(crate) fn blank(input_shape: Shape, classes: usize, layers: Vec<LayerRecord>) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            converted: false,
            input_shape,
            classes,
            layers,
            metadata: None,
            activation_stats: None,
            dataset_stats: None,
            charge: None,
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        if self.converted {
            return Err(Error::validation("model is already converted to a spiking network"));
        }
        let net = Network::from_records(self.input_shape, &self.layers, 0)?;
        if net.classes() != self.classes {
            return Err(Error::Shape {
                expected: format!("{} classes", self.classes),
                actual: format!("{} logits", net.classes()),
            });
        }
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })?;
        if model.format != MODEL_FORMAT {
            return Err(Error::validation(format!("{}: not a model file (format {:?})", path.display(), model.format)));
        }
        if model.version > MODEL_VERSION {
            return Err(Error::validation(format!("{}: unsupported model version {}", path.display(), model.version)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
