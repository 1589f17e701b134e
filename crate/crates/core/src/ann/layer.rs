//! The [`Layer`] trait and the name-keyed registry used to build layers
//! from model files and architecture configs.

use crate::{Error, Result, Shape};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use super::layers::{AvgPool2d, BatchNorm, Conv2d, Dense, Flatten};

/// A differentiable affine stage of a [`super::Network`].
///
/// Parameters live in one flat buffer; layers that carry weights put them
/// first (they receive weight decay) and the bias after.
pub trait Layer: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;
    fn input_shape(&self) -> Shape;
    fn output_shape(&self) -> Shape;

    /// ReLU applied to this layer's output.
    fn relu(&self) -> bool;
    fn set_relu(&mut self, relu: bool);

    /// Dense and convolutional layers; these become spiking layers.
    fn is_weighted(&self) -> bool {
        false
    }

    /// Affine output without the activation.
    fn forward(&self, input: &[f64], out: &mut [f64]);

    /// The linear part only: `forward` minus the bias.
    fn apply_linear(&self, input: &[f64], out: &mut [f64]);

    /// Bias laid out like the output tensor.
    fn expanded_bias(&self) -> Vec<f64> {
        vec![0.0; self.output_shape().len()]
    }

    /// Accumulates parameter gradients into `grad_params` and, when asked,
    /// writes the input gradient into `grad_in`.
    fn backward(&self, input: &[f64], grad_out: &[f64], grad_in: Option<&mut [f64]>, grad_params: &mut [f64]);

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    /// Leading parameters subject to weight decay.
    fn decayed_params(&self) -> usize {
        0
    }

    /// Scales output channel `c` by `scale[c]` and then adds `shift[c]`.
    fn fold_channel_affine(&mut self, _scale: &[f64], _shift: &[f64]) -> Result<()> {
        Err(Error::validation(format!("{} layers cannot absorb an affine map", self.kind())))
    }

    /// Multiplies the bias by `factor`.
    fn scale_bias(&mut self, _factor: f64) {}

    fn to_record(&self) -> LayerRecord;
    fn clone_box(&self) -> Box<dyn Layer>;
    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Serialized form of one layer. Which fields are meaningful depends on `kind`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "is_false")]
    pub relu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Firing threshold, present in converted models only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_thr: Option<f64>,
}

impl LayerRecord {
    pub fn new(kind: &str) -> Self {
        LayerRecord {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn dense(units: usize, relu: bool) -> Self {
        LayerRecord {
            units: Some(units),
            relu,
            ..LayerRecord::new("dense")
        }
    }

    pub fn conv2d(filters: usize, kernel: usize, stride: usize, padding: usize, relu: bool) -> Self {
        LayerRecord {
            filters: Some(filters),
            kernel: Some(kernel),
            stride: Some(stride),
            padding: Some(padding),
            relu,
            ..LayerRecord::new("conv2d")
        }
    }

    pub fn avgpool(kernel: usize) -> Self {
        LayerRecord {
            kernel: Some(kernel),
            stride: Some(kernel),
            ..LayerRecord::new("avgpool")
        }
    }

    pub fn batchnorm(relu: bool) -> Self {
        LayerRecord {
            relu,
            ..LayerRecord::new("batchnorm")
        }
    }

    pub fn flatten() -> Self {
        LayerRecord::new("flatten")
    }

    pub(crate) fn require(&self, field: &'static str, value: Option<usize>) -> Result<usize> {
        value.ok_or_else(|| Error::validation(format!("{} layer requires `{field}`", self.kind)))
    }

    pub(crate) fn checked_vec(&self, field: &'static str, value: &Option<Vec<f64>>, len: usize) -> Result<Option<Vec<f64>>> {
        match value {
            Some(v) if v.len() != len => Err(Error::Shape {
                expected: format!("{} `{field}` of length {len}", self.kind),
                actual: format!("length {}", v.len()),
            }),
            other => Ok(other.clone()),
        }
    }
}

/// Constructs a layer from its record for a given input shape. Missing
/// parameters are initialized from `rng`.
pub type LayerBuilder = fn(&LayerRecord, Shape, &mut ChaCha8Rng) -> Result<Box<dyn Layer>>;

/// Name-keyed table of layer constructors.
#[derive(Clone)]
pub struct LayerRegistry {
    builders: BTreeMap<String, LayerBuilder>,
}

impl LayerRegistry {
    pub fn empty() -> Self {
        LayerRegistry {
            builders: BTreeMap::new(),
        }
    }

    /// dense, conv2d, avgpool, batchnorm, flatten.
    pub fn builtin() -> Self {
        let mut r = LayerRegistry::empty();
        r.register("dense", Dense::build);
        r.register("conv2d", Conv2d::build);
        r.register("avgpool", AvgPool2d::build);
        r.register("batchnorm", BatchNorm::build);
        r.register("flatten", Flatten::build);
        r
    }

    /// Shared instance of [`LayerRegistry::builtin`].
    pub fn global() -> &'static LayerRegistry {
        static REGISTRY: OnceLock<LayerRegistry> = OnceLock::new();
        REGISTRY.get_or_init(LayerRegistry::builtin)
    }

    pub fn register(&mut self, kind: &str, builder: LayerBuilder) -> Option<LayerBuilder> {
        self.builders.insert(kind.to_string(), builder)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, record: &LayerRecord, input: Shape, rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        let builder = self.builders.get(&record.kind).ok_or_else(|| Error::UnknownKind {
            registry: "layer kind",
            name: record.kind.clone(),
        })?;
        builder(record, input, rng)
    }
}

impl fmt::Debug for LayerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}
