//! Small ReLU networks: layers, forward pass, temporal loss, the outlier
//! eliminating activation penalty, manual backprop and training.

mod fold;
pub mod layer;
pub mod layers;
mod loss;
mod model;
mod objective;
mod roe;
mod stats;
mod train;

pub use fold::fold_batchnorm;
pub use layer::{Layer, LayerBuilder, LayerRecord, LayerRegistry};
pub use loss::{cross_entropy, log_softmax, temporal_loss};
pub use model::{ModelFile, TrainMetadata, MODEL_FORMAT};
pub use objective::{backward, objective, Gradients, ObjectiveValue, Sample};
pub use roe::{ln_roe_gradient, roe_penalty, NormExponent};
pub use stats::{
    collect_lambda, ActivationStatistic, ActivationStats, MaxStatistic, PercentileStatistic, StatisticRegistry,
};
pub use train::{accuracy, refresh_batchnorm, train, TrainConfig, TrainReport};

use crate::{Error, Result, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A feed-forward stack of [`Layer`]s ending in a dense logit layer.
#[derive(Debug, Clone)]
pub struct Network {
    input: Shape,
    layers: Vec<Box<dyn Layer>>,
}

impl Network {
    pub fn new(input: Shape, layers: Vec<Box<dyn Layer>>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::validation("network has no layers"));
        };
        if last.kind() != "dense" || last.relu() {
            return Err(Error::validation("final layer must be dense without ReLU"));
        }
        let mut shape = input;
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_shape().len() != shape.len() {
                return Err(Error::Layer {
                    layer: i,
                    message: format!("expects input {}, previous output is {shape}", layer.input_shape()),
                });
            }
            shape = layer.output_shape();
        }
        Ok(Network { input, layers })
    }

    /// Builds from records with the builtin registry; parameters missing
    /// from the records are initialized from `seed`.
    pub fn from_records(input: Shape, records: &[LayerRecord], seed: u64) -> Result<Self> {
        Network::from_records_with(LayerRegistry::global(), input, records, seed)
    }

    pub fn from_records_with(
        registry: &LayerRegistry,
        input: Shape,
        records: &[LayerRecord],
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let layer = registry.build(rec, shape, &mut rng).map_err(|e| match e {
                Error::Layer { .. } => e,
                other => Error::Layer {
                    layer: i,
                    message: other.to_string(),
                },
            })?;
            shape = layer.output_shape();
            layers.push(layer);
        }
        Network::new(input, layers)
    }

    pub fn records(&self) -> Vec<LayerRecord> {
        self.layers.iter().map(|l| l.to_record()).collect()
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(|l| l.output_shape().len()).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params().len()).sum()
    }

    /// Indices of layers whose output passes through ReLU.
    pub fn relu_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].relu()).collect()
    }

    /// Indices of layers whose outputs are normalized on conversion: the
    /// ReLU layers followed by the logit layer.
    pub fn activation_points(&self) -> Vec<usize> {
        let mut pts = self.relu_layers();
        pts.push(self.layers.len() - 1);
        pts
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardPass> {
        if input.len() != self.input.len() {
            return Err(Error::Shape {
                expected: format!("input of {} values {}", self.input.len(), self.input),
                actual: format!("{} values", input.len()),
            });
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let src = outputs.last().map(Vec::as_slice).unwrap_or(input);
            let mut out = vec![0.0; layer.output_shape().len()];
            layer.forward(src, &mut out);
            if layer.relu() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            outputs.push(out);
        }
        Ok(ForwardPass {
            relu: self.relu_layers(),
            outputs,
        })
    }

    /// Logits summed over frames.
    pub fn frame_logits(&self, frames: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.classes()];
        for frame in frames {
            let pass = self.forward(frame)?;
            acc.iter_mut().zip(pass.logits()).for_each(|(a, l)| *a += l);
        }
        Ok(acc)
    }

    /// Class with the largest frame-summed logit.
    pub fn predict(&self, frames: &[Vec<f64>]) -> Result<usize> {
        Ok(crate::argmax(&self.frame_logits(frames)?))
    }
}

/// Per-layer outputs of one forward pass (after ReLU where it applies).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    relu: Vec<usize>,
    pub outputs: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn logits(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// ReLU outputs `a^l`, in layer order.
    pub fn activations(&self) -> Vec<&[f64]> {
        self.relu.iter().map(|&i| self.outputs[i].as_slice()).collect()
    }
}

/// A batch of ReLU activations: for each ReLU layer, one column per
/// sample-frame.
#[derive(Debug, Clone, Default)]
pub struct ActivationBatch {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl ActivationBatch {
    pub fn from_passes(passes: &[ForwardPass]) -> Self {
        let n_layers = passes.first().map(|p| p.relu.len()).unwrap_or(0);
        let layers = (0..n_layers)
            .map(|l| passes.iter().map(|p| p.outputs[p.relu[l]].clone()).collect())
            .collect();
        ActivationBatch { layers }
    }
}
