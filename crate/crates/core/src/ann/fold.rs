use super::layers::BatchNorm;
use super::{Layer, Network};
use crate::{Error, Result};

/// Merges every batchnorm layer into the dense/conv layer before it:
/// `W' = gamma W / sigma`, `b' = gamma (b - mu) / sigma + beta`.
///
/// The batchnorm's ReLU flag moves onto the merged layer.
pub fn fold_batchnorm(net: &Network) -> Result<Network> {
    let mut out: Vec<Box<dyn Layer>> = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let Some(bn) = layer.as_any().downcast_ref::<BatchNorm>() else {
            out.push(layer.clone());
            continue;
        };
        let prev = match out.last_mut() {
            Some(p) if p.is_weighted() && !p.relu() => p,
            _ => {
                return Err(Error::Layer {
                    layer: i,
                    message: "batchnorm must directly follow a dense or conv2d layer without ReLU".into(),
                })
            }
        };
        let (scale, shift) = bn.channel_affine().map_err(|e| Error::Layer {
            layer: i,
            message: e.to_string(),
        })?;
        prev.fold_channel_affine(&scale, &shift)?;
        prev.set_relu(bn.relu());
    }
    Network::new(net.input_shape(), out)
}
