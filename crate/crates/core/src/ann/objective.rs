use super::loss::{cross_entropy, cross_entropy_grad};
use super::roe::{ln_roe_gradient, roe_penalty, NormExponent};
use super::{ForwardPass, Network};
use crate::{Error, Result};

/// One labeled training example as `F` rate frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Vec<Vec<f64>>,
    pub label: usize,
}

/// Value of `L_TT + alpha * sum_l ln R(A^l)` over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    /// Batch mean of the temporal loss.
    pub temporal_loss: f64,
    /// `sum_l ln R(A^l)` over layers that were not skipped.
    pub penalty: f64,
    /// `R(A^l)` per ReLU layer; 0 marks a skipped layer.
    pub ratios: Vec<f64>,
}

/// Parameter gradients, one buffer per layer shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(net: &Network) -> Self {
        Gradients {
            layers: net.layers().iter().map(|l| vec![0.0; l.params().len()]).collect(),
        }
    }
}

/// `(sample, frame, pass)` per activation column, sample by sample.
type Columns = Vec<(usize, usize, ForwardPass)>;

fn forward_batch(net: &Network, batch: &[Sample]) -> Result<Columns> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let mut passes = Vec::new();
    for (s, sample) in batch.iter().enumerate() {
        if sample.frames.is_empty() {
            return Err(Error::validation(format!("sample {s} has no frames")));
        }
        if sample.label >= net.classes() {
            return Err(Error::validation(format!(
                "sample {s} label {} out of range for {} classes",
                sample.label,
                net.classes()
            )));
        }
        for (f, frame) in sample.frames.iter().enumerate() {
            passes.push((s, f, net.forward(frame)?));
        }
    }
    Ok(passes)
}

fn layer_columns<'a>(net: &Network, passes: &'a [(usize, usize, ForwardPass)], layer: usize) -> Vec<&'a [f64]> {
    debug_assert!(net.layers()[layer].relu());
    passes.iter().map(|(_, _, p)| p.outputs[layer].as_slice()).collect()
}

fn evaluate(net: &Network, batch: &[Sample], passes: &[(usize, usize, ForwardPass)], alpha: f64, q: NormExponent) -> ObjectiveValue {
    let mut temporal = 0.0;
    for (s, _, pass) in passes {
        let frames = batch[*s].frames.len() as f64;
        temporal += cross_entropy(pass.logits(), batch[*s].label) / frames;
    }
    temporal /= batch.len() as f64;
    let ratios: Vec<f64> = net
        .relu_layers()
        .into_iter()
        .map(|l| roe_penalty(&layer_columns(net, passes, l), q))
        .collect();
    let penalty: f64 = ratios.iter().filter(|&&r| r > 0.0).map(|r| r.ln()).sum();
    ObjectiveValue {
        total: temporal + alpha * penalty,
        temporal_loss: temporal,
        penalty,
        ratios,
    }
}

/// Evaluates the training objective on a batch. Every frame of every sample
/// contributes one activation column to each `A^l`.
pub fn objective(net: &Network, batch: &[Sample], alpha: f64, q: NormExponent) -> Result<ObjectiveValue> {
    let passes = forward_batch(net, batch)?;
    Ok(evaluate(net, batch, &passes, alpha, q))
}

/// Objective value and its parameter gradients by manual backprop.
pub fn backward(net: &Network, batch: &[Sample], alpha: f64, q: NormExponent) -> Result<(ObjectiveValue, Gradients)> {
    let passes = forward_batch(net, batch)?;
    let value = evaluate(net, batch, &passes, alpha, q);
    let layers = net.layers();
    let mut grads = Gradients::zeros(net);

    // d(alpha * ln R)/dA per ReLU layer, indexed [layer][column]
    let mut roe_grads: Vec<Option<Vec<Vec<f64>>>> = vec![None; layers.len()];
    if alpha > 0.0 {
        for l in net.relu_layers() {
            if let Some((_, g)) = ln_roe_gradient(&layer_columns(net, &passes, l), q) {
                roe_grads[l] = Some(g);
            }
        }
    }

    let n_samples = batch.len() as f64;
    let mut grad_in: Vec<f64> = Vec::new();
    for (col, (s, f, pass)) in passes.iter().enumerate() {
        let sample = &batch[*s];
        let scale = 1.0 / (n_samples * sample.frames.len() as f64);
        let mut g: Vec<f64> = cross_entropy_grad(pass.logits(), sample.label)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        for (k, layer) in layers.iter().enumerate().rev() {
            let out = &pass.outputs[k];
            if layer.relu() {
                if let Some(rg) = &roe_grads[k] {
                    g.iter_mut().zip(&rg[col]).for_each(|(gv, r)| *gv += alpha * r);
                }
                g.iter_mut().zip(out).for_each(|(gv, &o)| {
                    if o <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let input = if k == 0 {
                sample.frames[*f].as_slice()
            } else {
                pass.outputs[k - 1].as_slice()
            };
            if k > 0 {
                grad_in.clear();
                grad_in.resize(layer.input_shape().len(), 0.0);
                layer.backward(input, &g, Some(&mut grad_in), &mut grads.layers[k]);
                std::mem::swap(&mut g, &mut grad_in);
            } else {
                layer.backward(input, &g, None, &mut grads.layers[k]);
            }
        }
    }
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::LayerRecord;
    use crate::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, frames: usize, dim: usize, classes: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                frames: (0..frames)
                    .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
                    .collect(),
                label: i % classes,
            })
            .collect()
    }

    #[test]
    fn alpha_zero_equals_temporal_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::from_records(Shape::flat(5), &[LayerRecord::dense(4, true), LayerRecord::dense(3, false)], 1).unwrap();
        let batch = random_batch(&mut rng, 4, 2, 5, 3);
        let v = objective(&net, &batch, 0.0, NormExponent::NegInfinity).unwrap();
        assert_eq!(v.total, v.temporal_loss);
        let direct: f64 = batch
            .iter()
            .map(|s| {
                let logits: Vec<Vec<f64>> = s.frames.iter().map(|f| net.forward(f).unwrap().logits().to_vec()).collect();
                crate::ann::temporal_loss(&logits, s.label)
            })
            .sum::<f64>()
            / 4.0;
        assert!((v.temporal_loss - direct).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_linear_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::from_records(Shape::flat(5), &[LayerRecord::dense(6, true), LayerRecord::dense(3, false)], 2).unwrap();
        let batch = random_batch(&mut rng, 5, 1, 5, 3);
        let a = objective(&net, &batch, 0.003, NormExponent::NegInfinity).unwrap();
        let b = objective(&net, &batch, 0.006, NormExponent::NegInfinity).unwrap();
        assert_eq!(a.temporal_loss, b.temporal_loss);
        assert!(((b.total - b.temporal_loss) - 2.0 * (a.total - a.temporal_loss)).abs() < 1e-12);
        // hand sum: L_TT + alpha * sum ln R
        let hand = a.temporal_loss + 0.003 * a.ratios.iter().map(|r| r.ln()).sum::<f64>();
        assert!((a.total - hand).abs() < 1e-12);
    }

    #[test]
    fn alpha_zero_gradient_is_plain_ce_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::from_records(Shape::flat(4), &[LayerRecord::dense(5, true), LayerRecord::dense(2, false)], 3).unwrap();
        let batch = random_batch(&mut rng, 3, 1, 4, 2);
        let (_, g0) = backward(&net, &batch, 0.0, NormExponent::NegInfinity).unwrap();
        // single-sample CE gradients averaged by hand
        let mut acc = Gradients::zeros(&net);
        for s in &batch {
            let (_, g) = backward(&net, std::slice::from_ref(s), 0.0, NormExponent::NegInfinity).unwrap();
            for (a, b) in acc.layers.iter_mut().zip(g.layers) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y / 3.0);
            }
        }
        for (a, b) in acc.layers.iter().flatten().zip(g0.layers.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
