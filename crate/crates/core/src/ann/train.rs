use super::layers::BatchNorm;
use super::objective::{backward, objective, Sample};
use super::roe::NormExponent;
use super::Network;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimizer and regularizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the `ln R` penalty.
    pub alpha: f64,
    pub q: NormExponent,
    /// Frames per sample.
    pub frames: usize,
    /// Peak learning rate; decays to zero on a cosine schedule.
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.003,
            q: NormExponent::NegInfinity,
            frames: 1,
            lr: 0.05,
            momentum: 0.9,
            epochs: 100,
            batch_size: 32,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.alpha > 0.0 && self.batch_size < 2 {
            return Err(Error::validation("batch_size must be at least 2 when alpha > 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.frames == 0 {
            return Err(Error::validation("batch_size, epochs and frames must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::validation("lr must be > 0, momentum in [0, 1), weight_decay >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch objective per epoch.
    pub history: Vec<f64>,
    pub train_accuracy: f64,
}

/// Recomputes every batchnorm layer's mean and variance from the outputs
/// of the layer feeding it, over all frames of `data`.
pub fn refresh_batchnorm(net: &mut Network, data: &[Sample]) -> Result<()> {
    let bn_layers: Vec<usize> = (0..net.layers().len())
        .filter(|&i| net.layers()[i].as_any().is::<BatchNorm>())
        .collect();
    for &k in &bn_layers {
        let shape = net.layers()[k].input_shape();
        let plane = shape.plane();
        let mut sum = vec![0.0; shape.channels];
        let mut sq = vec![0.0; shape.channels];
        let mut count = 0.0;
        for sample in data {
            for frame in &sample.frames {
                let pass = net.forward(frame)?;
                let x = if k == 0 { frame.as_slice() } else { pass.outputs[k - 1].as_slice() };
                for c in 0..shape.channels {
                    for v in &x[c * plane..(c + 1) * plane] {
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
                count += plane as f64;
            }
        }
        if count == 0.0 {
            continue;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let var = sq.iter().zip(&mean).map(|(s, m)| (s / count - m * m).max(0.0)).collect();
        let layer = net.layers_mut()[k].as_any_mut().downcast_mut::<BatchNorm>().expect("batchnorm layer");
        layer.set_statistics(mean, var);
    }
    Ok(())
}

/// Fraction of samples whose frame-summed logits pick the label.
pub fn accuracy(net: &Network, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in data {
        if net.predict(&s.frames)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// SGD with momentum, cosine-decayed learning rate and decoupled L2 on the
/// weights. Deterministic for a fixed `config.seed`.
pub fn train(mut net: Network, data: &[Sample], config: &TrainConfig) -> Result<(Network, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Vec<f64>> = net.layers().iter().map(|l| vec![0.0; l.params().len()]).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let min_batch = if config.alpha > 0.0 { 2 } else { 1 };
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs) as f64;
    let mut step = 0usize;
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch: Vec<Sample> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        refresh_batchnorm(&mut net, data)?;
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (value, grads) = backward(&net, &batch, config.alpha, config.q)?;
            if !value.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    value: value.total,
                });
            }
            epoch_sum += value.total;
            epoch_batches += 1;

            let lr = 0.5 * config.lr * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            step += 1;
            for ((layer, g), v) in net.layers_mut().iter_mut().zip(&grads.layers).zip(velocity.iter_mut()) {
                let decayed = layer.decayed_params();
                let params = layer.params_mut();
                for (i, ((p, &gi), vi)) in params.iter_mut().zip(g).zip(v.iter_mut()).enumerate() {
                    let wd = if i < decayed { config.weight_decay * *p } else { 0.0 };
                    *vi = config.momentum * *vi + gi + wd;
                    *p -= lr * *vi;
                }
            }
        }
        let mean = epoch_sum / epoch_batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, value: mean });
        }
        log::debug!("epoch {epoch}: objective {mean:.6}");
        history.push(mean);
    }
    refresh_batchnorm(&mut net, data)?;
    let train_accuracy = accuracy(&net, data)?;
    // touch the objective once more so a diverged final step is caught
    let last = objective(&net, &data[..data.len().min(config.batch_size.max(min_batch))], config.alpha, config.q)?;
    if !last.total.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            value: last.total,
        });
    }
    Ok((
        net,
        TrainReport {
            history,
            train_accuracy,
        },
    ))
}
