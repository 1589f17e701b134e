use crate::ann::layer::{Layer, LayerRecord};
use crate::{Error, Result, Shape};
use rand_chacha::ChaCha8Rng;
use std::any::Any;

const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel normalization `gamma * (x - mean) / sigma + beta` with
/// `sigma = sqrt(var + eps)`.
///
/// Statistics are held fixed inside a forward/backward pass and refreshed
/// from the training set between epochs; only `gamma` and `beta` are
/// trained.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    shape: Shape,
    relu: bool,
    /// `gamma` followed by `beta`.
    params: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
}

impl BatchNorm {
    pub fn build(rec: &LayerRecord, input: Shape, _rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        let c = input.channels;
        let gamma = rec.checked_vec("gamma", &rec.gamma, c)?.unwrap_or_else(|| vec![1.0; c]);
        let beta = rec.checked_vec("beta", &rec.beta, c)?.unwrap_or_else(|| vec![0.0; c]);
        let mean = rec.checked_vec("mean", &rec.mean, c)?.unwrap_or_else(|| vec![0.0; c]);
        let var = rec.checked_vec("var", &rec.var, c)?.unwrap_or_else(|| vec![1.0; c]);
        let eps = rec.eps.unwrap_or(DEFAULT_EPS);
        if eps < 0.0 || var.iter().any(|&v| v < 0.0) {
            return Err(Error::validation("batchnorm variance and eps must be non-negative"));
        }
        let mut params = gamma;
        params.extend(beta);
        Ok(Box::new(BatchNorm {
            shape: input,
            relu: rec.relu,
            params,
            mean,
            var,
            eps,
        }))
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn gamma(&self) -> &[f64] {
        &self.params[..self.channels()]
    }

    pub fn beta(&self) -> &[f64] {
        &self.params[self.channels()..]
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.var.iter().map(|v| (v + self.eps).sqrt()).collect()
    }

    pub fn set_statistics(&mut self, mean: Vec<f64>, var: Vec<f64>) {
        debug_assert_eq!(mean.len(), self.channels());
        self.mean = mean;
        self.var = var;
    }

    /// `(scale, shift)` such that the layer computes `scale * x + shift`
    /// per channel. Fails when some `sigma` is zero.
    pub fn channel_affine(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let sigma = self.sigma();
        if let Some(c) = sigma.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::validation(format!("batchnorm channel {c} has degenerate sigma {}", sigma[c])));
        }
        let scale: Vec<f64> = self.gamma().iter().zip(&sigma).map(|(g, s)| g / s).collect();
        let shift = self
            .beta()
            .iter()
            .zip(&scale)
            .zip(&self.mean)
            .map(|((b, k), m)| b - k * m)
            .collect();
        Ok((scale, shift))
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn input_shape(&self) -> Shape {
        self.shape
    }

    fn output_shape(&self) -> Shape {
        self.shape
    }

    fn relu(&self) -> bool {
        self.relu
    }

    fn set_relu(&mut self, relu: bool) {
        self.relu = relu;
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        let plane = self.shape.plane();
        let sigma = self.sigma();
        let (gamma, beta) = self.params.split_at(self.channels());
        for c in 0..self.channels() {
            for i in c * plane..(c + 1) * plane {
                out[i] = gamma[c] * (input[i] - self.mean[c]) / sigma[c] + beta[c];
            }
        }
    }

    fn apply_linear(&self, input: &[f64], out: &mut [f64]) {
        let plane = self.shape.plane();
        let sigma = self.sigma();
        for c in 0..self.channels() {
            let k = self.gamma()[c] / sigma[c];
            for i in c * plane..(c + 1) * plane {
                out[i] = k * input[i];
            }
        }
    }

    fn expanded_bias(&self) -> Vec<f64> {
        let plane = self.shape.plane();
        let sigma = self.sigma();
        (0..self.channels())
            .flat_map(|c| {
                let shift = self.beta()[c] - self.gamma()[c] * self.mean[c] / sigma[c];
                std::iter::repeat_n(shift, plane)
            })
            .collect()
    }

    fn backward(&self, input: &[f64], grad_out: &[f64], grad_in: Option<&mut [f64]>, grad_params: &mut [f64]) {
        let plane = self.shape.plane();
        let c_n = self.channels();
        let sigma = self.sigma();
        {
            let (gg, gb) = grad_params.split_at_mut(c_n);
            for c in 0..c_n {
                for i in c * plane..(c + 1) * plane {
                    gg[c] += grad_out[i] * (input[i] - self.mean[c]) / sigma[c];
                    gb[c] += grad_out[i];
                }
            }
        }
        if let Some(gi) = grad_in {
            for c in 0..c_n {
                let k = self.gamma()[c] / sigma[c];
                for i in c * plane..(c + 1) * plane {
                    gi[i] = grad_out[i] * k;
                }
            }
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn to_record(&self) -> LayerRecord {
        LayerRecord {
            gamma: Some(self.gamma().to_vec()),
            beta: Some(self.beta().to_vec()),
            mean: Some(self.mean.clone()),
            var: Some(self.var.clone()),
            eps: Some(self.eps),
            ..LayerRecord::batchnorm(self.relu)
        }
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
