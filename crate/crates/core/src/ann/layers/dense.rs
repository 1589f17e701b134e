use crate::ann::layer::{Layer, LayerRecord};
use crate::{Error, Result, Shape};
use rand_chacha::ChaCha8Rng;
use std::any::Any;

/// Fully connected layer over the flattened input. Weights are row-major
/// `(units, inputs)`.
#[derive(Debug, Clone)]
pub struct Dense {
    input: Shape,
    units: usize,
    relu: bool,
    /// `units * inputs` weights followed by `units` biases.
    params: Vec<f64>,
}

impl Dense {
    pub fn new(input: Shape, units: usize, weights: Vec<f64>, bias: Vec<f64>, relu: bool) -> Result<Self> {
        let n_in = input.len();
        if weights.len() != units * n_in || bias.len() != units {
            return Err(Error::Shape {
                expected: format!("{units}x{n_in} weights and {units} biases"),
                actual: format!("{} weights and {} biases", weights.len(), bias.len()),
            });
        }
        let mut params = weights;
        params.extend(bias);
        Ok(Dense {
            input,
            units,
            relu,
            params,
        })
    }

    pub fn build(rec: &LayerRecord, input: Shape, rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        let units = rec.require("units", rec.units)?;
        if units == 0 {
            return Err(Error::validation("dense layer needs at least one unit"));
        }
        let n_in = input.len();
        let weights = rec
            .checked_vec("weights", &rec.weights, units * n_in)?
            .unwrap_or_else(|| super::fan_in_uniform(units * n_in, n_in, rng));
        let bias = rec
            .checked_vec("bias", &rec.bias, units)?
            .unwrap_or_else(|| vec![0.0; units]);
        Ok(Box::new(Dense::new(input, units, weights, bias, rec.relu)?))
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.units * self.input.len()]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.units * self.input.len()..]
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn input_shape(&self) -> Shape {
        self.input
    }

    fn output_shape(&self) -> Shape {
        Shape::flat(self.units)
    }

    fn relu(&self) -> bool {
        self.relu
    }

    fn set_relu(&mut self, relu: bool) {
        self.relu = relu;
    }

    fn is_weighted(&self) -> bool {
        true
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        self.apply_linear(input, out);
        for (o, b) in out.iter_mut().zip(self.bias()) {
            *o += b;
        }
    }

    fn apply_linear(&self, input: &[f64], out: &mut [f64]) {
        let n_in = self.input.len();
        let w = self.weights();
        for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
            *o = row.iter().zip(input).map(|(a, b)| a * b).sum();
        }
    }

    fn expanded_bias(&self) -> Vec<f64> {
        self.bias().to_vec()
    }

    fn backward(&self, input: &[f64], grad_out: &[f64], grad_in: Option<&mut [f64]>, grad_params: &mut [f64]) {
        let n_in = self.input.len();
        let (gw, gb) = grad_params.split_at_mut(self.units * n_in);
        for ((g_row, &g), b) in gw.chunks_exact_mut(n_in).zip(grad_out).zip(gb.iter_mut()) {
            if g == 0.0 {
                continue;
            }
            *b += g;
            for (gw, x) in g_row.iter_mut().zip(input) {
                *gw += g * x;
            }
        }
        if let Some(gi) = grad_in {
            gi.iter_mut().for_each(|v| *v = 0.0);
            for (row, &g) in self.weights().chunks_exact(n_in).zip(grad_out) {
                if g == 0.0 {
                    continue;
                }
                for (v, w) in gi.iter_mut().zip(row) {
                    *v += g * w;
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

    fn decayed_params(&self) -> usize {
        self.units * self.input.len()
    }

    fn fold_channel_affine(&mut self, scale: &[f64], shift: &[f64]) -> Result<()> {
        if scale.len() != self.units || shift.len() != self.units {
            return Err(Error::Shape {
                expected: format!("{} channels", self.units),
                actual: format!("{} channels", scale.len()),
            });
        }
        let n_in = self.input.len();
        let (w, b) = self.params.split_at_mut(self.units * n_in);
        for (c, row) in w.chunks_exact_mut(n_in).enumerate() {
            row.iter_mut().for_each(|v| *v *= scale[c]);
            b[c] = b[c] * scale[c] + shift[c];
        }
        Ok(())
    }

    fn scale_bias(&mut self, factor: f64) {
        let n = self.units * self.input.len();
        self.params[n..].iter_mut().for_each(|b| *b *= factor);
    }

    fn to_record(&self) -> LayerRecord {
        LayerRecord {
            units: Some(self.units),
            relu: self.relu,
            weights: Some(self.weights().to_vec()),
            bias: Some(self.bias().to_vec()),
            ..LayerRecord::new("dense")
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_2x2() {
        let d = Dense::new(Shape::flat(2), 2, vec![1.0, 2.0, -1.0, 0.5], vec![0.1, -0.2], false).unwrap();
        let mut out = [0.0; 2];
        d.forward(&[3.0, 4.0], &mut out);
        // (1*3 + 2*4 + 0.1, -1*3 + 0.5*4 - 0.2)
        assert!((out[0] - 11.1).abs() < 1e-12);
        assert!((out[1] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn wrong_param_lengths_rejected() {
        assert!(Dense::new(Shape::flat(2), 2, vec![1.0; 3], vec![0.0; 2], false).is_err());
    }
}
