use crate::ann::layer::{Layer, LayerRecord};
use crate::{Error, Result, Shape};
use rand_chacha::ChaCha8Rng;
use std::any::Any;

/// 2-D convolution with square kernels, zero padding and a per-filter bias.
/// Weights are laid out `(filters, channels, kernel, kernel)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    input: Shape,
    output: Shape,
    filters: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    relu: bool,
    params: Vec<f64>,
}

impl Conv2d {
    pub fn build(rec: &LayerRecord, input: Shape, rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        let filters = rec.require("filters", rec.filters)?;
        let kernel = rec.require("kernel", rec.kernel)?;
        let stride = rec.stride.unwrap_or(1);
        let padding = rec.padding.unwrap_or(0);
        if filters == 0 || kernel == 0 || stride == 0 {
            return Err(Error::validation("conv2d filters, kernel and stride must be positive"));
        }
        let ph = input.height + 2 * padding;
        let pw = input.width + 2 * padding;
        if ph < kernel || pw < kernel {
            return Err(Error::Shape {
                expected: format!("input of at least {kernel}x{kernel} after padding"),
                actual: input.to_string(),
            });
        }
        let output = Shape::new(filters, (ph - kernel) / stride + 1, (pw - kernel) / stride + 1);
        let fan_in = input.channels * kernel * kernel;
        let n_w = filters * fan_in;
        let weights = rec
            .checked_vec("weights", &rec.weights, n_w)?
            .unwrap_or_else(|| super::fan_in_uniform(n_w, fan_in, rng));
        let bias = rec
            .checked_vec("bias", &rec.bias, filters)?
            .unwrap_or_else(|| vec![0.0; filters]);
        let mut params = weights;
        params.extend(bias);
        Ok(Box::new(Conv2d {
            input,
            output,
            filters,
            kernel,
            stride,
            padding,
            relu: rec.relu,
            params,
        }))
    }

    fn n_weights(&self) -> usize {
        self.filters * self.input.channels * self.kernel * self.kernel
    }

    /// Calls `f(out_index, in_index, weight_index)` for every valid tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (c_in, h, w) = (self.input.channels, self.input.height as isize, self.input.width as isize);
        let k = self.kernel;
        let (oh, ow) = (self.output.height, self.output.width);
        for fi in 0..self.filters {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (fi * oh + oy) * ow + ox;
                    let y0 = (oy * self.stride) as isize - self.padding as isize;
                    let x0 = (ox * self.stride) as isize - self.padding as isize;
                    for c in 0..c_in {
                        for ky in 0..k {
                            let y = y0 + ky as isize;
                            if y < 0 || y >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let x = x0 + kx as isize;
                                if x < 0 || x >= w {
                                    continue;
                                }
                                let i = (c * h as usize + y as usize) * w as usize + x as usize;
                                let wi = ((fi * c_in + c) * k + ky) * k + kx;
                                f(o, i, wi);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn input_shape(&self) -> Shape {
        self.input
    }

    fn output_shape(&self) -> Shape {
        self.output
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
        let plane = self.output.plane();
        let bias = &self.params[self.n_weights()..];
        for (chunk, b) in out.chunks_exact_mut(plane).zip(bias) {
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }

    fn apply_linear(&self, input: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let w = &self.params;
        self.for_each_tap(|o, i, wi| out[o] += w[wi] * input[i]);
    }

    fn expanded_bias(&self) -> Vec<f64> {
        let plane = self.output.plane();
        self.params[self.n_weights()..]
            .iter()
            .flat_map(|&b| std::iter::repeat_n(b, plane))
            .collect()
    }

    fn backward(&self, input: &[f64], grad_out: &[f64], grad_in: Option<&mut [f64]>, grad_params: &mut [f64]) {
        let n_w = self.n_weights();
        let plane = self.output.plane();
        {
            let (gw, gb) = grad_params.split_at_mut(n_w);
            for (chunk, b) in grad_out.chunks_exact(plane).zip(gb.iter_mut()) {
                *b += chunk.iter().sum::<f64>();
            }
            self.for_each_tap(|o, i, wi| gw[wi] += grad_out[o] * input[i]);
        }
        if let Some(gi) = grad_in {
            gi.iter_mut().for_each(|v| *v = 0.0);
            let w = &self.params;
            self.for_each_tap(|o, i, wi| gi[i] += grad_out[o] * w[wi]);
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn decayed_params(&self) -> usize {
        self.n_weights()
    }

    fn fold_channel_affine(&mut self, scale: &[f64], shift: &[f64]) -> Result<()> {
        if scale.len() != self.filters || shift.len() != self.filters {
            return Err(Error::Shape {
                expected: format!("{} channels", self.filters),
                actual: format!("{} channels", scale.len()),
            });
        }
        let n_w = self.n_weights();
        let per_filter = n_w / self.filters;
        let (w, b) = self.params.split_at_mut(n_w);
        for (f, chunk) in w.chunks_exact_mut(per_filter).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= scale[f]);
            b[f] = b[f] * scale[f] + shift[f];
        }
        Ok(())
    }

    fn scale_bias(&mut self, factor: f64) {
        let n = self.n_weights();
        self.params[n..].iter_mut().for_each(|b| *b *= factor);
    }

    fn to_record(&self) -> LayerRecord {
        let n_w = self.n_weights();
        LayerRecord {
            weights: Some(self.params[..n_w].to_vec()),
            bias: Some(self.params[n_w..].to_vec()),
            ..LayerRecord::conv2d(self.filters, self.kernel, self.stride, self.padding, self.relu)
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
