use crate::ann::layer::{Layer, LayerRecord};
use crate::{Error, Result, Shape};
use rand_chacha::ChaCha8Rng;
use std::any::Any;

/// Average pooling over square windows, channel by channel.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    input: Shape,
    output: Shape,
    kernel: usize,
    stride: usize,
}

impl AvgPool2d {
    pub fn build(rec: &LayerRecord, input: Shape, _rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        let kernel = rec.require("kernel", rec.kernel)?;
        let stride = rec.stride.unwrap_or(kernel);
        if kernel == 0 || stride == 0 {
            return Err(Error::validation("avgpool kernel and stride must be positive"));
        }
        if input.height < kernel || input.width < kernel {
            return Err(Error::Shape {
                expected: format!("input of at least {kernel}x{kernel}"),
                actual: input.to_string(),
            });
        }
        let output = Shape::new(
            input.channels,
            (input.height - kernel) / stride + 1,
            (input.width - kernel) / stride + 1,
        );
        Ok(Box::new(AvgPool2d {
            input,
            output,
            kernel,
            stride,
        }))
    }

    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.output.height, self.output.width);
        let (h, w) = (self.input.height, self.input.width);
        for c in 0..self.input.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (c * oh + oy) * ow + ox;
                    for ky in 0..self.kernel {
                        let row = (c * h + oy * self.stride + ky) * w + ox * self.stride;
                        for kx in 0..self.kernel {
                            f(o, row + kx);
                        }
                    }
                }
            }
        }
    }
}

impl Layer for AvgPool2d {
    fn kind(&self) -> &'static str {
        "avgpool"
    }

    fn input_shape(&self) -> Shape {
        self.input
    }

    fn output_shape(&self) -> Shape {
        self.output
    }

    fn relu(&self) -> bool {
        false
    }

    fn set_relu(&mut self, _relu: bool) {}

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        self.apply_linear(input, out);
    }

    fn apply_linear(&self, input: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let norm = 1.0 / (self.kernel * self.kernel) as f64;
        self.for_each_tap(|o, i| out[o] += input[i] * norm);
    }

    fn backward(&self, _input: &[f64], grad_out: &[f64], grad_in: Option<&mut [f64]>, _grad_params: &mut [f64]) {
        if let Some(gi) = grad_in {
            gi.iter_mut().for_each(|v| *v = 0.0);
            let norm = 1.0 / (self.kernel * self.kernel) as f64;
            self.for_each_tap(|o, i| gi[i] += grad_out[o] * norm);
        }
    }

    fn to_record(&self) -> LayerRecord {
        LayerRecord {
            kernel: Some(self.kernel),
            stride: Some(self.stride),
            ..LayerRecord::new("avgpool")
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
    use rand::SeedableRng;

    #[test]
    fn pools_two_by_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = AvgPool2d::build(&LayerRecord::avgpool(2), Shape::new(1, 2, 4), &mut rng).unwrap();
        let mut out = vec![0.0; 2];
        pool.forward(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &mut out);
        assert_eq!(out, vec![3.5, 5.5]);
    }
}
