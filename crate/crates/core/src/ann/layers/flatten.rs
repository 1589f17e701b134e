use crate::ann::layer::{Layer, LayerRecord};
use crate::{Result, Shape};
use rand_chacha::ChaCha8Rng;
use std::any::Any;

/// Reshape to a flat vector; values pass through unchanged.
#[derive(Debug, Clone)]
pub struct Flatten {
    input: Shape,
}

impl Flatten {
    pub fn build(_rec: &LayerRecord, input: Shape, _rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        Ok(Box::new(Flatten { input }))
    }
}

impl Layer for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn input_shape(&self) -> Shape {
        self.input
    }

    fn output_shape(&self) -> Shape {
        Shape::flat(self.input.len())
    }

    fn relu(&self) -> bool {
        false
    }

    fn set_relu(&mut self, _relu: bool) {}

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(input);
    }

    fn apply_linear(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(input);
    }

    fn backward(&self, _input: &[f64], grad_out: &[f64], grad_in: Option<&mut [f64]>, _grad_params: &mut [f64]) {
        if let Some(gi) = grad_in {
            gi.copy_from_slice(grad_out);
        }
    }

    fn to_record(&self) -> LayerRecord {
        LayerRecord::flatten()
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
