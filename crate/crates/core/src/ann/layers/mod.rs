mod avgpool;
mod batchnorm;
mod conv2d;
mod dense;
mod flatten;

pub use avgpool::AvgPool2d;
pub use batchnorm::BatchNorm;
pub use conv2d::Conv2d;
pub use dense::Dense;
pub use flatten::Flatten;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// He-style uniform init: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub(crate) fn fan_in_uniform(len: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}
