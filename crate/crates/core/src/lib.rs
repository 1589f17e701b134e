//! Event-driven spiking inference built from converted ReLU networks.
//!
//! The crate covers the whole path from raw DVS-style events to an early
//! exiting spiking classifier:
//!
//! - [`events`]: event streams, file formats, frame aggregation, Poisson encoding.
//! - [`ann`]: small ReLU networks with a layer registry, temporal cross-entropy,
//!   the outlier-eliminating activation penalty, manual backprop and SGD training.
//! - [`convert`]: threshold/bias normalization producing an [`convert::SnnNetwork`].
//! - [`snn`]: tick-accurate integrate-and-fire simulation with soft reset.
//! - [`cutoff`]: confidence-rate calibration and the runtime cutoff monitor.
//! - [`analysis`]: rate similarity, residual bounds, and curve generation.
//!
//! All values are `f64`. Tensors are flat row-major buffers described by a
//! [`Shape`] of `(channels, height, width)`.

pub mod analysis;
pub mod ann;
pub mod convert;
pub mod cutoff;
pub mod dataset;
pub mod error;
pub mod events;
pub mod snn;
pub mod synth;

mod shape;

pub use error::{Error, Result};
pub use shape::Shape;

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
