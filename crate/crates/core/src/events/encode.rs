use super::{DvsEvent, EventStream};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

/// Grayscale intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    /// Row-major, `height * width` values.
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(Error::Shape {
                expected: format!("{} pixels", width * height),
                actual: format!("{} pixels", data.len()),
            });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }
}

/// Encodes every pixel as an independent on-polarity Poisson process with
/// rate `pixel * max_rate` (spikes per second).
pub fn poisson_encode(image: &GrayImage, max_rate: f64, duration_us: u64, seed: u64) -> Result<EventStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = poisson_events(image, max_rate, duration_us, 1, &mut rng)?;
    EventStream::new(image.width, image.height, duration_us, events)
}

/// Like [`poisson_encode`] but with an explicit polarity and a caller-owned RNG.
pub fn poisson_encode_polarity(
    image: &GrayImage,
    max_rate: f64,
    duration_us: u64,
    polarity: u8,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DvsEvent>> {
    poisson_events(image, max_rate, duration_us, polarity, rng)
}

fn poisson_events(
    image: &GrayImage,
    max_rate: f64,
    duration_us: u64,
    polarity: u8,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DvsEvent>> {
    if !(max_rate > 0.0 && max_rate.is_finite()) {
        return Err(Error::validation(format!("max_rate must be positive, got {max_rate}")));
    }
    let duration_s = duration_us as f64 * 1e-6;
    let mut events = Vec::new();
    for (i, &px) in image.data.iter().enumerate() {
        let rate = px.clamp(0.0, 1.0) * max_rate;
        if rate <= 0.0 {
            continue;
        }
        let x = (i % image.width as usize) as u16;
        let y = (i / image.width as usize) as u16;
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = gap.sample(rng);
        while t < duration_s {
            let t_us = ((t * 1e6) as u64).min(duration_us);
            events.push(DvsEvent::new(t_us, x, y, polarity));
            t += gap.sample(rng);
        }
    }
    events.sort_by_key(|e| e.t);
    Ok(events)
}
