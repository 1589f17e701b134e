//! Toy event dataset: noisy Poisson renderings of small shapes.

use crate::dataset::{Manifest, ManifestEntry, Split};
use crate::events::{poisson_encode_polarity, save_events, EventFormat, EventStream, GrayImage};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAX_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub width: u32,
    pub height: u32,
    pub duration_us: u64,
    /// On-polarity rate of a fully lit pixel, spikes per second.
    pub max_rate: f64,
    /// Background rate of every pixel on both polarities.
    pub noise_rate: f64,
    /// Largest random shift of the shape, in pixels.
    pub jitter: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            samples_per_class: 200,
            train_fraction: 0.8,
            test_fraction: 0.2,
            width: 8,
            height: 8,
            duration_us: 50_000,
            max_rate: 1500.0,
            noise_rate: 150.0,
            jitter: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(Error::validation("samples_per_class must be at least 1"));
        }
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::validation(format!("classes must be in 2..={MAX_CLASSES}")));
        }
        let fr = [self.train_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr[0] + fr[1] - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split fractions must be in [0, 1] and sum to 1, got {} + {}",
                fr[0], fr[1]
            )));
        }
        if self.width < 4 || self.height < 4 || self.width > 64 || self.height > 64 {
            return Err(Error::validation("width and height must be in 4..=64"));
        }
        if self.duration_us == 0 || self.duration_us > u64::from(u32::MAX) {
            return Err(Error::validation("duration_us must be in 1..=u32::MAX"));
        }
        if !(self.max_rate > 0.0) || !(self.noise_rate >= 0.0) {
            return Err(Error::validation("max_rate must be positive and noise_rate non-negative"));
        }
        Ok(())
    }
}

/// Template intensity of class `class` at `(x, y)` on a `w`x`h` canvas.
fn template(class: usize, x: i64, y: i64, w: i64, h: i64) -> f64 {
    let (cx, cy) = (w / 2, h / 2);
    let (ex, ey) = (w / 4, h / 4);
    let inside = x >= ex && x < w - ex && y >= ey && y < h - ey;
    let lit = match class {
        0 => (y == cy || y == cy - 1) && x >= 1 && x < w - 1,
        1 => (x == cx || x == cx - 1) && y >= 1 && y < h - 1,
        2 => (x - y).abs() <= 0 && x >= 1 && x < w - 1,
        3 => (x + y - (w - 1)).abs() <= 0 && x >= 1 && x < w - 1,
        4 => inside && (x == ex || x == w - ex - 1 || y == ey || y == h - ey - 1),
        5 => (x == cx || y == cy) && inside,
        6 => inside && x >= cx - 1 && x <= cx && y >= cy - 1 && y <= cy,
        7 => (x == 1 && y >= 1 && y < h - 1) || (y == h - 2 && x >= 1 && x < w - 1),
        8 => y == 1 || y == h - 2,
        _ => x == 1 || x == w - 2,
    };
    if lit {
        1.0
    } else {
        0.0
    }
}

fn render(class: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> GrayImage {
    let (w, h) = (i64::from(cfg.width), i64::from(cfg.height));
    let j = i64::from(cfg.jitter);
    let dx = rng.random_range(-j..=j);
    let dy = rng.random_range(-j..=j);
    let gain = rng.random_range(0.6..1.0);
    let mut img = GrayImage::zeros(cfg.width, cfg.height);
    for y in 0..h {
        for x in 0..w {
            img.data[(y * w + x) as usize] = gain * template(class, x - dx, y - dy, w, h);
        }
    }
    img
}

/// One noisy sample of `class`.
pub fn synth_sample(class: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<EventStream> {
    let img = render(class, cfg, rng);
    let mut events = poisson_encode_polarity(&img, cfg.max_rate, cfg.duration_us, 1, rng)?;
    if cfg.noise_rate > 0.0 {
        let flat = GrayImage::new(cfg.width, cfg.height, vec![1.0; (cfg.width * cfg.height) as usize])?;
        for p in [0, 1] {
            events.extend(poisson_encode_polarity(&flat, cfg.noise_rate, cfg.duration_us, p, rng)?);
        }
    }
    events.sort_by_key(|e| e.t);
    Ok(EventStream::new(cfg.width, cfg.height, cfg.duration_us, events)?.with_label(class))
}

/// All samples with their split, in a fixed order.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<(EventStream, Split)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = (cfg.train_fraction * cfg.samples_per_class as f64).round() as usize;
    let mut out = Vec::with_capacity(cfg.classes * cfg.samples_per_class);
    for i in 0..cfg.samples_per_class {
        for class in 0..cfg.classes {
            let split = if i < n_train { Split::Train } else { Split::Test };
            out.push((synth_sample(class, cfg, &mut rng)?, split));
        }
    }
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.shuffle(&mut rng);
    let mut slots: Vec<Option<(EventStream, Split)>> = out.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().expect("each index once")).collect())
}

/// Writes every sample as a binary event file under `dir` plus
/// `dir/manifest.json`.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    let samples = generate(cfg)?;
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.to_string());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, (stream, split)) in samples.iter().enumerate() {
        let rel = Path::new(&split.to_string()).join(format!("sample_{i:05}.evs"));
        save_events(stream, &dir.join(&rel), EventFormat::Binary)?;
        entries.push(ManifestEntry {
            path: rel,
            label: stream.label().expect("synthetic samples are labeled"),
            split: *split,
        });
    }
    let mut manifest = Manifest::new(cfg.classes, entries, dir);
    manifest.generator = Some(serde_json::to_value(cfg)?);
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            samples_per_class: 5,
            duration_us: 20_000,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn templates_differ() {
        for a in 0..MAX_CLASSES {
            for b in a + 1..MAX_CLASSES {
                let differs = (0..64).any(|i| template(a, i % 8, i / 8, 8, 8) != template(b, i % 8, i / 8, 8, 8));
                assert!(differs, "classes {a} and {b} render the same");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.iter().filter(|(_, s)| *s == Split::Train).count(), 16);
    }

    #[test]
    fn config_checks() {
        assert!(SynthConfig { samples_per_class: 0, ..small() }.validate().is_err());
        assert!(SynthConfig { train_fraction: 0.7, ..small() }.validate().is_err());
        assert!(SynthConfig { classes: 1, ..small() }.validate().is_err());
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        write_dataset(dir.path(), &cfg).unwrap();
        let m = Manifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap().load_split(Split::Test).unwrap(), m.load_split(Split::Test).unwrap());
        let train = m.load_split(Split::Train).unwrap();
        let expected: Vec<EventStream> = generate(&cfg)
            .unwrap()
            .into_iter()
            .filter(|(_, s)| *s == Split::Train)
            .map(|(e, _)| e)
            .collect();
        assert_eq!(train, expected);
    }
}
