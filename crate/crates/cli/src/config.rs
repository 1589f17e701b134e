use eventsnn::ann::{LayerRecord, NormExponent, TrainConfig};
use eventsnn::convert::ChargeMode;
use eventsnn::synth::SynthConfig;
use eventsnn::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Everything the pipeline can be told, one block per stage. Missing
/// fields take their defaults; unknown fields are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every stage that does not set its own.
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainSection,
    pub convert: ConvertSection,
    pub cutoff: CutoffSection,
    pub sim: SimSection,
    /// Worker threads for per-sample simulation; 0 picks the core count.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Hidden layers; the logit layer is appended to match the class count.
    pub hidden: Vec<LayerRecord>,
    pub alpha: f64,
    pub q: NormExponent,
    pub frames: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// `max` or `percentile:<p>`.
    pub lambda: String,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            hidden: vec![LayerRecord::flatten(), LayerRecord::dense(64, true), LayerRecord::dense(32, true)],
            alpha: t.alpha,
            q: t.q,
            frames: t.frames,
            lr: t.lr,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            weight_decay: t.weight_decay,
            lambda: "max".into(),
            seed: None,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, global_seed: u64) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            q: self.q,
            frames: self.frames,
            lr: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed: self.seed.unwrap_or(global_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertSection {
    pub charge: ChargeMode,
}

impl Default for ConvertSection {
    fn default() -> Self {
        ConvertSection {
            charge: ChargeMode::Initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffSection {
    pub epsilon: f64,
    /// Evenly spaced checkpoints in `(0, T_total]`.
    pub grid_points: usize,
    /// Swept by `eval`.
    pub epsilons: Vec<f64>,
    /// Calibrate each checkpoint only on samples not cut before it.
    pub sequential: bool,
}

impl Default for CutoffSection {
    fn default() -> Self {
        CutoffSection {
            epsilon: 0.01,
            grid_points: 32,
            epsilons: vec![0.05, 0.04, 0.03, 0.02, 0.01, 0.0],
            sequential: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Reset hidden membranes at this many frame boundaries.
    pub per_frame: Option<usize>,
    pub tick_us: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.train_config(self.seed).validate()?;
        let c = &self.cutoff;
        if c.grid_points == 0 {
            return Err(Error::Validation("cutoff.grid_points must be at least 1".into()));
        }
        if c.epsilons.iter().chain([&c.epsilon]).any(|e| !(0.0..1.0).contains(e)) {
            return Err(Error::Validation("epsilon values must lie in [0, 1)".into()));
        }
        if self.sim.per_frame == Some(0) {
            return Err(Error::Validation("sim.per_frame must be at least 1".into()));
        }
        if self.sim.tick_us.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Validation("sim.tick_us must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"train": {"alpha": 0.0}}"#).unwrap();
        assert_eq!(c.train.alpha, 0.0);
        assert_eq!(c.train.epochs, 100);
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut c = RunConfig::default();
        c.cutoff.epsilon = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.synth.train_fraction = 0.5;
        assert!(c.validate().is_err());
    }
}
