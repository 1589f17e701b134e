//! Threshold and bias normalization: ReLU network plus activation maxima in,
//! integrate-and-fire network out.

use crate::ann::layers::Dense;
use crate::ann::{ActivationStats, Layer, ModelFile, Network};
use crate::events::DatasetStats;
use crate::{Error, Result, Shape};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// How the half-threshold "extra current" is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeMode {
    /// Membranes start at zero.
    Off,
    /// Membranes start at `V_thr/2`, and hidden layers get it back after
    /// every per-frame reset.
    #[default]
    Initial,
    /// `V_thr/2` is added as a constant current on every tick.
    PerTick,
}

impl FromStr for ChargeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(ChargeMode::Off),
            "initial" => Ok(ChargeMode::Initial),
            "per_tick" | "per-tick" => Ok(ChargeMode::PerTick),
            _ => Err(Error::validation(format!("unknown charge mode {s:?} (off, initial, per_tick)"))),
        }
    }
}

impl fmt::Display for ChargeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChargeMode::Off => "off",
            ChargeMode::Initial => "initial",
            ChargeMode::PerTick => "per_tick",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConvertOptions {
    pub charge: ChargeMode,
}

/// One spiking layer: the non-weighted ops in front of it, its weighted op
/// with normalized bias, and its threshold.
#[derive(Debug, Clone)]
pub struct SnnStage {
    pre: Vec<Box<dyn Layer>>,
    layer: Box<dyn Layer>,
    bias: Vec<f64>,
    v_thr: f64,
    /// Transposed dense weights for sparse spike input.
    columns: Option<Vec<f64>>,
}

impl SnnStage {
    fn new(pre: Vec<Box<dyn Layer>>, layer: Box<dyn Layer>, v_thr: f64) -> Self {
        let bias = layer.expanded_bias();
        let columns = match (pre.is_empty(), layer.as_any().downcast_ref::<Dense>()) {
            (true, Some(d)) => {
                let (rows, cols) = (d.bias().len(), d.input_shape().len());
                let w = d.weights();
                let mut t = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        t[c * rows + r] = w[r * cols + c];
                    }
                }
                Some(t)
            }
            _ => None,
        };
        SnnStage {
            pre,
            layer,
            bias,
            v_thr,
            columns,
        }
    }

    pub fn v_thr(&self) -> f64 {
        self.v_thr
    }

    /// Normalized bias `b~`, one entry per neuron.
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn input_len(&self) -> usize {
        self.pre.first().unwrap_or(&self.layer).input_shape().len()
    }

    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }

    pub fn output_shape(&self) -> Shape {
        self.layer.output_shape()
    }

    /// `W~ x`, without bias, through any pooling/flatten in front.
    pub fn linear(&self, x: &[f64], out: &mut [f64]) {
        if let Some(t) = &self.columns {
            let rows = out.len();
            out.fill(0.0);
            for (c, &v) in x.iter().enumerate() {
                if v != 0.0 {
                    let col = &t[c * rows..(c + 1) * rows];
                    if v == 1.0 {
                        out.iter_mut().zip(col).for_each(|(o, w)| *o += w);
                    } else {
                        out.iter_mut().zip(col).for_each(|(o, w)| *o += v * w);
                    }
                }
            }
            return;
        }
        let mut cur: Vec<f64> = x.to_vec();
        for op in &self.pre {
            let mut next = vec![0.0; op.output_shape().len()];
            op.forward(&cur, &mut next);
            cur = next;
        }
        self.layer.apply_linear(&cur, out);
    }

    /// Input current `Z = W~ x + b~`.
    pub fn current(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.len()];
        self.linear(x, &mut z);
        z.iter_mut().zip(&self.bias).for_each(|(z, b)| *z += b);
        z
    }
}

/// A converted network. Stage `l` (zero-based) corresponds to weighted
/// layer `l + 1` of the source network.
#[derive(Debug, Clone)]
pub struct SnnNetwork {
    input: Shape,
    stages: Vec<SnnStage>,
    lambda: Vec<f64>,
    charge: ChargeMode,
    dataset_stats: Option<DatasetStats>,
}

impl SnnNetwork {
    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn stages(&self) -> &[SnnStage] {
        &self.stages
    }

    pub fn classes(&self) -> usize {
        self.stages.last().map(SnnStage::len).unwrap_or(0)
    }

    /// `lambda^l` of each stage as measured on the source network.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn charge(&self) -> ChargeMode {
        self.charge
    }

    pub fn set_charge(&mut self, charge: ChargeMode) {
        self.charge = charge;
    }

    pub fn dataset_stats(&self) -> Option<&DatasetStats> {
        self.dataset_stats.as_ref()
    }

    pub fn set_dataset_stats(&mut self, stats: DatasetStats) {
        self.dataset_stats = Some(stats);
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut layers = Vec::new();
        for stage in &self.stages {
            layers.extend(stage.pre.iter().map(|l| l.to_record()));
            let mut rec = stage.layer.to_record();
            rec.v_thr = Some(stage.v_thr);
            layers.push(rec);
        }
        let mut file = ModelFile::blank(self.input, self.classes(), layers);
        file.converted = true;
        file.activation_stats = Some(ActivationStats {
            lambda: self.lambda.clone(),
            mode: "converted".into(),
        });
        file.dataset_stats = self.dataset_stats;
        file.charge = Some(self.charge);
        file
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        if !file.converted {
            return Err(Error::validation("model file is not a converted spiking network"));
        }
        let net = Network::from_records(file.input_shape, &file.layers, 0)?;
        let mut stages = Vec::new();
        let mut pre = Vec::new();
        for (i, layer) in net.layers().iter().enumerate() {
            if !layer.is_weighted() {
                pre.push(layer.clone());
                continue;
            }
            let v_thr = file.layers[i].v_thr.ok_or_else(|| Error::Layer {
                layer: i,
                message: "converted layer has no v_thr".into(),
            })?;
            if !(v_thr > 0.0 && v_thr.is_finite()) {
                return Err(Error::Layer {
                    layer: i,
                    message: format!("v_thr must be positive, got {v_thr}"),
                });
            }
            stages.push(SnnStage::new(std::mem::take(&mut pre), layer.clone(), v_thr));
        }
        let lambda = file.activation_stats.as_ref().map(|s| s.lambda.clone()).unwrap_or_default();
        if !lambda.is_empty() && lambda.len() != stages.len() {
            return Err(Error::validation(format!(
                "converted model lists {} lambda values for {} spiking layers",
                lambda.len(),
                stages.len()
            )));
        }
        Ok(SnnNetwork {
            input: file.input_shape,
            stages,
            lambda,
            charge: file.charge.unwrap_or_default(),
            dataset_stats: file.dataset_stats,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = ModelFile::load(path)?;
        Self::from_model_file(&file).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_model_file().save(path)
    }
}

/// Builds the spiking network: `W~ = W`, `b~ = b / lambda^{l-1}`,
/// `V_thr = lambda^l / lambda^{l-1}`, with `lambda^0 = 1`.
pub fn convert(net: &Network, stats: &ActivationStats, opts: ConvertOptions) -> Result<SnnNetwork> {
    let points = net.activation_points();
    for (i, layer) in net.layers().iter().enumerate() {
        if layer.kind() == "batchnorm" {
            return Err(Error::Layer {
                layer: i,
                message: "fold batchnorm layers before conversion".into(),
            });
        }
        if layer.is_weighted() && !points.contains(&i) {
            return Err(Error::Layer {
                layer: i,
                message: "hidden weighted layers must use ReLU to be converted".into(),
            });
        }
        if !layer.is_weighted() && layer.relu() {
            return Err(Error::Layer {
                layer: i,
                message: "ReLU after a non-weighted layer cannot be converted".into(),
            });
        }
    }
    if stats.lambda.len() != points.len() {
        return Err(Error::validation(format!(
            "activation stats cover {} layers, network has {}",
            stats.lambda.len(),
            points.len()
        )));
    }
    for (k, &l) in stats.lambda.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Layer {
                layer: points[k],
                message: format!("lambda must be positive, got {l}"),
            });
        }
    }

    let mut stages = Vec::with_capacity(points.len());
    let mut pre = Vec::new();
    let mut prev_lambda = 1.0;
    let mut k = 0;
    for layer in net.layers() {
        if !layer.is_weighted() {
            pre.push(layer.clone());
            continue;
        }
        let lambda = stats.lambda[k];
        let mut spiking = layer.clone();
        spiking.scale_bias(1.0 / prev_lambda);
        spiking.set_relu(false);
        stages.push(SnnStage::new(std::mem::take(&mut pre), spiking, lambda / prev_lambda));
        prev_lambda = lambda;
        k += 1;
    }
    Ok(SnnNetwork {
        input: net.input_shape(),
        stages,
        lambda: stats.lambda.clone(),
        charge: opts.charge,
        dataset_stats: None,
    })
}

/// Per-layer agreement between simulated and desired spiking rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerEquivalence {
    pub layer: usize,
    /// `||r^l - r_d^l||_2`.
    pub rate_error: f64,
    /// `None` when the desired rate is all zero.
    pub cos_phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub ticks: u64,
    pub layers: Vec<LayerEquivalence>,
    pub ann_prediction: usize,
    pub snn_prediction: usize,
}

/// Drives `snn` for `ticks` ticks with a regular spike train whose per-tick
/// rate is `input` (clipped to `[0, 1]`), and compares each layer's rate to
/// `a^l / lambda^l` from `net` on the same input. The logit layer uses its
/// positive part.
pub fn verify_equivalence(net: &Network, snn: &SnnNetwork, input: &[f64], ticks: u64) -> Result<EquivalenceReport> {
    if ticks == 0 {
        return Err(Error::validation("ticks must be positive"));
    }
    if snn.lambda.len() != snn.stages.len() {
        return Err(Error::validation("spiking network carries no lambda values"));
    }
    let pass = net.forward(input)?;
    let points = net.activation_points();
    let desired: Vec<Vec<f64>> = points
        .iter()
        .zip(&snn.lambda)
        .map(|(&i, &lam)| pass.outputs[i].iter().map(|a| a.max(0.0) / lam).collect())
        .collect();

    let rates: Vec<f64> = input.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut acc = vec![0.0; rates.len()];
    let mut spikes = vec![0.0; rates.len()];
    let mut state = crate::snn::init_state(snn);
    for _ in 0..ticks {
        for ((a, s), r) in acc.iter_mut().zip(spikes.iter_mut()).zip(&rates) {
            *a += r;
            *s = if *a >= 1.0 {
                *a -= 1.0;
                1.0
            } else {
                0.0
            };
        }
        crate::snn::step(&mut state, snn, &spikes)?;
    }
    let layers = desired
        .iter()
        .enumerate()
        .map(|(l, rd)| {
            let r = state.rates(l);
            let rate_error = r.iter().zip(rd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            LayerEquivalence {
                layer: l,
                rate_error,
                cos_phi: crate::analysis::cosine_similarity(&r, rd),
            }
        })
        .collect();
    Ok(EquivalenceReport {
        ticks,
        layers,
        ann_prediction: crate::argmax(pass.logits()),
        snn_prediction: crate::argmax(state.counts(snn.stages.len() - 1)),
    })
}
