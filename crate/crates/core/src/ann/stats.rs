//! Per-layer activation scales `lambda^l` used for threshold normalization.
//!
//! The estimator is pluggable: `max` (the default) or `percentile:<p>`,
//! looked up by name in a [`StatisticRegistry`].

use super::{Network, Sample};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Reduces the positive activations of one layer to a scale.
pub trait ActivationStatistic: Send + Sync + fmt::Debug {
    /// Spec string that [`StatisticRegistry::parse`] maps back to `self`.
    fn spec(&self) -> String;
    /// `values` holds every positive activation observed; may be reordered.
    fn estimate(&self, values: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxStatistic;

impl ActivationStatistic for MaxStatistic {
    fn spec(&self) -> String {
        "max".into()
    }

    fn estimate(&self, values: &mut [f64]) -> f64 {
        values.iter().copied().fold(0.0, f64::max)
    }
}

/// Nearest-rank percentile of the positive activations.
#[derive(Debug, Clone, Copy)]
pub struct PercentileStatistic {
    pub p: f64,
}

impl ActivationStatistic for PercentileStatistic {
    fn spec(&self) -> String {
        format!("percentile:{}", self.p)
    }

    fn estimate(&self, values: &mut [f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        let rank = ((self.p / 100.0) * values.len() as f64 - 1e-9).ceil() as usize;
        let k = rank.clamp(1, values.len()) - 1;
        let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
        *v
    }
}

type StatisticBuilder = fn(Option<&str>) -> Result<Box<dyn ActivationStatistic>>;

/// Name-keyed estimator constructors; specs look like `name` or `name:arg`.
#[derive(Clone)]
pub struct StatisticRegistry {
    builders: BTreeMap<String, StatisticBuilder>,
}

impl StatisticRegistry {
    pub fn builtin() -> Self {
        let mut r = StatisticRegistry {
            builders: BTreeMap::new(),
        };
        r.register("max", |arg| match arg {
            None => Ok(Box::new(MaxStatistic)),
            Some(a) => Err(Error::validation(format!("`max` takes no argument, got `{a}`"))),
        });
        r.register("percentile", |arg| {
            let p: f64 = arg
                .ok_or_else(|| Error::validation("`percentile` needs a value, e.g. percentile:99.9"))?
                .parse()
                .map_err(|_| Error::validation("percentile value must be a number"))?;
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::validation(format!("percentile {p} outside (0, 100]")));
            }
            Ok(Box::new(PercentileStatistic { p }))
        });
        r
    }

    pub fn register(&mut self, name: &str, builder: StatisticBuilder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn parse(&self, spec: &str) -> Result<Box<dyn ActivationStatistic>> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (spec.trim(), None),
        };
        let builder = self.builders.get(name).ok_or_else(|| Error::UnknownKind {
            registry: "activation statistic",
            name: name.to_string(),
        })?;
        builder(arg)
    }
}

impl fmt::Debug for StatisticRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

/// `lambda^l` for every activation point of a network (ReLU layers, then
/// the logit layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub lambda: Vec<f64>,
    pub mode: String,
}

/// Scans every frame of every sample; all frames share one `lambda^l`.
/// The logit layer contributes its positive logits.
pub fn collect_lambda(net: &Network, data: &[Sample], statistic: &dyn ActivationStatistic) -> Result<ActivationStats> {
    if data.is_empty() {
        return Err(Error::validation("cannot collect activation statistics from an empty dataset"));
    }
    let points = net.activation_points();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); points.len()];
    for sample in data {
        for frame in &sample.frames {
            let pass = net.forward(frame)?;
            for (k, &layer) in points.iter().enumerate() {
                values[k].extend(pass.outputs[layer].iter().copied().filter(|&v| v > 0.0));
            }
        }
    }
    let mut lambda = Vec::with_capacity(points.len());
    for (k, v) in values.iter_mut().enumerate() {
        let l = statistic.estimate(v);
        if !(l > 0.0) {
            return Err(Error::Layer {
                layer: points[k],
                message: "no positive activation; layer is dead and cannot be normalized".into(),
            });
        }
        lambda.push(l);
    }
    Ok(ActivationStats {
        lambda,
        mode: statistic.spec(),
    })
}
