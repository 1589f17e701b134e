//! Rate similarity, the residual-norm bound, and curve data for plotting.

use crate::ann::{Network, Sample};
use crate::convert::SnnNetwork;
use crate::cutoff::{BetaTable, CalibrationSet};
use crate::events::{frame_aggregate, DatasetStats, EventStream};
use crate::snn::{run, RunOptions, RunTrace};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `cos(phi)` between a measured and a desired rate; `None` when the
/// desired rate is zero.
pub fn cosine_similarity(r: &[f64], r_d: &[f64]) -> Option<f64> {
    let nd = norm(r_d);
    if nd == 0.0 {
        return None;
    }
    let nr = norm(r);
    if nr == 0.0 {
        return Some(0.0);
    }
    Some((dot(r, r_d) / (nr * nd)).clamp(-1.0, 1.0))
}

/// Lower bound on `cos(phi)` after `t_ticks` ticks:
/// `sqrt(3) t / (sqrt(3) t + sqrt(n) v_thr / ||a||)`.
pub fn theorem_bound(a: &[f64], v_thr: f64, t_ticks: f64) -> Result<f64> {
    let na = norm(a);
    if na == 0.0 {
        return Err(Error::validation("bound needs a non-zero activation"));
    }
    if !(t_ticks > 0.0) {
        return Err(Error::validation("bound needs a positive tick count"));
    }
    let s3t = 3f64.sqrt() * t_ticks;
    Ok(s3t / (s3t + (a.len() as f64).sqrt() * v_thr / na))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormBound {
    /// Monte Carlo mean of `||V||_2`.
    pub mean: f64,
    pub std_error: f64,
    /// `sqrt(n) v_thr / sqrt(3)`.
    pub bound: f64,
}

impl NormBound {
    /// Mean at most the bound, allowing three standard errors of noise.
    pub fn holds(&self) -> bool {
        self.mean <= self.bound + 3.0 * self.std_error
    }

    pub fn holds_strictly(&self) -> bool {
        self.mean <= self.bound
    }
}

/// Draws `V_i ~ U[0, v_thr]` for `n` neurons, `trials` times.
pub fn norm_bound_check(n: usize, v_thr: f64, trials: usize, seed: u64) -> Result<NormBound> {
    if trials == 0 {
        return Err(Error::validation("trials must be at least 1"));
    }
    if !(v_thr >= 0.0) {
        return Err(Error::validation("v_thr must be non-negative"));
    }
    let bound = (n as f64).sqrt() * v_thr / 3f64.sqrt();
    if v_thr == 0.0 || n == 0 {
        return Ok(NormBound {
            mean: 0.0,
            std_error: 0.0,
            bound,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..trials {
        let s: f64 = (0..n).map(|_| rng.random_range(0.0..v_thr).powi(2)).sum();
        let x = s.sqrt();
        sum += x;
        sq += x * x;
    }
    let m = trials as f64;
    let mean = sum / m;
    let var = if trials > 1 { ((sq - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
    Ok(NormBound {
        mean,
        std_error: (var / m).sqrt(),
        bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSimilarity {
    pub layer: usize,
    pub t_ticks: u64,
    pub cos_phi: Option<f64>,
    pub bound: Option<f64>,
}

/// Desired rate per spiking layer: `a^l / lambda^l` from `net` on `input`,
/// with the logit layer clipped at zero.
pub fn desired_rates(net: &Network, snn: &SnnNetwork, input: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let pass = net.forward(input)?;
    let points = net.activation_points();
    if points.len() != snn.lambda().len() {
        return Err(Error::validation("network and spiking network disagree on layer count"));
    }
    let acts: Vec<Vec<f64>> = points.iter().map(|&i| pass.outputs[i].iter().map(|a| a.max(0.0)).collect()).collect();
    let desired = acts
        .iter()
        .zip(snn.lambda())
        .map(|(a, lam)| a.iter().map(|v| v / lam).collect())
        .collect();
    Ok((acts, desired))
}

/// Runs `stream` and compares each layer's rate at every tick in
/// `at_ticks` with the desired rate from the whole-stream frame.
pub fn layer_similarity(
    net: &Network,
    snn: &SnnNetwork,
    stream: &EventStream,
    stats: &DatasetStats,
    at_ticks: &[u64],
    opts: &RunOptions,
) -> Result<Vec<LayerSimilarity>> {
    let frame = frame_aggregate(stream, 1, stats)?;
    let (acts, desired) = desired_rates(net, snn, &frame.frames[0])?;
    let opts = RunOptions {
        snapshots: at_ticks.to_vec(),
        ..opts.clone()
    };
    let trace = run(snn, stream, stats, &opts, None)?;
    let mut out = Vec::new();
    for snap in &trace.snapshots {
        for (l, rd) in desired.iter().enumerate() {
            out.push(LayerSimilarity {
                layer: l,
                t_ticks: snap.ticks,
                cos_phi: cosine_similarity(&snap.rates[l], rd),
                bound: theorem_bound(&acts[l], snn.lambda()[l], snap.ticks as f64).ok(),
            });
        }
    }
    Ok(out)
}

/// Mean over samples of `sqrt(n) lambda^l / ||a^l||_2` for each ReLU layer;
/// samples with a silent layer are left out of that layer's mean.
pub fn outlier_ratio(net: &Network, data: &[Sample], lambda: &[f64]) -> Result<Vec<f64>> {
    let relu = net.relu_layers();
    let mut sums = vec![0.0; relu.len()];
    let mut counts = vec![0usize; relu.len()];
    for s in data {
        for frame in &s.frames {
            let pass = net.forward(frame)?;
            for (l, a) in pass.activations().iter().enumerate() {
                let na = norm(a);
                if na > 0.0 {
                    sums[l] += (a.len() as f64).sqrt() * lambda[l] / na;
                    counts[l] += 1;
                }
            }
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyPoint {
    pub t_hat: u64,
    pub accuracy: f64,
    pub cutoff_accuracy: f64,
    pub avg_time: f64,
}

/// For each cap `t_hat`: accuracy of the prediction at `t_hat`, and with a
/// table, accuracy and mean time when every sample stops at the earlier of
/// its cutoff and `t_hat`.
pub fn accuracy_vs_time(traces: &[(RunTrace, usize)], grid: &[u64], table: Option<&BetaTable>) -> Vec<AccuracyPoint> {
    let n = traces.len().max(1) as f64;
    let cuts: Vec<Option<(u64, usize)>> = traces.iter().map(|(t, _)| table.and_then(|b| b.replay(t))).collect();
    grid.iter()
        .map(|&t_hat| {
            let mut correct = 0usize;
            let mut cut_correct = 0usize;
            let mut time = 0.0;
            for ((trace, label), cut) in traces.iter().zip(&cuts) {
                let pred = crate::argmax(&trace.counts_at_time(t_hat));
                correct += (pred == *label) as usize;
                let (stop, cut_pred) = match cut {
                    Some((c, p)) if *c <= t_hat => (*c, *p),
                    _ => (t_hat, pred),
                };
                cut_correct += (cut_pred == *label) as usize;
                time += stop as f64;
            }
            AccuracyPoint {
                t_hat,
                accuracy: correct as f64 / n,
                cutoff_accuracy: cut_correct as f64 / n,
                avg_time: time / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceCurves {
    /// `(t_hat, C(t_hat, D))`, starting at `t_hat = 0`.
    pub vs_time: Vec<(u64, f64)>,
    pub fixed_t_hat: u64,
    /// `(beta, C(fixed_t_hat, D{S_gap > beta}))`.
    pub vs_beta: Vec<(u64, f64)>,
}

pub fn confidence_curves(set: &CalibrationSet, fixed_t_hat: u64, betas: &[u64]) -> ConfidenceCurves {
    let vs_time = std::iter::once(0)
        .chain(set.grid.iter().copied())
        .map(|t| (t, set.confidence_rate(t, None)))
        .collect();
    let vs_beta = betas.iter().map(|&b| (b, set.confidence_rate(fixed_t_hat, Some(b)))).collect();
    ConfidenceCurves {
        vs_time,
        fixed_t_hat,
        vs_beta,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NONE".to_string(), |x| format!("{x:.9}"))
}

pub fn similarity_csv(rows: &[LayerSimilarity]) -> String {
    let mut s = String::from("layer,t_ticks,cos_phi,bound\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.layer, r.t_ticks, opt(r.cos_phi), opt(r.bound));
    }
    s
}

pub fn accuracy_csv(rows: &[AccuracyPoint]) -> String {
    let mut s = String::from("t_hat,accuracy,cutoff_accuracy,avg_time\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.3}", r.t_hat, r.accuracy, r.cutoff_accuracy, r.avg_time);
    }
    s
}

pub fn confidence_time_csv(curves: &ConfidenceCurves) -> String {
    let mut s = String::from("t_hat,confidence\n");
    for (t, c) in &curves.vs_time {
        let _ = writeln!(s, "{t},{c:.6}");
    }
    s
}

pub fn confidence_beta_csv(curves: &ConfidenceCurves) -> String {
    let mut s = String::from("beta,confidence\n");
    for (b, c) in &curves.vs_beta {
        let _ = writeln!(s, "{b},{c:.6}");
    }
    s
}
