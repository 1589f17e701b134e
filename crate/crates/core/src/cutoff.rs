//! Confidence-rate calibration of spike-gap thresholds and the runtime
//! cutoff monitor.

use crate::convert::SnnNetwork;
use crate::events::{DatasetStats, EventStream};
use crate::snn::{run, RunOptions, RunTrace, TickClock, TickMonitor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// `beta` that no spike gap can exceed.
pub const NEVER_CUT: u64 = u64::MAX;

/// Difference between the largest and second-largest count.
pub fn s_gap(counts: &[u64]) -> u64 {
    let mut top = [0u64; 2];
    for &c in counts {
        if c > top[0] {
            top = [c, top[0]];
        } else if c > top[1] {
            top[1] = c;
        }
    }
    top[0] - top[1]
}

/// `count` checkpoints evenly spaced in `(0, t_total]`, in whole microseconds.
pub fn default_grid(t_total_us: u64, count: usize) -> Vec<u64> {
    let mut grid: Vec<u64> = (1..=count as u64)
        .map(|k| (u128::from(k) * u128::from(t_total_us) / count as u128) as u64)
        .filter(|&t| t > 0)
        .collect();
    grid.dedup();
    grid
}

pub fn validate_grid(grid: &[u64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("checkpoint grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("checkpoint times must be strictly increasing"));
    }
    Ok(())
}

/// Checkpoint from which the predictions stay on `label` through the end of
/// the grid (inclusive), or `None` if the last prediction is wrong.
pub fn earliest_stable_index(predictions: &[usize], label: usize) -> Option<usize> {
    let mut first = None;
    for (k, &p) in predictions.iter().enumerate().rev() {
        if p != label {
            break;
        }
        first = Some(k);
    }
    first
}

/// One labeled trace reduced to what calibration needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub label: usize,
    /// Prediction at each checkpoint.
    pub predictions: Vec<usize>,
    /// `S_gap` at each checkpoint.
    pub gaps: Vec<u64>,
    /// Earliest stable time `g(X)` in microseconds; `None` means never.
    pub stable_from: Option<u64>,
}

impl TraceSummary {
    pub fn new(trace: &RunTrace, label: usize, grid: &[u64]) -> Self {
        let counts: Vec<Vec<u64>> = grid.iter().map(|&t| trace.counts_at_time(t)).collect();
        let predictions: Vec<usize> = counts.iter().map(|c| crate::argmax(c)).collect();
        let gaps = counts.iter().map(|c| s_gap(c)).collect();
        let stable_from = earliest_stable_index(&predictions, label).map(|k| grid[k]);
        TraceSummary {
            label,
            predictions,
            gaps,
            stable_from,
        }
    }
}

/// Summaries of labeled traces over a shared checkpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub grid: Vec<u64>,
    pub traces: Vec<TraceSummary>,
}

impl CalibrationSet {
    pub fn new(grid: Vec<u64>, traces: &[(RunTrace, usize)]) -> Result<Self> {
        validate_grid(&grid)?;
        let traces = traces.iter().map(|(t, l)| TraceSummary::new(t, *l, &grid)).collect();
        Ok(CalibrationSet { grid, traces })
    }

    /// Grid position at or before `t_hat`.
    fn position(&self, t_hat: u64) -> Option<usize> {
        self.grid.partition_point(|&t| t <= t_hat).checked_sub(1)
    }

    /// Size of `D{S_gap > beta}` at `t_hat` and how many of those have
    /// `g(X) <= t_hat`. `beta = None` applies no restriction.
    pub fn restricted_counts(&self, t_hat: u64, beta: Option<u64>) -> (usize, usize) {
        let k = self.position(t_hat);
        let mut size = 0;
        let mut stable = 0;
        for s in &self.traces {
            let gap = k.map_or(0, |k| s.gaps[k]);
            if beta.is_some_and(|b| gap <= b) {
                continue;
            }
            size += 1;
            if s.stable_from.is_some_and(|g| g <= t_hat) {
                stable += 1;
            }
        }
        (size, stable)
    }

    /// `C(t_hat, D{S_gap > beta})`; 1 for an empty restricted set.
    pub fn confidence_rate(&self, t_hat: u64, beta: Option<u64>) -> f64 {
        match self.restricted_counts(t_hat, beta) {
            (0, _) => 1.0,
            (n, s) => s as f64 / n as f64,
        }
    }

    pub fn max_gap(&self, k: usize) -> u64 {
        self.traces.iter().map(|s| s.gaps[k]).max().unwrap_or(0)
    }
}

/// Checkpoint times with their spike-gap thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTable {
    pub epsilon: f64,
    pub entries: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BetaSidecar {
    epsilon: f64,
    checkpoints: usize,
    grid_us: Vec<u64>,
    samples: usize,
}

impl BetaTable {
    /// A table that never triggers.
    pub fn never(grid: &[u64]) -> Self {
        BetaTable {
            epsilon: 0.0,
            entries: grid.iter().map(|&t| (t, NEVER_CUT)).collect(),
        }
    }

    pub fn grid(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_hat_us,beta\n");
        for &(t, b) in &self.entries {
            if b == NEVER_CUT {
                out.push_str(&format!("{t},inf\n"));
            } else {
                out.push_str(&format!("{t},{b}\n"));
            }
        }
        out
    }

    pub fn from_csv(text: &str, epsilon: f64) -> Result<Self> {
        let mut entries = Vec::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "t_hat_us,beta" => {}
            _ => {
                return Err(Error::Parse {
                    location: "line 1".into(),
                    message: "expected header `t_hat_us,beta`".into(),
                })
            }
        }
        for (i, line) in lines {
            let bad = |m: &str| Error::Parse {
                location: format!("line {}", i + 1),
                message: m.to_string(),
            };
            let (t, b) = line.trim().split_once(',').ok_or_else(|| bad("expected two fields"))?;
            let t: u64 = t.parse().map_err(|_| bad("bad checkpoint time"))?;
            let b = if b == "inf" {
                NEVER_CUT
            } else {
                b.parse().map_err(|_| bad("beta must be a non-negative integer or `inf`"))?
            };
            entries.push((t, b));
        }
        let table = BetaTable { epsilon, entries };
        validate_grid(&table.grid())?;
        Ok(table)
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the CSV and a JSON sidecar next to it.
    pub fn save(&self, path: &Path, samples: usize) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let side = BetaSidecar {
            epsilon: self.epsilon,
            checkpoints: self.entries.len(),
            grid_us: self.grid(),
            samples,
        };
        let side_path = Self::sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&side)?;
        text.push('\n');
        std::fs::write(&side_path, text).map_err(|e| Error::io(&side_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let side_path = Self::sidecar_path(path);
        let epsilon = match std::fs::read_to_string(&side_path) {
            Ok(s) => serde_json::from_str::<BetaSidecar>(&s)?.epsilon,
            Err(_) => f64::NAN,
        };
        Self::from_csv(&text, epsilon).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    /// First checkpoint whose gap exceeds its beta: `(time, prediction)`.
    pub fn replay(&self, trace: &RunTrace) -> Option<(u64, usize)> {
        self.entries.iter().find_map(|&(t, b)| {
            let counts = trace.counts_at_time(t);
            (b != NEVER_CUT && s_gap(&counts) > b).then(|| (t, crate::argmax(&counts)))
        })
    }
}

/// Least `beta` at every checkpoint with `C(t_hat, D{S_gap > beta}) >= 1 - epsilon`,
/// or `max gap + 1` when none exists.
pub fn calibrate(set: &CalibrationSet, epsilon: f64) -> Result<BetaTable> {
    if set.traces.is_empty() {
        return Err(Error::validation("no calibration traces"));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::validation(format!("epsilon must be in [0, 1), got {epsilon}")));
    }
    let target = 1.0 - epsilon;
    let entries = set
        .grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let max_gap = set.max_gap(k);
            let beta = (0..max_gap)
                .find(|&b| {
                    let (n, s) = set.restricted_counts(t, Some(b));
                    n > 0 && s as f64 >= target * n as f64 - 1e-9
                })
                .unwrap_or(max_gap + 1);
            (t, beta)
        })
        .collect();
    Ok(BetaTable { epsilon, entries })
}

/// Like [`calibrate`], but each checkpoint only sees the samples that no
/// earlier checkpoint has cut. Every group of cut samples is then at least
/// `1 - epsilon` correct, so the same holds for all cut samples together.
pub fn calibrate_sequential(set: &CalibrationSet, epsilon: f64) -> Result<BetaTable> {
    if set.traces.is_empty() {
        return Err(Error::validation("no calibration traces"));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::validation(format!("epsilon must be in [0, 1), got {epsilon}")));
    }
    let target = 1.0 - epsilon;
    let mut running: Vec<&TraceSummary> = set.traces.iter().collect();
    let mut entries = Vec::with_capacity(set.grid.len());
    for (k, &t) in set.grid.iter().enumerate() {
        let max_gap = running.iter().map(|s| s.gaps[k]).max().unwrap_or(0);
        let beta = (0..max_gap)
            .find(|&b| {
                let members = running.iter().filter(|s| s.gaps[k] > b);
                let (n, ok) = members.fold((0usize, 0usize), |(n, ok), s| {
                    (n + 1, ok + s.stable_from.is_some_and(|g| g <= t) as usize)
                });
                n > 0 && ok as f64 >= target * n as f64 - 1e-9
            })
            .unwrap_or(set.max_gap(k) + 1);
        running.retain(|s| s.gaps[k] <= beta);
        entries.push((t, beta));
    }
    Ok(BetaTable { epsilon, entries })
}

/// Stops a run at the first checkpoint whose gap exceeds its beta.
#[derive(Debug, Clone)]
pub struct CutoffMonitor {
    checkpoints: Vec<(u64, u64, u64)>,
    next: usize,
    triggered: Option<u64>,
}

impl CutoffMonitor {
    pub fn new(table: &BetaTable, clock: &TickClock) -> Self {
        CutoffMonitor {
            checkpoints: table.entries.iter().map(|&(t, b)| (clock.ticks_at(t), t, b)).collect(),
            next: 0,
            triggered: None,
        }
    }

    /// Checkpoint time that fired, if any.
    pub fn triggered(&self) -> Option<u64> {
        self.triggered
    }
}

impl TickMonitor for CutoffMonitor {
    fn after_tick(&mut self, ticks: u64, counts: &[u64]) -> bool {
        while let Some(&(at, t, b)) = self.checkpoints.get(self.next) {
            if at > ticks {
                break;
            }
            self.next += 1;
            if at == ticks && b != NEVER_CUT && s_gap(counts) > b {
                self.triggered = Some(t);
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffResult {
    pub prediction: usize,
    /// Checkpoint that fired, or the stream duration.
    pub cutoff_time_us: u64,
    pub used_cutoff: bool,
    pub trace: RunTrace,
}

/// Runs `stream` and stops consuming events once the table fires.
pub fn infer_with_cutoff(
    snn: &SnnNetwork,
    stream: &EventStream,
    stats: &DatasetStats,
    table: &BetaTable,
    opts: &RunOptions,
) -> Result<CutoffResult> {
    let clock = TickClock::new(stream.duration_us(), opts.tick_us.unwrap_or_else(|| stats.tick_us()))?;
    let mut monitor = CutoffMonitor::new(table, &clock);
    let trace = run(snn, stream, stats, opts, Some(&mut monitor))?;
    let (cutoff_time_us, used_cutoff) = match monitor.triggered() {
        Some(t) => (t, true),
        None => (stream.duration_us(), false),
    };
    Ok(CutoffResult {
        prediction: trace.prediction(),
        cutoff_time_us,
        used_cutoff,
        trace,
    })
}
