//! Tick-based integrate-and-fire simulation with reset by subtraction.

use crate::convert::{ChargeMode, SnnNetwork};
use crate::events::{DatasetStats, EventStream};
use crate::{Error, Result};
use std::io::Write;

/// Relative slack on the threshold test, so that currents such as
/// `0.4 + 0.6` reach a threshold of 1 despite rounding.
pub const FIRE_TOLERANCE: f64 = 1e-9;

/// Membranes, spike counters and last-tick spikes of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnState {
    v: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
    spikes: Vec<Vec<f64>>,
    ticks: u64,
    z: Vec<Vec<f64>>,
}

impl SnnState {
    /// Ticks simulated so far.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn potentials(&self, layer: usize) -> &[f64] {
        &self.v[layer]
    }

    pub fn counts(&self, layer: usize) -> &[u64] {
        &self.counts[layer]
    }

    /// `theta^l` of the most recent tick.
    pub fn last_spikes(&self, layer: usize) -> &[f64] {
        &self.spikes[layer]
    }

    /// Input current `Z^l` of the most recent tick.
    pub fn last_current(&self, layer: usize) -> &[f64] {
        &self.z[layer]
    }

    /// `N^l / ticks`; all zero before the first tick.
    pub fn rates(&self, layer: usize) -> Vec<f64> {
        let t = self.ticks.max(1) as f64;
        self.counts[layer].iter().map(|&n| n as f64 / t).collect()
    }

    fn charge_hidden(&mut self, snn: &SnnNetwork) {
        let last = self.v.len().saturating_sub(1);
        for (l, stage) in snn.stages().iter().enumerate().take(last) {
            self.v[l].fill(initial_potential(snn.charge(), stage.v_thr()));
        }
    }
}

fn initial_potential(charge: ChargeMode, v_thr: f64) -> f64 {
    match charge {
        ChargeMode::Initial => v_thr / 2.0,
        ChargeMode::Off | ChargeMode::PerTick => 0.0,
    }
}

/// Fresh state: zero counts, membranes at `V_thr/2` under initial charge
/// and at zero otherwise.
pub fn init_state(snn: &SnnNetwork) -> SnnState {
    let stages = snn.stages();
    SnnState {
        v: stages.iter().map(|s| vec![initial_potential(snn.charge(), s.v_thr()); s.len()]).collect(),
        counts: stages.iter().map(|s| vec![0; s.len()]).collect(),
        spikes: stages.iter().map(|s| vec![0.0; s.len()]).collect(),
        ticks: 0,
        z: stages.iter().map(|s| vec![0.0; s.len()]).collect(),
    }
}

/// Advances one tick with binary `input` spikes and returns the output
/// layer's spikes.
pub fn step<'a>(state: &'a mut SnnState, snn: &SnnNetwork, input: &[f64]) -> Result<&'a [f64]> {
    let expected = snn.input_shape().len();
    if input.len() != expected {
        return Err(Error::Shape {
            expected: format!("{expected} input spikes"),
            actual: format!("{}", input.len()),
        });
    }
    if let Some(i) = input.iter().position(|&s| s != 0.0 && s != 1.0) {
        return Err(Error::validation(format!("input spike {i} is {} (must be 0 or 1)", input[i])));
    }
    step_unchecked(state, snn, input);
    Ok(state.spikes.last().map(Vec::as_slice).unwrap_or(&[]))
}

pub(crate) fn step_unchecked(state: &mut SnnState, snn: &SnnNetwork, input: &[f64]) {
    let per_tick = snn.charge() == ChargeMode::PerTick;
    for (l, stage) in snn.stages().iter().enumerate() {
        let (done, rest) = state.spikes.split_at_mut(l);
        let src = if l == 0 { input } else { done[l - 1].as_slice() };
        let z = &mut state.z[l];
        stage.linear(src, z);
        let extra = if per_tick { stage.v_thr() / 2.0 } else { 0.0 };
        let v_thr = stage.v_thr();
        let fire_at = v_thr * (1.0 - FIRE_TOLERANCE);
        let out = &mut rest[0];
        for (i, ((v, zi), b)) in state.v[l].iter_mut().zip(z.iter_mut()).zip(stage.bias()).enumerate() {
            *zi += b + extra;
            *v += *zi;
            if *v >= fire_at {
                *v -= v_thr;
                out[i] = 1.0;
                state.counts[l][i] += 1;
            } else {
                out[i] = 0.0;
            }
        }
    }
    state.ticks += 1;
}

/// `N^l(t) / t` in spikes per tick.
pub fn spiking_rate(state: &SnnState, layer: usize) -> Result<Vec<f64>> {
    if state.ticks == 0 {
        return Err(Error::validation("spiking rate is undefined before the first tick"));
    }
    Ok(state.rates(layer))
}

/// Residual spiking rate `V^l / (t V_thr^l)`.
pub fn residual(state: &SnnState, snn: &SnnNetwork, layer: usize) -> Result<Vec<f64>> {
    if state.ticks == 0 {
        return Err(Error::validation("residual is undefined before the first tick"));
    }
    let denom = state.ticks as f64 * snn.stages()[layer].v_thr();
    Ok(state.v[layer].iter().map(|v| v / denom).collect())
}

/// Maps microsecond timestamps onto ticks of width `tick_us`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickClock {
    pub tick_us: f64,
    /// `ceil(duration / tick_us)`.
    pub total: u64,
}

impl TickClock {
    pub fn new(duration_us: u64, tick_us: f64) -> Result<Self> {
        if !(tick_us > 0.0 && tick_us.is_finite()) {
            return Err(Error::validation(format!("tick width must be positive, got {tick_us}")));
        }
        Ok(TickClock {
            tick_us,
            total: (duration_us as f64 / tick_us - 1e-9).ceil().max(0.0) as u64,
        })
    }

    /// Tick holding an event at `t`; the last tick also takes `t = duration`.
    pub fn tick_of(&self, t: u64) -> u64 {
        ((t as f64 / self.tick_us).floor() as u64).min(self.total.saturating_sub(1))
    }

    /// Ticks completed by time `t`.
    pub fn ticks_at(&self, t: u64) -> u64 {
        ((t as f64 / self.tick_us - 1e-9).ceil().max(0.0) as u64).min(self.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    #[default]
    Continuous,
    /// Hidden membranes reset at each of `F` frame boundaries; the output
    /// layer keeps its charge.
    PerFrame(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub mode: RunMode,
    /// Overrides the `1 / S_r` tick width.
    pub tick_us: Option<f64>,
    /// Tick counts after which per-layer rates are recorded.
    pub snapshots: Vec<u64>,
}

/// Observes the run after every tick. Returning `true` stops the run.
pub trait TickMonitor {
    fn after_tick(&mut self, ticks: u64, output_counts: &[u64]) -> bool;
}

/// Per-layer rates and residuals at one tick count.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub ticks: u64,
    pub rates: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
}

/// Output-layer counts after every tick, plus optional snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub classes: usize,
    pub clock: TickClock,
    counts: Vec<u64>,
    pub snapshots: Vec<Snapshot>,
}

impl RunTrace {
    /// Ticks actually simulated (fewer than `clock.total` after a stop).
    pub fn ticks_run(&self) -> u64 {
        (self.counts.len() / self.classes.max(1)) as u64
    }

    pub fn stopped_early(&self) -> bool {
        self.ticks_run() < self.clock.total
    }

    /// `N^L` after `ticks` ticks, clamped to the simulated range.
    pub fn counts_at(&self, ticks: u64) -> Vec<u64> {
        let t = ticks.min(self.ticks_run()) as usize;
        if t == 0 {
            return vec![0; self.classes];
        }
        self.counts[(t - 1) * self.classes..t * self.classes].to_vec()
    }

    /// Counts at the microsecond time `t_us`.
    pub fn counts_at_time(&self, t_us: u64) -> Vec<u64> {
        self.counts_at(self.clock.ticks_at(t_us))
    }

    pub fn final_counts(&self) -> Vec<u64> {
        self.counts_at(self.ticks_run())
    }

    pub fn prediction(&self) -> usize {
        crate::argmax(&self.final_counts())
    }

    /// Output rate `N^L(t) / t`.
    pub fn spiking_rate(&self, ticks: u64) -> Result<Vec<f64>> {
        if ticks == 0 {
            return Err(Error::validation("spiking rate is undefined at t = 0"));
        }
        Ok(self.counts_at(ticks).iter().map(|&n| n as f64 / ticks as f64).collect())
    }

    /// CSV with one row per tick: `tick,class_0_count,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.classes).map(|k| format!("class_{k}_count")).collect();
        writeln!(w, "tick,{}", header.join(","))?;
        for (t, row) in self.counts.chunks(self.classes.max(1)).enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{},{}", t + 1, cells.join(","))?;
        }
        Ok(())
    }
}

/// Simulates `stream` tick by tick. Events of one pixel inside a tick
/// collapse to a single spike.
pub fn run(
    snn: &SnnNetwork,
    stream: &EventStream,
    stats: &DatasetStats,
    opts: &RunOptions,
    mut monitor: Option<&mut dyn TickMonitor>,
) -> Result<RunTrace> {
    if stream.input_shape() != snn.input_shape() {
        return Err(Error::Shape {
            expected: snn.input_shape().to_string(),
            actual: stream.input_shape().to_string(),
        });
    }
    let clock = TickClock::new(stream.duration_us(), opts.tick_us.unwrap_or_else(|| stats.tick_us()))?;
    let boundaries: Vec<u64> = match opts.mode {
        RunMode::Continuous => Vec::new(),
        RunMode::PerFrame(0) => return Err(Error::validation("per-frame mode needs at least one frame")),
        RunMode::PerFrame(f) => {
            let frame_us = stream.duration_us() as f64 / f as f64;
            (1..f)
                .map(|k| (k as f64 * frame_us / clock.tick_us - 1e-9).ceil() as u64)
                .collect()
        }
    };

    let classes = snn.classes();
    let mut state = init_state(snn);
    let mut input = vec![0.0; snn.input_shape().len()];
    let mut counts = Vec::with_capacity(clock.total as usize * classes);
    let mut snapshots = Vec::new();
    let events = stream.events();
    let mut next = 0;
    let mut boundary = boundaries.iter().peekable();

    for tick in 0..clock.total {
        while boundary.peek().is_some_and(|&&b| b == tick) {
            state.charge_hidden(snn);
            boundary.next();
        }
        input.fill(0.0);
        while next < events.len() && clock.tick_of(events[next].t) == tick {
            input[stream.index_of(&events[next])] = 1.0;
            next += 1;
        }
        step_unchecked(&mut state, snn, &input);
        let out = state.counts.last().map(Vec::as_slice).unwrap_or(&[]);
        counts.extend_from_slice(out);
        let done = tick + 1;
        if opts.snapshots.contains(&done) {
            snapshots.push(Snapshot {
                ticks: done,
                rates: (0..snn.stages().len()).map(|l| state.rates(l)).collect(),
                residuals: (0..snn.stages().len())
                    .map(|l| residual(&state, snn, l).expect("ticks > 0"))
                    .collect(),
            });
        }
        if let Some(m) = monitor.as_deref_mut() {
            if m.after_tick(done, out) {
                break;
            }
        }
    }
    Ok(RunTrace {
        classes,
        clock,
        counts,
        snapshots,
    })
}
