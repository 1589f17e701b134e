//! DVS-style event streams: storage, file formats, frame aggregation and
//! dataset-level spiking statistics.
//!
//! Polarities map to input channels: channel 0 holds off-events (`p = 0`),
//! channel 1 holds on-events (`p = 1`). A pixel's flat index inside a
//! `(2, height, width)` tensor is `p * height * width + y * width + x`.

mod encode;
mod io;

pub use encode::{poisson_encode, poisson_encode_polarity, GrayImage};
pub use io::{load_events, load_events_with_report, save_events, EventFormat, LoadReport};

use crate::{Error, Result, Shape};
use serde::{Deserialize, Serialize};

/// One address event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DvsEvent {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// 0 = off, 1 = on.
    pub polarity: u8,
}

impl DvsEvent {
    pub const fn new(t: u64, x: u16, y: u16, polarity: u8) -> Self {
        DvsEvent { t, x, y, polarity }
    }
}

/// A time-sorted event recording over `[0, duration_us]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: u32,
    height: u32,
    duration_us: u64,
    events: Vec<DvsEvent>,
    label: Option<usize>,
    reordered: usize,
}

impl EventStream {
    /// Validates and stably sorts `events`.
    ///
    /// Out-of-order input is accepted; the number of descents found in the
    /// original order is available through [`EventStream::reordered`].
    pub fn new(width: u32, height: u32, duration_us: u64, mut events: Vec<DvsEvent>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(format!(
                "stream dimensions must be positive, got {width}x{height}"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if u32::from(e.x) >= width || u32::from(e.y) >= height {
                return Err(Error::validation(format!(
                    "event {i}: pixel ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
            if e.polarity > 1 {
                return Err(Error::validation(format!(
                    "event {i}: polarity {} is not 0 or 1",
                    e.polarity
                )));
            }
            if e.t > duration_us {
                return Err(Error::validation(format!(
                    "event {i}: timestamp {} beyond duration {duration_us}",
                    e.t
                )));
            }
        }
        let reordered = events.windows(2).filter(|w| w[1].t < w[0].t).count();
        if reordered > 0 {
            events.sort_by_key(|e| e.t);
        }
        Ok(EventStream {
            width,
            height,
            duration_us,
            events,
            label: None,
            reordered,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn duration_us(&self) -> u64 {
        self.duration_us
    }

    pub fn events(&self) -> &[DvsEvent] {
        &self.events
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// Descents seen in the input order before sorting.
    pub fn reordered(&self) -> usize {
        self.reordered
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Input tensor shape: two polarity channels over the sensor plane.
    pub fn input_shape(&self) -> Shape {
        Shape::new(2, self.height as usize, self.width as usize)
    }

    /// Flat index of an event inside a `(2, height, width)` tensor.
    pub fn index_of(&self, e: &DvsEvent) -> usize {
        let plane = (self.width * self.height) as usize;
        e.polarity as usize * plane + e.y as usize * self.width as usize + e.x as usize
    }

    /// Frame (0-based) an event timestamp falls into when the stream is
    /// split into `frames` half-open bins; `t = duration` lands in the last.
    pub fn frame_of(&self, t: u64, frames: usize) -> usize {
        if self.duration_us == 0 {
            return 0;
        }
        let idx = (u128::from(t) * frames as u128 / u128::from(self.duration_us)) as usize;
        idx.min(frames - 1)
    }

    /// Raw per-frame, per-pixel counts: `frames` vectors of length `2·H·W`.
    pub fn frame_counts(&self, frames: usize) -> Vec<Vec<u32>> {
        let len = self.input_shape().len();
        let mut counts = vec![vec![0u32; len]; frames.max(1)];
        for e in &self.events {
            let f = self.frame_of(e.t, frames.max(1));
            counts[f][self.index_of(e)] += 1;
        }
        counts
    }
}

/// Normalized per-frame spike rates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub frames: Vec<Vec<f64>>,
    pub shape: Shape,
    /// `T = T_total / F`, microseconds.
    pub frame_duration_us: f64,
}

/// Dataset-level spiking statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Largest single-pixel, single-frame count over the dataset (at least 1).
    pub n_max: u64,
    /// Spiking resolution `n_max / T`, spikes per second.
    pub s_r: f64,
    /// Frame count the statistics were computed with.
    pub frames: usize,
    /// Longest stream duration, microseconds.
    pub t_total_us: u64,
}

impl DatasetStats {
    /// Simulation tick width in microseconds (`1 / S_r`).
    pub fn tick_us(&self) -> f64 {
        1e6 / self.s_r
    }
}

/// Scans `dataset` for the hottest pixel-frame.
pub fn compute_dataset_stats(dataset: &[EventStream], frames: usize) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot compute statistics of an empty dataset"));
    }
    if frames == 0 {
        return Err(Error::validation("frame count must be at least 1"));
    }
    let mut n_max = 0u64;
    for stream in dataset {
        for frame in stream.frame_counts(frames) {
            if let Some(&m) = frame.iter().max() {
                n_max = n_max.max(u64::from(m));
            }
        }
    }
    let n_max = n_max.max(1);
    let t_total_us = dataset.iter().map(|s| s.duration_us).max().unwrap_or(0);
    if t_total_us == 0 {
        return Err(Error::validation("dataset streams have zero duration"));
    }
    let frame_seconds = t_total_us as f64 * 1e-6 / frames as f64;
    Ok(DatasetStats {
        n_max,
        s_r: n_max as f64 / frame_seconds,
        frames,
        t_total_us,
    })
}

/// Splits `stream` into `frames` half-open bins and divides counts by `n_max`.
///
/// Values are not clipped: a test stream hotter than the training maximum
/// yields entries above 1.
pub fn frame_aggregate(stream: &EventStream, frames: usize, stats: &DatasetStats) -> Result<FrameSet> {
    if frames == 0 {
        return Err(Error::validation("frame count must be at least 1"));
    }
    if stats.n_max == 0 {
        return Err(Error::validation("n_max must be at least 1"));
    }
    let scale = 1.0 / stats.n_max as f64;
    let frames_out = stream
        .frame_counts(frames)
        .into_iter()
        .map(|c| c.into_iter().map(|v| f64::from(v) * scale).collect())
        .collect();
    Ok(FrameSet {
        frames: frames_out,
        shape: stream.input_shape(),
        frame_duration_us: stream.duration_us as f64 / frames as f64,
    })
}

/// Per-pixel counts of events with `t <= t_hat`.
pub fn accumulate(stream: &EventStream, t_hat: u64) -> Result<Vec<u32>> {
    if t_hat > stream.duration_us {
        return Err(Error::validation(format!(
            "t_hat {t_hat} outside [0, {}]",
            stream.duration_us
        )));
    }
    let mut counts = vec![0u32; stream.input_shape().len()];
    let end = stream.events.partition_point(|e| e.t <= t_hat);
    for e in &stream.events[..end] {
        counts[stream.index_of(e)] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(events: Vec<DvsEvent>, duration: u64) -> EventStream {
        EventStream::new(4, 3, duration, events).unwrap()
    }

    #[test]
    fn empty_stream_keeps_duration() {
        let s = stream(vec![], 1000);
        assert!(s.is_empty());
        assert_eq!(s.duration_us(), 1000);
    }

    #[test]
    fn unsorted_input_is_sorted_stably() {
        let s = stream(vec![DvsEvent::new(5, 0, 0, 1), DvsEvent::new(3, 1, 0, 1)], 10);
        assert_eq!(s.events()[0].t, 3);
        assert_eq!(s.events()[1].t, 5);
        assert_eq!(s.reordered(), 1);

        let s = stream(
            vec![
                DvsEvent::new(5, 0, 0, 1),
                DvsEvent::new(2, 1, 0, 1),
                DvsEvent::new(2, 2, 0, 1),
            ],
            10,
        );
        assert_eq!(s.events()[0].x, 1);
        assert_eq!(s.events()[1].x, 2);
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let err = EventStream::new(4, 3, 10, vec![DvsEvent::new(0, 4, 0, 0)]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(EventStream::new(4, 3, 10, vec![DvsEvent::new(0, 0, 3, 0)]).is_err());
        assert!(EventStream::new(4, 3, 10, vec![DvsEvent::new(11, 0, 0, 0)]).is_err());
        assert!(EventStream::new(4, 3, 10, vec![DvsEvent::new(1, 0, 0, 2)]).is_err());
    }

    #[test]
    fn stats_single_hot_pixel() {
        let ev = (0..4).map(|i| DvsEvent::new(i * 1000, 1, 1, 1)).collect();
        let s = EventStream::new(4, 3, 1_000_000, ev).unwrap();
        let stats = compute_dataset_stats(&[s], 1).unwrap();
        assert_eq!(stats.n_max, 4);
        assert!((stats.s_r - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stats_all_empty_clamps() {
        let s = EventStream::new(4, 3, 500_000, vec![]).unwrap();
        let stats = compute_dataset_stats(&[s.clone(), s], 5).unwrap();
        assert_eq!(stats.n_max, 1);
        // s_r = F / T_total with T_total = 0.5 s
        assert!((stats.s_r - 10.0).abs() < 1e-9);
    }

    #[test]
    fn stats_empty_dataset_errors() {
        assert!(compute_dataset_stats(&[], 1).is_err());
    }

    #[test]
    fn doubling_frames_keeps_nmax_when_spikes_in_one_half() {
        // all spikes in the first quarter, one pixel
        let ev: Vec<_> = (0..6).map(|i| DvsEvent::new(i * 10, 2, 0, 0)).collect();
        let s = EventStream::new(4, 3, 1000, ev).unwrap();
        let brute = |f: usize| -> u64 {
            let mut best = 0;
            for k in 0..f {
                let lo = 1000 * k as u64 / f as u64;
                let hi = 1000 * (k as u64 + 1) / f as u64;
                let c = s.events().iter().filter(|e| e.t >= lo && (e.t < hi || (k == f - 1 && e.t <= hi))).count();
                best = best.max(c as u64);
            }
            best
        };
        let a = compute_dataset_stats(std::slice::from_ref(&s), 2).unwrap();
        let b = compute_dataset_stats(std::slice::from_ref(&s), 4).unwrap();
        assert_eq!(a.n_max, brute(2));
        assert_eq!(b.n_max, brute(4));
        assert_eq!(a.n_max, b.n_max);
    }

    #[test]
    fn frame_aggregate_cases() {
        let stats = DatasetStats {
            n_max: 4,
            s_r: 4.0,
            frames: 1,
            t_total_us: 100,
        };
        let empty = stream(vec![], 100);
        let fs = frame_aggregate(&empty, 3, &stats).unwrap();
        assert_eq!(fs.frames.len(), 3);
        assert!(fs.frames.iter().flatten().all(|&v| v == 0.0));

        let s = stream((0..3).map(|i| DvsEvent::new(i, 1, 2, 1)).collect(), 100);
        let fs = frame_aggregate(&s, 1, &stats).unwrap();
        let idx = 12 + 2 * 4 + 1;
        assert!((fs.frames[0][idx] - 0.75).abs() < 1e-12);

        // boundary t = T·k goes to the later frame
        let s = stream(vec![DvsEvent::new(50, 0, 0, 0)], 100);
        let fs = frame_aggregate(&s, 2, &stats).unwrap();
        assert_eq!(fs.frames[0][0], 0.0);
        assert_eq!(fs.frames[1][0], 0.25);
    }

    #[test]
    fn frame_values_not_clipped() {
        let stats = DatasetStats {
            n_max: 2,
            s_r: 1.0,
            frames: 1,
            t_total_us: 10,
        };
        let s = stream((0..5).map(|i| DvsEvent::new(i, 0, 0, 0)).collect(), 10);
        let fs = frame_aggregate(&s, 1, &stats).unwrap();
        assert_eq!(fs.frames[0][0], 2.5);
    }

    #[test]
    fn accumulate_cases() {
        let s = stream(
            vec![
                DvsEvent::new(1, 0, 0, 0),
                DvsEvent::new(4, 1, 1, 1),
                DvsEvent::new(4, 1, 1, 1),
                DvsEvent::new(9, 3, 2, 0),
            ],
            10,
        );
        assert!(accumulate(&s, 0).unwrap().iter().all(|&c| c == 0));
        let total: u32 = accumulate(&s, 10).unwrap().iter().sum();
        assert_eq!(total, 4);
        assert!(accumulate(&s, 11).is_err());

        let mid = accumulate(&s, 4).unwrap();
        let mut brute = vec![0u32; 24];
        for e in s.events().iter().filter(|e| e.t <= 4) {
            brute[s.index_of(e)] += 1;
        }
        assert_eq!(mid, brute);
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        (1u64..2000, proptest::collection::vec((0u64..2001, 0u16..4, 0u16..3, 0u8..2), 0..80)).prop_map(
            |(dur, raw)| {
                let ev = raw
                    .into_iter()
                    .map(|(t, x, y, p)| DvsEvent::new(t.min(dur), x, y, p))
                    .collect();
                EventStream::new(4, 3, dur, ev).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn frame_counts_conserve_events(s in arb_stream(), f in 1usize..9) {
            let total: u64 = s.frame_counts(f).iter().flatten().map(|&c| u64::from(c)).sum();
            prop_assert_eq!(total, s.len() as u64);
        }

        #[test]
        fn accumulate_is_monotone(s in arb_stream(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let t1 = (lo * s.duration_us() as f64) as u64;
            let t2 = (hi * s.duration_us() as f64) as u64;
            let c1 = accumulate(&s, t1).unwrap();
            let c2 = accumulate(&s, t2).unwrap();
            prop_assert!(c1.iter().zip(&c2).all(|(x, y)| x <= y));
        }

        #[test]
        fn single_frame_matches_full_accumulation(s in arb_stream(), n in 1u64..20) {
            let stats = DatasetStats { n_max: n, s_r: 1.0, frames: 1, t_total_us: s.duration_us() };
            let fs = frame_aggregate(&s, 1, &stats).unwrap();
            let acc = accumulate(&s, s.duration_us()).unwrap();
            for (v, c) in fs.frames[0].iter().zip(acc) {
                prop_assert!((v * n as f64 - f64::from(c)).abs() < 1e-9);
            }
        }
    }
}
