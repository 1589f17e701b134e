use eventsnn::ann::{ActivationStats, LayerRecord, Network};
use eventsnn::convert::{convert, ConvertOptions};
use eventsnn::cutoff::{
    calibrate, calibrate_sequential, earliest_stable_index, infer_with_cutoff, s_gap, BetaTable, CalibrationSet,
    TraceSummary,
};
use eventsnn::events::{compute_dataset_stats, DvsEvent, EventStream};
use eventsnn::snn::{run, RunOptions};
use eventsnn::Shape;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set_strategy() -> impl Strategy<Value = CalibrationSet> {
    (1usize..7).prop_flat_map(|k| {
        let trace = (prop::collection::vec(0usize..3, k), prop::collection::vec(0u64..12, k));
        prop::collection::vec(trace, 1..40).prop_map(move |raw| {
            let grid: Vec<u64> = (1..=k as u64).map(|i| i * 10).collect();
            let traces = raw
                .into_iter()
                .map(|(predictions, gaps)| TraceSummary {
                    label: 0,
                    stable_from: earliest_stable_index(&predictions, 0).map(|i| grid[i]),
                    predictions,
                    gaps,
                })
                .collect();
            CalibrationSet { grid, traces }
        })
    })
}

/// Least beta in `0..=max gap` by brute force, straight from the summaries.
fn oracle(set: &CalibrationSet, k: usize, eps: f64) -> u64 {
    let t = set.grid[k];
    let max = set.traces.iter().map(|s| s.gaps[k]).max().unwrap();
    for beta in 0..=max {
        let members: Vec<&TraceSummary> = set.traces.iter().filter(|s| s.gaps[k] > beta).collect();
        let ok = members.iter().filter(|s| s.stable_from.is_some_and(|g| g <= t)).count();
        if !members.is_empty() && ok as f64 >= (1.0 - eps) * members.len() as f64 - 1e-9 {
            return beta;
        }
    }
    max + 1
}

/// Correct and total counts when each summary stops at its first trigger.
fn first_trigger(set: &CalibrationSet, table: &BetaTable) -> (usize, usize) {
    let (mut ok, mut cut) = (0, 0);
    for s in &set.traces {
        if let Some(k) = (0..set.grid.len()).find(|&k| s.gaps[k] > table.entries[k].1) {
            cut += 1;
            ok += (s.predictions[k] == s.label) as usize;
        }
    }
    (ok, cut)
}

proptest! {
    #[test]
    fn calibration_matches_exhaustive_search(set in set_strategy(), eps in prop::sample::select(vec![0.0, 0.01, 0.05, 0.2, 0.5])) {
        let table = calibrate(&set, eps).unwrap();
        for k in 0..set.grid.len() {
            prop_assert_eq!(table.entries[k], (set.grid[k], oracle(&set, k, eps)));
        }
    }

    #[test]
    fn larger_epsilon_never_raises_beta(set in set_strategy()) {
        let mut prev: Option<BetaTable> = None;
        for eps in [0.0, 0.02, 0.05, 0.1, 0.3, 0.6] {
            let t = calibrate(&set, eps).unwrap();
            if let Some(p) = &prev {
                prop_assert!(t.entries.iter().zip(&p.entries).all(|(a, b)| a.1 <= b.1));
            }
            prev = Some(t);
        }
    }

    #[test]
    fn confidence_grows_with_time(set in set_strategy()) {
        let c: Vec<f64> = std::iter::once(0).chain(set.grid.iter().copied()).map(|t| set.confidence_rate(t, None)).collect();
        prop_assert!(c.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn restriction_shrinks_with_beta(set in set_strategy()) {
        for &t in &set.grid {
            let sizes: Vec<usize> = (0..14).map(|b| set.restricted_counts(t, Some(b)).0).collect();
            prop_assert!(sizes.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn zero_epsilon_cuts_only_correct_samples(set in set_strategy()) {
        let (ok, cut) = first_trigger(&set, &calibrate(&set, 0.0).unwrap());
        prop_assert_eq!(ok, cut);
    }

    #[test]
    fn sequential_tables_bound_aggregate_error(set in set_strategy(), eps in prop::sample::select(vec![0.0, 0.01, 0.05, 0.2])) {
        let (ok, cut) = first_trigger(&set, &calibrate_sequential(&set, eps).unwrap());
        prop_assert!(ok as f64 >= (1.0 - eps) * cut as f64 - 1e-9);
    }

    #[test]
    fn gap_is_top_two_difference(counts in prop::collection::vec(0u64..50, 2..8)) {
        let mut sorted = counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        prop_assert_eq!(s_gap(&counts), sorted[0] - sorted[1]);
    }
}

#[test]
fn live_monitor_agrees_with_replay() {
    let records = [LayerRecord::dense(12, true), LayerRecord::dense(3, false)];
    let stats = ActivationStats {
        lambda: vec![1.0, 1.5],
        mode: "max".into(),
    };
    for seed in 0..10u64 {
        let net = Network::from_records(Shape::new(2, 3, 3), &records, seed).unwrap();
        let snn = convert(&net, &stats, ConvertOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = (0..400)
            .map(|_| DvsEvent::new(rng.random_range(0..40_000), rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..2)))
            .collect();
        let stream = EventStream::new(3, 3, 40_000, events).unwrap();
        let ds = compute_dataset_stats(std::slice::from_ref(&stream), 1).unwrap();
        let full = run(&snn, &stream, &ds, &RunOptions::default(), None).unwrap();
        let table = BetaTable {
            epsilon: 0.0,
            entries: (1..=8).map(|k| (k * 5_000, rng.random_range(0..6))).collect(),
        };
        let live = infer_with_cutoff(&snn, &stream, &ds, &table, &RunOptions::default()).unwrap();
        match table.replay(&full) {
            Some((t, pred)) => {
                assert!(live.used_cutoff);
                assert_eq!((live.cutoff_time_us, live.prediction), (t, pred));
                assert_eq!(live.trace.final_counts(), full.counts_at_time(t));
            }
            None => {
                assert!(!live.used_cutoff);
                assert_eq!(live.trace, full);
            }
        }
    }
}
