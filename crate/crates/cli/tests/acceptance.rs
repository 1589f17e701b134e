//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line with
//! its measurements and wall time; the process fails if any criterion does.

use eventsnn::analysis::{accuracy_vs_time, confidence_curves, layer_similarity, norm_bound_check, outlier_ratio};
use eventsnn::ann::{
    backward, collect_lambda, objective, train, ActivationStats, LayerRecord, MaxStatistic, Network, NormExponent,
    Sample, TrainConfig,
};
use eventsnn::convert::{convert, verify_equivalence, ChargeMode, ConvertOptions, SnnNetwork};
use eventsnn::cutoff::{calibrate, calibrate_sequential, default_grid, s_gap, CalibrationSet, NEVER_CUT};
use eventsnn::dataset::{to_samples, Split};
use eventsnn::events::{compute_dataset_stats, DatasetStats, EventStream};
use eventsnn::snn::{init_state, run, step, RunOptions, RunTrace, TickClock};
use eventsnn::synth::{generate, SynthConfig};
use eventsnn::{argmax, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Relative comparison with a scale floor of 1, for identities whose sides
/// may both be near zero.
fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(1.0)
}

fn single_layer(weights: Vec<f64>, inputs: usize, outputs: usize, bias: Vec<f64>, lambda: f64, charge: ChargeMode) -> SnnNetwork {
    let rec = LayerRecord {
        weights: Some(weights),
        bias: Some(bias),
        ..LayerRecord::dense(outputs, false)
    };
    let net = Network::from_records(Shape::flat(inputs), &[rec], 0).unwrap();
    let stats = ActivationStats {
        lambda: vec![lambda],
        mode: "max".into(),
    };
    convert(&net, &stats, ConvertOptions { charge }).unwrap()
}

fn random_spikes(rng: &mut ChaCha8Rng, p: &[f64]) -> Vec<f64> {
    p.iter().map(|&q| if rng.random_bool(q) { 1.0 } else { 0.0 }).collect()
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = 0;
    for run_id in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run_id);
        let (n_in, n_out) = (rng.random_range(1..12), rng.random_range(1..8));
        let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n_out).map(|_| rng.random_range(-0.2..0.2)).collect();
        let lambda = rng.random_range(0.2..3.0);
        let charge = if run_id % 2 == 0 { ChargeMode::Initial } else { ChargeMode::Off };
        let snn = single_layer(w, n_in, n_out, b, lambda, charge);
        let v_thr = snn.stages()[0].v_thr();
        let p: Vec<f64> = (0..n_in).map(|_| rng.random_range(0.0..1.0)).collect();
        let ticks = rng.random_range(1..400);
        let mut state = init_state(&snn);
        let v0 = state.potentials(0).to_vec();
        let mut z_sum = vec![0.0; n_out];
        for _ in 0..ticks {
            let x = random_spikes(&mut rng, &p);
            step(&mut state, &snn, &x).unwrap();
            z_sum.iter_mut().zip(state.last_current(0)).for_each(|(s, z)| *s += z);
        }
        for i in 0..n_out {
            let n = state.counts(0)[i] as f64;
            let expect = v0[i] + z_sum[i] - n * v_thr;
            let v = state.potentials(0)[i];
            let scale = v0[i].abs() + z_sum[i].abs() + n * v_thr;
            let err = (v - expect).abs() / scale.max(1.0);
            worst = worst.max(err);
            if err > 1e-9 {
                failures += 1;
            }
        }
    }

    let snn = single_layer(vec![0.6], 1, 1, vec![0.0], 1.0, ChargeMode::Off);
    let mut state = init_state(&snn);
    let mut fired = Vec::new();
    for t in 1..=5 {
        if step(&mut state, &snn, &[1.0]).unwrap()[0] == 1.0 {
            fired.push(t);
        }
    }
    outcome(
        failures == 0 && fired == [2, 4, 5],
        format!("100 runs, worst relative error {worst:.2e}; hand trace spikes at {fired:?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let records = [LayerRecord::dense(12, true), LayerRecord::dense(10, true), LayerRecord::dense(5, false)];
    let net = Network::from_records(Shape::flat(16), &records, 2).unwrap();
    let stats = ActivationStats {
        lambda: vec![0.8, 1.3, 2.1],
        mode: "max".into(),
    };
    let snn = convert(&net, &stats, ConvertOptions { charge: ChargeMode::Off }).unwrap();
    let p: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut state = init_state(&snn);
    let mut input_counts = [0.0; 16];
    let (mut checks, mut failures, mut worst) = (0usize, 0usize, 0.0f64);
    for t in 1..=500u64 {
        let x = random_spikes(&mut rng, &p);
        input_counts.iter_mut().zip(&x).for_each(|(c, s)| *c += s);
        step(&mut state, &snn, &x).unwrap();
        let tf = t as f64;
        for (l, stage) in snn.stages().iter().enumerate() {
            let prev: Vec<f64> = if l == 0 {
                input_counts.iter().map(|c| c / tf).collect()
            } else {
                state.rates(l - 1)
            };
            let z = stage.current(&prev);
            let r = state.rates(l);
            for i in 0..stage.len() {
                let delta = state.potentials(l)[i] / (tf * stage.v_thr());
                let rhs = z[i] / stage.v_thr() - delta;
                checks += 1;
                worst = worst.max((r[i] - rhs).abs());
                if !close(r[i], rhs, 1e-9) {
                    failures += 1;
                }
            }
        }
    }
    outcome(
        failures == 0,
        format!("{checks} checks over 500 ticks, {failures} failures, worst abs error {worst:.2e}"),
    )
}

/// Zero-initialized biases leave a dead layer's successors exactly on the
/// ReLU kink, where only one-sided derivatives exist.
fn randomize_biases(net: &mut Network, rng: &mut ChaCha8Rng) {
    for layer in net.layers_mut() {
        let start = layer.decayed_params();
        for b in &mut layer.params_mut()[start..] {
            *b = rng.random_range(0.05..0.2);
        }
    }
}

fn criterion_4() -> Outcome {
    let records = [LayerRecord::dense(8, true), LayerRecord::dense(6, true), LayerRecord::dense(3, false)];
    let (mut checked, mut failures) = (0usize, 0usize);
    let mut params = 0;
    let h = 1e-6;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut net = Network::from_records(Shape::flat(6), &records, seed).unwrap();
        randomize_biases(&mut net, &mut rng);
        params = net.num_params();
        let batch: Vec<Sample> = (0..6)
            .map(|i| Sample {
                frames: (0..2).map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
                label: i % 3,
            })
            .collect();
        for alpha in [0.0, 0.003] {
            for q in [NormExponent::NegInfinity, NormExponent::Finite(2.0)] {
                let (_, grads) = backward(&net, &batch, alpha, q).unwrap();
                for (k, layer) in net.layers().iter().enumerate() {
                    for i in 0..layer.params().len() {
                        let f = |d: f64| {
                            let mut n = net.clone();
                            n.layers_mut()[k].params_mut()[i] += d;
                            objective(&n, &batch, alpha, q).unwrap().total
                        };
                        let fd = (f(h) - f(-h)) / (2.0 * h);
                        let g = grads.layers[k][i];
                        checked += 1;
                        // FD rounding noise is about 1e-10 here, so entries near
                        // zero are held to an absolute floor.
                        if (g - fd).abs() > 1e-4 * g.abs().max(fd.abs()) + 1e-8 {
                            failures += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        failures == 0 && params <= 1000,
        format!("{checked} parameters checked ({params} per net, q in {{-inf, 2}}), {failures} mismatches"),
    )
}

fn criterion_5() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for n in [1usize, 10, 100] {
        let (mut ok, mut strict) = (0, 0);
        for rep in 0..100u64 {
            let r = norm_bound_check(n, 1.0, 10_000, 5000 + rep).unwrap();
            ok += r.holds() as usize;
            strict += r.holds_strictly() as usize;
        }
        pass &= ok >= 99;
        lines.push(format!("n={n}: {ok}/100 (strict {strict}/100)"));
    }
    outcome(pass, lines.join(", "))
}

struct Fixture {
    stats: DatasetStats,
    train: Vec<EventStream>,
    test: Vec<EventStream>,
    train_samples: Vec<Sample>,
}

fn fixture(seed: u64) -> Fixture {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let data = generate(&cfg).unwrap();
    let pick = |split| data.iter().filter(|d| d.1 == split).map(|d| d.0.clone()).collect::<Vec<_>>();
    let (train, test) = (pick(Split::Train), pick(Split::Test));
    let stats = compute_dataset_stats(&train, 1).unwrap();
    let train_samples = to_samples(&train, 1, &stats).unwrap();
    Fixture {
        stats,
        train,
        test,
        train_samples,
    }
}

struct Trained {
    net: Network,
    lambda: ActivationStats,
    snn: SnnNetwork,
}

fn train_model(fx: &Fixture, alpha: f64, seed: u64) -> Trained {
    let mut records = eventsnn_cli::RunConfig::default().train.hidden;
    records.push(LayerRecord::dense(SynthConfig::default().classes, false));
    let net = Network::from_records(fx.train[0].input_shape(), &records, seed).unwrap();
    let tc = TrainConfig {
        alpha,
        seed,
        ..TrainConfig::default()
    };
    let (net, _) = train(net, &fx.train_samples, &tc).unwrap();
    let lambda = collect_lambda(&net, &fx.train_samples, &MaxStatistic).unwrap();
    let snn = convert(&net, &lambda, ConvertOptions::default()).unwrap();
    Trained { net, lambda, snn }
}

fn traces(snn: &SnnNetwork, streams: &[EventStream], stats: &DatasetStats) -> Vec<(RunTrace, usize)> {
    streams
        .iter()
        .map(|s| (run(snn, s, stats, &RunOptions::default(), None).unwrap(), s.label().unwrap()))
        .collect()
}

fn criterion_3(fx: &Fixture, m: &Trained) -> Outcome {
    let test = to_samples(&fx.test, 1, &fx.stats).unwrap();
    let (mut cos_sum, mut cos_min, mut agree) = (0.0, f64::INFINITY, 0);
    for s in &test {
        let rep = verify_equivalence(&m.net, &m.snn, &s.frames[0], 1000).unwrap();
        let cos = rep.layers.last().unwrap().cos_phi.unwrap_or(0.0);
        cos_sum += cos;
        cos_min = cos_min.min(cos);
        agree += (rep.ann_prediction == rep.snn_prediction) as usize;
    }
    let n = test.len() as f64;
    let mean = cos_sum / n;
    let agreement = agree as f64 / n;
    outcome(
        mean >= 0.99 && agreement >= 0.95,
        format!("mean final-layer cos {mean:.4} (min {cos_min:.4}), agreement {agreement:.4} over {} test samples", test.len()),
    )
}

fn hidden_cos_at_quarter(fx: &Fixture, m: &Trained) -> f64 {
    let clock = TickClock::new(fx.stats.t_total_us, fx.stats.tick_us()).unwrap();
    let at = (clock.total / 4).max(1);
    let hidden = m.snn.stages().len() - 1;
    let (mut sum, mut n) = (0.0, 0usize);
    for s in &fx.test {
        for row in layer_similarity(&m.net, &m.snn, s, &fx.stats, &[at], &RunOptions::default()).unwrap() {
            if row.layer < hidden {
                if let Some(c) = row.cos_phi {
                    sum += c;
                    n += 1;
                }
            }
        }
    }
    sum / n.max(1) as f64
}

fn mean_ratio(fx: &Fixture, m: &Trained) -> f64 {
    let relu = &m.lambda.lambda[..m.lambda.lambda.len() - 1];
    let r = outlier_ratio(&m.net, &fx.train_samples, relu).unwrap();
    r.iter().sum::<f64>() / r.len() as f64
}

fn criterion_6(pairs: &[(f64, f64, f64, f64)]) -> Outcome {
    let ratio_wins = pairs.iter().filter(|p| p.1 < p.0).count();
    let cos_wins = pairs.iter().filter(|p| p.3 > p.2).count();
    let rows: Vec<String> = pairs
        .iter()
        .map(|p| format!("ratio {:.2}->{:.2} cos {:.4}->{:.4}", p.0, p.1, p.2, p.3))
        .collect();
    outcome(
        ratio_wins >= 4 && cos_wins >= 4,
        format!("ratio lower on {ratio_wins}/5, hidden cos higher on {cos_wins}/5 [{}]", rows.join("; ")),
    )
}

/// Exhaustive search straight from the traces: the least beta whose
/// restricted set is non-empty and at least `1 - eps` stable by `t_hat`.
fn oracle_beta(train: &[(RunTrace, usize)], grid: &[u64], k: usize, eps: f64) -> u64 {
    let t = grid[k];
    let gaps: Vec<u64> = train.iter().map(|(tr, _)| s_gap(&tr.counts_at_time(t))).collect();
    let stable: Vec<bool> = train
        .iter()
        .map(|(tr, label)| grid[k..].iter().all(|&u| argmax(&tr.counts_at_time(u)) == *label))
        .collect();
    let max_gap = gaps.iter().copied().max().unwrap_or(0);
    for beta in 0..=max_gap {
        let members: Vec<usize> = (0..train.len()).filter(|&i| gaps[i] > beta).collect();
        if members.is_empty() {
            break;
        }
        let ok = members.iter().filter(|&&i| stable[i]).count();
        if ok as f64 >= (1.0 - eps) * members.len() as f64 - 1e-9 {
            return beta;
        }
    }
    max_gap + 1
}

fn criterion_7(fx: &Fixture, m: &Trained) -> Outcome {
    let train = traces(&m.snn, &fx.train, &fx.stats);
    let grid = default_grid(fx.stats.t_total_us, 32);
    let set = CalibrationSet::new(grid.clone(), &train).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.05, 0.01, 0.0] {
        let table = calibrate(&set, eps).unwrap();
        let mismatched = (0..grid.len())
            .filter(|&k| {
                let b = table.entries[k].1;
                let o = oracle_beta(&train, &grid, k, eps);
                b != o && !(b == NEVER_CUT && o > set.max_gap(k))
            })
            .count();
        let (mut cut, mut correct) = (0usize, 0usize);
        for (tr, label) in &train {
            if let Some((_, pred)) = table.replay(tr) {
                cut += 1;
                correct += (pred == *label) as usize;
            }
        }
        let acc = if cut > 0 { correct as f64 / cut as f64 } else { 1.0 };
        let ok = mismatched == 0 && acc >= 1.0 - eps - 1e-12;
        pass &= ok;
        parts.push(format!(
            "eps {eps:.2}: beta mismatches {mismatched}, cut accuracy {correct}/{cut} = {acc:.4} ({})",
            if ok { "ok" } else { "below 1-eps" }
        ));
    }
    // Reported for comparison only; the criterion is about `calibrate`.
    let seq: Vec<String> = [0.05, 0.01]
        .iter()
        .map(|&eps| {
            let table = calibrate_sequential(&set, eps).unwrap();
            let cut: Vec<bool> = train
                .iter()
                .filter_map(|(tr, label)| table.replay(tr).map(|(_, p)| p == *label))
                .collect();
            format!("{}/{} at eps {eps:.2}", cut.iter().filter(|&&c| c).count(), cut.len())
        })
        .collect();
    parts.push(format!("sequential variant: {}", seq.join(", ")));
    let curve = confidence_curves(&set, grid[grid.len() / 4], &[]).vs_time;
    let monotone = curve.windows(2).all(|w| w[1].1 >= w[0].1);
    pass &= monotone;
    parts.push(format!("C(t) non-decreasing: {monotone}"));
    outcome(pass, parts.join("; "))
}

fn criterion_8(fx: &Fixture, m: &Trained) -> Outcome {
    let train = traces(&m.snn, &fx.train, &fx.stats);
    let test = traces(&m.snn, &fx.test, &fx.stats);
    let grid = default_grid(fx.stats.t_total_us, 32);
    let table = calibrate(&CalibrationSet::new(grid, &train).unwrap(), 0.01).unwrap();
    let t_total = fx.stats.t_total_us;
    let point = accuracy_vs_time(&test, &[t_total], Some(&table))[0];
    let ratio = point.avg_time / t_total as f64;
    let drop = point.accuracy - point.cutoff_accuracy;
    outcome(
        ratio <= 0.7 && drop <= 0.02 + 1e-12,
        format!(
            "full accuracy {:.4}, cutoff accuracy {:.4} (drop {:.2} pp), mean time {ratio:.3} T_total",
            point.accuracy,
            point.cutoff_accuracy,
            drop * 100.0
        ),
    )
}

fn cli(args: &[&str]) {
    let mut full = vec!["eventsnn"];
    full.extend_from_slice(args);
    let code = eventsnn_cli::main_with_args(full);
    assert_eq!(code, 0, "eventsnn {} exited with {code}", args.join(" "));
}

fn pipeline(dir: &Path, workers: &str) {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let (data, manifest, model, snn) = (p("data"), p("data/manifest.json"), p("model.json"), p("snn.json"));
    let common = ["--seed", "7", "--workers", workers];
    let with = |args: &[&str]| {
        let mut v: Vec<&str> = args.to_vec();
        v.extend_from_slice(&common);
        cli(&v);
    };
    with(&["synth", "--out", &data, "--samples-per-class", "60"]);
    with(&["train", "--data", &manifest, "--out", &model, "--epochs", "30", "--alpha", "0.003"]);
    with(&["convert", "--model", &model, "--out", &snn]);
    with(&["calibrate", "--snn", &snn, "--data", &manifest, "--out", &p("beta.csv")]);
    with(&["eval", "--snn", &snn, "--data", &manifest, "--out-dir", &p("eval")]);
    with(&["analyze", "--model", &model, "--snn", &snn, "--data", &manifest, "--out-dir", &p("analyze")]);
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for name in ["model.json", "snn.json", "beta.csv", "beta.json"] {
        out.push((name.to_string(), std::fs::read(dir.join(name)).unwrap()));
    }
    for sub in ["eval", "analyze", "data"] {
        let mut files: Vec<_> = walk(&dir.join(sub));
        files.sort();
        for f in files {
            // metadata.json echoes the worker count, which differs on purpose
            if f.file_name().is_some_and(|n| n == "metadata.json") {
                continue;
            }
            let rel = f.strip_prefix(dir).unwrap().display().to_string();
            out.push((rel, std::fs::read(&f).unwrap()));
        }
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "3");
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let csvs = fa.iter().filter(|f| f.0.ends_with(".csv")).count();
    outcome(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} artifacts compared ({csvs} CSV), differing: {differing:?}", fa.len()),
    )
}

fn report(results: &mut Vec<bool>, id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = took <= limit;
    let pass = o.pass && in_time;
    results.push(pass);
    println!(
        "criterion {id} {:<26} {}  {} [{:.2?} of {:?}{}]",
        name,
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took,
        limit,
        if in_time { "" } else { ", over time" }
    );
}

fn main() {
    // `cargo test -- --list` and filters should not run the suite
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results = Vec::new();
    let s = Duration::from_secs;
    report(&mut results, 1, "if-engine exactness", s(1), criterion_1);
    report(&mut results, 2, "rate identity", s(10), criterion_2);
    report(&mut results, 4, "gradient correctness", s(60), criterion_4);
    report(&mut results, 5, "norm bound", s(30), criterion_5);

    let mut seed0 = None;
    report(&mut results, 6, "roe directionality", s(15 * 60), || {
        let mut pairs = Vec::new();
        for seed in 0..5u64 {
            let fx = fixture(seed);
            let plain = train_model(&fx, 0.0, seed);
            let roe = train_model(&fx, 0.003, seed);
            pairs.push((
                mean_ratio(&fx, &plain),
                mean_ratio(&fx, &roe),
                hidden_cos_at_quarter(&fx, &plain),
                hidden_cos_at_quarter(&fx, &roe),
            ));
            if seed == 0 {
                seed0 = Some((fx, roe));
            }
        }
        criterion_6(&pairs)
    });
    let (fx, roe) = seed0.unwrap();
    report(&mut results, 3, "conversion convergence", s(120), || criterion_3(&fx, &roe));
    report(&mut results, 7, "cutoff calibration", s(60), || criterion_7(&fx, &roe));
    report(&mut results, 8, "cutoff latency", s(300), || criterion_8(&fx, &roe));
    report(&mut results, 9, "pipeline determinism", s(600), criterion_9);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
