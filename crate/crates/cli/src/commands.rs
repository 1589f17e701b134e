use crate::config::RunConfig;
use crate::{AnalyzeArgs, CalibrateArgs, CliResult, ConvertArgs, EvalArgs, InferArgs, SimArgs, Stage, SynthArgs, TrainArgs};
use eventsnn::analysis::{self, AccuracyPoint};
use eventsnn::ann::{
    collect_lambda, fold_batchnorm, train as train_net, ActivationStats, LayerRecord, ModelFile, Network, StatisticRegistry,
    TrainMetadata,
};
use eventsnn::convert::{convert as convert_net, ChargeMode, ConvertOptions, SnnNetwork};
use eventsnn::cutoff::{calibrate as calibrate_plain, calibrate_sequential, default_grid, infer_with_cutoff, BetaTable, CalibrationSet, CutoffResult};
use eventsnn::dataset::{to_samples, Manifest, Split};
use eventsnn::events::{compute_dataset_stats, load_events, DatasetStats, EventFormat, EventStream};
use eventsnn::snn::{run as run_snn, RunMode, RunOptions, RunTrace, TickClock};
use eventsnn::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Config echo stored next to every artifact.
#[derive(Debug, Serialize)]
struct Metadata<'a> {
    command: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_metadata(dir: &Path, command: &'static str, cfg: &RunConfig) -> Result<()> {
    let meta = Metadata {
        command,
        version: VERSION,
        seed: cfg.seed,
        config: cfg,
    };
    write_json(&dir.join("metadata.json"), &meta)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(Error::Validation(format!("unknown split {s:?} (train, test)"))),
    }
}

fn apply_sim(cfg: &mut RunConfig, sim: &SimArgs) {
    if sim.per_frame.is_some() {
        cfg.sim.per_frame = sim.per_frame;
    }
    if sim.tick_us.is_some() {
        cfg.sim.tick_us = sim.tick_us;
    }
}

fn run_options(cfg: &RunConfig) -> RunOptions {
    RunOptions {
        mode: cfg.sim.per_frame.map_or(RunMode::Continuous, RunMode::PerFrame),
        tick_us: cfg.sim.tick_us,
        snapshots: Vec::new(),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Validation(format!("cannot start {workers} workers: {e}")))
}

/// Simulates every stream; output order follows input order for any
/// worker count.
pub fn simulate_all(
    snn: &SnnNetwork,
    streams: &[EventStream],
    stats: &DatasetStats,
    opts: &RunOptions,
    workers: usize,
) -> Result<Vec<(RunTrace, usize)>> {
    pool(workers)?.install(|| {
        streams
            .par_iter()
            .map(|s| {
                let label = s.label().ok_or_else(|| Error::Validation("stream has no label".into()))?;
                Ok((run_snn(snn, s, stats, opts, None)?, label))
            })
            .collect()
    })
}

fn load_snn(path: &Path) -> CliResult<(SnnNetwork, DatasetStats)> {
    let snn = SnnNetwork::load(path).stage("convert")?;
    let stats = *snn
        .dataset_stats()
        .ok_or_else(|| Error::Validation(format!("{} carries no dataset statistics", path.display())))
        .stage("convert")?;
    Ok((snn, stats))
}

fn load_split(manifest: &Manifest, split: Split, snn: &SnnNetwork) -> Result<Vec<EventStream>> {
    let streams = manifest.load_split(split)?;
    if let Some(s) = streams.iter().find(|s| s.input_shape() != snn.input_shape()) {
        return Err(Error::Shape {
            expected: snn.input_shape().to_string(),
            actual: s.input_shape().to_string(),
        });
    }
    if streams.is_empty() {
        return Err(Error::Validation(format!("dataset has no {split} samples")));
    }
    Ok(streams)
}

pub fn synth(cfg: &mut RunConfig, a: &SynthArgs) -> CliResult<()> {
    let s = &mut cfg.synth;
    s.classes = a.classes.unwrap_or(s.classes);
    s.samples_per_class = a.samples_per_class.unwrap_or(s.samples_per_class);
    s.train_fraction = a.train_fraction.unwrap_or(s.train_fraction);
    s.test_fraction = a.test_fraction.unwrap_or(s.test_fraction);
    s.duration_us = a.duration_us.unwrap_or(s.duration_us);
    s.max_rate = a.max_rate.unwrap_or(s.max_rate);
    s.noise_rate = a.noise_rate.unwrap_or(s.noise_rate);
    s.seed = cfg.seed;
    cfg.validate().stage("config")?;
    let manifest = eventsnn::synth::write_dataset(&a.out, &cfg.synth).stage("synth")?;
    println!("wrote {} samples to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

pub fn train(cfg: &mut RunConfig, a: &TrainArgs) -> CliResult<()> {
    let t = &mut cfg.train;
    t.alpha = a.alpha.unwrap_or(t.alpha);
    if let Some(q) = &a.q {
        t.q = q.parse().stage("config")?;
    }
    t.frames = a.frames.unwrap_or(t.frames);
    t.lr = a.lr.unwrap_or(t.lr);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.weight_decay = a.weight_decay.unwrap_or(t.weight_decay);
    if let Some(l) = &a.lambda {
        t.lambda = l.clone();
    }
    cfg.validate().stage("config")?;
    let statistic = StatisticRegistry::builtin().parse(&cfg.train.lambda).stage("config")?;
    let tc = cfg.train.train_config(cfg.seed);

    let manifest = Manifest::load(&a.data).stage("synth")?;
    let streams = manifest.load_split(Split::Train).stage("synth")?;
    if streams.is_empty() {
        return Err(Error::Validation("dataset has no training samples".into())).stage("synth");
    }
    let stats = compute_dataset_stats(&streams, tc.frames).stage("train")?;
    let samples = to_samples(&streams, tc.frames, &stats).stage("train")?;
    let mut layers = cfg.train.hidden.clone();
    layers.push(LayerRecord::dense(manifest.classes, false));
    let net = Network::from_records(streams[0].input_shape(), &layers, tc.seed).stage("train")?;
    log::info!("training on {} samples for {} epochs", samples.len(), tc.epochs);
    let (net, report) = train_net(net, &samples, &tc).stage("train")?;
    let folded = fold_batchnorm(&net).stage("train")?;
    let lambda = collect_lambda(&folded, &samples, statistic.as_ref()).stage("train")?;

    let mut file = ModelFile::from_network(&net);
    file.metadata = Some(TrainMetadata {
        config: tc,
        history: report.history.clone(),
        train_accuracy: report.train_accuracy,
        crate_version: VERSION.to_string(),
    });
    file.activation_stats = Some(lambda);
    file.dataset_stats = Some(stats);
    ensure_parent(&a.out).stage("train")?;
    file.save(&a.out).stage("train")?;
    print_json(&serde_json::json!({
        "train_accuracy": report.train_accuracy,
        "final_objective": report.history.last(),
        "model": a.out,
    }))
    .stage("train")
}

pub fn convert(cfg: &mut RunConfig, a: &ConvertArgs) -> CliResult<()> {
    if let Some(c) = &a.charge {
        cfg.convert.charge = c.parse::<ChargeMode>().stage("config")?;
    }
    if let Some(l) = &a.lambda {
        cfg.train.lambda = l.clone();
    }
    cfg.validate().stage("config")?;
    let model = ModelFile::load(&a.model).stage("train")?;
    let net = fold_batchnorm(&model.to_network().stage("train")?).stage("convert")?;
    let mut dataset_stats = model.dataset_stats;

    let stats: ActivationStats = if a.stats == "auto" {
        match (&a.data, &model.activation_stats) {
            (Some(data), _) => {
                let manifest = Manifest::load(data).stage("synth")?;
                let streams = manifest.load_split(Split::Train).stage("synth")?;
                let frames = model.metadata.as_ref().map_or(1, |m| m.config.frames);
                let ds = match dataset_stats {
                    Some(s) => s,
                    None => compute_dataset_stats(&streams, frames).stage("convert")?,
                };
                dataset_stats = Some(ds);
                let samples = to_samples(&streams, frames, &ds).stage("convert")?;
                let statistic = StatisticRegistry::builtin().parse(&cfg.train.lambda).stage("config")?;
                collect_lambda(&net, &samples, statistic.as_ref()).stage("convert")?
            }
            (None, Some(s)) => s.clone(),
            (None, None) => {
                return Err(Error::Validation(
                    "model has no activation statistics; pass --data or --stats <file>".into(),
                ))
                .stage("convert")
            }
        }
    } else {
        let path = Path::new(&a.stats);
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
            .stage("convert")?;
        serde_json::from_str(&text).map_err(Error::from).stage("convert")?
    };
    let mut snn = convert_net(&net, &stats, ConvertOptions { charge: cfg.convert.charge }).stage("convert")?;
    let ds = dataset_stats
        .ok_or_else(|| Error::Validation("no dataset statistics; pass --data".into()))
        .stage("convert")?;
    snn.set_dataset_stats(ds);
    let mut file = snn.to_model_file();
    file.metadata = model.metadata;
    ensure_parent(&a.out).stage("convert")?;
    file.save(&a.out).stage("convert")?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn calibrate_table(cfg: &RunConfig, set: &CalibrationSet, eps: f64) -> Result<BetaTable> {
    if cfg.cutoff.sequential {
        calibrate_sequential(set, eps)
    } else {
        calibrate_plain(set, eps)
    }
}

fn traces_for(
    cfg: &RunConfig,
    snn: &SnnNetwork,
    stats: &DatasetStats,
    manifest: &Manifest,
    split: Split,
) -> Result<Vec<(RunTrace, usize)>> {
    let streams = load_split(manifest, split, snn)?;
    simulate_all(snn, &streams, stats, &run_options(cfg), cfg.workers)
}

pub fn calibrate(cfg: &mut RunConfig, a: &CalibrateArgs) -> CliResult<()> {
    cfg.cutoff.epsilon = a.epsilon.unwrap_or(cfg.cutoff.epsilon);
    cfg.cutoff.grid_points = a.grid_points.unwrap_or(cfg.cutoff.grid_points);
    cfg.cutoff.sequential |= a.sequential;
    apply_sim(cfg, &a.sim);
    cfg.validate().stage("config")?;
    let split = parse_split(&a.split).stage("config")?;
    let (snn, stats) = load_snn(&a.snn)?;
    let manifest = Manifest::load(&a.data).stage("synth")?;
    let traces = traces_for(cfg, &snn, &stats, &manifest, split).stage("calibrate")?;
    log::info!("simulated {} {split} samples", traces.len());
    let grid = default_grid(stats.t_total_us, cfg.cutoff.grid_points);
    let set = CalibrationSet::new(grid, &traces).stage("calibrate")?;
    let table = calibrate_table(cfg, &set, cfg.cutoff.epsilon).stage("calibrate")?;
    ensure_parent(&a.out).stage("calibrate")?;
    table.save(&a.out, traces.len()).stage("calibrate")?;
    println!("wrote {} checkpoints to {}", table.entries.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct InferOutput {
    prediction: usize,
    cutoff_time_us: u64,
    used_cutoff: bool,
    ticks: u64,
    counts: Vec<u64>,
}

pub fn infer(cfg: &mut RunConfig, a: &InferArgs) -> CliResult<()> {
    apply_sim(cfg, &a.sim);
    cfg.validate().stage("config")?;
    let (snn, stats) = load_snn(&a.snn)?;
    let stream = load_events(&a.events, EventFormat::from_path(&a.events)).stage("events")?;
    let opts = run_options(cfg);
    let out = match &a.cutoff {
        Some(path) => {
            let table = BetaTable::load(path).stage("calibrate")?;
            infer_with_cutoff(&snn, &stream, &stats, &table, &opts).stage("infer")?
        }
        None => {
            let trace = run_snn(&snn, &stream, &stats, &opts, None).stage("infer")?;
            CutoffResult {
                prediction: trace.prediction(),
                cutoff_time_us: stream.duration_us(),
                used_cutoff: false,
                trace,
            }
        }
    };
    if let Some(path) = &a.trace {
        let mut buf = Vec::new();
        out.trace
            .write_csv(&mut buf)
            .map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })
            .stage("infer")?;
        write_text(path, &String::from_utf8_lossy(&buf)).stage("infer")?;
    }
    print_json(&InferOutput {
        prediction: out.prediction,
        cutoff_time_us: out.cutoff_time_us,
        used_cutoff: out.used_cutoff,
        ticks: out.trace.ticks_run(),
        counts: out.trace.final_counts(),
    })
    .stage("infer")
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    epsilon: Option<f64>,
    full_accuracy: f64,
    cutoff_accuracy: f64,
    avg_time_us: f64,
    avg_time_ratio: f64,
    curve: String,
}

fn eps_tag(e: f64) -> String {
    format!("{e:.2}")
}

fn summarize(points: &[AccuracyPoint], t_total: u64, epsilon: Option<f64>, curve: String) -> EvalSummary {
    let last = points.last().copied().unwrap_or(AccuracyPoint {
        t_hat: t_total,
        accuracy: 0.0,
        cutoff_accuracy: 0.0,
        avg_time: 0.0,
    });
    EvalSummary {
        epsilon,
        full_accuracy: last.accuracy,
        cutoff_accuracy: last.cutoff_accuracy,
        avg_time_us: last.avg_time,
        avg_time_ratio: last.avg_time / t_total as f64,
        curve,
    }
}

pub fn eval(cfg: &mut RunConfig, a: &EvalArgs) -> CliResult<()> {
    if let Some(e) = &a.epsilons {
        cfg.cutoff.epsilons = e.clone();
    }
    cfg.cutoff.grid_points = a.grid_points.unwrap_or(cfg.cutoff.grid_points);
    cfg.cutoff.sequential |= a.sequential;
    apply_sim(cfg, &a.sim);
    cfg.validate().stage("config")?;
    let (snn, stats) = load_snn(&a.snn)?;
    let manifest = Manifest::load(&a.data).stage("synth")?;
    let test = traces_for(cfg, &snn, &stats, &manifest, Split::Test).stage("eval")?;
    let grid = default_grid(stats.t_total_us, cfg.cutoff.grid_points);
    let mut summaries = Vec::new();

    if let Some(path) = &a.cutoff {
        let table = BetaTable::load(path).stage("calibrate")?;
        let points = analysis::accuracy_vs_time(&test, &grid, Some(&table));
        let name = "accuracy_table.csv".to_string();
        write_text(&a.out_dir.join(&name), &analysis::accuracy_csv(&points)).stage("eval")?;
        summaries.push(summarize(&points, stats.t_total_us, None, name));
    } else {
        let train = traces_for(cfg, &snn, &stats, &manifest, Split::Train).stage("eval")?;
        let set = CalibrationSet::new(grid.clone(), &train).stage("eval")?;
        ensure_parent(&a.out_dir.join("summary.json")).stage("eval")?;
        for &eps in &cfg.cutoff.epsilons {
            let table = calibrate_table(cfg, &set, eps).stage("calibrate")?;
            log::info!("epsilon {eps}: calibrated {} checkpoints", table.entries.len());
            table
                .save(&a.out_dir.join(format!("beta_eps_{}.csv", eps_tag(eps))), train.len())
                .stage("eval")?;
            let points = analysis::accuracy_vs_time(&test, &grid, Some(&table));
            let name = format!("accuracy_eps_{}.csv", eps_tag(eps));
            write_text(&a.out_dir.join(&name), &analysis::accuracy_csv(&points)).stage("eval")?;
            summaries.push(summarize(&points, stats.t_total_us, Some(eps), name));
        }
    }
    write_json(&a.out_dir.join("summary.json"), &summaries).stage("eval")?;
    write_metadata(&a.out_dir, "eval", cfg).stage("eval")?;
    print_json(&summaries).stage("eval")
}

#[derive(Debug, Serialize)]
struct AnalyzeSummary {
    /// Mean `sqrt(n) lambda / ||a||` per ReLU layer on the training split.
    outlier_ratio: Vec<f64>,
    /// Fraction of (sample, layer, tick) points where `cos(phi)` fell
    /// below the bound.
    bound_violation_rate: f64,
    norm_bound: Vec<NormBoundRow>,
    fixed_t_hat: u64,
}

#[derive(Debug, Serialize)]
struct NormBoundRow {
    n: usize,
    mean: f64,
    std_error: f64,
    bound: f64,
}

pub fn analyze(cfg: &mut RunConfig, a: &AnalyzeArgs) -> CliResult<()> {
    apply_sim(cfg, &a.sim);
    cfg.validate().stage("config")?;
    if !(a.at_ratio > 0.0 && a.at_ratio <= 1.0) {
        return Err(Error::Validation("--at-ratio must be in (0, 1]".into())).stage("config");
    }
    let model = ModelFile::load(&a.model).stage("train")?;
    let net = fold_batchnorm(&model.to_network().stage("train")?).stage("analyze")?;
    let (snn, stats) = load_snn(&a.snn)?;
    let manifest = Manifest::load(&a.data).stage("synth")?;
    let test = load_split(&manifest, Split::Test, &snn).stage("analyze")?;
    let train_streams = load_split(&manifest, Split::Train, &snn).stage("analyze")?;
    let opts = run_options(cfg);

    let clock = TickClock::new(stats.t_total_us, cfg.sim.tick_us.unwrap_or_else(|| stats.tick_us())).stage("analyze")?;
    let mut ticks: Vec<u64> = (1..=16u64).map(|k| (k * clock.total / 16).max(1)).collect();
    ticks.dedup();
    let rows: Vec<Vec<analysis::LayerSimilarity>> = pool(cfg.workers)
        .stage("analyze")?
        .install(|| {
            test.par_iter()
                .map(|s| analysis::layer_similarity(&net, &snn, s, &stats, &ticks, &opts))
                .collect::<Result<_>>()
        })
        .stage("analyze")?;
    let layers = snn.stages().len();
    let mut mean_rows = Vec::new();
    let (mut below, mut total) = (0usize, 0usize);
    for &t in &ticks {
        for l in 0..layers {
            let pts: Vec<&analysis::LayerSimilarity> =
                rows.iter().flatten().filter(|r| r.t_ticks == t && r.layer == l).collect();
            let cos: Vec<f64> = pts.iter().filter_map(|r| r.cos_phi).collect();
            let bounds: Vec<f64> = pts.iter().filter_map(|r| r.bound).collect();
            for r in &pts {
                if let (Some(c), Some(b)) = (r.cos_phi, r.bound) {
                    total += 1;
                    below += (c < b) as usize;
                }
            }
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            mean_rows.push(analysis::LayerSimilarity {
                layer: l,
                t_ticks: t,
                cos_phi: mean(&cos),
                bound: mean(&bounds),
            });
        }
    }
    write_text(&a.out_dir.join("similarity.csv"), &analysis::similarity_csv(&mean_rows)).stage("analyze")?;

    let train_traces = simulate_all(&snn, &train_streams, &stats, &opts, cfg.workers).stage("analyze")?;
    let grid = default_grid(stats.t_total_us, cfg.cutoff.grid_points);
    let set = CalibrationSet::new(grid.clone(), &train_traces).stage("analyze")?;
    let target = (a.at_ratio * stats.t_total_us as f64).round() as u64;
    let fixed = *grid.iter().min_by_key(|&&t| t.abs_diff(target)).expect("grid is non-empty");
    let k = grid.iter().position(|&t| t == fixed).expect("fixed point is on the grid");
    let betas: Vec<u64> = (0..=set.max_gap(k)).collect();
    let curves = analysis::confidence_curves(&set, fixed, &betas);
    write_text(&a.out_dir.join("confidence_time.csv"), &analysis::confidence_time_csv(&curves)).stage("analyze")?;
    write_text(&a.out_dir.join("confidence_beta.csv"), &analysis::confidence_beta_csv(&curves)).stage("analyze")?;

    let frames = model.metadata.as_ref().map_or(1, |m| m.config.frames);
    let model_stats = model.dataset_stats.unwrap_or(stats);
    let samples = to_samples(&train_streams, frames, &model_stats).stage("analyze")?;
    let relu_lambda = &snn.lambda()[..snn.lambda().len().saturating_sub(1)];
    let outlier_ratio = analysis::outlier_ratio(&net, &samples, relu_lambda).stage("analyze")?;
    let norm_bound = [1usize, 10, 100]
        .iter()
        .map(|&n| {
            let r = analysis::norm_bound_check(n, 1.0, 10_000, cfg.seed)?;
            Ok(NormBoundRow {
                n,
                mean: r.mean,
                std_error: r.std_error,
                bound: r.bound,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("analyze")?;
    let summary = AnalyzeSummary {
        outlier_ratio,
        bound_violation_rate: if total > 0 { below as f64 / total as f64 } else { 0.0 },
        norm_bound,
        fixed_t_hat: fixed,
    };
    write_json(&a.out_dir.join("summary.json"), &summary).stage("analyze")?;
    write_metadata(&a.out_dir, "analyze", cfg).stage("analyze")?;
    print_json(&summary).stage("analyze")
}
