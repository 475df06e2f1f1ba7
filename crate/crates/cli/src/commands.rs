use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use switchgp_core::circulant::fast_segment_terms;
use switchgp_core::dataset::har::HAR_ACTIVITIES;
use switchgp_core::dataset::{
    generate_synthetic, lift_to_ambient, load_har_split, random_model, write_har_split, RandomModelSpec,
    SessionGrouping, Split,
};
use switchgp_core::experiment::{
    experiment_recognition, experiment_sweep, experiment_trajectory, limit_subjects, preprocess, project_series,
};
use switchgp_core::filter::Filter;
use switchgp_core::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use switchgp_core::model::{self, io as model_io, FitConfig, SegmentedSeries, SwitchingGPModel};
use switchgp_core::monitor::{run_adaptive, GroupCatalog};

use crate::output::{CliError, CliResult, RunOutput};
use crate::{DataArgs, MonitorArgs, OutArgs, Sessions};

/// Published reference figures, reported next to measured values.
const PUBLISHED_TRAJECTORY_MSE: f64 = 0.3852;
const PUBLISHED_TRAJECTORY_ABS: f64 = 0.4235;
const PUBLISHED_ACCURACY: f64 = 0.7421;
const PUBLISHED_MONITOR_ACCURACY: f64 = 0.7926;
const PUBLISHED_MONITOR_USAGE: f64 = 0.7342;

fn grouping(s: Sessions) -> SessionGrouping {
    match s {
        Sessions::Subject => SessionGrouping::Subject,
        Sessions::Contiguous => SessionGrouping::Contiguous,
    }
}

fn load_split(data: &DataArgs, split: Split) -> CliResult<Vec<SegmentedSeries>> {
    let series = load_har_split(&data.data_dir, split, grouping(data.sessions))?;
    Ok(limit_subjects(series, data.subjects))
}

fn state_name(j: usize) -> String {
    HAR_ACTIVITIES
        .get(j)
        .map_or_else(|| format!("STATE_{}", j + 1), |s| s.to_string())
}

fn load_model(path: &Path, dmax: Option<usize>) -> CliResult<SwitchingGPModel> {
    let mut m = model_io::load(path)?;
    if let Some(d) = dmax {
        m.duration_cap = d;
        m.validate()?;
    }
    Ok(m)
}

/// Test split in model coordinates.
fn load_test(data: &DataArgs, m: &SwitchingGPModel) -> CliResult<Vec<SegmentedSeries>> {
    let raw = load_split(data, Split::Test)?;
    let series = match &m.pca {
        Some(pca) => project_series(pca, &raw)?,
        None => raw,
    };
    if let Some(s) = series.iter().find(|s| s.num_features() != m.num_features()) {
        return Err(CliError::new(
            "invalid_input",
            format!(
                "series {} has {} features, model expects {}",
                s.subject_id,
                s.num_features(),
                m.num_features()
            ),
        ));
    }
    Ok(series)
}

fn data_config(data: &DataArgs, model: Option<&Path>) -> Value {
    json!({
        "data_dir": data.data_dir,
        "subjects": data.subjects,
        "sessions": format!("{:?}", data.sessions).to_lowercase(),
        "model": model,
    })
}

pub struct TrainOptions {
    pub data: DataArgs,
    pub model: PathBuf,
    pub components: usize,
    pub whiten: bool,
    pub states: Option<usize>,
    pub dmax: Option<usize>,
    pub use_fft: bool,
    pub freeze_noise: bool,
    pub smoothness: String,
    pub max_iterations: usize,
    pub out: OutArgs,
}

pub fn train(o: TrainOptions) -> CliResult<()> {
    let started = Instant::now();
    let output = RunOutput::new(o.out.out.as_deref())?;
    let raw = load_split(&o.data, Split::Train)?;
    let input_dim = raw
        .first()
        .ok_or_else(|| CliError::new("insufficient_data", "training split is empty"))?
        .num_features();
    let (pca, series) = if input_dim > o.components {
        let (pca, train, _) = preprocess(&raw, &[], o.components, o.whiten)?;
        (Some(pca), train)
    } else {
        (None, raw)
    };
    let num_states = match o.states {
        Some(a) => a,
        None => {
            series
                .iter()
                .filter_map(|s| s.labels.as_ref())
                .flatten()
                .copied()
                .max()
                .ok_or_else(|| CliError::new("insufficient_data", "training split has no labels"))?
                + 1
        }
    };
    let mut config = FitConfig {
        smoothness: o.smoothness.parse::<Smoothness>()?,
        freeze_noise: o.freeze_noise,
        duration_cap: o.dmax,
        ..FitConfig::default()
    };
    config.optimizer.max_iterations = o.max_iterations;
    let report = model::fit(num_states, &series, &config)?;
    let mut fitted = report.model;
    fitted.pca = pca;
    model_io::save(&fitted, &o.model)?;
    let nll = model::negative_loglik(&fitted, &series, o.use_fft)?;

    let states: Vec<Value> = (0..num_states)
        .map(|j| {
            let g = &fitted.durations[j];
            let e = &fitted.emissions[j];
            json!({
                "state": j + 1,
                "activity": state_name(j),
                "trained": fitted.trained[j],
                "duration_shape": g.shape(),
                "duration_scale": g.scale(),
                "duration_mean": g.mean(),
                "kernel_variance": e.temporal.variance(),
                "kernel_lengthscale": e.temporal.lengthscale(),
            })
        })
        .collect();
    let transitions: Vec<Vec<f64>> = (0..num_states)
        .map(|i| (0..num_states).map(|j| fitted.transitions.prob(i, j)).collect())
        .collect();
    let opt = &report.optimizer;
    output.finish(
        "train",
        json!({
            "data": data_config(&o.data, Some(&o.model)),
            "components": o.components,
            "whiten": o.whiten,
            "states": num_states,
            "dmax": o.dmax,
            "use_fft": o.use_fft,
            "freeze_noise": o.freeze_noise,
            "smoothness": o.smoothness,
            "max_iterations": o.max_iterations,
        }),
        json!({
            "training_rows": series.iter().map(|s| s.len()).sum::<usize>(),
            "training_series": series.len(),
            "input_features": input_dim,
            "model_features": fitted.num_features(),
            "duration_cap": fitted.duration_cap,
            "negative_loglik": nll,
            "objective_path": if o.use_fft { "fft" } else { "exact" },
            "optimizer": {
                "initial_objective": opt.initial_objective,
                "final_objective": opt.final_objective,
                "iterations": opt.iterations,
                "evaluations": opt.evaluations,
                "converged": opt.converged,
            },
            "states": states,
            "transitions": transitions,
            "noise": fitted.noise.variances(),
            "untrained_states": report.untrained.iter().map(|j| j + 1).collect::<Vec<_>>(),
            "backfilled_transition_rows": report.transition_warnings.iter().map(|w| w.state + 1).collect::<Vec<_>>(),
            "runtime_s": started.elapsed().as_secs_f64(),
        }),
    )
}

#[derive(Serialize)]
struct StateMetricRow {
    state: usize,
    activity: String,
    mse: f64,
    abs: f64,
    count: usize,
}

pub fn predict(data: &DataArgs, model_path: &Path, ratio: f64, out: &OutArgs) -> CliResult<()> {
    let started = Instant::now();
    let output = RunOutput::new(out.out.as_deref())?;
    let m = load_model(model_path, None)?;
    let test = load_test(data, &m)?;
    let report = experiment_trajectory(&m, &test, ratio)?;
    let rows: Vec<StateMetricRow> = report
        .per_state
        .iter()
        .map(|s| StateMetricRow {
            state: s.state + 1,
            activity: state_name(s.state),
            mse: s.mse,
            abs: s.abs,
            count: s.count,
        })
        .collect();
    output.csv("trajectory_metrics.csv", &rows)?;
    output.finish(
        "predict",
        json!({ "data": data_config(data, Some(model_path)), "ratio": ratio }),
        json!({
            "mse": report.mse,
            "abs": report.abs,
            "baseline_mse": report.baseline_mse,
            "published_mse": PUBLISHED_TRAJECTORY_MSE,
            "published_abs": PUBLISHED_TRAJECTORY_ABS,
            "per_state": rows,
            "runtime_s": started.elapsed().as_secs_f64(),
        }),
    )
}

#[derive(Serialize)]
struct StepRow {
    series: String,
    time: usize,
    label: usize,
    predicted: usize,
    confidence: f64,
}

pub fn filter(data: &DataArgs, model_path: &Path, dmax: Option<usize>, out: &OutArgs) -> CliResult<()> {
    let started = Instant::now();
    let output = RunOutput::new(out.out.as_deref())?;
    let m = load_model(model_path, dmax)?;
    let test = load_test(data, &m)?;
    let report = experiment_recognition(&m, &test)?;
    let rows: Vec<StepRow> = report
        .trajectory
        .iter()
        .map(|r| StepRow {
            series: r.series.clone(),
            time: r.time,
            label: r.label + 1,
            predicted: r.predicted + 1,
            confidence: r.confidence,
        })
        .collect();
    output.csv("recognition_steps.csv", &rows)?;
    output.finish(
        "filter",
        json!({ "data": data_config(data, Some(model_path)), "dmax": m.duration_cap }),
        json!({
            "accuracy": report.accuracy,
            "published_accuracy": PUBLISHED_ACCURACY,
            "steps": report.steps,
            "confusion": report.confusion,
            "switches": report.switches,
            "missed_switches": report.missed_switches,
            "mean_switch_lag": report.mean_switch_lag,
            "runtime_s": started.elapsed().as_secs_f64(),
        }),
    )
}

fn monitor_config(monitor: &MonitorArgs) -> Value {
    json!({ "mc_samples": monitor.mc_samples, "seed": monitor.seed, "groups": monitor.groups })
}

fn join_features(features: &[usize]) -> String {
    features.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct SelectionRow {
    series: String,
    time: usize,
    chosen: usize,
    features: String,
    loss: f64,
    entropy_estimate: f64,
    std_error: f64,
    map_state: usize,
    label: usize,
}

pub fn monitor(
    data: &DataArgs,
    model_path: &Path,
    lambda: f64,
    dmax: Option<usize>,
    args: &MonitorArgs,
    out: &OutArgs,
) -> CliResult<()> {
    let started = Instant::now();
    let output = RunOutput::new(out.out.as_deref())?;
    let m = load_model(model_path, dmax)?;
    let test = load_test(data, &m)?;
    let filter = Filter::new(&m)?;
    let catalog = GroupCatalog::from_sizes(m.num_features(), &args.groups, lambda)?;
    let mut rows = Vec::new();
    let (mut steps, mut correct, mut usage, mut entropy) = (0usize, 0.0, 0.0, 0.0);
    for s in &test {
        let run = run_adaptive(&filter, s, &catalog, args.mc_samples, args.seed)?;
        let labels = s.labels.as_ref().expect("run_adaptive checked labels");
        for (t, r) in run.records.iter().enumerate() {
            rows.push(SelectionRow {
                series: s.subject_id.clone(),
                time: t,
                chosen: r.chosen,
                features: join_features(&r.features),
                loss: r.losses[r.chosen],
                entropy_estimate: r.entropy_estimates[r.chosen],
                std_error: r.std_errors[r.chosen],
                map_state: run.map_states[t] + 1,
                label: labels[t] + 1,
            });
        }
        let n = run.summary.steps as f64;
        steps += run.summary.steps;
        correct += run.summary.accuracy * n;
        usage += run.summary.avg_sensor_usage * n;
        entropy += run.summary.avg_entropy * n;
    }
    output.csv("selections.csv", &rows)?;
    let n = steps.max(1) as f64;
    output.finish(
        "monitor",
        json!({
            "data": data_config(data, Some(model_path)),
            "lambda": lambda,
            "dmax": m.duration_cap,
            "monitor": monitor_config(args),
            "catalog_size": catalog.len(),
        }),
        json!({
            "steps": steps,
            "accuracy": correct / n,
            "avg_sensor_usage": usage / n,
            "avg_entropy": entropy / n,
            "published_accuracy_at_lambda_0_1": PUBLISHED_MONITOR_ACCURACY,
            "published_usage_at_lambda_0_1": PUBLISHED_MONITOR_USAGE,
            "runtime_s": started.elapsed().as_secs_f64(),
        }),
    )
}

#[derive(Serialize)]
struct DecisionRow {
    lambda: f64,
    series: String,
    time: usize,
    chosen: usize,
    features: String,
}

pub fn sweep(
    data: &DataArgs,
    model_path: &Path,
    lambdas: &[f64],
    dmax: Option<usize>,
    args: &MonitorArgs,
    out: &OutArgs,
) -> CliResult<()> {
    let started = Instant::now();
    let output = RunOutput::new(out.out.as_deref())?;
    let m = load_model(model_path, dmax)?;
    let test = load_test(data, &m)?;
    let (rows, traces) = experiment_sweep(&m, &test, lambdas, &args.groups, args.mc_samples, args.seed)?;
    let catalog = GroupCatalog::from_sizes(m.num_features(), &args.groups, 0.0)?;
    let mut decisions = Vec::new();
    for (&lambda, trace) in lambdas.iter().zip(&traces) {
        for (s, choices) in test.iter().zip(trace) {
            for (t, &c) in choices.iter().enumerate() {
                decisions.push(DecisionRow {
                    lambda,
                    series: s.subject_id.clone(),
                    time: t,
                    chosen: c,
                    features: join_features(&catalog.groups()[c]),
                });
            }
        }
    }
    output.csv("sweep.csv", &rows)?;
    output.csv("decisions.csv", &decisions)?;
    output.finish(
        "sweep",
        json!({
            "data": data_config(data, Some(model_path)),
            "lambdas": lambdas,
            "dmax": m.duration_cap,
            "monitor": monitor_config(args),
        }),
        json!({
            "rows": rows,
            "published_accuracy_at_lambda_0_1": PUBLISHED_MONITOR_ACCURACY,
            "published_usage_at_lambda_0_1": PUBLISHED_MONITOR_USAGE,
            "runtime_s": started.elapsed().as_secs_f64(),
        }),
    )
}

pub struct SimulateOptions {
    pub seed: u64,
    pub states: usize,
    pub features: usize,
    pub length: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
    pub ambient_dim: Option<usize>,
    pub ambient_noise: f64,
    pub out: PathBuf,
}

pub fn simulate(o: SimulateOptions) -> CliResult<()> {
    let output = RunOutput::new(Some(&o.out))?;
    if o.states > HAR_ACTIVITIES.len() {
        return Err(CliError::new(
            "invalid_input",
            format!("the HAR layout holds at most {} states", HAR_ACTIVITIES.len()),
        ));
    }
    let spec = RandomModelSpec {
        num_states: o.states,
        num_features: o.features,
        ..RandomModelSpec::default()
    };
    let m = random_model(&spec, o.seed)?;
    let total = o.train_subjects + o.test_subjects;
    let mut series = (0..total)
        .map(|i| {
            generate_synthetic(
                &m,
                o.length,
                o.seed.wrapping_mul(1000).wrapping_add(i as u64 + 1),
                &(i + 1).to_string(),
            )
        })
        .collect::<switchgp_core::Result<Vec<_>>>()?;
    if let Some(d) = o.ambient_dim {
        series = lift_to_ambient(&series, d, o.ambient_noise, o.seed.wrapping_add(7))?;
    }
    let test = series.split_off(o.train_subjects);
    write_har_split(&o.out, Split::Train, &series)?;
    write_har_split(&o.out, Split::Test, &test)?;
    model_io::save(&m, &o.out.join("model.txt"))?;
    output.finish(
        "simulate",
        json!({
            "seed": o.seed,
            "states": o.states,
            "features": o.features,
            "length": o.length,
            "train_subjects": o.train_subjects,
            "test_subjects": o.test_subjects,
            "ambient_dim": o.ambient_dim,
            "ambient_noise": o.ambient_noise,
        }),
        json!({
            "duration_cap": m.duration_cap,
            "duration_means": m.durations.iter().map(|g| g.mean()).collect::<Vec<_>>(),
            "model_file": o.out.join("model.txt"),
        }),
    )
}

pub fn pca(data: &DataArgs, components: usize, whiten: bool, out: &OutArgs) -> CliResult<()> {
    let output = RunOutput::new(out.out.as_deref())?;
    let train = load_split(data, Split::Train)?;
    let test = load_split(data, Split::Test)?;
    let (proj, train_p, test_p) = preprocess(&train, &test, components, whiten)?;
    if let Some(dir) = &out.out {
        write_har_split(dir, Split::Train, &train_p)?;
        write_har_split(dir, Split::Test, &test_p)?;
    }
    let total: f64 = proj.explained_variance.iter().sum();
    output.finish(
        "pca",
        json!({ "data": data_config(data, None), "components": components, "whiten": whiten }),
        json!({
            "input_features": proj.input_dim(),
            "explained_variance": proj.explained_variance,
            "explained_variance_total": total,
        }),
    )
}

#[derive(Serialize)]
struct BenchRow {
    length: usize,
    features: usize,
    seconds: f64,
    cg_iterations: usize,
}

pub fn bench_fft(features: usize, lengths: &[usize], repeats: usize, seed: u64, out: &OutArgs) -> CliResult<()> {
    let output = RunOutput::new(out.out.as_deref())?;
    let kernel = MaternKernel::new(1.0, 16.0, Smoothness::ThreeHalves)?;
    let task = TaskCovariance::from_covariance(&DMatrix::from_fn(
        features,
        features,
        |i, j| {
            if i == j {
                1.0
            } else {
                0.3
            }
        },
    ))?;
    let noise = NoiseModel::new(vec![0.25; features])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &n in lengths {
        let resid = DMatrix::from_fn(n, features, |_, _| StandardNormal.sample(&mut rng));
        let mut best = f64::INFINITY;
        let mut iterations = 0;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let terms = fast_segment_terms(&kernel, &task, &noise, &resid)?;
            best = best.min(t.elapsed().as_secs_f64());
            iterations = terms.cg_iterations;
        }
        rows.push(BenchRow {
            length: n,
            features,
            seconds: best,
            cg_iterations: iterations,
        });
    }
    output.csv("bench_fft.csv", &rows)?;
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].seconds / w[0].seconds).collect();
    output.finish(
        "bench-fft",
        json!({ "features": features, "lengths": lengths, "repeats": repeats, "seed": seed }),
        json!({ "rows": rows, "successive_time_ratios": ratios }),
    )
}
