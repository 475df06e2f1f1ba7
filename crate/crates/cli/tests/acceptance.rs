//! Acceptance suite: one PASS/FAIL/BLOCKED line per criterion.
//!
//! Criterion 7 needs the UCI HAR dataset; point `SWITCHGP_HAR_DIR` at its root to run it.
//! `SWITCHGP_HAR_SUBJECTS` (default 6) and `SWITCHGP_HAR_LAMBDAS` (default the full grid)
//! bound its runtime.

#[path = "../../core/tests/support/brute_force.rs"]
mod brute_force;
mod common;
#[path = "../../core/tests/support/quadrature.rs"]
mod quadrature;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use common::{p, simulate_and_train, switchgp_ok};
use switchgp_core::circulant::{fast_segment_loglik, CirculantSpec};
use switchgp_core::dataset::generate_synthetic;
use switchgp_core::filter::Filter;
use switchgp_core::gp_predict::exact_segment_loglik;
use switchgp_core::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use switchgp_core::model::{
    fit, fit_duration_gamma, fit_transitions, segment_series, EmissionObjective, FitConfig, GammaDuration,
    ParameterSharing, SegmentedSeries, StateEmission, SwitchingGPModel, TransitionMatrix,
};
use switchgp_core::monitor::expected_entropy_mc;

enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }
}

fn within_budget(ok: bool, elapsed: Duration, budget_s: f64, detail: String) -> Outcome {
    let secs = elapsed.as_secs_f64();
    Outcome::check(
        ok && secs < budget_s,
        format!("{detail}; {secs:.2}s (budget {budget_s}s)"),
    )
}

fn matern32(variance: f64, lengthscale: f64, lag: f64) -> f64 {
    let r = 3f64.sqrt() * lag.abs() / lengthscale;
    variance * (1.0 + r) * (-r).exp()
}

/// Gaussian log-density of the feature-major vectorized residuals under a dense ICM covariance.
fn dense_loglik(variance: f64, lengthscale: f64, k_task: &DMatrix<f64>, noise: &[f64], r: &DMatrix<f64>) -> f64 {
    let (n, p) = r.shape();
    let cov = DMatrix::from_fn(n * p, n * p, |a, b| {
        let (qa, ta) = (a / n, a % n);
        let (qb, tb) = (b / n, b % n);
        let mut v = k_task[(qa, qb)] * matern32(variance, lengthscale, ta as f64 - tb as f64);
        if a == b {
            v += noise[qa];
        }
        v
    });
    let chol = cov.cholesky().expect("dense covariance is positive definite");
    let y = DVector::from_fn(n * p, |a, _| r[(a % n, a / n)]);
    let z = chol.l().solve_lower_triangular(&y).unwrap();
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (z.norm_squared() + logdet + (n * p) as f64 * (2.0 * PI).ln())
}

fn random_lower(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |r, c| {
        if r == c {
            rng.random_range(0.6..1.3)
        } else if r > c {
            rng.random_range(-0.5..0.5)
        } else {
            0.0
        }
    })
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_fft: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    for p in 1..=3 {
        for n in [16usize, 32, 64] {
            for lengthscale in [n as f64 / 8.0, 2.0] {
                let variance = rng.random_range(0.5..2.0);
                let l = random_lower(&mut rng, p);
                let k_task = &l * l.transpose();
                let noise: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..0.5)).collect();
                // Residuals drawn from the model itself.
                let cov = DMatrix::from_fn(n * p, n * p, |a, b| {
                    let v = k_task[(a / n, b / n)] * matern32(variance, lengthscale, (a % n) as f64 - (b % n) as f64);
                    if a == b {
                        v + noise[a / n]
                    } else {
                        v
                    }
                });
                let chol = cov.cholesky().unwrap();
                let z = DVector::from_fn(n * p, |_, _| StandardNormal.sample(&mut rng));
                let y = chol.l() * z;
                let r = DMatrix::from_fn(n, p, |t, q| y[q * n + t]);

                let kernel = MaternKernel::new(variance, lengthscale, Smoothness::ThreeHalves).unwrap();
                let task = TaskCovariance::new(l.clone()).unwrap();
                let nm = NoiseModel::new(noise.clone()).unwrap();
                let oracle = dense_loglik(variance, lengthscale, &k_task, &noise, &r);
                let fast = fast_segment_loglik(&kernel, &task, &nm, &r).unwrap();
                let exact = exact_segment_loglik(&kernel, &task, &nm, &r).unwrap();
                worst_fft = worst_fft.max((fast - oracle).abs() / oracle.abs());
                worst_exact = worst_exact.max((exact - oracle).abs() / oracle.abs());
            }
        }
    }

    let mut matvec_err: f64 = 0.0;
    let mut logdet_err: f64 = 0.0;
    let mut solve_err: f64 = 0.0;
    for n in (1usize..=24).chain([31, 64, 100]) {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dense = DMatrix::from_fn(n, n, |i, j| row[(j + n - i) % n]);
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let got = CirculantSpec::from_first_row(row)
            .unwrap()
            .matvec(v.as_slice())
            .unwrap();
        let want = &dense * &v;
        for (g, w) in got.iter().zip(want.iter()) {
            matvec_err = matvec_err.max((g - w).abs() / w.abs().max(1.0));
        }

        // Symmetric positive definite circulant from a positive symmetric spectrum.
        let mut spectrum: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        for j in 1..n {
            spectrum[n - j] = spectrum[j.min(n - j)];
        }
        let row: Vec<f64> = (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| spectrum[j] * (2.0 * PI * (j * k) as f64 / n as f64).cos())
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        let dense = DMatrix::from_fn(n, n, |i, j| row[(j + n - i) % n]);
        let chol = dense.clone().cholesky().unwrap();
        let want_logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let want_x = chol.solve(&v);
        let (logdet, x) = CirculantSpec::from_first_row(row)
            .unwrap()
            .logdet_solve(v.as_slice())
            .unwrap();
        logdet_err = logdet_err.max((logdet - want_logdet).abs() / want_logdet.abs().max(1.0));
        for (g, w) in x.iter().zip(want_x.iter()) {
            solve_err = solve_err.max((g - w).abs() / w.abs().max(1.0));
        }
    }
    let ok = worst_fft < 0.02 && worst_exact < 1e-8 && matvec_err < 1e-9 && logdet_err < 1e-8 && solve_err < 1e-8;
    within_budget(
        ok,
        started.elapsed(),
        5.0,
        format!(
            "fft vs dense max rel {worst_fft:.2e} (< 2e-2), exact vs dense {worst_exact:.1e}, \
             matvec {matvec_err:.1e}, logdet {logdet_err:.1e}, solve {solve_err:.1e}"
        ),
    )
}

fn best_fast_time(p: usize, n: usize, repeats: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let kernel = MaternKernel::new(1.0, 16.0, Smoothness::ThreeHalves).unwrap();
    let task = TaskCovariance::from_covariance(&DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.3 })).unwrap();
    let noise = NoiseModel::new(vec![0.25; p]).unwrap();
    let r = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    (0..repeats)
        .map(|_| {
            let t = Instant::now();
            fast_segment_loglik(&kernel, &task, &noise, &r).unwrap();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_2() -> Outcome {
    let t2048 = best_fast_time(10, 2048, 3);
    let t4096 = best_fast_time(10, 4096, 3);
    let ratio = t4096 / t2048;
    Outcome::check(
        t4096 < 10.0 && ratio < 2.5,
        format!("P=10: T=2048 {t2048:.4}s, T=4096 {t4096:.4}s (< 10s), ratio {ratio:.2} (< 2.5)"),
    )
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let (k, beta) = (3.5, 12.0);
    let dist = Gamma::new(k, beta).unwrap();
    let samples: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
    let g = fit_duration_gamma(&samples).unwrap();
    let k_err = (g.shape() - k).abs() / k;
    let beta_err = (g.scale() - beta).abs() / beta;

    let a = 4;
    let mut probs = DMatrix::from_fn(a, a, |i, j| if i == j { 0.0 } else { rng.random_range(0.1..1.0) });
    for i in 0..a {
        let s: f64 = probs.row(i).iter().sum();
        probs.row_mut(i).scale_mut(1.0 / s);
    }
    let mut labels = vec![0usize];
    while labels.len() < 10_001 {
        let from = *labels.last().unwrap();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut to = a - 1;
        for j in 0..a {
            acc += probs[(from, j)];
            if u < acc {
                to = j;
                break;
            }
        }
        labels.push(to);
    }
    let segments = segment_series(&labels);
    let (fitted, _) = fit_transitions(a, [segments.as_slice()], None).unwrap();
    let trans_err = (0..a)
        .flat_map(|i| (0..a).map(move |j| (i, j)))
        .map(|(i, j)| (fitted.prob(i, j) - probs[(i, j)]).abs())
        .fold(0.0, f64::max);

    // Emission recovery: three states sharing a task covariance, at least 50 segments each,
    // with activity-scale segment durations (mean 40 steps).
    let p = 2;
    let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.8]);
    let truth = SwitchingGPModel::new(
        vec![GammaDuration::new(8.0, 5.0).unwrap(); 3],
        TransitionMatrix::uniform(3),
        (0..3)
            .map(|j| StateEmission {
                mean: DVector::from_fn(p, |q, _| 2.0 * j as f64 - q as f64),
                temporal: MaternKernel::new(1.0 + 0.5 * j as f64, 2.0 + 2.0 * j as f64, Smoothness::ThreeHalves)
                    .unwrap(),
                task: TaskCovariance::new(l.clone()).unwrap(),
            })
            .collect(),
        NoiseModel::new(vec![0.2; p]).unwrap(),
        200,
    )
    .unwrap();
    let mut data: Vec<SegmentedSeries> = Vec::new();
    let mut counts = [0usize; 3];
    while counts.iter().any(|&c| c < 50) {
        let s = generate_synthetic(&truth, 1000, 300 + data.len() as u64, &format!("s{}", data.len())).unwrap();
        for seg in s.segments() {
            counts[seg.state] += 1;
        }
        data.push(s);
    }
    let model = fit(3, &data, &FitConfig::default()).unwrap().model;
    let mut kernel_err: f64 = 0.0;
    for j in 0..3 {
        let (got, want) = (&model.emissions[j].temporal, &truth.emissions[j].temporal);
        kernel_err = kernel_err
            .max((got.variance() - want.variance()).abs() / want.variance())
            .max((got.lengthscale() - want.lengthscale()).abs() / want.lengthscale());
    }
    let ok = k_err < 0.02 && beta_err < 0.02 && trans_err < 0.02 && kernel_err < 0.15;
    within_budget(
        ok,
        started.elapsed(),
        120.0,
        format!(
            "gamma k rel {k_err:.4}, beta rel {beta_err:.4} (< 0.02); transitions max abs {trans_err:.4} (< 0.02); \
             kernel max rel {kernel_err:.3} (< 0.15) with segments per state {counts:?}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let (mut post, mut evidence) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (a, b) = brute_force::check_instance(seed);
        post = post.max(a);
        evidence = evidence.max(b);
    }
    within_budget(
        post < 1e-8 && evidence < 1e-8,
        started.elapsed(),
        60.0,
        format!(
            "100 instances: max posterior deviation {post:.1e}, max relative log-evidence deviation {evidence:.1e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, p) = (3, 3);
    let model = SwitchingGPModel::new(
        vec![GammaDuration::new(3.0, 2.0).unwrap(); a],
        TransitionMatrix::uniform(a),
        (0..a)
            .map(|_| StateEmission {
                mean: DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)),
                temporal: MaternKernel::new(
                    rng.random_range(0.5..2.0),
                    rng.random_range(1.0..5.0),
                    Smoothness::ThreeHalves,
                )
                .unwrap(),
                task: TaskCovariance::new(random_lower(&mut rng, p)).unwrap(),
            })
            .collect(),
        NoiseModel::new(vec![0.3; p]).unwrap(),
        30,
    )
    .unwrap();
    let data: Vec<_> = (0..2)
        .map(|i| generate_synthetic(&model, 60, 50 + i, &format!("g{i}")).unwrap())
        .collect();
    let objective = EmissionObjective::new(&model, &data, ParameterSharing::default(), false).unwrap();
    let x0 = objective.initial_point();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let (_, g) = objective.value_and_gradient(&x).unwrap();
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (objective.value(&xp).unwrap() - objective.value(&xm).unwrap()) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / fd.abs().max(1e-2));
        }
    }
    Outcome::check(
        worst < 1e-4,
        format!(
            "{} parameters at 5 random points: max relative error {worst:.2e} (< 1e-4, denominator floored at 1e-2)",
            x0.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let model = quadrature::scalar_model(1.5);
    let filter = Filter::new(&model).unwrap();
    let mut state = filter.init(&[0.4], &[true]).unwrap();
    state = filter.step(&state, &[0.9], &[true]).unwrap();
    let oracle = quadrature::quadrature_expected_entropy(&filter.step_predictive(&state));
    let mut worst_z: f64 = 0.0;
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let (est, se) = expected_entropy_mc(&filter, Some(&state), &[0], 1000, seed).unwrap();
        worst_z = worst_z.max((est - oracle).abs() / se);
        let (_, se_small) = expected_entropy_mc(&filter, Some(&state), &[0], 250, seed + 100).unwrap();
        let (_, se_large) = expected_entropy_mc(&filter, Some(&state), &[0], 1000, seed + 200).unwrap();
        ratios.push(se_large / se_small);
    }
    let ratio_ok = ratios.iter().all(|r| (0.4..=0.6).contains(r));
    Outcome::check(
        worst_z < 3.0 && ratio_ok,
        format!(
            "oracle {oracle:.5}; max |est - oracle| / se {worst_z:.2} (< 3) at N=1000; se(4N)/se(N) {:?}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn strip_last_column(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_8() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let (data, model) = simulate_and_train(root.path(), 8, 100, 3, 1);
    let run = |name: &str| {
        let out = root.path().join(name);
        switchgp_ok(&[
            "sweep",
            "--data-dir",
            &data,
            "--model",
            &model,
            "--lambda",
            "0,0.3,1",
            "--mc-samples",
            "20",
            "--seed",
            "11",
            "--out",
            &p(&out),
        ]);
        let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
        let decisions = std::fs::read(out.join("decisions.csv")).unwrap();
        (sweep, decisions)
    };
    let (s1, d1) = run("a");
    let (s2, d2) = run("b");
    let header_ok = s1.lines().next() == Some("lambda,accuracy,avg_sensor_usage,avg_entropy,runtime_s");
    let same_sweep = strip_last_column(&s1) == strip_last_column(&s2);
    Outcome::check(
        header_ok && same_sweep && d1 == d2,
        format!(
            "decisions.csv identical: {} ({} bytes); sweep.csv identical without runtime_s: {same_sweep}",
            d1 == d2,
            d1.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let Ok(dir) = std::env::var("SWITCHGP_HAR_DIR") else {
        return Outcome {
            status: Status::Blocked,
            detail: "UCI HAR dataset not available in this environment; set SWITCHGP_HAR_DIR to its root".into(),
        };
    };
    let subjects = std::env::var("SWITCHGP_HAR_SUBJECTS").unwrap_or_else(|_| "6".into());
    let lambdas =
        std::env::var("SWITCHGP_HAR_LAMBDAS").unwrap_or_else(|_| "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1".into());
    let started = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let model = p(&root.path().join("model.txt"));
    let data = ["--data-dir", dir.as_str(), "--subjects", subjects.as_str()];
    let with = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&data);
        args.extend_from_slice(&["--model", &model]);
        args.extend_from_slice(extra);
        switchgp_ok(&args)
    };
    with("train", &[]);
    let predict = with("predict", &[]);
    let filter = with("filter", &[]);
    let sweep = with("sweep", &["--lambda", &lambdas]);
    let mse = predict["summary"]["mse"].as_f64().unwrap();
    let abs = predict["summary"]["abs"].as_f64().unwrap();
    let accuracy = filter["summary"]["accuracy"].as_f64().unwrap();
    let rows = sweep["summary"]["rows"].as_array().unwrap();
    let usage: Vec<f64> = rows.iter().map(|r| r["avg_sensor_usage"].as_f64().unwrap()).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r["accuracy"].as_f64().unwrap()).collect();
    let usage_ok = usage.windows(2).all(|w| w[1] <= w[0] + 0.05);
    let tradeoff_ok = acc[0] >= acc[acc.len() - 1] - 0.02;
    let at_01 = rows
        .iter()
        .find(|r| (r["lambda"].as_f64().unwrap() - 0.1).abs() < 1e-12)
        .map(|r| {
            format!(
                "{:.4}/{:.4}",
                r["accuracy"].as_f64().unwrap(),
                r["avg_sensor_usage"].as_f64().unwrap()
            )
        })
        .unwrap_or_else(|| "n/a".into());
    within_budget(
        mse <= 0.55 && accuracy >= 0.60 && usage_ok && tradeoff_ok,
        started.elapsed(),
        1800.0,
        format!(
            "{subjects} subjects: MSE {mse:.4} (published 0.3852, gate <= 0.55), ABS {abs:.4} (published 0.4235); \
             accuracy {accuracy:.4} (published 0.7421, gate >= 0.60); lambda=0.1 accuracy/usage {at_01} \
             (published 0.7926/0.7342); usage {usage:?} non-increasing within 5pp: {usage_ok}; \
             acc(0) >= acc(1) - 2pp: {tradeoff_ok}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("FFT vs dense oracle", criterion_1),
        ("FFT complexity", criterion_2),
        ("parameter recovery", criterion_3),
        ("filter vs enumeration", criterion_4),
        ("gradient check", criterion_5),
        ("MC estimator", criterion_6),
        ("UCI HAR reproduction", criterion_7),
        ("sweep determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome {
                status: Status::Fail,
                detail: format!("panicked: {msg}"),
            }
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => "BLOCKED",
        };
        println!("{tag} criterion {} ({name}): {}", i + 1, outcome.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
