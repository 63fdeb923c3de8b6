//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its pass/fail line; exits nonzero if any fails.

use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use lac_core::data_model::{make_synthetic_gaussians, LacScenario, ScenarioConfig, SyntheticSpec};
use lac_core::evaluation::{auc, macro_f1};
use lac_core::loss::LossSpec;
use lac_core::methods::{run_method, Method, MethodSettings};
use lac_core::models_optim::{objective_and_grad, Model, ModelSpec};
use lac_core::mpe::{estimate_theta, KernelConfig};
use lac_core::risk::{
    eulac_ovr_risk, exact_risk_oracle, lac_risk, objective, DiscreteDistributionSpec, LossBatch,
    RiskConfig, RiskVariant,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_scores(rng: &mut ChaCha8Rng, outputs: usize, scale: f64) -> Vec<f64> {
    (0..outputs)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unbiasedness() -> Outcome {
    let dist = DiscreteDistributionSpec {
        known: vec![(0, 0, 0.5), (1, 1, 0.3), (2, 0, 0.2)],
        augmented: vec![(3, 0.6), (4, 0.25), (5, 0.15)],
        theta: 0.4,
    };
    let loss = LossSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scores: Vec<Vec<f64>> = (0..6).map(|_| random_scores(&mut rng, 3, 1.5)).collect();
    let exact = exact_risk_oracle(&dist, &scores, &loss).unwrap();
    let sampler = dist.sampler().unwrap();

    let reps = 10_000;
    let (n, m) = (50, 50);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..reps {
        let labeled: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let (p, y) = sampler.known(&mut rng);
                (loss.value(&scores[p], y).unwrap(), loss.value(&scores[p], 2).unwrap())
            })
            .collect();
        let unlabeled: Vec<f64> = (0..m)
            .map(|_| loss.value(&scores[sampler.test_point(&mut rng)], 2).unwrap())
            .collect();
        let r = lac_risk(&labeled, &unlabeled, dist.theta).unwrap();
        sum += r;
        sum_sq += r * r;
    }
    let mean = sum / reps as f64;
    let var = (sum_sq / reps as f64 - mean * mean) * reps as f64 / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    let z = (mean - exact) / se;
    outcome(
        z.abs() <= 4.0,
        format!("mean {mean:.6} exact {exact:.6} se {se:.2e} z {z:.2}"),
    )
}

fn ovr_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let loss = LossSpec::Ovr;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=30);
        let theta = rng.random::<f64>();
        let lab: Vec<Vec<f64>> = (0..n).map(|_| random_scores(&mut rng, k + 1, 2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let unl: Vec<Vec<f64>> = (0..m).map(|_| random_scores(&mut rng, k + 1, 2.0)).collect();
        let pairs: Vec<(f64, f64)> = lab
            .iter()
            .zip(&labels)
            .map(|(f, &y)| (loss.value(f, y).unwrap(), loss.value(f, k).unwrap()))
            .collect();
        let unl_ac: Vec<f64> = unl.iter().map(|f| loss.value(f, k).unwrap()).collect();
        let generic = lac_risk(&pairs, &unl_ac, theta).unwrap();
        let direct = eulac_ovr_risk(&lab, &labels, &unl, theta, &loss).unwrap();
        worst = worst.max((generic - direct).abs());
    }
    outcome(worst <= 1e-10, format!("max |diff| {worst:.2e} over 100 instances"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn penalty_special_cases() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    for i in 0..100 {
        let n = rng.random_range(1..=25);
        let m = rng.random_range(1..=25);
        // half the instances get inflated labeled ac losses so pac < 0
        let inflate = if i % 2 == 0 { 3.0 } else { 1.0 };
        let batch = LossBatch {
            labeled_true: (0..n).map(|_| rng.random::<f64>() * 2.0).collect(),
            labeled_ac: (0..n).map(|_| rng.random::<f64>() * 2.0 * inflate).collect(),
            labeled_class: vec![0; n],
            unlabeled_ac: (0..m).map(|_| rng.random::<f64>() * 2.0).collect(),
        };
        let theta = rng.random::<f64>();
        for (lambda, variant) in [(1.0, RiskVariant::ReluCorrected), (2.0, RiskVariant::AbsCorrected)] {
            let pen = objective(
                &batch,
                &RiskConfig::new(RiskVariant::UrePenalty, theta).with_penalty(lambda, 1.0),
            )
            .unwrap();
            let corr = objective(&batch, &RiskConfig::new(variant, theta)).unwrap();
            if pen.pac_risk < 0.0 {
                negative += 1;
            }
            worst = worst
                .max((pen.value - corr.value).abs())
                .max(max_abs_diff(&pen.labeled_true_weight, &corr.labeled_true_weight))
                .max(max_abs_diff(&pen.labeled_ac_weight, &corr.labeled_ac_weight))
                .max(max_abs_diff(&pen.unlabeled_ac_weight, &corr.unlabeled_ac_weight));
        }
    }
    outcome(
        worst <= 1e-12 && negative > 0,
        format!("max |diff| {worst:.2e}; {negative}/200 comparisons with pac < 0"),
    )
}

fn gradient_instance(
    spec: ModelSpec,
    loss: LossSpec,
    variant: RiskVariant,
    seed: u64,
) -> (f64, f64) {
    let (k, d, n, m) = (3, 4, 10, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let penalized = matches!(variant, RiskVariant::UrePenalty);
    let risk = match variant {
        RiskVariant::UrePenalty => RiskConfig::new(variant, 1.0).with_penalty(1.3, 2.0),
        _ => RiskConfig::new(variant, 0.6).with_penalty(0.0, 1.0),
    };
    loop {
        let model = Model::init(spec, d, k + 1, &mut rng);
        let lx = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        let ux = Array2::from_shape_fn((m, d), |_| rng.sample::<f64, _>(StandardNormal) + 0.5);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (obj, grad) =
            objective_and_grad(&model, &loss, &risk, lx.view(), &labels, ux.view()).unwrap();
        if penalized && obj.pac_risk >= -1e-3 {
            continue;
        }
        let mut probe = model.clone();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..grad.len() {
            let base = probe.params()[j];
            probe.params_mut()[j] = base + h;
            let up = objective_and_grad(&probe, &loss, &risk, lx.view(), &labels, ux.view())
                .unwrap()
                .0
                .value;
            probe.params_mut()[j] = base - h;
            let down = objective_and_grad(&probe, &loss, &risk, lx.view(), &labels, ux.view())
                .unwrap()
                .0
                .value;
            probe.params_mut()[j] = base;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        return (worst, obj.pac_risk);
    }
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut seed = 100;
    for spec in [ModelSpec::Linear, ModelSpec::Mlp { hidden: 8 }] {
        for loss in [LossSpec::default(), LossSpec::Ovr] {
            for variant in [RiskVariant::Ure, RiskVariant::UrePenalty] {
                for _ in 0..3 {
                    let penalized = matches!(variant, RiskVariant::UrePenalty);
                    let (rel, pac) = gradient_instance(spec, loss, variant.clone(), seed);
                    if penalized {
                        assert!(pac < 0.0);
                    }
                    worst = worst.max(rel);
                    cases += 1;
                    seed += 1;
                }
            }
        }
    }
    outcome(worst <= 1e-5, format!("max relative error {worst:.2e} over {cases} instances"))
}

fn circle_scenario(classes: usize, known: usize, m: usize, alpha: f64, seed: u64) -> LacScenario {
    let mut config = ScenarioConfig::new((1..=known).collect(), (500, m, 1000), seed);
    config.synthetic = Some(SyntheticSpec::circle(classes, 6.0, 2, 1.0));
    config.prior_shift_alpha = alpha;
    make_synthetic_gaussians(&config).unwrap()
}

/// Runs `f` for seeds `0..10` on scoped threads, in seed order.
fn per_seed<T: Send>(f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..10).map(|seed| s.spawn(move || f(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn synthetic_end_to_end() -> Outcome {
    let settings = MethodSettings::default();
    let pairs = per_seed(|seed| {
        let s = circle_scenario(5, 3, 1000, 0.0, seed);
        let theta = settings.resolve_theta(&s).unwrap();
        let nrpr = run_method(&s, Method::Nrpr, &settings, Some(theta), seed).unwrap();
        let ure = run_method(&s, Method::Ure, &settings, Some(theta), seed).unwrap();
        (nrpr.report.accuracy, ure.report.accuracy)
    });
    let nrpr = mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let ure = mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    outcome(
        nrpr >= 0.90 && nrpr >= ure,
        format!("nrpr mean accuracy {nrpr:.4}, lambda=0 ure {ure:.4}"),
    )
}

fn unlabeled_size_trend() -> Outcome {
    let settings = MethodSettings::default();
    let median_at = |m| {
        let accs = per_seed(|seed| {
            let s = circle_scenario(5, 3, m, 0.0, seed);
            run_method(&s, Method::Nrpr, &settings, None, seed)
                .unwrap()
                .report
                .accuracy
        });
        median(&accs)
    };
    let small = median_at(100);
    let large = median_at(1200);
    outcome(
        large > small,
        format!("median accuracy m=100 {small:.4}, m=1200 {large:.4}"),
    )
}

fn prior_shift_gain() -> Outcome {
    let settings = MethodSettings {
        loss: LossSpec::Gce { q: 0.3 },
        ..MethodSettings::default()
    };
    let pairs = per_seed(|seed| {
        let s = circle_scenario(10, 5, 1000, 0.9, seed);
        let theta = settings.resolve_theta(&s).unwrap();
        let nrpr = run_method(&s, Method::Nrpr, &settings, Some(theta), seed).unwrap();
        let shift = run_method(&s, Method::Shift, &settings, Some(theta), seed).unwrap();
        (nrpr.report.accuracy, shift.report.accuracy)
    });
    let nrpr = mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let shift = mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    outcome(
        shift - nrpr >= 0.02,
        format!("alpha=0.9: shift {shift:.4}, nrpr {nrpr:.4}, gain {:.4}", shift - nrpr),
    )
}

fn theta_estimation() -> Outcome {
    let known = Normal::new(0.0, 1.0).unwrap();
    let other = Normal::new(10.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut estimates = Vec::new();
    for theta in [0.2, 0.5, 0.8] {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let labeled = Array2::from_shape_fn((500, 1), |_| known.sample(&mut rng));
            let unlabeled = Array2::from_shape_fn((500, 1), |_| {
                if rng.random::<f64>() < theta {
                    known.sample(&mut rng)
                } else {
                    other.sample(&mut rng)
                }
            });
            let est = estimate_theta(labeled.view(), unlabeled.view(), &KernelConfig::default())
                .unwrap()
                .theta;
            worst = worst.max((est - theta).abs());
            estimates.push(format!("{est:.2}"));
        }
    }
    outcome(
        worst <= 0.1,
        format!("max |error| {worst:.3}; estimates {}", estimates.join(" ")),
    )
}

fn metric_correctness() -> Outcome {
    let f1_ok = macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap() == 1.0
        && macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap() == 0.5;
    let flags = [true, true, false, false];
    let auc_ok = auc(&[0.9, 0.8, 0.1, 0.2], &flags).unwrap() == 1.0
        && auc(&[0.9, 0.3, 0.8, 0.2], &flags).unwrap() == 0.75
        && auc(&[0.4; 4], &flags).unwrap() == 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut inside = 0;
    for _ in 0..100 {
        let mut positive: Vec<bool> = (0..200).map(|_| rng.random::<bool>()).collect();
        positive[0] = true;
        positive[1] = false;
        let scores: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let a = auc(&scores, &positive).unwrap();
        if (0.4..=0.6).contains(&a) {
            inside += 1;
        }
    }
    outcome(
        f1_ok && auc_ok && inside >= 95,
        format!("fixed examples {}; null AUC in [0.4,0.6] in {inside}/100 trials", if f1_ok && auc_ok { "exact" } else { "MISMATCH" }),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let checks: [(u32, &str, Check, Option<Duration>); 9] = [
        (1, "unbiasedness", unbiasedness, Some(Duration::from_secs(30))),
        (2, "ovr equivalence", ovr_equivalence, Some(Duration::from_secs(5))),
        (3, "penalty special cases", penalty_special_cases, None),
        (4, "gradient correctness", gradient_correctness, None),
        (5, "synthetic end-to-end", synthetic_end_to_end, Some(Duration::from_secs(300))),
        (6, "unlabeled-size trend", unlabeled_size_trend, None),
        (7, "prior-shift gain", prior_shift_gain, None),
        (8, "theta estimation", theta_estimation, None),
        (9, "metric correctness", metric_correctness, None),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in checks {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                result.pass = false;
                result.detail.push_str(&format!("; over time limit {limit:?}"));
            }
        }
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {id} {name}: {} ({}; {:.1}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("criterion 10 large-benchmark tables: NOT RUN (declared out of scope; covered by 1-9)");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
