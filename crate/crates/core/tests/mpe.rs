use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lac_core::mpe::{estimate_theta, gram, km_distance, median_distance, Bandwidth, KernelConfig};
use lac_core::LacError;

fn rbf(a: f64, b: f64, sigma: f64) -> f64 {
    (-(a - b) * (a - b) / (2.0 * sigma * sigma)).exp()
}

/// Squared distance to the hull of three 1-D points by exhaustive search over
/// a 1e-3 weight grid on the simplex.
fn grid_distance(u: &[f64; 3], l: &[f64; 2], lambda: f64, sigma: f64) -> f64 {
    let mean = |xs: &[f64], ys: &[f64]| {
        let mut s = 0.0;
        for &x in xs {
            for &y in ys {
                s += rbf(x, y, sigma);
            }
        }
        s / (xs.len() * ys.len()) as f64
    };
    let c = 1.0 - lambda;
    let target_sq = (mean(u, u) - 2.0 * lambda * mean(u, l) + lambda * lambda * mean(l, l)) / (c * c);
    let a: Vec<f64> = u
        .iter()
        .map(|&ui| (mean(&[ui], u) - lambda * mean(&[ui], l)) / c)
        .collect();
    let steps = 1000;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=steps - i {
            let w = [
                i as f64 / steps as f64,
                j as f64 / steps as f64,
                (steps - i - j) as f64 / steps as f64,
            ];
            let mut quad = 0.0;
            for p in 0..3 {
                for q in 0..3 {
                    quad += w[p] * w[q] * rbf(u[p], u[q], sigma);
                }
            }
            let lin: f64 = (0..3).map(|p| w[p] * a[p]).sum();
            best = best.min(target_sq - 2.0 * lin + quad);
        }
    }
    best.max(0.0)
}

fn column(xs: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap()
}

#[test]
fn frank_wolfe_matches_exhaustive_search() {
    let cases: [([f64; 3], [f64; 2]); 3] = [
        ([0.0, 1.0, 4.0], [0.2, 0.9]),
        ([-1.0, 0.5, 2.0], [3.0, 3.5]),
        ([0.0, 0.1, 0.3], [0.05, 0.2]),
    ];
    for (u, l) in cases {
        let (ux, lx) = (column(&u), column(&l));
        let sigma = 1.0;
        let g_uu = gram(ux.view(), ux.view(), sigma).unwrap();
        let g_ul = gram(ux.view(), lx.view(), sigma).unwrap();
        let g_ll = gram(lx.view(), lx.view(), sigma).unwrap();
        for lambda in [0.0, 0.2, 0.5, 0.8] {
            let fw = km_distance(lambda, &g_uu, &g_ul, &g_ll, 5000).unwrap();
            let oracle = grid_distance(&u, &l, lambda, sigma);
            assert!((fw - oracle).abs() <= 1e-4, "{u:?} {l:?} lambda {lambda}: {fw} vs {oracle}");
        }
    }
}

fn sample(rng: &mut ChaCha8Rng, n: usize, d: usize, mean: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| mean + rng.sample::<f64, _>(StandardNormal))
}

fn mixture(rng: &mut ChaCha8Rng, n: usize, theta: f64, far: f64) -> Array2<f64> {
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let base = if rng.random::<f64>() < theta { 0.0 } else { far };
            base + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    column(&xs)
}

#[test]
fn distance_vanishes_at_zero_and_grows_past_theta() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lx = sample(&mut rng, 150, 1, 0.0);
    let ux = mixture(&mut rng, 200, 0.4, 8.0);
    let est = estimate_theta(lx.view(), ux.view(), &KernelConfig::default()).unwrap();
    assert!(est.curve[0].1 <= 1e-6, "distance at 0: {}", est.curve[0].1);
    for w in est.curve.windows(2).filter(|w| w[0].0 >= 0.5) {
        assert!(w[1].1 >= w[0].1 - 1e-6, "{w:?}");
    }
}

#[test]
fn gram_is_a_valid_kernel_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = sample(&mut rng, 30, 3, 0.0);
    let g = gram(x.view(), x.view(), 1.3).unwrap();
    let n = g.nrows();
    for i in 0..n {
        assert!((g[[i, i]] - 1.0).abs() <= 1e-15);
        for j in 0..n {
            assert_eq!(g[[i, j]], g[[j, i]]);
        }
    }
    // Cholesky with a small jitter succeeds only on a PSD matrix
    let mut c = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = g[[i, j]] + if i == j { 1e-10 } else { 0.0 };
            for p in 0..j {
                s -= c[[i, p]] * c[[j, p]];
            }
            if i == j {
                assert!(s > 0.0, "pivot {i} = {s}");
                c[[i, i]] = s.sqrt();
            } else {
                c[[i, j]] = s / c[[j, j]];
            }
        }
    }
    let sigma = 0.7;
    let pair = array![[0.0, 0.0], [sigma, sigma]];
    let g = gram(pair.view(), pair.view(), sigma).unwrap();
    assert!((g[[0, 1]] - (-1.0f64).exp()).abs() <= 1e-15);
}

#[test]
fn median_distance_example() {
    let a = column(&[0.0, 1.0]);
    let b = column(&[3.0]);
    // pairwise distances 1, 2, 3
    assert_eq!(median_distance(a.view(), b.view()).unwrap(), 2.0);
}

#[test]
fn identical_samples_look_fully_known() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = sample(&mut rng, 100, 2, 0.0);
    let est = estimate_theta(x.view(), x.view(), &KernelConfig::default()).unwrap();
    assert!(est.theta >= 0.9, "{}", est.theta);
}

#[test]
fn recovers_known_proportions() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lx = sample(&mut rng, 200, 1, 0.0);
        let none = sample(&mut rng, 200, 1, 10.0);
        let est = estimate_theta(lx.view(), none.view(), &KernelConfig::default()).unwrap();
        assert!(est.theta <= 0.1, "seed {seed}: theta 0 gave {}", est.theta);
        let half = mixture(&mut rng, 300, 0.5, 10.0);
        let est = estimate_theta(lx.view(), half.view(), &KernelConfig::default()).unwrap();
        assert!((0.4..=0.6).contains(&est.theta), "seed {seed}: theta 0.5 gave {}", est.theta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimate_ignores_row_order(seed in 0u64..500, theta in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lx = sample(&mut rng, 40, 2, 0.0);
        let ux = Array2::from_shape_fn((60, 2), |(i, _)| {
            let shift = if (i as f64) < 60.0 * theta { 0.0 } else { 4.0 };
            shift + rng.sample::<f64, _>(StandardNormal)
        });
        let config = KernelConfig { frank_wolfe_iters: 200, ..KernelConfig::default() };
        let a = estimate_theta(lx.view(), ux.view(), &config).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.theta));
        let rev_l = lx.slice(ndarray::s![..;-1, ..]).to_owned();
        let rev_u = ux.slice(ndarray::s![..;-1, ..]).to_owned();
        let b = estimate_theta(rev_l.view(), rev_u.view(), &config).unwrap();
        prop_assert_eq!(a.theta, b.theta);
        prop_assert!((a.bandwidth - b.bandwidth).abs() <= 1e-12);
        for (p, q) in a.curve.iter().zip(&b.curve) {
            prop_assert!((p.1 - q.1).abs() <= 1e-9);
        }
    }
}

#[test]
fn degenerate_and_invalid_inputs() {
    let dup = Array2::from_elem((6, 2), 1.5);
    assert!(matches!(
        estimate_theta(dup.view(), dup.view(), &KernelConfig::default()),
        Err(LacError::DegenerateKernel(_))
    ));
    let x = column(&[0.0, 1.0, 2.0]);
    let empty = Array2::<f64>::zeros((0, 1));
    assert!(estimate_theta(empty.view(), x.view(), &KernelConfig::default()).is_err());
    let bad_grid = KernelConfig { lambda_grid: vec![0.0, 0.5, 0.4], ..KernelConfig::default() };
    assert!(estimate_theta(x.view(), x.view(), &bad_grid).is_err());
    let g = gram(x.view(), x.view(), 1.0).unwrap();
    assert!(km_distance(1.0, &g, &g, &g, 10).is_err());
    assert!(gram(x.view(), x.view(), 0.0).is_err());
}

#[test]
fn bandwidth_strings() {
    assert_eq!("0.8".parse::<Bandwidth>().unwrap(), Bandwidth::Fixed { sigma: 0.8 });
    assert_eq!("median".parse::<Bandwidth>().unwrap(), Bandwidth::Median { scale: 1.0 });
    assert_eq!("median:1.5".parse::<Bandwidth>().unwrap(), Bandwidth::Median { scale: 1.5 });
    for bad in ["-1", "median:0", "median1", "wide", "nan"] {
        assert!(bad.parse::<Bandwidth>().is_err(), "{bad}");
    }
    let b = Bandwidth::Median { scale: 2.0 };
    assert_eq!(b.to_string().parse::<Bandwidth>().unwrap(), b);
}
