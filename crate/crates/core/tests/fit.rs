//! Mark-model fitting on synthetic data, plus statistical properties.

use std::time::Instant;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sagrade::corpus::{Grade, StudentAnswer};
use sagrade::grade::{fit_points, mm_evaluate, pearson, tm_baseline, MarkModel};

const TRUE: (f64, f64, f64) = (5.0, -0.005, 3.4);
const DISTANCES: [f64; 5] = [0.0, 2.0, 4.0, 5.0, 6.0];

fn truth(h: f64) -> f64 {
    // Written out rather than through the model type.
    if h == 0.0 {
        TRUE.0
    } else {
        TRUE.0 + TRUE.1 * h.powf(TRUE.2)
    }
}

#[test]
fn noiseless_recovery() {
    let start = Instant::now();
    let y: Vec<f64> = DISTANCES.iter().map(|&h| truth(h)).collect();
    let fit = fit_points(&DISTANCES, &y).unwrap();
    assert!(fit.mse < 1e-8, "mse {}", fit.mse);
    for &h in &DISTANCES {
        assert!((fit.model.predict(h) - truth(h)).abs() < 1e-4);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn noisy_recovery() {
    let sigma = 0.2;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hs: Vec<f64> = DISTANCES.iter().cycle().take(30).copied().collect();
    let y: Vec<f64> = hs.iter().map(|&h| truth(h) + noise.sample(&mut rng)).collect();
    let start = Instant::now();
    let fit = fit_points(&hs, &y).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert!(fit.mse <= 1.5 * sigma * sigma, "mse {}", fit.mse);
    assert!(fit.model.beta2 > 1.0);
}

#[test]
fn optimizer_only_improves() {
    let hs = [0.0, 0.0, 2.0, 4.0, 5.0, 5.0, 6.0, 6.0];
    let y = [5.0, 4.5, 5.0, 4.0, 3.5, 2.0, 2.5, 2.0];
    let fit = fit_points(&hs, &y).unwrap();
    let best_seed = fit
        .diagnostics
        .starts
        .iter()
        .map(|s| s.init_mse)
        .fold(f64::INFINITY, f64::min);
    assert!(fit.mse <= best_seed);
    assert!(fit.diagnostics.converged, "{:#?} {:?}", fit.diagnostics, fit.model);
}

fn answer(g1: f64, g2: f64) -> StudentAnswer {
    StudentAnswer {
        answer_id: String::new(),
        question_id: String::new(),
        text: String::new(),
        grade1: Grade::new(g1).unwrap(),
        grade2: Grade::new(g2).unwrap(),
    }
}

fn half_mark() -> impl Strategy<Value = f64> {
    (0u8..=10).prop_map(|m| f64::from(m) / 2.0)
}

proptest! {
    #[test]
    fn decreasing_model_never_rises(
        beta0 in -5.0..10.0f64,
        beta1 in -2.0..-1e-6f64,
        beta2 in 0.05..6.0f64,
    ) {
        let mut prev = f64::INFINITY;
        for i in 0..=200 {
            let y = mm_evaluate(beta0, beta1, beta2, f64::from(i) * 0.05).unwrap();
            prop_assert!(y <= prev);
            prev = y;
        }
        prop_assert!(MarkModel::new(beta0, beta1, beta2).unwrap().is_decreasing());
    }

    #[test]
    fn pearson_affine_invariance(
        xy in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..40),
        a in 0.1..10.0f64,
        b in -50.0..50.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson(&x2, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((pearson(&x, &neg).unwrap() + r).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_zero_iff_agreement(pairs in prop::collection::vec((half_mark(), half_mark()), 1..30)) {
        let answers: Vec<_> = pairs.iter().map(|&(a, b)| answer(a, b)).collect();
        let agree = pairs.iter().all(|(a, b)| a == b);
        prop_assert_eq!(tm_baseline(&answers) == 0.0, agree);
    }
}
