use std::f64::consts::PI;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use wavecaster_core::restore::{burg_coefficients, gap_fill, gap_fill_with, GapFillOptions};

fn tone(freq: f64, rate: f64, len: usize) -> Vec<f64> {
    (0..len).map(|n| (2.0 * PI * freq * n as f64 / rate).sin()).collect()
}

fn noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (sum / n as f64).sqrt()
}

#[test]
fn sinusoid_order_two_recovers_recursion() {
    // one second of a 440 Hz tone is a whole number of periods
    let rate = 44100.0;
    let w = 2.0 * PI * 440.0 / rate;
    let x: Vec<f64> = (0..44100).map(|n| (w * n as f64).cos()).collect();
    let m = burg_coefficients(&x, 2).unwrap();
    assert!((m.coefficients[0] - 2.0 * w.cos()).abs() < 1e-6, "{:?}", m.coefficients);
    assert!((m.coefficients[1] + 1.0).abs() < 1e-6, "{:?}", m.coefficients);
}

#[test]
fn white_noise_error_near_variance() {
    let x = noise(42, 20_000);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    let m = burg_coefficients(&x, 8).unwrap();
    assert!((m.final_error() - var).abs() / var < 0.1);
}

#[test]
fn sine_gap_is_restored() {
    let x = tone(440.0, 44100.0, 16384);
    let (start, len) = (8000, 256);
    let mut damaged = x.clone();
    damaged[start..start + len].iter_mut().for_each(|v| *v = 0.0);
    let fixed = gap_fill(&damaged, start, len, 32).unwrap();
    let err = rms((start..start + len).map(|i| fixed[i] - x[i]));
    let reference = rms(x[start..start + len].iter().copied());
    assert!(err / reference < 0.01, "relative rms {}", err / reference);
}

#[test]
fn noise_fill_is_bounded() {
    for seed in 0..20 {
        let x = noise(seed, 4096);
        let fixed = gap_fill(&x, 2000, 300, 32).unwrap();
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(fixed.iter().all(|v| v.is_finite() && v.abs() <= 4.0 * peak));
    }
}

fn arb_signal() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-1.0f64..1.0, 40..400),
        (1.0f64..2000.0, 0.0f64..1.0, 40usize..400).prop_map(|(f, phase, n)| {
            (0..n)
                .map(|i| (2.0 * PI * f * i as f64 / 8000.0 + phase).sin())
                .collect()
        }),
        (any::<u64>(), 40usize..400).prop_map(|(seed, n)| {
            // random walk: strongly correlated, exercises |k| near 1
            let mut rng = StdRng::seed_from_u64(seed);
            let mut acc = 0.0;
            (0..n)
                .map(|_| {
                    acc += rng.random_range(-1.0..1.0);
                    acc
                })
                .collect()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reflection_bounded_and_error_monotone(x in arb_signal(), order in 1usize..16) {
        prop_assume!(x.len() > 2 * order);
        let m = burg_coefficients(&x, order).unwrap();
        prop_assert_eq!(m.errors.len(), order + 1);
        for k in &m.reflection {
            prop_assert!(k.abs() <= 1.0);
        }
        for pair in m.errors.windows(2) {
            prop_assert!(pair[1] <= pair[0]);
            prop_assert!(pair[1] >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outside_of_gap_untouched(seed in any::<u64>(), start in 40usize..200, len in 0usize..60) {
        let x = noise(seed, 400);
        let fixed = gap_fill(&x, start, len, 8).unwrap();
        prop_assert_eq!(&fixed[..start], &x[..start]);
        prop_assert_eq!(&fixed[start + len..], &x[start + len..]);
    }

    #[test]
    fn time_reversal_symmetry(seed in any::<u64>(), start in 60usize..200, len in 1usize..80) {
        let x = noise(seed, 400);
        let opts = GapFillOptions { order: 12, max_context: 128 };
        let forward = gap_fill_with(&x, start, len, opts).unwrap();
        let reversed: Vec<f64> = x.iter().rev().copied().collect();
        let mirrored_start = x.len() - start - len;
        let mut back = gap_fill_with(&reversed, mirrored_start, len, opts).unwrap();
        back.reverse();
        for (a, b) in forward.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
