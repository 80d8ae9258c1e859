mod common;

use common::{central_diff, complex_rel_err, naive_dft, normal_vec, rel_err, rng};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use scd_core::spectrum::{
    dft, divergence, spectrum, truncate, truncated_len, SpectralDivergence, SpectrumKind,
    SpectrumVector, DEFAULT_EPS,
};

#[test]
fn dft_matches_naive_sum_for_all_small_and_selected_large_lengths() {
    let mut r = rng(1);
    let lengths: Vec<usize> = (1..=70)
        .chain([97, 127, 128, 255, 256, 500, 997, 1000, 1024])
        .collect();
    for d in lengths {
        let w = normal_vec(&mut r, d);
        let got = dft(&w).unwrap();
        let err = complex_rel_err(got.values(), &naive_dft(&w));
        assert!(err < 1e-10, "d = {d}: relative error {err:e}");
    }
}

#[test]
fn parseval_holds() {
    let mut r = rng(2);
    for d in [1, 2, 7, 64, 97, 1000, 3498] {
        let w = normal_vec(&mut r, d);
        let energy: f64 = dft(&w).unwrap().values().iter().map(|z| z.norm_sqr()).sum();
        let expected = d as f64 * w.iter().map(|x| x * x).sum::<f64>();
        assert!(((energy - expected) / expected).abs() < 1e-9, "d = {d}");
    }
}

#[test]
fn conjugate_symmetry_for_real_input() {
    let mut r = rng(3);
    for d in [2, 5, 16, 97, 300] {
        let w = normal_vec(&mut r, d);
        let z = dft(&w).unwrap().0;
        let scale = z.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for k in 1..d {
            assert!(
                (z[k] - z[d - k].conj()).norm() <= 1e-9 * scale,
                "d = {d}, k = {k}"
            );
        }
        let s = spectrum(&w).unwrap();
        for k in 1..d {
            assert!((s.values()[k] - s.values()[d - k]).abs() <= 1e-9 * scale);
        }
    }
}

fn full(v: Vec<f64>) -> SpectrumVector {
    SpectrumVector::new(v, SpectrumKind::Full).unwrap()
}

/// 𝔇 evaluated through the public value path, for finite differences.
fn objective(div: &SpectralDivergence, w: &[f64], q: &SpectrumVector, tau: f64) -> f64 {
    let s = spectrum(w).unwrap();
    let s = if q.kind() == SpectrumKind::Full {
        s
    } else {
        truncate(&s, tau).unwrap()
    };
    div.value(&s, q).unwrap()
}

fn gradient_trials(normalize: bool, seed: u64) -> f64 {
    let mut r = rng(seed);
    let div = SpectralDivergence::new(DEFAULT_EPS, normalize).unwrap();
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let d = r.random_range(2..=256);
        let tau = if trial % 4 == 0 {
            1.0
        } else {
            r.random_range(0.05..1.0)
        };
        let w = normal_vec(&mut r, d);
        let teacher = normal_vec(&mut r, d);
        let q_full = spectrum(&teacher).unwrap();
        let q = if tau == 1.0 {
            q_full
        } else {
            truncate(&q_full, tau).unwrap()
        };
        let analytic = div.grad(&w, &q, tau).unwrap();
        let numeric = central_diff(&w, 1e-5, |x| objective(&div, x, &q, tau));
        let err = rel_err(analytic.as_slice(), &numeric, 1e-12);
        assert!(
            err < 1e-5,
            "trial {trial}: d = {d}, tau = {tau}, error {err:e}"
        );
        worst = worst.max(err);
    }
    worst
}

#[test]
fn divergence_gradient_matches_central_differences() {
    gradient_trials(false, 4);
}

#[test]
fn normalized_divergence_gradient_matches_central_differences() {
    gradient_trials(true, 5);
}

#[test]
fn gradient_with_self_teacher_has_unit_sensitivities() {
    // p = q gives g_k = 1 for every k, so the gradient is Re(DFT(conj(z)/|z|)).
    let mut r = rng(6);
    let w = normal_vec(&mut r, 33);
    let q = spectrum(&w).unwrap();
    let grad = scd_core::spectrum::divergence_grad(&w, &q, 1.0, DEFAULT_EPS).unwrap();
    let z = dft(&w).unwrap().0;
    let v: Vec<Complex64> = z.iter().map(|c| c.conj() / c.norm()).collect();
    let expected: Vec<f64> = (0..33)
        .map(|j| {
            v.iter()
                .enumerate()
                .map(|(k, vk)| {
                    (vk * Complex64::from_polar(
                        1.0,
                        -2.0 * std::f64::consts::PI * ((k * j) % 33) as f64 / 33.0,
                    ))
                    .re
                })
                .sum()
        })
        .collect();
    assert!(rel_err(grad.as_slice(), &expected, 1e-12) < 1e-10);
    let numeric = central_diff(&w, 1e-5, |x| {
        divergence(&spectrum(x).unwrap(), &q, DEFAULT_EPS).unwrap()
    });
    assert!(rel_err(grad.as_slice(), &numeric, 1e-12) < 1e-5);
}

#[test]
fn truncation_lengths_use_exact_ceiling() {
    assert_eq!(truncated_len(10, 0.5), 5);
    assert_eq!(truncated_len(10, 1.0), 10);
    assert_eq!(truncated_len(7, 0.3), 3);
    assert_eq!(truncated_len(10, 0.3), 3);
    assert_eq!(truncated_len(100, 0.07), 7);
    assert_eq!(truncated_len(3498, 0.2), 700);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_is_linear(
        u in prop::collection::vec(-10.0f64..10.0, 1..200),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let v = normal_vec(&mut rng(seed), u.len());
        let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let lhs = dft(&mix).unwrap().0;
        let du = dft(&u).unwrap().0;
        let dv = dft(&v).unwrap().0;
        let rhs: Vec<Complex64> = du.iter().zip(&dv).map(|(x, y)| x * a + y * b).collect();
        let scale = rhs.iter().map(|c| c.norm()).fold(1.0, f64::max);
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn self_divergence_is_exactly_zero(p in prop::collection::vec(0.0f64..100.0, 1..64)) {
        let s = full(p);
        prop_assert_eq!(divergence(&s, &s, DEFAULT_EPS).unwrap(), 0.0);
    }

    #[test]
    fn gibbs_inequality_on_probability_vectors(
        raw in prop::collection::vec((1e-3f64..1.0, 1e-3f64..1.0), 1..64),
    ) {
        let sp: f64 = raw.iter().map(|x| x.0).sum();
        let sq: f64 = raw.iter().map(|x| x.1).sum();
        let p = full(raw.iter().map(|x| x.0 / sp).collect());
        let q = full(raw.iter().map(|x| x.1 / sq).collect());
        prop_assert!(divergence(&p, &q, DEFAULT_EPS).unwrap() >= -1e-12);
    }

    #[test]
    fn spectrum_is_nonnegative_with_correct_length(
        w in prop::collection::vec(-5.0f64..5.0, 1..300),
        tau in 0.01f64..=1.0,
    ) {
        let s = spectrum(&w).unwrap();
        prop_assert_eq!(s.len(), w.len());
        prop_assert!(s.values().iter().all(|&m| m >= 0.0));
        let t = truncate(&s, tau).unwrap();
        prop_assert_eq!(t.len(), truncated_len(w.len(), tau));
        prop_assert_eq!(t.values(), &s.values()[..t.len()]);
    }
}
