//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Direct O(d²) summation, with `k·j` reduced mod `d` before the angle.
pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let ang = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    Complex64::from_polar(v, ang)
                })
                .sum()
        })
        .collect()
}

/// Central differences of `f` at `w` with step `h`.
pub fn central_diff(w: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|i| {
            x[i] = w[i] + h;
            let up = f(&x);
            x[i] = w[i] - h;
            let down = f(&x);
            x[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖b‖₂, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

pub fn complex_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// Plain nested-loop MLP forward pass, written without the crate's layout helpers.
pub fn reference_forward(w: &[f64], sizes: &[usize], input: &[f64]) -> Vec<f64> {
    let mut act = input.to_vec();
    let mut off = 0;
    for (l, pair) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let weights = &w[off..off + fan_in * fan_out];
        let bias = &w[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let mut next = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut s = bias[o];
            for i in 0..fan_in {
                s += weights[o * fan_in + i] * act[i];
            }
            next[o] = if l + 2 < sizes.len() { s.max(0.0) } else { s };
        }
        act = next;
    }
    act
}

/// Mean softmax cross-entropy computed in the most direct way.
pub fn reference_ce(w: &[f64], sizes: &[usize], inputs: &[f64], labels: &[usize]) -> f64 {
    let in_dim = sizes[0];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let logits = reference_forward(w, sizes, &inputs[r * in_dim..(r + 1) * in_dim]);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}
