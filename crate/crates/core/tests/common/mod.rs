//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gauss(u: f64) -> f64 {
    (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `(p̂, â, b̂)` by direct summation over the quotients, recomputed here from
/// the raw `Y` values.
pub fn naive_tilde(y: &[f64], delta: f64, h: f64, x: f64) -> (f64, f64, f64) {
    let mut q = Vec::new();
    for j in 0..y.len() - 1 {
        q.push((y[j + 1] - y[j]) / delta);
    }
    let n = q.len() - 2;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 1..=n {
        let w = gauss((x - q[i - 1]) / h);
        s0 += w;
        s1 += w * (q[i + 1] - q[i]) / delta;
        s2 += w * 1.5 * (q[i + 1] - q[i]) * (q[i + 1] - q[i]) / delta;
    }
    let nh = n as f64 * h;
    let p = s0 / nh;
    (p, s1 / nh / p, s2 / nh / p)
}

/// Baselines from the exact series.
pub fn naive_exact(xs: &[f64], delta: f64, h: f64, x: f64) -> (f64, f64, f64) {
    let n = xs.len() - 1;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 1..=n {
        let w = gauss((x - xs[i - 1]) / h);
        let d = xs[i] - xs[i - 1];
        s0 += w;
        s1 += w * d / delta;
        s2 += w * d * d / delta;
    }
    let nh = n as f64 * h;
    let p = s0 / nh;
    (p, s1 / nh / p, s2 / nh / p)
}

/// A random walk `X` and its left-Riemann integral `Y` sampled every `delta`.
pub fn random_dataset(seed: u64, len: usize, delta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = vec![rng.random_range(-1.0..1.0)];
    for _ in 1..len {
        let last = *xs.last().unwrap();
        xs.push(0.8 * last + rng.random_range(-0.5..0.5));
    }
    let mut y = vec![0.0];
    for k in 1..len {
        y.push(y[k - 1] + xs[k - 1] * delta);
    }
    (y, xs)
}
