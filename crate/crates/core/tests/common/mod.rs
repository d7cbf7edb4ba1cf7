//! Independent reference implementations used as test oracles. They follow
//! the textbook formulas term by term and share no code with the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robord::noise_model::{build_noise_matrix, NoiseMatrix, NoiseSpec};
use robord::Thresholds;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Value and gradient `(value, d_g, d_b)`.
pub type Vg = (f64, f64, Vec<f64>);

/// Cumulative cross-entropy with `z_i = 1` for `i < y` (1-based thresholds).
pub fn oracle_ce(g: f64, b: &[f64], y: usize) -> Vg {
    let mut value = 0.0;
    let mut d_b = Vec::new();
    for (i, &bi) in b.iter().enumerate() {
        let a = g + bi;
        let z = if i + 1 < y { 1.0 } else { 0.0 };
        let s = 1.0 / (1.0 + (-a).exp());
        value += -(z * s.ln() + (1.0 - z) * (1.0 - s).ln());
        d_b.push(s - z);
    }
    (value, d_b.iter().sum(), d_b)
}

/// Implicit-constraint hinge with `z_i = +1` for `i < y`, `-1` otherwise.
pub fn oracle_imc(g: f64, b: &[f64], y: usize) -> Vg {
    let mut value = 0.0;
    let mut d_b = Vec::new();
    for (i, &bi) in b.iter().enumerate() {
        let z = if i + 1 < y { 1.0 } else { -1.0 };
        let m = 1.0 - z * (g + bi);
        value += m.max(0.0);
        d_b.push(if m > 0.0 { -z } else { 0.0 });
    }
    (value, d_b.iter().sum(), d_b)
}

/// Rank distance between the threshold prediction and `y`, by counting.
pub fn oracle_rank(g: f64, b: &[f64]) -> usize {
    let mut r = 1;
    for &bi in b {
        if g + bi > 0.0 {
            r += 1;
        }
    }
    r
}

pub fn uniform_noise(k: usize, rho: f64) -> NoiseMatrix {
    build_noise_matrix(&NoiseSpec::uniform(k, rho))
        .unwrap()
        .invert()
        .unwrap()
}

/// Decreasing thresholds with gaps of at least `min_gap`.
pub fn ordered_thresholds(r: &mut ChaCha8Rng, k: usize, min_gap: f64) -> Thresholds {
    let mut v = Vec::with_capacity(k - 1);
    let mut cur = r.random_range(-1.0..3.0);
    for _ in 0..k - 1 {
        v.push(cur);
        cur -= min_gap + r.random_range(0.0..1.5);
    }
    Thresholds::new(v).unwrap()
}

/// Arbitrary (possibly unordered) thresholds.
pub fn any_thresholds(r: &mut ChaCha8Rng, k: usize) -> Thresholds {
    Thresholds::new((0..k - 1).map(|_| r.random_range(-4.0..4.0)).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Central difference of `f` at `x`.
pub fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
