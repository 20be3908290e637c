//! Oracles shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use osgd_core::modem::{sample_channel, RicianModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma_lr;

/// CDF of the entry magnitude. `2(K+1)|h|²` is noncentral chi-square with two
/// degrees of freedom and noncentrality `2K`, i.e. a Poisson(K) mixture of
/// Gamma(j+1, 1) variables in `(K+1)|h|²`.
pub fn magnitude_cdf(x: f64, k: f64) -> f64 {
    let s = x * x * (k + 1.0);
    if s == 0.0 {
        return 0.0;
    }
    let mut weight = (-k).exp();
    let mut total = 0.0;
    for j in 0..200 {
        if j > 0 {
            weight *= k / j as f64;
        }
        total += weight * gamma_lr(j as f64 + 1.0, s);
        if j as f64 > k && weight < 1e-18 {
            break;
        }
    }
    total
}

/// Asymptotic Kolmogorov tail probability `P(sqrt(n) D > z)`.
pub fn kolmogorov_p(z: f64) -> f64 {
    if z < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * z * z).exp();
        p += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

pub fn draw_entries(k: f64, count: usize, seed: u64) -> Vec<Complex64> {
    let model = RicianModel::new(8, 4, k).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        out.extend(sample_channel(&model, &mut rng).h.iter().copied());
    }
    out.truncate(count);
    out
}

/// Kolmogorov-Smirnov statistic of `samples` (sorted in place) against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = cdf(x);
            (f - j as f64 / n).abs().max((j as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}
