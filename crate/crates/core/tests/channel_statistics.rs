mod common;

use common::{draw_entries, kolmogorov_p, ks_statistic, magnitude_cdf};
use ndarray::Array1;
use num_complex::Complex64;
use osgd_core::modem::{
    complex_gaussian, ebn0_to_noise_var, receive, rician_pdf, sample_channel, ModulationScheme, RicianModel,
    TransmitBlock,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn magnitudes_pass_ks_against_rician_law() {
    for (i, k) in [0.0, 1.0, 5.0].into_iter().enumerate() {
        let mut mags: Vec<f64> = draw_entries(k, 100_000, 11 + i as u64).iter().map(|h| h.norm()).collect();
        let d = ks_statistic(&mut mags, |x| magnitude_cdf(x, k));
        let n = mags.len() as f64;
        let p = kolmogorov_p(n.sqrt() * d);
        assert!(p > 0.01, "K={k}: D={d:.5}, p={p:.4}");
    }
}

#[test]
fn mean_entry_power_is_one() {
    for k in [0.0, 1.0, 5.0] {
        let h = draw_entries(k, 100_000, 5);
        let power = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / h.len() as f64;
        assert!((power - 1.0).abs() < 0.02, "K={k}: {power}");
    }
}

#[test]
fn density_matches_cdf_oracle_and_integrates_to_one() {
    for k in [0.0, 1.0, 5.0] {
        let model = RicianModel::new(8, 4, k).unwrap();
        let pdf = |x: f64| rician_pdf(x, model.nu(), model.sigma()).unwrap();
        let total = simpson(pdf, 0.0, 6.0, 20_000);
        assert!((total - 1.0).abs() < 1e-6, "K={k}: {total}");
        for x in [0.25, 0.7, 1.0, 1.6] {
            let partial = simpson(pdf, 0.0, x, 4_000);
            assert!((partial - magnitude_cdf(x, k)).abs() < 1e-8, "K={k}, x={x}");
        }
    }
}

#[test]
fn noise_is_circular_with_requested_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let var = 0.3;
    let n = 200_000;
    let (mut re2, mut im2, mut cross, mut pseudo) = (0.0, 0.0, 0.0, Complex64::new(0.0, 0.0));
    for _ in 0..n {
        let z = complex_gaussian(&mut rng, var);
        re2 += z.re * z.re;
        im2 += z.im * z.im;
        cross += z.re * z.im;
        pseudo += z * z;
    }
    let n = n as f64;
    assert!((re2 / n - var / 2.0).abs() < 0.01 * var);
    assert!((im2 / n - var / 2.0).abs() < 0.01 * var);
    assert!((cross / n).abs() < 0.01 * var);
    assert!(pseudo.norm() / n < 0.01 * var);
}

#[test]
fn residual_energy_matches_noise_budget() {
    let scheme = ModulationScheme::qpsk();
    let model = RicianModel::new(8, 4, 1.0).unwrap();
    let noise_var = ebn0_to_noise_var(4.0, &scheme, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trials = 20_000;
    let mut acc = 0.0;
    for _ in 0..trials {
        let h = sample_channel(&model, &mut rng);
        let x = TransmitBlock::random(&scheme, 4, &mut rng).symbols;
        let y = receive(&x, &h, noise_var, &mut rng).unwrap();
        let r: Array1<Complex64> = &y - &h.h.dot(&x);
        acc += r.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    let mean = acc / trials as f64;
    assert!((mean - 8.0 * noise_var).abs() < 0.02 * 8.0 * noise_var, "{mean}");
}

#[test]
fn snr_mapping_reference_points() {
    let scheme = ModulationScheme::qpsk();
    let model = RicianModel::new(8, 4, 0.0).unwrap();
    // unit-energy QPSK carries two bits per symbol
    assert!((ebn0_to_noise_var(0.0, &scheme, &model) - 0.5).abs() < 1e-15);
    assert!((ebn0_to_noise_var(8.0, &scheme, &model) - 0.5 / 10f64.powf(0.8)).abs() < 1e-15);
}
