use std::time::Instant;

use ndarray::Array2;
use osgd_core::nn::{bce_loss, Activation, Network, NetworkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(net: &Network, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let out = net.forward(x.view()).unwrap().output;
    bce_loss(out.view(), y.view()).unwrap()
}

fn random_problem(seed: u64) -> (Network, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec::new(vec![4, 5, 3], Activation::Relu, Activation::Sigmoid).unwrap();
    let mut net = Network::init(spec, &mut rng);
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-2.0..2.0));
    let y = Array2::from_shape_fn((7, 3), |_| f64::from(rng.random_range(0..2u8)));
    (net, x, y)
}

fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }
}

#[test]
fn backprop_matches_central_differences() {
    let start = Instant::now();
    let step = 1e-6;
    for seed in 0..3 {
        let (net, x, y) = random_problem(seed);
        let trace = net.forward(x.view()).unwrap();
        let grads = net.backward(&trace, y.view()).unwrap();
        let mut worst = 0.0f64;
        for l in 0..net.layers().len() {
            let (rows, cols) = net.layers()[l].weight.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = net.clone();
                    plus.layers_mut()[l].weight[[i, j]] += step;
                    let mut minus = net.clone();
                    minus.layers_mut()[l].weight[[i, j]] -= step;
                    let numeric = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * step);
                    worst = worst.max(relative_error(grads.layers[l].weight[[i, j]], numeric));
                }
                let mut plus = net.clone();
                plus.layers_mut()[l].bias[i] += step;
                let mut minus = net.clone();
                minus.layers_mut()[l].bias[i] -= step;
                let numeric = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * step);
                worst = worst.max(relative_error(grads.layers[l].bias[i], numeric));
            }
        }
        assert!(worst < 1e-5, "seed {seed}: worst relative error {worst:e}");
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn sigmoid_hidden_layers_also_check_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = NetworkSpec::new(vec![3, 4, 4, 2], Activation::Sigmoid, Activation::Sigmoid).unwrap();
    let net = Network::init(spec, &mut rng);
    let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((5, 2), |_| f64::from(rng.random_range(0..2u8)));
    let grads = net.backward(&net.forward(x.view()).unwrap(), y.view()).unwrap();
    for l in 0..3 {
        let (rows, cols) = net.layers()[l].weight.dim();
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = net.clone();
                plus.layers_mut()[l].weight[[i, j]] += 1e-6;
                let mut minus = net.clone();
                minus.layers_mut()[l].weight[[i, j]] -= 1e-6;
                let numeric = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / 2e-6;
                let a = grads.layers[l].weight[[i, j]];
                // tiny partials sit at the finite-difference rounding floor
                assert!((a - numeric).abs() < 1e-5 * a.abs().max(numeric.abs()) + 1e-9, "layer {l} ({i},{j}): {a:e} vs {numeric:e}");
            }
        }
    }
}
