mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use surro2sp_core::neural::{
    fit_scaler, train, Dataset, Layer, ReluNetwork, Scaler, Surrogate, TrainConfig,
};

/// Evaluates the network with explicit index loops, independent of the library's layout.
fn hand_forward(net: &ReluNetwork, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let n = net.layers().len();
    for (l, layer) in net.layers().iter().enumerate() {
        let mut z = vec![0.0; layer.outputs()];
        for i in 0..layer.outputs() {
            let mut s = layer.bias()[i];
            for j in 0..layer.inputs() {
                s += layer.weight(i, j) * a[j];
            }
            z[i] = if l + 1 < n && s < 0.0 { 0.0 } else { s };
        }
        a = z;
    }
    a[0]
}

fn param_count(net: &ReluNetwork) -> usize {
    net.layers().iter().map(|l| l.outputs() * (l.inputs() + 1)).sum()
}

fn param_mut(net: &mut ReluNetwork, mut k: usize) -> &mut f64 {
    for layer in net.layers_mut() {
        let nw = layer.outputs() * layer.inputs();
        if k < nw {
            return &mut layer.weights_mut()[k];
        }
        k -= nw;
        if k < layer.outputs() {
            return &mut layer.bias_mut()[k];
        }
        k -= layer.outputs();
    }
    unreachable!()
}

fn grad_entry(grad: &[Layer], mut k: usize) -> f64 {
    for g in grad {
        let nw = g.outputs() * g.inputs();
        if k < nw {
            return g.weight(k / g.inputs(), k % g.inputs());
        }
        k -= nw;
        if k < g.outputs() {
            return g.bias()[k];
        }
        k -= g.outputs();
    }
    unreachable!()
}

#[test]
fn forward_matches_hand_evaluator() {
    let mut r = rng(1);
    let net = ReluNetwork::he_uniform(6, &[40, 40], &mut r);
    for _ in 0..10 {
        let x: Vec<f64> = (0..6).map(|_| r.random_range(-3.0..3.0)).collect();
        let a = net.forward(&x).unwrap();
        let b = hand_forward(&net, &x);
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(2);
    let mut checked = 0;
    while checked < 5 {
        let net = ReluNetwork::he_uniform(3, &[4, 3], &mut r);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let near_kink = xs.iter().any(|x| {
            let pre = net.pre_activations(x).unwrap();
            pre[..pre.len() - 1].iter().flatten().any(|z| z.abs() < 1e-3)
        });
        if near_kink {
            continue;
        }
        let (_, grad) = net.mse_with_gradient(&xs, &ys).unwrap();
        let h = 1e-5;
        for k in 0..param_count(&net) {
            let mut plus = net.clone();
            *param_mut(&mut plus, k) += h;
            let mut minus = net.clone();
            *param_mut(&mut minus, k) -= h;
            let fd = (plus.mse_with_gradient(&xs, &ys).unwrap().0
                - minus.mse_with_gradient(&xs, &ys).unwrap().0)
                / (2.0 * h);
            let an = grad_entry(&grad, k);
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6),
                "param {k}: analytic {an} vs finite difference {fd}"
            );
        }
        checked += 1;
    }
}

#[test]
fn interpolates_a_single_repeated_point() {
    let x0 = vec![0.4, -1.2, 3.0];
    let q0 = 1234.5;
    let data = Dataset::from_rows(3, vec![(x0.clone(), q0); 64]).unwrap();
    let scaler = fit_scaler(&data).unwrap();
    let init = ReluNetwork::he_uniform(3, &[8, 8], &mut rng(3));
    let cfg = TrainConfig { epochs: 3000, seed: 3, ..TrainConfig::default() };
    let (net, _) = train(&init, &data, &scaler, &cfg).unwrap();
    let pred = Surrogate { net, scaler }.predict(&x0).unwrap();
    assert!((pred - q0).abs() <= 1e-3, "prediction {pred}");
}

#[test]
fn learns_an_affine_function() {
    let mut r = rng(4);
    let coef = [3.0, -2.0, 0.5, 10.0];
    let f = |x: &[f64]| 100.0 + x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
    let sample = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..4).map(|_| r.random_range(0.0..10.0)).collect() };
    let mut data = Dataset::new(4);
    for _ in 0..500 {
        let x = sample(&mut r);
        let y = f(&x);
        data.push(x, y).unwrap();
    }
    let scaler = fit_scaler(&data).unwrap();
    let init = ReluNetwork::he_uniform(4, &[20, 20], &mut r);
    let cfg = TrainConfig { epochs: 5000, seed: 4, ..TrainConfig::default() };
    let (net, hist) = train(&init, &data, &scaler, &cfg).unwrap();
    assert!(hist.last().unwrap() < &hist[0]);
    let s = Surrogate { net, scaler };
    let held: Vec<Vec<f64>> = (0..200).map(|_| sample(&mut r)).collect();
    let mse = held.iter().map(|x| (s.predict(x).unwrap() - f(x)).powi(2)).sum::<f64>() / 200.0;
    let label_std = s.scaler.y_std;
    assert!(mse.sqrt() <= 0.01 * label_std, "rmse {} vs std {label_std}", mse.sqrt());
}

#[test]
fn scaler_matches_two_pass_recomputation() {
    let mut r = rng(5);
    let mut data = Dataset::new(3);
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-50.0..80.0)).collect();
        data.push(x, r.random_range(0.0..1e5)).unwrap();
    }
    let s = fit_scaler(&data).unwrap();
    for j in 0..3 {
        let mut sum = 0.0;
        for x in data.xs() {
            sum += x[j];
        }
        let mean = sum / 100.0;
        let mut ss = 0.0;
        for x in data.xs() {
            ss += (x[j] - mean) * (x[j] - mean);
        }
        let std = (ss / 100.0).sqrt();
        assert!((s.x_mean[j] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((s.x_std[j] - std).abs() <= 1e-12 * std);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let mut r = rng(6);
    let mut data = Dataset::new(2);
    for _ in 0..150 {
        let x: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = (x[0] * 3.0).sin() + x[1].abs();
        data.push(x, y).unwrap();
    }
    let scaler = fit_scaler(&data).unwrap();
    let init = ReluNetwork::he_uniform(2, &[10, 10], &mut r);
    let cfg = TrainConfig { epochs: 30, seed: 77, ..TrainConfig::default() };
    let (a, ha) = train(&init, &data, &scaler, &cfg).unwrap();
    let (b, hb) = train(&init, &data, &scaler, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        ha.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        hb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    let warm = TrainConfig { warm_start: true, epochs: 5, ..cfg };
    let (c, _) = train(&a, &data, &scaler, &warm).unwrap();
    assert_ne!(c, a);
    let _ = Scaler::identity(2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_affine_within_an_activation_region(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = ReluNetwork::he_uniform(4, &[6, 5], &mut r);
        let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let d: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let at = |t: f64| -> Vec<f64> { x.iter().zip(&d).map(|(a, b)| a + t * b).collect() };
        let pattern = |p: &[f64]| -> Vec<bool> {
            let pre = net.pre_activations(p).unwrap();
            pre[..pre.len() - 1].iter().flatten().map(|z| *z > 0.0).collect()
        };
        let t = 1e-4;
        prop_assume!(pattern(&at(-t)) == pattern(&at(0.0)) && pattern(&at(t)) == pattern(&at(0.0)));
        let f0 = net.forward(&at(-t)).unwrap();
        let f1 = net.forward(&at(0.0)).unwrap();
        let f2 = net.forward(&at(t)).unwrap();
        prop_assert!((f0 + f2 - 2.0 * f1).abs() <= 1e-9);
    }
}
