use landscape_core::data::*;
use landscape_core::nn::*;
use landscape_core::optimizers::AnnealConfig;
use landscape_core::spectral::{eigen_symmetric, normalized_index};
use landscape_core::Error;
use nalgebra::DMatrix;
use rand::Rng;

fn idx_bytes(magic: u32, dims: &[u32], payload: usize) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend(d.to_be_bytes());
    }
    b.extend((0..payload).map(|i| (i % 251) as u8));
    b
}

#[test]
fn idx_headers() {
    let images = parse_idx(&idx_bytes(0x803, &[2, 28, 28], 1568)).unwrap();
    assert_eq!(images.count(), 2);
    let labels = parse_idx(&idx_bytes(0x801, &[2], 2)).unwrap();
    assert_eq!(labels.count(), 2);
    let short = idx_bytes(0x803, &[2, 28, 28], 1567);
    assert!(matches!(parse_idx(&short), Err(Error::Parse { .. })));
    let bytes = idx_bytes(0x803, &[3, 28, 28], 3 * 784);
    assert_eq!(parse_idx(&bytes).unwrap().to_bytes(), bytes);
}

#[test]
fn downsampling_oracles() {
    let flat = downsample_10x10(&vec![0.37; 784]).unwrap();
    assert!(flat.iter().all(|v| (v - 0.37).abs() < 1e-12));
    let mut rng = landscape_core::rng::seeded_rng(1);
    let img: Vec<f64> = (0..784).map(|_| rng.random::<f64>()).collect();
    let out = downsample_10x10(&img).unwrap();
    let total_in: f64 = img.iter().sum();
    assert!((out.iter().sum::<f64>() * 2.8 * 2.8 - total_in).abs() < 1e-9);
    let mut spot = vec![0.0; 784];
    spot[0] = 1.0;
    let out = downsample_10x10(&spot).unwrap();
    assert!((out[0] - 1.0 / (2.8 * 2.8)).abs() < 1e-12);
    assert!(out[1..].iter().all(|&v| v == 0.0));
    assert!(downsample_10x10(&[0.0; 100]).is_err());
}

#[test]
fn synthetic_data_properties() {
    let a = synthetic_digits(200, 10, 3, 0.1).unwrap();
    assert_eq!(a, synthetic_digits(200, 10, 3, 0.1).unwrap());
    let clean = synthetic_digits(40, 4, 3, 0.0).unwrap();
    for i in 0..clean.len() {
        for j in 0..clean.len() {
            if clean.labels[i] == clean.labels[j] {
                assert_eq!(clean.row(i), clean.row(j));
            }
        }
    }
    let all = synthetic_digits(2000, 10, 9, 0.05).unwrap();
    let (train, test) = all.split_at(1000);
    assert!(nearest_centroid_accuracy(&train, &test) >= 0.99);
}

#[allow(clippy::needless_range_loop)]
fn loop_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut hidden = vec![0.0; p.n1];
    for j in 0..p.n1 {
        let mut z = if p.b1.is_empty() { 0.0 } else { p.b1[j] };
        for i in 0..p.d {
            z += p.w1[j * p.d + i] * x[i];
        }
        hidden[j] = if z > 0.0 { z } else { 0.0 };
    }
    let mut out = vec![0.0; p.out];
    for k in 0..p.out {
        let mut s = if p.b2.is_empty() { 0.0 } else { p.b2[k] };
        for j in 0..p.n1 {
            s += p.w2[k * p.n1 + j] * hidden[j];
        }
        out[k] = s;
    }
    out
}

#[test]
fn forward_matches_scalar_loops() {
    let mut p = MlpParams::init_unit_cube(7, 5, 3, true, 1.0, 2).unwrap();
    let mut rng = landscape_core::rng::seeded_rng(3);
    let mut flat = p.to_flat();
    flat.iter_mut().for_each(|v| *v -= 0.5);
    p.set_flat(&flat).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
        let a = forward(&p, &x).unwrap();
        let b = loop_forward(&p, &x);
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
    }
    assert!(forward(&p, &[0.0; 6]).is_err());
}

#[test]
fn init_lies_in_unit_cube() {
    let p = MlpParams::init_unit_cube(100, 25, 10, true, 1.0, 8).unwrap();
    assert_eq!(p.param_count(), 25 * 100 + 25 + 10 * 25 + 10);
    assert!(p.to_flat().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn separable_blobs_are_learned() {
    let all = synthetic_digits(400, 4, 5, 0.1).unwrap();
    let (train, test) = all.split_at(200);
    let p0 = MlpParams::init_unit_cube(100, 8, 4, true, 0.1, 1).unwrap();
    let cfg = TrainConfig { epochs: 60, lr0: 0.2, seed: 4, ..TrainConfig::default() };
    let out = train_sgd(&p0, &train, Some(&test), &cfg).unwrap();
    assert_eq!(out.status, TrainStatus::Completed);
    assert!(accuracy(&out.params, &train, LossMode::Xent).unwrap() >= 0.95);
    let again = train_sgd(&p0, &train, Some(&test), &cfg).unwrap();
    assert_eq!(out.params, again.params);
}

#[test]
fn exploding_learning_rate_aborts() {
    let all = synthetic_digits(100, 4, 5, 0.1).unwrap();
    let mut p0 = MlpParams::init_unit_cube(100, 8, 4, true, 1.0, 1).unwrap();
    p0.w2[0] = 1e300;
    let cfg = TrainConfig { epochs: 50, lr0: 1e10, lr_decay: 1.0, ..TrainConfig::default() };
    let out = train_sgd(&p0, &all, None, &cfg).unwrap();
    assert_eq!(out.status, TrainStatus::Aborted);
    assert!(out.history.len() < 50);
}

#[test]
fn quantized_annealing_alphabet_and_constant_predictor() {
    let all = synthetic_digits(80, 4, 2, 0.1).unwrap();
    let alphabet = [-1.0, 0.0, 1.0];
    let p0 = MlpParams::init_from_alphabet(100, 3, 4, true, &alphabet, 3).unwrap();
    let cfg = AnnealConfig { t0: 0.05, cooling: 0.9, sweeps: 5, seed: 1, ..AnnealConfig::default() };
    let out = train_quantized_sa(&p0, &all, None, LossMode::Xent, &cfg).unwrap();
    assert!(out.anneal.stayed_in_alphabet);
    assert!(out.params.to_flat().iter().all(|v| alphabet.contains(v)));
    assert!(out.train_loss <= landscape_core::nn::mean_loss(&p0, &all, LossMode::Xent).unwrap() + 1e-12);

    let zero = MlpParams::zeros(100, 3, 4, true);
    let cfg0 = AnnealConfig { value_set: Some(vec![0.0]), sweeps: 2, ..cfg };
    let out = train_sa(&zero, &all, None, LossMode::Xent, &cfg0).unwrap();
    assert_eq!(out.params, zero);
    let acc = accuracy(&out.params, &all, LossMode::Xent).unwrap();
    assert!((acc - all.majority_rate()).abs() < 1e-12);
}

#[test]
fn planted_quadratic_hessian() {
    let n = 12;
    let mut rng = landscape_core::rng::seeded_rng(6);
    let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let a = &b + b.transpose();
    let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    let grad = |v: &[f64]| Ok((&a * DMatrix::from_column_slice(n, 1, v)).column(0).iter().copied().collect());
    let h = finite_difference_hessian(grad, &x, 1e-4).unwrap();
    assert!((&h - &a).amax() < 1e-4);
}

#[test]
fn hessian_of_trained_net_is_symmetric() {
    // d=10, n1=10, out=5 with biases: 100 + 10 + 50 + 5 = 165 parameters.
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut rng = landscape_core::rng::seeded_rng(2);
    for i in 0..60 {
        let l = i % 5;
        labels.push(l);
        inputs.extend((0..10).map(|k| if k % 5 == l { 0.8 } else { 0.1 } + 0.1 * rng.random::<f64>()));
    }
    let data = Dataset::new(inputs, labels, 10, 5).unwrap();
    let p0 = MlpParams::init_unit_cube(10, 10, 5, true, 0.3, 1).unwrap();
    let out = train_sgd(&p0, &data, None, &TrainConfig { epochs: 50, lr0: 0.1, ..TrainConfig::default() }).unwrap();
    // Unsymmetrized central differences of the analytic gradient.
    let x = out.params.to_flat();
    let n = x.len();
    let mut work = out.params.clone();
    let mut raw = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut probe = x.clone();
        probe[j] += 1e-4;
        work.set_flat(&probe).unwrap();
        let gp = loss_and_gradient(&work, &data, None, LossMode::Xent).unwrap().1;
        probe[j] -= 2e-4;
        work.set_flat(&probe).unwrap();
        let gm = loss_and_gradient(&work, &data, None, LossMode::Xent).unwrap().1;
        for i in 0..n {
            raw[(i, j)] = (gp[i] - gm[i]) / 2e-4;
        }
    }
    assert!((&raw - raw.transpose()).amax() <= 1e-5);
    let h = hessian_at_solution(&out.params, &data, LossMode::Xent).unwrap();
    assert_eq!(h.nrows(), 165);
    let idx = normalized_index(&eigen_symmetric(&h).unwrap(), 1e-3);
    assert!((0.0..=1.0).contains(&idx.normalized_index));
}

#[test]
fn converged_nets_have_low_index() {
    let all = synthetic_digits(400, 10, 11, 0.3).unwrap();
    let (train, _) = all.split_at(200);
    let mut low = 0;
    let population = 50;
    for seed in 0..population {
        let p0 = MlpParams::init_unit_cube(100, 10, 10, true, 0.1, seed).unwrap();
        let cfg = TrainConfig { epochs: 100, lr0: 0.5, batch_size: 8, seed, ..TrainConfig::default() };
        let out = train_sgd(&p0, &train, None, &cfg).unwrap();
        let h = hessian_at_solution(&out.params, &train, LossMode::Xent).unwrap();
        let idx = normalized_index(&eigen_symmetric(&h).unwrap(), 1e-3).normalized_index;
        if idx <= 0.02 {
            low += 1;
        }
    }
    assert!(low as f64 >= 0.9 * population as f64, "{low}/{population}");
}

#[test]
fn planted_power_law_is_recovered() {
    let sizes = [5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0];
    let mut rng = landscape_core::rng::seeded_rng(17);
    let losses: Vec<f64> = sizes
        .iter()
        .map(|&n: &f64| 0.8 * (-0.2 * n.powf(0.5)).exp() * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0)))
        .collect();
    let fit = fit_power_law(&sizes, &losses).unwrap();
    assert!((fit.alpha / -0.2 - 1.0).abs() < 0.1, "{fit:?}");
    assert!((fit.beta / 0.5 - 1.0).abs() < 0.1, "{fit:?}");
    assert!(fit.beta_identified);
    let scaled: Vec<f64> = sizes.iter().zip(&losses).map(|(&n, l)| l / fit.fitted_mean(n)).collect();
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    assert!(scaled.iter().all(|s| (s / mean - 1.0).abs() < 0.05));
    assert!(matches!(fit_power_law(&sizes[..3], &[1.0, -1.0, 2.0]), Err(Error::Domain(_))));
}
