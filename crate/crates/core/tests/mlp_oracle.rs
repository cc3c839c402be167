mod common;

use common::{forward_oracle, gradient_check};
use hyperfield::mlp::{
    apportion, from_text, r_squared, read_checkpoint, stratified_split, to_text, train, write_checkpoint, Adam,
    AdamConfig, Dataset, MlpModel, ModelConfig, Network, NormStats, SplitSpec, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// The loss is piecewise quadratic in each single parameter, so central
/// differences are exact away from ReLU kinks; a wide step keeps rounding
/// noise far below the tolerance.
const FD_STEP: f64 = 1e-4;

fn random_inputs(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let xs = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
    (xs, ys)
}

fn randomize_biases(net: &mut Network, rng: &mut ChaCha8Rng) {
    let sizes = net.sizes().to_vec();
    let mut off = 0;
    for w in sizes.windows(2) {
        off += w[0] * w[1];
        for b in &mut net.params_mut()[off..off + w[1]] {
            *b = rng.random_range(-0.1..0.1);
        }
        off += w[1];
    }
}

#[test]
fn forward_matches_explicit_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for sizes in [vec![3, 1], vec![5, 4, 1], vec![12, 8, 6, 3, 1]] {
        let mut net = Network::glorot(&sizes, 4).unwrap();
        randomize_biases(&mut net, &mut rng);
        for _ in 0..20 {
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = net.forward(&x);
            let b = forward_oracle(&sizes, net.params(), &x);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for sizes in [vec![4, 1], vec![6, 5, 1], vec![20, 10, 6, 4, 1]] {
        let mut net = Network::glorot(&sizes, 7).unwrap();
        randomize_biases(&mut net, &mut rng);
        let (xs, ys) = random_inputs(&mut rng, 6, sizes[0]);
        let worst = gradient_check(&net, &xs, &ys, FD_STEP);
        assert!(worst < 1e-4, "{sizes:?}: {worst}");
    }
}

#[test]
fn zero_error_batch_has_zero_gradient() {
    let net = Network::glorot(&[5, 4, 1], 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (xs, _) = random_inputs(&mut rng, 4, 5);
    let ys: Vec<f64> = xs.chunks(5).map(|x| net.forward(x)).collect();
    let mut g = vec![1.0; net.params().len()];
    let loss = net.gradient(&xs, &ys, &mut g);
    assert_eq!(loss, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn adam_first_step_moves_each_parameter_by_the_learning_rate() {
    let cfg = AdamConfig::default();
    let g = [0.01, -0.5, 3.0, -1e3];
    let mut p = [0.0; 4];
    Adam::new(4, cfg).step(&mut p, &g);
    for (pi, gi) in p.iter().zip(&g) {
        assert!((pi + cfg.learning_rate * gi.signum()).abs() < 1e-6 * cfg.learning_rate);
    }
}

#[test]
fn adam_matches_hand_rolled_recurrence() {
    let cfg = AdamConfig {
        learning_rate: 0.05,
        ..Default::default()
    };
    let mut adam = Adam::new(1, cfg);
    let mut p = [1.0];
    let (mut m, mut v, mut q) = (0.0, 0.0, 1.0f64);
    for t in 1..=30 {
        let g = 2.0 * (p[0] - 3.0);
        adam.step(&mut p, &[g]);
        let gq = 2.0 * (q - 3.0);
        m = 0.9 * m + 0.1 * gq;
        v = 0.999 * v + 0.001 * gq * gq;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        q -= 0.05 * mh / (vh.sqrt() + 1e-8);
        assert!((p[0] - q).abs() < 1e-12);
    }
}

#[test]
fn learns_a_planted_linear_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 381;
    let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut make = |n: usize| {
        // roughly unit-variance features
        let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.7..1.7)).collect();
        let y: Vec<f64> = x
            .chunks(dim)
            .map(|r| r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng))
            .collect();
        Dataset::new(dim, x, y).unwrap()
    };
    let (tr, va, te) = (make(10_000), make(500), make(500));
    let model = ModelConfig { hidden: vec![16] };
    let cfg = TrainConfig {
        seed: 5,
        ..Default::default()
    };
    let out = train(&tr, &va, &model, &cfg).unwrap();
    let r2 = r_squared(&te.y, &out.model.predict(&te));
    assert!(r2 >= 0.95, "{r2}");
    let best = out.log.iter().map(|l| l.val_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(out.log[out.model.best_epoch].val_rmse, best);
    assert!(best <= out.log[0].val_rmse);
}

#[test]
fn training_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (x, y) = random_inputs(&mut rng, 200, 6);
    let d = Dataset::new(6, x, y).unwrap();
    let model = ModelConfig { hidden: vec![8, 4] };
    let cfg = TrainConfig {
        epochs: 5,
        seed: 3,
        ..Default::default()
    };
    let a = train(&d, &d, &model, &cfg).unwrap();
    let b = train(&d, &d, &model, &cfg).unwrap();
    assert_eq!(to_text(&a.model), to_text(&b.model));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Network::glorot(&[3, 2, 1], 1).unwrap();
    let (x, _) = random_inputs(&mut rng, 10, 3);
    let m = MlpModel {
        network: net,
        norm: NormStats::fit(&x, 3).unwrap(),
        target_mean: 12.5,
        target_std: 0.1 + 1.0 / 3.0,
        best_epoch: 17,
        seed: u64::MAX,
    };
    let p = dir.path().join("m.ckpt");
    write_checkpoint(&m, &p).unwrap();
    assert_eq!(read_checkpoint(&p).unwrap(), m);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let net = Network::glorot(&[2, 1], 1).unwrap();
    let m = MlpModel {
        network: net,
        norm: NormStats::fit(&[0.0, 1.0, 2.0, 3.0], 2).unwrap(),
        target_mean: 0.0,
        target_std: 1.0,
        best_epoch: 0,
        seed: 1,
    };
    let text = to_text(&m);
    let p = Path::new("bad.ckpt");
    assert!(from_text(&text.replacen("HYPERFIELD", "OTHER", 1), p).is_err());
    let truncated: String = text.lines().take(text.lines().count() - 1).collect::<Vec<_>>().join("\n");
    assert!(from_text(&truncated, p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoint_text_round_trip_is_bit_exact(seed in any::<u64>(), h in 1usize..6, dim in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::glorot(&[dim, h, 1], seed).unwrap();
        randomize_biases(&mut net, &mut rng);
        let (x, _) = random_inputs(&mut rng, 5, dim);
        let m = MlpModel {
            network: net,
            norm: NormStats::fit(&x, dim).unwrap(),
            target_mean: rng.random_range(-1e3..1e3),
            target_std: rng.random_range(1e-6..1e3),
            best_epoch: rng.random_range(0..100),
            seed,
        };
        prop_assert_eq!(from_text(&to_text(&m), Path::new("x")).unwrap(), m);
    }

    #[test]
    fn standardized_training_features_have_zero_mean_unit_variance(seed in any::<u64>(), n in 2usize..50, dim in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-50.0..50.0)).collect();
        let s = NormStats::fit(&x, dim).unwrap();
        let z = s.apply(&x);
        for j in 0..dim {
            let col: Vec<f64> = z.iter().skip(j).step_by(dim).copied().collect();
            let (m, sd) = common::two_pass_stats(&col);
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_check_on_random_small_networks(seed in any::<u64>(), h1 in 1usize..8, h2 in 1usize..6, dim in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::glorot(&[dim, h1, h2, 1], seed).unwrap();
        randomize_biases(&mut net, &mut rng);
        let (xs, ys) = random_inputs(&mut rng, 3, dim);
        prop_assert!(gradient_check(&net, &xs, &ys, FD_STEP) < 1e-4);
    }

    #[test]
    fn split_partitions_records(seed in any::<u64>(), n in 5usize..300, strata in 1usize..12, tf in 0.5f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..n).map(|i| format!("p{}", i % 9)).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
        let spec = SplitSpec { train_fraction: tf, validation_fraction: 1.0 - tf, strata, seed };
        let test = vec!["p0".to_string()];
        let s = stratified_split(&refs, &y, &test, &spec).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(s.test.iter().all(|&i| refs[i] == "p0"));
        let pool = n - s.test.len();
        let want = (tf * pool as f64).round() as i64;
        prop_assert!((s.train.len() as i64 - want).abs() <= 1);
        let again = stratified_split(&refs, &y, &test, &spec).unwrap();
        prop_assert_eq!(again, s);
    }

    #[test]
    fn apportion_is_within_one_per_stratum(sizes in prop::collection::vec(0usize..500, 1..12), share in 0.0f64..1.0) {
        let counts = apportion(&sizes, share);
        for (c, s) in counts.iter().zip(&sizes) {
            prop_assert!(c <= s);
            prop_assert!((*c as f64 - share * *s as f64).abs() < 1.0 + 1e-9);
        }
        let total: usize = sizes.iter().sum();
        prop_assert_eq!(counts.iter().sum::<usize>(), (share * total as f64).round() as usize);
    }
}
