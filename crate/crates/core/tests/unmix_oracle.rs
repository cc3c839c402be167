mod common;

use common::{enumeration_oracle, objective};
use hyperfield::endmember::EndmemberSet;
use hyperfield::synth::{library, mixed_cube};
use hyperfield::cube::linspace;
use hyperfield::unmix::{unmix_cube, Unmixer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, e: usize, d: usize) -> EndmemberSet {
    let spectra: Vec<Vec<f64>> = (0..e).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    EndmemberSet::new((0..d).map(|b| b as f64).collect(), spectra, (0..e).map(|i| format!("e{i}")).collect()).unwrap()
}

fn random_pixel(rng: &mut ChaCha8Rng, set: &EndmemberSet, spread: f64) -> Vec<f64> {
    let d = set.bands();
    let e = set.len();
    let a: Vec<f64> = (0..e).map(|_| rng.random_range(-0.5..1.5)).collect();
    (0..d)
        .map(|b| (0..e).map(|k| set.spectra[k][b] * a[k]).sum::<f64>() + spread * rng.random_range(-1.0..1.0))
        .collect()
}

#[test]
fn matches_enumeration_oracle_on_random_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let e = 2 + trial % 4;
        let set = random_set(&mut rng, e, 30);
        let solver = Unmixer::new(&set).unwrap();
        for _ in 0..50 {
            let x = random_pixel(&mut rng, &set, 0.3);
            let h = solver.solve(&x).unwrap();
            let (_, best) = enumeration_oracle(&set.spectra, &x);
            let got = objective(&set.spectra, &x, &h);
            assert!((got - best).abs() <= 1e-10 * (1.0 + best), "{got} vs {best}");
        }
    }
}

#[test]
fn kkt_certificate_holds() {
    // optimality on the simplex: gradient entries equal on the support and
    // no smaller off it
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = random_set(&mut rng, 4, 40);
    let solver = Unmixer::new(&set).unwrap();
    for _ in 0..500 {
        let x = random_pixel(&mut rng, &set, 0.5);
        let h = solver.solve(&x).unwrap();
        let grad: Vec<f64> = (0..4)
            .map(|i| {
                (0..40)
                    .map(|b| {
                        let m: f64 = (0..4).map(|k| set.spectra[k][b] * h[k]).sum();
                        2.0 * (m - x[b]) * set.spectra[i][b]
                    })
                    .sum()
            })
            .collect();
        let support: Vec<usize> = (0..4).filter(|&i| h[i] > 1e-9).collect();
        let lambda = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
        let scale = 1.0 + grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        for i in 0..4 {
            if h[i] > 1e-9 {
                assert!((grad[i] - lambda).abs() < 1e-7 * scale);
            } else {
                assert!(grad[i] >= lambda - 1e-7 * scale);
            }
        }
    }
}

#[test]
fn noiseless_library_mixtures_are_recovered() {
    let wl = linspace(400.0, 900.0, 120);
    let set = library(&wl).select(&["spike", "leaf", "soil", "shadow"]).unwrap();
    let (cube, h) = mixed_cube(&set, 20, 20, 1.0, None, 3).unwrap();
    let map = unmix_cube(&cube, &set).unwrap();
    let err = map.values.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn thread_count_does_not_change_output() {
    let wl = linspace(400.0, 900.0, 60);
    let set = library(&wl).select(&["spike", "leaf", "soil", "shadow"]).unwrap();
    let (cube, _) = mixed_cube(&set, 30, 30, 0.7, Some(30.0), 9).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| unmix_cube(&cube, &set).unwrap());
    let b = three.install(|| unmix_cube(&cube, &set).unwrap());
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_lie_on_the_simplex(seed in any::<u64>(), e in 2usize..7, spread in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, e, 25);
        let solver = Unmixer::new(&set).unwrap();
        for _ in 0..20 {
            let x = random_pixel(&mut rng, &set, spread);
            let h = solver.solve(&x).unwrap();
            prop_assert!(h.iter().all(|&v| v >= -1e-12));
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn never_worse_than_any_vertex_or_the_centroid(seed in any::<u64>(), e in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, e, 20);
        let solver = Unmixer::new(&set).unwrap();
        let x = random_pixel(&mut rng, &set, 1.0);
        let h = solver.solve(&x).unwrap();
        let got = objective(&set.spectra, &x, &h);
        let mut candidates: Vec<Vec<f64>> = (0..e).map(|i| (0..e).map(|k| f64::from(k == i)).collect()).collect();
        candidates.push(vec![1.0 / e as f64; e]);
        for c in candidates {
            prop_assert!(got <= objective(&set.spectra, &x, &c) + 1e-10);
        }
    }
}
