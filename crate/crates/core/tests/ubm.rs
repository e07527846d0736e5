mod common;

use common::*;
use ivup::frontend::{FeatureMatrix, UncertaintySequence};
use ivup::ubm::{posteriors, posteriors_uncertain, train_ubm, UbmConfig};
use ivup::RowMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn single_component_posteriors_are_one() {
    let gmm = scalar_gmm(&[1.0], &[0.3], &[2.0]);
    let p = posteriors(&gmm, &scalar_features(&[-4.0, 0.0, 17.0])).unwrap();
    assert!(p.gammas.as_slice().iter().all(|&g| g == 1.0));
}

#[test]
fn far_component_gets_tiny_posterior() {
    let gmm = scalar_gmm(&[0.5, 0.5], &[0.0, 10.0], &[1.0, 1.0]);
    let p = posteriors(&gmm, &scalar_features(&[0.0])).unwrap();
    // densities differ by exp(-100/2)
    let expected = (-50f64).exp() / (1.0 + (-50f64).exp());
    assert!((p.gammas.get(0, 1) / expected - 1.0).abs() < 1e-9);
    assert!((p.gammas.get(0, 1) - 1.9e-22).abs() < 0.05e-22);
}

#[test]
fn equidistant_frame_splits_evenly() {
    let gmm = scalar_gmm(&[0.5, 0.5], &[-1.5, 2.5], &[0.7, 0.7]);
    let p = posteriors(&gmm, &scalar_features(&[0.5])).unwrap();
    assert!((p.gammas.get(0, 0) - 0.5).abs() < 1e-15);
}

#[test]
fn uncertain_posterior_hand_case() {
    let gmm = scalar_gmm(&[0.5, 0.5], &[0.0, 10.0], &[1.0, 1.0]);
    let unc = UncertaintySequence::constant("u", 1, 1, 3.0).unwrap();
    let p = posteriors_uncertain(&gmm, &scalar_features(&[0.0]), &unc).unwrap();
    let expected = 1.0 / (1.0 + (-12.5f64).exp());
    assert!((p.gammas.get(0, 0) - expected).abs() < 1e-12);
}

#[test]
fn huge_uncertainty_flattens_to_priors() {
    let gmm = ivup::ubm::GmmModel::new(
        vec![0.2, 0.3, 0.5],
        RowMatrix::from_rows(&[vec![0.0, 1.0], vec![5.0, -3.0], vec![-8.0, 2.0]]).unwrap(),
        RowMatrix::filled(3, 2, 1.3),
    )
    .unwrap();
    let fm = FeatureMatrix::from_rows("u", &[vec![0.1, 0.9], vec![-8.0, 2.0]]).unwrap();
    let unc = UncertaintySequence::constant("u", 2, 2, 1e12).unwrap();
    let base = posteriors(&gmm, &fm).unwrap();
    let flat = posteriors_uncertain(&gmm, &fm, &unc).unwrap();
    for t in 0..2 {
        for c in 0..3 {
            assert!((flat.gammas.get(t, c) - gmm.weights()[c]).abs() < 1e-3);
        }
        // the plain posterior stays peaked
        assert!(base.gammas.row(t).iter().cloned().fold(0.0, f64::max) > 0.99);
    }
}

#[test]
fn zero_uncertainty_matches_plain_posteriors_bitwise() {
    let mut r = rng(3);
    let gmm = random_gmm(8, 5, &mut r);
    let fm = random_features("u", 40, 5, &mut r);
    let unc = UncertaintySequence::zeros("u", 40, 5);
    assert_eq!(
        posteriors(&gmm, &fm).unwrap(),
        posteriors_uncertain(&gmm, &fm, &unc).unwrap()
    );
}

#[test]
fn tiny_uncertainty_is_continuous() {
    let mut r = rng(4);
    let gmm = random_gmm(8, 5, &mut r);
    let fm = random_features("u", 40, 5, &mut r);
    let unc = UncertaintySequence::constant("u", 40, 5, 1e-12).unwrap();
    let a = posteriors(&gmm, &fm).unwrap();
    let b = posteriors_uncertain(&gmm, &fm, &unc).unwrap();
    for (x, y) in a.gammas.as_slice().iter().zip(b.gammas.as_slice()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn permuting_components_permutes_columns() {
    let mut r = rng(5);
    let gmm = random_gmm(6, 3, &mut r);
    let order = [4, 0, 5, 2, 1, 3];
    let perm = gmm.permuted(&order).unwrap();
    let fm = random_features("u", 25, 3, &mut r);
    let a = posteriors(&gmm, &fm).unwrap();
    let b = posteriors(&perm, &fm).unwrap();
    for t in 0..25 {
        for (j, &src) in order.iter().enumerate() {
            assert!((b.gammas.get(t, j) - a.gammas.get(t, src)).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_dims_are_rejected() {
    let mut r = rng(6);
    let gmm = random_gmm(2, 3, &mut r);
    assert!(posteriors(&gmm, &random_features("u", 5, 4, &mut r)).is_err());
}

fn gaussian_frames(n: usize, means: &[[f64; 2]], std: f64, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let m = means[i % means.len()];
            m.iter()
                .map(|mu| mu + std * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    FeatureMatrix::from_rows("u", &rows).unwrap()
}

#[test]
fn single_component_training_is_closed_form() {
    let fm = gaussian_frames(500, &[[1.0, -2.0]], 1.5, 7);
    let out = train_ubm(
        &[fm.clone()],
        &UbmConfig {
            num_components: 1,
            em_iters: 3,
            kmeans_iters: 2,
            seed: 1,
        },
    )
    .unwrap();
    let n = fm.num_frames() as f64;
    for j in 0..2 {
        let mean = (0..fm.num_frames()).map(|t| fm.frame(t)[j]).sum::<f64>() / n;
        let var = (0..fm.num_frames())
            .map(|t| (fm.frame(t)[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((out.model.mean(0)[j] - mean).abs() < 1e-10);
        assert!((out.model.var(0)[j] - var).abs() < 1e-10);
    }
    assert_eq!(out.model.weights(), &[1.0]);
}

#[test]
fn two_separated_components_are_recovered() {
    let truth = [[-4.0, 1.0], [4.0, -1.0]];
    let fm = gaussian_frames(4000, &truth, 1.0, 8);
    let out = train_ubm(
        &[fm],
        &UbmConfig {
            num_components: 2,
            em_iters: 10,
            kmeans_iters: 2,
            seed: 2,
        },
    )
    .unwrap();
    for m in truth {
        let best = (0..2)
            .map(|c| {
                out.model
                    .mean(c)
                    .iter()
                    .zip(m)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "mean {m:?} off by {best}");
    }
}

#[test]
fn em_log_likelihood_is_non_decreasing() {
    let fm = gaussian_frames(3000, &[[0.0, 0.0], [3.0, 1.0], [-2.0, 4.0]], 1.2, 9);
    let out = train_ubm(
        &[fm],
        &UbmConfig {
            num_components: 4,
            em_iters: 10,
            kmeans_iters: 2,
            seed: 3,
        },
    )
    .unwrap();
    assert_eq!(out.log_likelihoods.len(), 11);
    for w in out.log_likelihoods.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn training_is_deterministic_and_checks_data() {
    let fm = gaussian_frames(400, &[[0.0, 0.0], [3.0, 1.0]], 1.0, 10);
    let cfg = UbmConfig {
        num_components: 2,
        em_iters: 4,
        kmeans_iters: 2,
        seed: 11,
    };
    let a = train_ubm(&[fm.clone()], &cfg).unwrap();
    let b = train_ubm(&[fm.clone()], &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log_likelihoods, b.log_likelihoods);
    let too_many = UbmConfig {
        num_components: 100,
        ..cfg
    };
    assert!(train_ubm(&[fm], &too_many).is_err());
}

#[test]
fn model_file_round_trip() {
    let mut r = rng(12);
    let gmm = random_gmm(3, 4, &mut r);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ubm.json");
    gmm.save(&path).unwrap();
    assert_eq!(ivup::ubm::GmmModel::load(&path).unwrap(), gmm);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_rows_are_stochastic(seed in any::<u64>(), c in 1usize..8, f in 1usize..5, unc_scale in 0.0f64..100.0) {
        let mut r = rng(seed);
        let gmm = random_gmm(c, f, &mut r);
        let fm = random_features("u", 12, f, &mut r);
        let unc = UncertaintySequence::new(
            "u",
            RowMatrix::from_vec(12, f, (0..12 * f).map(|_| unc_scale * r.random::<f64>()).collect()).unwrap(),
        ).unwrap();
        for p in [posteriors(&gmm, &fm).unwrap(), posteriors_uncertain(&gmm, &fm, &unc).unwrap()] {
            for row in p.gammas.row_iter() {
                prop_assert!(row.iter().all(|&g| g >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }
}
