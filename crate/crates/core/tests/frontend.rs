mod common;

use common::*;
use ivup::frontend::*;
use ivup::RowMatrix;
use proptest::prelude::*;

#[test]
fn one_second_gives_98_frames() {
    let cfg = MfccConfig::default();
    let wave: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.05).sin()).collect();
    let fm = extract_mfcc("u", &wave, &cfg).unwrap();
    assert_eq!(fm.num_frames(), 98);
    assert_eq!(fm.dim(), 20);
    assert_eq!(fm.meta.log_energy_dim, Some(19));
}

#[test]
fn full_pipeline_shapes() {
    let cfg = MfccConfig::default();
    let mut r = rng(1);
    let wave: Vec<f64> = normal_matrix(1, 8000, 0.3, &mut r).into_vec();
    let fm = extract_mfcc("u", &wave, &cfg).unwrap();
    let fm = append_deltas(&fm, cfg.delta_window).unwrap();
    assert_eq!(fm.dim(), 60);
    let fm = energy_vad(&fm).unwrap();
    let (fm, scales) = cmvn(&fm).unwrap();
    assert_eq!(scales.len(), 60);
    assert!(fm.frames().is_finite());
}

#[test]
fn normalized_input_is_a_fixed_point() {
    let mut r = rng(2);
    let (once, _) = cmvn(&random_features("u", 50, 4, &mut r)).unwrap();
    let (twice, scales) = cmvn(&once).unwrap();
    for (a, b) in once.frames().as_slice().iter().zip(twice.frames().as_slice()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(scales.iter().all(|s| (s - 1.0).abs() < 1e-9));
}

#[test]
fn scale_uncertainty_identity_and_errors() {
    let mut r = rng(3);
    let unc = random_uncertainty("u", 6, 3, &mut r);
    assert_eq!(scale_uncertainty(&unc, &[1.0; 3]).unwrap(), unc);
    assert!(scale_uncertainty(&unc, &[1.0; 2]).is_err());
    assert!(scale_uncertainty(&unc, &[1.0, 0.0, 1.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pipeline_stays_finite(samples in proptest::collection::vec(-1e4f64..1e4, 400..3000), zeros in any::<bool>()) {
        let cfg = MfccConfig::default();
        let wave: Vec<f64> = if zeros { vec![0.0; samples.len()] } else { samples };
        let fm = extract_mfcc("u", &wave, &cfg).unwrap();
        prop_assert!(fm.frames().is_finite());
        if fm.num_frames() > 2 * cfg.delta_window {
            let fm = append_deltas(&fm, cfg.delta_window).unwrap();
            prop_assert!(fm.frames().is_finite());
            let fm = energy_vad(&fm).unwrap();
            if fm.num_voiced() >= 2 {
                let (out, _) = cmvn(&fm).unwrap();
                prop_assert!(out.frames().is_finite());
            }
        }
    }

    #[test]
    fn cmvn_is_idempotent(seed in any::<u64>(), l in 3usize..60, f in 1usize..5, shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let data: Vec<f64> = normal_matrix(l, f, scale, &mut r).into_vec().into_iter().map(|v| v + shift).collect();
        let fm = FeatureMatrix::new("u", RowMatrix::from_vec(l, f, data).unwrap()).unwrap();
        let (a, _) = cmvn(&fm).unwrap();
        let (b, _) = cmvn(&a).unwrap();
        for t in a.voiced_indices() {
            for (x, y) in a.frame(t).iter().zip(b.frame(t)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scaling_composes(seed in any::<u64>(), s in proptest::collection::vec(0.01f64..100.0, 3)) {
        let mut r = rng(seed);
        let unc = random_uncertainty("u", 5, 3, &mut r);
        let inv: Vec<f64> = s.iter().map(|v| 1.0 / v).collect();
        let back = scale_uncertainty(&scale_uncertainty(&unc, &s).unwrap(), &inv).unwrap();
        for (a, b) in unc.diag_vars().as_slice().iter().zip(back.diag_vars().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn feature_files_round_trip(seed in any::<u64>(), l in 1usize..20, f in 1usize..6) {
        let mut r = rng(seed);
        let fm = random_features("utt", l, f, &mut r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.uvfm");
        write_features(&path, &fm).unwrap();
        prop_assert_eq!(read_features(&path).unwrap(), fm);
    }
}
