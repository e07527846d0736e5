mod common;

use common::*;
use ivup::frontend::FeatureMatrix;
use ivup::ivector::TvModel;
use ivup::synth::*;
use ivup::ubm::posteriors;
use ivup::RowMatrix;
use nalgebra::DVector;
use proptest::prelude::*;

fn spec(c: usize, f: usize, d: usize, seed: u64) -> GenerativeSpec {
    GenerativeSpec {
        num_speakers: 3,
        utts_per_speaker: 2,
        frames_per_utt: 40,
        feature_dim: f,
        num_components: c,
        ivector_dim: d,
        speaker_shift_scale: 1.0,
        mean_spread: 2.0,
        loading_scale: 0.3,
        rng_seed: seed,
    }
}

#[test]
fn single_component_ubm() {
    let gmm = synth_ubm(&spec(1, 1, 1, 7)).unwrap();
    assert_eq!(gmm.weights(), &[1.0]);
    let v = gmm.var(0)[0];
    assert!((0.1..10.0).contains(&v));
}

#[test]
fn component_means_are_separated() {
    for seed in 0..20 {
        for (c, f) in [(2, 1), (8, 2), (64, 3)] {
            let gmm = synth_ubm(&spec(c, f, 1, seed)).unwrap();
            let avg_std = gmm.vars().as_slice().iter().map(|v| v.sqrt()).sum::<f64>() / (c * f) as f64;
            for a in 0..c {
                for b in a + 1..c {
                    let d: f64 = gmm
                        .mean(a)
                        .iter()
                        .zip(gmm.mean(b))
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(d >= 2.0 * avg_std, "seed {seed} C={c}: {d} < {}", 2.0 * avg_std);
                }
            }
            assert!((gmm.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(gmm.vars().as_slice().iter().all(|&v| v >= ivup::VAR_FLOOR));
        }
    }
}

#[test]
fn oversized_spec_is_rejected() {
    let mut s = spec(1 << 20, 1 << 13, 1, 0);
    assert!(synth_ubm(&s).is_err());
    s = spec(2, 2, 5, 0);
    assert!(synth_ubm(&s).is_err());
}

#[test]
fn generation_is_deterministic() {
    let s = spec(4, 3, 2, 9);
    let gmm = synth_ubm(&s).unwrap();
    assert_eq!(gmm, synth_ubm(&s).unwrap());
    let tv = synth_tv(&s, &gmm).unwrap();
    assert_eq!(tv, synth_tv(&s, &gmm).unwrap());
    let a = synth_corpus(&s, &gmm, &tv).unwrap();
    assert_eq!(a, synth_corpus(&s, &gmm, &tv).unwrap());
    assert_eq!(a.utterances.len(), 6);
    assert_eq!(a.speakers().len(), 3);
}

#[test]
fn mismatched_models_are_rejected() {
    let s = spec(4, 3, 2, 9);
    let gmm = synth_ubm(&s).unwrap();
    let other = synth_ubm(&spec(5, 3, 2, 9)).unwrap();
    assert!(synth_tv(&s, &other).is_err());
    let tv = synth_tv(&s, &gmm).unwrap();
    assert!(synth_corpus(&s, &other, &tv).is_err());
}

#[test]
fn zero_loading_makes_w_irrelevant() {
    let s = spec(4, 3, 2, 10);
    let gmm = synth_ubm(&s).unwrap();
    let tv = TvModel::with_ubm_residual(RowMatrix::zeros(12, 2), &gmm).unwrap();
    let a = synth_utterance("u", &gmm, &tv, &DVector::from_vec(vec![5.0, -3.0]), 50, &mut rng(1)).unwrap();
    let b = synth_utterance("u", &gmm, &tv, &DVector::zeros(2), 50, &mut rng(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hard_assigned_means_converge_to_component_means() {
    let mut s = spec(3, 2, 1, 11);
    // hard assignment truncates overlapping tails, so keep components far apart
    s.mean_spread = 30.0;
    let gmm = synth_ubm(&s).unwrap();
    for a in 0..3 {
        for b in a + 1..3 {
            let d2: f64 = gmm.mean(a).iter().zip(gmm.mean(b)).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(d2.sqrt() > 12.0);
        }
    }
    let tv = TvModel::with_ubm_residual(RowMatrix::zeros(6, 1), &gmm).unwrap();
    let l = 100_000;
    let fm = synth_utterance("u", &gmm, &tv, &DVector::zeros(1), l, &mut rng(2)).unwrap();
    let post = posteriors(&gmm, &fm).unwrap();
    let mut sums = RowMatrix::zeros(3, 2);
    let mut counts = [0usize; 3];
    for t in 0..l {
        let g = post.gammas.row(t);
        let k = (0..3).max_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap();
        counts[k] += 1;
        for (s, y) in sums.row_mut(k).iter_mut().zip(fm.frame(t)) {
            *s += y;
        }
    }
    for k in 0..3 {
        let n = counts[k] as f64;
        for j in 0..2 {
            let se = (gmm.var(k)[j] / n).sqrt();
            assert!((sums.get(k, j) / n - gmm.mean(k)[j]).abs() < 3.0 * se);
        }
    }
}

fn clean(seed: u64, l: usize, f: usize) -> FeatureMatrix {
    random_features("u", l, f, &mut rng(seed))
}

#[test]
fn zero_db_white_noise() {
    let x = clean(1, 300, 4);
    let out = corrupt_with_noise(&x, &CorruptionSpec::stationary(0.0, NoiseKind::White, 5)).unwrap();
    let snr = measured_snr_db(&x, &out.noise);
    assert!((-0.1..=0.1).contains(&snr), "{snr}");
    assert_eq!(out.noisy.frames().shape(), x.frames().shape());
}

#[test]
fn very_high_snr_leaves_features_intact() {
    let x = clean(2, 50, 3);
    let y = corrupt(&x, &CorruptionSpec::stationary(400.0, NoiseKind::White, 1)).unwrap();
    for (a, b) in x.frames().as_slice().iter().zip(y.frames().as_slice()) {
        assert!((a - b).abs() <= f64::EPSILON * a.abs().max(1.0));
    }
}

#[test]
fn invalid_corruption_specs_are_rejected() {
    let x = clean(3, 20, 2);
    for snr in [f64::NAN, f64::INFINITY] {
        assert!(corrupt(&x, &CorruptionSpec::stationary(snr, NoiseKind::White, 0)).is_err());
    }
    assert!(corrupt(&x, &CorruptionSpec::stationary(5.0, NoiseKind::Colored(1.0), 0)).is_err());
    let mut s = CorruptionSpec::stationary(5.0, NoiseKind::White, 0);
    s.burst_fraction = 1.5;
    assert!(corrupt(&x, &s).is_err());
}

fn lag1(noise: &RowMatrix) -> f64 {
    let (l, f) = noise.shape();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..f {
        for t in 0..l {
            den += noise.get(t, j).powi(2);
            if t + 1 < l {
                num += noise.get(t, j) * noise.get(t + 1, j);
            }
        }
    }
    num / den
}

#[test]
fn colored_noise_is_more_correlated_than_white() {
    let x = clean(4, 2000, 3);
    let white = corrupt_with_noise(&x, &CorruptionSpec::stationary(5.0, NoiseKind::White, 8)).unwrap();
    let ar = corrupt_with_noise(&x, &CorruptionSpec::stationary(5.0, NoiseKind::Colored(0.9), 8)).unwrap();
    let (lw, la) = (lag1(&white.noise), lag1(&ar.noise));
    assert!(la > lw);
    assert!((la - 0.9).abs() < 0.05 && lw.abs() < 0.05, "{la} {lw}");
}

#[test]
fn bursts_and_offset_keep_snr_exact() {
    let x = clean(5, 1000, 4);
    let s = CorruptionSpec {
        target_snr_db: 5.0,
        noise_kind: NoiseKind::White,
        burst_fraction: 0.2,
        burst_power_ratio: 10.0,
        offset_power: 1.0,
        offset_seed: 3,
        rng_seed: 4,
    };
    let out = corrupt_with_noise(&x, &s).unwrap();
    assert!((measured_snr_db(&x, &out.noise) - 5.0).abs() < 1e-9);
    let base = out.frame_noise_var.iter().cloned().fold(f64::INFINITY, f64::min);
    let bursts = out.frame_noise_var.iter().filter(|&&v| v > base).count();
    assert!((150..250).contains(&bursts), "{bursts}");
    assert!(out.frame_noise_var.iter().all(|&v| v == base || (v / base - 10.0).abs() < 1e-9));
    assert!(out.noise_mean.iter().any(|&m| m != 0.0));
    // the offset depends on its own seed only
    let again = corrupt_with_noise(&clean(6, 1000, 4), &CorruptionSpec { rng_seed: 99, ..s.clone() }).unwrap();
    let dir = |m: &[f64]| {
        let n = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        m.iter().map(|v| v / n).collect::<Vec<_>>()
    };
    for (a, b) in dir(&out.noise_mean).iter().zip(dir(&again.noise_mean)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(out.noise_var().shape(), (1000, 4));
}

#[test]
fn residual_enhancer_end_points() {
    let x = clean(7, 30, 2);
    let noisy = corrupt(&x, &CorruptionSpec::stationary(0.0, NoiseKind::White, 1)).unwrap();
    assert_eq!(enhance_residual(&x, &noisy, 0.0).unwrap().frames(), x.frames());
    assert_eq!(enhance_residual(&x, &noisy, 1.0).unwrap().frames(), noisy.frames());
    assert!(enhance_residual(&x, &noisy, 1.5).is_err());
    let half = enhance_residual(&x, &noisy, 0.5).unwrap();
    let unc = oracle_uncertainty(&x, &half).unwrap();
    for t in 0..30 {
        for j in 0..2 {
            let n = noisy.frame(t)[j] - x.frame(t)[j];
            assert!((unc.frame(t)[j] - 0.25 * n * n).abs() < 1e-12);
        }
    }
}

#[test]
fn mmse_enhancer_moves_towards_clean() {
    let s = spec(8, 3, 1, 12);
    let gmm = synth_ubm(&s).unwrap();
    let tv = TvModel::with_ubm_residual(RowMatrix::zeros(24, 1), &gmm).unwrap();
    let x = synth_utterance("u", &gmm, &tv, &DVector::zeros(1), 2000, &mut rng(3)).unwrap();
    let out = corrupt_with_noise(&x, &CorruptionSpec::stationary(0.0, NoiseKind::White, 2)).unwrap();
    let enh = enhance(&out.noisy, &gmm, &out.noise_mean, &out.noise_var()).unwrap();
    let err = |a: &FeatureMatrix| {
        a.frames()
            .as_slice()
            .iter()
            .zip(x.frames().as_slice())
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
    };
    assert!(err(&enh) < err(&out.noisy));
    // zero noise variance leaves features untouched
    let same = enhance(&x, &gmm, &[0.0; 3], &RowMatrix::zeros(2000, 3)).unwrap();
    assert!(err(&same) < 1e-20);
}

#[test]
fn oracle_uncertainty_hand_case() {
    let y = FeatureMatrix::from_rows("u", &[vec![1.0, 2.0]]).unwrap();
    let e = FeatureMatrix::from_rows("u", &[vec![0.0, 0.0]]).unwrap();
    assert_eq!(oracle_uncertainty(&y, &e).unwrap().frame(0), &[1.0, 4.0]);
    assert!(oracle_uncertainty(&y, &y).unwrap().diag_vars().as_slice().iter().all(|&v| v == 0.0));
    assert!(oracle_uncertainty(&y, &clean(1, 2, 2)).is_err());
}

#[test]
fn corpus_directory_round_trip() {
    let s = spec(4, 3, 2, 13);
    let gmm = synth_ubm(&s).unwrap();
    let tv = synth_tv(&s, &gmm).unwrap();
    let bundle = synth_corpus(&s, &gmm, &tv).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &bundle).unwrap();
    for name in ["manifest.tsv", "ubm.json", "tv.uvtv", "true_w.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert_eq!(read_corpus(dir.path()).unwrap(), bundle);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_uncertainty_is_symmetric_and_zero_iff_equal(seed in any::<u64>(), l in 1usize..10, f in 1usize..4) {
        let mut r = rng(seed);
        let a = random_features("u", l, f, &mut r);
        let mut data = random_features("u", l, f, &mut r).frames().clone();
        // make some entries equal
        for i in (0..l * f).step_by(3) {
            data.as_mut_slice()[i] = a.frames().as_slice()[i];
        }
        let b = a.with_frames(data).unwrap();
        let ab = oracle_uncertainty(&a, &b).unwrap();
        prop_assert_eq!(&ab, &oracle_uncertainty(&b, &a).unwrap());
        for ((u, x), y) in ab.diag_vars().as_slice().iter().zip(a.frames().as_slice()).zip(b.frames().as_slice()) {
            prop_assert!(*u >= 0.0);
            prop_assert_eq!(*u == 0.0, x == y);
        }
    }

    #[test]
    fn snr_hits_target(seed in any::<u64>(), snr in -10.0f64..30.0, ar in -0.95f64..0.95) {
        let x = clean(seed, 64, 3);
        let out = corrupt_with_noise(&x, &CorruptionSpec::stationary(snr, NoiseKind::Colored(ar), seed)).unwrap();
        prop_assert!((measured_snr_db(&x, &out.noise) - snr).abs() < 0.1);
    }
}
