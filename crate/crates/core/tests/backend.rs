mod common;

use common::*;
use ivup::backend::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn gauss(d: usize, r: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal))
}

fn cov_of(vs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = vs[0].len();
    let n = vs.len() as f64;
    let mean = vs.iter().fold(DVector::zeros(d), |a, v| a + v) / n;
    let cov = vs
        .iter()
        .fold(DMatrix::zeros(d, d), |a, v| a + (v - &mean) * (v - &mean).transpose())
        / n;
    (mean, cov)
}

/// Speakers drawn from the two-covariance model with diagonal B and W.
fn two_cov_data(
    speakers: usize,
    per: usize,
    b: &[f64],
    w: &[f64],
    seed: u64,
) -> (Vec<DVector<f64>>, Vec<String>) {
    let mut r = rng(seed);
    let d = b.len();
    let mut vs = Vec::new();
    let mut labels = Vec::new();
    for s in 0..speakers {
        let y = DVector::from_fn(d, |i, _| b[i].sqrt() * r.sample::<f64, _>(StandardNormal));
        for _ in 0..per {
            let e = DVector::from_fn(d, |i, _| w[i].sqrt() * r.sample::<f64, _>(StandardNormal));
            vs.push(&y + e);
            labels.push(format!("s{s}"));
        }
    }
    (vs, labels)
}

#[test]
fn whitened_training_data_has_identity_covariance() {
    let mut r = rng(1);
    let mix = DMatrix::from_fn(4, 4, |_, _| r.sample::<f64, _>(StandardNormal));
    let vs: Vec<DVector<f64>> = (0..300).map(|_| &mix * gauss(4, &mut r) + DVector::from_element(4, 3.0)).collect();
    let w = fit_whitener(&vs).unwrap();
    let out: Vec<DVector<f64>> = vs.iter().map(|v| apply_whitener(&w, v)).collect();
    let (mean, cov) = cov_of(&out);
    assert!(mean.amax() < 1e-10);
    assert!((cov - DMatrix::identity(4, 4)).amax() < 1e-6);

    // refitting on whitened data is the identity
    let again = fit_whitener(&out).unwrap();
    assert!((again.transform - DMatrix::identity(4, 4)).amax() < 1e-6);
}

#[test]
fn white_and_diagonal_cases() {
    let s = 2f64.sqrt();
    let white: Vec<DVector<f64>> = [[s, 0.0], [-s, 0.0], [0.0, s], [0.0, -s]]
        .iter()
        .map(|v| DVector::from_row_slice(v))
        .collect();
    let w = fit_whitener(&white).unwrap();
    assert!((w.transform.clone() - DMatrix::identity(2, 2)).amax() < 1e-12);
    assert!(w.mean.amax() < 1e-15);

    let diag: Vec<DVector<f64>> = white.iter().map(|v| DVector::from_vec(vec![2.0 * v[0], v[1]])).collect();
    let w = fit_whitener(&diag).unwrap();
    assert!((w.transform - DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]))).amax() < 1e-12);
}

#[test]
fn whitener_needs_two_vectors_and_survives_rank_deficiency() {
    assert!(fit_whitener(&[DVector::from_vec(vec![1.0, 2.0])]).is_err());
    // all points on a line: singular covariance gets a ridge
    let vs: Vec<DVector<f64>> = (0..10).map(|i| DVector::from_vec(vec![i as f64, 2.0 * i as f64])).collect();
    let w = fit_whitener(&vs).unwrap();
    assert!(w.transform.iter().all(|v| v.is_finite()));
}

#[test]
fn length_normalization_hand_case() {
    let v = length_normalize(&DVector::from_vec(vec![3.0, 4.0])).unwrap();
    assert!((v - DVector::from_vec(vec![0.6, 0.8])).amax() < 1e-15);
    let u = length_normalize(&DVector::from_vec(vec![0.0, 1.0])).unwrap();
    assert_eq!(length_normalize(&u).unwrap(), u);
    let a = DVector::from_vec(vec![1.0, 2.0, -1.0]);
    let b = DVector::from_vec(vec![0.5, -1.0, 3.0]);
    assert!((cosine_score(&(&a * 2.0), &b).unwrap() - cosine_score(&a, &b).unwrap()).abs() < 1e-15);
}

fn within_metric(lda: &LdaTransform, vs: &[DVector<f64>], labels: &[String]) -> DMatrix<f64> {
    let (sw, _) = scatter_matrices(vs, labels).unwrap();
    lda.projection.transpose() * sw * &lda.projection
}

#[test]
fn lda_is_orthonormal_under_within_scatter() {
    let (vs, labels) = two_cov_data(30, 6, &[3.0, 1.0, 0.5, 0.2], &[1.0, 0.5, 2.0, 1.0], 2);
    let lda = fit_lda(&vs, &labels, 3).unwrap();
    assert!((within_metric(&lda, &vs, &labels) - DMatrix::identity(3, 3)).amax() < 1e-6);
    assert!(lda.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn two_class_lda_is_fisher_direction() {
    let mut r = rng(3);
    let mix = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.0, 0.0, 1.0, 0.3, 0.2, 0.0, 1.0]);
    let means = [DVector::from_vec(vec![0.0, 0.0, 0.0]), DVector::from_vec(vec![2.0, -1.0, 0.5])];
    let mut vs = Vec::new();
    let mut labels = Vec::new();
    for (k, m) in means.iter().enumerate() {
        for _ in 0..200 {
            vs.push(m + &mix * gauss(3, &mut r));
            labels.push(format!("c{k}"));
        }
    }
    let lda = fit_lda(&vs, &labels, 1).unwrap();
    let (sw, _) = scatter_matrices(&vs, &labels).unwrap();
    let m0 = vs[..200].iter().fold(DVector::zeros(3), |a, v| a + v) / 200.0;
    let m1 = vs[200..].iter().fold(DVector::zeros(3), |a, v| a + v) / 200.0;
    let fisher = sw.lu().solve(&(m1 - m0)).unwrap().normalize();
    let got = lda.projection.column(0).normalize();
    assert!(1.0 - got.dot(&fisher).abs() < 1e-9);
}

#[test]
fn identical_class_means_give_null_eigenvalues() {
    let mut r = rng(4);
    // every class holds the same points, so class means coincide
    let mut vs = Vec::new();
    let mut labels = Vec::new();
    let points: Vec<DVector<f64>> = (0..5).map(|_| gauss(3, &mut r)).collect();
    for k in 0..4 {
        for p in &points {
            vs.push(p.clone());
            labels.push(format!("c{k}"));
        }
    }
    let lda = fit_lda(&vs, &labels, 2).unwrap();
    assert!(lda.eigenvalues.amax() < 1e-9);
    assert!((within_metric(&lda, &vs, &labels) - DMatrix::identity(2, 2)).amax() < 1e-6);
}

fn trace_ratio(p: &DMatrix<f64>, sw: &DMatrix<f64>, sb: &DMatrix<f64>) -> f64 {
    (p.transpose() * sb * p).trace() / (p.transpose() * sw * p).trace()
}

#[test]
fn lda_beats_random_projections() {
    let (vs, labels) = two_cov_data(25, 5, &[4.0, 2.0, 0.1, 0.1, 0.1], &[1.0, 1.0, 1.0, 1.0, 1.0], 5);
    let lda = fit_lda(&vs, &labels, 2).unwrap();
    let (sw, sb) = scatter_matrices(&vs, &labels).unwrap();
    let best = trace_ratio(&lda.projection, &sw, &sb);
    let mut r = rng(6);
    for _ in 0..20 {
        let p = DMatrix::from_fn(5, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        assert!(best > trace_ratio(&p, &sw, &sb));
    }
}

#[test]
fn plda_recovers_two_covariance_parameters() {
    let b = [4.0, 1.0];
    let w = [1.0, 0.25];
    let (vs, labels) = two_cov_data(200, 10, &b, &w, 7);
    let out = train_plda(&vs, &labels, 20).unwrap();
    for i in 0..2 {
        let rb = out.model.between_cov[(i, i)] / b[i];
        let rw = out.model.within_cov[(i, i)] / w[i];
        assert!((rb - 1.0).abs() < 0.15, "between {i}: {rb}");
        assert!((rw - 1.0).abs() < 0.15, "within {i}: {rw}");
    }
    for ll in out.log_likelihoods.windows(2) {
        assert!(ll[1] >= ll[0] - 1e-8 * ll[0].abs());
    }
}

#[test]
fn plda_with_one_utterance_per_speaker_terminates() {
    let (vs, labels) = two_cov_data(50, 1, &[2.0, 1.0], &[0.5, 0.5], 8);
    let out = train_plda(&vs, &labels, 10).unwrap();
    let m = &out.model;
    assert!((&m.between_cov - m.between_cov.transpose()).amax() < 1e-10);
    assert!((&m.within_cov - m.within_cov.transpose()).amax() < 1e-10);
    assert!(m.within_cov.clone().cholesky().is_some());
    let (_, total) = cov_of(&vs);
    // B soaks up (almost) all of the variability
    assert!((m.between_cov.trace() + m.within_cov.trace() - total.trace()).abs() < 0.05 * total.trace());
    assert!(train_plda(&vs[..1], &labels[..1], 3).is_err());
}

#[test]
fn plda_prefers_same_direction() {
    let model = PldaModel::new(
        DVector::zeros(2),
        DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 10.0])),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let v = DVector::from_vec(vec![1.5, -0.5]);
    assert!(score_plda(&model, &v, &v).unwrap() > score_plda(&model, &v, &(-&v)).unwrap());
    let a = DVector::from_vec(vec![0.3, 2.0]);
    assert!((model.score(&a, &v).unwrap() - model.score(&v, &a).unwrap()).abs() < 1e-10);
}

fn rotation(d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal)).qr().q()
}

#[test]
fn backend_scores_are_rotation_invariant() {
    let (vs, labels) = two_cov_data(20, 6, &[3.0, 2.0, 1.0, 0.5, 0.2], &[1.0, 0.8, 0.6, 0.4, 0.2], 9);
    let rot = rotation(5, 10);
    let rotated: Vec<DVector<f64>> = vs.iter().map(|v| &rot * v).collect();
    for lda_dim in [0, 3] {
        let cfg = BackendConfig {
            lda_dim,
            plda_iters: 5,
            length_normalize: true,
        };
        let a = Backend::fit(&vs, &labels, &cfg).unwrap().backend;
        let b = Backend::fit(&rotated, &labels, &cfg).unwrap().backend;
        for i in (0..vs.len()).step_by(7) {
            for j in (1..vs.len()).step_by(11) {
                let sa = a.score(&vs[i], &vs[j]).unwrap();
                let sb = b.score(&rotated[i], &rotated[j]).unwrap();
                assert!((sa - sb).abs() < 1e-8, "lda {lda_dim}: {sa} vs {sb}");
            }
        }
    }
}

#[test]
fn targets_outscore_nontargets() {
    let (vs, labels) = two_cov_data(30, 4, &[2.0, 2.0, 2.0, 1.0], &[1.0, 1.0, 1.0, 1.0], 11);
    let fit = Backend::fit(&vs, &labels, &BackendConfig::default()).unwrap();
    for ll in fit.plda_log_likelihoods.windows(2) {
        assert!(ll[1] >= ll[0] - 1e-8 * ll[0].abs());
    }
    let backend = fit.backend;
    let (mut tp, mut tc, mut np, mut nc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let p = backend.score(&vs[i], &vs[j]).unwrap();
            let c = cosine_score(&backend.transform(&vs[i]).unwrap(), &backend.transform(&vs[j]).unwrap()).unwrap();
            if labels[i] == labels[j] {
                tp.push(p);
                tc.push(c);
            } else {
                np.push(p);
                nc.push(c);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&tp) > mean(&np));
    assert!(mean(&tc) > mean(&nc));
}

#[test]
fn backend_file_round_trip() {
    let (vs, labels) = two_cov_data(10, 3, &[2.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 12);
    let backend = Backend::fit(&vs, &labels, &BackendConfig::default()).unwrap().backend;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backend.json");
    backend.save(&path).unwrap();
    let back = Backend::load(&path).unwrap();
    assert_eq!(back, backend);
    assert_eq!(back.score(&vs[0], &vs[1]).unwrap(), backend.score(&vs[0], &vs[1]).unwrap());
}
