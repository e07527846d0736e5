#![allow(dead_code)]

use ivup::frontend::{FeatureMatrix, UncertaintySequence};
use ivup::ubm::GmmModel;
use ivup::RowMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha20Rng) -> RowMatrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    RowMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_gmm(c: usize, f: usize, rng: &mut ChaCha20Rng) -> GmmModel {
    let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let weights = weights.iter().map(|w| w / total).collect();
    let means = normal_matrix(c, f, 2.0, rng);
    let vars = RowMatrix::from_vec(c, f, (0..c * f).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
    GmmModel::new(weights, means, vars).unwrap()
}

pub fn random_features(id: &str, l: usize, f: usize, rng: &mut ChaCha20Rng) -> FeatureMatrix {
    FeatureMatrix::new(id, normal_matrix(l, f, 2.0, rng)).unwrap()
}

pub fn random_uncertainty(id: &str, l: usize, f: usize, rng: &mut ChaCha20Rng) -> UncertaintySequence {
    let data = (0..l * f).map(|_| rng.random_range(0.0..2.0)).collect();
    UncertaintySequence::new(id, RowMatrix::from_vec(l, f, data).unwrap()).unwrap()
}

pub fn scalar_features(values: &[f64]) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    FeatureMatrix::from_rows("u", &rows).unwrap()
}

pub fn scalar_gmm(weights: &[f64], means: &[f64], vars: &[f64]) -> GmmModel {
    let col = |v: &[f64]| RowMatrix::from_vec(v.len(), 1, v.to_vec()).unwrap();
    GmmModel::new(weights.to_vec(), col(means), col(vars)).unwrap()
}
