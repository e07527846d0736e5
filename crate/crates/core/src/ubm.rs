//! Diagonal-covariance GMM universal background model: frame posteriors
//! (optionally with observation uncertainty) and EM training.

use std::f64::consts::PI;
use std::path::Path;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{FeatureMatrix, UncertaintySequence};
use crate::matrix::RowMatrix;
use crate::VAR_FLOOR;

const FORMAT_VERSION: u32 = 1;
/// Frames per EM work unit. Fixed so accumulation order never depends on the
/// number of worker threads.
const CHUNK_FRAMES: usize = 4096;
/// Components whose soft count falls below this are reseeded.
const MIN_COMPONENT_OCCUPANCY: f64 = 1e-3;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: RowMatrix,
    vars: RowMatrix,
    inv_vars: RowMatrix,
    /// `ln pi_c - 0.5 * sum_f ln(2 pi var_cf)`
    log_norm: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: RowMatrix, vars: RowMatrix) -> Result<Self> {
        let c = weights.len();
        if c == 0 || means.rows() != c || vars.shape() != means.shape() || means.cols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} weights, means {:?}, variances {:?}",
                c,
                means.shape(),
                vars.shape()
            )));
        }
        if !(means.is_finite() && vars.is_finite() && weights.iter().all(|w| w.is_finite())) {
            return Err(Error::NonFinite("GMM parameters".into()));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("negative mixture weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if let Some(v) = vars.as_slice().iter().find(|&&v| v < VAR_FLOOR) {
            return Err(Error::InvalidArgument(format!(
                "variance {v} below floor {VAR_FLOOR}"
            )));
        }
        let mut inv_vars = vars.clone();
        inv_vars.as_mut_slice().iter_mut().for_each(|v| *v = 1.0 / *v);
        let log_norm = (0..c)
            .map(|k| {
                weights[k].ln() - 0.5 * vars.row(k).iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>()
            })
            .collect();
        Ok(Self {
            weights,
            means,
            vars,
            inv_vars,
            log_norm,
        })
    }

    /// Renormalizes weights and floors variances before validating.
    pub fn new_floored(mut weights: Vec<f64>, means: RowMatrix, mut vars: RowMatrix) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        vars.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.max(VAR_FLOOR));
        Self::new(weights, means, vars)
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &RowMatrix {
        &self.means
    }

    pub fn vars(&self) -> &RowMatrix {
        &self.vars
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        self.means.row(c)
    }

    pub fn var(&self, c: usize) -> &[f64] {
        self.vars.row(c)
    }

    /// Weighted average of component means.
    pub fn global_mean(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for (c, w) in self.weights.iter().enumerate() {
            for (gi, m) in g.iter_mut().zip(self.mean(c)) {
                *gi += w * m;
            }
        }
        g
    }

    /// Per-dimension variance of the mixture as a whole.
    pub fn global_var(&self) -> Vec<f64> {
        let g = self.global_mean();
        let mut v = vec![0.0; self.dim()];
        for (c, w) in self.weights.iter().enumerate() {
            for (f, vi) in v.iter_mut().enumerate() {
                let d = self.means.get(c, f) - g[f];
                *vi += w * (self.vars.get(c, f) + d * d);
            }
        }
        v
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let w = order.iter().map(|&i| self.weights[i]).collect();
        let m = RowMatrix::from_rows(&order.iter().map(|&i| self.mean(i).to_vec()).collect::<Vec<_>>())?;
        let v = RowMatrix::from_rows(&order.iter().map(|&i| self.var(i).to_vec()).collect::<Vec<_>>())?;
        Self::new(w, m, v)
    }

    /// Per-component log joint `ln pi_c + ln N(y | m_c, var_c + extra)` into
    /// `out`; returns the frame log-likelihood and leaves normalized
    /// posteriors in `out`.
    ///
    /// A missing or all-zero `extra` takes the cached-constant path, so zero
    /// uncertainty reproduces the plain posteriors bit for bit.
    pub(crate) fn frame_posterior(&self, y: &[f64], extra: Option<&[f64]>, out: &mut [f64]) -> f64 {
        let extra = extra.filter(|e| e.iter().any(|&v| v != 0.0));
        for (c, slot) in out.iter_mut().enumerate() {
            let mean = self.means.row(c);
            *slot = match extra {
                None => {
                    let q: f64 = y
                        .iter()
                        .zip(mean)
                        .zip(self.inv_vars.row(c))
                        .map(|((y, m), iv)| (y - m) * (y - m) * iv)
                        .sum();
                    self.log_norm[c] - 0.5 * q
                }
                Some(e) => {
                    let mut acc = 0.0;
                    for (((y, m), v), s) in y.iter().zip(mean).zip(self.vars.row(c)).zip(e) {
                        let tot = v + s;
                        acc += (2.0 * PI * tot).ln() + (y - m) * (y - m) / tot;
                    }
                    self.weights[c].ln() - 0.5 * acc
                }
            };
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }

    fn check_dim(&self, fm: &FeatureMatrix) -> Result<()> {
        if fm.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} dims, model has {}",
                fm.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Total log-likelihood of the voiced frames.
    pub fn log_likelihood(&self, fm: &FeatureMatrix) -> Result<f64> {
        self.check_dim(fm)?;
        let mut buf = vec![0.0; self.num_components()];
        Ok(fm
            .voiced_indices()
            .map(|t| self.frame_posterior(fm.frame(t), None, &mut buf))
            .sum())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = GmmFile {
            format_version: FORMAT_VERSION,
            num_components: self.num_components(),
            feature_dim: self.dim(),
            weights: self.weights.clone(),
            means: self.means.to_rows(),
            variances: self.vars.to_rows(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GmmFile = serde_json::from_str(&text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(file.format_version));
        }
        let means = RowMatrix::from_rows(&file.means)?;
        let vars = RowMatrix::from_rows(&file.variances)?;
        if means.shape() != (file.num_components, file.feature_dim) {
            return Err(Error::Format(format!(
                "declared {}x{} but means are {:?}",
                file.num_components,
                file.feature_dim,
                means.shape()
            )));
        }
        Self::new(file.weights, means, vars)
    }
}

#[derive(Serialize, Deserialize)]
struct GmmFile {
    format_version: u32,
    num_components: usize,
    feature_dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// Component posteriors for every frame of an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePosteriors {
    pub gammas: RowMatrix,
    pub log_likelihoods: Vec<f64>,
}

/// Standard component posteriors `gamma_t(c)` for every frame.
pub fn posteriors(gmm: &GmmModel, fm: &FeatureMatrix) -> Result<FramePosteriors> {
    gmm.check_dim(fm)?;
    let c = gmm.num_components();
    let mut gammas = RowMatrix::zeros(fm.num_frames(), c);
    let log_likelihoods = (0..fm.num_frames())
        .map(|t| gmm.frame_posterior(fm.frame(t), None, gammas.row_mut(t)))
        .collect();
    Ok(FramePosteriors {
        gammas,
        log_likelihoods,
    })
}

/// Uncertainty-aware posteriors: each component is evaluated with its
/// covariance inflated by the frame's uncertainty, `N(y | m_c, var_c + unc_t)`.
pub fn posteriors_uncertain(
    gmm: &GmmModel,
    fm: &FeatureMatrix,
    unc: &UncertaintySequence,
) -> Result<FramePosteriors> {
    gmm.check_dim(fm)?;
    unc.check_matches(fm)?;
    let c = gmm.num_components();
    let mut gammas = RowMatrix::zeros(fm.num_frames(), c);
    let log_likelihoods = (0..fm.num_frames())
        .map(|t| gmm.frame_posterior(fm.frame(t), Some(unc.frame(t)), gammas.row_mut(t)))
        .collect();
    Ok(FramePosteriors {
        gammas,
        log_likelihoods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UbmConfig {
    pub num_components: usize,
    pub em_iters: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for UbmConfig {
    fn default() -> Self {
        Self {
            num_components: 64,
            em_iters: 10,
            kmeans_iters: 2,
            seed: 0,
        }
    }
}

/// Trained model plus the data log-likelihood before each EM iteration and
/// after the last one (`em_iters + 1` values).
#[derive(Debug, Clone)]
pub struct UbmTraining {
    pub model: GmmModel,
    pub log_likelihoods: Vec<f64>,
}

fn gather_voiced(features: &[FeatureMatrix]) -> Result<RowMatrix> {
    let dim = features
        .first()
        .map(FeatureMatrix::dim)
        .ok_or_else(|| Error::InsufficientData("no training utterances".into()))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for fm in features {
        if fm.dim() != dim {
            return Err(Error::DimensionMismatch(format!(
                "utterance {} has {} dims, expected {dim}",
                fm.utt_id,
                fm.dim()
            )));
        }
        for t in fm.voiced_indices() {
            data.extend_from_slice(fm.frame(t));
            rows += 1;
        }
    }
    RowMatrix::from_vec(rows, dim, data)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &RowMatrix, y: &[f64]) -> (usize, f64) {
    centers
        .row_iter()
        .enumerate()
        .map(|(k, c)| (k, sq_dist(c, y)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_pp(data: &RowMatrix, k: usize, rng: &mut ChaCha20Rng) -> RowMatrix {
    let n = data.rows();
    let mut centers = RowMatrix::zeros(k, data.cols());
    centers.row_mut(0).copy_from_slice(data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = data.row_iter().map(|y| sq_dist(y, centers.row(0))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            d2.iter()
                .position(|&d| {
                    r -= d;
                    r <= 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(j).copy_from_slice(data.row(pick));
        let c = centers.row(j).to_vec();
        d2.par_iter_mut()
            .zip(data.as_slice().par_chunks_exact(data.cols()))
            .for_each(|(d, y)| *d = d.min(sq_dist(y, &c)));
    }
    centers
}

fn lloyd_step(data: &RowMatrix, centers: &mut RowMatrix, rng: &mut ChaCha20Rng) {
    let (k, f) = centers.shape();
    let assign: Vec<usize> = data
        .as_slice()
        .par_chunks_exact(f)
        .map(|y| nearest(centers, y).0)
        .collect();
    let mut sums = RowMatrix::zeros(k, f);
    let mut counts = vec![0usize; k];
    for (y, &a) in data.row_iter().zip(&assign) {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(y) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] == 0 {
            let pick = rng.random_range(0..data.rows());
            debug!("k-means cluster {j} empty; reseeding from frame {pick}");
            centers.row_mut(j).copy_from_slice(data.row(pick));
        } else {
            for (c, s) in centers.row_mut(j).iter_mut().zip(sums.row(j)) {
                *c = s / counts[j] as f64;
            }
        }
    }
}

/// Sufficient statistics of one EM pass; additive over frame partitions.
#[derive(Debug, Clone)]
pub struct GmmAccumulator {
    pub occupancy: Vec<f64>,
    pub first: RowMatrix,
    pub second: RowMatrix,
    pub log_likelihood: f64,
    pub frames: usize,
}

impl GmmAccumulator {
    pub fn zeros(c: usize, f: usize) -> Self {
        Self {
            occupancy: vec![0.0; c],
            first: RowMatrix::zeros(c, f),
            second: RowMatrix::zeros(c, f),
            log_likelihood: 0.0,
            frames: 0,
        }
    }

    pub fn merge(&mut self, other: &GmmAccumulator) -> Result<()> {
        if self.occupancy.len() != other.occupancy.len() {
            return Err(Error::DimensionMismatch("accumulator sizes differ".into()));
        }
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *a += b;
        }
        self.first.add_assign(&other.first)?;
        self.second.add_assign(&other.second)?;
        self.log_likelihood += other.log_likelihood;
        self.frames += other.frames;
        Ok(())
    }

    /// E-step over rows of `data`.
    pub fn accumulate(gmm: &GmmModel, data: &[f64]) -> Self {
        let (c, f) = (gmm.num_components(), gmm.dim());
        let mut acc = Self::zeros(c, f);
        let mut post = vec![0.0; c];
        for y in data.chunks_exact(f) {
            acc.log_likelihood += gmm.frame_posterior(y, None, &mut post);
            acc.frames += 1;
            for (k, &g) in post.iter().enumerate() {
                if g < 1e-300 {
                    continue;
                }
                acc.occupancy[k] += g;
                let first = acc.first.row_mut(k);
                for (s, v) in first.iter_mut().zip(y) {
                    *s += g * v;
                }
                let second = acc.second.row_mut(k);
                for (s, v) in second.iter_mut().zip(y) {
                    *s += g * v * v;
                }
            }
        }
        acc
    }
}

fn e_step(gmm: &GmmModel, data: &RowMatrix) -> GmmAccumulator {
    let f = data.cols();
    let parts: Vec<GmmAccumulator> = data
        .as_slice()
        .par_chunks(CHUNK_FRAMES * f)
        .map(|chunk| GmmAccumulator::accumulate(gmm, chunk))
        .collect();
    let mut total = GmmAccumulator::zeros(gmm.num_components(), f);
    for p in &parts {
        total.merge(p).expect("same model dims");
    }
    total
}

fn column_var(data: &RowMatrix) -> Vec<f64> {
    let n = data.rows() as f64;
    let f = data.cols();
    let mut mean = vec![0.0; f];
    for y in data.row_iter() {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f];
    for y in data.row_iter() {
        for ((s, v), m) in var.iter_mut().zip(y).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    var
}

fn m_step(
    acc: &GmmAccumulator,
    data: &RowMatrix,
    global_var: &[f64],
    rng: &mut ChaCha20Rng,
) -> Result<GmmModel> {
    let (c, f) = acc.first.shape();
    let mut weights = vec![0.0; c];
    let mut means = RowMatrix::zeros(c, f);
    let mut vars = RowMatrix::zeros(c, f);
    for k in 0..c {
        let n = acc.occupancy[k];
        if n < MIN_COMPONENT_OCCUPANCY {
            let pick = rng.random_range(0..data.rows());
            warn!("UBM component {k} is empty (occupancy {n:.2e}); reseeding from frame {pick}");
            means.row_mut(k).copy_from_slice(data.row(pick));
            vars.row_mut(k).copy_from_slice(global_var);
            weights[k] = 1.0 / data.rows() as f64;
            continue;
        }
        weights[k] = n / acc.frames as f64;
        for j in 0..f {
            let m = acc.first.get(k, j) / n;
            means.set(k, j, m);
            vars.set(k, j, acc.second.get(k, j) / n - m * m);
        }
    }
    GmmModel::new_floored(weights, means, vars)
}

/// Trains a diagonal GMM on the voiced frames of `features`.
///
/// Seeding is k-means++ followed by `kmeans_iters` Lloyd iterations; the
/// hard clusters initialize weights, means and variances, then `em_iters`
/// EM iterations follow. Variances are floored after every M-step.
pub fn train_ubm(features: &[FeatureMatrix], cfg: &UbmConfig) -> Result<UbmTraining> {
    let k = cfg.num_components;
    if k == 0 {
        return Err(Error::InvalidArgument("UBM needs at least one component".into()));
    }
    let data = gather_voiced(features)?;
    if data.rows() < 10 * k {
        return Err(Error::InsufficientData(format!(
            "{} voiced frames for {k} components (need at least {})",
            data.rows(),
            10 * k
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let global_var = column_var(&data);

    let mut centers = kmeans_pp(&data, k, &mut rng);
    for _ in 0..cfg.kmeans_iters {
        lloyd_step(&data, &mut centers, &mut rng);
    }
    let f = data.cols();
    let assign: Vec<usize> = data
        .as_slice()
        .par_chunks_exact(f)
        .map(|y| nearest(&centers, y).0)
        .collect();
    let mut acc = GmmAccumulator::zeros(k, f);
    for (y, &j) in data.row_iter().zip(&assign) {
        acc.occupancy[j] += 1.0;
        for (s, v) in acc.first.row_mut(j).iter_mut().zip(y) {
            *s += v;
        }
        for (s, v) in acc.second.row_mut(j).iter_mut().zip(y) {
            *s += v * v;
        }
    }
    acc.frames = data.rows();
    let mut model = m_step(&acc, &data, &global_var, &mut rng)?;

    let mut history = Vec::with_capacity(cfg.em_iters + 1);
    for it in 0..cfg.em_iters {
        let acc = e_step(&model, &data);
        debug!(
            "UBM EM iteration {it}: avg log-likelihood {:.6}",
            acc.log_likelihood / acc.frames as f64
        );
        history.push(acc.log_likelihood);
        model = m_step(&acc, &data, &global_var, &mut rng)?;
    }
    history.push(e_step(&model, &data).log_likelihood);
    Ok(UbmTraining {
        model,
        log_likelihoods: history,
    })
}
