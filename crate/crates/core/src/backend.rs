//! I-vector post-processing (centering, whitening, length normalization,
//! LDA) and trial scoring with a two-covariance Gaussian PLDA or cosine
//! similarity.

use std::collections::BTreeMap;
use std::path::Path;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, cholesky_with_ridge, sorted_eigen, symmetrize};

const WHITEN_RIDGE: f64 = 1e-8;
const LDA_RIDGE: f64 = 1e-8;
/// Floor on within-class eigenvalues, relative to the average total variance.
const PLDA_WITHIN_FLOOR: f64 = 1e-6;

fn check_vectors(vs: &[DVector<f64>], min: usize) -> Result<usize> {
    if vs.len() < min {
        return Err(Error::InsufficientData(format!(
            "need at least {min} vectors, got {}",
            vs.len()
        )));
    }
    let d = vs[0].len();
    if d == 0 {
        return Err(Error::InvalidArgument("zero-dimensional vectors".into()));
    }
    for v in vs {
        if v.len() != d {
            return Err(Error::DimensionMismatch(format!("{} vs {d}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("input vector".into()));
        }
    }
    Ok(d)
}

fn mean_cov(vs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = vs[0].len();
    let n = vs.len() as f64;
    let mean = vs.iter().fold(DVector::zeros(d), |a, v| a + v) / n;
    let mut cov = DMatrix::zeros(d, d);
    for v in vs {
        let c = v - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    (mean, cov / n)
}

/// `x -> transform * (x - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenTransform {
    pub mean: DVector<f64>,
    pub transform: DMatrix<f64>,
}

/// Centering plus symmetric inverse square root of the training covariance.
pub fn fit_whitener(vs: &[DVector<f64>]) -> Result<WhitenTransform> {
    let d = check_vectors(vs, 2)?;
    let (mean, cov) = mean_cov(vs);
    let (vals, vecs) = sorted_eigen(&cov);
    let ridge_level = WHITEN_RIDGE * cov.trace() / d as f64;
    let ridge = if vals[d - 1] <= ridge_level {
        warn!("whitening covariance is near singular; adding ridge {ridge_level:.3e}");
        ridge_level
    } else {
        0.0
    };
    let inv_sqrt = DVector::from_iterator(
        d,
        vals.iter().map(|&l| 1.0 / (l.max(0.0) + ridge).max(f64::MIN_POSITIVE).sqrt()),
    );
    let transform = &vecs * DMatrix::from_diagonal(&inv_sqrt) * vecs.transpose();
    Ok(WhitenTransform { mean, transform })
}

impl WhitenTransform {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.transform * (v - &self.mean)
    }
}

pub fn apply_whitener(w: &WhitenTransform, v: &DVector<f64>) -> DVector<f64> {
    w.apply(v)
}

pub fn length_normalize(v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidArgument(
            "cannot length-normalize a zero or non-finite vector".into(),
        ));
    }
    Ok(v / n)
}

/// Cosine similarity.
pub fn cosine_score(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    Ok(a.dot(b) / (na * nb))
}

/// Groups vectors by label in first-appearance order.
fn group<'a>(vs: &'a [DVector<f64>], labels: &[String]) -> Result<Vec<Vec<&'a DVector<f64>>>> {
    if vs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vectors, {} labels",
            vs.len(),
            labels.len()
        )));
    }
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<&DVector<f64>>> = Vec::new();
    for (v, l) in vs.iter().zip(labels) {
        let k = *index.entry(l.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(v);
    }
    Ok(groups)
}

/// Projection onto the leading generalized eigenvectors of
/// `S_b v = lambda S_w v`, normalized so that `P' S_w P = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    /// `D x R`
    pub projection: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl LdaTransform {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.projection.transpose() * v
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }
}

/// Within- and between-class scatter, both divided by the number of vectors.
pub fn scatter_matrices(vs: &[DVector<f64>], labels: &[String]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = check_vectors(vs, 1)?;
    let groups = group(vs, labels)?;
    let n = vs.len() as f64;
    let (mean, _) = mean_cov(vs);
    let mut sw = DMatrix::zeros(d, d);
    let mut sb = DMatrix::zeros(d, d);
    for g in &groups {
        let gm = g.iter().fold(DVector::zeros(d), |a, v| a + *v) / g.len() as f64;
        for v in g {
            let c = *v - &gm;
            sw.ger(1.0 / n, &c, &c, 1.0);
        }
        let c = &gm - &mean;
        sb.ger(g.len() as f64 / n, &c, &c, 1.0);
    }
    Ok((sw, sb))
}

pub fn fit_lda(vs: &[DVector<f64>], labels: &[String], rank: usize) -> Result<LdaTransform> {
    let d = check_vectors(vs, 2)?;
    let classes = group(vs, labels)?.len();
    let max_rank = d.min(classes.saturating_sub(1));
    if rank == 0 || rank > max_rank {
        return Err(Error::InvalidArgument(format!(
            "LDA rank {rank} must be in 1..={max_rank} (dim {d}, {classes} classes)"
        )));
    }
    let (sw, sb) = scatter_matrices(vs, labels)?;
    let chol = cholesky_with_ridge(&sw, LDA_RIDGE)?;
    let l = chol.l();
    // M = L^-1 S_b L^-T
    let linv_sb = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::Numerical("singular within-class factor".into()))?;
    let mut m = l
        .solve_lower_triangular(&linv_sb.transpose())
        .ok_or_else(|| Error::Numerical("singular within-class factor".into()))?;
    symmetrize(&mut m);
    let (vals, vecs) = sorted_eigen(&m);
    let lt = l.transpose();
    let mut projection = DMatrix::zeros(d, rank);
    for k in 0..rank {
        let u = vecs.column(k).into_owned();
        let mut p = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numerical("singular within-class factor".into()))?;
        if let Some(first) = p.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                p = -p;
            }
        }
        projection.set_column(k, &p);
    }
    Ok(LdaTransform {
        projection,
        eigenvalues: vals.rows(0, rank).into_owned(),
    })
}

/// Two-covariance PLDA: `x = mu + s + e`, `s ~ N(0, B)`, `e ~ N(0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    pub between_cov: DMatrix<f64>,
    pub within_cov: DMatrix<f64>,
    scorer: PairScorer,
}

/// Precomputed quadratic form of the log-likelihood ratio:
/// `llr = c + 0.5 a'Qa + 0.5 b'Qb + a'Pb` on centered inputs.
#[derive(Debug, Clone, PartialEq)]
struct PairScorer {
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    constant: f64,
}

impl PairScorer {
    fn new(b: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Self> {
        let r = b.nrows();
        let mut tot = b + w;
        symmetrize(&mut tot);
        let tot_chol = cholesky_with_ridge(&tot, 1e-12)?;
        let tot_inv = tot_chol.inverse();
        let mut joint = DMatrix::zeros(2 * r, 2 * r);
        joint.view_mut((0, 0), (r, r)).copy_from(&tot);
        joint.view_mut((r, r), (r, r)).copy_from(&tot);
        joint.view_mut((0, r), (r, r)).copy_from(b);
        joint.view_mut((r, 0), (r, r)).copy_from(b);
        let joint_chol = cholesky_with_ridge(&joint, 1e-12)?;
        let ji = joint_chol.inverse();
        let mut j11 = (ji.view((0, 0), (r, r)) + ji.view((r, r), (r, r))) * 0.5;
        symmetrize(&mut j11);
        let mut j12 = ji.view((0, r), (r, r)).into_owned();
        symmetrize(&mut j12);
        let mut q = tot_inv - j11;
        symmetrize(&mut q);
        Ok(Self {
            q,
            p: -j12,
            constant: chol_logdet(&tot_chol) - 0.5 * chol_logdet(&joint_chol),
        })
    }
}

impl PldaModel {
    pub fn new(mu: DVector<f64>, between_cov: DMatrix<f64>, within_cov: DMatrix<f64>) -> Result<Self> {
        let r = mu.len();
        if between_cov.shape() != (r, r) || within_cov.shape() != (r, r) {
            return Err(Error::DimensionMismatch(format!(
                "mu {r}, B {:?}, W {:?}",
                between_cov.shape(),
                within_cov.shape()
            )));
        }
        let mut between_cov = between_cov;
        let mut within_cov = within_cov;
        symmetrize(&mut between_cov);
        symmetrize(&mut within_cov);
        if within_cov.clone().cholesky().is_none() {
            return Err(Error::Numerical(
                "within-class covariance is not positive definite".into(),
            ));
        }
        let scorer = PairScorer::new(&between_cov, &within_cov)?;
        Ok(Self {
            mu,
            between_cov,
            within_cov,
            scorer,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Same-speaker vs different-speaker log-likelihood ratio.
    pub fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        if enroll.len() != self.dim() || test.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model dim {}, inputs {} and {}",
                self.dim(),
                enroll.len(),
                test.len()
            )));
        }
        if enroll.iter().chain(test.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("PLDA score input".into()));
        }
        let a = enroll - &self.mu;
        let b = test - &self.mu;
        let s = &self.scorer;
        Ok(s.constant
            + 0.5 * a.dot(&(&s.q * &a))
            + 0.5 * b.dot(&(&s.q * &b))
            + 0.5 * (a.dot(&(&s.p * &b)) + b.dot(&(&s.p * &a))))
    }
}

pub fn score_plda(model: &PldaModel, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
    model.score(enroll, test)
}

/// Whitened coordinates for one EM iteration: `W = L L'`,
/// `L^-1 B L^-T = U diag(lambda) U'`.
struct WhitenedModel {
    l: DMatrix<f64>,
    logdet_w: f64,
    u: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl WhitenedModel {
    fn new(b: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky_with_ridge(w, 1e-12)?;
        let l = chol.l();
        let x = l
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::Numerical("singular within factor".into()))?;
        let mut m = l
            .solve_lower_triangular(&x.transpose())
            .ok_or_else(|| Error::Numerical("singular within factor".into()))?;
        symmetrize(&mut m);
        let (lambda, u) = sorted_eigen(&m);
        let lambda = lambda.map(|v| v.max(0.0));
        Ok(Self {
            logdet_w: chol_logdet(&chol),
            l,
            u,
            lambda,
        })
    }

    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.l.solve_lower_triangular(v).expect("non-singular factor")
    }
}

/// Training output: the model and the data log-likelihood of every iterate.
#[derive(Debug, Clone)]
pub struct PldaTraining {
    pub model: PldaModel,
    pub log_likelihoods: Vec<f64>,
}

struct SpeakerPosterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// One E-step: per-speaker posteriors of `s` and the total log-likelihood.
fn plda_e_step(
    groups: &[Vec<&DVector<f64>>],
    mu: &DVector<f64>,
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(Vec<SpeakerPosterior>, f64)> {
    let r = mu.len();
    let wm = WhitenedModel::new(b, w)?;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut ll = 0.0;
    let mut posts = Vec::with_capacity(groups.len());
    for g in groups {
        let n = g.len() as f64;
        let mut sum = DVector::zeros(r);
        let mut quad = 0.0;
        for v in g {
            let c = *v - mu;
            let z = wm.whiten(&c);
            quad += z.norm_squared();
            sum += c;
        }
        let z = wm.whiten(&sum);
        let zu = wm.u.transpose() * &z;
        let shrink = wm.lambda.map(|l| l / (1.0 + n * l));
        let logdet = wm.lambda.iter().map(|l| (1.0 + n * l).ln()).sum::<f64>();
        let explained: f64 = zu.iter().zip(shrink.iter()).map(|(x, s)| x * x * s).sum();
        ll += -0.5 * (n * r as f64 * ln2pi + n * wm.logdet_w + logdet) - 0.5 * quad + 0.5 * explained;
        // posterior of s: L U diag(shrink) U' (z) and L U diag(shrink) U' L'
        let lu = &wm.l * &wm.u;
        let mean = &lu * zu.component_mul(&shrink);
        let cov = &lu * DMatrix::from_diagonal(&shrink) * lu.transpose();
        posts.push(SpeakerPosterior { mean, cov });
    }
    Ok((posts, ll))
}

fn floor_within(w: &mut DMatrix<f64>, floor: f64) {
    let (vals, vecs) = sorted_eigen(w);
    if vals[vals.len() - 1] >= floor {
        return;
    }
    debug!("flooring within-class covariance eigenvalues at {floor:.3e}");
    let clamped = vals.map(|v| v.max(floor));
    *w = &vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose();
    symmetrize(w);
}

/// EM for the two-covariance model. Initialized from the within- and
/// between-class scatter; every iteration updates `mu`, `B` and `W` jointly.
pub fn train_plda(vs: &[DVector<f64>], labels: &[String], iters: usize) -> Result<PldaTraining> {
    let d = check_vectors(vs, 2)?;
    let groups = group(vs, labels)?;
    if groups.len() < 2 {
        return Err(Error::InsufficientData(
            "PLDA needs at least two speakers".into(),
        ));
    }
    let n = vs.len() as f64;
    let (mut mu, total) = mean_cov(vs);
    let floor = PLDA_WITHIN_FLOOR * total.trace() / d as f64;
    let (mut w, mut b) = scatter_matrices(vs, labels)?;
    floor_within(&mut w, floor);

    let mut history = Vec::with_capacity(iters + 1);
    for it in 0..=iters {
        let (posts, ll) = plda_e_step(&groups, &mu, &b, &w)?;
        debug!("PLDA EM iteration {it}: log-likelihood {ll:.6}");
        history.push(ll);
        if it == iters {
            break;
        }
        let mut new_b = DMatrix::zeros(d, d);
        let mut new_mu = DVector::zeros(d);
        for (g, p) in groups.iter().zip(&posts) {
            new_b += &p.cov + &p.mean * p.mean.transpose();
            for v in g {
                new_mu += *v - &p.mean;
            }
        }
        new_b /= groups.len() as f64;
        new_mu /= n;
        let mut new_w = DMatrix::zeros(d, d);
        for (g, p) in groups.iter().zip(&posts) {
            for v in g {
                let c = *v - &new_mu - &p.mean;
                new_w.ger(1.0, &c, &c, 1.0);
                new_w += &p.cov;
            }
        }
        new_w /= n;
        symmetrize(&mut new_b);
        symmetrize(&mut new_w);
        floor_within(&mut new_w, floor);
        mu = new_mu;
        b = new_b;
        w = new_w;
    }
    Ok(PldaTraining {
        model: PldaModel::new(mu, b, w)?,
        log_likelihoods: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// LDA output dimension; 0 disables LDA. Capped at `speakers - 1`.
    pub lda_dim: usize,
    pub plda_iters: usize,
    pub length_normalize: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            lda_dim: 24,
            plda_iters: 10,
            length_normalize: true,
        }
    }
}

/// The full post-processing chain plus PLDA.
#[derive(Debug, Clone, PartialEq)]
pub struct Backend {
    pub whitener: WhitenTransform,
    pub length_normalize: bool,
    pub lda: Option<LdaTransform>,
    pub plda: PldaModel,
}

#[derive(Debug, Clone)]
pub struct BackendTraining {
    pub backend: Backend,
    pub plda_log_likelihoods: Vec<f64>,
}

impl Backend {
    pub fn fit(vs: &[DVector<f64>], labels: &[String], cfg: &BackendConfig) -> Result<BackendTraining> {
        let whitener = fit_whitener(vs)?;
        let stage1 = |v: &DVector<f64>| -> Result<DVector<f64>> {
            let x = whitener.apply(v);
            if cfg.length_normalize {
                length_normalize(&x)
            } else {
                Ok(x)
            }
        };
        let white: Vec<DVector<f64>> = vs.iter().map(stage1).collect::<Result<_>>()?;
        let classes = group(vs, labels)?.len();
        let lda = if cfg.lda_dim == 0 {
            None
        } else {
            let cap = white[0].len().min(classes.saturating_sub(1));
            let rank = if cfg.lda_dim > cap {
                warn!(
                    "requested LDA dim {} exceeds the achievable rank {cap} ({classes} classes); capping",
                    cfg.lda_dim
                );
                cap
            } else {
                cfg.lda_dim
            };
            Some(fit_lda(&white, labels, rank)?)
        };
        let projected: Vec<DVector<f64>> = match &lda {
            Some(l) => white.iter().map(|v| l.apply(v)).collect(),
            None => white,
        };
        let plda = train_plda(&projected, labels, cfg.plda_iters)?;
        Ok(BackendTraining {
            backend: Backend {
                whitener,
                length_normalize: cfg.length_normalize,
                lda,
                plda: plda.model,
            },
            plda_log_likelihoods: plda.log_likelihoods,
        })
    }

    /// Maps a raw i-vector into the PLDA space.
    pub fn transform(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self.whitener.apply(v);
        if self.length_normalize {
            x = length_normalize(&x)?;
        }
        Ok(match &self.lda {
            Some(l) => l.apply(&x),
            None => x,
        })
    }

    pub fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        self.plda.score(&self.transform(enroll)?, &self.transform(test)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = BackendFile {
            format_version: 1,
            whiten_mean: self.whitener.mean.iter().copied().collect(),
            whiten_transform: rows(&self.whitener.transform),
            length_normalize: self.length_normalize,
            lda_projection: self.lda.as_ref().map(|l| rows(&l.projection)),
            lda_eigenvalues: self.lda.as_ref().map(|l| l.eigenvalues.iter().copied().collect()),
            plda_mu: self.plda.mu.iter().copied().collect(),
            plda_between: rows(&self.plda.between_cov),
            plda_within: rows(&self.plda.within_cov),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: BackendFile = serde_json::from_str(&text)?;
        if f.format_version != 1 {
            return Err(Error::UnsupportedVersion(f.format_version));
        }
        let lda = match (f.lda_projection, f.lda_eigenvalues) {
            (Some(p), Some(e)) => Some(LdaTransform {
                projection: from_rows(&p)?,
                eigenvalues: DVector::from_vec(e),
            }),
            (None, None) => None,
            _ => return Err(Error::Format("incomplete LDA section".into())),
        };
        Ok(Backend {
            whitener: WhitenTransform {
                mean: DVector::from_vec(f.whiten_mean),
                transform: from_rows(&f.whiten_transform)?,
            },
            length_normalize: f.length_normalize,
            lda,
            plda: PldaModel::new(
                DVector::from_vec(f.plda_mu),
                from_rows(&f.plda_between)?,
                from_rows(&f.plda_within)?,
            )?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BackendFile {
    format_version: u32,
    whiten_mean: Vec<f64>,
    whiten_transform: Vec<Vec<f64>>,
    length_normalize: bool,
    lda_projection: Option<Vec<Vec<f64>>>,
    lda_eigenvalues: Option<Vec<f64>>,
    plda_mu: Vec<f64>,
    plda_between: Vec<Vec<f64>>,
    plda_within: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(r: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = r.len();
    let m = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != m) {
        return Err(Error::Format("ragged matrix".into()));
    }
    Ok(DMatrix::from_row_iterator(n, m, r.iter().flatten().copied()))
}
