//! Total-variability model training and i-vector extraction.
//!
//! Every extractor reduces to the same solve,
//! `E[w] = (I + T' N~ T)^-1 T' F~`, on normalized statistics; the variants only
//! differ in how `N~` and `F~` are accumulated (see [`crate::stats`]).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_all, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::frontend::{FeatureMatrix, UncertaintySequence};
use crate::linalg::{chol_logdet, cholesky_with_ridge};
use crate::matrix::RowMatrix;
use crate::stats::{
    accumulate_fa_uncertain, accumulate_proposed, accumulate_standard, accumulate_ubm_uncertain,
    normalize_stats, BwStats, NormalizedStats, StatsVariant,
};
use crate::ubm::GmmModel;
use crate::VAR_FLOOR;

pub const TV_MAGIC: &[u8; 4] = b"UVTV";
const TV_VERSION: u32 = 1;
/// Relative ridge for the extractor's posterior precision.
const SOLVE_RIDGE: f64 = 1e-10;
/// Relative ridge for the M-step normal equations.
const MSTEP_RIDGE: f64 = 1e-8;
const T_INIT_STD: f64 = 0.01;

/// Total-variability matrix `T` (`CF x D`, row `c*F + f`) and the diagonal
/// residual covariance `V` (`C x F`).
#[derive(Debug, Clone, PartialEq)]
pub struct TvModel {
    t: RowMatrix,
    v_diag: RowMatrix,
}

impl TvModel {
    pub fn new(t: RowMatrix, v_diag: RowMatrix) -> Result<Self> {
        let (c, f) = v_diag.shape();
        if c == 0 || f == 0 || t.rows() != c * f || t.cols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "T is {:?}, V is {c}x{f}",
                t.shape()
            )));
        }
        if t.cols() > t.rows() {
            return Err(Error::InvalidArgument(format!(
                "i-vector dim {} exceeds supervector dim {}",
                t.cols(),
                t.rows()
            )));
        }
        if !(t.is_finite() && v_diag.is_finite()) {
            return Err(Error::NonFinite("total-variability model".into()));
        }
        if let Some(v) = v_diag.as_slice().iter().find(|&&v| v < VAR_FLOOR) {
            return Err(Error::InvalidArgument(format!(
                "residual variance {v} below floor {VAR_FLOOR}"
            )));
        }
        Ok(Self { t, v_diag })
    }

    /// Model whose residual covariance is the UBM covariance.
    pub fn with_ubm_residual(t: RowMatrix, gmm: &GmmModel) -> Result<Self> {
        Self::new(t, gmm.vars().clone())
    }

    pub fn num_components(&self) -> usize {
        self.v_diag.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.v_diag.cols()
    }

    pub fn ivector_dim(&self) -> usize {
        self.t.cols()
    }

    pub fn t(&self) -> &RowMatrix {
        &self.t
    }

    pub fn v_diag(&self) -> &RowMatrix {
        &self.v_diag
    }

    /// `T` as a dense `nalgebra` matrix.
    pub fn t_dense(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.t.rows(), self.t.cols(), self.t.as_slice())
    }

    /// Rows of `T` belonging to component `c`, as an `F x D` matrix.
    pub fn block(&self, c: usize) -> DMatrix<f64> {
        let (f, d) = (self.feature_dim(), self.ivector_dim());
        DMatrix::from_row_slice(f, d, &self.t.as_slice()[c * f * d..(c + 1) * f * d])
    }

    fn check_stats(&self, c: usize, f: usize) -> Result<()> {
        if (c, f) != self.v_diag.shape() {
            return Err(Error::DimensionMismatch(format!(
                "statistics are {c}x{f}, model is {:?}",
                self.v_diag.shape()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.encode().write_to(path)
    }

    fn encode(&self) -> Encoder {
        let mut e = Encoder::new(TV_MAGIC, TV_VERSION);
        e.u64(self.num_components() as u64);
        e.u64(self.feature_dim() as u64);
        e.u64(self.ivector_dim() as u64);
        e.f64s(self.t.as_slice());
        e.f64s(self.v_diag.as_slice());
        e
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(buf, TV_MAGIC, TV_VERSION)?;
        let c = d.usize()?;
        let f = d.usize()?;
        let dim = d.usize()?;
        let cf = c
            .checked_mul(f)
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let tn = cf
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let t = RowMatrix::from_vec(cf, dim, d.f64s(tn)?)?;
        let v = RowMatrix::from_vec(c, f, d.f64s(cf)?)?;
        d.finish()?;
        Self::new(t, v)
    }

    /// Reads a `UVTV` file: magic, version `u32`, `C`, `F`, `D` as `u64`,
    /// `T` row-major, then `V` row-major.
    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_all(path)?)
    }
}

/// Posterior mean of the total factors, optionally with the posterior
/// precision `I + T' N~ T`.
#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    pub utt_id: String,
    pub mean: DVector<f64>,
    pub precision: Option<DMatrix<f64>>,
}

impl IVector {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `(I + T' N~ T, T' F~)` accumulated row by row of `T`.
fn assemble(tv: &TvModel, n_tilde: &[f64], f_tilde: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let d = tv.ivector_dim();
    let mut prec = vec![0.0; d * d];
    let mut lin = vec![0.0; d];
    for (r, row) in tv.t.row_iter().enumerate() {
        let (n, fv) = (n_tilde[r], f_tilde[r]);
        if fv != 0.0 {
            for (l, t) in lin.iter_mut().zip(row) {
                *l += fv * t;
            }
        }
        if n == 0.0 {
            continue;
        }
        for i in 0..d {
            let a = n * row[i];
            let dst = &mut prec[i * d..i * d + i + 1];
            for (p, t) in dst.iter_mut().zip(&row[..=i]) {
                *p += a * t;
            }
        }
    }
    let mut p = DMatrix::identity(d, d);
    for i in 0..d {
        for j in 0..=i {
            p[(i, j)] += prec[i * d + j];
            p[(j, i)] = p[(i, j)];
        }
    }
    (p, DVector::from_vec(lin))
}

fn solve(p: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = cholesky_with_ridge(p, SOLVE_RIDGE)?;
    Ok(chol.solve(b))
}

/// Posterior expectation of `w` from normalized statistics.
pub fn extract(tv: &TvModel, stats: &NormalizedStats) -> Result<IVector> {
    tv.check_stats(stats.num_components(), stats.dim())?;
    if !stats.is_finite() {
        return Err(Error::NonFinite(format!(
            "statistics of utterance {}",
            stats.utt_id
        )));
    }
    let (p, b) = assemble(tv, stats.n_tilde.as_slice(), stats.f_tilde.as_slice());
    let mean = solve(&p, &b)?;
    Ok(IVector {
        utt_id: stats.utt_id.clone(),
        mean,
        precision: Some(p),
    })
}

/// Same posterior mean assembled in the un-normalized form
/// `(I + T' V^-1 N T)^-1 T' V^-1 F`, block by block with dense products.
/// Kept as an independent route for cross-checking [`extract`].
pub fn extract_unnormalized(tv: &TvModel, stats: &BwStats) -> Result<IVector> {
    tv.check_stats(stats.num_components(), stats.dim())?;
    let d = tv.ivector_dim();
    let mut p = DMatrix::<f64>::identity(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for c in 0..tv.num_components() {
        let tc = tv.block(c);
        let v_inv = DMatrix::from_diagonal(&DVector::from_iterator(
            tv.feature_dim(),
            tv.v_diag.row(c).iter().map(|v| 1.0 / v),
        ));
        let n_c = DMatrix::<f64>::identity(tv.feature_dim(), tv.feature_dim()) * stats.n[c];
        let f_c = DVector::from_row_slice(stats.f_hat.row(c));
        p += tc.transpose() * &v_inv * n_c * &tc;
        b += tc.transpose() * &v_inv * f_c;
    }
    let mean = solve(&p, &b)?;
    Ok(IVector {
        utt_id: stats.utt_id.clone(),
        mean,
        precision: Some(p),
    })
}

pub fn extract_baseline(tv: &TvModel, gmm: &GmmModel, fm: &FeatureMatrix) -> Result<IVector> {
    let stats = accumulate_standard(gmm, fm)?;
    extract(tv, &normalize_stats(&stats, tv.v_diag())?)
}

/// Biased posteriors, uncertainty in the factor-analysis solve only.
pub fn extract_fa_uncertain(
    tv: &TvModel,
    gmm: &GmmModel,
    fm: &FeatureMatrix,
    unc: &UncertaintySequence,
) -> Result<IVector> {
    extract(tv, &accumulate_fa_uncertain(gmm, tv.v_diag(), fm, unc)?)
}

/// Unbiased statistics plugged into the ordinary solve.
pub fn extract_ubm_uncertain(
    tv: &TvModel,
    gmm: &GmmModel,
    fm: &FeatureMatrix,
    unc: &UncertaintySequence,
) -> Result<IVector> {
    let stats = accumulate_ubm_uncertain(gmm, fm, unc)?;
    extract(tv, &normalize_stats(&stats, tv.v_diag())?)
}

/// Uncertainty propagated through both the UBM and the factor-analysis model.
pub fn extract_proposed(
    tv: &TvModel,
    gmm: &GmmModel,
    fm: &FeatureMatrix,
    unc: &UncertaintySequence,
) -> Result<IVector> {
    extract(tv, &accumulate_proposed(gmm, tv.v_diag(), fm, unc)?)
}

/// Dispatches on the statistics variant. `Standard` ignores `unc`.
pub fn extract_variant(
    variant: StatsVariant,
    tv: &TvModel,
    gmm: &GmmModel,
    fm: &FeatureMatrix,
    unc: Option<&UncertaintySequence>,
) -> Result<IVector> {
    let need = || {
        unc.ok_or_else(|| {
            Error::InvalidArgument(format!("{variant} extraction needs an uncertainty sequence"))
        })
    };
    match variant {
        StatsVariant::Standard => extract_baseline(tv, gmm, fm),
        StatsVariant::FaUncertain => extract_fa_uncertain(tv, gmm, fm, need()?),
        StatsVariant::UbmUncertain => extract_ubm_uncertain(tv, gmm, fm, need()?),
        StatsVariant::Proposed => extract_proposed(tv, gmm, fm, need()?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvConfig {
    pub ivector_dim: usize,
    pub em_iters: usize,
    pub seed: u64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            ivector_dim: 32,
            em_iters: 10,
            seed: 0,
        }
    }
}

/// Trained model plus the EM objective for every iterate `T_0 .. T_iters`.
///
/// The objective is the log marginal likelihood of the statistics up to
/// terms that do not depend on `T`:
/// `sum_u ( -0.5 ln|P_u| + 0.5 b_u' P_u^-1 b_u )`.
#[derive(Debug, Clone)]
pub struct TvTraining {
    pub model: TvModel,
    pub objective: Vec<f64>,
}

struct Posterior {
    mean: DVector<f64>,
    second: DMatrix<f64>,
    objective: f64,
}

fn posterior(tv: &TvModel, ns: &NormalizedStats) -> Result<Posterior> {
    let (p, b) = assemble(tv, ns.n_tilde.as_slice(), ns.f_tilde.as_slice());
    let chol = cholesky_with_ridge(&p, SOLVE_RIDGE)?;
    let mean = chol.solve(&b);
    let cov = chol.inverse();
    let objective = -0.5 * chol_logdet(&chol) + 0.5 * b.dot(&mean);
    let second = cov + &mean * mean.transpose();
    Ok(Posterior {
        mean,
        second,
        objective,
    })
}

/// Sum of the EM objective over `stats` for a fixed model.
pub fn tv_objective(tv: &TvModel, stats: &[BwStats]) -> Result<f64> {
    let parts: Vec<f64> = stats
        .par_iter()
        .map(|s| Ok(posterior(tv, &normalize_stats(s, tv.v_diag())?)?.objective))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// EM training of `T` with `V` held at the UBM covariances.
///
/// E-step: per-utterance posterior mean and second moment of `w`. M-step:
/// for each component `T_c = (sum_u F_c w') (sum_u N_c E[ww'])^-1`.
pub fn train_tv(stats: &[BwStats], gmm: &GmmModel, cfg: &TvConfig) -> Result<TvTraining> {
    let (c, f, d) = (gmm.num_components(), gmm.dim(), cfg.ivector_dim);
    if d == 0 || d > c * f {
        return Err(Error::InvalidArgument(format!(
            "i-vector dim {d} must be in 1..={}",
            c * f
        )));
    }
    if stats.is_empty() || stats.len() * 4 < d {
        return Err(Error::InsufficientData(format!(
            "{} utterances for i-vector dim {d} (need at least {})",
            stats.len(),
            d.div_ceil(4).max(1)
        )));
    }
    for s in stats {
        if s.num_components() != c || s.dim() != f {
            return Err(Error::DimensionMismatch(format!(
                "statistics of {} are {}x{}, UBM is {c}x{f}",
                s.utt_id,
                s.num_components(),
                s.dim()
            )));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, T_INIT_STD).expect("valid std");
    let init: Vec<f64> = (0..c * f * d).map(|_| normal.sample(&mut rng)).collect();
    let mut tv = TvModel::with_ubm_residual(RowMatrix::from_vec(c * f, d, init)?, gmm)?;

    let normalized: Vec<NormalizedStats> = stats
        .iter()
        .map(|s| normalize_stats(s, gmm.vars()))
        .collect::<Result<_>>()?;

    let mut history = Vec::with_capacity(cfg.em_iters + 1);
    for it in 0..=cfg.em_iters {
        let posts: Vec<Posterior> = normalized
            .par_iter()
            .map(|ns| posterior(&tv, ns))
            .collect::<Result<_>>()?;
        let objective: f64 = posts.iter().map(|p| p.objective).sum();
        debug!("TV EM iteration {it}: objective {objective:.6}");
        history.push(objective);
        if it == cfg.em_iters {
            break;
        }

        // accumulation order is the utterance order, independent of threads
        let mut a = vec![DMatrix::<f64>::zeros(d, d); c];
        let mut cacc = RowMatrix::zeros(c * f, d);
        for (s, post) in stats.iter().zip(&posts) {
            for (k, ak) in a.iter_mut().enumerate() {
                if s.n[k] != 0.0 {
                    *ak += &post.second * s.n[k];
                }
            }
            for r in 0..c * f {
                let fv = s.f_hat.as_slice()[r];
                if fv == 0.0 {
                    continue;
                }
                for (dst, m) in cacc.row_mut(r).iter_mut().zip(post.mean.iter()) {
                    *dst += fv * m;
                }
            }
        }
        let blocks: Vec<DMatrix<f64>> = (0..c)
            .into_par_iter()
            .map(|k| {
                let chol = cholesky_with_ridge(&a[k], MSTEP_RIDGE).map_err(|e| {
                    warn!("TV M-step for component {k} failed: {e}");
                    e
                })?;
                let rhs = DMatrix::from_row_slice(f, d, &cacc.as_slice()[k * f * d..(k + 1) * f * d]);
                // T_c' = A_c^-1 C_c'
                Ok(chol.solve(&rhs.transpose()).transpose())
            })
            .collect::<Result<_>>()?;
        let mut t = RowMatrix::zeros(c * f, d);
        for (k, blk) in blocks.iter().enumerate() {
            for i in 0..f {
                for j in 0..d {
                    t.set(k * f + i, j, blk[(i, j)]);
                }
            }
        }
        tv = TvModel::with_ubm_residual(t, gmm)?;
    }
    Ok(TvTraining {
        model: tv,
        objective: history,
    })
}

/// Writes `utt_id,w_0,...,w_{D-1}` rows with a header.
pub fn write_ivectors(path: &Path, ivectors: &[IVector]) -> Result<()> {
    let d = ivectors.first().map_or(0, IVector::dim);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("utt_id");
    for i in 0..d {
        header.push_str(&format!(",w_{i}"));
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for iv in ivectors {
        if iv.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "i-vector {} has dim {}, expected {d}",
                iv.utt_id,
                iv.dim()
            )));
        }
        let mut line = iv.utt_id.clone();
        for v in iv.mean.iter() {
            // shortest representation that round-trips exactly
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ivectors(path: &Path) -> Result<Vec<IVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty i-vector file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let d = header.split(',').count().saturating_sub(1);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts.next().unwrap_or_default().to_string();
        let vals: Vec<f64> = parts
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != d {
            return Err(Error::Format(format!(
                "line {}: {} values, header declares {d}",
                i + 2,
                vals.len()
            )));
        }
        out.push(IVector {
            utt_id: id,
            mean: DVector::from_vec(vals),
            precision: None,
        });
    }
    Ok(out)
}
