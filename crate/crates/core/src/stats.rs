//! Baum-Welch sufficient statistics in the four flavours that separate the
//! baseline extractor from the uncertainty-propagation methods.
//!
//! | variant        | posteriors                  | per-frame weighting  | residual        |
//! |----------------|-----------------------------|----------------------|-----------------|
//! | `Standard`     | `N(y | m_c, S_c)`           | none                 | `y - m_c`       |
//! | `FaUncertain`  | `N(y | m_c, S_c)`           | `(V_c + U_t)^-1`     | `y - m_c`       |
//! | `UbmUncertain` | `N(y | m_c, S_c + U_t)`     | none                 | `W_ct (y - m_c)`|
//! | `Proposed`     | `N(y | m_c, S_c + U_t)`     | `(V_c + U_t)^-1`     | `W_ct (y - m_c)`|
//!
//! with `W_ct = S_c (S_c + U_t)^-1` the per-component Wiener gain and `U_t` the
//! frame's diagonal uncertainty. Everything is diagonal, so all of the above
//! is elementwise.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_all, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::frontend::{FeatureMatrix, UncertaintySequence};
use crate::matrix::RowMatrix;
use crate::ubm::GmmModel;

pub const STATS_MAGIC: &[u8; 4] = b"UVST";
const STATS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsVariant {
    Standard,
    FaUncertain,
    UbmUncertain,
    Proposed,
}

impl StatsVariant {
    pub const ALL: [StatsVariant; 4] = [
        StatsVariant::Standard,
        StatsVariant::FaUncertain,
        StatsVariant::UbmUncertain,
        StatsVariant::Proposed,
    ];

    fn unbiased_posteriors(self) -> bool {
        matches!(self, StatsVariant::UbmUncertain | StatsVariant::Proposed)
    }

    fn frame_normalized(self) -> bool {
        matches!(self, StatsVariant::FaUncertain | StatsVariant::Proposed)
    }

    fn wiener(self) -> bool {
        matches!(self, StatsVariant::UbmUncertain | StatsVariant::Proposed)
    }

    fn tag(self) -> u8 {
        match self {
            StatsVariant::Standard => 0,
            StatsVariant::FaUncertain => 1,
            StatsVariant::UbmUncertain => 2,
            StatsVariant::Proposed => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown statistics variant tag {tag}")))
    }
}

impl fmt::Display for StatsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatsVariant::Standard => "standard",
            StatsVariant::FaUncertain => "fa-uncertain",
            StatsVariant::UbmUncertain => "ubm-uncertain",
            StatsVariant::Proposed => "proposed",
        })
    }
}

/// Zeroth-order counts `N_c` and centralized first-order sums `F_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BwStats {
    pub variant: StatsVariant,
    pub n: Vec<f64>,
    pub f_hat: RowMatrix,
    pub utt_id: String,
}

/// Statistics premultiplied by the inverse residual covariance. `n_tilde`
/// holds the diagonal of each `F x F` block, so it is `C x F` like `f_tilde`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedStats {
    pub variant: StatsVariant,
    pub n_tilde: RowMatrix,
    pub f_tilde: RowMatrix,
    pub utt_id: String,
}

impl BwStats {
    pub fn zeros(variant: StatsVariant, c: usize, f: usize) -> Self {
        Self {
            variant,
            n: vec![0.0; c],
            f_hat: RowMatrix::zeros(c, f),
            utt_id: String::new(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.n.len()
    }

    pub fn dim(&self) -> usize {
        self.f_hat.cols()
    }

    pub fn total_count(&self) -> f64 {
        self.n.iter().sum()
    }
}

impl NormalizedStats {
    pub fn zeros(variant: StatsVariant, c: usize, f: usize) -> Self {
        Self {
            variant,
            n_tilde: RowMatrix::zeros(c, f),
            f_tilde: RowMatrix::zeros(c, f),
            utt_id: String::new(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.n_tilde.rows()
    }

    pub fn dim(&self) -> usize {
        self.n_tilde.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.n_tilde.is_finite() && self.f_tilde.is_finite()
    }
}

/// Wiener gain `S_c / (S_c + U_t)` per dimension.
pub fn wiener_gain(sigma_c: &[f64], sigma_bar_t: &[f64]) -> Result<Vec<f64>> {
    if sigma_c.len() != sigma_bar_t.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} dims",
            sigma_c.len(),
            sigma_bar_t.len()
        )));
    }
    sigma_c
        .iter()
        .zip(sigma_bar_t)
        .enumerate()
        .map(|(f, (&s, &u))| {
            if !(s > 0.0) {
                Err(Error::InvalidArgument(format!(
                    "component variance must be positive, got {s} at dim {f}"
                )))
            } else if u < 0.0 {
                Err(Error::NegativeUncertainty { frame: 0, dim: f })
            } else {
                Ok(s / (s + u))
            }
        })
        .collect()
}

fn check_model(gmm: &GmmModel, fm: &FeatureMatrix) -> Result<()> {
    if fm.dim() != gmm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "features have {} dims, UBM has {}",
            fm.dim(),
            gmm.dim()
        )));
    }
    if fm.num_voiced() == 0 {
        return Err(Error::InsufficientData(format!(
            "utterance {} has no voiced frames",
            fm.utt_id
        )));
    }
    Ok(())
}

fn check_residual(gmm: &GmmModel, residual_var: &RowMatrix) -> Result<()> {
    if residual_var.shape() != gmm.means().shape() {
        return Err(Error::DimensionMismatch(format!(
            "residual covariance {:?} vs UBM {:?}",
            residual_var.shape(),
            gmm.means().shape()
        )));
    }
    if residual_var.as_slice().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "residual variances must be positive".into(),
        ));
    }
    Ok(())
}

/// Raw accumulators for one pass over an utterance (or a slice of one).
///
/// Frames with all-zero uncertainty go to `n`/`f_hat` and are divided by `V`
/// once at the end; frames with uncertainty are normalized individually into
/// `n_unc`/`f_unc`. With no uncertainty anywhere the frame-normalized
/// variants therefore reproduce the baseline bit for bit.
struct Accumulation {
    n: Vec<f64>,
    f_hat: RowMatrix,
    n_unc: RowMatrix,
    f_unc: RowMatrix,
}

fn accumulate(
    variant: StatsVariant,
    gmm: &GmmModel,
    residual_var: &RowMatrix,
    fm: &FeatureMatrix,
    unc: Option<&UncertaintySequence>,
) -> Result<Accumulation> {
    check_model(gmm, fm)?;
    if let Some(u) = unc {
        u.check_matches(fm)?;
    }
    let (c, f) = (gmm.num_components(), gmm.dim());
    let mut acc = Accumulation {
        n: vec![0.0; c],
        f_hat: RowMatrix::zeros(c, f),
        n_unc: RowMatrix::zeros(c, f),
        f_unc: RowMatrix::zeros(c, f),
    };
    let mut gamma = vec![0.0; c];
    let mut resid = vec![0.0; f];
    for t in fm.voiced_indices() {
        let y = fm.frame(t);
        let u = unc.map(|u| u.frame(t)).filter(|u| u.iter().any(|&v| v != 0.0));
        let post_extra = if variant.unbiased_posteriors() { u } else { None };
        gmm.frame_posterior(y, post_extra, &mut gamma);
        for (k, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let m = gmm.mean(k);
            for ((r, yv), mv) in resid.iter_mut().zip(y).zip(m) {
                *r = yv - mv;
            }
            let Some(u) = u else {
                acc.n[k] += g;
                for (s, r) in acc.f_hat.row_mut(k).iter_mut().zip(&resid) {
                    *s += g * r;
                }
                continue;
            };
            if variant.wiener() {
                for ((r, s), uv) in resid.iter_mut().zip(gmm.var(k)).zip(u) {
                    *r *= s / (s + uv);
                }
            }
            if variant.frame_normalized() {
                let v = residual_var.row(k);
                for (j, (vv, uv)) in v.iter().zip(u).enumerate() {
                    let w = g / (vv + uv);
                    acc.n_unc.as_mut_slice()[k * f + j] += w;
                    acc.f_unc.as_mut_slice()[k * f + j] += w * resid[j];
                }
            } else {
                acc.n[k] += g;
                for (s, r) in acc.f_hat.row_mut(k).iter_mut().zip(&resid) {
                    *s += g * r;
                }
            }
        }
    }
    Ok(acc)
}

fn check_uncertainty(unc: &UncertaintySequence) -> Result<()> {
    // UncertaintySequence already rejects negatives on construction; this
    // guards against matrices built through crate-internal paths.
    let f = unc.dim();
    if let Some(i) = unc.diag_vars().as_slice().iter().position(|&v| v < 0.0) {
        return Err(Error::NegativeUncertainty {
            frame: i / f,
            dim: i % f,
        });
    }
    Ok(())
}

/// Standard statistics over voiced frames.
pub fn accumulate_standard(gmm: &GmmModel, fm: &FeatureMatrix) -> Result<BwStats> {
    let acc = accumulate(StatsVariant::Standard, gmm, gmm.vars(), fm, None)?;
    Ok(BwStats {
        variant: StatsVariant::Standard,
        n: acc.n,
        f_hat: acc.f_hat,
        utt_id: fm.utt_id.clone(),
    })
}

/// Unbiased statistics: uncertainty-inflated posteriors and Wiener-filtered
/// residuals.
pub fn accumulate_ubm_uncertain(
    gmm: &GmmModel,
    fm: &FeatureMatrix,
    unc: &UncertaintySequence,
) -> Result<BwStats> {
    check_uncertainty(unc)?;
    let acc = accumulate(StatsVariant::UbmUncertain, gmm, gmm.vars(), fm, Some(unc))?;
    Ok(BwStats {
        variant: StatsVariant::UbmUncertain,
        n: acc.n,
        f_hat: acc.f_hat,
        utt_id: fm.utt_id.clone(),
    })
}

fn finish_normalized(
    variant: StatsVariant,
    acc: Accumulation,
    residual_var: &RowMatrix,
    utt_id: &str,
) -> NormalizedStats {
    let raw = BwStats {
        variant,
        n: acc.n,
        f_hat: acc.f_hat,
        utt_id: utt_id.to_string(),
    };
    let mut out = divide_by_residual(&raw, residual_var);
    // x + 0.0 == x, so frames without uncertainty leave the baseline intact
    out.n_tilde.add_assign(&acc.n_unc).expect("same shape");
    out.f_tilde.add_assign(&acc.f_unc).expect("same shape");
    out
}

/// Biased posteriors with per-frame `(V_c + U_t)^-1` weighting.
pub fn accumulate_fa_uncertain(
    gmm: &GmmModel,
    residual_var: &RowMatrix,
    fm: &FeatureMatrix,
    unc: &UncertaintySequence,
) -> Result<NormalizedStats> {
    check_residual(gmm, residual_var)?;
    check_uncertainty(unc)?;
    let acc = accumulate(StatsVariant::FaUncertain, gmm, residual_var, fm, Some(unc))?;
    Ok(finish_normalized(
        StatsVariant::FaUncertain,
        acc,
        residual_var,
        &fm.utt_id,
    ))
}

/// Unbiased posteriors, Wiener-filtered residuals and per-frame
/// `(V_c + U_t)^-1` weighting.
pub fn accumulate_proposed(
    gmm: &GmmModel,
    residual_var: &RowMatrix,
    fm: &FeatureMatrix,
    unc: &UncertaintySequence,
) -> Result<NormalizedStats> {
    check_residual(gmm, residual_var)?;
    check_uncertainty(unc)?;
    let acc = accumulate(StatsVariant::Proposed, gmm, residual_var, fm, Some(unc))?;
    Ok(finish_normalized(
        StatsVariant::Proposed,
        acc,
        residual_var,
        &fm.utt_id,
    ))
}

fn divide_by_residual(stats: &BwStats, residual_var: &RowMatrix) -> NormalizedStats {
    let (c, f) = stats.f_hat.shape();
    let mut n_tilde = RowMatrix::zeros(c, f);
    let mut f_tilde = RowMatrix::zeros(c, f);
    for k in 0..c {
        let v = residual_var.row(k);
        for (j, vv) in v.iter().enumerate() {
            n_tilde.set(k, j, stats.n[k] / vv);
            f_tilde.set(k, j, stats.f_hat.get(k, j) / vv);
        }
    }
    NormalizedStats {
        variant: stats.variant,
        n_tilde,
        f_tilde,
        utt_id: stats.utt_id.clone(),
    }
}

/// `N~_c = N_c V_c^-1`, `F~_c = V_c^-1 F_c`.
pub fn normalize_stats(stats: &BwStats, residual_var: &RowMatrix) -> Result<NormalizedStats> {
    if residual_var.shape() != stats.f_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "residual covariance {:?} vs statistics {:?}",
            residual_var.shape(),
            stats.f_hat.shape()
        )));
    }
    if residual_var.as_slice().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "residual variances must be positive".into(),
        ));
    }
    Ok(divide_by_residual(stats, residual_var))
}

/// Statistics that add over frame partitions.
pub trait Mergeable: Sized {
    fn merge(&self, other: &Self) -> Result<Self>;
}

impl Mergeable for BwStats {
    fn merge(&self, other: &Self) -> Result<Self> {
        if self.variant != other.variant {
            return Err(Error::VariantMismatch(
                self.variant.to_string(),
                other.variant.to_string(),
            ));
        }
        if self.f_hat.shape() != other.f_hat.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.f_hat.shape(),
                other.f_hat.shape()
            )));
        }
        let mut out = self.clone();
        for (a, b) in out.n.iter_mut().zip(&other.n) {
            *a += b;
        }
        out.f_hat.add_assign(&other.f_hat)?;
        Ok(out)
    }
}

impl Mergeable for NormalizedStats {
    fn merge(&self, other: &Self) -> Result<Self> {
        if self.variant != other.variant {
            return Err(Error::VariantMismatch(
                self.variant.to_string(),
                other.variant.to_string(),
            ));
        }
        let mut out = self.clone();
        out.n_tilde.add_assign(&other.n_tilde)?;
        out.f_tilde.add_assign(&other.f_tilde)?;
        Ok(out)
    }
}

pub fn merge_stats<S: Mergeable>(a: &S, b: &S) -> Result<S> {
    a.merge(b)
}

/// Cosine distance `1 - cos` between the flattened first-order statistics.
pub fn fstat_cosine(a: &BwStats, b: &BwStats) -> Result<f64> {
    if a.f_hat.shape() != b.f_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.f_hat.shape(),
            b.f_hat.shape()
        )));
    }
    let (x, y) = (a.f_hat.as_slice(), b.f_hat.as_slice());
    let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine distance of a zero statistics vector".into(),
        ));
    }
    Ok((1.0 - dot / (nx * ny)).clamp(0.0, 2.0))
}

/// Either flavour of statistics, as stored in a `UVST` file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredStats {
    Raw(BwStats),
    Normalized(NormalizedStats),
}

/// Layout: magic `UVST`, version `u32`, tag byte (bit 7 set for normalized
/// statistics, low bits the variant), `C: u64`, `F: u64`, then the zeroth-order
/// array (`C` values raw, `C*F` normalized) and the `C*F` first-order array.
pub fn write_stats(path: &Path, stats: &StoredStats) -> Result<()> {
    encode_stats(stats).write_to(path)
}

fn encode_stats(stats: &StoredStats) -> Encoder {
    let mut e = Encoder::new(STATS_MAGIC, STATS_VERSION);
    match stats {
        StoredStats::Raw(s) => {
            e.u8(s.variant.tag());
            e.u64(s.num_components() as u64);
            e.u64(s.dim() as u64);
            e.f64s(&s.n);
            e.f64s(s.f_hat.as_slice());
        }
        StoredStats::Normalized(s) => {
            e.u8(0x80 | s.variant.tag());
            e.u64(s.num_components() as u64);
            e.u64(s.dim() as u64);
            e.f64s(s.n_tilde.as_slice());
            e.f64s(s.f_tilde.as_slice());
        }
    }
    e
}

fn decode_stats(buf: &[u8], utt_id: String) -> Result<StoredStats> {
    let mut d = Decoder::new(buf, STATS_MAGIC, STATS_VERSION)?;
    let tag = d.u8()?;
    let variant = StatsVariant::from_tag(tag & 0x7f)?;
    let c = d.usize()?;
    let f = d.usize()?;
    let cf = c
        .checked_mul(f)
        .ok_or_else(|| Error::Format(format!("{c}x{f} overflows")))?;
    let out = if tag & 0x80 == 0 {
        let n = d.f64s(c)?;
        let f_hat = RowMatrix::from_vec(c, f, d.f64s(cf)?)?;
        StoredStats::Raw(BwStats {
            variant,
            n,
            f_hat,
            utt_id,
        })
    } else {
        let n_tilde = RowMatrix::from_vec(c, f, d.f64s(cf)?)?;
        let f_tilde = RowMatrix::from_vec(c, f, d.f64s(cf)?)?;
        StoredStats::Normalized(NormalizedStats {
            variant,
            n_tilde,
            f_tilde,
            utt_id,
        })
    };
    d.finish()?;
    Ok(out)
}

pub fn read_stats(path: &Path) -> Result<StoredStats> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_stats(&read_all(path)?, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_gmm() -> GmmModel {
        GmmModel::new(
            vec![1.0],
            RowMatrix::from_rows(&[vec![0.0]]).unwrap(),
            RowMatrix::from_rows(&[vec![1.0]]).unwrap(),
        )
        .unwrap()
    }

    fn one_frame(y: f64) -> FeatureMatrix {
        FeatureMatrix::from_rows("u", &[vec![y]]).unwrap()
    }

    #[test]
    fn wiener_gain_cases() {
        assert_eq!(wiener_gain(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(wiener_gain(&[1.0], &[1.0]).unwrap(), vec![0.5]);
        assert!(wiener_gain(&[1.0], &[1e300]).unwrap()[0] < 1e-299);
        assert!(wiener_gain(&[0.0], &[1.0]).is_err());
        assert!(wiener_gain(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn normalize_by_four() {
        let stats = BwStats {
            variant: StatsVariant::Standard,
            n: vec![2.0],
            f_hat: RowMatrix::from_rows(&[vec![1.0]]).unwrap(),
            utt_id: "u".into(),
        };
        let v = RowMatrix::from_rows(&[vec![4.0]]).unwrap();
        let ns = normalize_stats(&stats, &v).unwrap();
        assert_eq!(ns.n_tilde.as_slice(), &[0.5]);
        assert_eq!(ns.f_tilde.as_slice(), &[0.25]);
        let ones = RowMatrix::from_rows(&[vec![1.0]]).unwrap();
        let same = normalize_stats(&stats, &ones).unwrap();
        assert_eq!(same.n_tilde.as_slice(), &[2.0]);
        assert_eq!(same.f_tilde.as_slice(), &[1.0]);
    }

    #[test]
    fn scalar_hand_cases() {
        let gmm = unit_gmm();
        let fm = one_frame(2.0);
        let unc = UncertaintySequence::constant("u", 1, 1, 1.0).unwrap();
        let v = gmm.vars().clone();

        let fa = accumulate_fa_uncertain(&gmm, &v, &fm, &unc).unwrap();
        assert_eq!(fa.n_tilde.as_slice(), &[0.5]);
        assert_eq!(fa.f_tilde.as_slice(), &[1.0]);

        let ubm = accumulate_ubm_uncertain(&gmm, &fm, &unc).unwrap();
        assert_eq!(ubm.n, vec![1.0]);
        assert_eq!(ubm.f_hat.as_slice(), &[1.0]);

        let prop = accumulate_proposed(&gmm, &v, &fm, &unc).unwrap();
        assert_eq!(prop.n_tilde.as_slice(), &[0.5]);
        assert_eq!(prop.f_tilde.as_slice(), &[0.5]);
    }

    #[test]
    fn huge_uncertainty_removes_evidence() {
        let gmm = unit_gmm();
        let fm = FeatureMatrix::from_rows("u", &[vec![2.0], vec![-1.0], vec![0.5]]).unwrap();
        let unc = UncertaintySequence::constant("u", 3, 1, 1e12).unwrap();
        let v = gmm.vars().clone();
        let fa = accumulate_fa_uncertain(&gmm, &v, &fm, &unc).unwrap();
        assert!(fa.n_tilde.get(0, 0) < 1e-11 && fa.f_tilde.get(0, 0).abs() < 1e-11);
        let ubm = accumulate_ubm_uncertain(&gmm, &fm, &unc).unwrap();
        assert!((ubm.n[0] - 3.0).abs() < 1e-12);
        assert!(ubm.f_hat.get(0, 0).abs() < 1e-11);
    }

    #[test]
    fn single_frame_standard_stats() {
        let gmm = GmmModel::new(
            vec![1.0],
            RowMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            RowMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
        )
        .unwrap();
        let fm = FeatureMatrix::from_rows("u", &[vec![3.0, 0.5]]).unwrap();
        let s = accumulate_standard(&gmm, &fm).unwrap();
        assert_eq!(s.n, vec![1.0]);
        assert_eq!(s.f_hat.as_slice(), &[2.0, 1.5]);
        let sym = FeatureMatrix::from_rows("u", &[vec![2.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let s = accumulate_standard(&gmm, &sym).unwrap();
        assert_eq!(s.f_hat.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn unvoiced_only_utterance_is_rejected() {
        let gmm = unit_gmm();
        let fm = FeatureMatrix::with_mask(
            "u",
            RowMatrix::from_rows(&[vec![1.0]]).unwrap(),
            vec![false],
            Default::default(),
        )
        .unwrap();
        assert!(matches!(
            accumulate_standard(&gmm, &fm),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn merge_rejects_variant_mismatch() {
        let a = BwStats::zeros(StatsVariant::Standard, 2, 3);
        let b = BwStats::zeros(StatsVariant::UbmUncertain, 2, 3);
        assert!(matches!(merge_stats(&a, &b), Err(Error::VariantMismatch(..))));
        let c = NormalizedStats::zeros(StatsVariant::Proposed, 2, 3);
        let d = NormalizedStats::zeros(StatsVariant::FaUncertain, 2, 3);
        assert!(merge_stats(&c, &d).is_err());
    }

    #[test]
    fn cosine_cases() {
        let mk = |v: Vec<f64>| BwStats {
            variant: StatsVariant::Standard,
            n: vec![1.0; 2],
            f_hat: RowMatrix::from_vec(2, 1, v).unwrap(),
            utt_id: String::new(),
        };
        let a = mk(vec![1.0, 2.0]);
        assert!(fstat_cosine(&a, &a).unwrap().abs() < 1e-15);
        assert!((fstat_cosine(&a, &mk(vec![-2.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((fstat_cosine(&a, &mk(vec![-1.0, -2.0])).unwrap() - 2.0).abs() < 1e-15);
        assert!(fstat_cosine(&a, &mk(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn stats_file_round_trip() {
        let raw = StoredStats::Raw(BwStats {
            variant: StatsVariant::UbmUncertain,
            n: vec![1.5, 2.5],
            f_hat: RowMatrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap(),
            utt_id: "x".into(),
        });
        let back = decode_stats(&encode_stats(&raw).into_bytes(), "x".into()).unwrap();
        assert_eq!(back, raw);
        let norm = StoredStats::Normalized(NormalizedStats {
            variant: StatsVariant::Proposed,
            n_tilde: RowMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
            f_tilde: RowMatrix::from_rows(&[vec![3.0, -4.0]]).unwrap(),
            utt_id: "y".into(),
        });
        let bytes = encode_stats(&norm).into_bytes();
        assert_eq!(decode_stats(&bytes, "y".into()).unwrap(), norm);
        assert!(decode_stats(&bytes[..bytes.len() - 3], "y".into()).is_err());
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"UVFM");
        assert!(matches!(
            decode_stats(&bad, "y".into()),
            Err(Error::BadMagic { .. })
        ));
    }
}
