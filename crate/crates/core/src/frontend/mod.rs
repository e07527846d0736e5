//! Acoustic front-end: MFCC extraction, deltas, energy VAD, CMVN and the
//! feature/uncertainty file formats.

mod deltas;
mod io;
mod mfcc;
mod normalize;

pub use deltas::{append_deltas, append_uncertainty_deltas};
pub use io::{read_features, read_uncertainty, write_features, write_uncertainty};
pub use mfcc::{extract_mfcc, MfccConfig};
pub use normalize::{cmvn, energy_vad, scale_uncertainty, CMVN_VAR_FLOOR, VAD_THRESHOLD_DB};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

/// Where a feature matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Synthetic,
    Mfcc,
}

impl FeatureKind {
    pub(crate) fn tag(self) -> u32 {
        match self {
            FeatureKind::Synthetic => 0,
            FeatureKind::Mfcc => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(FeatureKind::Synthetic),
            1 => Ok(FeatureKind::Mfcc),
            t => Err(Error::Format(format!("unknown feature kind tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub frame_rate_hz: f64,
    pub kind: FeatureKind,
    /// Column holding the log-energy, when present.
    pub log_energy_dim: Option<usize>,
}

impl Default for FeatureMeta {
    fn default() -> Self {
        Self {
            frame_rate_hz: 100.0,
            kind: FeatureKind::Synthetic,
            log_energy_dim: None,
        }
    }
}

/// An utterance as an `L x F` sequence of feature frames plus a VAD mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: RowMatrix,
    vad_mask: Vec<bool>,
    pub utt_id: String,
    pub meta: FeatureMeta,
}

impl FeatureMatrix {
    /// Builds a matrix with every frame marked voiced.
    pub fn new(utt_id: impl Into<String>, frames: RowMatrix) -> Result<Self> {
        let mask = vec![true; frames.rows()];
        Self::with_mask(utt_id, frames, mask, FeatureMeta::default())
    }

    pub fn with_mask(
        utt_id: impl Into<String>,
        frames: RowMatrix,
        vad_mask: Vec<bool>,
        meta: FeatureMeta,
    ) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::InvalidArgument(
                "feature matrix needs at least one frame".into(),
            ));
        }
        if frames.cols() == 0 {
            return Err(Error::InvalidArgument(
                "feature matrix needs at least one dimension".into(),
            ));
        }
        if vad_mask.len() != frames.rows() {
            return Err(Error::DimensionMismatch(format!(
                "VAD mask has {} entries for {} frames",
                vad_mask.len(),
                frames.rows()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("feature frames contain NaN or Inf".into()));
        }
        if let Some(d) = meta.log_energy_dim {
            if d >= frames.cols() {
                return Err(Error::DimensionMismatch(format!(
                    "log-energy column {d} out of range for {} dims",
                    frames.cols()
                )));
            }
        }
        Ok(Self {
            frames,
            vad_mask,
            utt_id: utt_id.into(),
            meta,
        })
    }

    pub fn from_rows(utt_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(utt_id, RowMatrix::from_rows(rows)?)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &RowMatrix {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn vad_mask(&self) -> &[bool] {
        &self.vad_mask
    }

    pub fn num_voiced(&self) -> usize {
        self.vad_mask.iter().filter(|&&v| v).count()
    }

    /// Indices of voiced frames in time order.
    pub fn voiced_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.vad_mask
            .iter()
            .enumerate()
            .filter_map(|(t, &v)| v.then_some(t))
    }

    pub fn set_vad_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.num_frames() {
            return Err(Error::DimensionMismatch(format!(
                "VAD mask has {} entries for {} frames",
                mask.len(),
                self.num_frames()
            )));
        }
        self.vad_mask = mask;
        Ok(())
    }

    /// Replaces the frame values, keeping id, mask and metadata.
    pub fn with_frames(&self, frames: RowMatrix) -> Result<Self> {
        if frames.shape() != self.frames.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                frames.shape(),
                self.frames.shape()
            )));
        }
        Self::with_mask(
            self.utt_id.clone(),
            frames,
            self.vad_mask.clone(),
            self.meta.clone(),
        )
    }

    /// Frames `range` as a new matrix with the matching slice of the mask.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let f = self.dim();
        let data = self.frames.as_slice()[range.start * f..range.end * f].to_vec();
        Self::with_mask(
            self.utt_id.clone(),
            RowMatrix::from_vec(range.len(), f, data)?,
            self.vad_mask[range].to_vec(),
            self.meta.clone(),
        )
    }
}

/// Per-frame diagonal uncertainty covariances aligned to a [`FeatureMatrix`].
/// Row `t` holds the diagonal of the error covariance at frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySequence {
    diag_vars: RowMatrix,
    pub utt_id: String,
}

impl UncertaintySequence {
    pub fn new(utt_id: impl Into<String>, diag_vars: RowMatrix) -> Result<Self> {
        if diag_vars.rows() == 0 {
            return Err(Error::InvalidArgument(
                "uncertainty sequence needs at least one frame".into(),
            ));
        }
        if !diag_vars.is_finite() {
            return Err(Error::NonFinite("uncertainty contains NaN or Inf".into()));
        }
        let f = diag_vars.cols();
        if let Some(i) = diag_vars.as_slice().iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeUncertainty {
                frame: i / f,
                dim: i % f,
            });
        }
        Ok(Self {
            diag_vars,
            utt_id: utt_id.into(),
        })
    }

    pub fn zeros(utt_id: impl Into<String>, frames: usize, dim: usize) -> Self {
        Self {
            diag_vars: RowMatrix::zeros(frames, dim),
            utt_id: utt_id.into(),
        }
    }

    /// Same value on every entry; mainly for limit tests.
    pub fn constant(utt_id: impl Into<String>, frames: usize, dim: usize, value: f64) -> Result<Self> {
        Self::new(utt_id, RowMatrix::filled(frames, dim, value))
    }

    pub fn num_frames(&self) -> usize {
        self.diag_vars.rows()
    }

    pub fn dim(&self) -> usize {
        self.diag_vars.cols()
    }

    pub fn diag_vars(&self) -> &RowMatrix {
        &self.diag_vars
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.diag_vars.row(t)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let f = self.dim();
        let data = self.diag_vars.as_slice()[range.start * f..range.end * f].to_vec();
        Self::new(self.utt_id.clone(), RowMatrix::from_vec(range.len(), f, data)?)
    }

    pub(crate) fn check_matches(&self, fm: &FeatureMatrix) -> Result<()> {
        if self.diag_vars.shape() != fm.frames().shape() {
            return Err(Error::DimensionMismatch(format!(
                "uncertainty shape {:?} vs features {:?}",
                self.diag_vars.shape(),
                fm.frames().shape()
            )));
        }
        Ok(())
    }
}
