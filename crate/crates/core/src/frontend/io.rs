//! Binary feature and uncertainty files.
//!
//! Layout (little-endian): magic (4 bytes), version `u32`, `L: u64`,
//! `F: u64`, flags `u32`, `L*F` row-major `f64`, then `L` VAD bytes (0/1).
//! Flags: bits 0-7 feature kind, bit 8 set when a log-energy column exists,
//! bits 16-31 its index. Uncertainty files use the same container with a
//! different magic and an all-ones mask.

use std::path::Path;

use super::{FeatureKind, FeatureMatrix, FeatureMeta, UncertaintySequence};
use crate::binio::{read_all, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"UVFM";
pub const UNCERTAINTY_MAGIC: &[u8; 4] = b"UVUN";
const VERSION: u32 = 1;

fn utt_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn encode(magic: &[u8; 4], m: &RowMatrix, mask: &[bool], flags: u32) -> Encoder {
    let mut e = Encoder::new(magic, VERSION);
    e.u64(m.rows() as u64);
    e.u64(m.cols() as u64);
    e.u32(flags);
    e.f64s(m.as_slice());
    let mask: Vec<u8> = mask.iter().map(|&v| u8::from(v)).collect();
    e.bytes(&mask);
    e
}

fn decode(buf: &[u8], magic: &[u8; 4]) -> Result<(RowMatrix, Vec<bool>, u32)> {
    let mut d = Decoder::new(buf, magic, VERSION)?;
    let rows = d.usize()?;
    let cols = d.usize()?;
    let flags = d.u32()?;
    if rows == 0 {
        return Err(Error::Format("file holds zero frames".into()));
    }
    if cols == 0 {
        return Err(Error::Format("file holds zero-dimensional frames".into()));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("{rows}x{cols} overflows")))?;
    let data = d.f64s(n)?;
    let mask = d
        .bytes(rows)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("invalid VAD byte {other}"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    d.finish()?;
    Ok((RowMatrix::from_vec(rows, cols, data)?, mask, flags))
}

fn feature_flags(meta: &FeatureMeta) -> u32 {
    let mut flags = meta.kind.tag();
    if let Some(d) = meta.log_energy_dim {
        flags |= 1 << 8 | (d as u32) << 16;
    }
    flags
}

pub(crate) fn encode_features(fm: &FeatureMatrix) -> Vec<u8> {
    encode(FEATURE_MAGIC, fm.frames(), fm.vad_mask(), feature_flags(&fm.meta)).into_bytes()
}

pub(crate) fn decode_features(buf: &[u8], utt_id: String) -> Result<FeatureMatrix> {
    let (frames, mask, flags) = decode(buf, FEATURE_MAGIC)?;
    let meta = FeatureMeta {
        kind: FeatureKind::from_tag(flags & 0xff)?,
        log_energy_dim: (flags & (1 << 8) != 0).then_some((flags >> 16) as usize),
        ..FeatureMeta::default()
    };
    FeatureMatrix::with_mask(utt_id, frames, mask, meta)
}

pub fn write_features(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    std::fs::write(path, encode_features(fm)).map_err(|e| Error::io(path, e))
}

/// Reads a feature file; the utterance id is the file stem.
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    decode_features(&read_all(path)?, utt_id_from_path(path))
}

pub fn write_uncertainty(path: &Path, unc: &UncertaintySequence) -> Result<()> {
    let mask = vec![true; unc.num_frames()];
    encode(UNCERTAINTY_MAGIC, unc.diag_vars(), &mask, 0).write_to(path)
}

pub fn read_uncertainty(path: &Path) -> Result<UncertaintySequence> {
    let (vars, _, _) = decode(&read_all(path)?, UNCERTAINTY_MAGIC)?;
    UncertaintySequence::new(utt_id_from_path(path), vars)
}
