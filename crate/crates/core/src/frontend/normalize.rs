use super::{FeatureMatrix, UncertaintySequence};
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

/// Frames more than this far below the loudest frame are unvoiced.
pub const VAD_THRESHOLD_DB: f64 = 30.0;

/// Variance floor used by CMVN on (near-)constant dimensions.
pub const CMVN_VAR_FLOOR: f64 = 1e-10;

/// Energy-based VAD on the log-energy column (natural-log units).
///
/// A frame is voiced iff its log-energy exceeds the utterance maximum minus
/// `VAD_THRESHOLD_DB` expressed in nepers of power. The loudest frame is
/// always voiced.
pub fn energy_vad(fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    let dim = fm.meta.log_energy_dim.ok_or_else(|| {
        Error::InvalidArgument("energy VAD needs a log-energy dimension".into())
    })?;
    let threshold = VAD_THRESHOLD_DB / 10.0 * std::f64::consts::LN_10;
    let energies: Vec<f64> = (0..fm.num_frames()).map(|t| fm.frame(t)[dim]).collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mask = energies.iter().map(|&e| e > max - threshold).collect();
    let mut out = fm.clone();
    out.set_vad_mask(mask)?;
    Ok(out)
}

/// Cepstral mean and variance normalization.
///
/// Statistics come from voiced frames only and are applied to every frame.
/// Returns the normalized features and the per-dimension standard deviation
/// that was divided out.
pub fn cmvn(fm: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<f64>)> {
    let n = fm.num_voiced();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "CMVN needs at least 2 voiced frames, got {n}"
        )));
    }
    let f = fm.dim();
    let mut mean = vec![0.0; f];
    for t in fm.voiced_indices() {
        for (m, x) in mean.iter_mut().zip(fm.frame(t)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; f];
    for t in fm.voiced_indices() {
        for ((v, x), m) in var.iter_mut().zip(fm.frame(t)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scales: Vec<f64> = var
        .iter()
        .map(|v| (v / n as f64).max(CMVN_VAR_FLOOR).sqrt())
        .collect();
    let mut out = RowMatrix::zeros(fm.num_frames(), f);
    for t in 0..fm.num_frames() {
        for (((o, x), m), s) in out.row_mut(t).iter_mut().zip(fm.frame(t)).zip(&mean).zip(&scales) {
            *o = (x - m) / s;
        }
    }
    Ok((fm.with_frames(out)?, scales))
}

/// Rescales uncertainties to follow a per-dimension feature scaling
/// `x / scale`: each variance is divided by `scale^2`.
pub fn scale_uncertainty(unc: &UncertaintySequence, scales: &[f64]) -> Result<UncertaintySequence> {
    if scales.len() != unc.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} scales for {} dims",
            scales.len(),
            unc.dim()
        )));
    }
    if let Some(s) = scales.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "uncertainty scale must be positive and finite, got {s}"
        )));
    }
    let inv_sq: Vec<f64> = scales.iter().map(|s| 1.0 / (s * s)).collect();
    let mut out = unc.diag_vars().clone();
    for t in 0..out.rows() {
        for (v, k) in out.row_mut(t).iter_mut().zip(&inv_sq) {
            *v *= k;
        }
    }
    UncertaintySequence::new(unc.utt_id.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FeatureMeta;

    fn with_energy(energies: &[f64]) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = energies.iter().map(|&e| vec![0.1, e]).collect();
        FeatureMatrix::with_mask(
            "u",
            RowMatrix::from_rows(&rows).unwrap(),
            vec![true; rows.len()],
            FeatureMeta {
                log_energy_dim: Some(1),
                ..FeatureMeta::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn equal_energy_frames_are_all_voiced() {
        let out = energy_vad(&with_energy(&[2.0; 5])).unwrap();
        assert!(out.vad_mask().iter().all(|&v| v));
    }

    #[test]
    fn single_loud_frame() {
        // 60 dB below in power is ln(1e6) nepers
        let quiet = 5.0 - 1e6f64.ln();
        let out = energy_vad(&with_energy(&[quiet, quiet, 5.0, quiet])).unwrap();
        assert_eq!(out.vad_mask(), &[false, false, true, false]);
        // just inside the 30 dB window stays voiced
        let near = 5.0 - 1e3f64.ln() + 1e-6;
        let out = energy_vad(&with_energy(&[near, 5.0])).unwrap();
        assert_eq!(out.vad_mask(), &[true, true]);
    }

    #[test]
    fn vad_is_idempotent() {
        let once = energy_vad(&with_energy(&[0.0, -10.0, 3.0, -2.0])).unwrap();
        let twice = energy_vad(&once).unwrap();
        assert_eq!(once.vad_mask(), twice.vad_mask());
    }

    #[test]
    fn vad_needs_energy_column() {
        let fm = FeatureMatrix::from_rows("u", &[vec![1.0]]).unwrap();
        assert!(energy_vad(&fm).is_err());
    }

    #[test]
    fn cmvn_normalizes_voiced_frames() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|t| vec![(t as f64 * 0.37).sin() * 3.0 + 2.0, t as f64])
            .collect();
        let fm = FeatureMatrix::from_rows("u", &rows).unwrap();
        let (out, scales) = cmvn(&fm).unwrap();
        for d in 0..2 {
            let col: Vec<f64> = (0..50).map(|t| out.frame(t)[d]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
        assert!(scales[1] > 1.0);
    }

    #[test]
    fn cmvn_floors_constant_dimension() {
        let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![4.0, t as f64]).collect();
        let (out, scales) = cmvn(&FeatureMatrix::from_rows("u", &rows).unwrap()).unwrap();
        assert!(out.frames().is_finite());
        assert_eq!(out.frame(3)[0], 0.0);
        assert_eq!(scales[0], CMVN_VAR_FLOOR.sqrt());
    }

    #[test]
    fn cmvn_uses_voiced_statistics_only() {
        let rows = vec![vec![1.0], vec![-1.0], vec![100.0]];
        let fm = FeatureMatrix::with_mask(
            "u",
            RowMatrix::from_rows(&rows).unwrap(),
            vec![true, true, false],
            FeatureMeta::default(),
        )
        .unwrap();
        let (out, scales) = cmvn(&fm).unwrap();
        assert_eq!(scales, vec![1.0]);
        assert_eq!(out.frame(2)[0], 100.0);
    }

    #[test]
    fn cmvn_needs_two_voiced_frames() {
        let fm = FeatureMatrix::with_mask(
            "u",
            RowMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            vec![true, false],
            FeatureMeta::default(),
        )
        .unwrap();
        assert!(matches!(cmvn(&fm), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn scale_uncertainty_divides_by_square() {
        let unc = UncertaintySequence::new(
            "u",
            RowMatrix::from_rows(&[vec![4.0, 1.0], vec![0.0, 2.0]]).unwrap(),
        )
        .unwrap();
        let same = scale_uncertainty(&unc, &[1.0, 1.0]).unwrap();
        assert_eq!(same, unc);
        let out = scale_uncertainty(&unc, &[2.0, 1.0]).unwrap();
        assert_eq!(out.frame(0), &[1.0, 1.0]);
        assert_eq!(out.frame(1), &[0.0, 2.0]);
        assert!(scale_uncertainty(&unc, &[0.0, 1.0]).is_err());
        assert!(scale_uncertainty(&unc, &[-1.0, 1.0]).is_err());
        assert!(scale_uncertainty(&unc, &[1.0]).is_err());
    }
}
