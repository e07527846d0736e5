use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMatrix, FeatureMeta};
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

/// Floor applied to filterbank and frame energies before the logarithm.
const ENERGY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    /// Cepstra kept after the DCT, starting at c1 (c0 is dropped).
    pub num_ceps: usize,
    pub append_log_energy: bool,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub num_mel_filters: usize,
    pub delta_window: usize,
    pub sample_rate_hz: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            num_ceps: 19,
            append_log_energy: true,
            window_ms: 25.0,
            hop_ms: 10.0,
            num_mel_filters: 24,
            delta_window: 2,
            sample_rate_hz: 16_000.0,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_ceps == 0 || self.num_ceps >= self.num_mel_filters {
            return Err(Error::InvalidArgument(format!(
                "num_ceps ({}) must be in 1..num_mel_filters ({})",
                self.num_ceps, self.num_mel_filters
            )));
        }
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0 && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(
                "window, hop and sample rate must be positive".into(),
            ));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::InvalidArgument("hop must not exceed window".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    pub fn feature_dim(&self) -> usize {
        self.num_ceps + usize::from(self.append_log_energy)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale spanning 0..Nyquist, one row per filter
/// over the `nfft/2 + 1` power-spectrum bins.
fn mel_filterbank(num_filters: usize, nfft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let nbins = nfft / 2 + 1;
    let mel_hi = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(mel_hi * i as f64 / (num_filters + 1) as f64))
        .collect();
    let bin_hz = sample_rate / nfft as f64;
    (0..num_filters)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..nbins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// MFCCs (c1..c_num_ceps) with optional trailing log-energy column.
///
/// Frames are Hamming-windowed, zero-padded to the next power of two and
/// turned into log mel energies; an orthonormal DCT-II maps those to cepstra.
/// The log-energy is the natural log of the raw frame energy.
pub fn extract_mfcc(utt_id: &str, waveform: &[f64], cfg: &MfccConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    if win == 0 || hop == 0 {
        return Err(Error::InvalidArgument(
            "window and hop must span at least one sample".into(),
        ));
    }
    if waveform.len() < win {
        return Err(Error::InsufficientData(format!(
            "waveform of {} samples is shorter than one {win}-sample window",
            waveform.len()
        )));
    }
    if waveform.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("waveform contains NaN or Inf".into()));
    }
    let num_frames = (waveform.len() - win) / hop + 1;
    let nfft = win.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let fbank = mel_filterbank(cfg.num_mel_filters, nfft, cfg.sample_rate_hz);
    let hamming: Vec<f64> = (0..win)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1).max(1) as f64).cos())
        .collect();
    let nmel = cfg.num_mel_filters;
    let dct_scale = (2.0 / nmel as f64).sqrt();
    let dim = cfg.feature_dim();

    let mut out = RowMatrix::zeros(num_frames, dim);
    let mut spectrum = vec![Complex::new(0.0, 0.0); nfft];
    let mut log_mel = vec![0.0; nmel];
    for t in 0..num_frames {
        let frame = &waveform[t * hop..t * hop + win];
        let energy: f64 = frame.iter().map(|s| s * s).sum();
        for (k, slot) in spectrum.iter_mut().enumerate() {
            *slot = if k < win {
                Complex::new(frame[k] * hamming[k], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut spectrum);
        for (m, filt) in fbank.iter().enumerate() {
            let e: f64 = filt
                .iter()
                .zip(&spectrum)
                .map(|(w, s)| w * s.norm_sqr())
                .sum();
            log_mel[m] = e.max(ENERGY_FLOOR).ln();
        }
        let row = out.row_mut(t);
        for (i, slot) in row.iter_mut().take(cfg.num_ceps).enumerate() {
            let q = i + 1;
            *slot = dct_scale
                * log_mel
                    .iter()
                    .enumerate()
                    .map(|(m, v)| v * (PI * q as f64 * (m as f64 + 0.5) / nmel as f64).cos())
                    .sum::<f64>();
        }
        if cfg.append_log_energy {
            row[cfg.num_ceps] = energy.max(ENERGY_FLOOR).ln();
        }
    }
    let meta = FeatureMeta {
        frame_rate_hz: cfg.sample_rate_hz / hop as f64,
        kind: FeatureKind::Mfcc,
        log_energy_dim: cfg.append_log_energy.then_some(cfg.num_ceps),
    };
    FeatureMatrix::with_mask(utt_id, out, vec![true; num_frames], meta)
}
