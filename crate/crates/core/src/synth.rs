//! Synthetic corpora drawn from the total-variability generative model,
//! feature-domain corruption, a GMM-based MMSE enhancer and oracle
//! uncertainty.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{read_features, write_features, FeatureMatrix, UncertaintySequence};
use crate::ivector::{read_ivectors, write_ivectors, IVector, TvModel};
use crate::matrix::RowMatrix;
use crate::ubm::GmmModel;

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of a stream rooted at `seed`.
pub fn substream(seed: u64, index: u64) -> u64 {
    seed ^ mix_seed(index)
}

fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(substream(seed ^ mix_seed(stream.wrapping_mul(0x1000_0001)), index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeSpec {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames_per_utt: usize,
    pub feature_dim: usize,
    pub num_components: usize,
    pub ivector_dim: usize,
    /// Standard deviation of the per-speaker offset added to each `w`.
    pub speaker_shift_scale: f64,
    /// Standard deviation of the UBM component means around the origin.
    pub mean_spread: f64,
    /// Per-dimension standard deviation of `T_c w` relative to the component
    /// standard deviation, for `w ~ N(0, I)`.
    pub loading_scale: f64,
    pub rng_seed: u64,
}

impl Default for GenerativeSpec {
    fn default() -> Self {
        Self {
            num_speakers: 40,
            utts_per_speaker: 8,
            frames_per_utt: 500,
            feature_dim: 39,
            num_components: 64,
            ivector_dim: 32,
            speaker_shift_scale: 1.0,
            mean_spread: 1.0,
            loading_scale: 1.0,
            rng_seed: 0,
        }
    }
}

impl GenerativeSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_speakers", self.num_speakers),
            ("utts_per_speaker", self.utts_per_speaker),
            ("frames_per_utt", self.frames_per_utt),
            ("feature_dim", self.feature_dim),
            ("num_components", self.num_components),
            ("ivector_dim", self.ivector_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        let cf = self
            .num_components
            .checked_mul(self.feature_dim)
            .and_then(|cf| cf.checked_mul(self.ivector_dim.max(1)).map(|_| cf))
            .filter(|&cf| cf <= u32::MAX as usize)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{} components x {} dims overflows the supervector index space",
                    self.num_components, self.feature_dim
                ))
            })?;
        if self.ivector_dim > cf {
            return Err(Error::InvalidArgument(format!(
                "i-vector dim {} exceeds C*F = {cf}",
                self.ivector_dim
            )));
        }
        for (name, v) in [
            ("speaker_shift_scale", self.speaker_shift_scale),
            ("mean_spread", self.mean_spread),
            ("loading_scale", self.loading_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Random diagonal GMM with pairwise-separated means.
///
/// Means are `N(0, mean_spread^2)`, variances uniform in `[0.5, 1.5]`,
/// weights uniform in `[0.5, 1.5]` then normalized. Every pair of means is at
/// least two average standard deviations apart; draws that violate this are
/// rejected, and after repeated rejection the mean is placed on a line
/// along the first axis instead.
pub fn synth_ubm(spec: &GenerativeSpec) -> Result<GmmModel> {
    spec.validate()?;
    let (c, f) = (spec.num_components, spec.feature_dim);
    let mut rng = rng_for(spec.rng_seed, 1, 0);
    let vars: Vec<f64> = (0..c * f).map(|_| rng.random_range(0.5..1.5)).collect();
    let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    let avg_std = vars.iter().map(|v| v.sqrt()).sum::<f64>() / vars.len() as f64;
    let min_sep = 2.0 * avg_std;
    let mut means = RowMatrix::zeros(c, f);
    for k in 0..c {
        let mut placed = false;
        for _ in 0..1000 {
            let cand: Vec<f64> = (0..f)
                .map(|_| spec.mean_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let ok = (0..k).all(|j| {
                means
                    .row(j)
                    .iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= min_sep
            });
            if ok {
                means.row_mut(k).copy_from_slice(&cand);
                placed = true;
                break;
            }
        }
        if !placed {
            let row = means.row_mut(k);
            row.fill(0.0);
            row[0] = (k as f64 - (c as f64 - 1.0) / 2.0) * 1.05 * min_sep;
        }
    }
    let vars = RowMatrix::from_vec(c, f, vars)?;
    GmmModel::new_floored(weights, means, vars)
}

/// Random total-variability matrix scaled so that `T_c w` has standard
/// deviation `loading_scale * sqrt(var_cf)` per dimension; `V` is the UBM
/// covariance.
pub fn synth_tv(spec: &GenerativeSpec, gmm: &GmmModel) -> Result<TvModel> {
    spec.validate()?;
    let (c, f, d) = (gmm.num_components(), gmm.dim(), spec.ivector_dim);
    if (c, f) != (spec.num_components, spec.feature_dim) {
        return Err(Error::DimensionMismatch(format!(
            "UBM is {c}x{f}, spec asks for {}x{}",
            spec.num_components, spec.feature_dim
        )));
    }
    let mut rng = rng_for(spec.rng_seed, 2, 0);
    let mut t = RowMatrix::zeros(c * f, d);
    let norm = spec.loading_scale / (d as f64).sqrt();
    for k in 0..c {
        for j in 0..f {
            let s = norm * gmm.var(k)[j].sqrt();
            for v in t.row_mut(k * f + j) {
                *v = s * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    TvModel::with_ubm_residual(t, gmm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub features: FeatureMatrix,
    pub true_w: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBundle {
    pub utterances: Vec<SynthUtterance>,
    pub gmm: GmmModel,
    pub tv: TvModel,
}

impl CorpusBundle {
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.utterances.iter().map(|u| u.speaker_id.clone()).collect();
        s.dedup();
        s
    }
}

fn sample_categorical(cdf: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let r: f64 = rng.random();
    cdf.iter().position(|&p| r < p).unwrap_or(cdf.len() - 1)
}

/// Generates a single utterance for total factors `w`.
pub fn synth_utterance(
    utt_id: &str,
    gmm: &GmmModel,
    tv: &TvModel,
    w: &DVector<f64>,
    frames: usize,
    rng: &mut ChaCha20Rng,
) -> Result<FeatureMatrix> {
    let (c, f) = (gmm.num_components(), gmm.dim());
    let tw = tv.t_dense() * w;
    let shifted: Vec<f64> = (0..c * f)
        .map(|r| gmm.means().as_slice()[r] + tw[r])
        .collect();
    let stds: Vec<f64> = gmm.vars().as_slice().iter().map(|v| v.sqrt()).collect();
    let mut cdf = Vec::with_capacity(c);
    let mut acc = 0.0;
    for w in gmm.weights() {
        acc += w;
        cdf.push(acc);
    }
    let mut out = RowMatrix::zeros(frames, f);
    for t in 0..frames {
        let k = sample_categorical(&cdf, rng);
        let row = out.row_mut(t);
        for (j, y) in row.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *y = shifted[k * f + j] + stds[k * f + j] * e;
        }
    }
    FeatureMatrix::new(utt_id, out)
}

/// Samples `num_speakers * utts_per_speaker` utterances from
/// `y_t ~ N(m_c + T_c w, S_c)`, `c ~ pi`, with `w = speaker offset + N(0, I)`.
///
/// Each speaker and each utterance draws from its own seeded substream, so
/// the corpus is identical regardless of thread count.
pub fn synth_corpus(spec: &GenerativeSpec, gmm: &GmmModel, tv: &TvModel) -> Result<CorpusBundle> {
    spec.validate()?;
    if tv.num_components() != gmm.num_components() || tv.feature_dim() != gmm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "TV model is {}x{}, UBM is {}x{}",
            tv.num_components(),
            tv.feature_dim(),
            gmm.num_components(),
            gmm.dim()
        )));
    }
    if gmm.dim() != spec.feature_dim || tv.ivector_dim() != spec.ivector_dim {
        return Err(Error::DimensionMismatch(format!(
            "models are F={} D={}, spec asks for F={} D={}",
            gmm.dim(),
            tv.ivector_dim(),
            spec.feature_dim,
            spec.ivector_dim
        )));
    }
    let d = spec.ivector_dim;
    let offsets: Vec<DVector<f64>> = (0..spec.num_speakers)
        .map(|s| {
            let mut rng = rng_for(spec.rng_seed, 3, s as u64);
            DVector::from_fn(d, |_, _| {
                spec.speaker_shift_scale * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let total = spec.num_speakers * spec.utts_per_speaker;
    let utterances = (0..total)
        .into_par_iter()
        .map(|u| {
            let s = u / spec.utts_per_speaker;
            let j = u % spec.utts_per_speaker;
            let mut rng = rng_for(spec.rng_seed, 4, u as u64);
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = &offsets[s] + z;
            let utt_id = format!("spk{s:03}_utt{j:03}");
            let features = synth_utterance(&utt_id, gmm, tv, &w, spec.frames_per_utt, &mut rng)?;
            Ok(SynthUtterance {
                utt_id,
                speaker_id: format!("spk{s:03}"),
                features,
                true_w: w,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusBundle {
        utterances,
        gmm: gmm.clone(),
        tv: tv.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "ar")]
pub enum NoiseKind {
    White,
    /// First-order autoregressive along time with the given coefficient.
    Colored(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub target_snr_db: f64,
    pub noise_kind: NoiseKind,
    /// Probability that a frame falls in a noise burst.
    #[serde(default)]
    pub burst_fraction: f64,
    /// Noise power in burst frames relative to the other frames.
    #[serde(default = "unit")]
    pub burst_power_ratio: f64,
    /// Power of a fixed noise mean, relative to the fluctuating noise power
    /// of non-burst frames. The mean vector is drawn from `offset_seed`, so
    /// utterances corrupted with the same seed share it.
    #[serde(default)]
    pub offset_power: f64,
    #[serde(default)]
    pub offset_seed: u64,
    pub rng_seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl CorruptionSpec {
    /// Stationary noise at the given SNR.
    pub fn stationary(target_snr_db: f64, noise_kind: NoiseKind, rng_seed: u64) -> Self {
        Self {
            target_snr_db,
            noise_kind,
            burst_fraction: 0.0,
            burst_power_ratio: 1.0,
            offset_power: 0.0,
            offset_seed: 0,
            rng_seed,
        }
    }
}

/// Noisy features together with the noise that was added.
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub noisy: FeatureMatrix,
    pub noise: RowMatrix,
    /// Expected noise variance of each frame (the same in every dimension).
    pub frame_noise_var: Vec<f64>,
    /// Fixed mean of the noise.
    pub noise_mean: Vec<f64>,
}

impl Corrupted {
    /// Expected noise variance as an `L x F` matrix.
    pub fn noise_var(&self) -> RowMatrix {
        let (l, f) = self.noise.shape();
        let data = self
            .frame_noise_var
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, f))
            .collect();
        RowMatrix::from_vec(l, f, data).expect("consistent shape")
    }
}

fn voiced_energy(m: &RowMatrix, mask: &[bool]) -> f64 {
    m.row_iter()
        .zip(mask)
        .filter(|(_, &v)| v)
        .map(|(r, _)| r.iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// Empirical SNR in dB between a clean matrix and additive noise, over
/// voiced frames.
pub fn measured_snr_db(clean: &FeatureMatrix, noise: &RowMatrix) -> f64 {
    let es = voiced_energy(clean.frames(), clean.vad_mask());
    let en = voiced_energy(noise, clean.vad_mask());
    10.0 * (es / en).log10()
}

/// Adds white or AR(1) Gaussian noise, optionally amplified in randomly
/// chosen burst frames, scaled so that the voiced-frame energy ratio of clean
/// features to noise equals the target SNR.
pub fn corrupt_with_noise(clean: &FeatureMatrix, spec: &CorruptionSpec) -> Result<Corrupted> {
    if !spec.target_snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target SNR must be finite, got {}",
            spec.target_snr_db
        )));
    }
    if !(0.0..=1.0).contains(&spec.burst_fraction) {
        return Err(Error::InvalidArgument(format!(
            "burst fraction must lie in [0, 1], got {}",
            spec.burst_fraction
        )));
    }
    if !(spec.offset_power >= 0.0 && spec.offset_power.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "offset power must be finite and >= 0, got {}",
            spec.offset_power
        )));
    }
    if !(spec.burst_power_ratio > 0.0 && spec.burst_power_ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "burst power ratio must be positive, got {}",
            spec.burst_power_ratio
        )));
    }
    let ar = match spec.noise_kind {
        NoiseKind::White => 0.0,
        NoiseKind::Colored(a) if a > -1.0 && a < 1.0 => a,
        NoiseKind::Colored(a) => {
            return Err(Error::InvalidArgument(format!(
                "AR coefficient must lie in (-1, 1), got {a}"
            )))
        }
    };
    let (l, f) = clean.frames().shape();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.rng_seed);
    let innov = (1.0 - ar * ar).sqrt();
    let mut noise = RowMatrix::zeros(l, f);
    let mut prev: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
    for t in 0..l {
        let row = noise.row_mut(t);
        for (j, v) in row.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            let x = if t == 0 { prev[j] } else { ar * prev[j] + innov * e };
            prev[j] = x;
            *v = x;
        }
    }
    let mut frame_var = vec![1.0; l];
    if spec.burst_fraction > 0.0 {
        let amp = spec.burst_power_ratio.sqrt();
        for (t, fv) in frame_var.iter_mut().enumerate() {
            if rng.random::<f64>() < spec.burst_fraction {
                *fv = spec.burst_power_ratio;
                noise.row_mut(t).iter_mut().for_each(|v| *v *= amp);
            }
        }
    }
    let mut noise_mean = vec![0.0; f];
    if spec.offset_power > 0.0 {
        let mut orng = ChaCha20Rng::seed_from_u64(spec.offset_seed);
        let amp = spec.offset_power.sqrt();
        for m in noise_mean.iter_mut() {
            *m = amp * orng.sample::<f64, _>(StandardNormal);
        }
        for t in 0..l {
            for (v, m) in noise.row_mut(t).iter_mut().zip(&noise_mean) {
                *v += m;
            }
        }
    }
    let es = voiced_energy(clean.frames(), clean.vad_mask());
    let en = voiced_energy(&noise, clean.vad_mask());
    if !(es > 0.0) {
        return Err(Error::InvalidArgument(
            "clean features carry no energy; SNR is undefined".into(),
        ));
    }
    let gain2 = es / (en * 10f64.powf(spec.target_snr_db / 10.0));
    let gain = gain2.sqrt();
    noise.as_mut_slice().iter_mut().for_each(|v| *v *= gain);
    frame_var.iter_mut().for_each(|v| *v *= gain2);
    noise_mean.iter_mut().for_each(|v| *v *= gain);
    let mut noisy = clean.frames().clone();
    noisy.add_assign(&noise)?;
    Ok(Corrupted {
        noisy: clean.with_frames(noisy)?,
        noise,
        frame_noise_var: frame_var,
        noise_mean,
    })
}

pub fn corrupt(clean: &FeatureMatrix, spec: &CorruptionSpec) -> Result<FeatureMatrix> {
    Ok(corrupt_with_noise(clean, spec)?.noisy)
}

/// MMSE enhancement under a GMM speech prior and known noise statistics:
/// with `x_t` the noisy frame minus the noise mean,
/// `sum_c p(c | x_t) (m_c + S_c (S_c + N_t)^-1 (x_t - m_c))`, where
/// `p(c | x_t)` is evaluated under `N(m_c, S_c + N_t)`.
pub fn enhance(
    noisy: &FeatureMatrix,
    prior: &GmmModel,
    noise_mean: &[f64],
    noise_var: &RowMatrix,
) -> Result<FeatureMatrix> {
    if noisy.dim() != prior.dim() || noise_var.shape() != noisy.frames().shape() || noise_mean.len() != prior.dim()
    {
        return Err(Error::DimensionMismatch(format!(
            "features {:?}, prior dim {}, noise variance {:?}",
            noisy.frames().shape(),
            prior.dim(),
            noise_var.shape()
        )));
    }
    if noise_var.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "noise variance must be finite and >= 0".into(),
        ));
    }
    let (c, f) = (prior.num_components(), prior.dim());
    let mut out = noisy.frames().clone();
    let mut post = vec![0.0; c];
    for t in 0..out.rows() {
        let n = noise_var.row(t);
        let x: Vec<f64> = noisy.frame(t).iter().zip(noise_mean).map(|(x, m)| x - m).collect();
        prior.frame_posterior(&x, Some(n), &mut post);
        let row = out.row_mut(t);
        row.fill(0.0);
        for (k, &p) in post.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (m, s) = (prior.mean(k), prior.var(k));
            for j in 0..f {
                row[j] += p * (m[j] + s[j] / (s[j] + n[j]) * (x[j] - m[j]));
            }
        }
    }
    noisy.with_frames(out)
}

/// Enhancement that leaves a fixed fraction of the added noise:
/// `y + gain * (x - y)` for clean `y` and noisy `x`. The residual error is
/// zero-mean and independent of the clean features.
pub fn enhance_residual(clean: &FeatureMatrix, noisy: &FeatureMatrix, gain: f64) -> Result<FeatureMatrix> {
    if clean.frames().shape() != noisy.frames().shape() {
        return Err(Error::DimensionMismatch(format!(
            "clean {:?} vs noisy {:?}",
            clean.frames().shape(),
            noisy.frames().shape()
        )));
    }
    if !(0.0..=1.0).contains(&gain) {
        return Err(Error::InvalidArgument(format!(
            "residual gain must lie in [0, 1], got {gain}"
        )));
    }
    let data = clean
        .frames()
        .as_slice()
        .iter()
        .zip(noisy.frames().as_slice())
        .map(|(y, x)| y + gain * (x - y))
        .collect();
    noisy.with_frames(RowMatrix::from_vec(clean.num_frames(), clean.dim(), data)?)
}

/// Oracle uncertainty: the squared elementwise enhancement error.
pub fn oracle_uncertainty(clean: &FeatureMatrix, enhanced: &FeatureMatrix) -> Result<UncertaintySequence> {
    if clean.frames().shape() != enhanced.frames().shape() {
        return Err(Error::DimensionMismatch(format!(
            "clean {:?} vs enhanced {:?}",
            clean.frames().shape(),
            enhanced.frames().shape()
        )));
    }
    let data = clean
        .frames()
        .as_slice()
        .iter()
        .zip(enhanced.frames().as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    UncertaintySequence::new(
        enhanced.utt_id.clone(),
        RowMatrix::from_vec(clean.num_frames(), clean.dim(), data)?,
    )
}

/// Directory layout: `features/<utt>.uvfm`, `manifest.tsv`
/// (`utt_id<TAB>speaker_id<TAB>path`), `ubm.json`, `tv.uvtv`, `true_w.csv`.
pub fn write_corpus(dir: &Path, bundle: &CorpusBundle) -> Result<()> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifest = String::new();
    for u in &bundle.utterances {
        let rel = PathBuf::from("features").join(format!("{}.uvfm", u.utt_id));
        write_features(&dir.join(&rel), &u.features)?;
        manifest.push_str(&format!("{}\t{}\t{}\n", u.utt_id, u.speaker_id, rel.display()));
    }
    let mpath = dir.join("manifest.tsv");
    let mut file = fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    file.write_all(manifest.as_bytes())
        .map_err(|e| Error::io(&mpath, e))?;
    bundle.gmm.save(&dir.join("ubm.json"))?;
    bundle.tv.save(&dir.join("tv.uvtv"))?;
    let ws: Vec<IVector> = bundle
        .utterances
        .iter()
        .map(|u| IVector {
            utt_id: u.utt_id.clone(),
            mean: u.true_w.clone(),
            precision: None,
        })
        .collect();
    write_ivectors(&dir.join("true_w.csv"), &ws)
}

/// `(utt_id, speaker_id, path)` rows of a manifest; paths are resolved
/// against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!(
                    "{}:{}: expected 3 tab-separated columns",
                    path.display(),
                    i + 1
                )));
            }
            Ok((cols[0].to_string(), cols[1].to_string(), base.join(cols[2])))
        })
        .collect()
}

pub fn read_corpus(dir: &Path) -> Result<CorpusBundle> {
    let rows = read_manifest(&dir.join("manifest.tsv"))?;
    let gmm = GmmModel::load(&dir.join("ubm.json"))?;
    let tv = TvModel::load(&dir.join("tv.uvtv"))?;
    let ws = read_ivectors(&dir.join("true_w.csv"))?;
    let utterances = rows
        .into_iter()
        .map(|(utt_id, speaker_id, path)| {
            let mut features = read_features(&path)?;
            features.utt_id = utt_id.clone();
            let true_w = ws
                .iter()
                .find(|w| w.utt_id == utt_id)
                .map(|w| w.mean.clone())
                .ok_or_else(|| Error::Format(format!("no true_w row for {utt_id}")))?;
            Ok(SynthUtterance {
                utt_id,
                speaker_id,
                features,
                true_w,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CorpusBundle {
        utterances,
        gmm,
        tv,
    })
}
