//! End-to-end comparison of the baseline extractor and the three
//! uncertainty-propagation variants on a synthetic (or stored) corpus.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{cosine_score, Backend, BackendConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fstat_cosine_report, scores_csv, CosineReport, EvalReport, Trial, TrialLabel, TrialList};
use crate::frontend::{cmvn, scale_uncertainty, FeatureMatrix, UncertaintySequence};
use crate::ivector::{extract, extract_variant, train_tv, TvConfig};
use crate::stats::{accumulate_standard, accumulate_ubm_uncertain, normalize_stats, BwStats, StatsVariant};
use crate::matrix::RowMatrix;
use crate::synth::{
    corrupt_with_noise, enhance, enhance_residual, measured_snr_db, oracle_uncertainty, read_corpus, substream, synth_corpus,
    synth_tv, synth_ubm, CorpusBundle, CorruptionSpec, GenerativeSpec, NoiseKind, SynthUtterance,
};
use crate::ubm::{train_ubm, GmmModel, UbmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Existing corpus directory (as written by `write_corpus`); when unset a
    /// corpus is generated from the fields below.
    pub dir: Option<PathBuf>,
    pub train_speakers: usize,
    pub eval_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames_per_utt: usize,
    pub feature_dim: usize,
    pub num_components: usize,
    pub ivector_dim: usize,
    pub speaker_shift_scale: f64,
    pub mean_spread: f64,
    pub loading_scale: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dir: None,
            train_speakers: 40,
            eval_speakers: 20,
            utts_per_speaker: 8,
            frames_per_utt: 500,
            feature_dim: 39,
            num_components: 64,
            ivector_dim: 32,
            speaker_shift_scale: 3.0,
            mean_spread: 3.0,
            loading_scale: 0.04,
        }
    }
}

impl CorpusConfig {
    pub fn generative_spec(&self, seed: u64) -> GenerativeSpec {
        GenerativeSpec {
            num_speakers: self.train_speakers + self.eval_speakers,
            utts_per_speaker: self.utts_per_speaker,
            frames_per_utt: self.frames_per_utt,
            feature_dim: self.feature_dim,
            num_components: self.num_components,
            ivector_dim: self.ivector_dim,
            speaker_shift_scale: self.speaker_shift_scale,
            mean_spread: self.mean_spread,
            loading_scale: self.loading_scale,
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    /// Per-utterance CMVN of every feature stream; uncertainties are rescaled
    /// with the enhanced stream's scales.
    pub cmvn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UbmSection {
    pub num_components: usize,
    pub em_iters: usize,
    pub kmeans_iters: usize,
}

impl Default for UbmSection {
    fn default() -> Self {
        let d = UbmConfig::default();
        Self {
            num_components: d.num_components,
            em_iters: d.em_iters,
            kmeans_iters: d.kmeans_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvSection {
    pub ivector_dim: usize,
    pub em_iters: usize,
}

impl Default for TvSection {
    fn default() -> Self {
        let d = TvConfig::default();
        Self {
            ivector_dim: d.ivector_dim,
            em_iters: d.em_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    #[default]
    Plda,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub lda_dim: usize,
    pub plda_iters: usize,
    pub length_normalize: bool,
    pub scoring: Scoring,
}

impl Default for BackendSection {
    fn default() -> Self {
        let d = BackendConfig::default();
        Self {
            lda_dim: d.lda_dim,
            plda_iters: d.plda_iters,
            length_normalize: d.length_normalize,
            scoring: Scoring::Plda,
        }
    }
}

impl BackendSection {
    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            lda_dim: self.lda_dim,
            plda_iters: self.plda_iters,
            length_normalize: self.length_normalize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Enhancer {
    /// MMSE estimate under the corpus GMM with known per-frame noise power.
    GmmMmse,
    /// Keeps `gain` times the added noise.
    Residual { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub snr_db: f64,
    pub noise: NoiseKind,
    /// Fraction of frames hit by a noise burst.
    pub burst_fraction: f64,
    /// Burst noise power relative to the remaining frames.
    pub burst_power_ratio: f64,
    /// Power of the corpus-wide noise mean relative to the non-burst
    /// fluctuation power.
    pub offset_power: f64,
    pub enhancer: Enhancer,
    /// Multiplier on the oracle uncertainty; 0 disables it.
    pub scale: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            snr_db: 5.0,
            noise: NoiseKind::White,
            burst_fraction: 0.2,
            burst_power_ratio: 10.0,
            offset_power: 1.0,
            enhancer: Enhancer::Residual { gain: 0.5 },
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrialDesign {
    /// Every unordered pair of distinct evaluation utterances.
    #[default]
    AllPairs,
    /// The first `enroll_per_speaker` utterances of each speaker against all
    /// remaining utterances.
    EnrollTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialsConfig {
    /// Trial list over evaluation utterance ids; generated when unset.
    pub file: Option<PathBuf>,
    pub design: TrialDesign,
    pub enroll_per_speaker: usize,
}

impl Default for TrialsConfig {
    fn default() -> Self {
        Self {
            file: None,
            design: TrialDesign::AllPairs,
            enroll_per_speaker: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub histogram_bins: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            histogram_bins: 40,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub frontend: FrontendConfig,
    pub ubm: UbmSection,
    pub tv: TvSection,
    pub backend: BackendSection,
    pub uncertainty: UncertaintyConfig,
    pub trials: TrialsConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }
}

/// Evaluation conditions, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Clean,
    Noisy,
    Enhanced,
    UpFa,
    UpUbm,
    UpProposed,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Clean,
        Condition::Noisy,
        Condition::Enhanced,
        Condition::UpFa,
        Condition::UpUbm,
        Condition::UpProposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Clean => "baseline-on-clean",
            Condition::Noisy => "baseline-on-noisy",
            Condition::Enhanced => "baseline-on-enhanced",
            Condition::UpFa => "UP-fa",
            Condition::UpUbm => "UP-ubm",
            Condition::UpProposed => "UP-proposed",
        }
    }

    fn variant(self) -> StatsVariant {
        match self {
            Condition::Clean | Condition::Noisy | Condition::Enhanced => StatsVariant::Standard,
            Condition::UpFa => StatsVariant::FaUncertain,
            Condition::UpUbm => StatsVariant::UbmUncertain,
            Condition::UpProposed => StatsVariant::Proposed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub eer: f64,
    pub threshold: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineMeans {
    pub target_biased: Option<f64>,
    pub target_unbiased: Option<f64>,
    pub nontarget_biased: Option<f64>,
    pub nontarget_unbiased: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub ubm_log_likelihood: Vec<f64>,
    pub tv_objective: Vec<f64>,
    pub plda_log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub n_train_utterances: usize,
    pub n_eval_utterances: usize,
    pub mean_snr_db: f64,
    pub rows: Vec<SummaryRow>,
    pub fstat_cosine: CosineMeans,
    pub training: TrainingTrace,
}

impl Summary {
    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary is serializable");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: Summary,
    pub trials: TrialList,
    /// One entry per condition, in `Condition::ALL` order.
    pub scores: Vec<Vec<f64>>,
    pub reports: Vec<EvalReport>,
    pub cosine: CosineReport,
}

/// Feature streams of one evaluation utterance.
#[derive(Debug, Clone)]
pub struct ConditionStreams {
    pub clean: FeatureMatrix,
    pub noisy: FeatureMatrix,
    pub enhanced: FeatureMatrix,
    pub unc: UncertaintySequence,
    pub snr_db: f64,
}

/// Corrupts `clean` (noise mean drawn from `profile_seed`, fluctuations from
/// `noise_seed`), enhances it against `prior`'s global statistics and
/// attaches the (scaled) oracle uncertainty, then applies the configured
/// frontend normalization to all streams.
pub fn prepare_streams(
    clean: &FeatureMatrix,
    prior: &GmmModel,
    unc_cfg: &UncertaintyConfig,
    frontend: &FrontendConfig,
    profile_seed: u64,
    noise_seed: u64,
) -> Result<ConditionStreams> {
    if !(unc_cfg.scale >= 0.0 && unc_cfg.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "uncertainty scale must be finite and >= 0, got {}",
            unc_cfg.scale
        )));
    }
    let spec = CorruptionSpec {
        target_snr_db: unc_cfg.snr_db,
        noise_kind: unc_cfg.noise,
        burst_fraction: unc_cfg.burst_fraction,
        burst_power_ratio: unc_cfg.burst_power_ratio,
        offset_power: unc_cfg.offset_power,
        offset_seed: profile_seed,
        rng_seed: noise_seed,
    };
    let corrupted = corrupt_with_noise(clean, &spec)?;
    let snr_db = measured_snr_db(clean, &corrupted.noise);
    let enhanced = match unc_cfg.enhancer {
        Enhancer::GmmMmse => enhance(&corrupted.noisy, prior, &corrupted.noise_mean, &corrupted.noise_var())?,
        Enhancer::Residual { gain } => enhance_residual(clean, &corrupted.noisy, gain)?,
    };
    let mut unc = oracle_uncertainty(clean, &enhanced)?;
    if unc_cfg.scale != 1.0 {
        let scaled = unc.diag_vars().as_slice().iter().map(|v| v * unc_cfg.scale).collect();
        unc = UncertaintySequence::new(
            clean.utt_id.clone(),
            RowMatrix::from_vec(unc.num_frames(), unc.dim(), scaled)?,
        )?;
    }
    if frontend.cmvn {
        let (e, scales) = cmvn(&enhanced)?;
        Ok(ConditionStreams {
            clean: cmvn(clean)?.0,
            noisy: cmvn(&corrupted.noisy)?.0,
            unc: scale_uncertainty(&unc, &scales)?,
            enhanced: e,
            snr_db,
        })
    } else {
        Ok(ConditionStreams {
            clean: clean.clone(),
            noisy: corrupted.noisy,
            enhanced,
            unc,
            snr_db,
        })
    }
}

// Stage identifiers for seed derivation.
pub const STAGE_CORPUS: u64 = 1;
pub const STAGE_NOISE: u64 = 2;
pub const STAGE_NOISE_PROFILE: u64 = 5;
const STAGE_UBM: u64 = 3;
const STAGE_TV: u64 = 4;

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<CorpusBundle> {
    match &cfg.corpus.dir {
        Some(dir) => read_corpus(dir),
        None => {
            let spec = cfg.corpus.generative_spec(substream(cfg.seed, STAGE_CORPUS));
            let gmm = synth_ubm(&spec)?;
            let tv = synth_tv(&spec, &gmm)?;
            synth_corpus(&spec, &gmm, &tv)
        }
    }
}

/// Splits by speaker in order of first appearance.
fn split_speakers(
    bundle: &CorpusBundle,
    train: usize,
    eval: usize,
) -> Result<(Vec<&SynthUtterance>, Vec<&SynthUtterance>)> {
    let mut order: Vec<&str> = Vec::new();
    for u in &bundle.utterances {
        if !order.contains(&u.speaker_id.as_str()) {
            order.push(&u.speaker_id);
        }
    }
    if order.len() < train + eval {
        return Err(Error::InsufficientData(format!(
            "corpus has {} speakers, config needs {train} train + {eval} eval",
            order.len()
        )));
    }
    let train_set: BTreeSet<&str> = order[..train].iter().copied().collect();
    let eval_set: BTreeSet<&str> = order[train..train + eval].iter().copied().collect();
    let pick = |set: &BTreeSet<&str>| {
        bundle
            .utterances
            .iter()
            .filter(|u| set.contains(u.speaker_id.as_str()))
            .collect::<Vec<_>>()
    };
    Ok((pick(&train_set), pick(&eval_set)))
}

fn prepare_eval(cfg: &ExperimentConfig, utts: &[&SynthUtterance], prior: &GmmModel) -> Result<Vec<ConditionStreams>> {
    let noise_seed = substream(cfg.seed, STAGE_NOISE);
    let profile_seed = substream(cfg.seed, STAGE_NOISE_PROFILE);
    utts.par_iter()
        .enumerate()
        .map(|(i, u)| {
            prepare_streams(
                &u.features,
                prior,
                &cfg.uncertainty,
                &cfg.frontend,
                profile_seed,
                substream(noise_seed, i as u64),
            )
        })
        .collect()
}

/// Trials over `(utt_id, speaker_id)` pairs, in input order.
pub fn generate_trials(utts: &[(String, String)], cfg: &TrialsConfig) -> Result<TrialList> {
    match cfg.design {
        TrialDesign::AllPairs => Ok(all_pairs(utts)),
        TrialDesign::EnrollTest => enroll_test(utts, cfg.enroll_per_speaker),
    }
}

fn label(a: &str, b: &str) -> TrialLabel {
    if a == b {
        TrialLabel::Target
    } else {
        TrialLabel::Nontarget
    }
}

fn all_pairs(utts: &[(String, String)]) -> TrialList {
    let mut trials = Vec::with_capacity(utts.len() * utts.len().saturating_sub(1) / 2);
    for (i, (eu, es)) in utts.iter().enumerate() {
        for (tu, ts) in &utts[i + 1..] {
            trials.push(Trial {
                enroll: eu.clone(),
                test: tu.clone(),
                label: label(es, ts),
            });
        }
    }
    TrialList { trials }
}

fn enroll_test(utts: &[(String, String)], enroll_per_speaker: usize) -> Result<TrialList> {
    if enroll_per_speaker == 0 {
        return Err(Error::InvalidArgument("enroll_per_speaker must be >= 1".into()));
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let (mut enroll, mut test) = (Vec::new(), Vec::new());
    for (utt, spk) in utts {
        let k = seen.entry(spk.as_str()).or_insert(0);
        if *k < enroll_per_speaker {
            enroll.push((utt, spk));
        } else {
            test.push((utt, spk));
        }
        *k += 1;
    }
    let mut trials = Vec::with_capacity(enroll.len() * test.len());
    for (eu, es) in &enroll {
        for (tu, ts) in &test {
            trials.push(Trial {
                enroll: (*eu).clone(),
                test: (*tu).clone(),
                label: label(es, ts),
            });
        }
    }
    Ok(TrialList { trials })
}

fn det_csv(report: &EvalReport) -> String {
    let mut s = String::from("threshold,false_alarm,miss\n");
    for p in &report.det_points {
        let _ = writeln!(s, "{:?},{:?},{:?}", p.threshold, p.false_alarm, p.miss);
    }
    s
}

fn histogram_csv(report: &EvalReport) -> String {
    let h = &report.histogram;
    let mut s = String::from("bin_low,bin_high,nontarget,target\n");
    for i in 0..h.counts[0].len() {
        let _ = writeln!(
            s,
            "{:?},{:?},{},{}",
            h.edges[i],
            h.edges[i + 1],
            h.counts[0][i],
            h.counts[1][i]
        );
    }
    s
}

struct OutputDir(Option<PathBuf>);

impl OutputDir {
    fn write(&self, name: &str, content: &str) -> Result<()> {
        if let Some(dir) = &self.0 {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Runs the whole pipeline: UBM, total variability and backend are trained
/// on clean training speakers; the evaluation speakers are scored under each
/// condition of [`Condition::ALL`].
///
/// With an output directory, every artifact is written as soon as it is
/// available, so a failure late in the run leaves earlier results on disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let out = OutputDir(cfg.output.dir.clone());
    if let Some(dir) = &out.0 {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bundle = load_corpus(cfg)?;
    let (train, eval) = split_speakers(&bundle, cfg.corpus.train_speakers, cfg.corpus.eval_speakers)?;
    info!("{} training and {} evaluation utterances", train.len(), eval.len());

    let train_feats: Vec<FeatureMatrix> = train
        .par_iter()
        .map(|u| {
            if cfg.frontend.cmvn {
                Ok(cmvn(&u.features)?.0)
            } else {
                Ok(u.features.clone())
            }
        })
        .collect::<Result<_>>()?;

    let ubm = train_ubm(
        &train_feats,
        &UbmConfig {
            num_components: cfg.ubm.num_components,
            em_iters: cfg.ubm.em_iters,
            kmeans_iters: cfg.ubm.kmeans_iters,
            seed: substream(cfg.seed, STAGE_UBM),
        },
    )?;
    let gmm = ubm.model;
    if let Some(dir) = &out.0 {
        gmm.save(&dir.join("ubm.json"))?;
    }

    let train_stats: Vec<BwStats> = train_feats
        .par_iter()
        .map(|fm| accumulate_standard(&gmm, fm))
        .collect::<Result<_>>()?;
    let tv_training = train_tv(
        &train_stats,
        &gmm,
        &TvConfig {
            ivector_dim: cfg.tv.ivector_dim,
            em_iters: cfg.tv.em_iters,
            seed: substream(cfg.seed, STAGE_TV),
        },
    )?;
    let tv = tv_training.model;
    if let Some(dir) = &out.0 {
        tv.save(&dir.join("tv.uvtv"))?;
    }

    let train_iv: Vec<DVector<f64>> = train_stats
        .par_iter()
        .map(|s| Ok(extract(&tv, &normalize_stats(s, tv.v_diag())?)?.mean))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = train.iter().map(|u| u.speaker_id.clone()).collect();
    let backend_training = Backend::fit(&train_iv, &labels, &cfg.backend.backend_config())?;
    let backend = backend_training.backend;
    if let Some(dir) = &out.0 {
        backend.save(&dir.join("backend.json"))?;
    }

    // the enhancer's speech prior is the corpus's generating model, not the
    // recognizer's UBM
    let eval_utts = prepare_eval(cfg, &eval, &bundle.gmm)?;
    let index: HashMap<&str, usize> = eval.iter().enumerate().map(|(i, u)| (u.utt_id.as_str(), i)).collect();
    let trials = match &cfg.trials.file {
        Some(path) => TrialList::read(path)?,
        None => {
            let ids: Vec<(String, String)> = eval
                .iter()
                .map(|u| (u.utt_id.clone(), u.speaker_id.clone()))
                .collect();
            generate_trials(&ids, &cfg.trials)?
        }
    };
    trials.check_ids(|id| index.contains_key(id))?;
    out.write("trials.tsv", &trials.to_tsv())?;
    let labels = trials.labels();

    let mut scores = Vec::with_capacity(Condition::ALL.len());
    let mut reports = Vec::with_capacity(Condition::ALL.len());
    let mut rows = Vec::with_capacity(Condition::ALL.len());
    for cond in Condition::ALL {
        let ivs: Vec<DVector<f64>> = eval_utts
            .par_iter()
            .map(|e| {
                let (fm, unc) = match cond {
                    Condition::Clean => (&e.clean, None),
                    Condition::Noisy => (&e.noisy, None),
                    Condition::Enhanced => (&e.enhanced, None),
                    _ => (&e.enhanced, Some(&e.unc)),
                };
                let iv = extract_variant(cond.variant(), &tv, &gmm, fm, unc)?;
                backend.transform(&iv.mean)
            })
            .collect::<Result<_>>()?;
        let s: Vec<f64> = trials
            .trials
            .par_iter()
            .map(|t| {
                let (a, b) = (&ivs[index[t.enroll.as_str()]], &ivs[index[t.test.as_str()]]);
                match cfg.backend.scoring {
                    Scoring::Plda => backend.plda.score(a, b),
                    Scoring::Cosine => cosine_score(a, b),
                }
            })
            .collect::<Result<_>>()?;
        let report = evaluate(&s, &labels, cfg.output.histogram_bins)?;
        info!("{}: EER {:.2}%", cond.name(), 100.0 * report.eer);
        out.write(&format!("scores_{}.csv", cond.name()), &scores_csv(&trials, &s)?)?;
        out.write(&format!("det_{}.csv", cond.name()), &det_csv(&report))?;
        out.write(&format!("hist_{}.csv", cond.name()), &histogram_csv(&report))?;
        rows.push(SummaryRow {
            name: cond.name().to_string(),
            eer: report.eer,
            threshold: report.eer_threshold,
            n_trials: report.n_trials,
        });
        scores.push(s);
        reports.push(report);
    }

    let (biased, unbiased): (Vec<BwStats>, Vec<BwStats>) = eval_utts
        .par_iter()
        .map(|e| {
            Ok((
                accumulate_standard(&gmm, &e.enhanced)?,
                accumulate_ubm_uncertain(&gmm, &e.enhanced, &e.unc)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let keyed = |v: Vec<BwStats>| -> HashMap<String, BwStats> {
        eval.iter().map(|u| u.utt_id.clone()).zip(v).collect()
    };
    let cosine = fstat_cosine_report(&trials, &keyed(biased), &keyed(unbiased))?;
    out.write("fstat_cosine.csv", &cosine.to_csv())?;

    let summary = Summary {
        seed: cfg.seed,
        n_train_utterances: train.len(),
        n_eval_utterances: eval.len(),
        mean_snr_db: eval_utts.iter().map(|e| e.snr_db).sum::<f64>() / eval_utts.len() as f64,
        rows,
        fstat_cosine: CosineMeans {
            target_biased: cosine.mean_target_biased,
            target_unbiased: cosine.mean_target_unbiased,
            nontarget_biased: cosine.mean_nontarget_biased,
            nontarget_unbiased: cosine.mean_nontarget_unbiased,
        },
        training: TrainingTrace {
            ubm_log_likelihood: ubm.log_likelihoods,
            tv_objective: tv_training.objective,
            plda_log_likelihood: backend_training.plda_log_likelihoods,
        },
    };
    out.write("summary.json", &summary.to_json())?;
    Ok(ExperimentResult {
        summary,
        trials,
        scores,
        reports,
        cosine,
    })
}
