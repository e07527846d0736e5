use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use ivup::backend::Backend;
use ivup::eval::{evaluate, parse_scores_csv, scores_csv, TrialList};
use ivup::experiment::{load_corpus, prepare_streams, run_experiment, ExperimentConfig, Scoring, STAGE_NOISE,
    STAGE_NOISE_PROFILE,
};
use ivup::frontend::{read_features, read_uncertainty, write_features, write_uncertainty, FeatureMatrix};
use ivup::ivector::{extract_variant, read_ivectors, train_tv, write_ivectors, IVector, TvConfig, TvModel};
use ivup::stats::{
    accumulate_fa_uncertain, accumulate_proposed, accumulate_standard, accumulate_ubm_uncertain,
    write_stats, BwStats, StatsVariant, StoredStats,
};
use ivup::synth::{read_manifest, substream, write_corpus};
use ivup::ubm::{train_ubm, GmmModel, UbmConfig};

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "ivup", version, about = "i-vector speaker verification with uncertainty propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; overrides the config file's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML experiment config; unspecified values take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory (see each command).
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    FaUncertain,
    UbmUncertain,
    Proposed,
}

impl From<VariantArg> for StatsVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Standard => StatsVariant::Standard,
            VariantArg::FaUncertain => StatsVariant::FaUncertain,
            VariantArg::UbmUncertain => StatsVariant::UbmUncertain,
            VariantArg::Proposed => StatsVariant::Proposed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the `--out` directory.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build clean/noisy/enhanced feature streams and oracle uncertainty for
    /// a corpus, under `--out/{clean,noisy,enhanced,uncertainty}`.
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train a UBM on every feature file in a directory; writes JSON to `--out`.
    TrainUbm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
    },
    /// Train the total-variability matrix; writes the model to `--out`.
    TrainTv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
    },
    /// Accumulate statistics per utterance into the `--out` directory.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        /// Needed by the uncertainty-normalized variants.
        #[arg(long)]
        tv: Option<PathBuf>,
        #[arg(long)]
        uncertainty: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "standard")]
        variant: VariantArg,
    },
    /// Extract i-vectors for every feature file; writes CSV to `--out`.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        tv: PathBuf,
        #[arg(long)]
        uncertainty: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "standard")]
        variant: VariantArg,
    },
    /// Fit whitening, LDA and PLDA on labelled i-vectors; writes JSON to `--out`.
    BackendTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ivectors: PathBuf,
        /// Corpus manifest providing speaker labels.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score a trial list; writes the scores CSV to `--out`.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long)]
        ivectors: PathBuf,
        #[arg(long)]
        trials: PathBuf,
    },
    /// EER, DET points and histogram of a scores CSV; writes JSON to `--out`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Full experiment; writes all artifacts and `summary.json` to `--out`.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn feature_files(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(format!("no .{ext} files in {}", dir.display()).into());
    }
    Ok(files)
}

fn load_features(dir: &Path) -> CliResult<Vec<FeatureMatrix>> {
    let files = feature_files(dir, "uvfm")?;
    Ok(files
        .par_iter()
        .map(|p| read_features(p))
        .collect::<ivup::Result<_>>()?)
}

fn parent_dir(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn out_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    parent_dir(path)?;
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn uncertainty_for(dir: Option<&Path>, utt: &str) -> ivup::Result<Option<ivup::frontend::UncertaintySequence>> {
    dir.map(|d| read_uncertainty(&d.join(format!("{utt}.uvun"))))
        .transpose()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = common.load()?;
            if cfg.corpus.dir.is_some() {
                return Err("`synth` generates a corpus; remove corpus.dir from the config".into());
            }
            let bundle = load_corpus(&cfg)?;
            out_dir(&common.out)?;
            write_corpus(&common.out, &bundle)?;
            info!("wrote {} utterances to {}", bundle.utterances.len(), common.out.display());
        }
        Command::Features { common, corpus } => {
            let cfg = common.load()?;
            let bundle = ivup::synth::read_corpus(&corpus)?;
            for sub in ["clean", "noisy", "enhanced", "uncertainty"] {
                out_dir(&common.out.join(sub))?;
            }
            let noise_seed = substream(cfg.seed, STAGE_NOISE);
            let profile_seed = substream(cfg.seed, STAGE_NOISE_PROFILE);
            bundle
                .utterances
                .par_iter()
                .enumerate()
                .map(|(i, u)| -> ivup::Result<()> {
                    let s = prepare_streams(
                        &u.features,
                        &bundle.gmm,
                        &cfg.uncertainty,
                        &cfg.frontend,
                        profile_seed,
                        substream(noise_seed, i as u64),
                    )?;
                    let name = format!("{}.uvfm", u.utt_id);
                    write_features(&common.out.join("clean").join(&name), &s.clean)?;
                    write_features(&common.out.join("noisy").join(&name), &s.noisy)?;
                    write_features(&common.out.join("enhanced").join(&name), &s.enhanced)?;
                    write_uncertainty(
                        &common.out.join("uncertainty").join(format!("{}.uvun", u.utt_id)),
                        &s.unc,
                    )
                })
                .collect::<ivup::Result<()>>()?;
        }
        Command::TrainUbm { common, features } => {
            let cfg = common.load()?;
            let feats = load_features(&features)?;
            let t = train_ubm(
                &feats,
                &UbmConfig {
                    num_components: cfg.ubm.num_components,
                    em_iters: cfg.ubm.em_iters,
                    kmeans_iters: cfg.ubm.kmeans_iters,
                    seed: cfg.seed,
                },
            )?;
            parent_dir(&common.out)?;
            t.model.save(&common.out)?;
            info!("UBM log-likelihoods: {:?}", t.log_likelihoods);
        }
        Command::TrainTv { common, features, ubm } => {
            let cfg = common.load()?;
            let gmm = GmmModel::load(&ubm)?;
            let feats = load_features(&features)?;
            let stats: Vec<BwStats> = feats
                .par_iter()
                .map(|f| accumulate_standard(&gmm, f))
                .collect::<ivup::Result<_>>()?;
            let t = train_tv(
                &stats,
                &gmm,
                &TvConfig {
                    ivector_dim: cfg.tv.ivector_dim,
                    em_iters: cfg.tv.em_iters,
                    seed: cfg.seed,
                },
            )?;
            parent_dir(&common.out)?;
            t.model.save(&common.out)?;
            info!("TV objective: {:?}", t.objective);
        }
        Command::Stats {
            common,
            features,
            ubm,
            tv,
            uncertainty,
            variant,
        } => {
            let gmm = GmmModel::load(&ubm)?;
            let tv = tv.map(|p| TvModel::load(&p)).transpose()?;
            let variant = StatsVariant::from(variant);
            out_dir(&common.out)?;
            let feats = load_features(&features)?;
            for fm in &feats {
                let unc = uncertainty_for(uncertainty.as_deref(), &fm.utt_id)?;
                let need_unc = || {
                    unc.as_ref()
                        .ok_or_else(|| format!("variant {variant} needs --uncertainty"))
                };
                let need_tv = || tv.as_ref().ok_or_else(|| format!("variant {variant} needs --tv"));
                let stored = match variant {
                    StatsVariant::Standard => StoredStats::Raw(accumulate_standard(&gmm, fm)?),
                    StatsVariant::UbmUncertain => StoredStats::Raw(accumulate_ubm_uncertain(&gmm, fm, need_unc()?)?),
                    StatsVariant::FaUncertain => {
                        StoredStats::Normalized(accumulate_fa_uncertain(&gmm, need_tv()?.v_diag(), fm, need_unc()?)?)
                    }
                    StatsVariant::Proposed => {
                        StoredStats::Normalized(accumulate_proposed(&gmm, need_tv()?.v_diag(), fm, need_unc()?)?)
                    }
                };
                write_stats(&common.out.join(format!("{}.uvst", fm.utt_id)), &stored)?;
            }
        }
        Command::Extract {
            common,
            features,
            ubm,
            tv,
            uncertainty,
            variant,
        } => {
            let gmm = GmmModel::load(&ubm)?;
            let tv = TvModel::load(&tv)?;
            let feats = load_features(&features)?;
            let ivs: Vec<IVector> = feats
                .par_iter()
                .map(|fm| {
                    let unc = uncertainty_for(uncertainty.as_deref(), &fm.utt_id)?;
                    extract_variant(variant.into(), &tv, &gmm, fm, unc.as_ref())
                })
                .collect::<ivup::Result<_>>()?;
            parent_dir(&common.out)?;
            write_ivectors(&common.out, &ivs)?;
        }
        Command::BackendTrain {
            common,
            ivectors,
            manifest,
        } => {
            let cfg = common.load()?;
            let ivs = read_ivectors(&ivectors)?;
            let speakers: HashMap<String, String> = read_manifest(&manifest)?
                .into_iter()
                .map(|(u, s, _)| (u, s))
                .collect();
            let labels = ivs
                .iter()
                .map(|iv| {
                    speakers
                        .get(&iv.utt_id)
                        .cloned()
                        .ok_or_else(|| format!("{} is not in {}", iv.utt_id, manifest.display()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let means: Vec<_> = ivs.iter().map(|iv| iv.mean.clone()).collect();
            let t = Backend::fit(&means, &labels, &cfg.backend.backend_config())?;
            parent_dir(&common.out)?;
            t.backend.save(&common.out)?;
        }
        Command::Score {
            common,
            backend,
            ivectors,
            trials,
        } => {
            let cfg = common.load()?;
            let backend = Backend::load(&backend)?;
            let ivs: HashMap<String, _> = read_ivectors(&ivectors)?
                .into_iter()
                .map(|iv| (iv.utt_id, iv.mean))
                .collect();
            let trials = TrialList::read(&trials)?;
            trials.check_ids(|id| ivs.contains_key(id))?;
            let scores: Vec<f64> = trials
                .trials
                .par_iter()
                .map(|t| {
                    let a = backend.transform(&ivs[&t.enroll])?;
                    let b = backend.transform(&ivs[&t.test])?;
                    match cfg.backend.scoring {
                        Scoring::Plda => backend.plda.score(&a, &b),
                        Scoring::Cosine => ivup::backend::cosine_score(&a, &b),
                    }
                })
                .collect::<ivup::Result<_>>()?;
            write_text(&common.out, &scores_csv(&trials, &scores)?)?;
        }
        Command::Eval { common, scores } => {
            let cfg = common.load()?;
            let text = fs::read_to_string(&scores).map_err(|e| format!("{}: {e}", scores.display()))?;
            let (trials, s) = parse_scores_csv(&text)?;
            let report = evaluate(&s, &trials.labels(), cfg.output.histogram_bins)?;
            println!("EER {:.4}% at threshold {:.6}", 100.0 * report.eer, report.eer_threshold);
            write_text(&common.out, &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Run { common, workers } => {
            let mut cfg = common.load()?;
            cfg.output.dir = Some(common.out.clone());
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(w) = workers {
                pool = pool.num_threads(w);
            }
            let pool = pool.build()?;
            let result = pool.install(|| run_experiment(&cfg))?;
            for row in &result.summary.rows {
                println!("{:<22} EER {:6.2}%  ({} trials)", row.name, 100.0 * row.eer, row.n_trials);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
