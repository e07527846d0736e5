//! Trial lists, EER/DET evaluation, score histograms and the F-statistic
//! cosine report.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{fstat_cosine, BwStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        }
    }

    pub fn is_target(self) -> bool {
        self == TrialLabel::Target
    }
}

impl std::str::FromStr for TrialLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(TrialLabel::Target),
            "nontarget" => Ok(TrialLabel::Nontarget),
            other => Err(Error::Format(format!("unknown trial label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn labels(&self) -> Vec<TrialLabel> {
        self.trials.iter().map(|t| t.label).collect()
    }

    /// Every trial must name ids accepted by `known`.
    pub fn check_ids(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        for t in &self.trials {
            for id in [&t.enroll, &t.test] {
                if !known(id) {
                    return Err(Error::InvalidArgument(format!(
                        "trial references unknown utterance {id:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for t in &self.trials {
            let _ = writeln!(s, "{}\t{}\t{}", t.enroll, t.test, t.label.as_str());
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!(
                    "trial line {}: expected 3 tab-separated fields",
                    i + 1
                )));
            }
            trials.push(Trial {
                enroll: parts[0].to_string(),
                test: parts[1].to_string(),
                label: parts[2].trim().parse()?,
            });
        }
        Ok(Self { trials })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }
}

fn check_scores(scores: &[f64], labels: &[TrialLabel]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("trial score".into()));
    }
    let nt = labels.iter().filter(|l| l.is_target()).count();
    let nn = labels.len() - nt;
    if nt == 0 || nn == 0 {
        return Err(Error::InsufficientData(
            "both target and non-target trials are required".into(),
        ));
    }
    Ok((nt, nn))
}

/// One operating point: trials with `score > threshold` are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub false_alarm: f64,
    pub miss: f64,
}

/// Operating points at -inf, every midpoint between consecutive distinct
/// scores, and +inf, in increasing threshold order.
pub fn det_points(scores: &[f64], labels: &[TrialLabel]) -> Result<Vec<DetPoint>> {
    let (nt, nn) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut points = Vec::with_capacity(scores.len() + 1);
    // Threshold below everything: accept all.
    let (mut misses, mut rejected_non) = (0usize, 0usize);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        false_alarm: 1.0,
        miss: 0.0,
    });
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_target() {
                misses += 1;
            } else {
                rejected_non += 1;
            }
            i += 1;
        }
        let threshold = if i < order.len() {
            0.5 * (s + scores[order[i]])
        } else {
            f64::INFINITY
        };
        points.push(DetPoint {
            threshold,
            false_alarm: (nn - rejected_non) as f64 / nn as f64,
            miss: misses as f64 / nt as f64,
        });
    }
    Ok(points)
}

/// EER and its threshold. Among all operating points the one minimizing
/// `|fa - miss|` wins (lowest threshold on ties) and the EER is `(fa+miss)/2`.
pub fn compute_eer(scores: &[f64], labels: &[TrialLabel]) -> Result<(f64, f64)> {
    let points = det_points(scores, labels)?;
    let mut best = points[0];
    for p in &points[1..] {
        if (p.false_alarm - p.miss).abs() < (best.false_alarm - best.miss).abs() {
            best = *p;
        }
    }
    Ok((0.5 * (best.false_alarm + best.miss), best.threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `num_bins + 1` increasing edges.
    pub edges: Vec<f64>,
    /// One count vector per input set.
    pub counts: Vec<Vec<usize>>,
    /// Divisor applied to the scores before binning.
    pub scale: f64,
}

/// Bins several score sets on common edges spanning their joint range.
/// With `normalize_by_max`, scores are first divided by the largest absolute
/// score across all sets.
pub fn score_histogram(sets: &[&[f64]], num_bins: usize, normalize_by_max: bool) -> Result<Histogram> {
    if num_bins == 0 {
        return Err(Error::InvalidArgument("num_bins must be positive".into()));
    }
    let all = || sets.iter().flat_map(|s| s.iter().copied());
    if all().next().is_none() {
        return Err(Error::InsufficientData("no scores to bin".into()));
    }
    if all().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("histogram score".into()));
    }
    let scale = if normalize_by_max {
        let m = all().fold(0.0f64, |a, s| a.max(s.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    } else {
        1.0
    };
    let lo = all().map(|s| s / scale).fold(f64::INFINITY, f64::min);
    let hi = all().map(|s| s / scale).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / num_bins as f64;
    let edges: Vec<f64> = (0..=num_bins).map(|i| lo + width * i as f64).collect();
    let counts = sets
        .iter()
        .map(|set| {
            let mut c = vec![0usize; num_bins];
            for &s in set.iter() {
                let k = (((s / scale) - lo) / width).floor();
                let k = if k < 0.0 { 0 } else { (k as usize).min(num_bins - 1) };
                c[k] += 1;
            }
            c
        })
        .collect();
    Ok(Histogram {
        edges,
        counts,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub n_trials: usize,
    pub det_points: Vec<DetPoint>,
    /// `counts[0]` non-target, `counts[1]` target.
    pub histogram: Histogram,
}

pub fn evaluate(scores: &[f64], labels: &[TrialLabel], num_bins: usize) -> Result<EvalReport> {
    let (eer, eer_threshold) = compute_eer(scores, labels)?;
    let det = det_points(scores, labels)?;
    let (mut tar, mut non) = (Vec::new(), Vec::new());
    for (s, l) in scores.iter().zip(labels) {
        if l.is_target() {
            tar.push(*s);
        } else {
            non.push(*s);
        }
    }
    Ok(EvalReport {
        eer,
        eer_threshold,
        n_trials: scores.len(),
        det_points: det,
        histogram: score_histogram(&[&non, &tar], num_bins, true)?,
    })
}

/// `enroll_id,test_id,score,label` with a header row.
pub fn scores_csv(trials: &TrialList, scores: &[f64]) -> Result<String> {
    if trials.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} trials, {} scores",
            trials.len(),
            scores.len()
        )));
    }
    let mut s = String::from("enroll_id,test_id,score,label\n");
    for (t, v) in trials.trials.iter().zip(scores) {
        let _ = writeln!(s, "{},{},{v:?},{}", t.enroll, t.test, t.label.as_str());
    }
    Ok(s)
}

pub fn parse_scores_csv(text: &str) -> Result<(TrialList, Vec<f64>)> {
    let mut lines = text.lines();
    match lines.next() {
        Some("enroll_id,test_id,score,label") => {}
        _ => return Err(Error::Format("missing scores CSV header".into())),
    }
    let mut trials = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let p: Vec<&str> = line.split(',').collect();
        if p.len() != 4 {
            return Err(Error::Format(format!("scores line {}: expected 4 fields", i + 2)));
        }
        let v: f64 = p[2]
            .parse()
            .map_err(|_| Error::Format(format!("scores line {}: bad score", i + 2)))?;
        trials.push(Trial {
            enroll: p[0].into(),
            test: p[1].into(),
            label: p[3].parse()?,
        });
        scores.push(v);
    }
    Ok((TrialList { trials }, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineRow {
    pub enroll: String,
    pub test: String,
    pub label: TrialLabel,
    pub biased: f64,
    pub unbiased: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub rows: Vec<CosineRow>,
    pub mean_target_biased: Option<f64>,
    pub mean_target_unbiased: Option<f64>,
    pub mean_nontarget_biased: Option<f64>,
    pub mean_nontarget_unbiased: Option<f64>,
}

impl CosineReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("enroll_id,test_id,label,biased,unbiased\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:?},{:?}",
                r.enroll,
                r.test,
                r.label.as_str(),
                r.biased,
                r.unbiased
            );
        }
        s
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-trial cosine distances between the first-order statistics of the
/// enrollment and test utterances, for two statistic sets keyed by utt id.
pub fn fstat_cosine_report(
    trials: &TrialList,
    biased: &HashMap<String, BwStats>,
    unbiased: &HashMap<String, BwStats>,
) -> Result<CosineReport> {
    let get = |m: &HashMap<String, BwStats>, id: &str| -> Result<BwStats> {
        m.get(id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no statistics for utterance {id:?}")))
    };
    let mut rows = Vec::with_capacity(trials.len());
    for t in &trials.trials {
        rows.push(CosineRow {
            enroll: t.enroll.clone(),
            test: t.test.clone(),
            label: t.label,
            biased: fstat_cosine(&get(biased, &t.enroll)?, &get(biased, &t.test)?)?,
            unbiased: fstat_cosine(&get(unbiased, &t.enroll)?, &get(unbiased, &t.test)?)?,
        });
    }
    let pick = |target: bool, unb: bool| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.label.is_target() == target)
            .map(|r| if unb { r.unbiased } else { r.biased })
            .collect()
    };
    Ok(CosineReport {
        mean_target_biased: mean(&pick(true, false)),
        mean_target_unbiased: mean(&pick(true, true)),
        mean_nontarget_biased: mean(&pick(false, false)),
        mean_nontarget_unbiased: mean(&pick(false, true)),
        rows,
    })
}
