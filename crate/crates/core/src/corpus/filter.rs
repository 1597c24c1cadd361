use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{template, Corpus, CorpusManifest, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const WINDOW: usize = 8;
const HOP: usize = 4;
const LAG_STEP: f64 = 0.5;

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    if aa <= 0.0 || bb <= 0.0 {
        0.0
    } else {
        ab / (aa * bb).sqrt()
    }
}

/// Template-correlation stand-in for text-to-audio grounding: the best
/// normalised cross-correlation between a sliding-window frequency marginal
/// and the label's template, over energetic windows and Doppler lags up to
/// `max_shift` bins, clamped to `[0, 1]`.
pub fn grounding_score(spec: &Tensor, label: usize, max_shift: f64) -> f64 {
    let (f, s) = (spec.shape()[1], spec.shape()[2]);
    let win = WINDOW.min(s);
    let starts: Vec<usize> = (0..=s - win).step_by(HOP).collect();
    let marginals: Vec<Vec<f64>> = starts
        .iter()
        .map(|&t0| (0..f).map(|fi| spec.data()[fi * s + t0..fi * s + t0 + win].iter().sum::<f64>() / win as f64).collect())
        .collect();
    let energy: Vec<f64> = marginals.iter().map(|m| m.iter().sum()).collect();
    let peak = energy.iter().cloned().fold(0.0, f64::max);
    let n_lags = (max_shift / LAG_STEP).floor() as usize;
    let templates: Vec<Vec<f64>> = (0..=n_lags).map(|k| template(label, k as f64 * LAG_STEP, f)).collect();
    let mut best = 0.0f64;
    for (m, e) in marginals.iter().zip(&energy) {
        if *e < 0.5 * peak {
            continue;
        }
        for t in &templates {
            best = best.max(ncc(m, t));
        }
    }
    best.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Kept,
    NonContinuousLabel,
    LowGrounding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub id: String,
    pub score: f64,
    pub reason: FilterReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredManifest {
    /// Kept clips only, with grounding scores filled in.
    pub manifest: CorpusManifest,
    pub decisions: Vec<FilterDecision>,
}

/// Continuous-label selection followed by the grounding filter.
pub fn filter_continuous(corpus: &Corpus, continuous: &BTreeSet<usize>, tau_g: f64) -> Result<FilteredManifest> {
    let max_shift = corpus.manifest.config.doppler_bins;
    let mut kept = Vec::new();
    let mut decisions = Vec::with_capacity(corpus.clips.len());
    for (record, clip) in corpus.manifest.clips.iter().zip(&corpus.clips) {
        let score = record.grounding_score.unwrap_or_else(|| grounding_score(&clip.spectrogram, record.label, max_shift));
        let reason = if !continuous.contains(&record.label) {
            FilterReason::NonContinuousLabel
        } else if score < tau_g {
            FilterReason::LowGrounding
        } else {
            FilterReason::Kept
        };
        if reason == FilterReason::Kept {
            let mut r = record.clone();
            r.grounding_score = Some(score);
            kept.push(r);
        }
        decisions.push(FilterDecision { id: record.id.clone(), score, reason });
    }
    if kept.is_empty() {
        log::warn!("continuous filter kept no clips");
    }
    let manifest = CorpusManifest { clips: kept, ..corpus.manifest.clone() };
    Ok(FilteredManifest { manifest, decisions })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickReport {
    pub requested: usize,
    pub duplicates: usize,
    pub test_size: usize,
}

/// Move the listed clips into the test split.
pub fn apply_test_pick(manifest: &CorpusManifest, ids: &[String]) -> Result<(CorpusManifest, PickReport)> {
    let mut seen = BTreeSet::new();
    let mut duplicates = 0;
    for id in ids {
        if manifest.record(id).is_none() {
            return Err(Error::UnknownClip(id.clone()));
        }
        if !seen.insert(id.as_str()) {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        log::warn!("pick list repeats {duplicates} id(s); duplicates ignored");
    }
    let mut out = manifest.clone();
    for r in &mut out.clips {
        if seen.contains(r.id.as_str()) {
            r.split = Split::Test;
        }
    }
    let report = PickReport { requested: ids.len(), duplicates, test_size: out.count(Split::Test) };
    Ok((out, report))
}

/// Newline-separated clip ids; blank lines are skipped.
pub fn read_pick_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}
