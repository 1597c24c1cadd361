//! Frame-label similarity, calibrated binarisation, expansion to a
//! spectrogram-time condition plane, and the top/bottom-k probe.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::embed::{cosine, DetectorCalibration, JointEmbedder};
use crate::error::{ensure, Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySeq {
    pub values: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalMask {
    pub bits: Vec<u8>,
}

impl TemporalMask {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Fraction of frames agreeing with `other`.
    pub fn accuracy(&self, other: &[u8]) -> f64 {
        assert_eq!(self.bits.len(), other.len());
        let hits = self.bits.iter().zip(other).filter(|(a, b)| a == b).count();
        hits as f64 / self.bits.len() as f64
    }
}

/// Binary activity plane `[1, F, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionMap {
    pub plane: Tensor,
}

/// Whether the 0.5 threshold applies to calibrated probability or to the
/// raw cosine similarity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Calibrated,
    RawCosine,
}

pub fn frame_label_similarity(
    emb: &JointEmbedder,
    store: &ParamStore,
    cal: &DetectorCalibration,
    frames: &Tensor,
    label: usize,
) -> Result<SimilaritySeq> {
    let text = emb.embed_text(store, label)?;
    let e = emb.embed_frames(store, frames)?;
    let values: Vec<f64> = (0..frames.shape()[0]).map(|i| cosine(e.row(i), &text)).collect();
    let probabilities = values.iter().map(|&s| cal.probability(s)).collect();
    Ok(SimilaritySeq { values, probabilities })
}

/// `bit = 1` iff `p >= threshold`, so an exact tie counts as active.
pub fn binarize(probabilities: &[f64], threshold: f64) -> TemporalMask {
    TemporalMask { bits: probabilities.iter().map(|&p| (p >= threshold) as u8).collect() }
}

/// Column `j` of `S` takes bit `floor(j * T_f / S)`, broadcast over frequency.
pub fn mask_to_condition(bits: &[u8], freq_bins: usize, time_bins: usize) -> ConditionMap {
    assert!(!bits.is_empty() && freq_bins > 0 && time_bins > 0);
    let tf = bits.len();
    let row: Vec<f64> = (0..time_bins).map(|j| bits[j * tf / time_bins] as f64).collect();
    let plane = Tensor::from_fn(&[1, freq_bins, time_bins], |k| row[k % time_bins]);
    ConditionMap { plane }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub top: Vec<(usize, f64)>,
    pub bottom: Vec<(usize, f64)>,
}

/// Indices of the `k` largest and `k` smallest values; ties go to the lower index.
pub fn probe_extremes(probabilities: &[f64], k: usize) -> Result<Extremes> {
    ensure!(probabilities.len() >= k, "need at least {k} frames, got {}", probabilities.len());
    let mut idx: Vec<usize> = (0..probabilities.len()).collect();
    idx.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    let top = idx[..k].iter().map(|&i| (i, probabilities[i])).collect();
    idx.sort_by(|&a, &b| probabilities[a].total_cmp(&probabilities[b]).then(a.cmp(&b)));
    let bottom = idx[..k].iter().map(|&i| (i, probabilities[i])).collect();
    Ok(Extremes { top, bottom })
}

/// The time detector: embedder, calibration and threshold rule.
#[derive(Clone, Debug)]
pub struct Detector<'a> {
    pub embedder: &'a JointEmbedder,
    pub store: &'a ParamStore,
    pub calibration: DetectorCalibration,
    pub threshold: f64,
    pub mode: ThresholdMode,
}

impl Detector<'_> {
    pub fn detect(&self, frames: &Tensor, label: usize) -> Result<(SimilaritySeq, TemporalMask)> {
        let sim = frame_label_similarity(self.embedder, self.store, &self.calibration, frames, label)?;
        let mask = match self.mode {
            ThresholdMode::Calibrated => binarize(&sim.probabilities, self.threshold),
            ThresholdMode::RawCosine => binarize(&sim.values, self.threshold),
        };
        Ok((sim, mask))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipDiagnostics {
    pub clip_id: String,
    pub label: usize,
    pub similarities: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub mask: Vec<u8>,
    pub gt_mask: Vec<u8>,
    pub frame_accuracy: f64,
    pub extremes: Extremes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub threshold: f64,
    pub mode: ThresholdMode,
    pub calibration: DetectorCalibration,
    pub mean_frame_accuracy: f64,
    pub clips: Vec<ClipDiagnostics>,
}

impl DiagnosticsReport {
    pub fn build(
        detector: &Detector,
        clips: impl IntoIterator<Item = (String, usize, Tensor, Vec<u8>)>,
        k: usize,
    ) -> Result<Self> {
        let mut out = Vec::new();
        for (clip_id, label, frames, gt_mask) in clips {
            let (sim, mask) = detector.detect(&frames, label)?;
            ensure!(gt_mask.len() == mask.len(), "clip `{clip_id}` mask length mismatch");
            let extremes = probe_extremes(&sim.probabilities, k)?;
            let frame_accuracy = mask.accuracy(&gt_mask);
            out.push(ClipDiagnostics {
                clip_id,
                label,
                similarities: sim.values,
                probabilities: sim.probabilities,
                mask: mask.bits,
                gt_mask,
                frame_accuracy,
                extremes,
            });
        }
        let frames: usize = out.iter().map(|c| c.mask.len()).sum();
        let hits: f64 = out.iter().map(|c| c.frame_accuracy * c.mask.len() as f64).sum();
        Ok(Self {
            threshold: detector.threshold,
            mode: detector.mode,
            calibration: detector.calibration,
            mean_frame_accuracy: if frames == 0 { 0.0 } else { hits / frames as f64 },
            clips: out,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Plot-ready per-frame trajectories.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("clip_id,frame,similarity,probability,mask,gt_mask\n");
        for c in &self.clips {
            for i in 0..c.mask.len() {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.clip_id, i, c.similarities[i], c.probabilities[i], c.mask[i], c.gt_mask[i]
                ));
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
