use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cosine, fit_detector_calibration, info_nce_loss, info_nce_with_negatives, DetectorCalibration, JointEmbedder};
use crate::autodiff::{AdamConfig, AdamState, Graph, ParamStore, Tensor};
use crate::corpus::CorpusClip;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderTrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    /// Inactive frames added as extra negatives for every label anchor.
    pub negatives: usize,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, steps_per_epoch: 128, lr: 3e-3, negatives: 16 }
    }
}

/// Contrastive training with one clip per class per step: label against an
/// active frame of that clip (plus inactive frames as negatives), and label
/// against the clip's spectrogram. Returns per-epoch mean loss.
pub fn train_embedder(
    emb: &JointEmbedder,
    store: &mut ParamStore,
    clips: &[&CorpusClip],
    cfg: &EmbedderTrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut by_class: BTreeMap<usize, Vec<&CorpusClip>> = BTreeMap::new();
    for c in clips.iter().filter(|c| c.gt_mask.contains(&1)) {
        by_class.entry(c.label).or_default().push(c);
    }
    ensure!(by_class.len() >= 2, "embedder training needs clips from at least two classes");
    let background: Vec<(&CorpusClip, usize)> = clips
        .iter()
        .flat_map(|c| c.gt_mask.iter().enumerate().filter(|(_, &b)| b == 0).map(move |(i, _)| (*c, i)))
        .collect();
    if !JointEmbedder::is_present(store) {
        emb.init(store, rng)?;
    }
    store.set_trainable(|_| true);
    let d_v = emb.dims.feat_dim;
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut curve = Vec::with_capacity(cfg.epochs);
    let total_steps = (cfg.epochs * cfg.steps_per_epoch).max(1) as f64;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for step in 0..cfg.steps_per_epoch {
            // Cosine decay to a tenth of the base rate.
            let progress = (epoch * cfg.steps_per_epoch + step) as f64 / total_steps;
            adam.config.lr = cfg.lr * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos()));
            let g = Graph::new();
            let mut labels = Vec::with_capacity(by_class.len());
            let mut pos = Vec::with_capacity(by_class.len() * d_v);
            let mut audio = Vec::with_capacity(by_class.len());
            for (&label, pool) in &by_class {
                let clip = *pool.choose(rng).unwrap();
                let active: Vec<usize> = clip.event_frames().collect();
                let i = *active.choose(rng).unwrap();
                labels.push(label);
                pos.extend_from_slice(clip.frames.row(i));
                audio.push(emb.audio(&g, store, g.constant(clip.spectrogram.clone())));
            }
            let n = labels.len();
            let text = emb.text(&g, store, &labels);
            let frames = emb.frames(&g, store, g.constant(Tensor::new(&[n, d_v], pos)));
            let frame_loss = if cfg.negatives > 0 && !background.is_empty() {
                let mut neg = Vec::with_capacity(cfg.negatives * d_v);
                for _ in 0..cfg.negatives {
                    let (c, i) = background.choose(rng).unwrap();
                    neg.extend_from_slice(c.frames.row(*i));
                }
                let neg = emb.frames(&g, store, g.constant(Tensor::new(&[cfg.negatives, d_v], neg)));
                info_nce_with_negatives(&g, text, frames, neg, emb.dims.temperature)?
            } else {
                info_nce_loss(&g, text, frames, emb.dims.temperature)?
            };
            let audio = g.concat_rows(&audio);
            let loss = g.add(frame_loss, info_nce_loss(&g, text, audio, emb.dims.temperature)?);
            total += g.value(loss).item();
            adam.step(store, &g.backward(loss)?.param_grads())?;
        }
        let mean = total / cfg.steps_per_epoch.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!("embedder loss diverged at epoch {epoch}")));
        }
        log::info!("embedder epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    Ok(curve)
}

/// Cosine similarity of every frame of every clip with the clip's label,
/// paired with the ground-truth activity bit.
pub fn frame_similarities(emb: &JointEmbedder, store: &ParamStore, clips: &[&CorpusClip]) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut sims = Vec::new();
    let mut active = Vec::new();
    for clip in clips {
        let text = emb.embed_text(store, clip.label)?;
        let e = emb.embed_frames(store, &clip.frames)?;
        for (i, &bit) in clip.gt_mask.iter().enumerate() {
            sims.push(cosine(e.row(i), &text));
            active.push(bit == 1);
        }
    }
    Ok((sims, active))
}

pub fn calibrate(emb: &JointEmbedder, store: &ParamStore, clips: &[&CorpusClip]) -> Result<DetectorCalibration> {
    let (sims, active) = frame_similarities(emb, store, clips)?;
    fit_detector_calibration(&sims, &active)
}
