//! Staged training: backbone, then the frame adapter, then the temporal
//! adapter, each with everything outside its own parameter set frozen.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{draw_noise, example_loss, DiffusionSample, NoiseSchedule};
use crate::autodiff::{AdamConfig, AdamState, Graph, ParamStore, Tensor};
use crate::error::{ensure, Error, Result};
use crate::nn::{Conditioning, Denoiser, TemporalAdapter, FRAME_PROJ_PREFIX, UNET_PREFIX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Backbone,
    FrameAdapter,
    TemporalAdapter,
}

impl StageId {
    pub const ALL: [StageId; 3] = [StageId::Backbone, StageId::FrameAdapter, StageId::TemporalAdapter];

    /// Short identifier used on the command line and in loss curves.
    pub fn short_name(self) -> &'static str {
        match self {
            StageId::Backbone => "backbone",
            StageId::FrameAdapter => "frame",
            StageId::TemporalAdapter => "temporal",
        }
    }

    /// CLI subcommand that runs this stage.
    pub fn command(self) -> &'static str {
        match self {
            StageId::Backbone => "train-backbone",
            StageId::FrameAdapter => "train-frame-adapter",
            StageId::TemporalAdapter => "train-temporal-adapter",
        }
    }

    pub fn prerequisite(self) -> Option<StageId> {
        match self {
            StageId::Backbone => None,
            StageId::FrameAdapter => Some(StageId::Backbone),
            StageId::TemporalAdapter => Some(StageId::FrameAdapter),
        }
    }

    /// Which parameters this stage may update.
    pub fn is_trainable(self, name: &str) -> bool {
        let frame_branch = name.ends_with(".w_k_frame") || name.ends_with(".w_v_frame");
        match self {
            StageId::Backbone => name.starts_with(&format!("{UNET_PREFIX}.")) && !frame_branch,
            StageId::FrameAdapter => frame_branch || name.starts_with(&format!("{FRAME_PROJ_PREFIX}.")),
            StageId::TemporalAdapter => name.starts_with("temporal."),
        }
    }

    fn is_present(self, store: &ParamStore, d: &Denoiser) -> bool {
        match self {
            StageId::Backbone => store.contains(&format!("{UNET_PREFIX}.conv_in.w")),
            StageId::FrameAdapter => d.unet.has_frame_adapter(store),
            StageId::TemporalAdapter => TemporalAdapter::is_present(store),
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for StageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(StageId::Backbone),
            "frame" | "frame_adapter" => Ok(StageId::FrameAdapter),
            "temporal" | "temporal_adapter" => Ok(StageId::TemporalAdapter),
            other => Err(Error::Config(format!("unknown stage `{other}` (expected backbone|frame|temporal)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Use at most this many training clips per epoch (0 = all).
    pub max_clips: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, lr: 1e-3, max_clips: 0 }
    }
}

/// A clean latent with all the conditioning any stage might use.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub z0: Tensor,
    pub label: usize,
    pub frames: Tensor,
    /// Ground-truth activity plane.
    pub gt_cond: Tensor,
}

impl TrainingExample {
    /// Conditioning seen by `stage`: the temporal stage gets the
    /// ground-truth activity plane, never a predicted one.
    pub fn conditioning(&self, stage: StageId) -> Conditioning<'_> {
        match stage {
            StageId::Backbone => Conditioning::text_only(self.label),
            StageId::FrameAdapter => Conditioning { label: self.label, frames: Some(&self.frames), cond_map: None },
            StageId::TemporalAdapter => {
                Conditioning { label: self.label, frames: Some(&self.frames), cond_map: Some(&self.gt_cond) }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub stage: StageId,
    pub mean_loss: f64,
}

/// Check the prior stage exists, add this stage's fresh parameters, and
/// freeze everything else.
pub fn prepare_stage(stage: StageId, d: &Denoiser, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
    let mut required = stage.prerequisite();
    while let Some(req) = required {
        if !req.is_present(store, d) {
            return Err(Error::MissingPrerequisite { stage: req.command().to_string() });
        }
        required = req.prerequisite();
    }
    if !stage.is_present(store, d) {
        match stage {
            StageId::Backbone => d.unet.init(store, rng)?,
            StageId::FrameAdapter => d.unet.init_frame_adapter(store, rng)?,
            StageId::TemporalAdapter => TemporalAdapter::new(d.unet.clone()).init_from_backbone(store, rng)?,
        }
    }
    store.set_trainable(|n| stage.is_trainable(n));
    Ok(())
}

/// Run `cfg.epochs` epochs of the diffusion objective with Adam.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    stage: StageId,
    d: &Denoiser,
    store: &mut ParamStore,
    examples: &[TrainingExample],
    cfg: &StageConfig,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<EpochLoss>> {
    ensure!(cfg.batch_size >= 1, "batch size must be positive");
    prepare_stage(stage, d, store, rng)?;
    if cfg.epochs > 0 {
        ensure!(!examples.is_empty(), "stage `{stage}` has no training examples");
    }
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let per_epoch = if cfg.max_clips == 0 { examples.len() } else { cfg.max_clips.min(examples.len()) };
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order[..per_epoch].chunks(cfg.batch_size) {
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in batch {
                let ex = &examples[i];
                let sample = DiffusionSample { z0: &ex.z0, cond: ex.conditioning(stage) };
                let (t, eps) = draw_noise(ex.z0.shape(), sched, rng);
                let g = Graph::new();
                let loss = example_loss(&g, d, store, &sample, t, &eps, sched);
                total += g.value(loss).item();
                for (name, grad) in g.backward(loss)?.param_grads() {
                    match acc.get_mut(&name) {
                        Some(a) => a.data_mut().iter_mut().zip(grad.data()).for_each(|(x, y)| *x += y),
                        None => {
                            acc.insert(name, grad);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in acc.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam.step(store, &acc)?;
        }
        let mean_loss = total / per_epoch as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numerical(format!("stage `{stage}` diverged at epoch {epoch}")));
        }
        log::info!("stage {stage} epoch {epoch}: loss {mean_loss:.4}");
        curve.push(EpochLoss { epoch, stage, mean_loss });
    }
    Ok(curve)
}

pub fn write_loss_csv(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut out = String::from("epoch,stage,mean_loss\n");
    for e in curve {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.stage, e.mean_loss));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
