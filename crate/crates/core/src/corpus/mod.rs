//! Procedural audiovisual corpus and the continuous-subset filtering
//! pipeline.

mod filter;
mod generate;
mod io;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{ensure, Error, Result};

pub use filter::{
    apply_test_pick, filter_continuous, grounding_score, read_pick_list, FilterDecision, FilterReason,
    FilteredManifest, PickReport,
};
pub use generate::{class_directions, generate_corpus, template, TEMPLATE_BUMPS};
pub use io::{read_clip, write_clip, CLIP_MAGIC, CLIP_VERSION};

pub const GENERATOR_VERSION: &str = "sfcl-gen/1";

pub const CLASS_NAMES: [&str; 8] = [
    "engine idling",
    "wind blowing",
    "stream flowing",
    "lawn mowing",
    "helicopter",
    "vacuum cleaner",
    "dog barking",
    "door slamming",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub frames: usize,
    pub feat_dim: usize,
    pub fps: f64,
    pub freq_bins: usize,
    pub time_bins: usize,
    pub corruption_rate: f64,
    /// Spectral shift in bins at full proximity.
    pub doppler_bins: f64,
    pub continuous_labels: Vec<usize>,
    pub background_level: f64,
    pub background_noise: f64,
    pub frame_noise: f64,
    pub scene_jitter: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 512,
            n_val: 64,
            n_test: 95,
            n_classes: 8,
            frames: 32,
            feat_dim: 16,
            fps: 8.0,
            freq_bins: 32,
            time_bins: 128,
            corruption_rate: 0.1,
            doppler_bins: 3.0,
            continuous_labels: (0..6).collect(),
            background_level: 0.03,
            background_noise: 0.002,
            frame_noise: 0.02,
            scene_jitter: 0.03,
        }
    }
}

impl CorpusConfig {
    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// Spectrogram columns per video frame.
    pub fn cols_per_frame(&self) -> usize {
        self.time_bins / self.frames
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.n_classes, self.frames, self.feat_dim, self.freq_bins, self.time_bins];
        if positive.contains(&0) || self.fps <= 0.0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        if self.n_classes > TEMPLATE_BUMPS.len() {
            return Err(Error::Config(format!("at most {} classes have templates", TEMPLATE_BUMPS.len())));
        }
        if self.feat_dim <= self.n_classes {
            return Err(Error::Config("feat_dim must exceed n_classes".into()));
        }
        if !self.time_bins.is_multiple_of(self.frames) {
            return Err(Error::Config("time_bins must be a multiple of frames".into()));
        }
        if self.frames < 16 {
            return Err(Error::Config("clips need at least 16 frames".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Config("corruption_rate must lie in [0, 1]".into()));
        }
        if self.continuous_labels.iter().any(|&l| l >= self.n_classes) {
            return Err(Error::Config("continuous label out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// How the sound source's proximity evolves over the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Steady,
    ApproachRecede,
    /// Visual presence fades while the sound continues.
    Decay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub corrupted: bool,
    /// Class whose template produced the audio (differs from `label` iff corrupted).
    pub audio_label: usize,
    pub scenario: Scenario,
    #[serde(default)]
    pub grounding_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    /// Clip directory root, relative to the manifest file.
    pub root: PathBuf,
    pub seed: u64,
    pub generator_version: String,
    pub class_names: Vec<String>,
    pub config: CorpusConfig,
    pub clips: Vec<ClipRecord>,
}

impl CorpusManifest {
    pub fn count(&self, split: Split) -> usize {
        self.clips.iter().filter(|c| c.split == split).count()
    }

    pub fn record(&self, id: &str) -> Option<&ClipRecord> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One synthetic example, held as the exact `f32`-representable values
/// that are written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusClip {
    pub id: String,
    pub label: usize,
    /// `[T_f, d_v]`
    pub frames: Tensor,
    /// `[1, F, S]` non-negative magnitudes
    pub spectrogram: Tensor,
    pub gt_mask: Vec<u8>,
    /// Per-frame proximity in `[0, 1]`, zero outside the event.
    pub proximity: Vec<f64>,
    pub corrupted: bool,
    pub scenario: Scenario,
}

impl CorpusClip {
    pub fn event_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.gt_mask.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i)
    }

    /// Mean per-column magnitude inside and outside the event, as
    /// `(inside, outside)`; `outside` is `None` when the event spans the clip.
    pub fn energy_inside_outside(&self) -> (f64, Option<f64>) {
        let (f, s) = (self.spectrogram.shape()[1], self.spectrogram.shape()[2]);
        let r = s / self.gt_mask.len();
        let (mut e_in, mut n_in, mut e_out, mut n_out) = (0.0, 0, 0.0, 0);
        for col in 0..s {
            let e: f64 = (0..f).map(|fi| self.spectrogram.data()[fi * s + col]).sum();
            if self.gt_mask[col / r] == 1 {
                e_in += e;
                n_in += 1;
            } else {
                e_out += e;
                n_out += 1;
            }
        }
        (e_in / n_in.max(1) as f64, (n_out > 0).then(|| e_out / n_out as f64))
    }
}

/// A manifest together with all of its clips loaded from disk.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub clips: Vec<CorpusClip>,
}

impl Corpus {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = Self::manifest_path(dir);
        if !mpath.exists() {
            return Err(Error::MissingPrerequisite { stage: "gen-corpus".into() });
        }
        let manifest = CorpusManifest::load(&mpath)?;
        let root = dir.join(&manifest.root);
        let clips = manifest
            .clips
            .iter()
            .map(|r| read_clip(&root.join("clips").join(format!("{}.bin", r.id)), r, &manifest.config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, clips })
    }

    pub fn clip(&self, id: &str) -> Result<&CorpusClip> {
        self.clips.iter().find(|c| c.id == id).ok_or_else(|| Error::UnknownClip(id.into()))
    }

    /// Clips of `split` in manifest order.
    pub fn split<'a>(&'a self, split: Split) -> impl Iterator<Item = &'a CorpusClip> + 'a {
        self.manifest.clips.iter().zip(&self.clips).filter(move |(r, _)| r.split == split).map(|(_, c)| c)
    }

    /// Keep only the clips named in `manifest` (e.g. a filtered subset).
    pub fn restrict(&self, manifest: &CorpusManifest) -> Result<Corpus> {
        let clips = manifest.clips.iter().map(|r| self.clip(&r.id).cloned()).collect::<Result<Vec<_>>>()?;
        ensure!(manifest.config == self.manifest.config, "subset manifest comes from a different corpus");
        Ok(Corpus { manifest: manifest.clone(), clips })
    }
}
