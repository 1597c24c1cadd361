use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::corpus::CorpusConfig;
use crate::diffusion::{NoiseSchedule, StageConfig};
use crate::embed::{EmbedderDims, EmbedderTrainConfig};
use crate::error::{Error, Result};
use crate::metrics::TaggerTrainConfig;
use crate::nn::ModelDims;
use crate::temporal::ThresholdMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub corpus_seed: u64,
    pub train_seed: u64,
    pub sample_seed: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { corpus_seed: 42, train_seed: 7, sample_seed: 11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 200, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Affine map from spectrogram to diffusion latent: `z = (x - shift) * scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub shift: f64,
    pub scale: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

impl LatentConfig {
    pub fn encode_value(&self, x: f64) -> f64 {
        (x - self.shift) * self.scale
    }

    pub fn encode(&self, spec: &Tensor) -> Tensor {
        spec.map(|x| (x - self.shift) * self.scale)
    }

    pub fn decode(&self, z: &Tensor) -> Tensor {
        z.map(|v| v / self.scale + self.shift)
    }
}

/// Optional clamp of the implied clean estimate during sampling, in
/// spectrogram units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub clip_x0: bool,
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { clip_x0: false, x_min: 0.0, x_max: 1.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub tau_g: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { tau_g: 0.6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditioningConfig {
    pub lambda: f64,
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self { lambda: 1.0, threshold: 0.5, threshold_mode: ThresholdMode::Calibrated }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    #[default]
    On,
    Off,
}

impl Toggle {
    pub fn is_on(self) -> bool {
        self == Toggle::On
    }
}

/// Source of the temporal condition at inference time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TemporalSource {
    GroundTruth,
    #[default]
    Predicted,
    None,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub frame_wise: Toggle,
    pub temporal_condition: TemporalSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate at most this many clips of the continuous test split (0 = all).
    pub max_clips: usize,
    pub onset_tolerance: usize,
    pub probe_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_clips: 0, onset_tolerance: 2, probe_k: 3 }
    }
}

fn stage(epochs: usize) -> StageConfig {
    StageConfig { epochs, ..Default::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    pub corpus: CorpusConfig,
    pub filter: FilterConfig,
    pub model: ModelDims,
    pub latent: LatentConfig,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub embedder: EmbedderDims,
    pub embedder_train: EmbedderTrainConfig,
    pub backbone: StageConfig,
    pub frame_adapter: StageConfig,
    pub temporal_adapter: StageConfig,
    pub tagger: TaggerTrainConfig,
    pub conditioning: ConditioningConfig,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            seeds: Seeds::default(),
            corpus: CorpusConfig::default(),
            filter: FilterConfig::default(),
            model: ModelDims::default(),
            latent: LatentConfig::default(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            embedder: EmbedderDims::default(),
            embedder_train: EmbedderTrainConfig::default(),
            backbone: stage(30),
            frame_adapter: stage(15),
            temporal_adapter: stage(15),
            tagger: TaggerTrainConfig::default(),
            conditioning: ConditioningConfig::default(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply one `section.key=value` override to a TOML tree.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{path}`")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("`{k}` in `{path}` is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parse TOML text, apply overrides, and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        let (c, m, e) = (&self.corpus, &self.model, &self.embedder);
        let agree = m.n_classes == c.n_classes
            && m.feat_dim == c.feat_dim
            && m.freq_bins == c.freq_bins
            && m.time_bins == c.time_bins
            && e.n_classes == c.n_classes
            && e.feat_dim == c.feat_dim
            && e.freq_bins == c.freq_bins
            && e.time_bins == c.time_bins;
        if !agree {
            return Err(Error::Config("model, embedder and corpus shapes disagree".into()));
        }
        if m.freq_bins % 4 != 0 || m.time_bins % 4 != 0 {
            return Err(Error::Config("spectrogram sides must be divisible by 4 for the UNet".into()));
        }
        if !(self.latent.scale.is_finite() && self.latent.scale > 0.0 && self.latent.shift.is_finite()) {
            return Err(Error::Config("latent scale must be positive and shift finite".into()));
        }
        if self.sampler.clip_x0 && self.sampler.x_min.partial_cmp(&self.sampler.x_max) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config("sampler x_min must be below x_max".into()));
        }
        if self.conditioning.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.filter.tau_g) {
            return Err(Error::Config("tau_g must lie in [0, 1]".into()));
        }
        for s in [&self.backbone, &self.frame_adapter, &self.temporal_adapter] {
            if s.batch_size == 0 || s.lr <= 0.0 {
                return Err(Error::Config("stage batch_size and lr must be positive".into()));
            }
        }
        self.schedule.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted) JSON form, excluding the
    /// output location.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        v.as_object_mut().unwrap().remove("output_dir");
        let digest = Sha256::digest(serde_json::to_string(&v).unwrap().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}
