//! Network blocks: the frame projector, parallel cross-attention, the UNet
//! denoiser and its zero-fused temporal adapter.

mod attention;
mod projector;
mod unet;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{ensure, Result};

pub use attention::{attend, parallel_cross_attention, CrossAttentionLayer, CrossAttentionWeights};
pub use projector::{project_frames, FrameProjector};
pub use unet::{
    timestep_embedding, unet_denoise, zero_fusion_init, Conditioning, Denoiser, TemporalAdapter, UNet,
    FRAME_PROJ_PREFIX, TEMPORAL_PREFIX, UNET_PREFIX,
};

/// Model widths. Defaults are the reference configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub n_classes: usize,
    /// Raw per-frame visual feature width.
    pub feat_dim: usize,
    /// Width of text and frame embeddings fed to cross-attention.
    pub embed_dim: usize,
    /// Query/key/value width inside cross-attention.
    pub attn_dim: usize,
    pub base_channels: usize,
    pub time_dim: usize,
    pub projector_hidden: usize,
    pub freq_bins: usize,
    pub time_bins: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            n_classes: 8,
            feat_dim: 16,
            embed_dim: 32,
            attn_dim: 32,
            base_channels: 16,
            time_dim: 32,
            projector_hidden: 32,
            freq_bins: 32,
            time_bins: 128,
        }
    }
}

/// Raw per-frame visual features, `[T_f, d_v]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureSeq {
    pub features: Tensor,
    pub fps: f64,
}

impl FrameFeatureSeq {
    pub fn new(features: Tensor, fps: f64) -> Result<Self> {
        ensure!(features.shape().len() == 2 && features.shape()[0] >= 1, "frame features must be [T_f >= 1, d_v]");
        ensure!(features.is_finite(), "frame features must be finite");
        Ok(Self { features, fps })
    }

    pub fn n_frames(&self) -> usize {
        self.features.shape()[0]
    }

    /// Clip-wise fallback: the mean feature as a single frame.
    pub fn mean_pooled(&self) -> Self {
        let (t, d) = (self.features.shape()[0], self.features.shape()[1]);
        let mut mean = vec![0.0; d];
        for row in self.features.data().chunks(d) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / t as f64);
        }
        Self { features: Tensor::new(&[1, d], mean), fps: self.fps / t as f64 }
    }
}

/// Projected frame embeddings, `[T_f, d_e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEmbeddingSeq {
    pub embeddings: Tensor,
}

/// Text tokens, `[L, d_e]`; a bare class label is one token.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub embedding: Tensor,
    pub label_id: usize,
}
