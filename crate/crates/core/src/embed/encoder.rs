use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::nn::FrameProjector;

pub const EMBEDDER_PREFIX: &str = "embedder";

/// Shapes of the three encoders sharing one embedding space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderDims {
    pub n_classes: usize,
    pub feat_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub audio_channels: [usize; 2],
    /// Average-pool window `(freq, time)` applied before the audio convs.
    pub audio_pool: [usize; 2],
    pub freq_bins: usize,
    pub time_bins: usize,
    pub temperature: f64,
}

impl Default for EmbedderDims {
    fn default() -> Self {
        Self {
            n_classes: 8,
            feat_dim: 16,
            embed_dim: 32,
            hidden: 32,
            audio_channels: [8, 16],
            audio_pool: [2, 4],
            freq_bins: 32,
            time_bins: 128,
            temperature: 0.07,
        }
    }
}

/// Label lookup table, frame perceptron and a small conv audio encoder.
/// Every output row is L2-normalised.
#[derive(Clone, Debug)]
pub struct JointEmbedder {
    pub dims: EmbedderDims,
}

fn name(p: &str) -> String {
    format!("{EMBEDDER_PREFIX}.{p}")
}

impl JointEmbedder {
    pub fn new(dims: EmbedderDims) -> Self {
        Self { dims }
    }

    fn frame_encoder(&self) -> FrameProjector {
        FrameProjector::new(name("frame"), self.dims.feat_dim, self.dims.hidden, self.dims.embed_dim)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let d = &self.dims;
        ensure!(d.temperature > 0.0, "temperature must be positive");
        ensure!(
            d.freq_bins.is_multiple_of(d.audio_pool[0]) && d.time_bins.is_multiple_of(d.audio_pool[1]),
            "audio pool window must tile the spectrogram"
        );
        store.insert_randn(name("text_table"), &[d.n_classes, d.embed_dim], 1, rng)?;
        self.frame_encoder().init(store, rng)?;
        let [c1, c2] = d.audio_channels;
        store.insert_randn(name("audio.conv1.w"), &[c1, 1, 3, 3], 9, rng)?;
        store.insert_zeros(name("audio.conv1.b"), &[c1])?;
        store.insert_randn(name("audio.conv2.w"), &[c2, c1, 3, 3], 9 * c1, rng)?;
        store.insert_zeros(name("audio.conv2.b"), &[c2])?;
        store.insert_randn(name("audio.out.w"), &[c2, d.embed_dim], c2, rng)?;
        store.insert_zeros(name("audio.out.b"), &[d.embed_dim])
    }

    pub fn is_present(store: &ParamStore) -> bool {
        store.contains(&name("text_table"))
    }

    fn check_trained(store: &ParamStore) -> Result<()> {
        if Self::is_present(store) {
            Ok(())
        } else {
            Err(Error::MissingPrerequisite { stage: "train-embedder".into() })
        }
    }

    /// `[labels.len(), d_e]`
    pub fn text(&self, g: &Graph, store: &ParamStore, labels: &[usize]) -> Var {
        g.l2_normalize_rows(g.gather_rows(g.param(store, &name("text_table")), labels))
    }

    /// `frames: [n, d_v]` to `[n, d_e]`
    pub fn frames(&self, g: &Graph, store: &ParamStore, frames: Var) -> Var {
        g.l2_normalize_rows(self.frame_encoder().forward(g, store, frames))
    }

    /// `spec: [1, F, S]` to `[1, d_e]`
    pub fn audio(&self, g: &Graph, store: &ParamStore, spec: Var) -> Var {
        let [pf, pt] = self.dims.audio_pool;
        let x = g.avg_pool2d(spec, pf, pt);
        let x = g.silu(g.conv2d(x, g.param(store, &name("audio.conv1.w")), Some(g.param(store, &name("audio.conv1.b"))), 1, 1));
        let x = g.silu(g.conv2d(x, g.param(store, &name("audio.conv2.w")), Some(g.param(store, &name("audio.conv2.b"))), 2, 1));
        let shape = g.shape(x);
        let pooled = g.mean_last(g.reshape(x, &[shape[0], shape[1] * shape[2]]));
        let pooled = g.reshape(pooled, &[1, shape[0]]);
        let y = g.add_row_bias(g.matmul(pooled, g.param(store, &name("audio.out.w"))), g.param(store, &name("audio.out.b")));
        g.l2_normalize_rows(y)
    }

    pub fn embed_text(&self, store: &ParamStore, label: usize) -> Result<Vec<f64>> {
        Self::check_trained(store)?;
        if label >= self.dims.n_classes {
            return Err(Error::Contract(format!("unknown label id {label}")));
        }
        let g = Graph::new();
        let v = self.text(&g, store, &[label]);
        Ok(g.value(v).data().to_vec())
    }

    /// Unit embeddings for every row of `frames: [T_f, d_v]`.
    pub fn embed_frames(&self, store: &ParamStore, frames: &Tensor) -> Result<Tensor> {
        Self::check_trained(store)?;
        ensure!(
            frames.shape().len() == 2 && frames.shape()[1] == self.dims.feat_dim,
            "frame features must be [T_f, {}], got {:?}",
            self.dims.feat_dim,
            frames.shape()
        );
        let g = Graph::new();
        let v = self.frames(&g, store, g.constant(frames.clone()));
        Ok(g.value(v).as_ref().clone())
    }

    pub fn embed_frame(&self, store: &ParamStore, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed_frames(store, &Tensor::new(&[1, frame.len()], frame.to_vec()))?.into_data())
    }

    pub fn embed_audio(&self, store: &ParamStore, spec: &Tensor) -> Result<Vec<f64>> {
        Self::check_trained(store)?;
        let d = &self.dims;
        ensure!(
            spec.shape() == [1, d.freq_bins, d.time_bins],
            "spectrogram must be [1, {}, {}], got {:?}",
            d.freq_bins,
            d.time_bins,
            spec.shape()
        );
        let g = Graph::new();
        let v = self.audio(&g, store, g.constant(spec.clone()));
        Ok(g.value(v).data().to_vec())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}
