//! Three-resolution UNet denoiser and the ControlNet-style temporal adapter.
//!
//! Layout for an input `[1, F, S]` with `c0 = base_channels`, `c1 = 2·c0`:
//!
//! ```text
//! conv_in → enc0(+xattn) ──────────────────────────── s0 ─┐
//!          down0 → enc1(+xattn) ─────────────── s1 ─┐     │
//!                  down1 → mid(+xattn) ─ m ─┐        │     │
//!                                         up ⊕ s1 → dec1 → reduce → up ⊕ s0 → dec0 → conv_out
//! ```
//!
//! The temporal adapter is a copy of everything left of the decoder. Its three
//! stage outputs pass through zero-initialized 1×1 convolutions and are added
//! to `s0`, `s1` and `m` before decoding.

use rand::Rng;

use super::{CrossAttentionLayer, FrameEmbeddingSeq, FrameProjector, ModelDims, TextEmbedding};
use crate::autodiff::{Graph, ParamStore, Parameter, Tensor, Var};
use crate::error::{ensure, Result};

pub const UNET_PREFIX: &str = "unet";
pub const FRAME_PROJ_PREFIX: &str = "frame_proj";
pub const TEMPORAL_PREFIX: &str = "temporal";

/// Fixed frequency-coordinate channels stacked onto the latent before
/// `conv_in`. Convolutions alone are translation-equivariant, so without
/// these a class template cannot be tied to its frequency bands.
pub const FREQ_POS_CHANNELS: usize = 4;

/// `[FREQ_POS_CHANNELS, F, S]`: `sin(πku)`, `cos(πku)` for `k = 1, 2`, where
/// `u` runs from 0 at the lowest bin to 1 at the highest.
pub fn freq_position(freq_bins: usize, time_bins: usize) -> Tensor {
    let denom = freq_bins.saturating_sub(1).max(1) as f64;
    Tensor::from_fn(&[FREQ_POS_CHANNELS, freq_bins, time_bins], |i| {
        let (ch, f) = (i / (freq_bins * time_bins), (i / time_bins) % freq_bins);
        let arg = std::f64::consts::PI * (1 + ch / 2) as f64 * f as f64 / denom;
        if ch % 2 == 0 { arg.sin() } else { arg.cos() }
    })
}

const ENCODER_PARTS: [&str; 7] = ["time.", "conv_in.", "enc0.", "down0.", "enc1.", "down1.", "mid."];

/// Sinusoidal embedding of a diffusion step, `[1, dim]`.
pub fn timestep_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * freq).sin();
        out[i + half] = (t as f64 * freq).cos();
    }
    Tensor::new(&[1, dim], out)
}

/// Zero-valued trainable parameters for the given `(name, shape)` list.
pub fn zero_fusion_init(shapes: &[(String, Vec<usize>)]) -> Vec<Parameter> {
    shapes
        .iter()
        .map(|(name, shape)| Parameter { name: name.clone(), tensor: Tensor::zeros(shape), trainable: true })
        .collect()
}

#[derive(Clone, Debug)]
pub struct UNet {
    pub dims: ModelDims,
}

impl UNet {
    pub fn new(dims: ModelDims) -> Self {
        Self { dims }
    }

    fn c0(&self) -> usize {
        self.dims.base_channels
    }

    fn c1(&self) -> usize {
        2 * self.dims.base_channels
    }

    fn xattn(&self, prefix: &str, stage: &str, channels: usize) -> CrossAttentionLayer {
        CrossAttentionLayer::new(format!("{prefix}.{stage}.xattn"), channels, self.dims.attn_dim, self.dims.embed_dim)
    }

    /// Every cross-attention layer of the backbone.
    pub fn attention_layers(&self) -> Vec<CrossAttentionLayer> {
        vec![
            self.xattn(UNET_PREFIX, "enc0", self.c0()),
            self.xattn(UNET_PREFIX, "enc1", self.c1()),
            self.xattn(UNET_PREFIX, "mid", self.c1()),
        ]
    }

    pub fn frame_projector(&self) -> FrameProjector {
        FrameProjector::new(FRAME_PROJ_PREFIX, self.dims.feat_dim, self.dims.projector_hidden, self.dims.embed_dim)
    }

    fn init_conv(store: &mut ParamStore, name: &str, c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) -> Result<()> {
        store.insert_randn(format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k, rng)?;
        store.insert_zeros(format!("{name}.b"), &[c_out])
    }

    fn init_block(&self, store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Result<()> {
        Self::init_conv(store, &format!("{name}.conv"), c, c, 3, rng)?;
        store.insert_randn(format!("{name}.temb_w"), &[self.dims.time_dim, c], self.dims.time_dim, rng)?;
        store.insert_zeros(format!("{name}.temb_b"), &[c])
    }

    /// Backbone parameters: text table, time MLP, encoder, decoder and
    /// text-branch attention. No frame branch.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let (c0, c1) = (self.c0(), self.c1());
        let p = UNET_PREFIX;
        // One row per class plus a shared context row appended to every prompt.
        store.insert_randn(format!("{p}.text_table"), &[self.dims.n_classes + 1, self.dims.embed_dim], 1, rng)?;
        store.insert_randn(format!("{p}.time.w1"), &[self.dims.time_dim, self.dims.time_dim], self.dims.time_dim, rng)?;
        store.insert_zeros(format!("{p}.time.b1"), &[self.dims.time_dim])?;
        Self::init_conv(store, &format!("{p}.conv_in"), c0, 1 + FREQ_POS_CHANNELS, 3, rng)?;
        self.init_block(store, &format!("{p}.enc0"), c0, rng)?;
        self.xattn(p, "enc0", c0).init_backbone(store, rng)?;
        Self::init_conv(store, &format!("{p}.down0"), c1, c0, 3, rng)?;
        self.init_block(store, &format!("{p}.enc1"), c1, rng)?;
        self.xattn(p, "enc1", c1).init_backbone(store, rng)?;
        Self::init_conv(store, &format!("{p}.down1"), c1, c1, 3, rng)?;
        self.init_block(store, &format!("{p}.mid"), c1, rng)?;
        self.xattn(p, "mid", c1).init_backbone(store, rng)?;
        self.init_block(store, &format!("{p}.dec1"), c1, rng)?;
        Self::init_conv(store, &format!("{p}.reduce"), c0, c1, 1, rng)?;
        self.init_block(store, &format!("{p}.dec0"), c0, rng)?;
        Self::init_conv(store, &format!("{p}.conv_out"), 1, c0, 3, rng)
    }

    /// Add the frame adapter: projector plus per-layer frame key/value weights.
    pub fn init_frame_adapter(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.frame_projector().init(store, rng)?;
        for layer in self.attention_layers() {
            layer.init_frame_branch(store)?;
        }
        Ok(())
    }

    pub fn has_frame_adapter(&self, store: &ParamStore) -> bool {
        store.contains(&format!("{FRAME_PROJ_PREFIX}.w1"))
    }

    fn conv(&self, g: &Graph, store: &ParamStore, name: &str, x: Var, stride: usize, pad: usize) -> Var {
        let w = g.param(store, &format!("{name}.w"));
        let b = g.param(store, &format!("{name}.b"));
        g.conv2d(x, w, Some(b), stride, pad)
    }

    /// `x + silu(conv(x) + W_t·temb)`.
    fn block(&self, g: &Graph, store: &ParamStore, name: &str, x: Var, temb: Var) -> Var {
        let h = self.conv(g, store, &format!("{name}.conv"), x, 1, 1);
        let tb = g.matmul(temb, g.param(store, &format!("{name}.temb_w")));
        let tb = g.add_row_bias(tb, g.param(store, &format!("{name}.temb_b")));
        let c = g.shape(h)[0];
        let tb = g.reshape(tb, &[c]);
        let h = g.add_channel_bias(h, tb);
        let h = g.silu(h);
        g.add(x, h)
    }

    pub fn time_features(&self, g: &Graph, store: &ParamStore, prefix: &str, t: usize) -> Var {
        let e = g.constant(timestep_embedding(t, self.dims.time_dim));
        let h = g.matmul(e, g.param(store, &format!("{prefix}.time.w1")));
        let h = g.add_row_bias(h, g.param(store, &format!("{prefix}.time.b1")));
        g.silu(h)
    }

    /// `[2, embed_dim]`: the class token followed by the shared context token.
    /// With a lone key the attention softmax is constant and W_Q, W_K_text
    /// would never see a gradient.
    pub fn text_tokens(&self, g: &Graph, store: &ParamStore, label: usize) -> Var {
        g.gather_rows(g.param(store, &format!("{UNET_PREFIX}.text_table")), &[label, self.dims.n_classes])
    }

    /// Encoder stages under `prefix`; `inject` is added after `conv_in`.
    #[allow(clippy::too_many_arguments)]
    pub fn encode(
        &self,
        g: &Graph,
        store: &ParamStore,
        prefix: &str,
        x: Var,
        temb: Var,
        text: Var,
        frames: Option<Var>,
        lambda: f64,
        inject: Option<Var>,
    ) -> [Var; 3] {
        let (c0, c1) = (self.c0(), self.c1());
        let (f, t) = (g.shape(x)[1], g.shape(x)[2]);
        let pos = g.constant(freq_position(f, t).reshaped(&[FREQ_POS_CHANNELS, f * t]));
        let flat = g.reshape(x, &[1, f * t]);
        let stacked = g.concat_rows(&[flat, pos]);
        let x = g.reshape(stacked, &[1 + FREQ_POS_CHANNELS, f, t]);
        let mut h = self.conv(g, store, &format!("{prefix}.conv_in"), x, 1, 1);
        if let Some(extra) = inject {
            h = g.add(h, extra);
        }
        let h = self.block(g, store, &format!("{prefix}.enc0"), h, temb);
        let s0 = self.xattn(prefix, "enc0", c0).forward(g, store, h, text, frames, lambda);
        let h = self.conv(g, store, &format!("{prefix}.down0"), s0, 2, 1);
        let h = self.block(g, store, &format!("{prefix}.enc1"), h, temb);
        let s1 = self.xattn(prefix, "enc1", c1).forward(g, store, h, text, frames, lambda);
        let h = self.conv(g, store, &format!("{prefix}.down1"), s1, 2, 1);
        let h = self.block(g, store, &format!("{prefix}.mid"), h, temb);
        let m = self.xattn(prefix, "mid", c1).forward(g, store, h, text, frames, lambda);
        [s0, s1, m]
    }

    fn decode(&self, g: &Graph, store: &ParamStore, enc: [Var; 3], temb: Var, residuals: Option<[Var; 3]>) -> Var {
        let p = UNET_PREFIX;
        let [mut s0, mut s1, mut m] = enc;
        if let Some([r0, r1, r2]) = residuals {
            s0 = g.add(s0, r0);
            s1 = g.add(s1, r1);
            m = g.add(m, r2);
        }
        let up = g.upsample2x(m);
        let h = g.add(up, s1);
        let h = self.block(g, store, &format!("{p}.dec1"), h, temb);
        let h = self.conv(g, store, &format!("{p}.reduce"), h, 1, 0);
        let up = g.upsample2x(h);
        let h = g.add(up, s0);
        let h = self.block(g, store, &format!("{p}.dec0"), h, temb);
        let h = g.silu(h);
        self.conv(g, store, &format!("{p}.conv_out"), h, 1, 1)
    }

    /// Predicted noise for `z: [1, F, S]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &Graph,
        store: &ParamStore,
        z: Var,
        t: usize,
        text: Var,
        frames: Option<Var>,
        lambda: f64,
        residuals: Option<[Var; 3]>,
    ) -> Var {
        let temb = self.time_features(g, store, UNET_PREFIX, t);
        let enc = self.encode(g, store, UNET_PREFIX, z, temb, text, frames, lambda, None);
        self.decode(g, store, enc, temb, residuals)
    }

    /// Shapes of the three encoder stage outputs for a latent of `[1, F, S]`.
    pub fn stage_shapes(&self) -> [Vec<usize>; 3] {
        let (f, s) = (self.dims.freq_bins, self.dims.time_bins);
        [
            vec![self.c0(), f, s],
            vec![self.c1(), f.div_ceil(2), s.div_ceil(2)],
            vec![self.c1(), f.div_ceil(2).div_ceil(2), s.div_ceil(2).div_ceil(2)],
        ]
    }
}

/// Validated tensor-level denoiser call.
#[allow(clippy::too_many_arguments)]
pub fn unet_denoise(
    unet: &UNet,
    store: &ParamStore,
    z_t: &Tensor,
    t: usize,
    text: &TextEmbedding,
    frames: Option<&FrameEmbeddingSeq>,
    lambda: f64,
    residuals: Option<&[Tensor; 3]>,
) -> Result<Tensor> {
    let d = &unet.dims;
    ensure!(
        z_t.shape() == [1, d.freq_bins, d.time_bins],
        "latent must be [1, {}, {}], got {:?}",
        d.freq_bins,
        d.time_bins,
        z_t.shape()
    );
    ensure!(z_t.is_finite(), "latent contains non-finite values");
    ensure!(d.freq_bins.is_multiple_of(4) && d.time_bins.is_multiple_of(4), "latent dims must be divisible by 4");
    ensure!(text.embedding.shape().len() == 2 && text.embedding.shape()[1] == d.embed_dim, "text embedding width mismatch");
    let shapes = unet.stage_shapes();
    if let Some(res) = residuals {
        for (r, s) in res.iter().zip(&shapes) {
            ensure!(r.shape() == s.as_slice(), "residual shape {:?} does not match stage shape {s:?}", r.shape());
        }
    }
    let g = Graph::new();
    let txt = g.constant(text.embedding.clone());
    let fr = frames.map(|f| g.constant(f.embeddings.clone()));
    let res = residuals.map(|r| [g.constant(r[0].clone()), g.constant(r[1].clone()), g.constant(r[2].clone())]);
    let out = unet.forward(&g, store, g.constant(z_t.clone()), t, txt, fr, lambda, res);
    Ok(g.value(out).as_ref().clone())
}

/// Trainable copy of the backbone encoder conditioned on a [1, F, S] activity plane.
#[derive(Clone, Debug)]
pub struct TemporalAdapter {
    pub unet: UNet,
}

impl TemporalAdapter {
    pub fn new(unet: UNet) -> Self {
        Self { unet }
    }

    fn name(p: &str) -> String {
        format!("{TEMPORAL_PREFIX}.{p}")
    }

    pub fn fusion_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c0, c1) = (self.unet.c0(), self.unet.c1());
        let mut out = Vec::new();
        for (n, c) in [("cond_zero", c0), ("fuse0", c0), ("fuse1", c1), ("fuse2", c1)] {
            out.push((Self::name(&format!("{n}.w")), vec![c, c, 1, 1]));
            out.push((Self::name(&format!("{n}.b")), vec![c]));
        }
        out
    }

    pub fn is_present(store: &ParamStore) -> bool {
        store.contains(&Self::name("cond_in.w"))
    }

    /// Clone the backbone encoder, add the condition stem and zero fusion layers.
    pub fn init_from_backbone(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let prefix = format!("{UNET_PREFIX}.");
        let copies: Vec<(String, Tensor)> = store
            .iter()
            .filter_map(|p| {
                let rest = p.name.strip_prefix(&prefix)?;
                let encoder = ENCODER_PARTS.iter().any(|part| rest.starts_with(part));
                let frame_branch = rest.ends_with("w_k_frame") || rest.ends_with("w_v_frame");
                (encoder && !frame_branch).then(|| (Self::name(rest), p.tensor.clone()))
            })
            .collect();
        for (name, t) in copies {
            store.insert(name, t, true)?;
        }
        UNet::init_conv(store, &Self::name("cond_in"), self.unet.c0(), 1, 3, rng)?;
        for p in zero_fusion_init(&self.fusion_shapes()) {
            store.insert(p.name, p.tensor, p.trainable)?;
        }
        Ok(())
    }

    fn conv1x1(&self, g: &Graph, store: &ParamStore, n: &str, x: Var) -> Var {
        self.unet.conv(g, store, &Self::name(n), x, 1, 0)
    }

    /// Residuals to add at the three decoder inputs.
    pub fn residuals(&self, g: &Graph, store: &ParamStore, z: Var, t: usize, text: Var, cond: Var) -> [Var; 3] {
        let temb = self.unet.time_features(g, store, TEMPORAL_PREFIX, t);
        let c = self.unet.conv(g, store, &Self::name("cond_in"), cond, 1, 1);
        let c = g.silu(c);
        let inject = self.conv1x1(g, store, "cond_zero", c);
        let [s0, s1, m] = self.unet.encode(g, store, TEMPORAL_PREFIX, z, temb, text, None, 0.0, Some(inject));
        [
            self.conv1x1(g, store, "fuse0", s0),
            self.conv1x1(g, store, "fuse1", s1),
            self.conv1x1(g, store, "fuse2", m),
        ]
    }
}

/// Per-example conditioning for the denoiser.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning<'a> {
    pub label: usize,
    /// Raw frame features `[T_f, d_v]`.
    pub frames: Option<&'a Tensor>,
    /// Activity plane `[1, F, S]` for the temporal adapter.
    pub cond_map: Option<&'a Tensor>,
}

impl<'a> Conditioning<'a> {
    pub fn text_only(label: usize) -> Self {
        Self { label, frames: None, cond_map: None }
    }
}

/// Backbone plus whatever adapters are present in the parameter store.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub unet: UNet,
    pub lambda: f64,
    /// When false, frames are mean-pooled to a single clip-wise token.
    pub frame_wise: bool,
}

impl Denoiser {
    pub fn new(dims: ModelDims, lambda: f64, frame_wise: bool) -> Self {
        Self { unet: UNet::new(dims), lambda, frame_wise }
    }

    pub fn frame_tokens(&self, g: &Graph, store: &ParamStore, frames: &Tensor) -> Var {
        let x = g.constant(frames.clone());
        let x = if self.frame_wise { x } else { g.mean_rows(x) };
        self.unet.frame_projector().forward(g, store, x)
    }

    pub fn predict(&self, g: &Graph, store: &ParamStore, z: Var, t: usize, c: &Conditioning) -> Var {
        let text = self.unet.text_tokens(g, store, c.label);
        let frames = match c.frames {
            Some(f) if self.unet.has_frame_adapter(store) => Some(self.frame_tokens(g, store, f)),
            _ => None,
        };
        let residuals = match c.cond_map {
            Some(cond) if TemporalAdapter::is_present(store) => {
                let adapter = TemporalAdapter::new(self.unet.clone());
                Some(adapter.residuals(g, store, z, t, text, g.constant(cond.clone())))
            }
            _ => None,
        };
        self.unet.forward(g, store, z, t, text, frames, self.lambda, residuals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_sampled;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            n_classes: 3,
            feat_dim: 4,
            embed_dim: 4,
            attn_dim: 4,
            base_channels: 2,
            time_dim: 4,
            projector_hidden: 4,
            freq_bins: 4,
            time_bins: 8,
        }
    }

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn reference_shape_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let unet = UNet::new(ModelDims::default());
        let mut store = ParamStore::new();
        unet.init(&mut store, &mut rng).unwrap();
        let z = rand_tensor(&[1, 32, 128], &mut rng);
        let row = store.tensor("unet.text_table").row(2).to_vec();
        let text = TextEmbedding { embedding: Tensor::new(&[1, 32], row), label_id: 2 };
        let out = unet_denoise(&unet, &store, &z, 17, &text, None, 1.0, None).unwrap();
        assert_eq!(out.shape(), &[1, 32, 128]);
    }

    #[test]
    fn zero_residuals_match_no_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let unet = UNet::new(small_dims());
        let mut store = ParamStore::new();
        unet.init(&mut store, &mut rng).unwrap();
        let z = rand_tensor(&[1, 4, 8], &mut rng);
        let text = TextEmbedding { embedding: rand_tensor(&[1, 4], &mut rng), label_id: 0 };
        let zeros = unet.stage_shapes().map(|s| Tensor::zeros(&s));
        let a = unet_denoise(&unet, &store, &z, 3, &text, None, 1.0, None).unwrap();
        let b = unet_denoise(&unet, &store, &z, 3, &text, None, 1.0, Some(&zeros)).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        let bad = [Tensor::zeros(&[1, 1, 1]), zeros[1].clone(), zeros[2].clone()];
        assert!(unet_denoise(&unet, &store, &z, 3, &text, None, 1.0, Some(&bad)).is_err());
    }

    #[test]
    fn frames_absent_matches_text_only_backbone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = small_dims();
        let d = Denoiser::new(dims.clone(), 1.0, true);
        let mut store = ParamStore::new();
        d.unet.init(&mut store, &mut rng).unwrap();
        let backbone_only = store.clone();
        d.unet.init_frame_adapter(&mut store, &mut rng).unwrap();
        let z = rand_tensor(&[1, 4, 8], &mut rng);
        let run = |s: &ParamStore| {
            let g = Graph::new();
            let out = d.predict(&g, s, g.constant(z.clone()), 5, &Conditioning::text_only(1));
            g.value(out).to_le_bytes()
        };
        assert_eq!(run(&store), run(&backbone_only));
    }

    #[test]
    fn zero_fused_adapter_leaves_output_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Denoiser::new(small_dims(), 1.0, true);
        let mut store = ParamStore::new();
        d.unet.init(&mut store, &mut rng).unwrap();
        let base = store.clone();
        TemporalAdapter::new(d.unet.clone()).init_from_backbone(&mut store, &mut rng).unwrap();
        assert!(zero_fusion_init(&TemporalAdapter::new(d.unet.clone()).fusion_shapes())
            .iter()
            .all(|p| p.tensor.max_abs() == 0.0));
        let z = rand_tensor(&[1, 4, 8], &mut rng);
        let cond = Tensor::from_fn(&[1, 4, 8], |i| ((i % 8) >= 3) as u8 as f64);
        let g = Graph::new();
        let c = Conditioning { label: 2, frames: None, cond_map: Some(&cond) };
        let with = d.predict(&g, &store, g.constant(z.clone()), 9, &c);
        let g2 = Graph::new();
        let without = d.predict(&g2, &base, g2.constant(z.clone()), 9, &Conditioning::text_only(2));
        assert_eq!(g.value(with).to_le_bytes(), g2.value(without).to_le_bytes());
    }

    #[test]
    fn denoiser_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Denoiser::new(small_dims(), 0.8, true);
        let mut store = ParamStore::new();
        d.unet.init(&mut store, &mut rng).unwrap();
        d.unet.init_frame_adapter(&mut store, &mut rng).unwrap();
        TemporalAdapter::new(d.unet.clone()).init_from_backbone(&mut store, &mut rng).unwrap();
        // Nonzero fusion weights so gradients reach the adapter clone.
        for p in store.iter_mut().filter(|p| p.name.contains("fuse") || p.name.contains("cond_zero")) {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let z = rand_tensor(&[1, 4, 8], &mut rng);
        let frames = rand_tensor(&[3, 4], &mut rng);
        let cond = Tensor::from_fn(&[1, 4, 8], |i| ((i % 8) < 5) as u8 as f64);
        let eps = rand_tensor(&[1, 4, 8], &mut rng);
        let r = grad_check_sampled(
            |g, s| {
                let c = Conditioning { label: 1, frames: Some(&frames), cond_map: Some(&cond) };
                let pred = d.predict(g, s, g.constant(z.clone()), 4, &c);
                g.mse(pred, g.constant(eps.clone()))
            },
            &store,
            1e-5,
            6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
