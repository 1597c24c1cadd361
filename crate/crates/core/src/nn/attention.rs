//! Parallel text/frame cross-attention.
//!
//! The text branch uses projections inherited from the pre-trained denoiser
//! and stays frozen once the backbone is trained. The frame branch has its
//! own key/value projections; its output is added with weight `lambda`:
//!
//! ```text
//! out = softmax(Q K_text^T / sqrt(d)) V_text + lambda * softmax(Q K_frame^T / sqrt(d)) V_frame
//! ```

use rand::Rng;

use super::{FrameEmbeddingSeq, TextEmbedding};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{ensure, Result};

/// Concrete weights for a standalone evaluation of the parallel attention.
#[derive(Clone, Debug)]
pub struct CrossAttentionWeights {
    pub w_k_text: Tensor,
    pub w_v_text: Tensor,
    pub w_k_frame: Tensor,
    pub w_v_frame: Tensor,
    pub lambda: f64,
}

/// Graph form of the two-branch attention. `frame` is `(F_emb, W_K_frame, W_V_frame)`.
///
/// With `lambda == 0` or no frame tokens the frame branch is not evaluated at
/// all, so the output is the text-only attention bit for bit.
pub fn attend(
    g: &Graph,
    q: Var,
    text: Var,
    w_k_text: Var,
    w_v_text: Var,
    frame: Option<(Var, Var, Var)>,
    lambda: f64,
) -> Var {
    let d = g.shape(q)[1];
    let inv = 1.0 / (d as f64).sqrt();
    let branch = |keys_src: Var, wk: Var, wv: Var| {
        let k = g.matmul(keys_src, wk);
        let v = g.matmul(keys_src, wv);
        let logits = g.matmul_nt(q, k);
        let scaled = g.scale(logits, inv);
        let attn = g.softmax_rows(scaled);
        g.matmul(attn, v)
    };
    let out = branch(text, w_k_text, w_v_text);
    match frame {
        Some((f_emb, wk, wv)) if lambda != 0.0 => {
            let fo = branch(f_emb, wk, wv);
            let fo = if lambda == 1.0 { fo } else { g.scale(fo, lambda) };
            g.add(out, fo)
        }
        _ => out,
    }
}

/// Evaluate the parallel cross-attention on plain tensors.
pub fn parallel_cross_attention(
    q: &Tensor,
    text: &TextEmbedding,
    frames: &FrameEmbeddingSeq,
    w: &CrossAttentionWeights,
) -> Result<Tensor> {
    ensure!(q.shape().len() == 2, "queries must be [N, d], got {:?}", q.shape());
    ensure!(w.lambda >= 0.0, "lambda must be non-negative, got {}", w.lambda);
    let d = q.shape()[1];
    let t = &text.embedding;
    let f = &frames.embeddings;
    ensure!(t.shape().len() == 2 && t.shape()[0] >= 1, "text branch needs at least one token");
    ensure!(f.shape().len() == 2 && f.shape()[0] >= 1, "frame branch needs at least one frame");
    for (name, wt, src) in [
        ("W_K_text", &w.w_k_text, t),
        ("W_V_text", &w.w_v_text, t),
        ("W_K_frame", &w.w_k_frame, f),
        ("W_V_frame", &w.w_v_frame, f),
    ] {
        ensure!(
            wt.shape() == [src.shape()[1], d],
            "{name} must be [{}, {d}], got {:?}",
            src.shape()[1],
            wt.shape()
        );
    }
    let g = Graph::new();
    let out = attend(
        &g,
        g.constant(q.clone()),
        g.constant(t.clone()),
        g.constant(w.w_k_text.clone()),
        g.constant(w.w_v_text.clone()),
        Some((g.constant(f.clone()), g.constant(w.w_k_frame.clone()), g.constant(w.w_v_frame.clone()))),
        w.lambda,
    );
    Ok(g.value(out).as_ref().clone())
}

/// Cross-attention layer inside the denoiser, operating on a `[C, H, W]`
/// feature map whose pixels act as queries.
#[derive(Clone, Debug)]
pub struct CrossAttentionLayer {
    pub prefix: String,
    pub channels: usize,
    pub d: usize,
    pub d_embed: usize,
}

impl CrossAttentionLayer {
    pub fn new(prefix: impl Into<String>, channels: usize, d: usize, d_embed: usize) -> Self {
        Self { prefix: prefix.into(), channels, d, d_embed }
    }

    pub fn name(&self, p: &str) -> String {
        format!("{}.{p}", self.prefix)
    }

    pub fn init_backbone(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        store.insert_randn(self.name("w_q"), &[self.channels, self.d], self.channels, rng)?;
        store.insert_randn(self.name("w_k_text"), &[self.d_embed, self.d], self.d_embed, rng)?;
        store.insert_randn(self.name("w_v_text"), &[self.d_embed, self.d], self.d_embed, rng)?;
        // Small output projection keeps the fresh layer close to identity.
        let mut w_o = Tensor::zeros(&[self.d, self.channels]);
        let normal = rand_distr::Normal::new(0.0, 0.1 / (self.d as f64).sqrt()).unwrap();
        for v in w_o.data_mut() {
            *v = rand_distr::Distribution::sample(&normal, rng);
        }
        store.insert(self.name("w_o"), w_o, true)
    }

    /// Frame-branch projections start as copies of the text projections.
    pub fn init_frame_branch(&self, store: &mut ParamStore) -> Result<()> {
        let k = store.tensor(&self.name("w_k_text")).clone();
        let v = store.tensor(&self.name("w_v_text")).clone();
        store.insert(self.name("w_k_frame"), k, true)?;
        store.insert(self.name("w_v_frame"), v, true)
    }

    pub fn has_frame_branch(&self, store: &ParamStore) -> bool {
        store.contains(&self.name("w_k_frame"))
    }

    /// `x + W_o · attend(x W_q, ...)`, reshaped back to `[C, H, W]`.
    pub fn forward(
        &self,
        g: &Graph,
        store: &ParamStore,
        x: Var,
        text: Var,
        frames: Option<Var>,
        lambda: f64,
    ) -> Var {
        let shape = g.shape(x);
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let flat = g.reshape(x, &[c, hw]);
        let tokens = g.transpose(flat);
        let q = g.matmul(tokens, g.param(store, &self.name("w_q")));
        let frame = frames.filter(|_| self.has_frame_branch(store)).map(|f| {
            (f, g.param(store, &self.name("w_k_frame")), g.param(store, &self.name("w_v_frame")))
        });
        let a = attend(
            g,
            q,
            text,
            g.param(store, &self.name("w_k_text")),
            g.param(store, &self.name("w_v_text")),
            frame,
            lambda,
        );
        let o = g.matmul(a, g.param(store, &self.name("w_o")));
        let back = g.transpose(o);
        let back = g.reshape(back, &shape);
        g.add(x, back)
    }
}
