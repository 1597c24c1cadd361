use rand::Rng;

use super::{FrameEmbeddingSeq, FrameFeatureSeq};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{ensure, Result};

/// Two-layer perceptron applied to each frame: `linear -> GELU -> linear`,
/// with an optional identity skip when input and output widths agree.
#[derive(Clone, Debug)]
pub struct FrameProjector {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub skip: bool,
}

impl FrameProjector {
    pub fn new(prefix: impl Into<String>, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self { prefix: prefix.into(), in_dim, hidden, out_dim, skip: false }
    }

    fn name(&self, p: &str) -> String {
        format!("{}.{p}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        store.insert_randn(self.name("w1"), &[self.in_dim, self.hidden], self.in_dim, rng)?;
        store.insert_zeros(self.name("b1"), &[self.hidden])?;
        store.insert_randn(self.name("w2"), &[self.hidden, self.out_dim], self.hidden, rng)?;
        store.insert_zeros(self.name("b2"), &[self.out_dim])
    }

    /// Identity weights for square projectors.
    pub fn init_identity(&self, store: &mut ParamStore) -> Result<()> {
        ensure!(
            self.in_dim == self.hidden && self.hidden == self.out_dim,
            "identity init needs a square projector"
        );
        let eye = Tensor::from_fn(&[self.in_dim, self.in_dim], |i| {
            if i / self.in_dim == i % self.in_dim { 1.0 } else { 0.0 }
        });
        store.insert(self.name("w1"), eye.clone(), true)?;
        store.insert_zeros(self.name("b1"), &[self.hidden])?;
        store.insert(self.name("w2"), eye, true)?;
        store.insert_zeros(self.name("b2"), &[self.out_dim])
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, x: Var) -> Var {
        let h = g.matmul(x, g.param(store, &self.name("w1")));
        let h = g.add_row_bias(h, g.param(store, &self.name("b1")));
        let h = g.gelu(h);
        let y = g.matmul(h, g.param(store, &self.name("w2")));
        let y = g.add_row_bias(y, g.param(store, &self.name("b2")));
        if self.skip && self.in_dim == self.out_dim {
            g.add(y, x)
        } else {
            y
        }
    }
}

pub fn project_frames(frames: &FrameFeatureSeq, proj: &FrameProjector, store: &ParamStore) -> Result<FrameEmbeddingSeq> {
    let d_v = frames.features.shape()[1];
    ensure!(d_v == proj.in_dim, "frame feature width {d_v} does not match projector input {}", proj.in_dim);
    let g = Graph::new();
    let y = proj.forward(&g, store, g.constant(frames.features.clone()));
    Ok(FrameEmbeddingSeq { embeddings: g.value(y).as_ref().clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, kernels::gelu};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_projector_maps_zero_to_zero() {
        let p = FrameProjector::new("fp", 4, 4, 4);
        let mut s = ParamStore::new();
        p.init_identity(&mut s).unwrap();
        let frames = FrameFeatureSeq::new(Tensor::zeros(&[3, 4]), 8.0).unwrap();
        let out = project_frames(&frames, &p, &s).unwrap();
        assert!(out.embeddings.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FrameProjector::new("fp", 16, 32, 32);
        let mut s = ParamStore::new();
        p.init(&mut s, &mut rng).unwrap();
        let frames = FrameFeatureSeq::new(Tensor::full(&[1, 16], 0.3), 8.0).unwrap();
        assert_eq!(project_frames(&frames, &p, &s).unwrap().embeddings.shape(), &[1, 32]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let p = FrameProjector::new("fp", 4, 4, 4);
        let mut s = ParamStore::new();
        p.init_identity(&mut s).unwrap();
        let frames = FrameFeatureSeq::new(Tensor::zeros(&[2, 5]), 8.0).unwrap();
        assert!(project_frames(&frames, &p, &s).is_err());
    }

    #[test]
    fn matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FrameProjector::new("fp", 8, 6, 5);
        let mut s = ParamStore::new();
        p.init(&mut s, &mut rng).unwrap();
        for name in ["fp.b1", "fp.b2"] {
            for v in s.get_mut(name).unwrap().tensor.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let x = Tensor::from_fn(&[4, 8], |_| rng.random_range(-1.0..1.0));
        let out = project_frames(&FrameFeatureSeq::new(x.clone(), 8.0).unwrap(), &p, &s).unwrap();
        let (w1, b1, w2, b2) = (s.tensor("fp.w1"), s.tensor("fp.b1"), s.tensor("fp.w2"), s.tensor("fp.b2"));
        for i in 0..4 {
            let h: Vec<f64> = (0..6)
                .map(|j| gelu(b1.data()[j] + (0..8).map(|k| x.data()[i * 8 + k] * w1.data()[k * 6 + j]).sum::<f64>()))
                .collect();
            for j in 0..5 {
                let y = b2.data()[j] + (0..6).map(|k| h[k] * w2.data()[k * 5 + j]).sum::<f64>();
                assert!((y - out.embeddings.data()[i * 5 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = FrameProjector::new("fp", 4, 8, 4);
        let mut s = ParamStore::new();
        p.init(&mut s, &mut rng).unwrap();
        let x = Tensor::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0));
        let r = grad_check(
            |g, s| {
                let y = p.forward(g, s, g.constant(x.clone()));
                let sq = g.square(y);
                g.sum(sq)
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
