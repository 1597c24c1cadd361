use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};
use crate::error::{ensure, Error, Result};

pub const TAGGER_PREFIX: &str = "tagger";
/// Name recorded in reports for embeddings taken from the tagger.
pub const TAGGER_EMBEDDER: &str = "tagger-penultimate";

fn name(p: &str) -> String {
    format!("{TAGGER_PREFIX}.{p}")
}

/// Small conv classifier over spectrograms; its penultimate layer doubles
/// as the embedding for Fréchet distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioTagger {
    pub n_classes: usize,
    pub channels: [usize; 2],
    pub embed_dim: usize,
    pub pool: [usize; 2],
}

impl Default for AudioTagger {
    fn default() -> Self {
        Self { n_classes: 8, channels: [8, 16], embed_dim: 32, pool: [2, 4] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TaggerTrainConfig {
    fn default() -> Self {
        Self { epochs: 8, batch_size: 16, lr: 3e-3 }
    }
}

impl AudioTagger {
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let [c1, c2] = self.channels;
        store.insert_randn(name("conv1.w"), &[c1, 1, 3, 3], 9, rng)?;
        store.insert_zeros(name("conv1.b"), &[c1])?;
        store.insert_randn(name("conv2.w"), &[c2, c1, 3, 3], 9 * c1, rng)?;
        store.insert_zeros(name("conv2.b"), &[c2])?;
        store.insert_randn(name("embed.w"), &[c2, self.embed_dim], c2, rng)?;
        store.insert_zeros(name("embed.b"), &[self.embed_dim])?;
        store.insert_randn(name("head.w"), &[self.embed_dim, self.n_classes], self.embed_dim, rng)?;
        store.insert_zeros(name("head.b"), &[self.n_classes])
    }

    pub fn is_present(store: &ParamStore) -> bool {
        store.contains(&name("head.w"))
    }

    /// `(embedding [1, e], logits [1, n_classes])`
    pub fn forward(&self, g: &Graph, store: &ParamStore, spec: Var) -> (Var, Var) {
        let p = |s: &str| g.param(store, &name(s));
        let x = g.avg_pool2d(spec, self.pool[0], self.pool[1]);
        let x = g.silu(g.conv2d(x, p("conv1.w"), Some(p("conv1.b")), 1, 1));
        let x = g.silu(g.conv2d(x, p("conv2.w"), Some(p("conv2.b")), 2, 1));
        let sh = g.shape(x);
        let pooled = g.reshape(g.mean_last(g.reshape(x, &[sh[0], sh[1] * sh[2]])), &[1, sh[0]]);
        let emb = g.silu(g.add_row_bias(g.matmul(pooled, p("embed.w")), p("embed.b")));
        let logits = g.add_row_bias(g.matmul(emb, p("head.w")), p("head.b"));
        (emb, logits)
    }

    fn check(&self, store: &ParamStore) -> Result<()> {
        if Self::is_present(store) {
            Ok(())
        } else {
            Err(Error::MissingPrerequisite { stage: "evaluate (tagger)".into() })
        }
    }

    pub fn posterior(&self, store: &ParamStore, spec: &Tensor) -> Result<Vec<f64>> {
        self.check(store)?;
        let g = Graph::new();
        let (_, logits) = self.forward(&g, store, g.constant(spec.clone()));
        Ok(g.value(g.softmax_rows(logits)).data().to_vec())
    }

    pub fn embedding(&self, store: &ParamStore, spec: &Tensor) -> Result<Vec<f64>> {
        self.check(store)?;
        let g = Graph::new();
        let (emb, _) = self.forward(&g, store, g.constant(spec.clone()));
        Ok(g.value(emb).data().to_vec())
    }

    /// Cross-entropy training; returns per-epoch mean loss.
    pub fn train(
        &self,
        store: &mut ParamStore,
        data: &[(&Tensor, usize)],
        cfg: &TaggerTrainConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        ensure!(!data.is_empty(), "tagger needs training clips");
        ensure!(data.iter().all(|(_, l)| *l < self.n_classes), "tagger label out of range");
        if !Self::is_present(store) {
            self.init(store, rng)?;
        }
        let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..Default::default() });
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
                for &i in batch {
                    let (spec, label) = data[i];
                    let g = Graph::new();
                    let (_, logits) = self.forward(&g, store, g.constant(spec.clone()));
                    let loss = g.scale(g.sum(g.pick_rows(g.log_softmax_rows(logits), &[label])), -1.0);
                    total += g.value(loss).item();
                    for (n, gr) in g.backward(loss)?.param_grads() {
                        let scaled = gr.map(|v| v / batch.len() as f64);
                        match acc.get_mut(&n) {
                            Some(a) => a.data_mut().iter_mut().zip(scaled.data()).for_each(|(x, y)| *x += y),
                            None => {
                                acc.insert(n, scaled);
                            }
                        }
                    }
                }
                adam.step(store, &acc)?;
            }
            curve.push(total / data.len() as f64);
        }
        Ok(curve)
    }
}
