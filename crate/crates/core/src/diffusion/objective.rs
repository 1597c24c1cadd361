use rand::Rng;
use rand_distr::StandardNormal;

use super::{q_sample, NoiseSchedule};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::nn::{Conditioning, Denoiser};

/// Anything that predicts the noise in `z_t`.
pub trait NoisePredictor {
    fn predict_noise(&self, g: &Graph, store: &ParamStore, z_t: Var, t: usize, cond: &Conditioning) -> Var;
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, g: &Graph, store: &ParamStore, z_t: Var, t: usize, cond: &Conditioning) -> Var {
        self.predict(g, store, z_t, t, cond)
    }
}

/// One clean latent with its conditioning.
#[derive(Clone, Copy, Debug)]
pub struct DiffusionSample<'a> {
    pub z0: &'a Tensor,
    pub cond: Conditioning<'a>,
}

/// Draw `(t, eps)` for one example; `t` is uniform on `[1, T]`.
pub fn draw_noise(shape: &[usize], sched: &NoiseSchedule, rng: &mut impl Rng) -> (usize, Tensor) {
    let t = rng.random_range(1..=sched.steps());
    let eps = Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
    (t, eps)
}

/// `‖eps − ε_θ(z_t, t, ·)‖²` for one example with a fixed draw.
pub fn example_loss(
    g: &Graph,
    model: &impl NoisePredictor,
    store: &ParamStore,
    sample: &DiffusionSample,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Var {
    let z_t = q_sample(sample.z0, t, eps, sched).expect("draws are in range");
    let pred = model.predict_noise(g, store, g.constant(z_t), t, &sample.cond);
    let diff = g.sub(g.constant(eps.clone()), pred);
    let sq = g.square(diff);
    g.sum(sq)
}

/// Batch diffusion objective: mean over examples of the squared L2 error of
/// the noise prediction, with fresh `(t, eps)` per example.
pub fn diffusion_loss(
    g: &Graph,
    model: &impl NoisePredictor,
    store: &ParamStore,
    batch: &[DiffusionSample],
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Var {
    assert!(!batch.is_empty(), "diffusion_loss on an empty batch");
    let mut total: Option<Var> = None;
    for s in batch {
        let (t, eps) = draw_noise(s.z0.shape(), sched, rng);
        let l = example_loss(g, model, store, s, t, &eps, sched);
        total = Some(match total {
            Some(acc) => g.add(acc, l),
            None => l,
        });
    }
    g.scale(total.unwrap(), 1.0 / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Recovers the exact noise from `z_t` given the clean latent.
    struct Oracle<'a> {
        z0: &'a Tensor,
        sched: &'a NoiseSchedule,
    }

    impl NoisePredictor for Oracle<'_> {
        fn predict_noise(&self, g: &Graph, _: &ParamStore, z_t: Var, t: usize, _: &Conditioning) -> Var {
            let ab = self.sched.alpha_bar(t);
            let zt = g.value(z_t);
            let eps = zt
                .data()
                .iter()
                .zip(self.z0.data())
                .map(|(z, x)| (z - ab.sqrt() * x) / (1.0 - ab).sqrt())
                .collect();
            g.constant(Tensor::new(zt.shape(), eps))
        }
    }

    struct Zero;

    impl NoisePredictor for Zero {
        fn predict_noise(&self, g: &Graph, _: &ParamStore, z_t: Var, _: usize, _: &Conditioning) -> Var {
            g.constant(Tensor::zeros(&g.shape(z_t)))
        }
    }

    #[test]
    fn perfect_denoiser_has_zero_loss() {
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let z0 = Tensor::from_fn(&[1, 4, 8], |i| (i as f64).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Graph::new();
        let batch = [DiffusionSample { z0: &z0, cond: Conditioning::text_only(0) }; 3];
        let l = diffusion_loss(&g, &Oracle { z0: &z0, sched: &sched }, &ParamStore::new(), &batch, &sched, &mut rng);
        assert!(g.value(l).item() < 1e-18);
    }

    #[test]
    fn zero_predictor_loss_is_latent_size() {
        let sched = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        let z0 = Tensor::zeros(&[1, 32, 128]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Graph::new();
        let batch: Vec<_> = (0..1000).map(|_| DiffusionSample { z0: &z0, cond: Conditioning::text_only(0) }).collect();
        let l = g.value(diffusion_loss(&g, &Zero, &ParamStore::new(), &batch, &sched, &mut rng)).item();
        assert!((l / 4096.0 - 1.0).abs() < 0.05, "{l}");
        assert!(l >= 0.0);
    }
}
