use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{NoisePredictor, NoiseSchedule};
use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::nn::Conditioning;

/// Ancestral DDPM sampling from `z_T ~ N(0, I)` down to `z_0`.
pub fn ddpm_sample(
    model: &impl NoisePredictor,
    store: &ParamStore,
    cond: &Conditioning,
    shape: &[usize],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Tensor> {
    ddpm_sample_clipped(model, store, cond, shape, sched, seed, None)
}

/// As [`ddpm_sample`], but each step clamps the implied `ẑ_0` to `x0_range`
/// and takes the posterior mean from it. `None` is the plain ε-form update.
pub fn ddpm_sample_clipped(
    model: &impl NoisePredictor,
    store: &ParamStore,
    cond: &Conditioning,
    shape: &[usize],
    sched: &NoiseSchedule,
    seed: u64,
    x0_range: Option<(f64, f64)>,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng));
    for t in (1..=sched.steps()).rev() {
        let g = Graph::lenient();
        let eps = model.predict_noise(&g, store, g.constant(z.clone()), t, cond);
        let eps = g.value(eps);
        let (a, ab, b) = (sched.alpha(t), sched.alpha_bar(t), sched.beta(t));
        let coef = b / (1.0 - ab).sqrt();
        let sigma = sched.posterior_variance(t).sqrt();
        let ab_prev = if t > 1 { sched.alpha_bar(t - 1) } else { 1.0 };
        let (c0, ct) = (ab_prev.sqrt() * b / (1.0 - ab), a.sqrt() * (1.0 - ab_prev) / (1.0 - ab));
        for (zi, ei) in z.data_mut().iter_mut().zip(eps.data()) {
            let mean = match x0_range {
                None => (*zi - coef * ei) / a.sqrt(),
                Some((lo, hi)) => {
                    let x0 = ((*zi - (1.0 - ab).sqrt() * ei) / ab.sqrt()).clamp(lo, hi);
                    c0 * x0 + ct * *zi
                }
            };
            *zi = if t > 1 {
                let n: f64 = StandardNormal.sample(&mut rng);
                mean + sigma * n
            } else {
                mean
            };
        }
        if !z.is_finite() {
            return Err(Error::Numerical(format!("non-finite latent at sampling step {t}")));
        }
    }
    Ok(z)
}
