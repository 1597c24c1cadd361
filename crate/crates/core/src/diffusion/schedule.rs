use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{ensure, Result};

/// Linear-β DDPM schedule. Steps are 1-based: `beta(1) .. beta(T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        ensure!(steps >= 2, "schedule needs at least 2 steps, got {steps}");
        ensure!(
            0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        );
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Variance of `q(z_{t-1} | z_t, z_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t <= 1 {
            return 0.0;
        }
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        ensure!((1..=self.steps()).contains(&t), "timestep {t} outside [1, {}]", self.steps());
        Ok(())
    }
}

/// Closed-form forward noising `sqrt(ᾱ_t)·z0 + sqrt(1-ᾱ_t)·eps`.
pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    ensure!(z0.shape() == eps.shape(), "noise shape {:?} does not match latent {:?}", eps.shape(), z0.shape());
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Ok(Tensor::new(z0.shape(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_step_products() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn first_alpha_bar_is_one_minus_first_beta() {
        let s = NoiseSchedule::linear(50, 3e-4, 0.05).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - s.beta(1));
    }

    #[test]
    fn reference_schedule_matches_cumulative_product() {
        let s = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        // Independent route: product in log space.
        let log: f64 = (0..200).map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 199.0)).ln()).sum();
        assert!((s.alpha_bar(200) - log.exp()).abs() < 1e-12);
        let bars = s.alpha_bars();
        assert!(bars.windows(2).all(|w| w[1] < w[0]));
        assert!(bars[199] < bars[0] && bars[0] < 1.0);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn q_sample_limits() {
        let s = NoiseSchedule::linear(10, 1e-12, 1e-12).unwrap();
        let z0 = Tensor::new(&[3], vec![1.0, -2.0, 0.5]);
        let zt = q_sample(&z0, 1, &Tensor::zeros(&[3]), &s).unwrap();
        for (a, b) in zt.data().iter().zip(z0.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let eps = Tensor::new(&[3], vec![0.3, 0.1, -1.0]);
        let zt = q_sample(&Tensor::zeros(&[3]), 7, &eps, &s).unwrap();
        let k = (1.0 - s.alpha_bar(7)).sqrt();
        for (a, e) in zt.data().iter().zip(eps.data()) {
            assert!((a - k * e).abs() < 1e-15);
        }
        assert!(q_sample(&z0, 0, &Tensor::zeros(&[3]), &s).is_err());
        assert!(q_sample(&z0, 11, &Tensor::zeros(&[3]), &s).is_err());
    }

    #[test]
    fn q_sample_variance_matches_monte_carlo() {
        let s = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 60;
        let n = 10_000;
        let var_z0 = 4.0;
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let zt = q_sample(&Tensor::scalar(2.0 * x), t, &Tensor::scalar(e), &s).unwrap();
            vals.push(zt.item());
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = s.alpha_bar(t) * var_z0 + 1.0 - s.alpha_bar(t);
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn stepwise_noising_matches_closed_form_in_distribution() {
        let s = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (t, n, z0) = (40, 10_000, 1.5);
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let mut z = z0;
            for step in 1..=t {
                let e: f64 = StandardNormal.sample(&mut rng);
                z = s.alpha(step).sqrt() * z + s.beta(step).sqrt() * e;
            }
            vals.push(z);
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (m_ref, v_ref) = (s.alpha_bar(t).sqrt() * z0, 1.0 - s.alpha_bar(t));
        assert!((mean / m_ref - 1.0).abs() < 0.05);
        assert!((var / v_ref - 1.0).abs() < 0.05);
    }
}
