use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::sigmoid;
use crate::error::{ensure, Error, Result};

/// Logistic map `p = sigmoid(a * s + b)` from cosine similarity to event
/// probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorCalibration {
    pub a: f64,
    pub b: f64,
}

impl DetectorCalibration {
    pub fn probability(&self, s: f64) -> f64 {
        sigmoid(self.a * s + self.b)
    }
}

const MAX_ITERS: usize = 500;
/// Keeps Newton's method finite on separable data.
const RIDGE: f64 = 1e-4;

/// Maximum-likelihood logistic fit by Newton's method.
pub fn fit_detector_calibration(sims: &[f64], active: &[bool]) -> Result<DetectorCalibration> {
    ensure!(sims.len() == active.len(), "{} similarities but {} labels", sims.len(), active.len());
    let pos = active.iter().filter(|&&y| y).count();
    if pos == 0 || pos == active.len() {
        return Err(Error::Contract("calibration needs both active and inactive frames".into()));
    }
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..MAX_ITERS {
        // gradient of the penalised negative log-likelihood and its Hessian
        let (mut ga, mut gb) = (RIDGE * a, 0.0);
        let (mut haa, mut hab, mut hbb) = (RIDGE, 0.0, 1e-12);
        for (&s, &y) in sims.iter().zip(active) {
            let p = sigmoid(a * s + b);
            let r = p - if y { 1.0 } else { 0.0 };
            ga += r * s;
            gb += r;
            let w = p * (1.0 - p);
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if det <= 0.0 || !det.is_finite() {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        a -= da;
        b -= db;
        if da.abs().max(db.abs()) < 1e-10 {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical("calibration diverged".into()));
    }
    if a <= 0.0 {
        return Err(Error::Numerical(format!("similarity does not rise with activity (slope {a:.4})")));
    }
    Ok(DetectorCalibration { a, b })
}

/// Area under the ROC curve via the Mann-Whitney statistic, ties counted half.
pub fn auc(scores: &[f64], active: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if active[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let np = active.iter().filter(|&&y| y).count() as f64;
    let nn = active.len() as f64 - np;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_sims_are_classified_perfectly() {
        let sims = [0.9, 0.9, 0.9, -0.9, -0.9];
        let act = [true, true, true, false, false];
        let cal = fit_detector_calibration(&sims, &act).unwrap();
        assert!(cal.a > 0.0);
        for (s, y) in sims.iter().zip(act) {
            assert_eq!(cal.probability(*s) >= 0.5, y);
        }
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        assert!(fit_detector_calibration(&[0.1, 0.2], &[true, true]).is_err());
        assert!(fit_detector_calibration(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn shuffled_labels_have_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let mut act: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let sims: Vec<f64> = act.iter().map(|&y| if y { 0.5 } else { -0.5 } + rng.random_range(-0.3..0.3)).collect();
        assert!((auc(&sims, &act) - 1.0).abs() < 1e-12);
        act.shuffle(&mut rng);
        assert!((auc(&sims, &act) - 0.5).abs() < 0.05);
    }

    #[test]
    fn auc_counts_ties_half() {
        assert!((auc(&[0.0, 0.0], &[true, false]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn recovers_a_known_logistic_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, b) = (4.0, -1.0);
        let sims: Vec<f64> = (0..20_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let act: Vec<bool> = sims.iter().map(|&s| rng.random::<f64>() < sigmoid(a * s + b)).collect();
        let cal = fit_detector_calibration(&sims, &act).unwrap();
        assert!((cal.a - a).abs() < 0.3 && (cal.b - b).abs() < 0.15, "{cal:?}");
    }
}
