use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const COV_SHRINKAGE: f64 = 1e-6;
pub const KL_FLOOR: f64 = 1e-8;

/// Gaussian fit of an embedding set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub mean: Vec<f64>,
    /// Row-major `[d, d]`.
    pub covariance: Vec<f64>,
    pub count: usize,
}

impl EmbeddingStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.covariance)
    }
}

/// Sample mean and `(n-1)`-denominator covariance plus `1e-6 * I`.
pub fn embedding_stats(embeddings: &[Vec<f64>]) -> Result<EmbeddingStats> {
    ensure!(embeddings.len() >= 2, "need at least two embeddings, got {}", embeddings.len());
    let d = embeddings[0].len();
    ensure!(d > 0 && embeddings.iter().all(|e| e.len() == d), "embeddings must share one positive width");
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0; d];
    for e in embeddings {
        mean.iter_mut().zip(e).for_each(|(m, x)| *m += x / n);
    }
    let mut cov = vec![0.0; d * d];
    for e in embeddings {
        for i in 0..d {
            let di = e[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += di * (e[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    for i in 0..d {
        cov[i * d + i] += COV_SHRINKAGE;
    }
    Ok(EmbeddingStats { mean, covariance: cov, count: embeddings.len() })
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, with the trace
/// of the product root taken through the symmetric form
/// `(S_a^{1/2} S_b S_a^{1/2})^{1/2}`.
pub fn frechet_distance(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
    ensure!(a.dim() == b.dim(), "dimension mismatch: {} vs {}", a.dim(), b.dim());
    let mu = DVector::from_column_slice(&a.mean) - DVector::from_column_slice(&b.mean);
    let (sa, sb) = (a.cov_matrix(), b.cov_matrix());
    let ra = sqrt_psd(&sa);
    let cross = sqrt_psd(&(&ra * &sb * &ra)).trace();
    let d = mu.norm_squared() + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Class probabilities for one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    pub clip_id: String,
    pub probabilities: Vec<f64>,
}

fn floored(p: &[f64]) -> Vec<f64> {
    let q: Vec<f64> = p.iter().map(|&x| x.max(KL_FLOOR)).collect();
    let s: f64 = q.iter().sum();
    q.into_iter().map(|x| x / s).collect()
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let (p, q) = (floored(p), floored(q));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

/// Mean over clips of `KL(gt || gen)`, pairing by clip id.
pub fn mean_kl(gt: &[ClassPosterior], gen: &[ClassPosterior]) -> Result<f64> {
    ensure!(!gt.is_empty(), "no posteriors to compare");
    let by_id: BTreeMap<&str, &ClassPosterior> = gen.iter().map(|p| (p.clip_id.as_str(), p)).collect();
    if let Some(extra) = gen.iter().find(|g| !gt.iter().any(|p| p.clip_id == g.clip_id)) {
        return Err(Error::UnknownClip(extra.clip_id.clone()));
    }
    let mut total = 0.0;
    for p in gt {
        let q = by_id.get(p.clip_id.as_str()).ok_or_else(|| Error::UnknownClip(p.clip_id.clone()))?;
        ensure!(p.probabilities.len() == q.probabilities.len(), "class count mismatch for `{}`", p.clip_id);
        total += kl_divergence(&p.probabilities, &q.probabilities);
    }
    Ok(total / gt.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_stats() {
        let s = embedding_stats(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(s.mean, vec![1.0, 0.0]);
        let expect = [2.0 + COV_SHRINKAGE, 0.0, 0.0, COV_SHRINKAGE];
        for (a, b) in s.covariance.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = EmbeddingStats { mean: vec![0.0], covariance: vec![1.0], count: 10 };
        let b = EmbeddingStats { mean: vec![3.0], covariance: vec![1.0], count: 10 };
        assert!((frechet_distance(&a, &b).unwrap() - 9.0).abs() < 1e-8);
    }

    #[test]
    fn kl_example() {
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&[0.5, 0.5], &[0.25, 0.75]) - expect).abs() < 1e-7);
    }

    #[test]
    fn unpaired_clip_is_named() {
        let p = |id: &str| ClassPosterior { clip_id: id.into(), probabilities: vec![0.5, 0.5] };
        let err = mean_kl(&[p("a"), p("b")], &[p("a")]).unwrap_err();
        assert!(matches!(err, Error::UnknownClip(ref id) if id == "b"));
    }
}
