use crate::autodiff::Tensor;
use crate::embed::cosine;
use crate::error::{ensure, Result};

/// `100 * mean((cos(video, audio) + 1) / 2)` over `(video, audio)` pairs.
pub fn clip_score(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    ensure!(!pairs.is_empty(), "clip score needs at least one pair");
    let total: f64 = pairs.iter().map(|(v, a)| (cosine(v, a) + 1.0) / 2.0).sum();
    Ok(100.0 * total / pairs.len() as f64)
}

/// Frames where the mask switches on; an active first frame counts.
pub fn onsets(mask: &[u8]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i] == 1 && (i == 0 || mask[i - 1] == 0)).collect()
}

/// F1 of greedy left-to-right onset matching within `tolerance` frames.
/// Two masks without onsets score 1.
pub fn onset_f1(gt: &[u8], pred: &[u8], tolerance: usize) -> f64 {
    assert_eq!(gt.len(), pred.len(), "onset masks must have equal length");
    let (g, p) = (onsets(gt), onsets(pred));
    if g.is_empty() && p.is_empty() {
        return 1.0;
    }
    let mut used = vec![false; g.len()];
    let mut hits = 0usize;
    for &o in &p {
        if let Some(k) = (0..g.len()).find(|&k| !used[k] && g[k].abs_diff(o) <= tolerance) {
            used[k] = true;
            hits += 1;
        }
    }
    if hits == 0 {
        return 0.0;
    }
    let precision = hits as f64 / p.len() as f64;
    let recall = hits as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Magnitude-weighted mean frequency bin per time column; `None` where the
/// column is silent.
pub fn spectral_centroid(spec: &Tensor) -> Vec<Option<f64>> {
    let (f, s) = (spec.shape()[spec.shape().len() - 2], spec.shape()[spec.shape().len() - 1]);
    (0..s)
        .map(|t| {
            let (mut num, mut den) = (0.0, 0.0);
            for fi in 0..f {
                let m = spec.data()[fi * s + t].max(0.0);
                num += fi as f64 * m;
                den += m;
            }
            (den >= 1e-9).then(|| num / den)
        })
        .collect()
}

/// Centred moving average with half-width `radius`, shrinking at the edges.
pub fn smooth(xs: &[f64], radius: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Peak index of `xs` if it rises to a single maximum and then falls;
/// `None` for any other shape.
pub fn unimodal_peak(xs: &[f64]) -> Option<usize> {
    let peak = xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?.0;
    let rising = xs[..=peak].windows(2).all(|w| w[1] >= w[0]);
    let falling = xs[peak..].windows(2).all(|w| w[1] <= w[0]);
    (rising && falling).then_some(peak)
}

/// Per-frame mean column energy of a `[1, F, S]` spectrogram thresholded
/// into an activity mask at video-frame rate.
pub fn activity_from_spectrogram(spec: &Tensor, frames: usize, threshold: f64) -> Vec<u8> {
    frame_energy(spec, frames).into_iter().map(|e| (e >= threshold) as u8).collect()
}

pub fn frame_energy(spec: &Tensor, frames: usize) -> Vec<f64> {
    let (f, s) = (spec.shape()[1], spec.shape()[2]);
    let r = s / frames;
    (0..frames)
        .map(|i| {
            let mut e = 0.0;
            for fi in 0..f {
                e += spec.data()[fi * s + i * r..fi * s + (i + 1) * r].iter().sum::<f64>();
            }
            e / r as f64
        })
        .collect()
}
