//! Evaluation: Fréchet distance, mean KL, CLIP-score analog, onset F1 and
//! spectral centroid, plus the audio tagger that feeds the first two.

mod report;
mod scores;
mod stats;
mod tagger;

pub use report::{higher_is_better, MetricRow, MetricsReport};
pub use scores::{
    activity_from_spectrogram, clip_score, frame_energy, onset_f1, onsets, smooth, spectral_centroid, unimodal_peak,
};
pub use stats::{
    embedding_stats, frechet_distance, kl_divergence, mean_kl, ClassPosterior, EmbeddingStats, COV_SHRINKAGE, KL_FLOOR,
};
pub use tagger::{AudioTagger, TaggerTrainConfig, TAGGER_EMBEDDER, TAGGER_PREFIX};
