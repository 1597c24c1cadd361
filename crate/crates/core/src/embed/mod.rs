//! Contrastive label/frame/audio embedder and the similarity calibration
//! that drives the time detector.

mod calibration;
mod contrastive;
mod encoder;
mod train;

pub use calibration::{auc, fit_detector_calibration, DetectorCalibration};
pub use contrastive::{info_nce_loss, info_nce_with_negatives};
pub use encoder::{cosine, EmbedderDims, JointEmbedder, EMBEDDER_PREFIX};
pub use train::{calibrate, frame_similarities, train_embedder, EmbedderTrainConfig};
