//! DDPM noise schedule, forward noising, the noise-prediction objective,
//! ancestral sampling and staged training.

mod objective;
mod sampler;
mod schedule;
mod stages;

pub use objective::{diffusion_loss, draw_noise, example_loss, DiffusionSample, NoisePredictor};
pub use sampler::{ddpm_sample, ddpm_sample_clipped};
pub use schedule::{q_sample, NoiseSchedule};
pub use stages::{prepare_stage, train_stage, write_loss_csv, EpochLoss, StageConfig, StageId, TrainingExample};
