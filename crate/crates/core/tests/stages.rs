use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smoothfoley::autodiff::{ParamStore, Tensor};
use smoothfoley::diffusion::{prepare_stage, train_stage, NoiseSchedule, StageConfig, StageId, TrainingExample};
use smoothfoley::nn::{Denoiser, ModelDims, TemporalAdapter};
use smoothfoley::temporal::mask_to_condition;
use smoothfoley::Error;

fn small() -> Denoiser {
    let dims = ModelDims {
        base_channels: 2,
        embed_dim: 8,
        attn_dim: 8,
        time_dim: 8,
        projector_hidden: 8,
        freq_bins: 8,
        time_bins: 16,
        ..Default::default()
    };
    Denoiser::new(dims, 1.0, true)
}

fn examples(d: &Denoiser, rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainingExample> {
    let (f, s, tf) = (d.unet.dims.freq_bins, d.unet.dims.time_bins, 8);
    (0..n)
        .map(|i| {
            let mask: Vec<u8> = (0..tf).map(|j| (2..6).contains(&j) as u8).collect();
            TrainingExample {
                z0: Tensor::from_fn(&[1, f, s], |_| rng.random_range(-1.0..1.0)),
                label: i % d.unet.dims.n_classes,
                frames: Tensor::from_fn(&[tf, d.unet.dims.feat_dim], |_| rng.random_range(-1.0..1.0)),
                gt_cond: mask_to_condition(&mask, f, s).plane,
            }
        })
        .collect()
}

fn one_step() -> StageConfig {
    StageConfig { epochs: 1, batch_size: 1, lr: 1e-3, max_clips: 1 }
}

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(20, 1e-3, 0.2).unwrap()
}

#[test]
fn one_temporal_step_wakes_the_zero_fusions_and_nothing_else_moves() {
    let d = small();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ex = examples(&d, &mut rng, 2);
    let mut store = ParamStore::new();
    train_stage(StageId::Backbone, &d, &mut store, &ex, &one_step(), &sched(), &mut rng).unwrap();
    train_stage(StageId::FrameAdapter, &d, &mut store, &ex, &one_step(), &sched(), &mut rng).unwrap();
    let before = store.snapshot();
    train_stage(StageId::TemporalAdapter, &d, &mut store, &ex, &one_step(), &sched(), &mut rng).unwrap();

    let fusions = TemporalAdapter::new(d.unet.clone()).fusion_shapes();
    let nonzero = fusions.iter().filter(|(n, _)| store.tensor(n).max_abs() > 0.0).count();
    assert!(nonzero >= 1, "every fusion layer is still zero");
    for name in store.changed_since(&before) {
        assert!(name.starts_with("temporal."), "{name} moved during the temporal stage");
    }
    for name in before.keys() {
        assert!(!name.starts_with("temporal."), "{name} existed before the temporal stage");
    }
}

#[test]
fn stages_demand_their_prerequisites() {
    let d = small();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let err = prepare_stage(StageId::FrameAdapter, &d, &mut store, &mut rng).unwrap_err();
    assert!(matches!(err, Error::MissingPrerequisite { ref stage } if stage == "train-backbone"), "{err}");
    prepare_stage(StageId::Backbone, &d, &mut store, &mut rng).unwrap();
    let err = prepare_stage(StageId::TemporalAdapter, &d, &mut store, &mut rng).unwrap_err();
    assert!(matches!(err, Error::MissingPrerequisite { ref stage } if stage == "train-frame-adapter"), "{err}");
}

#[test]
fn stage_trainable_sets_are_disjoint() {
    let d = small();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    for s in [StageId::Backbone, StageId::FrameAdapter, StageId::TemporalAdapter] {
        prepare_stage(s, &d, &mut store, &mut rng).unwrap();
    }
    for name in store.names() {
        let owners = [StageId::Backbone, StageId::FrameAdapter, StageId::TemporalAdapter]
            .iter()
            .filter(|s| s.is_trainable(name))
            .count();
        assert_eq!(owners, 1, "{name}");
    }
}

#[test]
fn backbone_loss_goes_down_on_a_fixed_set() {
    let d = small();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ex = examples(&d, &mut rng, 8);
    let mut store = ParamStore::new();
    let cfg = StageConfig { epochs: 15, batch_size: 2, lr: 3e-3, max_clips: 0 };
    let curve = train_stage(StageId::Backbone, &d, &mut store, &ex, &cfg, &sched(), &mut rng).unwrap();
    let first: f64 = curve[..5].iter().map(|e| e.mean_loss).sum();
    let last: f64 = curve[10..].iter().map(|e| e.mean_loss).sum();
    assert!(last < first, "{curve:?}");
}
