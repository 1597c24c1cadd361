//! Acceptance suite: one pass/fail line per criterion, exit status 1 if any
//! fails. The pipeline criteria share one seeded run of the acceptance
//! profile under a temporary directory.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smoothfoley::autodiff::{grad_check, load_checkpoint, Graph, ParamStore, Tensor};
use smoothfoley::corpus::{FilterReason, Scenario, Split};
use smoothfoley::diffusion::{
    ddpm_sample_clipped, example_loss, prepare_stage, train_stage, DiffusionSample, NoiseSchedule, StageConfig, StageId,
    TrainingExample,
};
use smoothfoley::embed::{info_nce_loss, info_nce_with_negatives};
use smoothfoley::harness::{ExperimentConfig, Pipeline, TemporalSource, Toggle};
use smoothfoley::metrics::{
    clip_score, frechet_distance, mean_kl, onset_f1, smooth, spectral_centroid, unimodal_peak, ClassPosterior,
    EmbeddingStats,
};
use smoothfoley::nn::{attend, Conditioning, CrossAttentionLayer, Denoiser, FrameProjector, ModelDims, TemporalAdapter};
use smoothfoley::temporal::mask_to_condition;

const PROFILE: &str = include_str!("../../../configs/acceptance.toml");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn tiny_dims() -> ModelDims {
    ModelDims {
        n_classes: 3,
        feat_dim: 4,
        embed_dim: 4,
        attn_dim: 4,
        base_channels: 2,
        time_dim: 4,
        projector_hidden: 4,
        freq_bins: 4,
        time_bins: 8,
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let proj = FrameProjector::new("fp", 4, 8, 4);
    let mut s = ParamStore::new();
    proj.init(&mut s, &mut rng).unwrap();
    let x = rand_tensor(&[3, 4], &mut rng);
    let r = grad_check(
        |g, s| {
            let y = proj.forward(g, s, g.constant(x.clone()));
            g.sum(g.square(y))
        },
        &s,
        1e-5,
    )
    .unwrap();
    worst.push(("projector", r.max_rel_error));

    let layer = CrossAttentionLayer::new("xa", 4, 4, 4);
    let mut s = ParamStore::new();
    layer.init_backbone(&mut s, &mut rng).unwrap();
    layer.init_frame_branch(&mut s).unwrap();
    for name in ["xa.w_k_frame", "xa.w_v_frame"] {
        s.get_mut(name).unwrap().tensor = rand_tensor(&[4, 4], &mut rng);
    }
    let (x, t, f) = (rand_tensor(&[4, 2, 4], &mut rng), rand_tensor(&[2, 4], &mut rng), rand_tensor(&[4, 4], &mut rng));
    let r = grad_check(
        |g, s| {
            let y = layer.forward(g, s, g.constant(x.clone()), g.constant(t.clone()), Some(g.constant(f.clone())), 0.6);
            g.ln(g.sum(g.square(y)))
        },
        &s,
        1e-5,
    )
    .unwrap();
    worst.push(("parallel cross-attention", r.max_rel_error));

    let mut s = ParamStore::new();
    for name in ["a", "p", "n"] {
        s.insert(name, rand_tensor(&[4, 8], &mut rng), true).unwrap();
    }
    let r = grad_check(|g, s| info_nce_loss(g, g.param(s, "a"), g.param(s, "p"), 0.2).unwrap(), &s, 1e-5).unwrap();
    worst.push(("InfoNCE", r.max_rel_error));
    let r = grad_check(
        |g, s| info_nce_with_negatives(g, g.param(s, "a"), g.param(s, "p"), g.param(s, "n"), 0.2).unwrap(),
        &s,
        1e-5,
    )
    .unwrap();
    worst.push(("InfoNCE with negatives", r.max_rel_error));

    // Full denoiser with both adapters; fusion weights nonzero so every
    // parameter lies on the gradient path of the diffusion loss.
    let d = Denoiser::new(tiny_dims(), 0.8, true);
    let mut s = ParamStore::new();
    d.unet.init(&mut s, &mut rng).unwrap();
    d.unet.init_frame_adapter(&mut s, &mut rng).unwrap();
    TemporalAdapter::new(d.unet.clone()).init_from_backbone(&mut s, &mut rng).unwrap();
    for p in s.iter_mut().filter(|p| p.name.contains("fuse") || p.name.contains("cond_zero") || p.name.ends_with("_frame")) {
        for v in p.tensor.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let sched = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
    let z0 = rand_tensor(&[1, 4, 8], &mut rng);
    let eps = rand_tensor(&[1, 4, 8], &mut rng);
    let frames = rand_tensor(&[3, 4], &mut rng);
    let cond = mask_to_condition(&[0, 1, 1, 0], 4, 8).plane;
    let r = grad_check(
        |g, s| {
            let sample =
                DiffusionSample { z0: &z0, cond: Conditioning { label: 1, frames: Some(&frames), cond_map: Some(&cond) } };
            example_loss(g, &d, s, &sample, 4, &eps, &sched)
        },
        &s,
        1e-5,
    )
    .unwrap();
    worst.push(("UNet + adapters under the diffusion loss", r.max_rel_error));

    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(max < 1e-4 && secs < 60.0, format!("max rel error {max:.2e} in {secs:.1}s ({})", parts.join(", ")))
}

fn lambda_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (q, text, frames) = (rand_tensor(&[6, 4], &mut rng), rand_tensor(&[2, 5], &mut rng), rand_tensor(&[7, 5], &mut rng));
    let w: Vec<Tensor> = (0..4).map(|_| rand_tensor(&[5, 4], &mut rng)).collect();
    let run = |lambda: f64, with_frames: bool| {
        let g = Graph::new();
        let frame = with_frames.then(|| (g.constant(frames.clone()), g.constant(w[2].clone()), g.constant(w[3].clone())));
        let out = attend(&g, g.constant(q.clone()), g.constant(text.clone()), g.constant(w[0].clone()), g.constant(w[1].clone()), frame, lambda);
        g.value(out).as_ref().clone()
    };
    let text_only = run(0.0, false);
    let bit_exact = run(0.0, true).to_le_bytes() == text_only.to_le_bytes();
    let full = run(1.0, true);
    let mut lin_err: f64 = 0.0;
    for lambda in [0.25, 0.5, 2.0, 3.7] {
        let out = run(lambda, true);
        for ((o, t), f) in out.data().iter().zip(text_only.data()).zip(full.data()) {
            lin_err = lin_err.max((o - (t + lambda * (f - t))).abs());
        }
    }
    let g = Graph::new();
    let logits = g.constant(Tensor::from_fn(&[16, 9], |_| rng.random_range(-30.0..30.0)));
    let sm = g.value(g.softmax_rows(logits));
    let row_err = sm.data().chunks(9).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    outcome(
        bit_exact && lin_err <= 1e-12 && row_err <= 1e-12,
        format!("lambda=0 bit-exact {bit_exact}, linearity error {lin_err:.1e}, softmax row error {row_err:.1e}"),
    )
}

fn expected_set(store: &ParamStore, stage: StageId) -> Vec<String> {
    let mut names: Vec<String> = store
        .names()
        .filter(|n| match stage {
            StageId::FrameAdapter => n.ends_with(".w_k_frame") || n.ends_with(".w_v_frame") || n.starts_with("frame_proj."),
            StageId::TemporalAdapter => n.starts_with("temporal."),
            StageId::Backbone => n.starts_with("unet."),
        })
        .map(str::to_string)
        .collect();
    names.sort();
    names
}

fn freezing_contract(p: &Pipeline) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // Small-scale run: bytes before and after each adapter stage.
    let d = Denoiser::new(tiny_dims(), 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let sched = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
    let data: Vec<TrainingExample> = (0..6)
        .map(|i| TrainingExample {
            z0: Tensor::from_fn(&[1, 4, 8], |j| ((i + j) as f64 * 0.3).sin()),
            label: i % 3,
            frames: Tensor::from_fn(&[4, 4], |j| ((i * 7 + j) as f64 * 0.37).cos()),
            gt_cond: mask_to_condition(&[0, 1, 1, 0], 4, 8).plane,
        })
        .collect();
    let cfg = StageConfig { epochs: 1, batch_size: 2, lr: 1e-2, max_clips: 0 };
    let mut store = ParamStore::new();
    for stage in StageId::ALL {
        prepare_stage(stage, &d, &mut store, &mut rng).unwrap();
        let before = store.snapshot();
        train_stage(stage, &d, &mut store, &data, &cfg, &sched, &mut rng).unwrap();
        let mut changed = store.changed_since(&before);
        changed.sort();
        if stage != StageId::Backbone {
            let ok = changed == expected_set(&store, stage);
            pass &= ok;
            notes.push(format!("{stage} changed={} exact={ok}", changed.len()));
        }
    }

    // Reference run: every earlier parameter byte-identical in the next
    // checkpoint, and the added names exactly the stage's set.
    for (prev, stage) in [(StageId::Backbone, StageId::FrameAdapter), (StageId::FrameAdapter, StageId::TemporalAdapter)] {
        let a = load_checkpoint(&p.stage_checkpoint(prev)).unwrap();
        let b = load_checkpoint(&p.stage_checkpoint(stage)).unwrap();
        let before = a.snapshot();
        let after = b.snapshot();
        let frozen = before.iter().all(|(n, bytes)| after.get(n) == Some(bytes));
        let mut added: Vec<String> = after.keys().filter(|n| !before.contains_key(*n)).cloned().collect();
        added.sort();
        let ok = frozen && added == expected_set(&b, stage);
        pass &= ok;
        notes.push(format!("reference {stage}: prior frozen={frozen}, added={} exact={ok}", added.len()));
    }
    outcome(pass, notes.join("; "))
}

fn zero_fusion(p: &Pipeline) -> Outcome {
    let cfg = &p.cfg;
    let mut store = load_checkpoint(&p.stage_checkpoint(StageId::FrameAdapter)).unwrap();
    let base = store.clone();
    let d = p.denoiser();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    TemporalAdapter::new(d.unet.clone()).init_from_backbone(&mut store, &mut rng).unwrap();
    let sched = cfg.schedule.build().unwrap();
    let (f, s, tf) = (cfg.corpus.freq_bins, cfg.corpus.time_bins, cfg.corpus.frames);
    let frames = rand_tensor(&[tf, cfg.corpus.feat_dim], &mut rng);
    let masks: Vec<Vec<u8>> = vec![
        vec![0; tf],
        vec![1; tf],
        (0..tf).map(|i| (i >= tf / 4 && i < 3 * tf / 4) as u8).collect(),
        (0..tf).map(|_| rng.random_range(0..2)).collect(),
    ];
    let shape = [1, f, s];
    let mut identical = 0;
    for (i, m) in masks.iter().enumerate() {
        let plane = mask_to_condition(m, f, s).plane;
        let with = Conditioning { label: i % 6, frames: Some(&frames), cond_map: Some(&plane) };
        let without = Conditioning { label: i % 6, frames: Some(&frames), cond_map: None };
        let a = ddpm_sample_clipped(&d, &store, &with, &shape, &sched, 77 + i as u64, None).unwrap();
        let b = ddpm_sample_clipped(&d, &base, &without, &shape, &sched, 77 + i as u64, None).unwrap();
        identical += (a.to_le_bytes() == b.to_le_bytes()) as usize;
    }
    outcome(identical == masks.len(), format!("{identical}/{} condition maps bit-identical", masks.len()))
}

fn stats(mean: Vec<f64>, cov_diag: &[f64]) -> EmbeddingStats {
    let d = mean.len();
    let mut covariance = vec![0.0; d * d];
    for (i, &v) in cov_diag.iter().enumerate() {
        covariance[i * d + i] = v;
    }
    EmbeddingStats { mean, covariance, count: 100 }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut errs = Vec::new();

    let one_d = frechet_distance(&stats(vec![0.0], &[1.0]), &stats(vec![3.0], &[1.0])).unwrap();
    let (m1, v1, m2, v2): (f64, f64, f64, f64) = (0.4, 2.5, -1.1, 0.3);
    let closed = (m1 - m2) * (m1 - m2) + v1 + v2 - 2.0 * (v1 * v2).sqrt();
    let one_d_b = frechet_distance(&stats(vec![m1], &[v1]), &stats(vec![m2], &[v2])).unwrap();
    let mut fd_err = (one_d - 9.0).abs().max((one_d_b - closed).abs());
    for _ in 0..20 {
        let d = 6;
        let (mu, nu): (Vec<f64>, Vec<f64>) = (0..d).map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).unzip();
        let (s, t): (Vec<f64>, Vec<f64>) = (0..d).map(|_| (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))).unzip();
        let oracle: f64 =
            (0..d).map(|i| (mu[i] - nu[i]).powi(2) + (s[i].sqrt() - t[i].sqrt()).powi(2)).sum();
        let got = frechet_distance(&stats(mu, &s), &stats(nu, &t)).unwrap();
        fd_err = fd_err.max((got - oracle).abs());
    }
    // Identical full-covariance stats.
    let a = rand_tensor(&[5, 5], &mut rng);
    let mut cov = vec![0.0; 25];
    for i in 0..5 {
        for j in 0..5 {
            cov[i * 5 + j] = (0..5).map(|k| a.data()[i * 5 + k] * a.data()[j * 5 + k]).sum();
        }
    }
    let e = EmbeddingStats { mean: vec![0.3; 5], covariance: cov, count: 10 };
    let self_fd = frechet_distance(&e, &e).unwrap();
    errs.push(format!("frechet err {fd_err:.1e}, self {self_fd:.1e}"));
    let fd_ok = fd_err <= 1e-8 && self_fd.abs() <= 1e-8;

    let mut kl_err: f64 = 0.0;
    let mut kl_min = f64::INFINITY;
    let post = |id: usize, p: Vec<f64>| ClassPosterior { clip_id: format!("c{id}"), probabilities: p };
    let draw = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..8).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    for _ in 0..20 {
        let n = 5;
        let gt: Vec<Vec<f64>> = (0..n).map(|_| draw(&mut rng)).collect();
        let gen: Vec<Vec<f64>> = (0..n).map(|_| draw(&mut rng)).collect();
        let direct: f64 = gt
            .iter()
            .zip(&gen)
            .map(|(p, q)| p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let got = mean_kl(
            &gt.iter().cloned().enumerate().map(|(i, p)| post(i, p)).collect::<Vec<_>>(),
            &gen.iter().cloned().enumerate().map(|(i, p)| post(i, p)).collect::<Vec<_>>(),
        )
        .unwrap();
        kl_err = kl_err.max((got - direct).abs());
        kl_min = kl_min.min(got);
    }
    let pair = mean_kl(&[post(0, vec![0.5, 0.5])], &[post(0, vec![0.25, 0.75])]).unwrap();
    kl_err = kl_err.max((pair - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs());
    errs.push(format!("kl err {kl_err:.1e}, min {kl_min:.3}"));
    let kl_ok = kl_err <= 1e-10 && kl_min >= 0.0;

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..50)
        .map(|_| ((0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let cs = clip_score(&pairs).unwrap();
    let same = clip_score(&[(vec![1.0, 2.0], vec![2.0, 4.0])]).unwrap();
    let opposite = clip_score(&[(vec![1.0, 2.0], vec![-1.0, -2.0])]).unwrap();
    let ortho = clip_score(&[(vec![1.0, 0.0], vec![0.0, 3.0])]).unwrap();
    let cs_ok = (0.0..=100.0).contains(&cs)
        && (same - 100.0).abs() < 1e-9
        && opposite.abs() < 1e-9
        && (ortho - 50.0).abs() < 1e-9;
    errs.push(format!("clip score random {cs:.2}, aligned {same:.2}, opposite {opposite:.2}, orthogonal {ortho:.2}"));

    let mask = |on: &[usize], len: usize| -> Vec<u8> {
        let mut m = vec![0u8; len];
        for &o in on {
            m[o] = 1;
        }
        m
    };
    let cases: [(Vec<u8>, Vec<u8>, f64); 5] = [
        (mask(&[8], 32), mask(&[9, 20], 32), 2.0 / 3.0),
        (mask(&[3, 12], 32), mask(&[3, 12], 32), 1.0),
        (mask(&[5], 32), vec![0; 32], 0.0),
        // Both predictions are within tolerance of gt 10, only one can match: P 1/2, R 1/2.
        (mask(&[10, 25], 32), mask(&[9, 11], 32), 0.5),
        (mask(&[4], 32), mask(&[7], 32), 0.0),
    ];
    let f1_ok = cases.iter().all(|(g, p, want)| (onset_f1(g, p, 2) - want).abs() < 1e-12);
    errs.push(format!("onset F1 cases ok {f1_ok}"));
    outcome(fd_ok && kl_ok && cs_ok && f1_ok, errs.join("; "))
}

fn detector_quality(p: &Pipeline) -> Outcome {
    let report = p.diagnose_detector(false).unwrap();
    let corpus = p.corpus().unwrap();
    let decay: BTreeSet<&str> =
        corpus.split(Split::Test).filter(|c| c.scenario == Scenario::Decay).map(|c| c.id.as_str()).collect();
    let (mut hits, mut n) = (0.0, 0usize);
    for c in report.clips.iter().filter(|c| decay.contains(c.clip_id.as_str())) {
        hits += c.frame_accuracy * c.mask.len() as f64;
        n += c.mask.len();
    }
    let decay_acc = hits / n.max(1) as f64;
    let overall = report.mean_frame_accuracy;
    outcome(
        overall >= 0.9 && decay_acc >= 0.9 && n > 0,
        format!("held-out frame accuracy {overall:.4}, decay clips {decay_acc:.4} over {} clips", decay.len()),
    )
}

fn filtering_efficacy(p: &Pipeline) -> Outcome {
    let filtered = p.filter_continuous().unwrap();
    let corpus = p.corpus().unwrap();
    let continuous: BTreeSet<usize> = p.cfg.corpus.continuous_labels.iter().copied().collect();
    let (mut bad, mut bad_removed, mut clean, mut clean_kept) = (0, 0, 0, 0);
    for (rec, dec) in corpus.manifest.clips.iter().zip(&filtered.decisions) {
        assert_eq!(rec.id, dec.id);
        if !continuous.contains(&rec.label) {
            continue;
        }
        let kept = dec.reason == FilterReason::Kept;
        if rec.corrupted {
            bad += 1;
            bad_removed += (!kept) as usize;
        } else {
            clean += 1;
            clean_kept += kept as usize;
        }
    }
    let removed = bad_removed as f64 / bad as f64;
    let retained = clean_kept as f64 / clean as f64;
    outcome(
        removed >= 0.9 && retained >= 0.9,
        format!("removed {bad_removed}/{bad} corrupted ({removed:.3}), kept {clean_kept}/{clean} clean ({retained:.3})"),
    )
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}

/// A pipeline under `dir` that reuses the corpus, filter, embedder and
/// backbone of `base`.
fn branch(base: &Pipeline, dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> Pipeline {
    for stage in ["gen-corpus", "filter-continuous", "train-embedder", "train-backbone"] {
        copy_dir(&base.stage_dir(stage), &dir.join(stage));
    }
    std::fs::copy(base.cfg.output_dir.join("ledger.json"), dir.join("ledger.json")).unwrap();
    let mut cfg = base.cfg.clone();
    cfg.output_dir = dir.to_path_buf();
    edit(&mut cfg);
    Pipeline::new(cfg)
}

fn ablations(p: &Pipeline, on: f64, on_f1: f64, root: &Path) -> (Outcome, Outcome) {
    let none = branch(p, &root.join("none"), |c| c.ablation.temporal_condition = TemporalSource::None);
    copy_dir(&p.stage_dir("train-frame-adapter"), &none.stage_dir("train-frame-adapter"));
    copy_dir(&p.stage_dir("train-temporal-adapter"), &none.stage_dir("train-temporal-adapter"));
    std::fs::copy(p.cfg.output_dir.join("ledger.json"), none.cfg.output_dir.join("ledger.json")).unwrap();
    none.infer().unwrap();
    let none_f1 = none.evaluate().unwrap().value("onset_f1").unwrap();

    let off = branch(p, &root.join("clipwise"), |c| c.ablation.frame_wise = Toggle::Off);
    off.train_stage(StageId::FrameAdapter).unwrap();
    off.train_stage(StageId::TemporalAdapter).unwrap();
    off.infer().unwrap();
    let off_cs = off.evaluate().unwrap().value("clip_score").unwrap();
    (
        outcome(on_f1 > none_f1, format!("onset F1 predicted {on_f1:.4} vs none {none_f1:.4}")),
        outcome(on >= off_cs, format!("CLIP score frame-wise {on:.4} vs clip-wise {off_cs:.4}")),
    )
}

fn doppler(p: &Pipeline) -> Outcome {
    let corpus = p.corpus().unwrap();
    let r = p.cfg.corpus.cols_per_frame();
    let (mut total, mut good) = (0, 0);
    let mut worst = 0.0f64;
    for clip in corpus.clips.iter().filter(|c| c.scenario == Scenario::ApproachRecede) {
        total += 1;
        let frames: Vec<usize> = clip.event_frames().collect();
        let (lo, hi) = (frames[0] * r, (frames[frames.len() - 1] + 1) * r);
        let centroid: Vec<f64> = spectral_centroid(&clip.spectrogram)[lo..hi].iter().map(|c| c.unwrap()).collect();
        let traj = smooth(&centroid, 2);
        let peak_frame = (0..clip.proximity.len()).max_by(|&a, &b| clip.proximity[a].total_cmp(&clip.proximity[b])).unwrap();
        let closest = (peak_frame * r) as f64 + (r as f64 - 1.0) / 2.0;
        if let Some(peak) = unimodal_peak(&traj) {
            let off = ((lo + peak) as f64 - closest).abs();
            worst = worst.max(off);
            good += (off <= 2.0) as usize;
        }
    }
    outcome(total > 0 && good == total, format!("{good}/{total} approach-recede clips unimodal within 2 bins (worst offset {worst:.1})"))
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 gradient suite", gradient_suite()));
    results.push(("2 parallel attention structure", lambda_structure()));
    results.push(("5 metric oracles", metric_oracles()));

    let start = Instant::now();
    let mut cfg = ExperimentConfig::from_toml_str(PROFILE, &[]).unwrap();
    cfg.output_dir = root.path().join("run_a");
    let run = Pipeline::new(cfg.clone());
    let report = run.all_stages().unwrap();
    let run_secs = start.elapsed().as_secs_f64();

    results.push(("3 freezing contract", freezing_contract(&run)));
    results.push(("4 zero-fusion identity", zero_fusion(&run)));
    let det = detector_quality(&run);
    results.push(("6 detector quality", outcome(det.pass, format!("{}; reference run {run_secs:.0}s", det.detail))));
    results.push(("7 filtering efficacy", filtering_efficacy(&run)));
    let (a, b) = ablations(
        &run,
        report.value("clip_score").unwrap(),
        report.value("onset_f1").unwrap(),
        root.path(),
    );
    results.push(("8a temporal condition ablation", a));
    results.push(("8b frame-wise ablation", b));

    cfg.output_dir = root.path().join("run_b");
    let again = Pipeline::new(cfg).all_stages().unwrap();
    let same = again.rows == report.rows;
    results.push(("9 end-to-end determinism", outcome(same, format!("{} metric rows identical: {same}", report.rows.len()))));
    results.push(("10 corpus physics", doppler(&run)));

    results.sort_by_key(|(name, _)| {
        let n: String = name.chars().take_while(|c| c.is_ascii_digit()).collect();
        (n.parse::<usize>().unwrap(), name.to_string())
    });
    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
