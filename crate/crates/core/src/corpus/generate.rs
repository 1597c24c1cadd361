use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{
    apply_test_pick, write_clip, ClipRecord, CorpusClip, CorpusConfig, CorpusManifest, Scenario, Split, CLASS_NAMES,
    GENERATOR_VERSION,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Bump centres per class, chosen so that no two classes correlate above
/// 0.44 under any relative shift within the Doppler range.
pub const TEMPLATE_BUMPS: [[f64; 3]; 8] = [
    [15.0, 19.0, 22.0],
    [8.0, 12.0, 27.0],
    [1.0, 8.0, 26.0],
    [2.0, 5.0, 20.0],
    [3.0, 14.0, 23.0],
    [7.0, 19.0, 24.0],
    [3.0, 17.0, 25.0],
    [9.0, 16.0, 19.0],
];
const BUMP_AMPS: [f64; 3] = [1.0, 0.8, 0.6];
const BUMP_WIDTH: f64 = 0.8;

/// Spectral template of `class` shifted up by `shift` bins.
pub fn template(class: usize, shift: f64, freq_bins: usize) -> Vec<f64> {
    (0..freq_bins)
        .map(|f| {
            TEMPLATE_BUMPS[class]
                .iter()
                .zip(BUMP_AMPS)
                .map(|(c, a)| a * (-(f as f64 - c - shift).powi(2) / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp())
                .sum()
        })
        .collect()
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

/// Orthonormal class directions in frame-feature space, followed by one
/// more orthonormal row used as the shared scene direction.
pub fn class_directions(cfg: &CorpusConfig, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes + 1);
    while rows.len() < cfg.n_classes + 1 {
        let mut v: Vec<f64> = (0..cfg.feat_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows
}

struct Globals {
    dirs: Vec<Vec<f64>>,
}

/// Proximity of the source as a function of (fractional) spectrogram
/// column, zero outside the event.
struct Trajectory {
    scenario: Scenario,
    start: f64,
    end: f64,
    peak: f64,
    level: f64,
    tau: f64,
}

impl Trajectory {
    fn draw(scenario: Scenario, start: usize, end: usize, peak: f64, rng: &mut ChaCha8Rng) -> Self {
        let (level, tau) = match scenario {
            Scenario::Steady => (rng.random_range(0.6..1.0), 0.0),
            Scenario::ApproachRecede => (rng.random_range(0.15..0.35), 0.0),
            Scenario::Decay => (rng.random_range(0.1..0.25), rng.random_range(0.15..0.35) * (end - start) as f64),
        };
        Self { scenario, start: start as f64, end: (end - 1) as f64, peak, level, tau }
    }

    fn at(&self, t: f64) -> f64 {
        if t < self.start || t > self.end {
            return 0.0;
        }
        match self.scenario {
            Scenario::Steady => self.level,
            Scenario::ApproachRecede => {
                let frac = if t <= self.peak {
                    (t - self.start) / (self.peak - self.start)
                } else {
                    (self.end - t) / (self.end - self.peak)
                };
                self.level + (1.0 - self.level) * frac.clamp(0.0, 1.0)
            }
            Scenario::Decay => self.level + (1.0 - self.level) * (-(t - self.start) / self.tau).exp(),
        }
    }
}

fn generate_clip(record: &ClipRecord, cfg: &CorpusConfig, g: &Globals, rng: &mut ChaCha8Rng) -> CorpusClip {
    let (tf, r, nf, s) = (cfg.frames, cfg.cols_per_frame(), cfg.freq_bins, cfg.time_bins);
    let min_len = match record.scenario {
        Scenario::ApproachRecede => 16,
        _ => ((0.3 * tf as f64).ceil() as usize).max(1),
    };
    let len = rng.random_range(min_len..=tf);
    let on = rng.random_range(0..=tf - len);
    let off = on + len;
    // closest approach near mid-event keeps both ramps steep enough to
    // dominate background jitter
    let peak_frame = on + len / 2 + rng.random_range(0..3) - 1;
    let peak_col = (r * peak_frame) as f64 + (r as f64 - 1.0) / 2.0;
    let traj = Trajectory::draw(record.scenario, r * on, r * off, peak_col, rng);

    let amp = rng.random_range(0.6..1.0);
    let mut spec = vec![0.0; nf * s];
    for col in 0..s {
        let p = traj.at(col as f64);
        let tpl = (p > 0.0).then(|| template(record.audio_label, cfg.doppler_bins * p, nf));
        for f in 0..nf {
            let mut v = cfg.background_level + rng.random_range(-1.0..1.0) * cfg.background_noise;
            if let Some(t) = &tpl {
                v += amp * t[f];
            }
            spec[f * s + col] = f32_round(v.max(0.0));
        }
    }

    let scene_dir = &g.dirs[cfg.n_classes];
    let jitter = Normal::new(0.0, cfg.scene_jitter.max(1e-12)).unwrap();
    let noise = Normal::new(0.0, cfg.frame_noise.max(1e-12)).unwrap();
    let scene: Vec<f64> = scene_dir.iter().map(|d| 0.5 * d + jitter.sample(rng)).collect();
    let mask: Vec<u8> = (0..tf).map(|i| (on..off).contains(&i) as u8).collect();
    let proximity: Vec<f64> = (0..tf)
        .map(|i| if mask[i] == 1 { f32_round(traj.at((r * i) as f64 + (r as f64 - 1.0) / 2.0)) } else { 0.0 })
        .collect();
    let dir = &g.dirs[record.label];
    let frames = Tensor::from_fn(&[tf, cfg.feat_dim], |k| {
        let (i, j) = (k / cfg.feat_dim, k % cfg.feat_dim);
        f32_round(scene[j] + proximity[i] * dir[j] + noise.sample(rng))
    });
    CorpusClip {
        id: record.id.clone(),
        label: record.label,
        frames,
        spectrogram: Tensor::new(&[1, nf, s], spec),
        gt_mask: mask,
        proximity,
        corrupted: record.corrupted,
        scenario: record.scenario,
    }
}

fn clip_id(index: usize) -> String {
    format!("clip_{index:04}")
}

fn build(cfg: &CorpusConfig, seed: u64) -> (Vec<ClipRecord>, Vec<CorpusClip>) {
    let g = Globals { dirs: class_directions(cfg, seed) };
    let mut records = Vec::with_capacity(cfg.total());
    let mut clips = Vec::with_capacity(cfg.total());
    for index in 0..cfg.total() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
        let label = index % cfg.n_classes;
        let scenario = [Scenario::Steady, Scenario::ApproachRecede, Scenario::Decay][rng.random_range(0..3)];
        let corrupted = cfg.n_classes > 1 && rng.random::<f64>() < cfg.corruption_rate;
        let audio_label = if corrupted { (label + rng.random_range(1..cfg.n_classes)) % cfg.n_classes } else { label };
        let split = if index < cfg.n_train { Split::Train } else { Split::Val };
        let record = ClipRecord { id: clip_id(index), label, split, corrupted, audio_label, scenario, grounding_score: None };
        clips.push(generate_clip(&record, cfg, &g, &mut rng));
        records.push(record);
    }
    (records, clips)
}

/// The generator's stand-in for a manual pick: clean clips from the
/// held-out pool, hardest scenarios first.
fn pick_challenging(records: &[ClipRecord], n: usize) -> Vec<String> {
    let rank = |s: Scenario| match s {
        Scenario::Decay => 0,
        Scenario::ApproachRecede => 1,
        Scenario::Steady => 2,
    };
    let mut pool: Vec<&ClipRecord> = records.iter().filter(|r| r.split != Split::Train).collect();
    pool.sort_by_key(|r| (r.corrupted, rank(r.scenario), r.id.clone()));
    let mut ids: Vec<String> = pool.into_iter().take(n).map(|r| r.id.clone()).collect();
    ids.sort();
    ids
}

/// Generate the corpus under `dir`: `manifest.json`, `clips/<id>.bin` and
/// `test_picklist.txt`, with the pick list already applied.
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64, dir: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let clip_dir = dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let (records, clips) = build(cfg, seed);
    for clip in &clips {
        write_clip(&clip_dir.join(format!("{}.bin", clip.id)), clip)?;
    }
    let picks = pick_challenging(&records, cfg.n_test);
    let pick_path = dir.join("test_picklist.txt");
    let mut text = picks.join("\n");
    text.push('\n');
    std::fs::write(&pick_path, text).map_err(|e| Error::io(&pick_path, e))?;
    let manifest = CorpusManifest {
        root: ".".into(),
        seed,
        generator_version: GENERATOR_VERSION.into(),
        class_names: CLASS_NAMES[..cfg.n_classes].iter().map(|s| s.to_string()).collect(),
        config: cfg.clone(),
        clips: records,
    };
    let (manifest, _) = apply_test_pick(&manifest, &picks)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
