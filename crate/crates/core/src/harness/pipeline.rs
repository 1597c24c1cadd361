use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{artifact_version, ExperimentConfig, LedgerEntry, RunLedger, TemporalSource};
use crate::autodiff::{load_checkpoint, save_checkpoint, ParamStore, Tensor};
use crate::corpus::{
    apply_test_pick, filter_continuous, generate_corpus, read_pick_list, Corpus, CorpusClip, CorpusManifest,
    FilteredManifest, Split,
};
use crate::diffusion::{ddpm_sample_clipped, train_stage, write_loss_csv, EpochLoss, StageId, TrainingExample};
use crate::embed::{calibrate, train_embedder, DetectorCalibration, JointEmbedder};
use crate::error::{Error, Result};
use crate::metrics::{
    activity_from_spectrogram, clip_score, embedding_stats, frame_energy, frechet_distance, mean_kl, onset_f1,
    AudioTagger, ClassPosterior, MetricRow, MetricsReport, TAGGER_EMBEDDER,
};
use crate::nn::{Conditioning, Denoiser};
use crate::temporal::{mask_to_condition, Detector, DiagnosticsReport};

pub const GEN_CORPUS: &str = "gen-corpus";
pub const FILTER_CONTINUOUS: &str = "filter-continuous";
pub const TRAIN_EMBEDDER: &str = "train-embedder";
pub const INFER: &str = "infer";
pub const EVALUATE: &str = "evaluate";
pub const DIAGNOSE_DETECTOR: &str = "diagnose-detector";

/// Split tag for the filtered continuous test clips.
pub const EVAL_SPLIT: &str = "test-continuous";

const MODEL_FILE: &str = "model.json";

/// Oracle-free onset detector threshold plus the masks used at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferRecord {
    pub temporal_condition: TemporalSource,
    pub frame_wise: bool,
    /// Per-clip condition mask fed to the temporal adapter, if any.
    pub masks: BTreeMap<String, Option<Vec<u8>>>,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    hash: String,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let out = cfg.output_dir.clone();
        let hash = cfg.hash();
        Self { cfg, out, hash }
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn make_dir(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn ledger(&self) -> Result<RunLedger> {
        RunLedger::load(&self.out)
    }

    fn require(&self, stages: &[&str]) -> Result<()> {
        let ledger = self.ledger()?;
        for s in stages {
            ledger.require(s)?;
        }
        Ok(())
    }

    fn finish(&self, stage: &str, artifacts: &[PathBuf], start: Instant) -> Result<()> {
        let rel: Vec<PathBuf> =
            artifacts.iter().map(|p| p.strip_prefix(&self.out).unwrap_or(p).to_path_buf()).collect();
        let entry = LedgerEntry {
            stage: stage.to_string(),
            config_hash: self.hash.clone(),
            artifact_version: artifact_version(&self.out, &rel)?,
            artifacts: rel,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        };
        log::info!("{stage} done in {:.1}s", entry.wall_clock_secs);
        let mut ledger = self.ledger()?;
        ledger.append(entry);
        ledger.save(&self.out)
    }

    /// Independent, replayable stream for one training consumer.
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seeds.train_seed);
        rng.set_stream(stream);
        rng
    }

    fn corpus_dir(&self) -> PathBuf {
        self.stage_dir(GEN_CORPUS)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        self.require(&[GEN_CORPUS])?;
        Corpus::load(&self.corpus_dir())
    }

    pub fn denoiser(&self) -> Denoiser {
        Denoiser::new(self.cfg.model.clone(), self.cfg.conditioning.lambda, self.cfg.ablation.frame_wise.is_on())
    }

    pub fn gen_corpus(&self, pick_list: Option<&Path>) -> Result<CorpusManifest> {
        let start = Instant::now();
        let dir = self.make_dir(GEN_CORPUS)?;
        let mut manifest = generate_corpus(&self.cfg.corpus, self.cfg.seeds.corpus_seed, &dir)?;
        if let Some(p) = pick_list {
            let (m, report) = apply_test_pick(&manifest, &read_pick_list(p)?)?;
            log::info!("pick list: {} ids, {} duplicates, test split {}", report.requested, report.duplicates, report.test_size);
            manifest = m;
            manifest.save(&Corpus::manifest_path(&dir))?;
        }
        let mut artifacts = vec![Corpus::manifest_path(&dir), dir.join("test_picklist.txt")];
        artifacts.extend(manifest.clips.iter().map(|c| dir.join("clips").join(format!("{}.bin", c.id))));
        self.finish(GEN_CORPUS, &artifacts, start)?;
        Ok(manifest)
    }

    fn filtered_path(&self) -> PathBuf {
        self.stage_dir(FILTER_CONTINUOUS).join("continuous_manifest.json")
    }

    pub fn filter_continuous(&self) -> Result<FilteredManifest> {
        let start = Instant::now();
        let corpus = self.corpus()?;
        let labels: BTreeSet<usize> = self.cfg.corpus.continuous_labels.iter().copied().collect();
        let filtered = filter_continuous(&corpus, &labels, self.cfg.filter.tau_g)?;
        let dir = self.make_dir(FILTER_CONTINUOUS)?;
        let decisions = dir.join("decisions.json");
        filtered.manifest.save(&self.filtered_path())?;
        std::fs::write(&decisions, serde_json::to_string_pretty(&filtered.decisions)?)
            .map_err(|e| Error::io(&decisions, e))?;
        self.finish(FILTER_CONTINUOUS, &[self.filtered_path(), decisions], start)?;
        Ok(filtered)
    }

    fn load_filtered(&self) -> Result<CorpusManifest> {
        self.require(&[FILTER_CONTINUOUS])?;
        CorpusManifest::load(&self.filtered_path())
    }

    fn load_decisions(&self) -> Result<Vec<crate::corpus::FilterDecision>> {
        let path = self.stage_dir(FILTER_CONTINUOUS).join("decisions.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn train_embedder(&self) -> Result<Vec<f64>> {
        let start = Instant::now();
        let corpus = self.corpus()?;
        let train: Vec<&CorpusClip> = corpus.split(Split::Train).collect();
        let emb = JointEmbedder::new(self.cfg.embedder.clone());
        let mut store = ParamStore::new();
        let curve = train_embedder(&emb, &mut store, &train, &self.cfg.embedder_train, &mut self.rng(1))?;
        let cal = calibrate(&emb, &store, &train)?;
        let dir = self.make_dir(TRAIN_EMBEDDER)?;
        let (model, calib, loss) = (dir.join(MODEL_FILE), dir.join("calibration.json"), dir.join("loss.csv"));
        save_checkpoint(&store, &model)?;
        std::fs::write(&calib, serde_json::to_string_pretty(&cal)?).map_err(|e| Error::io(&calib, e))?;
        let csv: String = std::iter::once("epoch,mean_loss\n".to_string())
            .chain(curve.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")))
            .collect();
        std::fs::write(&loss, csv).map_err(|e| Error::io(&loss, e))?;
        self.finish(TRAIN_EMBEDDER, &[model.clone(), model.with_extension("bin"), calib, loss], start)?;
        Ok(curve)
    }

    pub fn load_embedder(&self) -> Result<(JointEmbedder, ParamStore, DetectorCalibration)> {
        self.require(&[TRAIN_EMBEDDER])?;
        let dir = self.stage_dir(TRAIN_EMBEDDER);
        let store = load_checkpoint(&dir.join(MODEL_FILE))?;
        let path = dir.join("calibration.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok((JointEmbedder::new(self.cfg.embedder.clone()), store, serde_json::from_str(&text)?))
    }

    fn detector<'a>(&self, emb: &'a JointEmbedder, store: &'a ParamStore, cal: DetectorCalibration) -> Detector<'a> {
        Detector {
            embedder: emb,
            store,
            calibration: cal,
            threshold: self.cfg.conditioning.threshold,
            mode: self.cfg.conditioning.threshold_mode,
        }
    }

    pub fn stage_checkpoint(&self, stage: StageId) -> PathBuf {
        self.stage_dir(stage.command()).join(MODEL_FILE)
    }

    fn stage_config(&self, stage: StageId) -> &crate::diffusion::StageConfig {
        match stage {
            StageId::Backbone => &self.cfg.backbone,
            StageId::FrameAdapter => &self.cfg.frame_adapter,
            StageId::TemporalAdapter => &self.cfg.temporal_adapter,
        }
    }

    pub fn training_examples(&self, corpus: &Corpus) -> Vec<TrainingExample> {
        let (f, s) = (self.cfg.corpus.freq_bins, self.cfg.corpus.time_bins);
        corpus
            .split(Split::Train)
            .map(|c| TrainingExample {
                z0: self.cfg.latent.encode(&c.spectrogram),
                label: c.label,
                frames: c.frames.clone(),
                gt_cond: mask_to_condition(&c.gt_mask, f, s).plane,
            })
            .collect()
    }

    pub fn train_stage(&self, stage: StageId) -> Result<Vec<EpochLoss>> {
        let start = Instant::now();
        self.require(&[GEN_CORPUS])?;
        let mut store = match stage.prerequisite() {
            None => ParamStore::new(),
            Some(prev) => {
                self.require(&[prev.command()])?;
                load_checkpoint(&self.stage_checkpoint(prev))?
            }
        };
        let corpus = self.corpus()?;
        let examples = self.training_examples(&corpus);
        let sched = self.cfg.schedule.build()?;
        let stream = 2 + stage as u64;
        let curve =
            train_stage(stage, &self.denoiser(), &mut store, &examples, self.stage_config(stage), &sched, &mut self.rng(stream))?;
        let dir = self.make_dir(stage.command())?;
        let model = self.stage_checkpoint(stage);
        save_checkpoint(&store, &model)?;
        let loss = dir.join("loss.csv");
        write_loss_csv(&loss, &curve)?;
        self.finish(stage.command(), &[model.clone(), model.with_extension("bin"), loss], start)?;
        Ok(curve)
    }

    /// Continuous test clips, in manifest order, capped by `eval.max_clips`.
    pub fn eval_clips<'a>(&self, corpus: &'a Corpus, filtered: &CorpusManifest) -> Vec<&'a CorpusClip> {
        let keep: BTreeSet<&str> = filtered.clips.iter().filter(|r| r.split == Split::Test).map(|r| r.id.as_str()).collect();
        let mut clips: Vec<&CorpusClip> = corpus.split(Split::Test).filter(|c| keep.contains(c.id.as_str())).collect();
        if self.cfg.eval.max_clips > 0 {
            clips.truncate(self.cfg.eval.max_clips);
        }
        clips
    }

    fn latest_model(&self) -> Result<ParamStore> {
        let ledger = self.ledger()?;
        ledger.require(StageId::Backbone.command())?;
        let stage = [StageId::TemporalAdapter, StageId::FrameAdapter, StageId::Backbone]
            .into_iter()
            .find(|s| ledger.latest(s.command()).is_some())
            .unwrap();
        load_checkpoint(&self.stage_checkpoint(stage))
    }

    fn generated_path(&self) -> PathBuf {
        self.stage_dir(INFER).join("generated.json")
    }

    /// Sample one spectrogram per evaluation clip under the configured
    /// temporal condition source.
    pub fn infer(&self) -> Result<BTreeMap<String, Tensor>> {
        let start = Instant::now();
        let source = self.cfg.ablation.temporal_condition;
        self.require(&[StageId::Backbone.command(), FILTER_CONTINUOUS])?;
        if source != TemporalSource::None {
            self.require(&[StageId::TemporalAdapter.command()])?;
        }
        if source == TemporalSource::Predicted {
            self.require(&[TRAIN_EMBEDDER])?;
        }
        let store = self.latest_model()?;
        let corpus = self.corpus()?;
        let filtered = self.load_filtered()?;
        let clips = self.eval_clips(&corpus, &filtered);
        let embedder = match source {
            TemporalSource::Predicted => Some(self.load_embedder()?),
            _ => None,
        };
        let sched = self.cfg.schedule.build()?;
        let denoiser = self.denoiser();
        let (f, s) = (self.cfg.corpus.freq_bins, self.cfg.corpus.time_bins);
        let sc = &self.cfg.sampler;
        let range = sc.clip_x0.then(|| (self.cfg.latent.encode_value(sc.x_min), self.cfg.latent.encode_value(sc.x_max)));
        let mut generated = ParamStore::new();
        let mut out = BTreeMap::new();
        let mut masks = BTreeMap::new();
        for (i, clip) in clips.iter().enumerate() {
            let mask = match (source, &embedder) {
                (TemporalSource::GroundTruth, _) => Some(clip.gt_mask.clone()),
                (TemporalSource::Predicted, Some((emb, estore, cal))) => {
                    Some(self.detector(emb, estore, *cal).detect(&clip.frames, clip.label)?.1.bits)
                }
                _ => None,
            };
            let plane = mask.as_ref().map(|m| mask_to_condition(m, f, s).plane);
            let cond = Conditioning { label: clip.label, frames: Some(&clip.frames), cond_map: plane.as_ref() };
            let seed = self.cfg.seeds.sample_seed ^ i as u64;
            let z = ddpm_sample_clipped(&denoiser, &store, &cond, &[1, f, s], &sched, seed, range)?;
            let z = self.cfg.latent.decode(&z);
            log::debug!("sampled {}", clip.id);
            generated.insert(clip.id.clone(), z.clone(), false)?;
            out.insert(clip.id.clone(), z);
            masks.insert(clip.id.clone(), mask);
        }
        self.make_dir(INFER)?;
        let gen_path = self.generated_path();
        save_checkpoint(&generated, &gen_path)?;
        let record = InferRecord { temporal_condition: source, frame_wise: self.cfg.ablation.frame_wise.is_on(), masks };
        let rec_path = self.stage_dir(INFER).join("conditions.json");
        std::fs::write(&rec_path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&rec_path, e))?;
        self.finish(INFER, &[gen_path.clone(), gen_path.with_extension("bin"), rec_path], start)?;
        Ok(out)
    }

    fn tagger_path(&self) -> PathBuf {
        self.stage_dir(EVALUATE).join("tagger.json")
    }

    /// Train (or reload) the audio tagger on grounded training clips.
    fn tagger(&self, corpus: &Corpus, tau_g: f64) -> Result<(AudioTagger, ParamStore)> {
        let tagger = AudioTagger { n_classes: self.cfg.corpus.n_classes, ..Default::default() };
        let path = self.tagger_path();
        if path.exists() {
            return Ok((tagger, load_checkpoint(&path)?));
        }
        let scores: BTreeMap<String, f64> = self.load_decisions()?.into_iter().map(|d| (d.id, d.score)).collect();
        let data: Vec<(&Tensor, usize)> = corpus
            .split(Split::Train)
            .filter(|c| scores.get(&c.id).is_some_and(|&s| s >= tau_g))
            .map(|c| (&c.spectrogram, c.label))
            .collect();
        let mut store = ParamStore::new();
        tagger.train(&mut store, &data, &self.cfg.tagger, &mut self.rng(10))?;
        self.make_dir(EVALUATE)?;
        save_checkpoint(&store, &path)?;
        Ok((tagger, store))
    }

    /// Midpoint between mean active and mean inactive frame energy on the
    /// training ground truth.
    fn onset_threshold(&self, corpus: &Corpus) -> f64 {
        let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
        for c in corpus.split(Split::Train) {
            for (e, &b) in frame_energy(&c.spectrogram, c.gt_mask.len()).iter().zip(&c.gt_mask) {
                if b == 1 {
                    on += e;
                    n_on += 1;
                } else {
                    off += e;
                    n_off += 1;
                }
            }
        }
        0.5 * (on / n_on.max(1) as f64 + off / n_off.max(1) as f64)
    }

    pub fn evaluate(&self) -> Result<MetricsReport> {
        let start = Instant::now();
        self.require(&[INFER, TRAIN_EMBEDDER, FILTER_CONTINUOUS])?;
        let corpus = self.corpus()?;
        let generated = load_checkpoint(&self.generated_path())?;
        let (emb, estore, cal) = self.load_embedder()?;
        let (tagger, tstore) = self.tagger(&corpus, self.cfg.filter.tau_g)?;
        let threshold = self.onset_threshold(&corpus);
        let tol = self.cfg.eval.onset_tolerance;
        let detector = self.detector(&emb, &estore, cal);

        let (mut real_emb, mut gen_emb, mut real_post, mut gen_post) = (vec![], vec![], vec![], vec![]);
        let (mut pairs, mut real_pairs) = (vec![], vec![]);
        let (mut f1, mut det_acc) = (0.0, 0.0);
        let ids: Vec<&str> = generated.names().collect();
        if ids.is_empty() {
            return Err(Error::Contract("no generated clips to evaluate".into()));
        }
        for id in &ids {
            let clip = corpus.clip(id)?;
            let gen = generated.tensor(id);
            real_emb.push(tagger.embedding(&tstore, &clip.spectrogram)?);
            gen_emb.push(tagger.embedding(&tstore, gen)?);
            real_post.push(ClassPosterior { clip_id: id.to_string(), probabilities: tagger.posterior(&tstore, &clip.spectrogram)? });
            gen_post.push(ClassPosterior { clip_id: id.to_string(), probabilities: tagger.posterior(&tstore, gen)? });
            let frames = emb.embed_frames(&estore, &clip.frames)?;
            let d = frames.shape()[1];
            let mut pooled = vec![0.0; d];
            for i in 0..frames.shape()[0] {
                pooled.iter_mut().zip(frames.row(i)).for_each(|(p, x)| *p += x);
            }
            pairs.push((pooled.clone(), emb.embed_audio(&estore, gen)?));
            real_pairs.push((pooled, emb.embed_audio(&estore, &clip.spectrogram)?));
            let pred = activity_from_spectrogram(gen, clip.gt_mask.len(), threshold);
            f1 += onset_f1(&clip.gt_mask, &pred, tol);
            det_acc += detector.detect(&clip.frames, clip.label)?.1.accuracy(&clip.gt_mask);
        }
        let n = ids.len() as f64;
        let fad = frechet_distance(&embedding_stats(&real_emb)?, &embedding_stats(&gen_emb)?)?;
        let row = |metric: &str, embedder: &str, value: f64| MetricRow {
            metric: metric.to_string(),
            embedder: embedder.to_string(),
            split: EVAL_SPLIT.to_string(),
            value,
            seed: self.cfg.seeds.sample_seed,
            config_hash: self.hash.clone(),
        };
        let mut report = MetricsReport::default();
        report.push(row("fad", TAGGER_EMBEDDER, fad))?;
        report.push(row("mkl", TAGGER_EMBEDDER, mean_kl(&real_post, &gen_post)?))?;
        report.push(row("clip_score", "joint-embedder", clip_score(&pairs)?))?;
        report.push(row("clip_score_real", "joint-embedder", clip_score(&real_pairs)?))?;
        report.push(row("onset_f1", "energy-threshold", f1 / n))?;
        report.push(row("detector_frame_accuracy", "joint-embedder", det_acc / n))?;
        let dir = self.make_dir(EVALUATE)?;
        let (json, csv) = (dir.join("report.json"), dir.join("report.csv"));
        report.write(&json, &csv)?;
        self.finish(EVALUATE, &[json, csv, self.tagger_path(), self.tagger_path().with_extension("bin")], start)?;
        Ok(report)
    }

    /// Per-clip time-detector probe over the test split.
    pub fn diagnose_detector(&self, csv: bool) -> Result<DiagnosticsReport> {
        let start = Instant::now();
        self.require(&[TRAIN_EMBEDDER])?;
        let corpus = self.corpus()?;
        let (emb, store, cal) = self.load_embedder()?;
        let detector = self.detector(&emb, &store, cal);
        let clips = corpus.split(Split::Test).map(|c| (c.id.clone(), c.label, c.frames.clone(), c.gt_mask.clone()));
        let report = DiagnosticsReport::build(&detector, clips, self.cfg.eval.probe_k)?;
        let dir = self.make_dir(DIAGNOSE_DETECTOR)?;
        let json = dir.join("report.json");
        report.write_json(&json)?;
        let mut artifacts = vec![json];
        if csv {
            let path = dir.join("trajectories.csv");
            report.write_csv(&path)?;
            artifacts.push(path);
        }
        self.finish(DIAGNOSE_DETECTOR, &artifacts, start)?;
        Ok(report)
    }

    pub fn all_stages(&self) -> Result<MetricsReport> {
        self.gen_corpus(None)?;
        self.filter_continuous()?;
        self.train_embedder()?;
        for stage in StageId::ALL {
            self.train_stage(stage)?;
        }
        self.diagnose_detector(false)?;
        self.infer()?;
        self.evaluate()
    }
}
