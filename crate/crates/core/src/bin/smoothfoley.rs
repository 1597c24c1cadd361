use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use smoothfoley::diffusion::StageId;
use smoothfoley::harness::{compare_report_files, ExperimentConfig, Pipeline, TemporalSource};
use smoothfoley::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "smoothfoley", version, about = "Staged desk-scale video-to-audio experiments")]
struct Cli {
    /// TOML experiment config; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set backbone.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory (beats SMOOTHFOLEY_OUT and the config file).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Frame-wise visual tokens, or one mean-pooled clip token.
    #[arg(long, global = true)]
    frame_wise: Option<OnOff>,

    /// Source of the activity plane fed to the temporal adapter at inference.
    #[arg(long, global = true)]
    temporal_condition: Option<TemporalSource>,

    /// Weight of the frame branch in parallel cross-attention.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Detector binarisation threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Grounding-score cut for the continuous filter.
    #[arg(long, global = true)]
    tau_g: Option<f64>,

    #[arg(long, global = true)]
    corpus_seed: Option<u64>,

    #[arg(long, global = true)]
    train_seed: Option<u64>,

    #[arg(long, global = true)]
    sample_seed: Option<u64>,

    /// Log verbosity (`-v` info, `-vv` debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the labelled corpus.
    GenCorpus {
        /// Newline-separated clip ids that form the test split.
        #[arg(long)]
        pick_list: Option<PathBuf>,
    },
    /// Keep grounded clips of the continuous labels.
    FilterContinuous,
    /// Fit the joint text/frame/audio embedder and its detector calibration.
    TrainEmbedder,
    /// Train the label-conditioned denoiser.
    TrainBackbone,
    /// Train the frame-wise cross-attention branch on a frozen backbone.
    TrainFrameAdapter,
    /// Train the zero-fused temporal adapter on ground-truth activity.
    TrainTemporalAdapter,
    /// Generate spectrograms for the continuous test clips.
    Infer,
    /// Score the generated clips and write the metric report.
    Evaluate,
    /// Per-clip time-detector probe.
    DiagnoseDetector {
        /// Also write plot-ready trajectories as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Run every stage in dependency order and print the report as CSV.
    AllStages,
    /// Align metric reports and print deltas against the first.
    CompareReports {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Write the table as CSV here as well.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the resolved config as TOML.
    ShowConfig,
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut out = self.overrides.clone();
        if let Ok(dir) = std::env::var("SMOOTHFOLEY_OUT") {
            out.push(format!("output_dir={}", toml_str(&dir)));
        }
        if let Some(d) = &self.output_dir {
            out.push(format!("output_dir={}", toml_str(&d.display().to_string())));
        }
        if let Some(f) = self.frame_wise {
            out.push(format!("ablation.frame_wise={}", toml_str(if matches!(f, OnOff::On) { "on" } else { "off" })));
        }
        if let Some(t) = self.temporal_condition {
            let name = match t {
                TemporalSource::GroundTruth => "ground_truth",
                TemporalSource::Predicted => "predicted",
                TemporalSource::None => "none",
            };
            out.push(format!("ablation.temporal_condition={}", toml_str(name)));
        }
        let floats = [("conditioning.lambda", self.lambda), ("conditioning.threshold", self.threshold), ("filter.tau_g", self.tau_g)];
        for (k, v) in floats {
            if let Some(v) = v {
                out.push(format!("{k}={v:?}"));
            }
        }
        let seeds = [("seeds.corpus_seed", self.corpus_seed), ("seeds.train_seed", self.train_seed), ("seeds.sample_seed", self.sample_seed)];
        for (k, v) in seeds {
            if let Some(v) = v {
                out.push(format!("{k}={v}"));
            }
        }
        out
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::CompareReports { reports, csv } = &cli.command {
        let cmp = compare_report_files(reports)?;
        print!("{}", cmp.to_text());
        if let Some(path) = csv {
            std::fs::write(path, cmp.to_csv()).map_err(|e| Error::io(path, e))?;
        }
        return Ok(());
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides())?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let p = Pipeline::new(cfg);
    match &cli.command {
        Command::GenCorpus { pick_list } => {
            let m = p.gen_corpus(pick_list.as_deref())?;
            println!("{} clips written to {}", m.clips.len(), p.stage_dir("gen-corpus").display());
        }
        Command::FilterContinuous => {
            let f = p.filter_continuous()?;
            println!("{} of {} clips kept", f.manifest.clips.len(), f.decisions.len());
        }
        Command::TrainEmbedder => {
            let curve = p.train_embedder()?;
            println!("final embedder loss {:.4}", curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainBackbone | Command::TrainFrameAdapter | Command::TrainTemporalAdapter => {
            let stage = match cli.command {
                Command::TrainBackbone => StageId::Backbone,
                Command::TrainFrameAdapter => StageId::FrameAdapter,
                _ => StageId::TemporalAdapter,
            };
            let curve = p.train_stage(stage)?;
            if let Some(last) = curve.last() {
                println!("{stage}: epoch {} mean loss {:.5}", last.epoch, last.mean_loss);
            }
        }
        Command::Infer => {
            let out = p.infer()?;
            println!("{} clips generated", out.len());
        }
        Command::Evaluate => print!("{}", p.evaluate()?.to_csv()),
        Command::DiagnoseDetector { csv } => {
            let r = p.diagnose_detector(*csv)?;
            println!("mean frame accuracy {:.4} over {} clips", r.mean_frame_accuracy, r.clips.len());
        }
        Command::AllStages => print!("{}", p.all_stages()?.to_csv()),
        Command::CompareReports { .. } | Command::ShowConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
