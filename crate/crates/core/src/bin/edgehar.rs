use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edgehar::eval::{self, DatasetManifest};
use edgehar::pipeline::{self, Event, PipelineConfig};
use edgehar::synth::{self, SynthSpec};
use edgehar::{Error, Result};

#[derive(Parser)]
#[command(name = "edgehar", version, about = "Streaming skeleton tracking and action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a stream through the pipeline and write the event log.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Pace ingestion at the stream's frame rate.
        #[arg(long)]
        real_time: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a stream and report per-stage latency and throughput.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        real_time: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Score predictions with the three-split protocol.
    Eval {
        /// Dataset manifest JSON. Omit to use the built-in seven-class fixture.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for report.json and per-split CSV confusion matrices.
        #[arg(long)]
        out: PathBuf,
        /// JSON object mapping video_id to a class name or null.
        #[arg(long, conflicts_with_all = ["decision_logs", "oracle"])]
        predictions: Option<PathBuf>,
        /// Directory of `<video_id>.jsonl` event logs from `run`.
        #[arg(long, conflicts_with = "oracle")]
        decision_logs: Option<PathBuf>,
        /// Use ground truth as the prediction for every video.
        #[arg(long)]
        oracle: bool,
    },
    /// Write a synthetic stream directory and a matching config.json.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        seconds: f64,
        #[arg(long, default_value_t = 15.0)]
        fps: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(path: &Path, real_time: bool) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    cfg.apply_env()?;
    cfg.real_time |= real_time;
    Ok(cfg)
}

fn predictions_from_logs(dir: &Path, manifest: &DatasetManifest) -> Result<HashMap<String, Option<String>>> {
    let mut out = HashMap::new();
    for entry in &manifest.entries {
        let path = dir.join(format!("{}.jsonl", entry.video_id));
        if !path.exists() {
            continue;
        }
        let file = File::open(&path).map_err(|e| Error::Stream(format!("opening {}: {e}", path.display())))?;
        let mut decisions = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::Stream(e.to_string()))?;
            if let Ok(Event::Decision(d)) = serde_json::from_str::<Event>(&line) {
                decisions.push(d.decision);
            }
        }
        out.insert(entry.video_id.clone(), eval::video_prediction(&decisions));
    }
    Ok(out)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, real_time, out } => {
            let cfg = load_config(&config, real_time)?;
            let file = File::create(&out).map_err(|e| Error::Config(format!("creating {}: {e}", out.display())))?;
            let report = pipeline::run(&cfg, &mut BufWriter::new(file))?;
            log::info!(
                "{} frames, {} decisions, {:.1} fps, {} drops",
                report.metrics.frames_out,
                report.decisions.len(),
                report.metrics.fps,
                report.metrics.drops
            );
        }
        Command::Bench {
            config,
            real_time,
            report,
        } => {
            let cfg = load_config(&config, real_time)?;
            let metrics = pipeline::bench(&cfg)?;
            synth::write_json(&report, &metrics)?;
        }
        Command::Eval {
            manifest,
            seed,
            out,
            predictions,
            decision_logs,
            oracle,
        } => {
            let manifest = match manifest {
                Some(p) => DatasetManifest::load(&p)?,
                None => eval::reference_manifest(),
            };
            let preds = if oracle {
                eval::oracle_predictions(&manifest)
            } else if let Some(p) = predictions {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("reading {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("parsing {}: {e}", p.display())))?
            } else if let Some(dir) = decision_logs {
                predictions_from_logs(&dir, &manifest)?
            } else {
                return Err(Error::Config(
                    "one of --predictions, --decision-logs or --oracle is required".into(),
                ));
            };
            let report = eval::run_eval(&manifest, seed, &preds)?;
            report.write(&out)?;
            println!("mean top1 {:.4}", report.mean_top1);
        }
        Command::Synth { out, seconds, fps, seed } => {
            let spec = SynthSpec {
                seconds,
                fps,
                seed,
                ..SynthSpec::default()
            };
            synth::generate(&out, &spec)?;
            synth::write_json(&out.join("config.json"), &spec.pipeline_config(Path::new(".")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
