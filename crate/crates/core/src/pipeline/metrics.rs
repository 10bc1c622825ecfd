use std::collections::BTreeMap;
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Perceive,
    Track,
    Crop,
    Window,
    Classify,
    Fuse,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Perceive,
        Stage::Track,
        Stage::Crop,
        Stage::Window,
        Stage::Classify,
        Stage::Fuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Perceive => "perceive",
            Stage::Track => "track",
            Stage::Crop => "crop",
            Stage::Window => "window",
            Stage::Classify => "classify",
            Stage::Fuse => "fuse",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Sample {
    Latency(Stage, Duration),
    FrameIn,
    FrameOut,
    Drop,
    ClassifierCall { failed: bool },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return LatencyStats::default();
        }
        ms.sort_by(f64::total_cmp);
        let rank = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        LatencyStats {
            count: ms.len(),
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            max_ms: *ms.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    /// Latency per processed message. The classify stage records one sample per window.
    pub stages: BTreeMap<String, LatencyStats>,
    pub frames_in: u64,
    pub frames_out: u64,
    pub drops: u64,
    pub classifier_calls: u64,
    pub classifier_failures: u64,
    pub wall_time_s: f64,
    /// Frames leaving the pipeline per wall-clock second.
    pub fps: f64,
}

#[derive(Default)]
struct Accumulator {
    latencies: BTreeMap<Stage, Vec<f64>>,
    metrics: StageMetrics,
}

impl Accumulator {
    fn add(&mut self, s: Sample) {
        match s {
            Sample::Latency(stage, d) => self.latencies.entry(stage).or_default().push(d.as_secs_f64() * 1e3),
            Sample::FrameIn => self.metrics.frames_in += 1,
            Sample::FrameOut => self.metrics.frames_out += 1,
            Sample::Drop => self.metrics.drops += 1,
            Sample::ClassifierCall { failed } => {
                self.metrics.classifier_calls += 1;
                self.metrics.classifier_failures += failed as u64;
            }
        }
    }

    fn finish(mut self, wall: Duration) -> StageMetrics {
        for (stage, samples) in self.latencies {
            self.metrics
                .stages
                .insert(stage.name().to_string(), LatencyStats::from_samples(samples));
        }
        self.metrics.wall_time_s = wall.as_secs_f64();
        self.metrics.fps = if self.metrics.wall_time_s > 0.0 {
            self.metrics.frames_out as f64 / self.metrics.wall_time_s
        } else {
            0.0
        };
        self.metrics
    }
}

/// Handle given to stages for reporting samples.
#[derive(Clone)]
pub struct MetricsTx(mpsc::Sender<Sample>);

impl MetricsTx {
    pub fn send(&self, s: Sample) {
        // the collector outlives every stage
        let _ = self.0.send(s);
    }

    pub fn latency(&self, stage: Stage, d: Duration) {
        self.send(Sample::Latency(stage, d));
    }
}

/// Dedicated thread aggregating samples from all stages.
pub struct Collector {
    handle: JoinHandle<Accumulator>,
}

impl Collector {
    pub fn spawn() -> (Collector, MetricsTx) {
        let (tx, rx) = mpsc::channel::<Sample>();
        let handle = std::thread::Builder::new()
            .name("metrics".into())
            .spawn(move || {
                let mut acc = Accumulator::default();
                for s in rx {
                    acc.add(s);
                }
                acc
            })
            .expect("spawning metrics collector");
        (Collector { handle }, MetricsTx(tx))
    }

    /// Waits for every `MetricsTx` to be dropped, then summarizes.
    pub fn finish(self, wall: Duration) -> StageMetrics {
        self.handle.join().expect("metrics collector panicked").finish(wall)
    }
}
