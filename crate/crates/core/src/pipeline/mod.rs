//! Staged streaming runtime.
//!
//! ```text
//! ingest -> perceive -> track -> crop -> window -> classify -> fuse -> sink
//! ```
//!
//! In threaded mode every stage is a worker thread and stages talk only
//! through bounded FIFO queues. The ingest queue drops its oldest frame when
//! full in real-time mode; every other queue blocks. Sequential mode calls the
//! same stage code in a loop on the caller's thread.

pub mod config;
pub mod metrics;
pub mod queue;
pub mod stream;

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::classifier::{resize_crop, Classifier, InputSize, WindowTensor};
use crate::error::{Error, Result};
use crate::skeleton::{lift_to_3d, simplify, user_bbox, BoundingBox, ReducedSkeleton2D, Skeleton3D};
use crate::tracker::{IdentityEvent, TrackState, TrackStatus, Tracker};
use crate::windowing::{
    sampling_stride, AssembledWindow, ClassProbabilities, DecisionRecord, PeriodFuser, PredictionPeriod,
    WindowAssembler, WindowConfig,
};

pub use config::{ExecutionMode, PipelineConfig, QueueConfig, CLASSIFIER_ENV};
pub use metrics::{LatencyStats, Sample, Stage, StageMetrics};
pub use stream::{FrameBundle, StreamMeta, StreamReplay};

use metrics::{Collector, MetricsTx};

/// Per-frame tracking line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub frame: u64,
    pub t: f64,
    pub status: TrackStatus,
    pub times_untracked: u32,
    /// Skeleton matched to the user in this frame.
    pub person_index: Option<usize>,
}

/// A line of the event log: either a track update or a period decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Event {
    Decision(DecisionRecord),
    Track(TrackEvent),
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub metrics: StageMetrics,
    pub decisions: Vec<DecisionRecord>,
    pub track: Vec<TrackEvent>,
}

struct Perceived {
    index: u64,
    timestamp: f64,
    rgb: RgbImage,
    reduced: Vec<ReducedSkeleton2D>,
    skeletons: Vec<Skeleton3D>,
    events: Vec<IdentityEvent>,
}

struct Tracked {
    index: u64,
    timestamp: f64,
    rgb: RgbImage,
    reduced: Vec<ReducedSkeleton2D>,
    state: TrackState,
}

struct Cropped {
    index: u64,
    timestamp: f64,
    state: TrackState,
    sample: Option<(u64, Option<Arc<Vec<u8>>>)>,
}

struct Windowed {
    index: u64,
    timestamp: f64,
    state: TrackState,
    slot: Option<u64>,
    windows: Vec<(u64, Option<WindowTensor>)>,
}

struct Classified {
    index: u64,
    timestamp: f64,
    state: TrackState,
    slot: Option<u64>,
    results: Vec<(u64, Option<ClassProbabilities>)>,
}

// Flush is sent once per run, so the size gap does not matter.
#[allow(clippy::large_enum_variant)]
enum Fused {
    Frame {
        index: u64,
        timestamp: f64,
        state: TrackState,
        periods: Vec<PredictionPeriod>,
    },
    Flush(Vec<PredictionPeriod>),
}

trait Worker: Send + 'static {
    type In: Send + 'static;
    type Out: Send + 'static;
    const STAGE: Stage;

    fn process(&mut self, input: Self::In, metrics: &MetricsTx) -> Result<Self::Out>;

    /// Emitted once after the input is exhausted.
    fn finish(&mut self) -> Option<Self::Out> {
        None
    }

    /// Whether the runner records one latency sample per message.
    fn timed(&self) -> bool {
        true
    }
}

struct Perceive {
    intr: CameraIntrinsics,
}

impl Worker for Perceive {
    type In = FrameBundle;
    type Out = Perceived;
    const STAGE: Stage = Stage::Perceive;

    fn process(&mut self, f: FrameBundle, _: &MetricsTx) -> Result<Perceived> {
        let reduced: Vec<_> = f.people.iter().map(simplify).collect();
        let skeletons = reduced
            .iter()
            .enumerate()
            .map(|(i, sk)| lift_to_3d(sk, &f.depth, &self.intr, f.index, i))
            .collect();
        Ok(Perceived {
            index: f.index,
            timestamp: f.timestamp,
            rgb: f.rgb,
            reduced,
            skeletons,
            events: f.events,
        })
    }
}

struct Track {
    tracker: Tracker,
}

impl Worker for Track {
    type In = Perceived;
    type Out = Tracked;
    const STAGE: Stage = Stage::Track;

    fn process(&mut self, p: Perceived, _: &MetricsTx) -> Result<Tracked> {
        let state = self.tracker.step(&p.skeletons, &p.events).clone();
        Ok(Tracked {
            index: p.index,
            timestamp: p.timestamp,
            rgb: p.rgb,
            reduced: p.reduced,
            state,
        })
    }
}

struct Crop {
    stride: u64,
    input: InputSize,
    pad_frac: f64,
    last_bbox: Option<BoundingBox>,
}

impl Crop {
    /// The user's box this frame: fresh while KNOWN, the last one while
    /// UNKNOWN, none otherwise.
    fn user_box(&mut self, t: &Tracked) -> Option<BoundingBox> {
        match t.state.status {
            TrackStatus::Known => {
                let fresh = t
                    .state
                    .matched_person(t.index)
                    .and_then(|p| t.reduced.get(p))
                    .and_then(|sk| user_bbox(sk, t.rgb.width(), t.rgb.height(), self.pad_frac).ok());
                if fresh.is_some() {
                    self.last_bbox = fresh;
                }
                self.last_bbox
            }
            TrackStatus::Unknown => self.last_bbox,
            TrackStatus::Searching | TrackStatus::Lost => {
                self.last_bbox = None;
                None
            }
        }
    }
}

impl Worker for Crop {
    type In = Tracked;
    type Out = Cropped;
    const STAGE: Stage = Stage::Crop;

    fn process(&mut self, t: Tracked, _: &MetricsTx) -> Result<Cropped> {
        let bbox = self.user_box(&t);
        let sample = t.index.is_multiple_of(self.stride).then(|| {
            let crop = bbox
                .and_then(|b| resize_crop(&t.rgb, &b, self.input.h, self.input.w).ok())
                .map(Arc::new);
            (t.index / self.stride, crop)
        });
        Ok(Cropped {
            index: t.index,
            timestamp: t.timestamp,
            state: t.state,
            sample,
        })
    }
}

struct Window {
    assembler: WindowAssembler<Arc<Vec<u8>>>,
    input: InputSize,
}

impl Worker for Window {
    type In = Cropped;
    type Out = Windowed;
    const STAGE: Stage = Stage::Window;

    fn process(&mut self, c: Cropped, _: &MetricsTx) -> Result<Windowed> {
        let mut windows = Vec::new();
        let slot = c.sample.as_ref().map(|(s, _)| *s);
        if let Some((slot, crop)) = c.sample {
            for AssembledWindow { index, frames } in self.assembler.push(slot, crop) {
                let tensor = match frames {
                    Some(f) => Some(WindowTensor::from_frames(&f.iter().map(|a| a.as_slice()).collect::<Vec<_>>(), self.input.h, self.input.w)?),
                    None => None,
                };
                windows.push((index, tensor));
            }
        }
        Ok(Windowed {
            index: c.index,
            timestamp: c.timestamp,
            state: c.state,
            slot,
            windows,
        })
    }
}

struct Classify {
    classifier: Box<dyn Classifier>,
}

impl Worker for Classify {
    type In = Windowed;
    type Out = Classified;
    const STAGE: Stage = Stage::Classify;

    fn process(&mut self, w: Windowed, metrics: &MetricsTx) -> Result<Classified> {
        let mut results = Vec::with_capacity(w.windows.len());
        for (index, tensor) in w.windows {
            let Some(tensor) = tensor else {
                log::debug!("window {index} incomplete, not classified");
                results.push((index, None));
                continue;
            };
            let start = Instant::now();
            let outcome = self.classifier.classify(&tensor);
            metrics.latency(Stage::Classify, start.elapsed());
            metrics.send(Sample::ClassifierCall {
                failed: outcome.is_err(),
            });
            let probs = outcome
                .map_err(|e| log::warn!("window {index} failed: {e}"))
                .ok();
            results.push((index, probs));
        }
        Ok(Classified {
            index: w.index,
            timestamp: w.timestamp,
            state: w.state,
            slot: w.slot,
            results,
        })
    }

    fn timed(&self) -> bool {
        false
    }
}

struct Fuse {
    fuser: PeriodFuser,
    next_slot: u64,
}

impl Worker for Fuse {
    type In = Classified;
    type Out = Fused;
    const STAGE: Stage = Stage::Fuse;

    fn process(&mut self, c: Classified, _: &MetricsTx) -> Result<Fused> {
        if let Some(slot) = c.slot {
            self.next_slot = slot + 1;
        }
        let mut periods = Vec::new();
        for (window, probs) in c.results {
            periods.extend(self.fuser.resolve(window, probs));
        }
        Ok(Fused::Frame {
            index: c.index,
            timestamp: c.timestamp,
            state: c.state,
            periods,
        })
    }

    fn finish(&mut self) -> Option<Fused> {
        let end = self.next_slot as f64 / self.fuser.config().sr;
        Some(Fused::Flush(self.fuser.flush(end)))
    }
}

type ErrorSlot = Arc<Mutex<Option<Error>>>;

fn record_error(slot: &ErrorSlot, e: Error) {
    let mut guard = slot.lock().unwrap();
    if guard.is_none() {
        *guard = Some(e);
    }
}

fn spawn_worker<W: Worker>(
    mut worker: W,
    rx: queue::Receiver<W::In>,
    tx: queue::Sender<W::Out>,
    metrics: MetricsTx,
    errors: ErrorSlot,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name(W::STAGE.name().into())
        .spawn(move || {
            for input in rx {
                let start = Instant::now();
                let out = match worker.process(input, &metrics) {
                    Ok(out) => out,
                    Err(e) => {
                        record_error(&errors, e);
                        return;
                    }
                };
                if worker.timed() {
                    metrics.latency(W::STAGE, start.elapsed());
                }
                if tx.push(out).is_err() {
                    return;
                }
            }
            if let Some(out) = worker.finish() {
                let _ = tx.push(out);
            }
        })
        .expect("spawning stage worker")
}

struct Stages {
    perceive: Perceive,
    track: Track,
    crop: Crop,
    window: Window,
    classify: Classify,
    fuse: Fuse,
}

struct Sink<'a> {
    out: &'a mut dyn Write,
    window: WindowConfig,
    report: RunReport,
    metrics: MetricsTx,
}

impl Sink<'_> {
    fn write_event(&mut self, event: &Event) -> Result<()> {
        let line = serde_json::to_string(event).map_err(|e| Error::json("serializing event", e))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io("writing event log", e))
    }

    fn accept(&mut self, msg: Fused) -> Result<()> {
        let periods = match msg {
            Fused::Frame {
                index,
                timestamp,
                state,
                periods,
            } => {
                let track = TrackEvent {
                    frame: index,
                    t: timestamp,
                    status: state.status,
                    times_untracked: state.times_untracked,
                    person_index: state.matched_person(index),
                };
                self.write_event(&Event::Track(track.clone()))?;
                self.report.track.push(track);
                self.metrics.send(Sample::FrameOut);
                periods
            }
            Fused::Flush(periods) => periods,
        };
        for p in periods {
            let record = p.record(&self.window);
            self.write_event(&Event::Decision(record.clone()))?;
            self.report.decisions.push(record);
        }
        Ok(())
    }
}

fn build_stages(cfg: &PipelineConfig, replay: &StreamReplay) -> Result<Stages> {
    let stride = sampling_stride(replay.fps(), cfg.window.sr)?;
    let classifier = cfg.classifier.build(cfg.window.class_names.len())?;
    Ok(Stages {
        perceive: Perceive {
            intr: *replay.intrinsics(),
        },
        track: Track {
            tracker: Tracker::new(cfg.tracker.clone()),
        },
        crop: Crop {
            stride,
            input: cfg.classifier.input_size,
            pad_frac: cfg.pad_frac,
            last_bbox: None,
        },
        window: Window {
            assembler: WindowAssembler::new(&cfg.window),
            input: cfg.classifier.input_size,
        },
        classify: Classify { classifier },
        fuse: Fuse {
            fuser: PeriodFuser::new(cfg.window.clone()),
            next_slot: 0,
        },
    })
}

/// Sleeps until frame `index` is due when pacing at `fps`.
fn pace(start: Instant, index: u64, fps: f64) {
    let due = start + Duration::from_secs_f64(index as f64 / fps);
    let now = Instant::now();
    if due > now {
        std::thread::sleep(due - now);
    }
}

/// Runs the pipeline over the configured stream, writing the event log to `out`.
pub fn run(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<RunReport> {
    cfg.validate()?;
    let replay = StreamReplay::open(&cfg.stream_dir, cfg.intrinsics.as_deref())?;
    let stages = build_stages(cfg, &replay)?;
    let (collector, metrics) = Collector::spawn();
    let started = Instant::now();

    let mut sink = Sink {
        out,
        window: cfg.window.clone(),
        report: RunReport::default(),
        metrics: metrics.clone(),
    };
    let result = match cfg.mode {
        ExecutionMode::Sequential => run_sequential(cfg, &replay, stages, &mut sink, &metrics),
        ExecutionMode::Threaded => run_threaded(cfg, &replay, stages, &mut sink, &metrics),
    };
    sink.out.flush().map_err(|e| Error::io("flushing event log", e))?;
    let mut report = std::mem::take(&mut sink.report);
    drop(sink);
    drop(metrics);
    report.metrics = collector.finish(started.elapsed());
    result.map(|_| report)
}

fn run_sequential(
    cfg: &PipelineConfig,
    replay: &StreamReplay,
    mut s: Stages,
    sink: &mut Sink<'_>,
    m: &MetricsTx,
) -> Result<()> {
    fn step<W: Worker>(w: &mut W, input: W::In, m: &MetricsTx) -> Result<W::Out> {
        let start = Instant::now();
        let out = w.process(input, m)?;
        if w.timed() {
            m.latency(W::STAGE, start.elapsed());
        }
        Ok(out)
    }

    let started = Instant::now();
    for index in 0..replay.frame_count() {
        if cfg.real_time {
            pace(started, index, replay.fps());
        }
        let t0 = Instant::now();
        let bundle = replay.load_frame(index)?;
        m.latency(Stage::Ingest, t0.elapsed());
        m.send(Sample::FrameIn);
        let p = step(&mut s.perceive, bundle, m)?;
        let t = step(&mut s.track, p, m)?;
        let c = step(&mut s.crop, t, m)?;
        let w = step(&mut s.window, c, m)?;
        let k = step(&mut s.classify, w, m)?;
        let f = step(&mut s.fuse, k, m)?;
        sink.accept(f)?;
    }
    if let Some(f) = s.fuse.finish() {
        sink.accept(f)?;
    }
    Ok(())
}

fn run_threaded(
    cfg: &PipelineConfig,
    replay: &StreamReplay,
    s: Stages,
    sink: &mut Sink<'_>,
    m: &MetricsTx,
) -> Result<()> {
    let errors: ErrorSlot = Arc::default();
    let cap = cfg.queues.stage;
    let (ingest_tx, ingest_rx) = queue::bounded::<FrameBundle>(cfg.queues.ingest);
    let (perceive_tx, perceive_rx) = queue::bounded(cap);
    let (track_tx, track_rx) = queue::bounded(cap);
    let (crop_tx, crop_rx) = queue::bounded(cap);
    let (window_tx, window_rx) = queue::bounded(cap);
    let (classify_tx, classify_rx) = queue::bounded(cap);
    let (fuse_tx, fuse_rx) = queue::bounded(cap);

    let mut handles = vec![
        spawn_worker(s.perceive, ingest_rx, perceive_tx, m.clone(), errors.clone()),
        spawn_worker(s.track, perceive_rx, track_tx, m.clone(), errors.clone()),
        spawn_worker(s.crop, track_rx, crop_tx, m.clone(), errors.clone()),
        spawn_worker(s.window, crop_rx, window_tx, m.clone(), errors.clone()),
        spawn_worker(s.classify, window_rx, classify_tx, m.clone(), errors.clone()),
        spawn_worker(s.fuse, classify_rx, fuse_tx, m.clone(), errors.clone()),
    ];

    let ingest = {
        let replay = replay.clone();
        let m = m.clone();
        let errors = errors.clone();
        let real_time = cfg.real_time;
        std::thread::Builder::new()
            .name("ingest".into())
            .spawn(move || {
                let started = Instant::now();
                for index in 0..replay.frame_count() {
                    if real_time {
                        pace(started, index, replay.fps());
                    }
                    let t0 = Instant::now();
                    let bundle = match replay.load_frame(index) {
                        Ok(b) => b,
                        Err(e) => {
                            record_error(&errors, e);
                            return;
                        }
                    };
                    m.latency(Stage::Ingest, t0.elapsed());
                    m.send(Sample::FrameIn);
                    let pushed = if real_time {
                        ingest_tx.push_drop_oldest(bundle).map(|evicted| {
                            if let Some(old) = evicted {
                                log::debug!("ingest queue full, dropped frame {}", old.index);
                                m.send(Sample::Drop);
                            }
                        })
                    } else {
                        ingest_tx.push(bundle).map(|_| ())
                    };
                    if pushed.is_err() {
                        return;
                    }
                }
            })
            .expect("spawning ingest worker")
    };
    handles.push(ingest);

    let mut sink_error = None;
    for msg in fuse_rx {
        if let Err(e) = sink.accept(msg) {
            sink_error = Some(e);
            break;
        }
    }
    for h in handles {
        h.join().expect("stage worker panicked");
    }
    if let Some(e) = sink_error {
        return Err(e);
    }
    let first = errors.lock().unwrap().take();
    match first {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Runs the stream and returns only the metrics; the event log is discarded.
pub fn bench(cfg: &PipelineConfig) -> Result<StageMetrics> {
    run(cfg, &mut std::io::sink()).map(|r| r.metrics)
}
