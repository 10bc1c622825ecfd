//! Sliding-window assembly and per-period prediction fusion.
//!
//! Sampled frames are grouped into windows of `n` frames that advance by `m`
//! new frames. The stream is also cut into prediction periods of `m` frames,
//! so each period is covered by up to `n / m` windows. A period is finalized
//! once the last window covering it has been classified: the probability
//! vectors of all contributing windows are averaged and the top class is
//! accepted when its mean reaches `theta`.
//!
//! ```text
//! sampled:  |p0 |p1 |p2 |p3 |p4 |p5 |      (n = 3m)
//! window 0: [-----------]
//! window 1:     [-----------]
//! window 2:         [-----------]
//! window 3:             [-----------]
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_CLASSES: [&str; 7] = [
    "drinking",
    "eating",
    "sitting",
    "standing",
    "walking",
    "lying",
    "talking on phone",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Average probabilities, threshold the top mean.
    #[default]
    Mean,
    /// Vote with each window's top class; the winning share must reach theta.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Frames per window.
    pub n: usize,
    /// Sampling rate, frames per second consumed.
    pub sr: f64,
    /// New frames per window step.
    pub m: usize,
    pub theta: f64,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub fusion: FusionMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            n: 16,
            sr: 5.0,
            m: 4,
            theta: 0.4,
            class_names: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            fusion: FusionMode::Mean,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return bad("window length n must be positive".into());
        }
        if self.m == 0 || self.m > self.n {
            return bad(format!("step m = {} must satisfy 0 < m <= n = {}", self.m, self.n));
        }
        if !self.n.is_multiple_of(self.m) {
            return bad(format!("step m = {} must divide n = {}", self.m, self.n));
        }
        if !(self.sr > 0.0 && self.sr.is_finite()) {
            return bad(format!("sampling rate {} must be positive", self.sr));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("threshold {} must lie in (0, 1)", self.theta));
        }
        if self.class_names.is_empty() {
            return bad("class_names is empty".into());
        }
        Ok(())
    }

    /// Windows covering each interior period, `n / m`.
    pub fn overlap(&self) -> usize {
        self.n / self.m
    }

    /// Sliding window duration `n / sr`, seconds.
    pub fn t_sw(&self) -> f64 {
        self.n as f64 / self.sr
    }

    /// Prediction period duration `m / sr`, seconds.
    pub fn t_pw(&self) -> f64 {
        self.m as f64 / self.sr
    }

    /// Delay between the end of a period and its decision, `(n - m) / sr`.
    pub fn decision_latency(&self) -> f64 {
        (self.n - self.m) as f64 / self.sr
    }

    pub fn period_span(&self, period: u64) -> (f64, f64) {
        let m = self.m as f64;
        (period as f64 * m / self.sr, (period + 1) as f64 * m / self.sr)
    }

    /// Time at which window `w` has received its last sampled frame.
    pub fn window_complete_at(&self, window: u64) -> f64 {
        (window as f64 * self.m as f64 + self.n as f64) / self.sr
    }
}

/// Normalized per-class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassProbabilities(Vec<f64>);

impl ClassProbabilities {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidProbabilities("empty vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProbabilities(format!("component {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidProbabilities(format!("sum {sum} is not 1")));
        }
        Ok(ClassProbabilities(values))
    }

    /// Rescales non-negative scores to sum to one.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidProbabilities(format!("component {v} is negative or not finite")));
        }
        let sum: f64 = values.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidProbabilities("all components are zero".into()));
        }
        Self::new(values.into_iter().map(|v| v / sum).collect())
    }

    pub fn uniform(classes: usize) -> Self {
        ClassProbabilities(vec![1.0 / classes as f64; classes])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Number of source frames between samples: `round(fps / sr)`.
pub fn sampling_stride(fps: f64, sr: f64) -> Result<u64> {
    if !(sr > 0.0) || !(fps >= sr) {
        return Err(Error::Config(format!("stream fps {fps} is below sampling rate {sr}")));
    }
    Ok((fps / sr).round() as u64)
}

/// Keeps every `round(fps / sr)`-th frame, starting with the first.
pub fn sample_frames<T>(frames: impl IntoIterator<Item = T>, fps: f64, sr: f64) -> Result<Vec<T>> {
    let stride = sampling_stride(fps, sr)? as usize;
    Ok(frames.into_iter().step_by(stride).collect())
}

/// Windows overlapping prediction period `period`.
pub fn windows_for_period(period: u64, cfg: &WindowConfig) -> RangeInclusive<u64> {
    let k = cfg.overlap() as u64;
    period.saturating_sub(k - 1)..=period
}

/// Prediction periods covered by window `window`.
pub fn periods_for_window(window: u64, cfg: &WindowConfig) -> RangeInclusive<u64> {
    window..=window + cfg.overlap() as u64 - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub mean: Vec<f64>,
    /// Winning class index, `None` when below threshold.
    pub decision: Option<usize>,
}

/// Elementwise mean of the contributions, thresholded at `theta`.
pub fn fuse(contributions: &[ClassProbabilities], theta: f64) -> Result<Fused> {
    let mean = mean_of(contributions)?;
    let best = argmax(&mean);
    let decision = (mean[best] >= theta).then_some(best);
    Ok(Fused { mean, decision })
}

/// Majority vote over each contribution's top class. The mean is reported
/// alongside for logging.
pub fn fuse_majority(contributions: &[ClassProbabilities], theta: f64) -> Result<Fused> {
    let mean = mean_of(contributions)?;
    let mut votes = vec![0usize; mean.len()];
    for c in contributions {
        votes[c.argmax()] += 1;
    }
    let mut best = 0;
    for (i, v) in votes.iter().enumerate() {
        if *v > votes[best] {
            best = i;
        }
    }
    let share = votes[best] as f64 / contributions.len() as f64;
    Ok(Fused {
        mean,
        decision: (share >= theta).then_some(best),
    })
}

fn mean_of(contributions: &[ClassProbabilities]) -> Result<Vec<f64>> {
    let first = contributions.first().ok_or(Error::NoData)?;
    let k = first.len();
    if contributions.iter().any(|c| c.len() != k) {
        return Err(Error::InvalidProbabilities("contributions differ in length".into()));
    }
    let mut sum = vec![0.0; k];
    for c in contributions {
        for (s, v) in sum.iter_mut().zip(c.values()) {
            *s += v;
        }
    }
    let n = contributions.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// A window of `n` consecutive sampled slots. `frames` is `None` when any
/// slot was missing, in which case the window is never classified.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledWindow<F> {
    pub index: u64,
    pub frames: Option<Vec<F>>,
}

/// Buffers sampled frames and emits windows as they complete.
#[derive(Debug, Clone)]
pub struct WindowAssembler<F> {
    n: usize,
    m: usize,
    buffer: VecDeque<Option<F>>,
    next_slot: u64,
}

impl<F: Clone> WindowAssembler<F> {
    pub fn new(cfg: &WindowConfig) -> Self {
        WindowAssembler {
            n: cfg.n,
            m: cfg.m,
            buffer: VecDeque::with_capacity(cfg.n),
            next_slot: 0,
        }
    }

    pub fn next_slot(&self) -> u64 {
        self.next_slot
    }

    /// Pushes sampled slot `slot`. Skipped slots count as missing frames.
    /// Slots at or before the last one pushed are ignored.
    pub fn push(&mut self, slot: u64, frame: Option<F>) -> Vec<AssembledWindow<F>> {
        let mut out = Vec::new();
        if slot < self.next_slot {
            log::warn!("ignoring out-of-order slot {slot}");
            return out;
        }
        while self.next_slot < slot {
            self.advance(None, &mut out);
        }
        self.advance(frame, &mut out);
        out
    }

    fn advance(&mut self, frame: Option<F>, out: &mut Vec<AssembledWindow<F>>) {
        if self.buffer.len() == self.n {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        let end = self.next_slot + 1;
        self.next_slot = end;
        let (n, m) = (self.n as u64, self.m as u64);
        if end >= n && (end - n).is_multiple_of(m) {
            let frames = self.buffer.iter().cloned().collect::<Option<Vec<F>>>();
            out.push(AssembledWindow {
                index: (end - n) / m,
                frames,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Pending,
    /// Finalized below threshold.
    NoAction,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPeriod {
    pub period_index: u64,
    pub t_start: f64,
    pub t_end: f64,
    /// Ordered by window index.
    pub contributions: Vec<ClassProbabilities>,
    pub mean_probs: Vec<f64>,
    pub decision: Decision,
    /// Sampled-stream time at which the period was finalized.
    pub finalized_at: f64,
}

impl PredictionPeriod {
    pub fn record(&self, cfg: &WindowConfig) -> DecisionRecord {
        DecisionRecord {
            period: self.period_index,
            t_start: self.t_start,
            t_end: self.t_end,
            decision: match self.decision {
                Decision::Class(c) => Some(cfg.class_names[c].clone()),
                _ => None,
            },
            mean_probs: self.mean_probs.clone(),
            num_contributions: self.contributions.len(),
        }
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub period: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub decision: Option<String>,
    pub mean_probs: Vec<f64>,
    pub num_contributions: usize,
}

/// Accumulates window results per period and finalizes periods in order.
///
/// Results may arrive out of order; period `j` is finalized once every
/// window overlapping it has been resolved, either with probabilities or as
/// a failure. Periods that end up with no contribution are not emitted.
#[derive(Debug, Clone)]
pub struct PeriodFuser {
    cfg: WindowConfig,
    pending: BTreeMap<u64, BTreeMap<u64, ClassProbabilities>>,
    resolved: BTreeSet<u64>,
    next_period: u64,
}

impl PeriodFuser {
    pub fn new(cfg: WindowConfig) -> Self {
        PeriodFuser {
            cfg,
            pending: BTreeMap::new(),
            resolved: BTreeSet::new(),
            next_period: 0,
        }
    }

    pub fn config(&self) -> &WindowConfig {
        &self.cfg
    }

    /// Contributions gathered so far for a period that is not finalized yet.
    pub fn pending_contributions(&self, period: u64) -> Option<usize> {
        (period >= self.next_period).then(|| self.pending.get(&period).map_or(0, BTreeMap::len))
    }

    pub fn resolve(&mut self, window: u64, result: Option<ClassProbabilities>) -> Vec<PredictionPeriod> {
        if window < self.next_period || !self.resolved.insert(window) {
            log::warn!("window {window} resolved twice or too late, ignoring");
            return Vec::new();
        }
        match result {
            Some(probs) => {
                for period in periods_for_window(window, &self.cfg) {
                    self.pending.entry(period).or_default().insert(window, probs.clone());
                }
            }
            None => log::debug!("window {window} has no result; its periods lose one contribution"),
        }

        let mut out = Vec::new();
        loop {
            let j = self.next_period;
            let range = windows_for_period(j, &self.cfg);
            if !range.clone().all(|w| self.resolved.contains(&w)) {
                break;
            }
            let at = self.cfg.window_complete_at(j);
            if let Some(p) = self.finalize(j, at) {
                out.push(p);
            }
            self.next_period += 1;
            let keep_from = *windows_for_period(self.next_period, &self.cfg).start();
            self.resolved = self.resolved.split_off(&keep_from);
        }
        out
    }

    /// Finalizes every remaining period that has at least one contribution.
    pub fn flush(&mut self, at: f64) -> Vec<PredictionPeriod> {
        let periods: Vec<u64> = self.pending.keys().copied().collect();
        let out: Vec<PredictionPeriod> = periods.into_iter().filter_map(|j| self.finalize(j, at)).collect();
        self.pending.clear();
        self.resolved.clear();
        if let Some(last) = out.last() {
            self.next_period = last.period_index + 1;
        }
        out
    }

    fn finalize(&mut self, period: u64, at: f64) -> Option<PredictionPeriod> {
        let contributions: Vec<ClassProbabilities> = self.pending.remove(&period)?.into_values().collect();
        if contributions.is_empty() {
            return None;
        }
        if contributions.len() < self.cfg.overlap() {
            log::debug!(
                "period {period} finalized with {} of {} contributions",
                contributions.len(),
                self.cfg.overlap()
            );
        }
        let fused = match self.cfg.fusion {
            FusionMode::Mean => fuse(&contributions, self.cfg.theta),
            FusionMode::Majority => fuse_majority(&contributions, self.cfg.theta),
        }
        .ok()?;
        let (t_start, t_end) = self.cfg.period_span(period);
        Some(PredictionPeriod {
            period_index: period,
            t_start,
            t_end,
            contributions,
            mean_probs: fused.mean,
            decision: fused.decision.map_or(Decision::NoAction, Decision::Class),
            finalized_at: at,
        })
    }
}

/// Runs assembly, classification and fusion over a sampled stream in one pass.
///
/// `frames` yields `(slot, frame)` in increasing slot order; `classify` is
/// called once per complete window and returns `None` on failure.
pub fn schedule<F, I, C>(frames: I, cfg: &WindowConfig, mut classify: C) -> Vec<PredictionPeriod>
where
    F: Clone,
    I: IntoIterator<Item = (u64, Option<F>)>,
    C: FnMut(u64, &[F]) -> Option<ClassProbabilities>,
{
    let mut assembler = WindowAssembler::new(cfg);
    let mut fuser = PeriodFuser::new(cfg.clone());
    let mut out = Vec::new();
    for (slot, frame) in frames {
        for window in assembler.push(slot, frame) {
            let result = window.frames.as_deref().and_then(|f| classify(window.index, f));
            out.extend(fuser.resolve(window.index, result));
        }
    }
    let end = assembler.next_slot() as f64 / cfg.sr;
    out.extend(fuser.flush(end));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, m: usize, sr: f64) -> WindowConfig {
        WindowConfig {
            n,
            m,
            sr,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            ..Default::default()
        }
    }

    fn probs(v: &[f64]) -> ClassProbabilities {
        ClassProbabilities::new(v.to_vec()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(WindowConfig::default().validate().is_ok());
        assert!(cfg(12, 5, 4.0).validate().is_err());
        assert!(cfg(12, 0, 4.0).validate().is_err());
        assert!(cfg(12, 24, 4.0).validate().is_err());
        assert!(cfg(12, 4, 0.0).validate().is_err());
        let mut c = cfg(12, 4, 4.0);
        c.theta = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn timing_of_three_way_overlap() {
        let c = cfg(12, 4, 4.0);
        assert_eq!(c.t_sw(), 3.0);
        assert_eq!(c.t_pw(), 1.0);
        assert_eq!(c.overlap(), 3);
        assert_eq!(c.decision_latency(), 2.0);
    }

    #[test]
    fn stride_rules() {
        assert_eq!(sampling_stride(30.0, 5.0).unwrap(), 6);
        assert_eq!(sampling_stride(29.0, 5.0).unwrap(), 6);
        assert_eq!(sampling_stride(5.0, 5.0).unwrap(), 1);
        assert!(sampling_stride(4.0, 5.0).is_err());
        let picked = sample_frames(0..20, 30.0, 5.0).unwrap();
        assert_eq!(picked, vec![0, 6, 12, 18]);
        assert_eq!(sample_frames(0..4, 5.0, 5.0).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn window_period_ranges() {
        let c = cfg(12, 4, 4.0);
        // third period (0-based 2) draws from windows 0..=2, fourth from 1..=3
        assert_eq!(windows_for_period(2, &c), 0..=2);
        assert_eq!(windows_for_period(3, &c), 1..=3);
        assert_eq!(windows_for_period(0, &c), 0..=0);
        assert_eq!(periods_for_window(2, &c), 2..=4);
        let no_overlap = cfg(4, 4, 4.0);
        for j in 0..10 {
            assert_eq!(windows_for_period(j, &no_overlap), j..=j);
        }
    }

    #[test]
    fn fuse_examples() {
        let f = fuse(&[probs(&[0.6, 0.4]), probs(&[0.8, 0.2]), probs(&[0.7, 0.3])], 0.4).unwrap();
        assert_eq!(f.decision, Some(0));
        assert!((f.mean[0] - 0.7).abs() < 1e-12 && (f.mean[1] - 0.3).abs() < 1e-12);

        let f = fuse(&[probs(&[0.2, 0.8])], 0.4).unwrap();
        assert_eq!(f.decision, Some(1));

        let f = fuse(&[probs(&[0.35, 0.33, 0.32])], 0.4).unwrap();
        assert_eq!(f.decision, None);

        assert!(matches!(fuse(&[], 0.4), Err(Error::NoData)));
        assert!(fuse(&[probs(&[1.0]), probs(&[0.5, 0.5])], 0.4).is_err());
        // tie goes to the lowest index
        assert_eq!(fuse(&[probs(&[0.5, 0.5])], 0.4).unwrap().decision, Some(0));
    }

    #[test]
    fn majority_differs_from_mean() {
        let c = [probs(&[0.51, 0.49]), probs(&[0.51, 0.49]), probs(&[0.0, 1.0])];
        assert_eq!(fuse(&c, 0.4).unwrap().decision, Some(1));
        assert_eq!(fuse_majority(&c, 0.4).unwrap().decision, Some(0));
        let split = [probs(&[1.0, 0.0, 0.0]), probs(&[0.0, 1.0, 0.0]), probs(&[0.0, 0.0, 1.0])];
        assert_eq!(fuse_majority(&split, 0.4).unwrap().decision, None);
    }

    #[test]
    fn probability_validation() {
        assert!(ClassProbabilities::new(vec![0.5, 0.6]).is_err());
        assert!(ClassProbabilities::new(vec![-0.1, 1.1]).is_err());
        assert!(ClassProbabilities::new(vec![]).is_err());
        let p = ClassProbabilities::normalize(vec![1.0, 3.0]).unwrap();
        assert_eq!(p.values(), &[0.25, 0.75]);
        assert!(ClassProbabilities::normalize(vec![1.0, -1.0]).is_err());
        assert!(ClassProbabilities::normalize(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn assembler_emits_on_completion() {
        let c = cfg(4, 2, 1.0);
        let mut a = WindowAssembler::new(&c);
        let mut got = Vec::new();
        for s in 0..8u64 {
            got.extend(a.push(s, Some(s)));
        }
        let idx: Vec<_> = got.iter().map(|w| w.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(got[1].frames, Some(vec![2, 3, 4, 5]));

        // a gap poisons every window that spans it
        let mut a = WindowAssembler::new(&c);
        let mut got = Vec::new();
        for s in [0u64, 1, 2, 4, 5, 6, 7] {
            got.extend(a.push(s, Some(s)));
        }
        let formed: Vec<_> = got.iter().map(|w| (w.index, w.frames.is_some())).collect();
        assert_eq!(formed, vec![(0, false), (1, false), (2, true)]);
    }

    #[test]
    fn constant_input_decides_constant_class() {
        let c = cfg(12, 4, 4.0);
        let out = schedule((0..60u64).map(|s| (s, Some(()))), &c, |_, _| Some(probs(&[0.0, 0.0, 1.0])));
        assert!(!out.is_empty());
        assert!(out.iter().all(|p| p.decision == Decision::Class(2)));
    }

    #[test]
    fn exactly_one_window() {
        let c = cfg(12, 4, 4.0);
        let out = schedule((0..12u64).map(|s| (s, Some(()))), &c, |_, _| Some(probs(&[1.0, 0.0, 0.0])));
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|p| p.contributions.len() == 1));
        assert_eq!(out.iter().map(|p| p.period_index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn out_of_order_results_are_reordered() {
        let c = cfg(12, 4, 4.0);
        let mut fuser = PeriodFuser::new(c.clone());
        let p = |i: usize| {
            let mut v = vec![0.0; 3];
            v[i % 3] = 1.0;
            probs(&v)
        };
        assert!(fuser.resolve(1, Some(p(1))).is_empty());
        assert!(fuser.resolve(2, Some(p(2))).is_empty());
        assert_eq!(fuser.pending_contributions(2), Some(2));
        let out = fuser.resolve(0, Some(p(0)));
        assert_eq!(out.iter().map(|p| p.period_index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(out[2].contributions, vec![p(0), p(1), p(2)]);
        assert_eq!(fuser.pending_contributions(1), None);
        // duplicate and stale resolutions are ignored
        assert!(fuser.resolve(2, Some(p(0))).is_empty());
        assert!(fuser.resolve(0, Some(p(0))).is_empty());
    }

    #[test]
    fn failed_windows_reduce_contributions() {
        let c = cfg(12, 4, 4.0);
        let out = schedule((0..24u64).map(|s| (s, Some(()))), &c, |w, _| {
            (w != 1).then(|| probs(&[0.0, 1.0, 0.0]))
        });
        let counts: Vec<_> = out.iter().map(|p| (p.period_index, p.contributions.len())).collect();
        // windows 0..=3, window 1 failed
        assert_eq!(counts, vec![(0, 1), (1, 1), (2, 2), (3, 2), (4, 2), (5, 1)]);
    }

    #[test]
    fn latency_on_synthetic_timestamps() {
        let c = cfg(12, 4, 4.0);
        let out = schedule((0..40u64).map(|s| (s, Some(()))), &c, |_, _| Some(probs(&[1.0, 0.0, 0.0])));
        for p in out.iter().filter(|p| p.contributions.len() == 3) {
            assert!((p.finalized_at - p.t_end - c.decision_latency()).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn fuse_is_permutation_invariant(raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..8), seed in any::<u64>()) {
            let contributions: Vec<_> = raw.into_iter().map(|v| ClassProbabilities::normalize(v).unwrap()).collect();
            let mut shuffled = contributions.clone();
            let len = shuffled.len();
            shuffled.rotate_left((seed as usize) % len);
            shuffled.reverse();
            let a = fuse(&contributions, 0.3).unwrap();
            let b = fuse(&shuffled, 0.3).unwrap();
            prop_assert_eq!(a.decision, b.decision);
            for (x, y) in a.mean.iter().zip(&b.mean) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.mean.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn every_slot_has_one_period(k in 1usize..5, m in 1usize..5, slots in 1u64..100) {
            let c = cfg(k * m, m, 1.0);
            for s in 0..slots {
                let period = s / m as u64;
                // windows containing slot s: w*m <= s < w*m + n
                let windows: Vec<u64> = (0..=s / m as u64).filter(|w| w * (m as u64) + (c.n as u64) > s).collect();
                prop_assert_eq!(windows.len(), (period as usize + 1).min(k));
                let range = windows_for_period(period, &c);
                prop_assert_eq!(windows.first().copied(), Some(*range.start()));
                prop_assert_eq!(windows.last().copied(), Some(*range.end()));
            }
        }
    }
}
