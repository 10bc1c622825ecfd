//! Single-user 3D tracking.
//!
//! The user is bound to a skeleton by identity events (face recognition hits)
//! and followed between events by nearest-skeleton matching in the camera
//! frame. Unmatched frames are tolerated for a while before the track is
//! declared lost and the search falls back to identity events.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Joint, Skeleton3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub user_id: String,
    /// Maximum torso displacement between frames for a geometric match, meters.
    #[serde(default = "default_diameter")]
    pub diameter: f64,
    /// LOST fires once the untracked counter exceeds this value.
    #[serde(default = "default_tolerance")]
    pub tolerance: u32,
}

fn default_diameter() -> f64 {
    1.0
}

fn default_tolerance() -> u32 {
    5
}

impl TrackerConfig {
    pub fn new(user_id: impl Into<String>) -> Self {
        TrackerConfig {
            user_id: user_id.into(),
            diameter: default_diameter(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackStatus {
    Searching,
    Known,
    Unknown,
    Lost,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Searching => "SEARCHING",
            TrackStatus::Known => "KNOWN",
            TrackStatus::Unknown => "UNKNOWN",
            TrackStatus::Lost => "LOST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEvent {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    pub person_index: usize,
    pub person_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub status: TrackStatus,
    /// Last adopted user skeleton; present while KNOWN or UNKNOWN.
    pub user_skeleton: Option<Skeleton3D>,
    pub times_untracked: u32,
    pub user_id: Option<String>,
}

impl Default for TrackState {
    fn default() -> Self {
        TrackState {
            status: TrackStatus::Searching,
            user_skeleton: None,
            times_untracked: 0,
            user_id: None,
        }
    }
}

impl TrackState {
    /// Person index of the user in `frame_index`, if the user was matched in that frame.
    pub fn matched_person(&self, frame_index: u64) -> Option<usize> {
        match (&self.status, &self.user_skeleton) {
            (TrackStatus::Known, Some(sk)) if sk.frame_index == frame_index => Some(sk.person_index),
            _ => None,
        }
    }
}

/// Torso-to-torso distance when both torsos are valid, otherwise the distance
/// between centroids of the keypoints valid in both skeletons. `None` when the
/// skeletons share no valid keypoint.
pub fn skeleton_distance(a: &Skeleton3D, b: &Skeleton3D) -> Option<f64> {
    if let (Some(ta), Some(tb)) = (a.get(Joint::Torso), b.get(Joint::Torso)) {
        return Some(ta.distance(&tb));
    }
    let mut n = 0usize;
    let (mut ca, mut cb) = ([0.0f64; 3], [0.0f64; 3]);
    for (pa, pb) in a.keypoints.iter().zip(&b.keypoints) {
        if let (Some(pa), Some(pb)) = (pa, pb) {
            n += 1;
            ca[0] += pa.x;
            ca[1] += pa.y;
            ca[2] += pa.z;
            cb[0] += pb.x;
            cb[1] += pb.y;
            cb[2] += pb.z;
        }
    }
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let d2: f64 = ca.iter().zip(&cb).map(|(x, y)| (x / n - y / n).powi(2)).sum();
    Some(d2.sqrt())
}

/// One tracking transition.
pub fn track_step(
    state: &TrackState,
    skeletons: &[Skeleton3D],
    events: &[IdentityEvent],
    cfg: &TrackerConfig,
) -> TrackState {
    let identified = events
        .iter()
        .filter(|e| e.person_id == cfg.user_id)
        .filter(|e| {
            let exists = e.person_index < skeletons.len();
            if !exists {
                log::warn!(
                    "frame {}: identity event for person {} but only {} skeletons",
                    e.frame_index,
                    e.person_index,
                    skeletons.len()
                );
            }
            exists
        })
        .map(|e| e.person_index)
        .min();
    if let Some(idx) = identified {
        return TrackState {
            status: TrackStatus::Known,
            user_skeleton: Some(skeletons[idx].clone()),
            times_untracked: 0,
            user_id: Some(cfg.user_id.clone()),
        };
    }

    match state.status {
        TrackStatus::Searching | TrackStatus::Lost => state.clone(),
        TrackStatus::Known | TrackStatus::Unknown => {
            let Some(user) = state.user_skeleton.as_ref() else {
                // unreachable while the state invariants hold
                return TrackState {
                    status: TrackStatus::Lost,
                    ..state.clone()
                };
            };
            let mut best: Option<(f64, usize)> = None;
            for (i, sk) in skeletons.iter().enumerate() {
                let d = skeleton_distance(sk, user).unwrap_or(f64::INFINITY);
                if best.map_or(d < f64::INFINITY, |(min, _)| d < min) {
                    best = Some((d, i));
                }
            }
            match best {
                Some((d, i)) if d <= cfg.diameter => TrackState {
                    status: TrackStatus::Known,
                    user_skeleton: Some(skeletons[i].clone()),
                    times_untracked: 0,
                    user_id: state.user_id.clone(),
                },
                _ if state.times_untracked > cfg.tolerance => TrackState {
                    status: TrackStatus::Lost,
                    user_skeleton: None,
                    times_untracked: state.times_untracked,
                    user_id: state.user_id.clone(),
                },
                _ => TrackState {
                    status: TrackStatus::Unknown,
                    user_skeleton: state.user_skeleton.clone(),
                    times_untracked: state.times_untracked + 1,
                    user_id: state.user_id.clone(),
                },
            }
        }
    }
}

/// Skeletons and identity events observed in one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackFrame {
    pub frame_index: u64,
    pub skeletons: Vec<Skeleton3D>,
    pub events: Vec<IdentityEvent>,
}

/// Stateful wrapper folding [`track_step`] over frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    state: TrackState,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Tracker {
            cfg,
            state: TrackState::default(),
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrackState {
        &self.state
    }

    pub fn step(&mut self, skeletons: &[Skeleton3D], events: &[IdentityEvent]) -> &TrackState {
        self.state = track_step(&self.state, skeletons, events, &self.cfg);
        &self.state
    }
}

/// Folds the tracker over `frames` in order, yielding the post-step state of each.
pub fn tick_track<I>(frames: I, cfg: &TrackerConfig) -> impl Iterator<Item = (u64, TrackState)>
where
    I: IntoIterator<Item = TrackFrame>,
{
    let mut tracker = Tracker::new(cfg.clone());
    frames.into_iter().map(move |f| {
        let state = tracker.step(&f.skeletons, &f.events).clone();
        (f.frame_index, state)
    })
}

pub fn read_identity_events<R: BufRead>(reader: R) -> Result<Vec<IdentityEvent>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Stream(format!("reading identity events: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: IdentityEvent = serde_json::from_str(&line)
            .map_err(|e| Error::Stream(format!("identity events line {}: {e}", lineno + 1)))?;
        out.push(event);
    }
    Ok(out)
}
