//! C ABI over the geometry, tracking and fusion primitives.
//!
//! Every function returns an `EhStatus`. On failure a message is kept per
//! thread and can be read with `eh_last_error_message`. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use edgehar::camera::{self, CameraIntrinsics, Point3D};
use edgehar::skeleton::{Skeleton3D, REDUCED_LEN};
use edgehar::tracker::{IdentityEvent, TrackStatus, Tracker, TrackerConfig};
use edgehar::windowing::{self, ClassProbabilities, Decision, PeriodFuser, PredictionPeriod, WindowConfig};
use edgehar::Error;

/// Number of keypoints in a reduced skeleton.
pub const EH_NUM_JOINTS: usize = 15;
const _: () = assert!(EH_NUM_JOINTS == REDUCED_LEN);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDepth = 3,
    OutOfBounds = 4,
    BehindCamera = 5,
    InvalidIntrinsics = 6,
    InvalidProbabilities = 7,
    /// The caller's buffer is too small.
    BufferTooSmall = 8,
    /// Nothing to return, e.g. no finalized period is waiting.
    Empty = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhTrackStatus {
    Searching = 0,
    Known = 1,
    Unknown = 2,
    Lost = 3,
}

impl From<TrackStatus> for EhTrackStatus {
    fn from(s: TrackStatus) -> Self {
        match s {
            TrackStatus::Searching => EhTrackStatus::Searching,
            TrackStatus::Known => EhTrackStatus::Known,
            TrackStatus::Unknown => EhTrackStatus::Unknown,
            TrackStatus::Lost => EhTrackStatus::Lost,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    /// Meters per raw depth unit.
    pub depth_scale: f64,
    pub width: u32,
    pub height: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EhPoint3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Reduced 3D skeleton; `valid[j]` is non-zero when `points[j]` is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EhSkeleton3D {
    pub points: [EhPoint3; EH_NUM_JOINTS],
    pub valid: [u8; EH_NUM_JOINTS],
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EhIdentityEvent {
    pub person_index: usize,
    /// NUL-terminated UTF-8.
    pub person_id: *const c_char,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EhTrackState {
    pub status: EhTrackStatus,
    pub times_untracked: u32,
    /// Frame of the held user skeleton, or -1 when none is held.
    pub user_frame: i64,
    /// Person index of the held user skeleton, or -1.
    pub user_person: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhPeriod {
    pub period_index: u64,
    pub t_start: f64,
    pub t_end: f64,
    /// Winning class, or -1 when below threshold.
    pub decision: i32,
    pub num_contributions: u32,
    pub finalized_at: f64,
}

/// Opaque tracker handle.
pub struct EhTracker {
    tracker: Tracker,
    frame: u64,
}

/// Opaque period fuser handle.
pub struct EhFuser {
    fuser: PeriodFuser,
    ready: VecDeque<PredictionPeriod>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: EhStatus, msg: impl Into<String>) -> EhStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> EhStatus {
    match e {
        Error::InvalidDepth(_) => EhStatus::InvalidDepth,
        Error::OutOfBounds { .. } => EhStatus::OutOfBounds,
        Error::BehindCamera(_) => EhStatus::BehindCamera,
        Error::InvalidIntrinsics(_) => EhStatus::InvalidIntrinsics,
        Error::InvalidProbabilities(_) | Error::NoData => EhStatus::InvalidProbabilities,
        _ => EhStatus::InvalidArgument,
    }
}

fn from_error(e: Error) -> EhStatus {
    let status = status_of(&e);
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into `EhStatus::Panic`.
fn guard(f: impl FnOnce() -> EhStatus) -> EhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            fail(EhStatus::Panic, msg)
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(EhStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

fn intrinsics(i: &EhIntrinsics) -> Result<CameraIntrinsics, Error> {
    CameraIntrinsics::new(i.fx, i.fy, i.u0, i.v0, i.depth_scale, i.width, i.height)
}

fn to_skeleton(s: &EhSkeleton3D, frame: u64, index: usize) -> Skeleton3D {
    let mut keypoints = [None; REDUCED_LEN];
    for (j, kp) in keypoints.iter_mut().enumerate() {
        if s.valid[j] != 0 {
            let p = s.points[j];
            *kp = Some(Point3D::new(p.x, p.y, p.z));
        }
    }
    Skeleton3D {
        keypoints,
        frame_index: frame,
        person_index: index,
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn eh_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Pixel plus depth in meters to a camera-frame point.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn eh_backproject(
    intr: *const EhIntrinsics,
    u: f64,
    v: f64,
    z: f64,
    out: *mut EhPoint3,
) -> EhStatus {
    non_null!(intr, out);
    guard(|| {
        let result = intrinsics(&*intr).and_then(|k| camera::backproject(u, v, z, &k));
        match result {
            Ok(p) => {
                *out = EhPoint3 { x: p.x, y: p.y, z: p.z };
                EhStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Camera-frame point to pixel coordinates.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn eh_project(
    intr: *const EhIntrinsics,
    point: *const EhPoint3,
    out_u: *mut f64,
    out_v: *mut f64,
) -> EhStatus {
    non_null!(intr, point, out_u, out_v);
    guard(|| {
        let p = &*point;
        let result = intrinsics(&*intr).and_then(|k| camera::project(&Point3D::new(p.x, p.y, p.z), &k));
        match result {
            Ok((u, v)) => {
                *out_u = u;
                *out_v = v;
                EhStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Fuses `num_windows` row-major probability vectors of `num_classes` each.
/// Writes the mean into `out_mean` and the winning class, or -1 below
/// `theta`, into `out_decision`.
///
/// # Safety
/// `probs` must hold `num_windows * num_classes` values and `out_mean`
/// `num_classes`.
#[no_mangle]
pub unsafe extern "C" fn eh_fuse(
    probs: *const f64,
    num_windows: usize,
    num_classes: usize,
    theta: f64,
    out_mean: *mut f64,
    out_decision: *mut i32,
) -> EhStatus {
    non_null!(probs, out_mean, out_decision);
    guard(|| {
        if num_windows == 0 || num_classes == 0 {
            return fail(EhStatus::InvalidArgument, "need at least one window and one class");
        }
        let flat = std::slice::from_raw_parts(probs, num_windows * num_classes);
        let rows = flat
            .chunks(num_classes)
            .map(|r| ClassProbabilities::new(r.to_vec()))
            .collect::<Result<Vec<_>, _>>();
        let fused = match rows.and_then(|r| windowing::fuse(&r, theta)) {
            Ok(f) => f,
            Err(e) => return from_error(e),
        };
        ptr::copy_nonoverlapping(fused.mean.as_ptr(), out_mean, num_classes);
        *out_decision = fused.decision.map_or(-1, |c| c as i32);
        EhStatus::Ok
    })
}

/// Creates a tracker for `user_id`.
///
/// # Safety
/// `user_id` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn eh_tracker_new(
    user_id: *const c_char,
    diameter: f64,
    tolerance: u32,
    out: *mut *mut EhTracker,
) -> EhStatus {
    non_null!(user_id, out);
    guard(|| {
        let Ok(id) = CStr::from_ptr(user_id).to_str() else {
            return fail(EhStatus::InvalidArgument, "user_id is not UTF-8");
        };
        if !(diameter > 0.0) {
            return fail(EhStatus::InvalidArgument, format!("diameter {diameter} must be positive"));
        }
        let cfg = TrackerConfig {
            diameter,
            tolerance,
            ..TrackerConfig::new(id)
        };
        *out = Box::into_raw(Box::new(EhTracker {
            tracker: Tracker::new(cfg),
            frame: 0,
        }));
        EhStatus::Ok
    })
}

/// # Safety
/// `tracker` must come from `eh_tracker_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eh_tracker_free(tracker: *mut EhTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Advances the tracker by one frame.
///
/// # Safety
/// `skeletons` must hold `num_skeletons` entries and `events` `num_events`
/// (either may be null when its count is zero). `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn eh_tracker_step(
    tracker: *mut EhTracker,
    skeletons: *const EhSkeleton3D,
    num_skeletons: usize,
    events: *const EhIdentityEvent,
    num_events: usize,
    out: *mut EhTrackState,
) -> EhStatus {
    non_null!(tracker);
    if (skeletons.is_null() && num_skeletons > 0) || (events.is_null() && num_events > 0) {
        return fail(EhStatus::NullPointer, "array is null but its count is not zero");
    }
    guard(|| {
        let t = &mut *tracker;
        let frame = t.frame;
        let skels: Vec<Skeleton3D> = if num_skeletons == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(skeletons, num_skeletons)
                .iter()
                .enumerate()
                .map(|(i, s)| to_skeleton(s, frame, i))
                .collect()
        };
        let mut evs = Vec::with_capacity(num_events);
        if num_events > 0 {
            for e in std::slice::from_raw_parts(events, num_events) {
                if e.person_id.is_null() {
                    return fail(EhStatus::NullPointer, "event person_id is null");
                }
                let Ok(id) = CStr::from_ptr(e.person_id).to_str() else {
                    return fail(EhStatus::InvalidArgument, "event person_id is not UTF-8");
                };
                evs.push(IdentityEvent {
                    frame_index: frame,
                    person_index: e.person_index,
                    person_id: id.to_string(),
                });
            }
        }
        t.tracker.step(&skels, &evs);
        t.frame += 1;
        if !out.is_null() {
            *out = snapshot(t);
        }
        EhStatus::Ok
    })
}

fn snapshot(t: &EhTracker) -> EhTrackState {
    let s = t.tracker.state();
    let held = s.user_skeleton.as_ref();
    EhTrackState {
        status: s.status.into(),
        times_untracked: s.times_untracked,
        user_frame: held.map_or(-1, |k| k.frame_index as i64),
        user_person: held.map_or(-1, |k| k.person_index as i64),
    }
}

/// Current tracker state.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn eh_tracker_state(tracker: *const EhTracker, out: *mut EhTrackState) -> EhStatus {
    non_null!(tracker, out);
    *out = snapshot(&*tracker);
    EhStatus::Ok
}

/// Creates a period fuser. `n` frames per window, step `m` (must divide
/// `n`), sampling rate `sr`, threshold `theta`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn eh_fuser_new(
    n: u32,
    m: u32,
    sr: f64,
    theta: f64,
    num_classes: u32,
    out: *mut *mut EhFuser,
) -> EhStatus {
    non_null!(out);
    guard(|| {
        let cfg = WindowConfig {
            n: n as usize,
            m: m as usize,
            sr,
            theta,
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
            ..WindowConfig::default()
        };
        if let Err(e) = cfg.validate() {
            return from_error(e);
        }
        *out = Box::into_raw(Box::new(EhFuser {
            fuser: PeriodFuser::new(cfg),
            ready: VecDeque::new(),
        }));
        EhStatus::Ok
    })
}

/// # Safety
/// `fuser` must come from `eh_fuser_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eh_fuser_free(fuser: *mut EhFuser) {
    if !fuser.is_null() {
        drop(Box::from_raw(fuser));
    }
}

/// Records the result of window `window`. Pass a null `probs` to mark the
/// window as failed. Finalized periods are queued for `eh_fuser_poll`.
///
/// # Safety
/// `probs` must be null or hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn eh_fuser_resolve(fuser: *mut EhFuser, window: u64, probs: *const f64, len: usize) -> EhStatus {
    non_null!(fuser);
    guard(|| {
        let f = &mut *fuser;
        let result = if probs.is_null() {
            None
        } else {
            let classes = f.fuser.config().class_names.len();
            if len != classes {
                return fail(EhStatus::InvalidProbabilities, format!("got {len} values, expected {classes}"));
            }
            match ClassProbabilities::new(std::slice::from_raw_parts(probs, len).to_vec()) {
                Ok(p) => Some(p),
                Err(e) => return from_error(e),
            }
        };
        let done = f.fuser.resolve(window, result);
        f.ready.extend(done);
        EhStatus::Ok
    })
}

/// Finalizes every remaining period that has a contribution, stamping them
/// with `at` seconds.
///
/// # Safety
/// `fuser` must be valid.
#[no_mangle]
pub unsafe extern "C" fn eh_fuser_flush(fuser: *mut EhFuser, at: f64) -> EhStatus {
    non_null!(fuser);
    guard(|| {
        let f = &mut *fuser;
        let done = f.fuser.flush(at);
        f.ready.extend(done);
        EhStatus::Ok
    })
}

/// Pops the oldest finalized period. Its mean probabilities go to
/// `mean_out` when non-null, which must then hold `mean_cap >= num_classes`
/// values. Returns `Empty` when nothing is waiting.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn eh_fuser_poll(
    fuser: *mut EhFuser,
    out: *mut EhPeriod,
    mean_out: *mut f64,
    mean_cap: usize,
) -> EhStatus {
    non_null!(fuser, out);
    let f = &mut *fuser;
    let Some(p) = f.ready.front() else {
        return EhStatus::Empty;
    };
    if !mean_out.is_null() {
        if mean_cap < p.mean_probs.len() {
            return fail(
                EhStatus::BufferTooSmall,
                format!("mean buffer holds {mean_cap}, need {}", p.mean_probs.len()),
            );
        }
        ptr::copy_nonoverlapping(p.mean_probs.as_ptr(), mean_out, p.mean_probs.len());
    }
    *out = EhPeriod {
        period_index: p.period_index,
        t_start: p.t_start,
        t_end: p.t_end,
        decision: match p.decision {
            Decision::Class(c) => c as i32,
            _ => -1,
        },
        num_contributions: p.contributions.len() as u32,
        finalized_at: p.finalized_at,
    };
    f.ready.pop_front();
    EhStatus::Ok
}
