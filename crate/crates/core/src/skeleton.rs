//! Keypoint layouts and skeleton conditioning.
//!
//! Raw detections use the 25-keypoint BODY-25 order. They are reduced to a
//! 15-keypoint skeleton: the five face keypoints merge into a single `Head`,
//! a `Torso` keypoint is added at the hip midpoint, and the foot and mid-hip
//! extras are dropped. Reduced skeletons are lifted into the camera frame with
//! the depth image.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::camera::{backproject, sample_depth, CameraIntrinsics, DepthImage, Point3D};
use crate::error::{Error, Result};

pub const BODY25_LEN: usize = 25;
pub const REDUCED_LEN: usize = 15;

/// BODY-25 keypoint indices.
pub mod body25 {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const MID_HIP: usize = 8;
    pub const R_HIP: usize = 9;
    pub const R_KNEE: usize = 10;
    pub const R_ANKLE: usize = 11;
    pub const L_HIP: usize = 12;
    pub const L_KNEE: usize = 13;
    pub const L_ANKLE: usize = 14;
    pub const R_EYE: usize = 15;
    pub const L_EYE: usize = 16;
    pub const R_EAR: usize = 17;
    pub const L_EAR: usize = 18;

    pub const HEAD_GROUP: [usize; 5] = [NOSE, R_EYE, L_EYE, R_EAR, L_EAR];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Joint {
    Head = 0,
    Neck,
    Torso,
    RShoulder,
    RElbow,
    RWrist,
    LShoulder,
    LElbow,
    LWrist,
    RHip,
    RKnee,
    RAnkle,
    LHip,
    LKnee,
    LAnkle,
}

impl Joint {
    pub const ALL: [Joint; REDUCED_LEN] = [
        Joint::Head,
        Joint::Neck,
        Joint::Torso,
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::RHip,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::LHip,
        Joint::LKnee,
        Joint::LAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Head => "Head",
            Joint::Neck => "Neck",
            Joint::Torso => "Torso",
            Joint::RShoulder => "RShoulder",
            Joint::RElbow => "RElbow",
            Joint::RWrist => "RWrist",
            Joint::LShoulder => "LShoulder",
            Joint::LElbow => "LElbow",
            Joint::LWrist => "LWrist",
            Joint::RHip => "RHip",
            Joint::RKnee => "RKnee",
            Joint::RAnkle => "RAnkle",
            Joint::LHip => "LHip",
            Joint::LKnee => "LKnee",
            Joint::LAnkle => "LAnkle",
        }
    }

    /// BODY-25 index copied verbatim into this slot, if any.
    fn body25_source(self) -> Option<usize> {
        use body25::*;
        match self {
            Joint::Head | Joint::Torso => None,
            Joint::Neck => Some(NECK),
            Joint::RShoulder => Some(R_SHOULDER),
            Joint::RElbow => Some(R_ELBOW),
            Joint::RWrist => Some(R_WRIST),
            Joint::LShoulder => Some(L_SHOULDER),
            Joint::LElbow => Some(L_ELBOW),
            Joint::LWrist => Some(L_WRIST),
            Joint::RHip => Some(R_HIP),
            Joint::RKnee => Some(R_KNEE),
            Joint::RAnkle => Some(R_ANKLE),
            Joint::LHip => Some(L_HIP),
            Joint::LKnee => Some(L_KNEE),
            Joint::LAnkle => Some(L_ANKLE),
        }
    }
}

/// Bones of the reduced skeleton. The neck reaches the hips through `Torso`.
pub const EDGES: [(Joint, Joint); 14] = [
    (Joint::Head, Joint::Neck),
    (Joint::Neck, Joint::RShoulder),
    (Joint::RShoulder, Joint::RElbow),
    (Joint::RElbow, Joint::RWrist),
    (Joint::Neck, Joint::LShoulder),
    (Joint::LShoulder, Joint::LElbow),
    (Joint::LElbow, Joint::LWrist),
    (Joint::Neck, Joint::Torso),
    (Joint::Torso, Joint::RHip),
    (Joint::RHip, Joint::RKnee),
    (Joint::RKnee, Joint::RAnkle),
    (Joint::Torso, Joint::LHip),
    (Joint::LHip, Joint::LKnee),
    (Joint::LKnee, Joint::LAnkle),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

impl Keypoint2D {
    pub const fn new(u: f64, v: f64, confidence: f64) -> Self {
        Keypoint2D { u, v, confidence }
    }

    pub fn is_detected(&self) -> bool {
        self.confidence > 0.0
    }
}

/// One detected person in BODY-25 order. Confidence 0 marks an undetected keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSkeleton2D {
    keypoints: [Keypoint2D; BODY25_LEN],
}

impl RawSkeleton2D {
    pub fn new(keypoints: [Keypoint2D; BODY25_LEN]) -> Result<Self> {
        for (i, kp) in keypoints.iter().enumerate() {
            if !(0.0..=1.0).contains(&kp.confidence) {
                return Err(Error::Stream(format!(
                    "keypoint {i} confidence {} outside [0, 1]",
                    kp.confidence
                )));
            }
            if kp.is_detected() && !(kp.u.is_finite() && kp.v.is_finite()) {
                return Err(Error::Stream(format!("keypoint {i} has non-finite coordinates")));
            }
        }
        Ok(RawSkeleton2D { keypoints })
    }

    pub fn undetected() -> Self {
        RawSkeleton2D {
            keypoints: [Keypoint2D::new(0.0, 0.0, 0.0); BODY25_LEN],
        }
    }

    pub fn keypoints(&self) -> &[Keypoint2D; BODY25_LEN] {
        &self.keypoints
    }

    pub fn set(&mut self, index: usize, kp: Keypoint2D) {
        self.keypoints[index] = kp;
    }

    fn detected(&self, index: usize) -> Option<Keypoint2D> {
        Some(self.keypoints[index]).filter(Keypoint2D::is_detected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSkeleton2D {
    keypoints: [Option<Keypoint2D>; REDUCED_LEN],
}

impl ReducedSkeleton2D {
    pub fn from_slots(keypoints: [Option<Keypoint2D>; REDUCED_LEN]) -> Self {
        ReducedSkeleton2D { keypoints }
    }

    pub fn get(&self, joint: Joint) -> Option<Keypoint2D> {
        self.keypoints[joint.index()]
    }

    pub fn slots(&self) -> &[Option<Keypoint2D>; REDUCED_LEN] {
        &self.keypoints
    }

    pub fn valid(&self) -> impl Iterator<Item = (Joint, Keypoint2D)> + '_ {
        Joint::ALL
            .iter()
            .zip(self.keypoints.iter())
            .filter_map(|(j, kp)| kp.map(|kp| (*j, kp)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub keypoints: [Option<Point3D>; REDUCED_LEN],
    pub frame_index: u64,
    pub person_index: usize,
}

impl Skeleton3D {
    pub fn get(&self, joint: Joint) -> Option<Point3D> {
        self.keypoints[joint.index()]
    }

    pub fn valid_count(&self) -> usize {
        self.keypoints.iter().flatten().count()
    }
}

/// Pixel box, half-open: columns `u_min..u_max`, rows `v_min..v_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl BoundingBox {
    pub fn width(&self) -> u32 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> u32 {
        self.v_max - self.v_min
    }
}

pub const DEFAULT_PAD_FRAC: f64 = 0.1;

/// Reduces a BODY-25 detection to the 15-keypoint layout.
pub fn simplify(raw: &RawSkeleton2D) -> ReducedSkeleton2D {
    let mut out = [None; REDUCED_LEN];

    let head: Vec<Keypoint2D> = body25::HEAD_GROUP
        .iter()
        .filter_map(|&i| raw.detected(i))
        .collect();
    if !head.is_empty() {
        // incremental weighted mean, exact for a single keypoint
        let (mut u, mut v, mut weight) = (head[0].u, head[0].v, head[0].confidence);
        for k in &head[1..] {
            weight += k.confidence;
            let share = k.confidence / weight;
            u += share * (k.u - u);
            v += share * (k.v - v);
        }
        let confidence = head.iter().map(|k| k.confidence).fold(0.0, f64::max);
        out[Joint::Head.index()] = Some(Keypoint2D::new(u, v, confidence));
    }

    if let (Some(r), Some(l)) = (raw.detected(body25::R_HIP), raw.detected(body25::L_HIP)) {
        out[Joint::Torso.index()] = Some(Keypoint2D::new(
            (r.u + l.u) / 2.0,
            (r.v + l.v) / 2.0,
            r.confidence.min(l.confidence),
        ));
    }

    for joint in Joint::ALL {
        if let Some(src) = joint.body25_source() {
            out[joint.index()] = raw.detected(src);
        }
    }
    ReducedSkeleton2D { keypoints: out }
}

/// Lifts every keypoint with resolvable depth into the camera frame.
/// Keypoints outside the image or without depth become invalid.
pub fn lift_to_3d(
    sk: &ReducedSkeleton2D,
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    frame_index: u64,
    person_index: usize,
) -> Skeleton3D {
    let mut keypoints = [None; REDUCED_LEN];
    for (joint, kp) in sk.valid() {
        let point = match sample_depth(depth, kp.u, kp.v, intr) {
            Ok(Some(z)) => backproject(kp.u, kp.v, z, intr).ok(),
            _ => None,
        };
        keypoints[joint.index()] = point;
    }
    Skeleton3D {
        keypoints,
        frame_index,
        person_index,
    }
}

/// Box around the valid keypoints, padded by `pad_frac` of its size on each
/// side, rounded outward and clamped to the image.
pub fn user_bbox(sk: &ReducedSkeleton2D, image_w: u32, image_h: u32, pad_frac: f64) -> Result<BoundingBox> {
    let valid: Vec<Keypoint2D> = sk.valid().map(|(_, kp)| kp).collect();
    if valid.len() < 2 {
        return Err(Error::DegenerateSkeleton(format!(
            "{} valid keypoints, need at least 2",
            valid.len()
        )));
    }
    let (mut u_lo, mut v_lo) = (f64::INFINITY, f64::INFINITY);
    let (mut u_hi, mut v_hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for kp in &valid {
        u_lo = u_lo.min(kp.u);
        u_hi = u_hi.max(kp.u);
        v_lo = v_lo.min(kp.v);
        v_hi = v_hi.max(kp.v);
    }
    let (w, h) = (u_hi - u_lo, v_hi - v_lo);
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::DegenerateSkeleton("zero-area keypoint extent".into()));
    }
    let clamp = |x: f64, max: u32| x.max(0.0).min(max as f64) as u32;
    let bbox = BoundingBox {
        u_min: clamp((u_lo - pad_frac * w).floor(), image_w),
        v_min: clamp((v_lo - pad_frac * h).floor(), image_h),
        u_max: clamp((u_hi + pad_frac * w).ceil(), image_w),
        v_max: clamp((v_hi + pad_frac * h).ceil(), image_h),
    };
    if bbox.u_min >= bbox.u_max || bbox.v_min >= bbox.v_max {
        return Err(Error::DegenerateSkeleton("box lies outside the image".into()));
    }
    Ok(bbox)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PersonRecord {
    keypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameRecord {
    frame: u64,
    #[serde(default)]
    people: Vec<PersonRecord>,
}

/// One line of a skeleton stream file.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub frame: u64,
    pub people: Vec<RawSkeleton2D>,
}

impl SkeletonFrame {
    pub fn parse_line(line: &str) -> Result<Self> {
        let record: FrameRecord =
            serde_json::from_str(line).map_err(|e| Error::Stream(format!("bad skeleton record: {e}")))?;
        let people = record
            .people
            .into_iter()
            .map(|p| {
                let kps: [[f64; 3]; BODY25_LEN] = p.keypoints.try_into().map_err(|v: Vec<_>| {
                    Error::Stream(format!(
                        "frame {}: person has {} keypoints, expected 25",
                        record.frame,
                        v.len()
                    ))
                })?;
                RawSkeleton2D::new(kps.map(|[u, v, c]| Keypoint2D::new(u, v, c)))
            })
            .collect::<Result<_>>()?;
        Ok(SkeletonFrame {
            frame: record.frame,
            people,
        })
    }

    pub fn to_line(&self) -> String {
        let record = FrameRecord {
            frame: self.frame,
            people: self
                .people
                .iter()
                .map(|p| PersonRecord {
                    keypoints: p.keypoints.iter().map(|k| [k.u, k.v, k.confidence]).collect(),
                })
                .collect(),
        };
        serde_json::to_string(&record).expect("skeleton record serializes")
    }
}

/// Reads a newline-delimited skeleton stream. Blank lines are skipped.
pub fn read_skeleton_stream<R: BufRead>(reader: R) -> Result<Vec<SkeletonFrame>> {
    let mut frames = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Stream(format!("reading skeleton stream: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = SkeletonFrame::parse_line(&line)
            .map_err(|e| Error::Stream(format!("line {}: {e}", lineno + 1)))?;
        frames.push(frame);
    }
    Ok(frames)
}
