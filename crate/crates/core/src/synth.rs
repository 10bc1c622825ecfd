//! Synthetic recorded streams.
//!
//! Renders a scene with the tracked user and one bystander: BODY-25
//! skeletons projected through the camera, depth images with the people as
//! flat slabs in front of a wall, RGB frames where the user's body is painted
//! with a gray level that encodes the scripted action, identity events at a
//! fixed cadence and one occlusion gap that drives the tracker through
//! UNKNOWN and LOST.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraIntrinsics, DepthImage, Point3D};
use crate::classifier::{ClassifierSpec, InputSize, BUCKET_WIDTH};
use crate::error::{Error, Result};
use crate::pipeline::stream::{depth_path, rgb_path, StreamMeta};
use crate::pipeline::{ExecutionMode, PipelineConfig, QueueConfig};
use crate::skeleton::{Keypoint2D, RawSkeleton2D, SkeletonFrame, BODY25_LEN};
use crate::tracker::{IdentityEvent, TrackerConfig};
use crate::windowing::WindowConfig;

/// Standing pose in meters, relative to the mid-hip, y pointing down.
const POSE: [(f64, f64); BODY25_LEN] = [
    (0.0, -0.62),
    (0.0, -0.50),
    (-0.18, -0.48),
    (-0.22, -0.22),
    (-0.24, 0.0),
    (0.18, -0.48),
    (0.22, -0.22),
    (0.24, 0.0),
    (0.0, 0.0),
    (-0.10, 0.0),
    (-0.10, 0.42),
    (-0.10, 0.82),
    (0.10, 0.0),
    (0.10, 0.42),
    (0.10, 0.82),
    (-0.03, -0.66),
    (0.03, -0.66),
    (-0.07, -0.64),
    (0.07, -0.64),
    (0.12, 0.86),
    (0.15, 0.86),
    (0.08, 0.84),
    (-0.12, 0.86),
    (-0.15, 0.86),
    (-0.08, 0.84),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seconds: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub user_id: String,
    /// Seconds each scripted action lasts.
    pub action_seconds: f64,
    pub classes: usize,
    /// Frames between identity events for the user.
    pub identity_every: u64,
    /// Frames during which the user is undetected, `[start, end)`.
    pub occlusion: Option<(u64, u64)>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seconds: 60.0,
            fps: 15.0,
            width: 160,
            height: 120,
            seed: 7,
            user_id: "user".into(),
            action_seconds: 6.0,
            classes: 7,
            identity_every: 45,
            occlusion: Some((300, 320)),
        }
    }
}

impl SynthSpec {
    pub fn frame_count(&self) -> u64 {
        (self.seconds * self.fps).round() as u64
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = self.width as f64 * 0.75;
        CameraIntrinsics {
            fx: f,
            fy: f,
            u0: self.width as f64 / 2.0,
            v0: self.height as f64 / 2.0,
            depth_scale: 0.001,
            width: self.width,
            height: self.height,
        }
    }

    /// Scripted action of the user at time `t`.
    pub fn action_at(&self, t: f64) -> usize {
        ((t / self.action_seconds).floor() as usize) % self.classes
    }

    /// Pipeline config for this stream, with `stream_dir` relative to the config file.
    pub fn pipeline_config(&self, stream_dir: &Path) -> PipelineConfig {
        let window = WindowConfig {
            class_names: crate::windowing::DEFAULT_CLASSES
                .iter()
                .cycle()
                .take(self.classes)
                .enumerate()
                .map(|(i, c)| if i < 7 { c.to_string() } else { format!("class_{i}") })
                .collect(),
            ..WindowConfig::default()
        };
        PipelineConfig {
            stream_dir: stream_dir.to_path_buf(),
            intrinsics: None,
            classifier: ClassifierSpec::mock("mean-pixel-bucket", InputSize { n: window.n, h: 32, w: 32 }),
            window,
            tracker: TrackerConfig::new(self.user_id.clone()),
            queues: QueueConfig::default(),
            real_time: false,
            mode: ExecutionMode::Threaded,
            pad_frac: crate::skeleton::DEFAULT_PAD_FRAC,
        }
    }
}

struct Person {
    hip: Point3D,
    paint: u8,
}

fn render_skeleton(person: &Person, intr: &CameraIntrinsics) -> RawSkeleton2D {
    let mut raw = RawSkeleton2D::undetected();
    for (i, (dx, dy)) in POSE.iter().enumerate() {
        let p = Point3D::new(person.hip.x + dx, person.hip.y + dy, person.hip.z);
        let (u, v) = project(&p, intr).expect("synthetic people stand in front of the camera");
        if intr.contains(u, v) {
            raw.set(i, Keypoint2D::new(u, v, 0.9));
        }
    }
    raw
}

fn extent(raw: &RawSkeleton2D, pad: f64, w: u32, h: u32) -> Option<(u32, u32, u32, u32)> {
    let pts: Vec<_> = raw.keypoints().iter().filter(|k| k.is_detected()).collect();
    if pts.is_empty() {
        return None;
    }
    let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for k in pts {
        u0 = u0.min(k.u);
        v0 = v0.min(k.v);
        u1 = u1.max(k.u);
        v1 = v1.max(k.v);
    }
    let (pu, pv) = ((u1 - u0) * pad, (v1 - v0) * pad);
    let clamp = |x: f64, max: u32| x.max(0.0).min(max as f64) as u32;
    Some((
        clamp((u0 - pu).floor(), w),
        clamp((v0 - pv).floor(), h),
        clamp((u1 + pu).ceil(), w),
        clamp((v1 + pv).ceil(), h),
    ))
}

/// Writes a complete stream directory for `spec` into `dir`.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let intr = spec.intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    write_json(&dir.join("meta.json"), &StreamMeta { fps: spec.fps })?;
    write_json(&dir.join("intrinsics.json"), &intr)?;

    let create = |name: &str| {
        File::create(dir.join(name))
            .map(BufWriter::new)
            .map_err(|e| Error::io(format!("creating {name}"), e))
    };
    let mut skeletons = create("skeletons.jsonl")?;
    let mut identities = create("identities.jsonl")?;

    let (w, h) = (spec.width, spec.height);
    for index in 0..spec.frame_count() {
        let t = index as f64 / spec.fps;
        let action = spec.action_at(t);
        let user = Person {
            hip: Point3D::new(0.6 * (std::f64::consts::TAU * t / 20.0).sin(), 0.1, 2.5),
            paint: (action as u64 * BUCKET_WIDTH + BUCKET_WIDTH / 2).min(255) as u8,
        };
        let bystander = Person {
            hip: Point3D::new(-1.0 + 0.1 * (t / 3.0).sin(), 0.1, 4.0),
            paint: 200,
        };
        let occluded = spec.occlusion.is_some_and(|(a, b)| (a..b).contains(&index));

        // bystander listed first on odd seconds
        let user_first = (t as u64).is_multiple_of(2);
        let mut people: Vec<(&Person, bool)> = Vec::new();
        if !occluded {
            people.push((&user, true));
        }
        if user_first {
            people.push((&bystander, false));
        } else {
            people.insert(0, (&bystander, false));
        }

        let mut rgb = RgbImage::from_pixel(w, h, Rgb([0, 0, 0]));
        let mut depth = DepthImage::filled(w, h, 5000);
        let mut frame = SkeletonFrame {
            frame: index,
            people: Vec::new(),
        };
        // paint far to near
        let mut order: Vec<_> = people.iter().collect();
        order.sort_by(|a, b| b.0.hip.z.total_cmp(&a.0.hip.z));
        for (person, _) in &order {
            let raw = render_skeleton(person, &intr);
            if let Some((u0, v0, u1, v1)) = extent(&raw, 0.15, w, h) {
                let mm = (person.hip.z * 1000.0) as u16;
                for y in v0..v1 {
                    for x in u0..u1 {
                        rgb.put_pixel(x, y, Rgb([person.paint; 3]));
                        depth.set(x, y, mm);
                    }
                }
            }
        }
        for (i, (person, is_user)) in people.iter().enumerate() {
            frame.people.push(render_skeleton(person, &intr));
            let id = if *is_user {
                (index % spec.identity_every == 0).then(|| spec.user_id.clone())
            } else {
                (index % (spec.identity_every * 2) == 7).then(|| "bystander".to_string())
            };
            if let Some(person_id) = id {
                let event = IdentityEvent {
                    frame_index: index,
                    person_index: i,
                    person_id,
                };
                writeln!(identities, "{}", serde_json::to_string(&event).expect("event serializes"))
                    .map_err(|e| Error::io("writing identities.jsonl", e))?;
            }
        }
        // sparse depth holes exercise the neighbourhood fallback
        for _ in 0..(w * h / 50) {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            depth.set(x, y, 0);
        }

        writeln!(skeletons, "{}", frame.to_line()).map_err(|e| Error::io("writing skeletons.jsonl", e))?;
        let rgb_file = rgb_path(dir, index);
        rgb.save(&rgb_file).map_err(|e| Error::Image {
            context: format!("writing {}", rgb_file.display()),
            source: e,
        })?;
        let depth_file = depth_path(dir, index);
        let file = File::create(&depth_file).map_err(|e| Error::io(format!("creating {}", depth_file.display()), e))?;
        depth
            .write_pgm(BufWriter::new(file))
            .map_err(|e| Error::io(format!("writing {}", depth_file.display()), e))?;
    }
    skeletons.flush().map_err(|e| Error::io("writing skeletons.jsonl", e))?;
    identities.flush().map_err(|e| Error::io("writing identities.jsonl", e))?;
    Ok(())
}

/// Pretty-printed JSON file with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json("serializing", e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
