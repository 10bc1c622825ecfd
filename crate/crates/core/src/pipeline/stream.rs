//! Recorded stream directories.
//!
//! Layout:
//!
//! ```text
//! meta.json          {"fps": 15}
//! intrinsics.json    camera intrinsics
//! skeletons.jsonl    one line per frame; missing lines mean no detections
//! identities.jsonl   identity events
//! rgb_000000.png     one per frame
//! depth_000000.pgm   16-bit binary PGM, one per frame
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, DepthImage};
use crate::error::{Error, Result};
use crate::skeleton::{read_skeleton_stream, RawSkeleton2D};
use crate::tracker::{read_identity_events, IdentityEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub fps: f64,
}

pub fn rgb_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("rgb_{index:06}.png"))
}

pub fn depth_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("depth_{index:06}.pgm"))
}

/// Everything recorded for one frame.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub index: u64,
    /// Seconds since the first frame, `index / fps`.
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub people: Vec<RawSkeleton2D>,
    pub events: Vec<IdentityEvent>,
}

/// A validated stream directory. Images are read lazily, frame by frame.
#[derive(Debug, Clone)]
pub struct StreamReplay {
    dir: PathBuf,
    meta: StreamMeta,
    intrinsics: CameraIntrinsics,
    frame_count: u64,
    skeletons: BTreeMap<u64, Vec<RawSkeleton2D>>,
    events: BTreeMap<u64, Vec<IdentityEvent>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Stream(format!("opening {}: {e}", path.display())))
}

fn frame_index(name: &str, prefix: &str, suffix: &str) -> Option<u64> {
    name.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()
}

impl StreamReplay {
    /// Opens `dir`, reading side files and checking that every frame index
    /// up to the last one has both an RGB and a depth image.
    pub fn open(dir: &Path, intrinsics_override: Option<&Path>) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Stream(format!("stream directory {} not found", dir.display())));
        }
        let meta: StreamMeta = serde_json::from_reader(open(&dir.join("meta.json"))?)
            .map_err(|e| Error::Stream(format!("parsing meta.json: {e}")))?;
        if !(meta.fps > 0.0 && meta.fps.is_finite()) {
            return Err(Error::Stream(format!("meta.json fps {} must be positive", meta.fps)));
        }
        let intr_path = intrinsics_override
            .map(Path::to_path_buf)
            .unwrap_or_else(|| dir.join("intrinsics.json"));
        let intrinsics = CameraIntrinsics::load(&intr_path).map_err(|e| match e {
            Error::InvalidIntrinsics(_) => e,
            other => Error::Stream(other.to_string()),
        })?;

        let mut rgb = BTreeSet::new();
        let mut depth = BTreeSet::new();
        let listing = std::fs::read_dir(dir).map_err(|e| Error::Stream(format!("listing {}: {e}", dir.display())))?;
        for entry in listing {
            let entry = entry.map_err(|e| Error::Stream(e.to_string()))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(i) = frame_index(name, "rgb_", ".png") {
                rgb.insert(i);
            } else if let Some(i) = frame_index(name, "depth_", ".pgm") {
                depth.insert(i);
            }
        }
        let frame_count = rgb.iter().chain(&depth).max().map_or(0, |m| m + 1);
        for i in 0..frame_count {
            if !rgb.contains(&i) || !depth.contains(&i) {
                return Err(Error::FrameGap {
                    dir: dir.to_path_buf(),
                    index: i,
                });
            }
        }

        let mut skeletons = BTreeMap::new();
        for frame in read_skeleton_stream(open(&dir.join("skeletons.jsonl"))?)? {
            if skeletons.insert(frame.frame, frame.people).is_some() {
                return Err(Error::Stream(format!("duplicate skeleton record for frame {}", frame.frame)));
            }
        }
        let mut events: BTreeMap<u64, Vec<IdentityEvent>> = BTreeMap::new();
        let events_path = dir.join("identities.jsonl");
        if events_path.exists() {
            for e in read_identity_events(open(&events_path)?)? {
                events.entry(e.frame_index).or_default().push(e);
            }
        }

        Ok(StreamReplay {
            dir: dir.to_path_buf(),
            meta,
            intrinsics,
            frame_count,
            skeletons,
            events,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn fps(&self) -> f64 {
        self.meta.fps
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn duration(&self) -> f64 {
        self.frame_count as f64 / self.meta.fps
    }

    pub fn load_frame(&self, index: u64) -> Result<FrameBundle> {
        let rgb_file = rgb_path(&self.dir, index);
        let rgb = image::open(&rgb_file)
            .map_err(|e| Error::Image {
                context: format!("reading {}", rgb_file.display()),
                source: e,
            })?
            .into_rgb8();
        let depth = DepthImage::load_pgm(&depth_path(&self.dir, index))?;
        if (rgb.width(), rgb.height()) != (self.intrinsics.width, self.intrinsics.height)
            || (depth.width(), depth.height()) != (self.intrinsics.width, self.intrinsics.height)
        {
            return Err(Error::Stream(format!(
                "frame {index}: image size differs from intrinsics {}x{}",
                self.intrinsics.width, self.intrinsics.height
            )));
        }
        Ok(FrameBundle {
            index,
            timestamp: index as f64 / self.meta.fps,
            rgb,
            depth,
            people: self.skeletons.get(&index).cloned().unwrap_or_default(),
            events: self.events.get(&index).cloned().unwrap_or_default(),
        })
    }

    /// Frames in index order.
    pub fn frames(&self) -> impl Iterator<Item = Result<FrameBundle>> + '_ {
        (0..self.frame_count).map(|i| self.load_frame(i))
    }
}
