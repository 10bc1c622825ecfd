//! Pinhole camera model: back-projection of pixels plus depth into the
//! camera frame, forward projection, and depth sampling.
//!
//! All 3D points live in the camera coordinate frame. Extrinsics are not
//! modelled.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the neighbourhood searched when the exact depth pixel is empty.
pub const DEPTH_FALLBACK_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    /// Meters per depth unit, e.g. 0.001 for millimeter depth images.
    pub depth_scale: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64, depth_scale: f64, width: u32, height: u32) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            u0,
            v0,
            depth_scale,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.u0 >= 0.0 && self.u0 < self.width as f64) {
            return bad("u0 must lie in [0, width)");
        }
        if !(self.v0 >= 0.0 && self.v0 < self.height as f64) {
            return bad("v0 must lie in [0, height)");
        }
        if !(self.depth_scale > 0.0) {
            return bad("depth_scale must be positive");
        }
        Ok(())
    }

    /// Loads an intrinsics JSON file `{"fx","fy","u0","v0","depth_scale","width","height"}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading intrinsics {}", path.display()), e))?;
        let intr: CameraIntrinsics = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing intrinsics {}", path.display()), e))?;
        intr.validate()?;
        Ok(intr)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    fn check_bounds(&self, u: f64, v: f64) -> Result<()> {
        if self.contains(u, v) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3D { x, y, z }
    }

    pub fn distance(&self, other: &Point3D) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Row-major 16-bit depth image. A value of 0 means "no depth".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Stream(format!(
                "depth data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(DepthImage { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u16) -> Self {
        DepthImage {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u16) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    /// Reads a binary 16-bit PGM (P5, maxval 65535, big-endian samples).
    pub fn read_pgm<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            let mut line = String::new();
            let read = reader
                .read_line(&mut line)
                .map_err(|e| Error::Stream(format!("reading PGM header: {e}")))?;
            if read == 0 {
                return Err(Error::Stream("truncated PGM header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P5" {
            return Err(Error::Stream(format!("unsupported PGM magic {:?}", header[0])));
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| Error::Stream(format!("bad PGM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 65535 {
            return Err(Error::Stream(format!("PGM maxval {maxval}, expected 65535")));
        }
        let mut bytes = vec![0u8; width as usize * height as usize * 2];
        reader
            .read_exact(&mut bytes)
            .map_err(|e| Error::Stream(format!("reading PGM samples: {e}")))?;
        let data = bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        DepthImage::new(width, height, data)
    }

    pub fn write_pgm<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        write!(writer, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        writer.write_all(&bytes)
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Stream(format!("opening {}: {e}", path.display())))?;
        Self::read_pgm(file)
    }
}

/// Recovers the camera-frame point seen at pixel `(u, v)` with depth `z` meters.
pub fn backproject(u: f64, v: f64, z: f64, intr: &CameraIntrinsics) -> Result<Point3D> {
    if !(z > 0.0) {
        return Err(Error::InvalidDepth(z));
    }
    intr.check_bounds(u, v)?;
    Ok(Point3D {
        x: z * (u - intr.u0) / intr.fx,
        y: z * (v - intr.v0) / intr.fy,
        z,
    })
}

/// Projects a camera-frame point to real-valued pixel coordinates. The
/// result may fall outside the image.
pub fn project(p: &Point3D, intr: &CameraIntrinsics) -> Result<(f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((intr.u0 + intr.fx * p.x / p.z, intr.v0 + intr.fy * p.y / p.z))
}

/// Depth in meters at the nearest pixel to `(u, v)`.
///
/// An empty pixel falls back to the median of the nonzero values in the 5x5
/// neighbourhood; `Ok(None)` when that neighbourhood is empty too.
pub fn sample_depth(img: &DepthImage, u: f64, v: f64, intr: &CameraIntrinsics) -> Result<Option<f64>> {
    if !(u >= 0.0 && v >= 0.0 && u < img.width as f64 && v < img.height as f64) {
        return Err(Error::OutOfBounds {
            u,
            v,
            width: img.width,
            height: img.height,
        });
    }
    let x = (u.round() as u32).min(img.width - 1);
    let y = (v.round() as u32).min(img.height - 1);
    let raw = img.get(x, y);
    if raw != 0 {
        return Ok(Some(raw as f64 * intr.depth_scale));
    }

    let half = (DEPTH_FALLBACK_WINDOW / 2) as i64;
    let mut values: Vec<u16> = Vec::with_capacity(DEPTH_FALLBACK_WINDOW * DEPTH_FALLBACK_WINDOW);
    for dy in -half..=half {
        for dx in -half..=half {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= img.width as i64 || ny >= img.height as i64 {
                continue;
            }
            let value = img.get(nx as u32, ny as u32);
            if value != 0 {
                values.push(value);
            }
        }
    }
    if values.is_empty() {
        return Ok(None);
    }
    values.sort_unstable();
    let mid = values.len() / 2;
    let median = if values.len() % 2 == 1 {
        values[mid] as f64
    } else {
        (values[mid - 1] as f64 + values[mid] as f64) / 2.0
    };
    Ok(Some(median * intr.depth_scale))
}
