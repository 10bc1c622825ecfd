//! Classifier boundary.
//!
//! Everything that turns a window of cropped frames into class probabilities
//! sits behind [`Classifier`]. Two backends exist: a deterministic in-process
//! mock and a TCP client for an out-of-process model server.
//!
//! Wire protocol: newline-delimited UTF-8 JSON over TCP, one object per line.
//!
//! ```text
//! -> {"id": 7, "n": 16, "h": 64, "w": 64, "frames_b64": "<base64 of n*h*w*3 RGB bytes>"}
//! <- {"id": 7, "probs": [0.1, 0.2, 0.7]}
//! <- {"id": 7, "error": "model failed"}
//! ```
//!
//! Ids increase strictly per connection and responses may come back out of order.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::BoundingBox;
use crate::windowing::ClassProbabilities;

pub const DEFAULT_TIMEOUT_MS: u64 = 2000;

/// Width of each intensity bucket for the mean-pixel rule.
pub const BUCKET_WIDTH: u64 = 36;
pub const BUCKET_HOT: f64 = 0.94;
pub const BUCKET_SPREAD: f64 = 0.06;

/// `n` frames of `height x width` RGB, frame-major then row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowTensor {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl WindowTensor {
    pub fn new(n: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        let expected = n * height * width * 3;
        if data.len() != expected {
            return Err(Error::Classifier(format!(
                "window holds {} bytes, expected {expected} for {n}x{height}x{width}x3",
                data.len()
            )));
        }
        Ok(WindowTensor { n, height, width, data })
    }

    /// Concatenates equally sized RGB frames.
    pub fn from_frames(frames: &[impl AsRef<[u8]>], height: usize, width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(frames.len() * height * width * 3);
        for f in frames {
            let f = f.as_ref();
            if f.len() != height * width * 3 {
                return Err(Error::Classifier(format!(
                    "frame holds {} bytes, expected {}",
                    f.len(),
                    height * width * 3
                )));
            }
            data.extend_from_slice(f);
        }
        Self::new(frames.len(), height, width, data)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn input_size(&self) -> InputSize {
        InputSize {
            n: self.n,
            h: self.height,
            w: self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSize {
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

/// Crops `bbox` out of `img` and stretches it to `h x w` with bilinear
/// sampling (pixel centers at half-integers, edges clamped).
pub fn resize_crop(img: &RgbImage, bbox: &BoundingBox, h: usize, w: usize) -> Result<Vec<u8>> {
    if bbox.u_min >= bbox.u_max || bbox.v_min >= bbox.v_max {
        return Err(Error::DegenerateCrop(format!("{bbox:?} has zero area")));
    }
    if bbox.u_max > img.width() || bbox.v_max > img.height() {
        return Err(Error::DegenerateCrop(format!(
            "{bbox:?} exceeds {}x{} image",
            img.width(),
            img.height()
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::DegenerateCrop("zero target size".into()));
    }
    let (cw, ch) = (bbox.width() as usize, bbox.height() as usize);
    let stride = img.width() as usize * 3;
    let raw = img.as_raw();
    let mut crop = Vec::with_capacity(cw * ch * 3);
    for y in bbox.v_min as usize..bbox.v_max as usize {
        let row = y * stride;
        crop.extend_from_slice(&raw[row + bbox.u_min as usize * 3..row + bbox.u_max as usize * 3]);
    }
    Ok(resize_bilinear(&crop, cw, ch, w, h))
}

/// Bilinear resize of a packed RGB buffer from `sw x sh` to `dw x dh`.
pub fn resize_bilinear(src: &[u8], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<u8> {
    let axis = |d: usize, s: usize, dn: usize| -> (usize, usize, f64) {
        let pos = ((d as f64 + 0.5) * s as f64 / dn as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = pos.floor() as usize;
        (i0, (i0 + 1).min(s - 1), pos - i0 as f64)
    };
    let cols: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh * 3);
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, sh, dh);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let px = |yy: usize, xx: usize| src[(yy * sw + xx) * 3 + c] as f64;
                let top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                let bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub trait Classifier: Send {
    fn num_classes(&self) -> usize;

    fn classify(&mut self, window: &WindowTensor) -> Result<ClassProbabilities>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockRule {
    /// Every class equally likely.
    ConstantUniform,
    /// Class `floor(mean byte / 36)` (clamped to the last class) gets 0.94,
    /// the rest share 0.06 evenly.
    MeanPixelBucket,
}

impl MockRule {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "constant-uniform" => Ok(MockRule::ConstantUniform),
            "mean-pixel-bucket" => Ok(MockRule::MeanPixelBucket),
            other => Err(Error::Config(format!("unknown mock rule {other:?}"))),
        }
    }

    pub fn evaluate(&self, window: &WindowTensor, classes: usize) -> ClassProbabilities {
        match self {
            MockRule::ConstantUniform => ClassProbabilities::uniform(classes),
            MockRule::MeanPixelBucket => {
                let bucket = mean_pixel_bucket(window.data(), classes);
                ClassProbabilities::new(bucket_vector(bucket, classes))
                    .expect("bucket vector is a distribution")
            }
        }
    }
}

/// Bucket index of the mean byte value, computed in integers so every
/// implementation agrees exactly.
pub fn mean_pixel_bucket(data: &[u8], classes: usize) -> usize {
    if data.is_empty() {
        return 0;
    }
    let sum: u64 = data.iter().map(|&b| b as u64).sum();
    let bucket = sum / (BUCKET_WIDTH * data.len() as u64);
    (bucket as usize).min(classes - 1)
}

pub fn bucket_vector(bucket: usize, classes: usize) -> Vec<f64> {
    if classes == 1 {
        return vec![1.0];
    }
    let off = BUCKET_SPREAD / (classes - 1) as f64;
    (0..classes).map(|i| if i == bucket { BUCKET_HOT } else { off }).collect()
}

/// Deterministic in-process classifier.
#[derive(Debug, Clone)]
pub struct MockClassifier {
    rule: MockRule,
    classes: usize,
    delay: Duration,
}

impl MockClassifier {
    pub fn new(rule: MockRule, classes: usize) -> Self {
        MockClassifier {
            rule,
            classes,
            delay: Duration::ZERO,
        }
    }

    /// Sleeps for `delay` on every call, to emulate model latency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

impl Classifier for MockClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn classify(&mut self, window: &WindowTensor) -> Result<ClassProbabilities> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(self.rule.evaluate(window, self.classes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: i64,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub frames_b64: String,
}

impl Request {
    pub fn encode(id: i64, window: &WindowTensor) -> Self {
        Request {
            id,
            n: window.n,
            h: window.height,
            w: window.width,
            frames_b64: base64::engine::general_purpose::STANDARD.encode(window.data()),
        }
    }

    pub fn decode_window(&self) -> Result<WindowTensor> {
        let data = base64::engine::general_purpose::STANDARD
            .decode(&self.frames_b64)
            .map_err(|e| Error::Protocol(format!("bad frames_b64: {e}")))?;
        WindowTensor::new(self.n, self.h, self.w, data).map_err(|e| Error::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Probs { id: i64, probs: Vec<f64> },
    Error { id: i64, error: String },
}

impl Response {
    pub fn id(&self) -> i64 {
        match self {
            Response::Probs { id, .. } | Response::Error { id, .. } => *id,
        }
    }
}

/// Serializes a message as one LF-terminated line.
pub fn to_line<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("protocol messages serialize");
    line.push('\n');
    line
}

struct Connection {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

/// Client for a model server speaking the line protocol.
///
/// One request is outstanding at a time. Each call is bounded by the
/// configured timeout; a failed connection is retried once.
pub struct RemoteClassifier {
    addr: SocketAddr,
    timeout: Duration,
    classes: usize,
    next_id: i64,
    conn: Option<Connection>,
}

impl RemoteClassifier {
    pub fn new(endpoint: &str, classes: usize, timeout: Duration) -> Result<Self> {
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|e| Error::Config(format!("bad endpoint {endpoint:?}: {e}")))?
            .next()
            .ok_or_else(|| Error::Config(format!("endpoint {endpoint:?} resolves to nothing")))?;
        Ok(RemoteClassifier {
            addr,
            timeout,
            classes,
            next_id: 0,
            conn: None,
        })
    }

    /// Opens the connection now, retrying once.
    pub fn connect(&mut self) -> Result<()> {
        if self.conn.is_none() {
            self.conn = Some(self.open().or_else(|_| self.open())?);
        }
        Ok(())
    }

    fn open(&self) -> Result<Connection> {
        let stream = TcpStream::connect_timeout(&self.addr, self.timeout)
            .map_err(|e| Error::Classifier(format!("connecting to {}: {e}", self.addr)))?;
        stream.set_nodelay(true).ok();
        let reader = stream
            .try_clone()
            .map_err(|e| Error::Classifier(format!("cloning socket: {e}")))?;
        Ok(Connection {
            writer: stream,
            reader: BufReader::new(reader),
        })
    }

    fn send(&mut self, line: &str) -> Result<()> {
        let conn = self.conn.as_mut().expect("connected");
        conn.writer
            .write_all(line.as_bytes())
            .map_err(|e| Error::Classifier(format!("sending request: {e}")))
    }

    fn await_response(&mut self, id: i64, deadline: Instant) -> Result<Vec<f64>> {
        let conn = self.conn.as_mut().expect("connected");
        let mut line = String::new();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(Error::Timeout(self.timeout.as_millis() as u64));
            }
            conn.reader
                .get_ref()
                .set_read_timeout(Some(remaining))
                .map_err(|e| Error::Classifier(e.to_string()))?;
            line.clear();
            match conn.reader.read_line(&mut line) {
                Ok(0) => return Err(Error::Classifier("server closed the connection".into())),
                Ok(_) => {}
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(Error::Timeout(self.timeout.as_millis() as u64));
                }
                Err(e) => return Err(Error::Classifier(format!("reading response: {e}"))),
            }
            let response: Response = serde_json::from_str(line.trim_end())
                .map_err(|e| Error::Protocol(format!("malformed response {:?}: {e}", line.trim_end())))?;
            if response.id() != id {
                log::debug!("skipping response for stale request {}", response.id());
                continue;
            }
            return match response {
                Response::Probs { probs, .. } => Ok(probs),
                Response::Error { error, .. } => Err(Error::Classifier(format!("server error: {error}"))),
            };
        }
    }
}

impl Classifier for RemoteClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn classify(&mut self, window: &WindowTensor) -> Result<ClassProbabilities> {
        let deadline = Instant::now() + self.timeout;
        let id = self.next_id;
        self.next_id += 1;
        let line = to_line(&Request::encode(id, window));

        let reused = self.conn.is_some();
        self.connect()?;
        let mut result = match self.send(&line) {
            Ok(()) => self.await_response(id, deadline),
            Err(e) => Err(e),
        };
        // A kept-alive socket the server has since closed fails on write or
        // reads EOF straight away; give it one fresh connection.
        if reused && matches!(result, Err(Error::Classifier(ref m)) if !m.starts_with("server error")) {
            self.conn = None;
            self.connect()?;
            self.send(&line)?;
            result = self.await_response(id, deadline);
        }
        let probs = match result {
            Ok(p) => p,
            Err(e) => {
                if !matches!(e, Error::Classifier(ref m) if m.starts_with("server error")) {
                    self.conn = None;
                }
                return Err(e);
            }
        };
        if probs.len() != self.classes {
            return Err(Error::Protocol(format!(
                "response has {} probabilities, expected {}",
                probs.len(),
                self.classes
            )));
        }
        ClassProbabilities::normalize(probs).map_err(|e| Error::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    /// `host:port`, remote only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Rule id, mock only.
    #[serde(default = "default_rule")]
    pub mock_rule: String,
    pub input_size: InputSize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Artificial per-call delay for the mock.
    #[serde(default)]
    pub delay_ms: u64,
}

fn default_rule() -> String {
    "mean-pixel-bucket".into()
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl ClassifierSpec {
    pub fn mock(rule: &str, input_size: InputSize) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::Mock,
            endpoint: None,
            mock_rule: rule.into(),
            input_size,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            delay_ms: 0,
        }
    }

    /// Applies `mock` or `remote:host:port`.
    pub fn apply_override(&mut self, value: &str) -> Result<()> {
        if value == "mock" {
            self.kind = ClassifierKind::Mock;
            self.endpoint = None;
        } else if let Some(endpoint) = value.strip_prefix("remote:") {
            if endpoint.is_empty() {
                return Err(Error::Config("remote classifier override lacks host:port".into()));
            }
            self.kind = ClassifierKind::Remote;
            self.endpoint = Some(endpoint.to_string());
        } else {
            return Err(Error::Config(format!("unrecognized classifier override {value:?}")));
        }
        Ok(())
    }

    pub fn validate(&self, window_n: usize) -> Result<()> {
        if self.input_size.n != window_n {
            return Err(Error::Config(format!(
                "classifier expects {} frames but windows hold {window_n}",
                self.input_size.n
            )));
        }
        if self.input_size.h == 0 || self.input_size.w == 0 {
            return Err(Error::Config("classifier input size must be non-zero".into()));
        }
        match self.kind {
            ClassifierKind::Mock => MockRule::parse(&self.mock_rule).map(|_| ()),
            ClassifierKind::Remote if self.endpoint.is_none() => {
                Err(Error::Config("remote classifier needs an endpoint".into()))
            }
            ClassifierKind::Remote => Ok(()),
        }
    }

    /// Builds the backend. Remote backends connect eagerly.
    pub fn build(&self, classes: usize) -> Result<Box<dyn Classifier>> {
        match self.kind {
            ClassifierKind::Mock => {
                let rule = MockRule::parse(&self.mock_rule)?;
                Ok(Box::new(
                    MockClassifier::new(rule, classes).with_delay(Duration::from_millis(self.delay_ms)),
                ))
            }
            ClassifierKind::Remote => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("remote classifier needs an endpoint".into()))?;
                let mut client = RemoteClassifier::new(endpoint, classes, Duration::from_millis(self.timeout_ms))?;
                client.connect()?;
                Ok(Box::new(client))
            }
        }
    }
}
