use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierSpec;
use crate::error::{Error, Result};
use crate::skeleton::DEFAULT_PAD_FRAC;
use crate::tracker::TrackerConfig;
use crate::windowing::WindowConfig;

/// Environment variable overriding the classifier: `mock` or `remote:host:port`.
pub const CLASSIFIER_ENV: &str = "PIPELINE_CLASSIFIER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueConfig {
    /// Frames buffered between ingest and the first processing stage.
    pub ingest: usize,
    /// Capacity of every other inter-stage queue.
    pub stage: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig { ingest: 8, stage: 8 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// One worker thread per stage.
    #[default]
    Threaded,
    /// All stages called in sequence on the calling thread.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stream_dir: PathBuf,
    /// Defaults to `<stream_dir>/intrinsics.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PathBuf>,
    pub classifier: ClassifierSpec,
    pub window: WindowConfig,
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub queues: QueueConfig,
    #[serde(default)]
    pub real_time: bool,
    #[serde(default)]
    pub mode: ExecutionMode,
    #[serde(default = "default_pad")]
    pub pad_frac: f64,
}

fn default_pad() -> f64 {
    DEFAULT_PAD_FRAC
}

impl PipelineConfig {
    /// Reads a JSON config. Relative paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("parsing {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.stream_dir = base.join(&cfg.stream_dir);
        cfg.intrinsics = cfg.intrinsics.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(value) = std::env::var(CLASSIFIER_ENV) {
            self.classifier.apply_override(&value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.classifier.validate(self.window.n)?;
        if !(self.tracker.diameter > 0.0) {
            return Err(Error::Config(format!("tracker diameter {} must be positive", self.tracker.diameter)));
        }
        if self.queues.ingest == 0 || self.queues.stage == 0 {
            return Err(Error::Config("queue capacities must be at least 1".into()));
        }
        if !(self.pad_frac >= 0.0 && self.pad_frac.is_finite()) {
            return Err(Error::Config(format!("pad_frac {} must be non-negative", self.pad_frac)));
        }
        if !self.stream_dir.is_dir() {
            return Err(Error::Stream(format!("stream directory {} not found", self.stream_dir.display())));
        }
        if let Some(p) = &self.intrinsics {
            if !p.is_file() {
                return Err(Error::Config(format!("intrinsics file {} not found", p.display())));
            }
        }
        Ok(())
    }
}
