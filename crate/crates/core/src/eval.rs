//! Offline evaluation: stratified 80/20 splits, Top-1 accuracy and
//! confusion matrices, averaged over three seeded splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::DEFAULT_CLASSES;

pub const NUM_SPLITS: usize = 3;
pub const MIN_CLASS_SIZE: usize = 5;
const NONE_COLUMN: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub label: String,
    pub duration_s: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest { class_names, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let classes: BTreeSet<&str> = self.class_names.iter().map(String::as_str).collect();
        if classes.len() != self.class_names.len() {
            return Err(Error::Config("duplicate class names in manifest".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !classes.contains(e.label.as_str()) {
                return Err(Error::Config(format!("{}: unknown label {:?}", e.video_id, e.label)));
            }
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::Config(format!("duplicate video id {:?}", e.video_id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing manifest {}", path.display()), e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn label_of(&self, video_id: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.video_id == video_id)
            .map(|e| e.label.as_str())
    }

    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = self.class_names.iter().map(|c| (c.as_str(), 0)).collect();
        for e in &self.entries {
            *counts.get_mut(e.label.as_str()).expect("validated label") += 1;
        }
        counts
    }
}

/// Per-class video counts and source mix of the reference action dataset:
/// (class, average duration s, [(source, videos)]).
type SourceCounts = [(&'static str, usize); 6];

const REFERENCE_DATASET: [(&str, f64, SourceCounts); 7] = [
    ("drinking", 4.07, [("ours", 124), ("ntu", 94), ("msr", 20), ("utd_mhad", 0), ("weizmann", 0), ("isldas", 0)]),
    ("eating", 4.65, [("ours", 157), ("ntu", 94), ("msr", 20), ("utd_mhad", 0), ("weizmann", 0), ("isldas", 0)]),
    ("sitting", 3.43, [("ours", 61), ("ntu", 94), ("msr", 40), ("utd_mhad", 32), ("weizmann", 0), ("isldas", 0)]),
    ("standing", 3.02, [("ours", 60), ("ntu", 94), ("msr", 20), ("utd_mhad", 32), ("weizmann", 0), ("isldas", 0)]),
    ("walking", 2.73, [("ours", 96), ("ntu", 0), ("msr", 20), ("utd_mhad", 0), ("weizmann", 10), ("isldas", 226)]),
    ("lying", 3.33, [("ours", 96), ("ntu", 94), ("msr", 20), ("utd_mhad", 0), ("weizmann", 0), ("isldas", 0)]),
    ("talking on phone", 4.58, [("ours", 93), ("ntu", 94), ("msr", 20), ("utd_mhad", 0), ("weizmann", 0), ("isldas", 0)]),
];

/// Synthetic manifest with the class sizes and source mix of the seven-class
/// action dataset (1711 videos). Video ids are stubs.
pub fn reference_manifest() -> DatasetManifest {
    let mut entries = Vec::new();
    for (class, duration, sources) in REFERENCE_DATASET {
        let slug = class.replace(' ', "_");
        let mut i = 0;
        for (source, count) in sources {
            for _ in 0..count {
                entries.push(ManifestEntry {
                    video_id: format!("{slug}_{i:04}"),
                    label: class.to_string(),
                    duration_s: duration,
                    source: source.to_string(),
                });
                i += 1;
            }
        }
    }
    DatasetManifest::new(DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(), entries)
        .expect("fixture manifest is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// 1, 2 or 3.
    pub split_index: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Test share of a class of `count` videos: 20%, rounded half up.
pub fn test_share(count: usize) -> usize {
    (2 * count + 5) / 10
}

/// Three stratified 80/20 splits; split `k` shuffles with `seed + k`.
pub fn make_splits(manifest: &DatasetManifest, seed: u64) -> Result<Vec<SplitPlan>> {
    let mut by_class: BTreeMap<&str, Vec<&str>> = manifest.class_names.iter().map(|c| (c.as_str(), vec![])).collect();
    for e in &manifest.entries {
        by_class.get_mut(e.label.as_str()).expect("validated label").push(&e.video_id);
    }
    for class in &manifest.class_names {
        let ids = by_class.get_mut(class.as_str()).expect("class present");
        if ids.len() < MIN_CLASS_SIZE {
            return Err(Error::ClassTooSmall {
                class: class.clone(),
                count: ids.len(),
            });
        }
        ids.sort_unstable();
    }

    (1..=NUM_SPLITS)
        .map(|k| {
            let split_seed = seed.wrapping_add(k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for class in &manifest.class_names {
                let mut ids = by_class[class.as_str()].clone();
                ids.shuffle(&mut rng);
                let n_test = test_share(ids.len());
                test.extend(ids[..n_test].iter().map(|s| s.to_string()));
                train.extend(ids[n_test..].iter().map(|s| s.to_string()));
            }
            train.sort_unstable();
            test.sort_unstable();
            Ok(SplitPlan {
                split_index: k,
                seed: split_seed,
                train_ids: train,
                test_ids: test,
            })
        })
        .collect()
}

/// Rows are ground truth, columns predictions plus a trailing "none" column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![vec![0; k + 1]; k],
        }
    }

    pub fn none_column(&self) -> usize {
        self.class_names.len()
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(r, row)| row.iter().enumerate().all(|(c, v)| r == c || *v == 0))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for c in &self.class_names {
            write!(out, ",{}", csv_field(c)).unwrap();
        }
        writeln!(out, ",{NONE_COLUMN}").unwrap();
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(&csv_field(name));
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split_index: usize,
    pub top1: f64,
    pub cm: ConfusionMatrix,
}

/// Scores one split. `None` predictions count as wrong.
pub fn evaluate(
    manifest: &DatasetManifest,
    split: &SplitPlan,
    predictions: &HashMap<String, Option<String>>,
) -> Result<SplitResult> {
    let missing: Vec<String> = split
        .test_ids
        .iter()
        .filter(|id| !predictions.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let labels: HashMap<&str, &str> = manifest
        .entries
        .iter()
        .map(|e| (e.video_id.as_str(), e.label.as_str()))
        .collect();
    let class_index: HashMap<&str, usize> = manifest
        .class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut cm = ConfusionMatrix::new(manifest.class_names.clone());
    let mut correct = 0usize;
    for id in &split.test_ids {
        let truth = labels
            .get(id.as_str())
            .ok_or_else(|| Error::Config(format!("test id {id:?} not in manifest")))?;
        let row = class_index[truth];
        let col = match &predictions[id] {
            Some(p) => *class_index
                .get(p.as_str())
                .ok_or_else(|| Error::Config(format!("{id}: predicted unknown class {p:?}")))?,
            None => cm.none_column(),
        };
        if col == row {
            correct += 1;
        }
        cm.counts[row][col] += 1;
    }
    let top1 = if split.test_ids.is_empty() {
        0.0
    } else {
        correct as f64 / split.test_ids.len() as f64
    };
    Ok(SplitResult {
        split_index: split.split_index,
        top1,
        cm,
    })
}

pub fn average_splits(scores: &[f64]) -> Result<f64> {
    if scores.len() != NUM_SPLITS {
        return Err(Error::SplitCount(scores.len()));
    }
    Ok(scores.iter().sum::<f64>() / NUM_SPLITS as f64)
}

/// Collapses a video's period decisions to one label: the most frequent
/// class, ties to the class decided first. All-`None` gives `None`.
pub fn video_prediction(decisions: &[Option<String>]) -> Option<String> {
    let mut tally: Vec<(&str, usize)> = Vec::new();
    for d in decisions.iter().flatten() {
        match tally.iter_mut().find(|(c, _)| *c == d.as_str()) {
            Some((_, n)) => *n += 1,
            None => tally.push((d.as_str(), 1)),
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (c, n) in tally {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: Vec<SplitResult>,
    pub mean_top1: f64,
}

impl EvalReport {
    /// Writes `report.json` and `cm_split{k}.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing report", e))?;
        let path = dir.join("report.json");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        for s in &self.splits {
            let path = dir.join(format!("cm_split{}.csv", s.split_index));
            std::fs::write(&path, s.cm.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

/// Full protocol: three splits, per-split scores, mean Top-1.
pub fn run_eval(
    manifest: &DatasetManifest,
    seed: u64,
    predictions: &HashMap<String, Option<String>>,
) -> Result<EvalReport> {
    let splits = make_splits(manifest, seed)?
        .iter()
        .map(|s| evaluate(manifest, s, predictions))
        .collect::<Result<Vec<_>>>()?;
    let mean_top1 = average_splits(&splits.iter().map(|s| s.top1).collect::<Vec<_>>())?;
    Ok(EvalReport { splits, mean_top1 })
}

/// Ground-truth predictions for every video.
pub fn oracle_predictions(manifest: &DatasetManifest) -> HashMap<String, Option<String>> {
    manifest
        .entries
        .iter()
        .map(|e| (e.video_id.clone(), Some(e.label.clone())))
        .collect()
}
