use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Preset, TrainConfig};
use crate::backbone::Widths;
use crate::datasets::{
    build_splits, load_canonical, resample, resolve_data_path, scripted, Catalog, MotionSequence, SplitProtocol,
    SplitRole,
};
use crate::error::{ProgipError, Result};
use crate::skeleton::SkeletonModel;

/// Procedurally scripted training data, generated on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Total length of generated motion.
    pub seconds: f64,
    #[serde(default = "default_clip_seconds")]
    pub clip_seconds: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clip_seconds() -> f64 {
    60.0
}

fn default_split() -> SplitRole {
    SplitRole::Train
}

/// JSON description of a training run.
///
/// ```json
/// {
///   "preset": "desk",
///   "catalog": "data/catalog.json",
///   "split": "train",
///   "overrides": {"epochs": 3, "lr": 0.001},
///   "checkpoint_every": 1,
///   "output": "models/desk"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainManifest {
    /// Canonical sequence directories.
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    /// Which catalog split to train on.
    #[serde(default = "default_split")]
    pub split: SplitRole,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub preset: Preset,
    /// [`TrainConfig`] fields replacing the preset's.
    #[serde(default)]
    pub overrides: Map<String, Value>,
    /// [`Widths`] fields replacing the preset's.
    #[serde(default)]
    pub widths: Map<String, Value>,
    /// Save the bundle every this many epochs (always at the end).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    pub output: PathBuf,
    /// Existing bundle to start from (required for fine-tuning).
    #[serde(default)]
    pub init: Option<PathBuf>,
}

fn merge<T: Serialize + for<'de> Deserialize<'de>>(base: &T, overrides: &Map<String, Value>, what: &str) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("struct serializes to an object");
    for (k, v) in overrides {
        if !obj.contains_key(k) {
            return Err(ProgipError::Config(format!("unknown {what} field {k:?}")));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| ProgipError::Config(format!("{what}: {e}")))
}

impl TrainManifest {
    /// Parses a manifest; relative paths are taken relative to its directory
    /// unless they exist under `PROGIP_DATA_DIR`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: TrainManifest = serde_json::from_str(&text).map_err(|e| ProgipError::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            let resolved = resolve_data_path(p);
            if resolved.is_relative() && !resolved.exists() {
                *p = base.join(&*p);
            } else {
                *p = resolved;
            }
        };
        m.datasets.iter_mut().for_each(fix);
        if let Some(c) = m.catalog.as_mut() {
            fix(c);
        }
        if m.output.is_relative() {
            m.output = base.join(&m.output);
        }
        if let Some(i) = m.init.as_mut() {
            fix(i);
        }
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg: TrainConfig = merge(&self.preset.train_config(), &self.overrides, "training config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn widths(&self) -> Result<Widths> {
        merge(&self.preset.widths(), &self.widths, "widths")
    }

    /// Every listed sequence, resampled to `hz`.
    pub fn sequences(&self, skel: &SkeletonModel, hz: f64) -> Result<Vec<MotionSequence>> {
        let mut dirs = self.datasets.clone();
        if let Some(cat) = &self.catalog {
            let catalog = Catalog::load(cat)?;
            let splits = build_splits(&catalog, &SplitProtocol::default())?;
            dirs.extend(splits.role(self.split).iter().map(|e| e.path.clone()));
        }
        let mut out = Vec::with_capacity(dirs.len());
        for d in dirs {
            let seq = load_canonical(&d)?;
            out.push(if seq.framerate == hz { seq } else { resample(&seq, hz) });
        }
        if let Some(s) = &self.synthetic {
            out.extend(synthetic_corpus(skel, s, hz));
        }
        if out.is_empty() {
            return Err(ProgipError::Config("manifest lists no training data".into()));
        }
        Ok(out)
    }
}

/// Mixed scripted clips totalling `spec.seconds`.
pub fn synthetic_corpus(skel: &SkeletonModel, spec: &SyntheticSpec, hz: f64) -> Vec<MotionSequence> {
    let mut out = Vec::new();
    let mut remaining = spec.seconds;
    let mut k = 0;
    while remaining > 1e-9 {
        let len = remaining.min(spec.clip_seconds);
        out.push(scripted::mixed(skel, len, hz, spec.seed.wrapping_add(k)));
        remaining -= len;
        k += 1;
    }
    out
}
