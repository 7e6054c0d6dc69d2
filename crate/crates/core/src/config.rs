//! JSON run configuration. Every key can be overridden with a dotted path,
//! e.g. `streams.0.lr=1e-4` or `fusion.mode="svm"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backbone::BackboneConfig;
use crate::data_model::{LabelSpace, LossWeights, ModalityKind};
use crate::datasets::synthetic::{SyntheticConfig, SyntheticPreset, LABELS_FILE, TEST_INDEX, TRAIN_INDEX};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionMode, StreamBranches, SvmParams};
use crate::io_util;
use crate::modality::TemporalWindow;
use crate::stream::{InputNorm, StreamConfig};

/// Label space given by preset name, by a JSON file path (relative to the
/// dataset root) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelsRef {
    Named(String),
    Inline(LabelSpace),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root: PathBuf,
    #[serde(default = "default_train")]
    pub train_index: PathBuf,
    #[serde(default = "default_test")]
    pub test_index: PathBuf,
    #[serde(default = "default_labels")]
    pub labels: LabelsRef,
}

fn default_train() -> PathBuf {
    TRAIN_INDEX.into()
}

fn default_test() -> PathBuf {
    TEST_INDEX.into()
}

fn default_labels() -> LabelsRef {
    LabelsRef::Named(LABELS_FILE.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub modality: ModalityKind,
    pub lr: f64,
    /// Defaults to the two-stage toy trunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<BackboneConfig>,
    #[serde(default = "default_roi")]
    pub roi_size: usize,
    #[serde(default = "default_f_width")]
    pub f_width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_norm: Option<InputNorm>,
}

fn default_roi() -> usize {
    4
}

fn default_f_width() -> usize {
    32
}

impl StreamSpec {
    pub fn new(modality: ModalityKind, lr: f64) -> Self {
        StreamSpec { modality, lr, backbone: None, roi_size: 4, f_width: 32, input_norm: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Network input `(height, width)`.
    pub input_size: (usize, usize),
    #[serde(default)]
    pub window: TemporalWindow,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub streams: Vec<StreamSpec>,
    pub loss_weights: LossWeights,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub deterministic: bool,
    #[serde(default)]
    pub hflip_prob: f64,
    pub fusion: FusionConfig,
    #[serde(default)]
    pub svm: SvmParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

fn default_batch() -> usize {
    8
}

fn yes() -> bool {
    true
}

impl RunConfig {
    /// Volleyball training settings: lr 1e-5 for every stream, weights 2/1/1,
    /// no flips, fusion over all branches except the posemap scene branch.
    pub fn volleyball(root: impl Into<PathBuf>, input_size: (usize, usize)) -> Self {
        let streams = ModalityKind::ALL
            .iter()
            .map(|&k| StreamSpec { backbone: Some(BackboneConfig::full_scale_mirror(k.channels(10))), ..StreamSpec::new(k, 1e-5) })
            .collect();
        RunConfig {
            dataset: DatasetSpec {
                root: root.into(),
                train_index: default_train(),
                test_index: default_test(),
                labels: LabelsRef::Named("volleyball".into()),
            },
            input_size,
            window: TemporalWindow::default(),
            cache_dir: "cache".into(),
            output_dir: "out".into(),
            streams,
            loss_weights: LossWeights::volleyball(),
            epochs: 10,
            batch_size: 8,
            seed: 0,
            deterministic: true,
            hflip_prob: 0.0,
            fusion: FusionConfig::volleyball_final(FusionMode::Avg),
            svm: SvmParams::default(),
            synthetic: None,
        }
    }

    /// Collective settings: lr 1e-5 for flows and 1e-4 for rgb and posemap,
    /// equal weights, random flips with probability 0.5.
    pub fn collective(root: impl Into<PathBuf>, input_size: (usize, usize)) -> Self {
        let mut cfg = RunConfig::volleyball(root, input_size);
        for s in &mut cfg.streams {
            s.lr = if s.modality.is_temporal() { 1e-5 } else { 1e-4 };
        }
        cfg.dataset.labels = LabelsRef::Named("collective".into());
        cfg.loss_weights = LossWeights::collective();
        cfg.hflip_prob = 0.5;
        cfg.fusion = FusionConfig {
            mode: FusionMode::Avg,
            streams: ModalityKind::ALL.iter().map(|&k| StreamBranches::both(k)).collect(),
        };
        cfg
    }

    /// Desk-scale run on generated data with the toy trunk.
    pub fn synthetic(preset: SyntheticPreset, root: impl Into<PathBuf>) -> Self {
        let synth = match preset {
            SyntheticPreset::Motion => SyntheticConfig::motion(),
            SyntheticPreset::Context => SyntheticConfig::context(),
        };
        let root = root.into();
        let kinds: Vec<ModalityKind> = match preset {
            SyntheticPreset::Motion => vec![ModalityKind::Rgb, ModalityKind::Flow],
            SyntheticPreset::Context => vec![ModalityKind::Rgb],
        };
        RunConfig {
            dataset: DatasetSpec {
                root: root.join("data"),
                train_index: default_train(),
                test_index: default_test(),
                labels: default_labels(),
            },
            input_size: synth.canvas,
            window: TemporalWindow { before: synth.middle_index, after: synth.frames - 1 - synth.middle_index },
            cache_dir: root.join("cache"),
            output_dir: root.join("out"),
            streams: kinds.iter().map(|&k| StreamSpec::new(k, 1e-3)).collect(),
            loss_weights: LossWeights::new(1.0, 1.0, 1.0).expect("positive weights"),
            epochs: match preset {
                SyntheticPreset::Motion => 12,
                SyntheticPreset::Context => 40,
            },
            batch_size: 8,
            seed: 0,
            deterministic: true,
            hflip_prob: 0.0,
            fusion: FusionConfig { mode: FusionMode::Avg, streams: kinds.iter().map(|&k| StreamBranches::both(k)).collect() },
            svm: SvmParams::default(),
            synthetic: Some(synth),
        }
    }

    /// Reads a config file, applies `key=value` overrides and resolves
    /// relative paths against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut value: Value = io_util::read_json(path)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::json(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset.root, &mut cfg.cache_dir, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self).map_err(|e| Error::json("config", e))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::json("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        if self.streams.is_empty() {
            return Err(Error::Config("no streams configured".into()));
        }
        for s in &self.streams {
            if !(s.lr > 0.0) || !s.lr.is_finite() {
                return Err(Error::Config(format!("{} learning rate must be positive, got {}", s.modality, s.lr)));
            }
        }
        for (i, s) in self.streams.iter().enumerate() {
            if self.streams[..i].iter().any(|t| t.modality == s.modality) {
                return Err(Error::Config(format!("stream {} listed twice", s.modality)));
            }
        }
        for b in &self.fusion.streams {
            if self.stream(b.stream).is_err() {
                return Err(Error::Config(format!("fusion uses {} which has no stream entry", b.stream)));
            }
        }
        self.loss_weights.validate()?;
        self.fusion.validate()?;
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config("hflip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn stream(&self, kind: ModalityKind) -> Result<&StreamSpec> {
        self.streams
            .iter()
            .find(|s| s.modality == kind)
            .ok_or_else(|| Error::Config(format!("no stream configured for {kind}")))
    }

    pub fn labels(&self) -> Result<LabelSpace> {
        match &self.dataset.labels {
            LabelsRef::Inline(space) => {
                space.validate()?;
                Ok(space.clone())
            }
            LabelsRef::Named(name) if name == "volleyball" => Ok(LabelSpace::volleyball()),
            LabelsRef::Named(name) if name == "collective" => Ok(LabelSpace::collective()),
            LabelsRef::Named(file) => {
                let space: LabelSpace = io_util::read_json(&self.dataset.root.join(file))?;
                space.validate()?;
                Ok(space)
            }
        }
    }

    pub fn stream_config(&self, kind: ModalityKind) -> Result<StreamConfig> {
        let spec = self.stream(kind)?;
        let channels = kind.channels(self.window.len());
        let backbone = spec.backbone.clone().unwrap_or_else(|| BackboneConfig::toy(channels));
        if backbone.input_channels != channels {
            return Err(Error::Config(format!(
                "{kind} backbone takes {} channels, the modality has {channels}",
                backbone.input_channels
            )));
        }
        let mut cfg = StreamConfig::new(kind, backbone, self.labels()?);
        cfg.roi_size = spec.roi_size;
        cfg.f_width = spec.f_width;
        cfg.loss_weights = self.loss_weights;
        if let Some(norm) = spec.input_norm {
            cfg.input_norm = norm;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets `a.b.0.c` in `root`. The value is parsed as JSON when possible
/// and taken as a plain string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::Config(format!("{key}: {part:?} is not an index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| Error::Config(format!("{key}: index {idx} out of range ({len})")))?
            }
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), Value::Null);
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                let Value::Object(map) = node else { unreachable!() };
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(Error::Config(format!("{key}: cannot descend into a scalar at {part:?}"))),
        };
    }
    *node = value;
    Ok(())
}
