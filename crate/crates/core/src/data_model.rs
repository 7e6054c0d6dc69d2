//! Canonical sample, label and prediction types shared by every stage.
//!
//! Clips are validated once against a [`LabelSpace`] and carried around as
//! [`ValidatedClip`] afterwards; nothing downstream re-checks box geometry or
//! label ranges.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered action and group-activity class names. Class index is position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub action_classes: Vec<String>,
    pub group_classes: Vec<String>,
}

pub const VOLLEYBALL_GROUP_CLASSES: [&str; 8] = [
    "right set",
    "right spike",
    "right pass",
    "right winpoint",
    "left set",
    "left spike",
    "left pass",
    "left winpoint",
];

pub const VOLLEYBALL_ACTION_CLASSES: [&str; 9] = [
    "blocking", "digging", "falling", "jumping", "moving", "setting", "spiking", "standing",
    "waiting",
];

pub const COLLECTIVE_CLASSES: [&str; 5] = ["crossing", "waiting", "queuing", "walking", "talking"];

impl LabelSpace {
    pub fn new(action_classes: Vec<String>, group_classes: Vec<String>) -> Result<Self> {
        let space = LabelSpace { action_classes, group_classes };
        space.validate()?;
        Ok(space)
    }

    pub fn volleyball() -> Self {
        LabelSpace {
            action_classes: VOLLEYBALL_ACTION_CLASSES.iter().map(|s| s.to_string()).collect(),
            group_classes: VOLLEYBALL_GROUP_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Collective Activity: the group label is the most frequent person action,
    /// so both spaces share the same five names.
    pub fn collective() -> Self {
        let names: Vec<String> = COLLECTIVE_CLASSES.iter().map(|s| s.to_string()).collect();
        LabelSpace { action_classes: names.clone(), group_classes: names }
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_classes.is_empty() {
            return Err(Error::InvalidLabelSpace("need at least one action class".into()));
        }
        if self.group_classes.len() < 2 {
            return Err(Error::InvalidLabelSpace("need at least two group classes".into()));
        }
        for (what, names) in [("action", &self.action_classes), ("group", &self.group_classes)] {
            let mut seen = HashSet::new();
            for name in names {
                if !seen.insert(name.as_str()) {
                    return Err(Error::InvalidLabelSpace(format!("duplicate {what} class {name:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        self.action_classes.len()
    }

    pub fn num_groups(&self) -> usize {
        self.group_classes.len()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.action_classes.iter().position(|c| c == name)
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.group_classes.iter().position(|c| c == name)
    }
}

/// Axis-aligned box in coordinates normalized to the frame size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        BoundingBox { x1: v[0], y1: v[1], x2: v[2], y2: v[3] }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }

    /// Converts a pixel-space `(x, y, w, h)` box, clamping it into the frame.
    pub fn from_pixels(x: f64, y: f64, w: f64, h: f64, frame_w: f64, frame_h: f64) -> Self {
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        BoundingBox {
            x1: clamp(x / frame_w),
            y1: clamp(y / frame_h),
            x2: clamp((x + w) / frame_w),
            y2: clamp((y + h) / frame_h),
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("non-finite bbox coordinate".into());
        }
        if coords.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(format!("bbox {coords:?} outside [0,1]"));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(format!("degenerate bbox {coords:?}"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    /// Mirror about the vertical center line.
    pub fn hflip(&self) -> Self {
        BoundingBox { x1: 1.0 - self.x2, y1: self.y1, x2: 1.0 - self.x1, y2: self.y2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonAnn {
    pub bbox: BoundingBox,
    pub action: usize,
}

impl PersonAnn {
    pub fn one_hot(&self, num_actions: usize) -> Vec<f64> {
        one_hot(self.action, num_actions)
    }
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if index < len {
        v[index] = 1.0;
    }
    v
}

/// One labeled sample as it appears in the canonical clip index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    #[serde(rename = "frames")]
    pub frame_paths: Vec<String>,
    pub middle_index: usize,
    pub group: usize,
    pub persons: Vec<PersonAnn>,
}

/// A clip that satisfied every invariant of its label space.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedClip(Clip);

impl ValidatedClip {
    pub fn clip(&self) -> &Clip {
        &self.0
    }

    pub fn into_inner(self) -> Clip {
        self.0
    }

    pub fn id(&self) -> &str {
        &self.0.clip_id
    }

    pub fn persons(&self) -> &[PersonAnn] {
        &self.0.persons
    }

    pub fn group(&self) -> usize {
        self.0.group
    }

    pub fn middle_frame(&self) -> &str {
        &self.0.frame_paths[self.0.middle_index]
    }

    /// Same clip with every box mirrored horizontally.
    pub fn hflipped(&self) -> ValidatedClip {
        let mut clip = self.0.clone();
        for p in &mut clip.persons {
            p.bbox = p.bbox.hflip();
        }
        ValidatedClip(clip)
    }
}

impl std::ops::Deref for ValidatedClip {
    type Target = Clip;

    fn deref(&self) -> &Clip {
        &self.0
    }
}

pub fn validate_clip(clip: Clip, space: &LabelSpace) -> Result<ValidatedClip> {
    let fail = |reason: String| Error::InvalidClip { clip_id: clip.clip_id.clone(), reason };
    if clip.frame_paths.is_empty() {
        return Err(fail("no frames".into()));
    }
    if clip.middle_index >= clip.frame_paths.len() {
        return Err(fail(format!(
            "middle_index {} out of range for {} frames",
            clip.middle_index,
            clip.frame_paths.len()
        )));
    }
    if clip.persons.is_empty() {
        return Err(fail("empty persons".into()));
    }
    for (n, person) in clip.persons.iter().enumerate() {
        if let Err(reason) = person.bbox.check() {
            return Err(fail(format!("person {n}: {reason}")));
        }
        if person.action >= space.num_actions() {
            return Err(fail(format!(
                "person {n}: action label {} out of range (N_I = {})",
                person.action,
                space.num_actions()
            )));
        }
    }
    if clip.group >= space.num_groups() {
        return Err(fail(format!(
            "group label {} out of range (N_G = {})",
            clip.group,
            space.num_groups()
        )));
    }
    Ok(ValidatedClip(clip))
}

pub fn write_clip_index(path: &Path, clips: &[ValidatedClip]) -> Result<()> {
    let mut buf = Vec::new();
    for clip in clips {
        serde_json::to_writer(&mut buf, clip).map_err(|e| Error::json(path.display().to_string(), e))?;
        buf.push(b'\n');
    }
    crate::io_util::write_atomic(path, &buf)
}

pub fn read_clip_index(path: &Path, space: &LabelSpace) -> Result<Vec<ValidatedClip>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_clip_lines(BufReader::new(file), &path.display().to_string(), space)
}

pub fn parse_clip_lines(reader: impl BufRead, source: &str, space: &LabelSpace) -> Result<Vec<ValidatedClip>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{source}:{}", lineno + 1);
        let clip: Clip = serde_json::from_str(&line).map_err(|e| Error::json(location, e))?;
        out.push(validate_clip(clip, space)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    Rgb,
    Flow,
    WarpedFlow,
    Posemap,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 4] =
        [ModalityKind::Rgb, ModalityKind::Flow, ModalityKind::WarpedFlow, ModalityKind::Posemap];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModalityKind::Rgb => "rgb",
            ModalityKind::Flow => "flow",
            ModalityKind::WarpedFlow => "warped_flow",
            ModalityKind::Posemap => "posemap",
        }
    }

    /// Input depth for a temporal window of `window` frames.
    pub fn channels(&self, window: usize) -> usize {
        match self {
            ModalityKind::Rgb | ModalityKind::Posemap => 3,
            ModalityKind::Flow | ModalityKind::WarpedFlow => 2 * window.saturating_sub(1),
        }
    }

    pub fn is_temporal(&self) -> bool {
        matches!(self, ModalityKind::Flow | ModalityKind::WarpedFlow)
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {s:?}")))
    }
}

/// `H × W × D` input tensor for one modality of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityStack {
    pub kind: ModalityKind,
    pub data: Array3<f64>,
    pub clip_id: String,
}

impl ModalityStack {
    pub fn new(kind: ModalityKind, data: Array3<f64>, clip_id: impl Into<String>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("{kind} stack contains non-finite values")));
        }
        if matches!(kind, ModalityKind::Rgb | ModalityKind::Posemap) && data.dim().2 != 3 {
            return Err(Error::Shape(format!("{kind} stack must have 3 channels, got {}", data.dim().2)));
        }
        if kind.is_temporal() && data.dim().2 % 2 != 0 {
            return Err(Error::Shape(format!("{kind} stack must have an even channel count")));
        }
        Ok(ModalityStack { kind, data, clip_id: clip_id.into() })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn depth(&self) -> usize {
        self.data.dim().2
    }

    /// Horizontal mirror. Flow x-components (even channels) change sign.
    pub fn hflipped(&self) -> ModalityStack {
        let (h, w, d) = self.data.dim();
        let mut out = Array3::zeros((h, w, d));
        for y in 0..h {
            for x in 0..w {
                for c in 0..d {
                    let v = self.data[[y, w - 1 - x, c]];
                    out[[y, x, c]] = if self.kind.is_temporal() && c % 2 == 0 { -v } else { v };
                }
            }
        }
        ModalityStack { kind: self.kind, data: out, clip_id: self.clip_id.clone() }
    }
}

/// Outputs of one stream for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPrediction {
    pub person_actions: Vec<Vec<f64>>,
    pub group_person: Vec<f64>,
    pub group_scene: Vec<f64>,
}

impl StreamPrediction {
    pub fn check(&self, tol: f64) -> std::result::Result<(), String> {
        let vectors = self
            .person_actions
            .iter()
            .chain([&self.group_person, &self.group_scene]);
        for v in vectors {
            if v.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err("probability outside [0,1]".into());
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(format!("probability vector sums to {sum}"));
            }
        }
        Ok(())
    }
}

/// One line of a per-stream score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    #[serde(flatten)]
    pub prediction: StreamPrediction,
}

pub fn write_score_dump(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::json(path.display().to_string(), e))?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    crate::io_util::write_atomic(path, &buf)
}

pub fn read_score_dump(path: &Path) -> Result<Vec<ScoreRecord>> {
    crate::io_util::read_json_lines(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_i: f64,
    pub w_g: f64,
    pub w_gc: f64,
}

impl LossWeights {
    pub fn new(w_i: f64, w_g: f64, w_gc: f64) -> Result<Self> {
        let w = LossWeights { w_i, w_g, w_gc };
        w.validate()?;
        Ok(w)
    }

    pub fn volleyball() -> Self {
        LossWeights { w_i: 2.0, w_g: 1.0, w_gc: 1.0 }
    }

    pub fn collective() -> Self {
        LossWeights { w_i: 1.0, w_g: 1.0, w_gc: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_i, self.w_g, self.w_gc];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be nonnegative, got {ws:?}")));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::volleyball()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(persons: Vec<PersonAnn>, group: usize) -> Clip {
        Clip {
            clip_id: "c0".into(),
            frame_paths: (0..10).map(|i| format!("f{i}.png")).collect(),
            middle_index: 4,
            group,
            persons,
        }
    }

    #[test]
    fn accepts_valid_clip() {
        let space = LabelSpace::volleyball();
        let c = clip(vec![PersonAnn { bbox: BoundingBox::new(0.1, 0.1, 0.5, 0.9), action: 0 }], 0);
        assert!(validate_clip(c, &space).is_ok());
    }

    #[test]
    fn rejects_degenerate_bbox() {
        let space = LabelSpace::volleyball();
        let c = clip(vec![PersonAnn { bbox: BoundingBox::new(0.3, 0.1, 0.3, 0.9), action: 0 }], 0);
        let err = validate_clip(c, &space).unwrap_err().to_string();
        assert!(err.contains("degenerate bbox"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_labels_and_empty_persons() {
        let space = LabelSpace::volleyball();
        let good = PersonAnn { bbox: BoundingBox::new(0.1, 0.1, 0.2, 0.2), action: 0 };
        let bad_action = PersonAnn { action: 9, ..good.clone() };
        assert!(validate_clip(clip(vec![bad_action], 0), &space).is_err());
        assert!(validate_clip(clip(vec![good.clone()], 8), &space).is_err());
        let err = validate_clip(clip(vec![], 0), &space).unwrap_err().to_string();
        assert!(err.contains("empty persons"));
        let mut c = clip(vec![good], 0);
        c.middle_index = 10;
        assert!(validate_clip(c, &space).is_err());
    }

    #[test]
    fn volleyball_shaped_clip_with_twelve_players() {
        let space = LabelSpace::volleyball();
        let persons = (0..12)
            .map(|i| {
                let x = i as f64 / 13.0;
                PersonAnn { bbox: BoundingBox::new(x, 0.4, x + 0.05, 0.7), action: i % 9 }
            })
            .collect();
        let group = space.group_index("right spike").unwrap();
        let v = validate_clip(clip(persons, group), &space).unwrap();
        assert_eq!(v.persons().len(), 12);
    }

    #[test]
    fn label_space_rules() {
        assert!(LabelSpace::new(vec!["a".into()], vec!["x".into()]).is_err());
        assert!(LabelSpace::new(vec!["a".into(), "a".into()], vec!["x".into(), "y".into()]).is_err());
        assert!(LabelSpace::new(vec![], vec!["x".into(), "y".into()]).is_err());
        assert_eq!(LabelSpace::volleyball().num_groups(), 8);
        assert_eq!(LabelSpace::volleyball().num_actions(), 9);
        assert_eq!(LabelSpace::collective().num_actions(), 5);
    }

    #[test]
    fn loss_weights_need_a_positive_entry() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 1.0).is_err());
        assert!(LossWeights::new(0.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn canonical_json_keys() {
        let space = LabelSpace::collective();
        let c = clip(vec![PersonAnn { bbox: BoundingBox::new(0.1, 0.2, 0.3, 0.4), action: 2 }], 1);
        let v = validate_clip(c, &space).unwrap();
        let json: serde_json::Value = serde_json::to_value(&v).unwrap();
        assert_eq!(json["persons"][0]["bbox"], serde_json::json!([0.1, 0.2, 0.3, 0.4]));
        assert!(json["frames"].is_array());
        assert_eq!(json["middle_index"], 4);
    }

    #[test]
    fn hflip_negates_flow_x_channels() {
        let mut data = Array3::zeros((1, 2, 2));
        data[[0, 0, 0]] = 1.0;
        data[[0, 0, 1]] = 2.0;
        let s = ModalityStack::new(ModalityKind::Flow, data, "c").unwrap();
        let f = s.hflipped();
        assert_eq!(f.data[[0, 1, 0]], -1.0);
        assert_eq!(f.data[[0, 1, 1]], 2.0);
    }

    fn arb_person(n_actions: usize) -> impl Strategy<Value = PersonAnn> {
        (0.0f64..0.9, 0.0f64..0.9, 0.01f64..0.1, 0.01f64..0.1, 0..n_actions).prop_map(|(x, y, w, h, a)| {
            PersonAnn { bbox: BoundingBox::new(x, y, x + w, y + h), action: a }
        })
    }

    proptest! {
        #[test]
        fn one_hot_has_single_one(action in 0usize..9) {
            let p = PersonAnn { bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0), action };
            let v = p.one_hot(9);
            prop_assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
            prop_assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 8);
            prop_assert_eq!(v[action], 1.0);
        }

        #[test]
        fn clip_index_round_trip(persons in prop::collection::vec(arb_person(9), 1..14), group in 0usize..8) {
            let space = LabelSpace::volleyball();
            let v = validate_clip(clip(persons, group), &space).unwrap();
            let line = serde_json::to_string(&v).unwrap();
            let back = parse_clip_lines(line.as_bytes(), "mem", &space).unwrap();
            prop_assert_eq!(back, vec![v]);
        }
    }
}
