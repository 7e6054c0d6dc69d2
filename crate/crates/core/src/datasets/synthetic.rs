//! Deterministic synthetic clips with controllable appearance, motion and
//! scene-context cues.
//!
//! * [`SyntheticPreset::Motion`]: movers left and right share one sprite, so
//!   the middle frame carries no direction information; one agent stands and
//!   the rest move in the direction that names the group.
//! * [`SyntheticPreset::Context`]: static agents in two appearances plus a
//!   colored marker strip at the top of the frame, far outside every person
//!   box; the group label is the majority appearance crossed with the
//!   marker color.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{validate_clip, write_clip_index, BoundingBox, Clip, LabelSpace, PersonAnn, ValidatedClip};
use crate::error::{Error, Result};
use crate::io_util;
use crate::modality::{heatmap_path, homography_path, Homography};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticPreset {
    Motion,
    Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub preset: SyntheticPreset,
    /// Canvas `(height, width)` in pixels.
    pub canvas: (usize, usize),
    /// Inclusive range of agents per clip.
    pub agents: (usize, usize),
    pub frames: usize,
    /// Index of the labeled frame inside the clip.
    pub middle_index: usize,
    /// Mover speed in pixels per frame.
    pub speed: i64,
    /// Horizontal camera pan in pixels per frame.
    pub camera_pan: i64,
    /// Amplitude of the static background stripes.
    pub texture: f64,
    pub train_clips: usize,
    pub test_clips: usize,
    pub heatmaps: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            preset: SyntheticPreset::Motion,
            canvas: (32, 48),
            agents: (3, 4),
            frames: 10,
            middle_index: 4,
            speed: 2,
            camera_pan: 0,
            texture: 12.0,
            train_clips: 160,
            test_clips: 80,
            heatmaps: true,
            seed: 0,
        }
    }
}

const SPRITE_H: usize = 6;
const SPRITE_W: usize = 4;
const LANE: usize = 8;
/// Rows reserved for the marker strip in the context preset.
const STRIP: usize = 6;
/// First agent row in the context preset.
const CONTEXT_TOP: usize = 20;

impl SyntheticConfig {
    pub fn motion() -> Self {
        SyntheticConfig::default()
    }

    pub fn context() -> Self {
        SyntheticConfig {
            preset: SyntheticPreset::Context,
            canvas: (48, 48),
            agents: (3, 3),
            speed: 0,
            train_clips: 320,
            test_clips: 160,
            ..SyntheticConfig::default()
        }
    }

    pub fn labels(&self) -> LabelSpace {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        match self.preset {
            SyntheticPreset::Motion => {
                LabelSpace::new(s(&["standing", "moving_left", "moving_right"]), s(&["left", "right"]))
            }
            SyntheticPreset::Context => {
                LabelSpace::new(s(&["pose_a", "pose_b"]), s(&["a_red", "a_blue", "b_red", "b_blue"]))
            }
        }
        .expect("preset label spaces are valid")
    }

    fn first_row(&self) -> usize {
        match self.preset {
            SyntheticPreset::Motion => 0,
            SyntheticPreset::Context => CONTEXT_TOP,
        }
    }

    fn lanes(&self) -> usize {
        self.canvas.0.saturating_sub(self.first_row()) / LANE
    }

    /// Horizontal travel of a mover over the clip, either side of the middle.
    fn travel(&self) -> usize {
        let span = self.middle_index.max(self.frames.saturating_sub(1 + self.middle_index));
        (self.speed.unsigned_abs() as usize) * span
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synthetic config: {m}")));
        if self.frames < 2 {
            return fail("need at least two frames per clip".into());
        }
        if self.middle_index >= self.frames {
            return fail(format!("middle_index {} outside {} frames", self.middle_index, self.frames));
        }
        let (lo, hi) = self.agents;
        let min_agents = match self.preset {
            SyntheticPreset::Motion => 3,
            SyntheticPreset::Context => 2,
        };
        if lo < min_agents || lo > hi {
            return fail(format!("agent range {lo}..={hi} needs at least {min_agents} agents"));
        }
        if hi > self.lanes() {
            return fail(format!("{hi} agents do not fit in {} lanes", self.lanes()));
        }
        if self.preset == SyntheticPreset::Motion && self.speed == 0 {
            return fail("motion preset needs nonzero speed".into());
        }
        if self.preset == SyntheticPreset::Context && self.speed != 0 {
            return fail("context agents are static".into());
        }
        if self.canvas.1 < SPRITE_W + 2 * self.travel() + 4 {
            return fail(format!("canvas width {} too small for the travel range", self.canvas.1));
        }
        if self.train_clips == 0 || self.test_clips == 0 {
            return fail("both splits need clips".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sprite {
    Walker,
    Stander,
    PoseA,
    PoseB,
}

impl Sprite {
    /// Mask rows, `#` marks body pixels.
    fn mask(self) -> [&'static str; SPRITE_H] {
        match self {
            Sprite::Walker => [".##.", "####", ".##.", ".##.", "#..#", "#..#"],
            Sprite::Stander => [".##.", ".##.", "####", "####", ".##.", ".##."],
            Sprite::PoseA => [".##.", "####", "#..#", ".##.", ".##.", "#..#"],
            Sprite::PoseB => ["#..#", ".##.", ".##.", "####", "#..#", ".##."],
        }
    }

    fn colors(self) -> [[u8; 3]; 2] {
        match self {
            Sprite::Walker => [[230, 140, 40], [120, 60, 10]],
            Sprite::Stander => [[60, 200, 90], [10, 90, 40]],
            Sprite::PoseA => [[230, 230, 230], [90, 90, 90]],
            Sprite::PoseB => [[240, 220, 60], [140, 60, 160]],
        }
    }

    /// Joint locations `(row, col)` inside the sprite: head, hands, feet.
    fn joints(self) -> [(f64, f64); 5] {
        [(0.5, 1.5), (1.5, 0.0), (1.5, 3.0), (5.5, 0.0), (5.5, 3.0)]
    }
}

/// One agent: sprite, velocity and position `(row, col)` in the middle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Agent {
    sprite: Sprite,
    action: usize,
    vx: i64,
    row: usize,
    col: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Scene {
    agents: Vec<Agent>,
    marker: Option<[u8; 3]>,
    phase: f64,
}

const RED: [u8; 3] = [220, 30, 30];
const BLUE: [u8; 3] = [30, 30, 220];
const BACKGROUND: f64 = 110.0;

impl Scene {
    /// Renders frame `t` of a clip.
    pub(crate) fn render(&self, cfg: &SyntheticConfig, t: usize) -> Array3<u8> {
        let (h, w) = cfg.canvas;
        let dt = t as i64 - cfg.middle_index as i64;
        let pan = cfg.camera_pan * t as i64;
        let mut img = Array3::from_shape_fn((h, w, 3), |(_, x, c)| {
            let wx = (x as i64 + pan) as f64;
            let stripe = cfg.texture * (std::f64::consts::TAU * wx / 8.0 + self.phase).sin();
            (BACKGROUND + stripe + 6.0 * c as f64).round().clamp(0.0, 255.0) as u8
        });
        if let Some(color) = self.marker {
            for y in 0..STRIP.min(h) {
                for x in 0..w {
                    for c in 0..3 {
                        img[[y, x, c]] = color[c];
                    }
                }
            }
        }
        for a in &self.agents {
            let left = a.col + a.vx * dt - pan;
            let [body, detail] = a.sprite.colors();
            for (r, row) in a.sprite.mask().iter().enumerate() {
                for (k, ch) in row.bytes().enumerate() {
                    if ch != b'#' {
                        continue;
                    }
                    let x = left + k as i64;
                    if x < 0 || x >= w as i64 {
                        continue;
                    }
                    let color = if (r + k) % 2 == 0 { body } else { detail };
                    for c in 0..3 {
                        img[[a.row + r, x as usize, c]] = color[c];
                    }
                }
            }
        }
        img
    }

    /// Background channel of a pose detector: low near joints.
    fn heatmap(&self, cfg: &SyntheticConfig) -> Array2<u8> {
        let (h, w) = cfg.canvas;
        let pan = cfg.camera_pan * cfg.middle_index as i64;
        let sigma2 = 2.0 * 1.0f64.powi(2);
        let joints: Vec<(f64, f64)> = self
            .agents
            .iter()
            .flat_map(|a| {
                let left = (a.col - pan) as f64;
                a.sprite.joints().map(|(r, c)| (a.row as f64 + r, left + c))
            })
            .collect();
        Array2::from_shape_fn((h, w), |(y, x)| {
            let peak = joints
                .iter()
                .map(|(jy, jx)| (-((y as f64 - jy).powi(2) + (x as f64 - jx).powi(2)) / sigma2).exp())
                .fold(0.0, f64::max);
            (255.0 * (1.0 - peak)).round() as u8
        })
    }

    fn boxes(&self, cfg: &SyntheticConfig) -> Vec<BoundingBox> {
        let (h, w) = (cfg.canvas.0 as f64, cfg.canvas.1 as f64);
        let pan = cfg.camera_pan * cfg.middle_index as i64;
        self.agents
            .iter()
            .map(|a| {
                let x = (a.col - pan) as f64 - 1.0;
                let y = a.row as f64 - 1.0;
                BoundingBox::from_pixels(x, y, SPRITE_W as f64 + 2.0, SPRITE_H as f64 + 2.0, w, h)
            })
            .collect()
    }

    #[cfg(test)]
    /// Same scene with every mover's direction reversed.
    #[cfg(test)]
    pub(crate) fn reversed(&self) -> Scene {
        let mut s = self.clone();
        for a in &mut s.agents {
            a.vx = -a.vx;
            a.action = match a.action {
                1 => 2,
                2 => 1,
                other => other,
            };
        }
        s
    }
}

/// Group rule of the motion preset: majority direction of the movers.
fn majority_direction(actions: &[usize]) -> usize {
    let left = actions.iter().filter(|&&a| a == 1).count();
    let right = actions.iter().filter(|&&a| a == 2).count();
    usize::from(right > left)
}

/// Group rule of the context preset: majority appearance × marker color.
fn appearance_and_marker(actions: &[usize], blue: bool) -> usize {
    let b = actions.iter().filter(|&&a| a == 1).count();
    let majority_b = 2 * b > actions.len();
    2 * usize::from(majority_b) + usize::from(blue)
}

pub(crate) fn sample_scene(cfg: &SyntheticConfig, group: usize, rng: &mut impl Rng) -> Scene {
    let n = rng.random_range(cfg.agents.0..=cfg.agents.1);
    let mut lanes: Vec<usize> = (0..cfg.lanes()).collect();
    lanes.shuffle(rng);
    let travel = cfg.travel() as i64;
    let max_col = cfg.canvas.1 as i64 - SPRITE_W as i64 - travel - 2;
    let min_col = travel + 2;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut agents = Vec::with_capacity(n);
    let place = |k: usize, sprite: Sprite, action: usize, vx: i64, rng: &mut dyn rand::RngCore| Agent {
        sprite,
        action,
        vx,
        row: cfg.first_row() + lanes[k] * LANE + 1,
        col: rng.random_range(min_col..=max_col),
    };
    match cfg.preset {
        SyntheticPreset::Motion => {
            let dir = if group == 0 { -1 } else { 1 };
            let with = if group == 0 { 1 } else { 2 };
            agents.push(place(0, Sprite::Stander, 0, 0, rng));
            for k in 1..n {
                agents.push(place(k, Sprite::Walker, with, dir * cfg.speed, rng));
            }
            agents.shuffle(rng);
            Scene { agents, marker: None, phase }
        }
        SyntheticPreset::Context => {
            let majority = group / 2;
            let blue = group % 2 == 1;
            let sprites = [Sprite::PoseA, Sprite::PoseB];
            for k in 0..n {
                // one dissenting agent when the majority survives it
                let action = if k == n - 1 && n >= 3 { 1 - majority } else { majority };
                agents.push(place(k, sprites[action], action, 0, rng));
            }
            agents.shuffle(rng);
            Scene { agents, marker: Some(if blue { BLUE } else { RED }), phase }
        }
    }
}

fn group_of(cfg: &SyntheticConfig, scene: &Scene) -> usize {
    let actions: Vec<usize> = scene.agents.iter().map(|a| a.action).collect();
    match cfg.preset {
        SyntheticPreset::Motion => majority_direction(&actions),
        SyntheticPreset::Context => appearance_and_marker(&actions, scene.marker == Some(BLUE)),
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub labels: LabelSpace,
    pub train: Vec<ValidatedClip>,
    pub test: Vec<ValidatedClip>,
}

pub const TRAIN_INDEX: &str = "train.jsonl";
pub const TEST_INDEX: &str = "test.jsonl";
pub const LABELS_FILE: &str = "labels.json";

fn write_clip(cfg: &SyntheticConfig, root: &Path, clip_id: &str, scene: &Scene) -> Result<Vec<String>> {
    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let rel = format!("frames/{clip_id}/f{t:02}.png");
        let path = root.join(&rel);
        io_util::save_rgb(&path, &scene.render(cfg, t))?;
        if cfg.camera_pan != 0 && t + 1 < cfg.frames {
            io_util::write_json(&homography_path(&path), &Homography::translation(-cfg.camera_pan as f64, 0.0))?;
        }
        if cfg.heatmaps && t == cfg.middle_index {
            io_util::save_gray(&heatmap_path(&path), &scene.heatmap(cfg))?;
        }
        frames.push(rel);
    }
    Ok(frames)
}

/// Writes frames, middle-frame heatmaps, homography sidecars (when the
/// camera pans), both clip indexes and the label space under `root`.
pub fn generate_synthetic(cfg: &SyntheticConfig, root: &Path) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let labels = cfg.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = |name: &str, count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<ValidatedClip>> {
        // exact stratification, then a seeded shuffle
        let mut groups: Vec<usize> = (0..count).map(|i| i % labels.num_groups()).collect();
        groups.shuffle(rng);
        let mut clips = Vec::with_capacity(count);
        for (i, g) in groups.into_iter().enumerate() {
            let scene = sample_scene(cfg, g, rng);
            let group = group_of(cfg, &scene);
            debug_assert_eq!(group, g);
            let clip_id = format!("{name}_{i:05}");
            let frames = write_clip(cfg, root, &clip_id, &scene)?;
            let persons = scene
                .boxes(cfg)
                .into_iter()
                .zip(&scene.agents)
                .map(|(bbox, a)| PersonAnn { bbox, action: a.action })
                .collect();
            let clip = Clip { clip_id, frame_paths: frames, middle_index: cfg.middle_index, group, persons };
            clips.push(validate_clip(clip, &labels)?);
        }
        Ok(clips)
    };
    let train = split("train", cfg.train_clips, &mut rng)?;
    let test = split("test", cfg.test_clips, &mut rng)?;
    write_clip_index(&root.join(TRAIN_INDEX), &train)?;
    write_clip_index(&root.join(TEST_INDEX), &test)?;
    io_util::write_json(&root.join(LABELS_FILE), &labels)?;
    Ok(SyntheticDataset { root: root.to_path_buf(), labels, train, test })
}
