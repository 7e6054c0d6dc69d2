//! Dataset adapters. Real annotation layouts are normalized straight into
//! the canonical clip index; the synthetic generator writes the same form.

pub mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use crate::data_model::{
    validate_clip, BoundingBox, Clip, LabelSpace, PersonAnn, ValidatedClip, VOLLEYBALL_ACTION_CLASSES,
};
use crate::error::{Error, Result};
use crate::modality::TemporalWindow;

pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset, SyntheticPreset};

/// Frames stored around each labeled Volleyball frame.
pub const VOLLEYBALL_CONTEXT: i64 = 20;

/// Most frequent action; ties go to the lowest class index.
pub fn derive_group_label(actions: &[usize]) -> Result<usize> {
    let max = *actions.iter().max().ok_or_else(|| Error::Config("cannot derive a group label from no actions".into()))?;
    let mut counts = vec![0usize; max + 1];
    for &a in actions {
        counts[a] += 1;
    }
    let best = *counts.iter().max().unwrap_or(&0);
    Ok(counts.iter().position(|&c| c == best).unwrap_or(0))
}

fn volleyball_group_name(token: &str) -> Option<&'static str> {
    let norm = token.to_ascii_lowercase().replace('-', "_");
    Some(match norm.as_str() {
        "r_set" => "right set",
        "r_spike" => "right spike",
        "r_pass" => "right pass",
        "r_winpoint" => "right winpoint",
        "l_set" => "left set",
        "l_spike" => "left spike",
        "l_pass" => "left pass",
        "l_winpoint" => "left winpoint",
        _ => return None,
    })
}

fn parse_num(token: Option<&str>, what: &str, location: &str) -> Result<f64> {
    let token = token.ok_or_else(|| Error::Parse { location: location.into(), message: format!("missing {what}") })?;
    token.parse::<f64>().map_err(|_| Error::Parse {
        location: location.into(),
        message: format!("{what} {token:?} is not a number"),
    })
}

fn pixel_box(vals: [f64; 4], frame: (u32, u32), location: &str) -> Result<BoundingBox> {
    let [x, y, w, h] = vals;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::Parse { location: location.into(), message: format!("malformed box {vals:?}") });
    }
    let b = BoundingBox::from_pixels(x, y, w, h, frame.0 as f64, frame.1 as f64);
    b.check().map_err(|message| Error::Parse { location: location.into(), message })?;
    Ok(b)
}

fn frame_size(path: &Path, given: Option<(u32, u32)>) -> Result<(u32, u32)> {
    match given {
        Some(s) => Ok(s),
        None => image::image_dimensions(path).map_err(|source| Error::Image { path: path.to_path_buf(), source }),
    }
}

/// Published Volleyball layout: `<root>/<video>/annotations.txt` with one
/// labeled frame per line and `<root>/<video>/<frame>/<n>.jpg` holding the
/// 41 frames around it.
#[derive(Debug, Clone)]
pub struct VolleyballLayout {
    pub root: PathBuf,
    pub videos: Vec<String>,
    /// Frame `(width, height)`; read from the middle frame when absent.
    pub frame_size: Option<(u32, u32)>,
}

pub fn parse_volleyball(layout: &VolleyballLayout) -> Result<Vec<ValidatedClip>> {
    let space = LabelSpace::volleyball();
    let mut clips = Vec::new();
    for video in &layout.videos {
        let path = layout.root.join(video).join("annotations.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), lineno + 1);
            clips.push(parse_volleyball_line(line, video, layout, &space, &location)?);
        }
    }
    Ok(clips)
}

fn parse_volleyball_line(
    line: &str,
    video: &str,
    layout: &VolleyballLayout,
    space: &LabelSpace,
    location: &str,
) -> Result<ValidatedClip> {
    let mut tokens = line.split_whitespace();
    let frame_tok = tokens.next().unwrap_or_default();
    let frame_id: i64 = frame_tok.split('.').next().unwrap_or_default().parse().map_err(|_| Error::Parse {
        location: location.into(),
        message: format!("bad frame name {frame_tok:?}"),
    })?;
    let group_tok = tokens.next().ok_or_else(|| Error::Parse { location: location.into(), message: "missing group label".into() })?;
    let group_name = volleyball_group_name(group_tok)
        .ok_or_else(|| Error::UnknownLabel { token: group_tok.into(), location: location.into() })?;
    let group = space.group_index(group_name).expect("mapped names are in the label space");

    let frames: Vec<String> = (-VOLLEYBALL_CONTEXT..=VOLLEYBALL_CONTEXT)
        .map(|o| format!("{video}/{frame_id}/{}.jpg", frame_id + o))
        .collect();
    let middle = VOLLEYBALL_CONTEXT as usize;
    let size = frame_size(&layout.root.join(&frames[middle]), layout.frame_size)?;

    let rest: Vec<&str> = tokens.collect();
    if rest.len() % 5 != 0 {
        return Err(Error::Parse {
            location: location.into(),
            message: format!("{} trailing tokens do not form whole person records", rest.len() % 5),
        });
    }
    let mut persons = Vec::with_capacity(rest.len() / 5);
    for rec in rest.chunks(5) {
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = parse_num(Some(rec[k]), "box coordinate", location)?;
        }
        let name = rec[4].to_ascii_lowercase();
        let action = VOLLEYBALL_ACTION_CLASSES
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::UnknownLabel { token: rec[4].into(), location: location.into() })?;
        persons.push(PersonAnn { bbox: pixel_box(vals, size, location)?, action });
    }
    let clip = Clip {
        clip_id: format!("{video}_{frame_id}"),
        frame_paths: frames,
        middle_index: middle,
        group,
        persons,
    };
    validate_clip(clip, space)
}

/// Published Collective Activity layout: `<root>/<seq>/annotations.txt`
/// with tab or space separated `frame x y w h action pose` rows and frames
/// `<root>/<seq>/frameNNNN.jpg` numbered from 1.
#[derive(Debug, Clone)]
pub struct CollectiveLayout {
    pub root: PathBuf,
    pub sequences: Vec<String>,
    pub frame_size: Option<(u32, u32)>,
    pub window: TemporalWindow,
}

/// Numeric action id 1 marks unlabeled persons; 2..=6 are the five classes.
const COLLECTIVE_UNLABELED: i64 = 1;

fn count_frames(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for e in entries {
        let name = e.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("frame") && (name.ends_with(".jpg") || name.ends_with(".png")) {
            n += 1;
        }
    }
    Ok(n)
}

fn collective_ext(dir: &Path) -> &'static str {
    if dir.join("frame0001.png").exists() {
        "png"
    } else {
        "jpg"
    }
}

pub fn parse_collective(layout: &CollectiveLayout) -> Result<Vec<ValidatedClip>> {
    let space = LabelSpace::collective();
    let mut clips = Vec::new();
    for seq in &layout.sequences {
        let dir = layout.root.join(seq);
        let path = dir.join("annotations.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let total = count_frames(&dir)?;
        if total == 0 {
            return Err(Error::Parse { location: dir.display().to_string(), message: "no frame images".into() });
        }
        let ext = collective_ext(&dir);

        // frame number → persons, in file order
        let mut labeled: Vec<(usize, Vec<PersonAnn>)> = Vec::new();
        let mut size = layout.frame_size;
        for (lineno, line) in text.lines().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), lineno + 1);
            if toks.len() < 6 {
                return Err(Error::Parse { location, message: format!("expected at least 6 fields, got {}", toks.len()) });
            }
            let frame = parse_num(Some(toks[0]), "frame number", &location)?;
            if frame < 1.0 || frame.fract() != 0.0 || frame as usize > total {
                return Err(Error::Parse { location, message: format!("frame {frame} outside 1..={total}") });
            }
            let frame = frame as usize;
            let action_id: i64 = toks[5].parse().map_err(|_| Error::UnknownLabel { token: toks[5].into(), location: location.clone() })?;
            if action_id == COLLECTIVE_UNLABELED {
                continue;
            }
            if !(2..=6).contains(&action_id) {
                return Err(Error::UnknownLabel { token: toks[5].into(), location });
            }
            let mut vals = [0.0; 4];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = parse_num(Some(toks[k + 1]), "box coordinate", &location)?;
            }
            let fs_ = match size {
                Some(s) => s,
                None => {
                    let s = frame_size(&dir.join(format!("frame{frame:04}.{ext}")), None)?;
                    size = Some(s);
                    s
                }
            };
            let person = PersonAnn { bbox: pixel_box(vals, fs_, &location)?, action: (action_id - 2) as usize };
            match labeled.iter_mut().find(|(f, _)| *f == frame) {
                Some((_, ps)) => ps.push(person),
                None => labeled.push((frame, vec![person])),
            }
        }

        for (frame, persons) in labeled {
            let middle0 = frame - 1;
            let indices = layout.window.frame_indices(middle0, total);
            let frames = indices.iter().map(|i| format!("{seq}/frame{:04}.{ext}", i + 1)).collect();
            let actions: Vec<usize> = persons.iter().map(|p| p.action).collect();
            let clip = Clip {
                clip_id: format!("{seq}_f{frame:04}"),
                frame_paths: frames,
                middle_index: layout.window.before,
                group: derive_group_label(&actions)?,
                persons,
            };
            clips.push(validate_clip(clip, &space)?);
        }
    }
    Ok(clips)
}
