//! Input modalities: RGB middle frame, stacked optical flow, warped flow and
//! posemap, plus the quantized on-disk cache the training loop reads from.

pub mod flow;
pub mod posemap;
pub mod quantize;
pub mod warp;

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

pub use flow::{estimate_flow, BlockMatcher, FlowEstimator, FlowField};
pub use posemap::convert_pose_heatmap;
pub use quantize::{dequantize, quantize, QuantizedChannel, QuantizedField};
pub use warp::{median_translation, warp_compensate, Homography};

use crate::data_model::{ModalityKind, ModalityStack, ValidatedClip};
use crate::error::{Error, Result};
use crate::io_util;

/// Frames taken around the labeled middle frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalWindow {
    pub before: usize,
    pub after: usize,
}

impl Default for TemporalWindow {
    fn default() -> Self {
        TemporalWindow { before: 4, after: 5 }
    }
}

impl TemporalWindow {
    pub fn len(&self) -> usize {
        self.before + self.after + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of adjacent-pair flow fields in the window.
    pub fn pairs(&self) -> usize {
        self.len() - 1
    }

    /// Frame indices of the window around `middle`, repeating the edge
    /// frame where the window runs past either end of a `total`-frame video.
    pub fn frame_indices(&self, middle: usize, total: usize) -> Vec<usize> {
        let last = total.saturating_sub(1) as i64;
        (-(self.before as i64)..=self.after as i64)
            .map(|o| (middle as i64 + o).clamp(0, last) as usize)
            .collect()
    }
}

/// Interleaves `window − 1` fields into channels `(x1, y1, x2, y2, …)`.
pub fn build_flow_stack(
    flows: &[FlowField],
    kind: ModalityKind,
    window: &TemporalWindow,
    clip_id: &str,
) -> Result<ModalityStack> {
    if !kind.is_temporal() {
        return Err(Error::Shape(format!("{kind} is not a flow modality")));
    }
    if flows.len() != window.pairs() {
        return Err(Error::Shape(format!("expected {} flow fields, got {}", window.pairs(), flows.len())));
    }
    let (h, w) = flows[0].dim();
    if let Some(bad) = flows.iter().position(|f| f.dim() != (h, w)) {
        return Err(Error::Shape(format!("flow field {bad} is {:?}, expected {:?}", flows[bad].dim(), (h, w))));
    }
    let data = Array3::from_shape_fn((h, w, 2 * flows.len()), |(y, x, c)| flows[c / 2].data[[y, x, c % 2]]);
    ModalityStack::new(kind, data, clip_id)
}

/// Inverse of [`build_flow_stack`].
pub fn split_flow_stack(stack: &ModalityStack) -> Vec<FlowField> {
    let (h, w, d) = stack.data.dim();
    (0..d / 2)
        .map(|i| FlowField {
            data: Array3::from_shape_fn((h, w, 2), |(y, x, c)| stack.data[[y, x, 2 * i + c]]),
        })
        .collect()
}

/// Where a clip's raw inputs live and how big the network input is.
#[derive(Debug, Clone)]
pub struct ModalitySource {
    pub root: PathBuf,
    /// Network input `(height, width)`; frames are resized to it.
    pub input_size: (usize, usize),
    pub window: TemporalWindow,
}

/// Sidecar paths that travel with a frame file.
pub fn heatmap_path(frame: &Path) -> PathBuf {
    frame.with_extension("bg.png")
}

pub fn homography_path(frame: &Path) -> PathBuf {
    frame.with_extension("homography.json")
}

impl ModalitySource {
    fn frame(&self, clip: &ValidatedClip, index: usize) -> PathBuf {
        self.root.join(&clip.frame_paths[index])
    }

    fn window_frames(&self, clip: &ValidatedClip) -> Vec<PathBuf> {
        self.window
            .frame_indices(clip.middle_index, clip.frame_paths.len())
            .into_iter()
            .map(|i| self.frame(clip, i))
            .collect()
    }

    /// Builds the modality directly from frames and sidecars (no cache).
    pub fn build(&self, kind: ModalityKind, clip: &ValidatedClip, estimator: &dyn FlowEstimator) -> Result<ModalityStack> {
        match kind {
            ModalityKind::Rgb => {
                let data = io_util::load_rgb(&self.frame(clip, clip.middle_index), Some(self.input_size))?;
                ModalityStack::new(kind, data, clip.id())
            }
            ModalityKind::Posemap => {
                let middle = self.frame(clip, clip.middle_index);
                let path = heatmap_path(&middle);
                if !path.exists() {
                    return Err(Error::MissingCache(path));
                }
                let bg = io_util::load_luma(&path, Some(self.input_size))?;
                convert_pose_heatmap(&bg, clip.id())
            }
            ModalityKind::Flow | ModalityKind::WarpedFlow => {
                let paths = self.window_frames(clip);
                let frames: Vec<Array2<f64>> = paths
                    .iter()
                    .map(|p| io_util::load_luma(p, Some(self.input_size)))
                    .collect::<Result<_>>()?;
                let mut fields = Vec::with_capacity(self.window.pairs());
                for (i, pair) in frames.windows(2).enumerate() {
                    let raw = estimator.estimate(&pair[0], &pair[1])?;
                    let field = if kind == ModalityKind::WarpedFlow {
                        let sidecar = homography_path(&paths[i]);
                        let hmg = if sidecar.exists() {
                            io_util::read_json::<Homography>(&sidecar)?
                        } else {
                            median_translation(&raw)
                        };
                        warp_compensate(&raw, &hmg)?
                    } else {
                        raw
                    };
                    fields.push(field);
                }
                build_flow_stack(&fields, kind, &self.window, clip.id())
            }
        }
    }
}

pub fn cache_dir(cache_root: &Path, kind: ModalityKind, clip_id: &str) -> PathBuf {
    cache_root.join(kind.as_str()).join(clip_id)
}

pub fn save_cached(cache_root: &Path, stack: &ModalityStack) -> Result<()> {
    let q = quantize(&stack.data);
    quantize::save_quantized(&cache_dir(cache_root, stack.kind, &stack.clip_id), &q)
}

/// Loads a modality for a clip: RGB straight from the frame, the others
/// from the quantized cache written by `prepare`.
pub fn load_modality(
    cache_root: &Path,
    source: &ModalitySource,
    kind: ModalityKind,
    clip: &ValidatedClip,
) -> Result<ModalityStack> {
    if kind == ModalityKind::Rgb {
        return source.build(kind, clip, &BlockMatcher::default());
    }
    let q = quantize::load_quantized(&cache_dir(cache_root, kind, clip.id()))?;
    let data = dequantize(&q)?;
    let (h, w, d) = data.dim();
    if (h, w) != source.input_size {
        return Err(Error::Shape(format!(
            "cached {kind} for {} is {h}×{w}, config expects {:?}",
            clip.id(),
            source.input_size
        )));
    }
    if d != kind.channels(source.window.len()) {
        return Err(Error::Shape(format!("cached {kind} for {} has {d} channels", clip.id())));
    }
    ModalityStack::new(kind, data, clip.id())
}
