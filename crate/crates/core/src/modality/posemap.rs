use ndarray::{Array2, Array3};

use crate::data_model::{ModalityKind, ModalityStack};
use crate::error::Result;

/// Turns a pose estimator's background heatmap into a 3-channel posemap.
///
/// Values are inverted against the heatmap maximum, so body parts become the
/// bright regions, then stretched to `[0, 255]`. A constant heatmap gives an
/// all-zero map.
pub fn convert_pose_heatmap(background: &Array2<f64>, clip_id: &str) -> Result<ModalityStack> {
    let single = posemap_channel(background);
    let (h, w) = single.dim();
    let data = Array3::from_shape_fn((h, w, 3), |(y, x, _)| single[[y, x]]);
    ModalityStack::new(ModalityKind::Posemap, data, clip_id)
}

pub fn posemap_channel(background: &Array2<f64>) -> Array2<f64> {
    let max = background.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inverted = background.mapv(|v| max - v);
    let lo = inverted.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inverted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Array2::zeros(background.dim());
    }
    inverted.mapv(|v| (v - lo) / (hi - lo) * 255.0)
}
