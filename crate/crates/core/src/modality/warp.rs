//! Camera-motion compensation for flow fields.

use serde::{Deserialize, Serialize};

use super::flow::FlowField;
use crate::error::{Error, Result};

/// Row-major 3×3 projective transform mapping pixel `(x, y)` of the first
/// frame to the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub fn identity() -> Self {
        Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let u = m[0][0] * x + m[0][1] * y + m[0][2];
        let v = m[1][0] * x + m[1][1] * y + m[1][2];
        let s = m[2][0] * x + m[2][1] * y + m[2][2];
        (u / s, v / s)
    }
}

/// Subtracts the displacement `H·p − p` induced by the homography at every pixel.
pub fn warp_compensate(flow: &FlowField, homography: &Homography) -> Result<FlowField> {
    let det = homography.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::SingularHomography);
    }
    let mut out = flow.data.clone();
    if *homography == Homography::identity() {
        return Ok(FlowField { data: out });
    }
    let (h, w) = flow.dim();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = homography.apply(x as f64, y as f64);
            out[[y, x, 0]] -= px - x as f64;
            out[[y, x, 1]] -= py - y as f64;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularHomography);
    }
    Ok(FlowField { data: out })
}

/// Fallback camera model when no homography is supplied: a pure translation
/// equal to the median flow.
pub fn median_translation(flow: &FlowField) -> Homography {
    let (mx, my) = flow.median();
    Homography::translation(mx, my)
}
