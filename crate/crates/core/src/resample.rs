//! Bilinear sampling grids over `H × W × C` tensors.
//!
//! A grid stores, for every output cell, the four source cells and weights
//! it blends. The same grid drives the forward resample and the transposed
//! scatter used during backpropagation. Sample coordinates are in cell-index
//! space (cell `i` has its center at `i`) and are clamped to the map.

use ndarray::Array3;

use crate::data_model::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub src_dim: (usize, usize),
    pub dst_dim: (usize, usize),
    /// Per output cell (row-major): `(flat source cell, weight)` pairs.
    taps: Vec<[(usize, f64); 4]>,
}

/// Bilinear weights for continuous position `(y, x)` in a `sh × sw` map.
pub fn bilinear_taps(sh: usize, sw: usize, y: f64, x: f64) -> [(usize, f64); 4] {
    let y = y.clamp(0.0, (sh - 1) as f64);
    let x = x.clamp(0.0, (sw - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(sh - 1);
    let x1 = (x0 + 1).min(sw - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    [
        (y0 * sw + x0, (1.0 - fy) * (1.0 - fx)),
        (y0 * sw + x1, (1.0 - fy) * fx),
        (y1 * sw + x0, fy * (1.0 - fx)),
        (y1 * sw + x1, fy * fx),
    ]
}

impl SampleGrid {
    /// Half-pixel-center resize from `src` to `dst` spatial size.
    pub fn resize(src: (usize, usize), dst: (usize, usize)) -> Self {
        let (sh, sw) = src;
        let (dh, dw) = dst;
        let mut taps = Vec::with_capacity(dh * dw);
        for i in 0..dh {
            let y = (i as f64 + 0.5) * sh as f64 / dh as f64 - 0.5;
            for j in 0..dw {
                let x = (j as f64 + 0.5) * sw as f64 / dw as f64 - 0.5;
                taps.push(bilinear_taps(sh, sw, y, x));
            }
        }
        SampleGrid { src_dim: src, dst_dim: dst, taps }
    }

    /// `m × m` samples at the bin centers of the box mapped onto a
    /// `src`-sized feature map. Boxes narrower than one cell along an axis
    /// are widened to the single cell containing their center.
    pub fn roi(src: (usize, usize), bbox: &BoundingBox, m: usize) -> Self {
        let (sh, sw) = src;
        let (y1, y2) = roi_extent(bbox.y1, bbox.y2, sh);
        let (x1, x2) = roi_extent(bbox.x1, bbox.x2, sw);
        let mut taps = Vec::with_capacity(m * m);
        for i in 0..m {
            let y = y1 + (i as f64 + 0.5) * (y2 - y1) / m as f64 - 0.5;
            for j in 0..m {
                let x = x1 + (j as f64 + 0.5) * (x2 - x1) / m as f64 - 0.5;
                taps.push(bilinear_taps(sh, sw, y, x));
            }
        }
        SampleGrid { src_dim: src, dst_dim: (m, m), taps }
    }

    pub fn is_identity(&self) -> bool {
        self.src_dim == self.dst_dim
            && self
                .taps
                .iter()
                .enumerate()
                .all(|(o, t)| t[0] == (o, 1.0) && t[1..].iter().all(|&(_, w)| w == 0.0))
    }

    pub fn apply(&self, src: &Array3<f64>) -> Array3<f64> {
        let (sh, sw, c) = src.dim();
        assert_eq!((sh, sw), self.src_dim, "sample grid built for a different source size");
        let src = src.as_standard_layout();
        let s = src.as_slice().expect("standard layout");
        let (dh, dw) = self.dst_dim;
        let mut out = vec![0.0; dh * dw * c];
        for (o, taps) in self.taps.iter().enumerate() {
            let dst = &mut out[o * c..(o + 1) * c];
            for &(p, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                let row = &s[p * c..(p + 1) * c];
                for (d, v) in dst.iter_mut().zip(row) {
                    *d += wgt * v;
                }
            }
        }
        Array3::from_shape_vec((dh, dw, c), out).expect("shape")
    }

    /// Adds the transpose of [`apply`](Self::apply) on `grad_out` into `grad_src`.
    pub fn scatter_add(&self, grad_out: &Array3<f64>, grad_src: &mut Array3<f64>) {
        let c = grad_out.dim().2;
        let g = grad_out.as_standard_layout();
        let g = g.as_slice().expect("standard layout");
        let dst = grad_src.as_slice_mut().expect("gradient buffers are contiguous");
        for (o, taps) in self.taps.iter().enumerate() {
            let row = &g[o * c..(o + 1) * c];
            for &(p, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                for (d, v) in dst[p * c..(p + 1) * c].iter_mut().zip(row) {
                    *d += wgt * v;
                }
            }
        }
    }
}

fn roi_extent(lo: f64, hi: f64, cells: usize) -> (f64, f64) {
    let a = lo * cells as f64;
    let b = hi * cells as f64;
    if b - a >= 1.0 {
        return (a, b);
    }
    let cell = ((a + b) * 0.5).floor().clamp(0.0, (cells - 1) as f64);
    (cell, cell + 1.0)
}
