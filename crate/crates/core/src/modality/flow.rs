//! Dense optical flow between two grayscale frames.
//!
//! The built-in estimator is coarse-to-fine block matching: integer SSD
//! search on an image pyramid, refined at each finer level and finished
//! with a per-axis parabolic fit around the best match. Pixels whose patch
//! carries no gradient energy keep zero flow. Other estimators (TVL1 from
//! an external tool, say) plug in through [`FlowEstimator`] or by writing
//! precomputed fields into the modality cache.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// `H × W × 2` displacement field: channel 0 is x (columns), channel 1 is y.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub data: Array3<f64>,
}

impl FlowField {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().2 != 2 {
            return Err(Error::Shape(format!("flow field needs 2 channels, got {}", data.dim().2)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("flow field contains non-finite values".into()));
        }
        Ok(FlowField { data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField { data: Array3::zeros((h, w, 2)) }
    }

    pub fn constant(h: usize, w: usize, dx: f64, dy: f64) -> Self {
        FlowField { data: Array3::from_shape_fn((h, w, 2), |(_, _, c)| if c == 0 { dx } else { dy }) }
    }

    pub fn dim(&self) -> (usize, usize) {
        let (h, w, _) = self.data.dim();
        (h, w)
    }

    /// Median of the x and y components over all pixels.
    pub fn median(&self) -> (f64, f64) {
        let comp = |c: usize| {
            let mut v: Vec<f64> = self.data.index_axis(ndarray::Axis(2), c).iter().copied().collect();
            median_in_place(&mut v)
        };
        (comp(0), comp(1))
    }
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, frame_a: &Array2<f64>, frame_b: &Array2<f64>) -> Result<FlowField>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatcher {
    /// Half-size of the square matching patch.
    pub patch_radius: usize,
    /// Integer search radius at the coarsest level.
    pub search_radius: i64,
    /// Search radius around the propagated estimate at finer levels.
    pub refine_radius: i64,
    /// Maximum number of pyramid levels (1 = no pyramid).
    pub max_levels: usize,
    /// Minimum mean squared gradient inside a patch for a match to be trusted.
    pub texture_threshold: f64,
}

impl Default for BlockMatcher {
    fn default() -> Self {
        BlockMatcher { patch_radius: 2, search_radius: 2, refine_radius: 1, max_levels: 3, texture_threshold: 1.0 }
    }
}

/// Estimates flow with the default [`BlockMatcher`].
pub fn estimate_flow(frame_a: &Array2<f64>, frame_b: &Array2<f64>) -> Result<FlowField> {
    BlockMatcher::default().estimate(frame_a, frame_b)
}

impl FlowEstimator for BlockMatcher {
    fn estimate(&self, frame_a: &Array2<f64>, frame_b: &Array2<f64>) -> Result<FlowField> {
        if frame_a.dim() != frame_b.dim() {
            return Err(Error::Shape(format!(
                "frame shapes differ: {:?} vs {:?}",
                frame_a.dim(),
                frame_b.dim()
            )));
        }
        let (h, w) = frame_a.dim();
        if h == 0 || w == 0 {
            return Err(Error::Shape("empty frame".into()));
        }
        if frame_a.iter().chain(frame_b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Shape("frames contain non-finite values".into()));
        }

        let min_side = 4 * (2 * self.patch_radius + 1);
        let mut pyr_a = vec![frame_a.to_owned()];
        let mut pyr_b = vec![frame_b.to_owned()];
        while pyr_a.len() < self.max_levels.max(1) {
            let last = pyr_a.last().unwrap();
            let (lh, lw) = last.dim();
            if lh / 2 < min_side || lw / 2 < min_side {
                break;
            }
            let next_a = downsample(last);
            let next_b = downsample(pyr_b.last().unwrap());
            pyr_a.push(next_a);
            pyr_b.push(next_b);
        }

        let coarsest = pyr_a.len() - 1;
        let mut guess: Option<Array2<(i64, i64)>> = None;
        let mut result = None;
        for level in (0..=coarsest).rev() {
            let a = &pyr_a[level];
            let b = &pyr_b[level];
            let (lh, lw) = a.dim();
            let init = match &guess {
                None => Array2::from_elem((lh, lw), (0i64, 0i64)),
                Some(g) => {
                    let (gh, gw) = g.dim();
                    Array2::from_shape_fn((lh, lw), |(y, x)| {
                        let (dx, dy) = g[[(y / 2).min(gh - 1), (x / 2).min(gw - 1)]];
                        (2 * dx, 2 * dy)
                    })
                }
            };
            let radius = if guess.is_none() { self.search_radius } else { self.refine_radius };
            let (int_flow, field) = self.match_level(a, b, &init, radius, level == 0);
            guess = Some(int_flow);
            if level == 0 {
                result = Some(field);
            }
        }
        Ok(result.expect("level 0 is always processed"))
    }
}

impl BlockMatcher {
    fn match_level(
        &self,
        a: &Array2<f64>,
        b: &Array2<f64>,
        init: &Array2<(i64, i64)>,
        radius: i64,
        subpixel: bool,
    ) -> (Array2<(i64, i64)>, FlowField) {
        let (h, w) = a.dim();
        let r = self.patch_radius as i64;
        let energy = gradient_energy(a, self.patch_radius);
        let mut ints = Array2::from_elem((h, w), (0i64, 0i64));
        let mut out = Array3::zeros((h, w, 2));
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if energy[[y as usize, x as usize]] < self.texture_threshold {
                    continue;
                }
                let cost = |dx: i64, dy: i64| -> f64 {
                    let mut s = 0.0;
                    for qy in -r..=r {
                        for qx in -r..=r {
                            let va = at(a, y + qy, x + qx);
                            let vb = at(b, y + qy + dy, x + qx + dx);
                            s += (va - vb) * (va - vb);
                        }
                    }
                    s
                };
                let (ix, iy) = init[[y as usize, x as usize]];
                let mut best = (ix, iy);
                let mut best_cost = cost(ix, iy);
                for dy in iy - radius..=iy + radius {
                    for dx in ix - radius..=ix + radius {
                        let c = cost(dx, dy);
                        // strict improvement keeps ties at the smaller displacement
                        if c < best_cost - 1e-9 * (1.0 + best_cost)
                            || (c <= best_cost + 1e-9 * (1.0 + best_cost)
                                && dx.abs() + dy.abs() < best.0.abs() + best.1.abs())
                        {
                            best = (dx, dy);
                            best_cost = c;
                        }
                    }
                }
                ints[[y as usize, x as usize]] = best;
                let (mut fx, mut fy) = (best.0 as f64, best.1 as f64);
                if subpixel && best_cost > 1e-12 {
                    fx += parabolic_offset(cost(best.0 - 1, best.1), best_cost, cost(best.0 + 1, best.1));
                    fy += parabolic_offset(cost(best.0, best.1 - 1), best_cost, cost(best.0, best.1 + 1));
                }
                out[[y as usize, x as usize, 0]] = fx;
                out[[y as usize, x as usize, 1]] = fy;
            }
        }
        (ints, FlowField { data: out })
    }
}

fn at(img: &Array2<f64>, y: i64, x: i64) -> f64 {
    let (h, w) = img.dim();
    img[[y.clamp(0, h as i64 - 1) as usize, x.clamp(0, w as i64 - 1) as usize]]
}

fn parabolic_offset(minus: f64, center: f64, plus: f64) -> f64 {
    let denom = minus - 2.0 * center + plus;
    if denom <= 1e-12 {
        return 0.0;
    }
    (0.5 * (minus - plus) / denom).clamp(-0.5, 0.5)
}

fn downsample(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        0.25 * (img[[2 * y, 2 * x]] + img[[2 * y + 1, 2 * x]] + img[[2 * y, 2 * x + 1]] + img[[2 * y + 1, 2 * x + 1]])
    })
}

/// Mean squared central-difference gradient inside each patch.
fn gradient_energy(img: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let g = Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as i64, x as i64);
        let gx = 0.5 * (at(img, y, x + 1) - at(img, y, x - 1));
        let gy = 0.5 * (at(img, y + 1, x) - at(img, y - 1, x));
        gx * gx + gy * gy
    });
    let r = radius as i64;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut s = 0.0;
        for qy in -r..=r {
            for qx in -r..=r {
                s += at(&g, y as i64 + qy, x as i64 + qx);
            }
        }
        s / n
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..255.0));
        // light box blur so the coarse pyramid levels keep structure
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += at(&noise, y as i64 + dy, x as i64 + dx);
                }
            }
            s / 9.0
        })
    }

    fn shift(img: &Array2<f64>, dx: i64, dy: i64) -> Array2<f64> {
        let (h, w) = img.dim();
        Array2::from_shape_fn((h, w), |(y, x)| at(img, y as i64 - dy, x as i64 - dx))
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = textured(32, 32, 1);
        let f = estimate_flow(&a, &a).unwrap();
        assert!(f.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn recovers_integer_translation() {
        let a = textured(32, 32, 2);
        let b = shift(&a, 3, 0);
        let (mx, my) = estimate_flow(&a, &b).unwrap().median();
        assert!((2.5..=3.5).contains(&mx), "median x {mx}");
        assert!((-0.5..=0.5).contains(&my), "median y {my}");
    }

    #[test]
    fn recovers_vertical_and_negative_translation() {
        let a = textured(40, 36, 3);
        let b = shift(&a, -2, 2);
        let (mx, my) = estimate_flow(&a, &b).unwrap().median();
        assert!((mx + 2.0).abs() <= 0.5, "median x {mx}");
        assert!((my - 2.0).abs() <= 0.5, "median y {my}");
    }

    #[test]
    fn textureless_frames_give_zero_flow() {
        let a = Array2::from_elem((24, 24), 90.0);
        let b = Array2::from_elem((24, 24), 120.0);
        let f = estimate_flow(&a, &b).unwrap();
        assert!(f.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Array2::zeros((8, 8));
        let b = Array2::zeros((8, 9));
        assert!(matches!(estimate_flow(&a, &b), Err(Error::Shape(_))));
    }
}
