//! Minimal f64 layers with hand-written backward passes.
//!
//! Tensors are `H × W × C` (channel-last). Gradients are accumulated into a
//! zero-initialized copy of the layer ([`Conv2d::zeros_like`]), so a gradient
//! buffer has exactly the parameter layout.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    pub fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Named flat view of one parameter tensor.
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

/// Square-kernel convolution with zero padding `kernel / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(k, k, in, out)`.
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (kernel * kernel * in_ch) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        Conv2d {
            weight: Array4::from_shape_simple_fn((kernel, kernel, in_ch, out_ch), || normal.sample(rng)),
            bias: Array1::zeros(out_ch),
            stride,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: Array4::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
            stride: self.stride,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().3
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        let p = k / 2;
        ((h + 2 * p - k) / self.stride + 1, (w + 2 * p - k) / self.stride + 1)
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (h, w, cin) = x.dim();
        assert_eq!(cin, self.in_channels(), "conv input channel mismatch");
        let (k, s, cout) = (self.kernel(), self.stride, self.out_channels());
        let p = (k / 2) as i64;
        let (oh, ow) = self.output_size(h, w);
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let ws = self.weight.as_slice().expect("weights are contiguous");
        let mut out = vec![0.0; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                let orow = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                orow.copy_from_slice(self.bias.as_slice().unwrap());
                for ky in 0..k {
                    let iy = (oy * s + ky) as i64 - p;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as i64 - p;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        let base = (iy as usize * w + ix as usize) * cin;
                        let xin = &xs[base..base + cin];
                        for (ci, &xv) in xin.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let wb = ((ky * k + kx) * cin + ci) * cout;
                            for (o, wv) in orow.iter_mut().zip(&ws[wb..wb + cout]) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((oh, ow, cout), out).unwrap()
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Array3<f64>, dout: &Array3<f64>, grad: &mut Conv2d) -> Array3<f64> {
        let (h, w, cin) = x.dim();
        let (k, s, cout) = (self.kernel(), self.stride, self.out_channels());
        let p = (k / 2) as i64;
        let (oh, ow, _) = dout.dim();
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let dout = dout.as_standard_layout();
        let ds = dout.as_slice().unwrap();
        let ws = self.weight.as_slice().unwrap();
        let gw = grad.weight.as_slice_mut().unwrap();
        let gb = grad.bias.as_slice_mut().unwrap();
        let mut dx = vec![0.0; h * w * cin];
        for oy in 0..oh {
            for ox in 0..ow {
                let drow = &ds[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                for (b, d) in gb.iter_mut().zip(drow) {
                    *b += d;
                }
                for ky in 0..k {
                    let iy = (oy * s + ky) as i64 - p;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as i64 - p;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        let base = (iy as usize * w + ix as usize) * cin;
                        for ci in 0..cin {
                            let xv = xs[base + ci];
                            let wb = ((ky * k + kx) * cin + ci) * cout;
                            let wrow = &ws[wb..wb + cout];
                            let gwrow = &mut gw[wb..wb + cout];
                            let mut acc = 0.0;
                            for co in 0..cout {
                                gwrow[co] += xv * drow[co];
                                acc += wrow[co] * drow[co];
                            }
                            dx[base + ci] += acc;
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((h, w, cin), dx).unwrap()
    }

    pub fn views<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView {
            name: format!("{prefix}.weight"),
            shape: self.weight.shape().to_vec(),
            data: self.weight.as_slice().unwrap(),
        });
        out.push(ParamView {
            name: format!("{prefix}.bias"),
            shape: self.bias.shape().to_vec(),
            data: self.bias.as_slice().unwrap(),
        });
    }

    pub fn views_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut { name: format!("{prefix}.weight"), data: self.weight.as_slice_mut().unwrap() });
        out.push(ParamViewMut { name: format!("{prefix}.bias"), data: self.bias.as_slice_mut().unwrap() });
    }
}

/// Fully connected layer `y = W x + b`, `W` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("valid std");
        Linear {
            weight: Array2::from_shape_simple_fn((out_dim, in_dim), || normal.sample(rng)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear { weight: Array2::zeros(self.weight.raw_dim()), bias: Array1::zeros(self.bias.len()) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim(), "linear input size mismatch");
        let ws = self.weight.as_slice().unwrap();
        let n = self.in_dim();
        self.bias
            .iter()
            .enumerate()
            .map(|(o, b)| b + ws[o * n..(o + 1) * n].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let n = self.in_dim();
        let ws = self.weight.as_slice().unwrap();
        let gw = grad.weight.as_slice_mut().unwrap();
        let mut dx = vec![0.0; n];
        for (o, &d) in dy.iter().enumerate() {
            grad.bias[o] += d;
            if d == 0.0 {
                continue;
            }
            let wrow = &ws[o * n..(o + 1) * n];
            let grow = &mut gw[o * n..(o + 1) * n];
            for i in 0..n {
                grow[i] += d * x[i];
                dx[i] += d * wrow[i];
            }
        }
        dx
    }

    pub fn views<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView {
            name: format!("{prefix}.weight"),
            shape: self.weight.shape().to_vec(),
            data: self.weight.as_slice().unwrap(),
        });
        out.push(ParamView {
            name: format!("{prefix}.bias"),
            shape: self.bias.shape().to_vec(),
            data: self.bias.as_slice().unwrap(),
        });
    }

    pub fn views_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut { name: format!("{prefix}.weight"), data: self.weight.as_slice_mut().unwrap() });
        out.push(ParamViewMut { name: format!("{prefix}.bias"), data: self.bias.as_slice_mut().unwrap() });
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
