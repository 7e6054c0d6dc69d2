//! Convolutional trunk with named feature taps.
//!
//! The trunk is a chain of strided convolutions. Selected stage outputs
//! ("taps") are resized to the first tap's spatial size and concatenated
//! into the shared feature map used for person regions; the last stage is
//! globally average-pooled into the scene feature vector.

use ndarray::{s, Array1, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2d, ParamView, ParamViewMut};
use crate::resample::SampleGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub stride: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub stages: Vec<StageSpec>,
    /// Stage indices whose outputs feed the concatenated feature map.
    pub taps: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl BackboneConfig {
    /// Two stride-2 stages of 8 and 16 channels, both tapped.
    pub fn toy(input_channels: usize) -> Self {
        BackboneConfig {
            input_channels,
            stages: vec![
                StageSpec { channels: 8, stride: 2, kernel: 3 },
                StageSpec { channels: 16, stride: 2, kernel: 3 },
            ],
            taps: vec![0, 1],
            activation: Activation::Relu,
        }
    }

    /// Channel layout mirroring the full-scale model: the last type-1 and
    /// type-2 inception outputs (288 and 768 channels) concatenate to 1056.
    pub fn full_scale_mirror(input_channels: usize) -> Self {
        BackboneConfig {
            input_channels,
            stages: vec![
                StageSpec { channels: 64, stride: 2, kernel: 3 },
                StageSpec { channels: 288, stride: 2, kernel: 3 },
                StageSpec { channels: 768, stride: 2, kernel: 3 },
            ],
            taps: vec![1, 2],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("backbone needs at least one input channel".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.stride == 0 || s.kernel == 0) {
            return Err(Error::Config("stage channels, stride and kernel must be positive".into()));
        }
        if self.taps.is_empty() {
            return Err(Error::Config("backbone needs at least one tap".into()));
        }
        if let Some(t) = self.taps.iter().find(|&&t| t >= self.stages.len()) {
            return Err(Error::Config(format!("tap {t} refers to a missing stage")));
        }
        Ok(())
    }

    /// Depth of the concatenated feature map.
    pub fn feature_depth(&self) -> usize {
        self.taps.iter().map(|&t| self.stages[t].channels).sum()
    }

    pub fn final_depth(&self) -> usize {
        self.stages.last().map(|s| s.channels).unwrap_or(0)
    }

    /// Spatial size of each stage output for an `h × w` input.
    pub fn stage_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut size = (h, w);
        self.stages
            .iter()
            .map(|s| {
                let p = s.kernel / 2;
                size = ((size.0 + 2 * p - s.kernel) / s.stride + 1, (size.1 + 2 * p - s.kernel) / s.stride + 1);
                size
            })
            .collect()
    }

    /// Spatial size of the concatenated feature map.
    pub fn feature_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.stage_sizes(h, w)[self.taps[0]]
    }
}

/// Concatenated multi-layer feature map `H′ × W′ × D′`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Array3<f64>,
}

impl FeatureMap {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stages: Vec<Conv2d>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BackboneTrace {
    pub stage_inputs: Vec<Array3<f64>>,
    pub preacts: Vec<Array3<f64>>,
    pub outputs: Vec<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub taps: Vec<Array3<f64>>,
    pub final_features: Array1<f64>,
    pub trace: BackboneTrace,
}

impl Backbone {
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut in_ch = config.input_channels;
        let stages = config
            .stages
            .iter()
            .map(|s| {
                let layer = Conv2d::new(in_ch, s.channels, s.kernel, s.stride, rng);
                in_ch = s.channels;
                layer
            })
            .collect();
        Ok(Backbone { config, stages })
    }

    pub fn zeros_like(&self) -> Self {
        Backbone { config: self.config.clone(), stages: self.stages.iter().map(Conv2d::zeros_like).collect() }
    }

    pub fn forward_with_taps(&self, input: &Array3<f64>) -> Result<BackboneOutput> {
        let d = input.dim().2;
        if d != self.config.input_channels {
            return Err(Error::Shape(format!(
                "backbone expects {} input channels, got {d}",
                self.config.input_channels
            )));
        }
        let act = self.config.activation;
        let mut stage_inputs = Vec::with_capacity(self.stages.len());
        let mut preacts = Vec::with_capacity(self.stages.len());
        let mut outputs: Vec<Array3<f64>> = Vec::with_capacity(self.stages.len());
        for (i, layer) in self.stages.iter().enumerate() {
            let x = if i == 0 { input.to_owned() } else { outputs[i - 1].clone() };
            let pre = layer.forward(&x);
            let out = pre.mapv(|v| act.apply(v));
            stage_inputs.push(x);
            preacts.push(pre);
            outputs.push(out);
        }
        let last = outputs.last().expect("at least one stage");
        let final_features = global_average_pool(last);
        let taps = self.config.taps.iter().map(|&t| outputs[t].clone()).collect();
        Ok(BackboneOutput { taps, final_features, trace: BackboneTrace { stage_inputs, preacts, outputs } })
    }

    /// Backpropagates gradients on the tap tensors and on the pooled final
    /// features into `grad`.
    pub fn backward(
        &self,
        trace: &BackboneTrace,
        tap_grads: &[Array3<f64>],
        final_grad: &[f64],
        grad: &mut Backbone,
    ) {
        let act = self.config.activation;
        let n = self.stages.len();
        let mut douts: Vec<Array3<f64>> = trace.outputs.iter().map(|o| Array3::zeros(o.raw_dim())).collect();
        for (&t, g) in self.config.taps.iter().zip(tap_grads) {
            douts[t] += g;
        }
        {
            let last = &mut douts[n - 1];
            let (h, w, _) = last.dim();
            let scale = 1.0 / (h * w) as f64;
            for mut px in last.lanes_mut(Axis(2)) {
                for (v, g) in px.iter_mut().zip(final_grad) {
                    *v += g * scale;
                }
            }
        }
        for i in (0..n).rev() {
            let dpre = ndarray::Zip::from(&douts[i])
                .and(&trace.preacts[i])
                .map_collect(|d, p| d * act.derivative(*p));
            let dx = self.stages[i].backward(&trace.stage_inputs[i], &dpre, &mut grad.stages[i]);
            if i > 0 {
                douts[i - 1] += &dx;
            }
        }
    }

    pub fn views<'a>(&'a self, out: &mut Vec<ParamView<'a>>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.views(&format!("backbone.stage{i}"), out);
        }
    }

    pub fn views_mut<'a>(&'a mut self, out: &mut Vec<ParamViewMut<'a>>) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.views_mut(&format!("backbone.stage{i}"), out);
        }
    }
}

pub fn global_average_pool(x: &Array3<f64>) -> Array1<f64> {
    let (h, w, _) = x.dim();
    x.sum_axis(Axis(0)).sum_axis(Axis(0)) / (h * w) as f64
}

/// Resize plan for concatenating a fixed set of tap shapes.
#[derive(Debug, Clone)]
pub struct TapConcat {
    grids: Vec<Option<SampleGrid>>,
    depths: Vec<usize>,
    size: (usize, usize),
}

impl TapConcat {
    pub fn plan(tap_dims: &[(usize, usize, usize)]) -> Result<Self> {
        let &(h, w, _) = tap_dims.first().ok_or_else(|| Error::Shape("no taps to concatenate".into()))?;
        let grids = tap_dims
            .iter()
            .map(|&(th, tw, _)| if (th, tw) == (h, w) { None } else { Some(SampleGrid::resize((th, tw), (h, w))) })
            .collect();
        Ok(TapConcat { grids, depths: tap_dims.iter().map(|d| d.2).collect(), size: (h, w) })
    }

    pub fn forward(&self, taps: &[Array3<f64>]) -> FeatureMap {
        if taps.len() == 1 {
            return FeatureMap { data: taps[0].clone() };
        }
        let total: usize = self.depths.iter().sum();
        let mut data = Array3::zeros((self.size.0, self.size.1, total));
        let mut offset = 0;
        for ((tap, grid), &d) in taps.iter().zip(&self.grids).zip(&self.depths) {
            let resized;
            let src = match grid {
                Some(g) => {
                    resized = g.apply(tap);
                    &resized
                }
                None => tap,
            };
            data.slice_mut(s![.., .., offset..offset + d]).assign(src);
            offset += d;
        }
        FeatureMap { data }
    }

    pub fn backward(&self, grad_fm: &Array3<f64>, tap_dims: &[(usize, usize, usize)]) -> Vec<Array3<f64>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(tap_dims.len());
        for ((grid, &d), dims) in self.grids.iter().zip(&self.depths).zip(tap_dims) {
            let slice = grad_fm.slice(s![.., .., offset..offset + d]).to_owned();
            offset += d;
            match grid {
                None => out.push(slice),
                Some(g) => {
                    let mut dt = Array3::zeros(*dims);
                    g.scatter_add(&slice, &mut dt);
                    out.push(dt);
                }
            }
        }
        out
    }
}

/// Resizes every tap (bilinear) to the first tap's spatial size and stacks
/// them along depth.
pub fn concat_taps(taps: &[Array3<f64>]) -> Result<FeatureMap> {
    let dims: Vec<_> = taps.iter().map(|t| t.dim()).collect();
    Ok(TapConcat::plan(&dims)?.forward(taps))
}

/// How first-layer kernels are spread over a new input depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelAdaptation {
    /// Every target channel gets the mean of the source channels.
    #[default]
    Mean,
    /// Mean scaled by `source / target`, so an input whose channels are all
    /// equal produces the same first-layer response as before.
    ResponsePreserving,
}

/// Re-targets a backbone trained on `source` input channels to `target`
/// channels. All layers after the first are copied unchanged.
pub fn adapt_input_channels(backbone: &Backbone, target: usize, mode: ChannelAdaptation) -> Result<Backbone> {
    if target < 1 {
        return Err(Error::Config("target input depth must be at least 1".into()));
    }
    let first = &backbone.stages[0];
    let (k, _, src, cout) = first.weight.dim();
    let mean = first.weight.mean_axis(Axis(2)).expect("nonempty source channels");
    let scale = match mode {
        ChannelAdaptation::Mean => 1.0,
        ChannelAdaptation::ResponsePreserving => src as f64 / target as f64,
    };
    let mut weight = ndarray::Array4::zeros((k, k, target, cout));
    for c in 0..target {
        weight.slice_mut(s![.., .., c, ..]).assign(&(&mean * scale));
    }
    let mut out = backbone.clone();
    out.stages[0].weight = weight;
    out.config.input_channels = target;
    Ok(out)
}
