//! One modality stream: a shared trunk feeding a person branch (region
//! features → per-person representations → max-pooled group descriptor) and
//! a scene branch (pooled trunk output), trained with a three-term weighted
//! cross-entropy.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, BackboneTrace, FeatureMap, TapConcat};
use crate::data_model::{LabelSpace, LossWeights, ModalityKind, ModalityStack, StreamPrediction, ValidatedClip};
use crate::data_model::BoundingBox;
use crate::error::{Error, Result};
use crate::io_util;
use crate::nn::{softmax, Linear, ParamView, ParamViewMut};
use crate::resample::SampleGrid;

/// Floor applied inside every `log` of the loss.
pub const LOG_EPS: f64 = 1e-12;

/// Affine input normalization `x * scale + shift` applied before the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub scale: f64,
    pub shift: f64,
}

impl InputNorm {
    pub fn for_kind(kind: ModalityKind) -> Self {
        match kind {
            // [0, 255] images to [-1, 1]
            ModalityKind::Rgb | ModalityKind::Posemap => InputNorm { scale: 1.0 / 127.5, shift: -1.0 },
            // displacements in pixels
            ModalityKind::Flow | ModalityKind::WarpedFlow => InputNorm { scale: 0.5, shift: 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub modality: ModalityKind,
    pub backbone: BackboneConfig,
    /// Side `M` of the square region resampled for each person.
    pub roi_size: usize,
    /// Width of the per-person representation `f_n`.
    pub f_width: usize,
    pub labels: LabelSpace,
    pub loss_weights: LossWeights,
    pub input_norm: InputNorm,
}

impl StreamConfig {
    pub fn new(modality: ModalityKind, backbone: BackboneConfig, labels: LabelSpace) -> Self {
        StreamConfig {
            modality,
            backbone,
            roi_size: 4,
            f_width: 32,
            labels,
            loss_weights: LossWeights::default(),
            input_norm: InputNorm::for_kind(modality),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.roi_size < 1 {
            return Err(Error::Config("roi_size must be at least 1".into()));
        }
        if self.f_width < 1 {
            return Err(Error::Config("f_width must be at least 1".into()));
        }
        self.backbone.validate()?;
        self.labels.validate()?;
        self.loss_weights.validate()
    }

    pub fn region_len(&self) -> usize {
        self.roi_size * self.roi_size * self.backbone.feature_depth()
    }
}

/// Per-person and pooled intermediate representations.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamActivations {
    pub person_regions: Vec<Array3<f64>>,
    pub person_features: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_i: f64,
    pub l_g: f64,
    pub l_gc: f64,
    pub total: f64,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct StreamTrace {
    backbone: BackboneTrace,
    concat: TapConcat,
    tap_dims: Vec<(usize, usize, usize)>,
    fm_dim: (usize, usize, usize),
    grids: Vec<SampleGrid>,
    person_pre: Vec<Vec<f64>>,
    pool_argmax: Vec<usize>,
    final_features: Vec<f64>,
    pub activations: StreamActivations,
    pub prediction: StreamPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamModel {
    pub config: StreamConfig,
    pub backbone: Backbone,
    pub person_fc: Linear,
    pub action_head: Linear,
    pub group_head: Linear,
    pub scene_head: Linear,
}

/// Bilinear resample of the box's sub-rectangle of the feature map to `m × m`.
pub fn extract_person_region(fm: &FeatureMap, bbox: &BoundingBox, m: usize) -> Result<Array3<f64>> {
    let (h, w, d) = fm.dim();
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Shape("empty feature map".into()));
    }
    if m == 0 {
        return Err(Error::Shape("region size must be positive".into()));
    }
    bbox.check().map_err(Error::Shape)?;
    Ok(SampleGrid::roi((h, w), bbox, m).apply(&fm.data))
}

impl StreamModel {
    pub fn new(config: StreamConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.backbone.clone(), rng)?;
        let person_fc = Linear::new(config.region_len(), config.f_width, rng);
        let action_head = Linear::new(config.f_width, config.labels.num_actions(), rng);
        let group_head = Linear::new(config.f_width, config.labels.num_groups(), rng);
        let scene_head = Linear::new(config.backbone.final_depth(), config.labels.num_groups(), rng);
        Ok(StreamModel { config, backbone, person_fc, action_head, group_head, scene_head })
    }

    pub fn zeros_like(&self) -> Self {
        StreamModel {
            config: self.config.clone(),
            backbone: self.backbone.zeros_like(),
            person_fc: self.person_fc.zeros_like(),
            action_head: self.action_head.zeros_like(),
            group_head: self.group_head.zeros_like(),
            scene_head: self.scene_head.zeros_like(),
        }
    }

    pub fn forward(&self, stack: &ModalityStack, clip: &ValidatedClip) -> Result<(StreamPrediction, StreamActivations)> {
        let trace = self.forward_trace(stack, clip)?;
        Ok((trace.prediction, trace.activations))
    }

    pub fn forward_trace(&self, stack: &ModalityStack, clip: &ValidatedClip) -> Result<StreamTrace> {
        if stack.kind != self.config.modality {
            return Err(Error::Shape(format!(
                "stream expects {} input, got {}",
                self.config.modality, stack.kind
            )));
        }
        let norm = self.config.input_norm;
        let input = stack.data.mapv(|v| v * norm.scale + norm.shift);
        let out = self.backbone.forward_with_taps(&input)?;
        let tap_dims: Vec<_> = out.taps.iter().map(|t| t.dim()).collect();
        let concat = TapConcat::plan(&tap_dims)?;
        let fm = concat.forward(&out.taps);
        let (fh, fw, _) = fm.dim();
        let m = self.config.roi_size;
        let act = self.config.backbone.activation;

        let n = clip.persons().len();
        let mut grids = Vec::with_capacity(n);
        let mut regions = Vec::with_capacity(n);
        let mut person_pre = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        let mut person_actions = Vec::with_capacity(n);
        for person in clip.persons() {
            let grid = SampleGrid::roi((fh, fw), &person.bbox, m);
            let region = grid.apply(&fm.data);
            let pre = self.person_fc.forward(region.as_slice().expect("fresh array"));
            let f: Vec<f64> = pre.iter().map(|v| act.apply(*v)).collect();
            person_actions.push(softmax(&self.action_head.forward(&f)));
            grids.push(grid);
            regions.push(region);
            person_pre.push(pre);
            features.push(f);
        }

        let width = self.config.f_width;
        let mut pooled = vec![f64::NEG_INFINITY; width];
        let mut pool_argmax = vec![0; width];
        for (i, f) in features.iter().enumerate() {
            for j in 0..width {
                if f[j] > pooled[j] {
                    pooled[j] = f[j];
                    pool_argmax[j] = i;
                }
            }
        }
        let group_person = softmax(&self.group_head.forward(&pooled));
        let final_features = out.final_features.to_vec();
        let group_scene = softmax(&self.scene_head.forward(&final_features));

        Ok(StreamTrace {
            backbone: out.trace,
            concat,
            tap_dims,
            fm_dim: fm.dim(),
            grids,
            person_pre,
            pool_argmax,
            final_features,
            activations: StreamActivations { person_regions: regions, person_features: features, pooled },
            prediction: StreamPrediction { person_actions, group_person, group_scene },
        })
    }

    /// Gradient of the weighted loss for one clip, accumulated into `grad`.
    pub fn backward(&self, trace: &StreamTrace, clip: &ValidatedClip, weights: &LossWeights, grad: &mut StreamModel) {
        let pred = &trace.prediction;
        let n = clip.persons().len();
        let n_i = self.config.labels.num_actions();
        let n_g = self.config.labels.num_groups();
        let act = self.config.backbone.activation;
        let feats = &trace.activations.person_features;

        // softmax + cross-entropy: d/dlogits = p - onehot, times each term's factor
        let ce_grad = |p: &[f64], gt: usize, factor: f64| -> Vec<f64> {
            p.iter()
                .enumerate()
                .map(|(i, v)| factor * (v - if i == gt { 1.0 } else { 0.0 }))
                .collect()
        };

        let mut dfeat: Vec<Vec<f64>> = Vec::with_capacity(n);
        let fi = weights.w_i / (n as f64 * n_i as f64);
        for (k, person) in clip.persons().iter().enumerate() {
            let dlogits = ce_grad(&pred.person_actions[k], person.action, fi);
            dfeat.push(self.action_head.backward(&feats[k], &dlogits, &mut grad.action_head));
        }

        let dlogits_g = ce_grad(&pred.group_person, clip.group(), weights.w_g / n_g as f64);
        let dpooled = self.group_head.backward(&trace.activations.pooled, &dlogits_g, &mut grad.group_head);
        for (j, &who) in trace.pool_argmax.iter().enumerate() {
            dfeat[who][j] += dpooled[j];
        }

        let dlogits_c = ce_grad(&pred.group_scene, clip.group(), weights.w_gc / n_g as f64);
        let dfinal = self.scene_head.backward(&trace.final_features, &dlogits_c, &mut grad.scene_head);

        let mut dfm = Array3::zeros(trace.fm_dim);
        let m = self.config.roi_size;
        let d = trace.fm_dim.2;
        for k in 0..n {
            let dpre: Vec<f64> = dfeat[k]
                .iter()
                .zip(&trace.person_pre[k])
                .map(|(g, p)| g * act.derivative(*p))
                .collect();
            let region = &trace.activations.person_regions[k];
            let dregion = self.person_fc.backward(region.as_slice().unwrap(), &dpre, &mut grad.person_fc);
            let dregion = Array3::from_shape_vec((m, m, d), dregion).expect("region shape");
            trace.grids[k].scatter_add(&dregion, &mut dfm);
        }
        let dtaps = trace.concat.backward(&dfm, &trace.tap_dims);
        self.backbone.backward(&trace.backbone, &dtaps, &dfinal, &mut grad.backbone);
    }

    /// Loss, prediction and parameter gradient for one clip.
    pub fn loss_and_grad(&self, stack: &ModalityStack, clip: &ValidatedClip) -> Result<(LossBreakdown, StreamModel)> {
        let weights = self.config.loss_weights;
        let trace = self.forward_trace(stack, clip)?;
        let loss = compute_loss(&trace.prediction, clip, &weights);
        let mut grad = self.zeros_like();
        self.backward(&trace, clip, &weights, &mut grad);
        Ok((loss, grad))
    }

    pub fn views(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.backbone.views(&mut out);
        self.person_fc.views("person_fc", &mut out);
        self.action_head.views("action_head", &mut out);
        self.group_head.views("group_head", &mut out);
        self.scene_head.views("scene_head", &mut out);
        out
    }

    pub fn views_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        self.backbone.views_mut(&mut out);
        self.person_fc.views_mut("person_fc", &mut out);
        self.action_head.views_mut("action_head", &mut out);
        self.group_head.views_mut("group_head", &mut out);
        self.scene_head.views_mut("scene_head", &mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.views().iter().map(|v| v.data.len()).sum()
    }

    /// `self += scale * other`, parameter by parameter.
    pub fn add_scaled(&mut self, other: &StreamModel, scale: f64) {
        let src = other.views();
        for (dst, s) in self.views_mut().into_iter().zip(src) {
            for (a, b) in dst.data.iter_mut().zip(s.data) {
                *a += scale * b;
            }
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self
                .views()
                .into_iter()
                .map(|v| NamedTensor { name: v.name, shape: v.shape, data: v.data.to_vec() })
                .collect(),
        };
        io_util::write_json(path, &ckpt)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = io_util::read_json(path)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = StreamModel::new(ckpt.config, &mut rng)?;
        let expected: Vec<(String, Vec<usize>)> = model.views().into_iter().map(|v| (v.name, v.shape)).collect();
        if expected.len() != ckpt.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                ckpt.tensors.len()
            )));
        }
        for ((name, shape), (dst, t)) in expected.iter().zip(model.views_mut().into_iter().zip(&ckpt.tensors)) {
            if &t.name != name || &t.shape != shape || t.data.len() != dst.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
            dst.data.copy_from_slice(&t.data);
        }
        Ok(model)
    }
}

use rand::SeedableRng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: StreamConfig,
    tensors: Vec<NamedTensor>,
}

/// Three-term loss of one stream on one clip.
///
/// `L_I = −1/(N·N_I) Σ_n log I_n[gt_n]`, `L_G = −1/N_G log G[gt]`,
/// `L_GC = −1/N_G log C[gt]`, combined with the configured weights.
pub fn compute_loss(pred: &StreamPrediction, clip: &ValidatedClip, weights: &LossWeights) -> LossBreakdown {
    let n = clip.persons().len() as f64;
    let n_i = pred.person_actions.first().map_or(1, |v| v.len()) as f64;
    let n_g = pred.group_person.len() as f64;
    let nll = |p: f64| if p.is_nan() { f64::NAN } else { -p.max(LOG_EPS).ln() };
    let l_i = clip
        .persons()
        .iter()
        .zip(&pred.person_actions)
        .map(|(person, probs)| nll(probs[person.action]))
        .sum::<f64>()
        / (n * n_i);
    let l_g = nll(pred.group_person[clip.group()]) / n_g;
    let l_gc = nll(pred.group_scene[clip.group()]) / n_g;
    let total = weights.w_i * l_i + weights.w_g * l_g + weights.w_gc * l_gc;
    LossBreakdown { l_i, l_g, l_gc, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::concat_taps;
    use crate::data_model::{validate_clip, Clip, PersonAnn};
    use rand_chacha::ChaCha8Rng;

    fn space(n_i: usize, n_g: usize) -> LabelSpace {
        LabelSpace::new(
            (0..n_i).map(|i| format!("a{i}")).collect(),
            (0..n_g).map(|i| format!("g{i}")).collect(),
        )
        .unwrap()
    }

    fn clip_with(boxes: &[BoundingBox], actions: &[usize], group: usize, labels: &LabelSpace) -> ValidatedClip {
        let persons = boxes.iter().zip(actions).map(|(b, &a)| PersonAnn { bbox: *b, action: a }).collect();
        validate_clip(
            Clip { clip_id: "t".into(), frame_paths: vec!["f".into()], middle_index: 0, group, persons },
            labels,
        )
        .unwrap()
    }

    fn toy_model(seed: u64) -> (StreamModel, ModalityStack) {
        let labels = space(3, 2);
        let mut cfg = StreamConfig::new(ModalityKind::Rgb, BackboneConfig::toy(3), labels);
        cfg.f_width = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = StreamModel::new(cfg, &mut rng).unwrap();
        let data = Array3::from_shape_simple_fn((16, 16, 3), || rng.random_range(0.0..255.0));
        (model, ModalityStack::new(ModalityKind::Rgb, data, "t").unwrap())
    }

    #[test]
    fn full_box_region_is_identity() {
        let fm = FeatureMap { data: Array3::from_shape_fn((4, 4, 3), |(y, x, c)| (y * 12 + x * 3 + c) as f64) };
        let r = extract_person_region(&fm, &BoundingBox::new(0.0, 0.0, 1.0, 1.0), 4).unwrap();
        assert_eq!(r, fm.data);
    }

    #[test]
    fn constant_map_gives_constant_region() {
        let fm = FeatureMap { data: Array3::from_elem((7, 9, 2), 3.5) };
        let r = extract_person_region(&fm, &BoundingBox::new(0.13, 0.4, 0.3, 0.97), 4).unwrap();
        assert!(r.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn single_person_pool_equals_its_features() {
        let (model, stack) = toy_model(1);
        let c = clip_with(&[BoundingBox::new(0.1, 0.2, 0.6, 0.9)], &[1], 0, &model.config.labels);
        let (_, acts) = model.forward(&stack, &c).unwrap();
        assert_eq!(acts.pooled, acts.person_features[0]);
    }

    #[test]
    fn identical_boxes_give_identical_predictions() {
        let (model, stack) = toy_model(2);
        let b = BoundingBox::new(0.2, 0.2, 0.7, 0.8);
        let c = clip_with(&[b, b], &[0, 2], 1, &model.config.labels);
        let (pred, acts) = model.forward(&stack, &c).unwrap();
        assert_eq!(pred.person_actions[0], pred.person_actions[1]);
        assert_eq!(acts.pooled, acts.person_features[0]);
    }

    #[test]
    fn outputs_are_probability_vectors() {
        let (model, stack) = toy_model(3);
        let boxes = [
            BoundingBox::new(0.0, 0.0, 0.3, 0.5),
            BoundingBox::new(0.5, 0.1, 0.9, 0.6),
            BoundingBox::new(0.2, 0.6, 0.4, 1.0),
        ];
        let c = clip_with(&boxes, &[0, 1, 2], 1, &model.config.labels);
        let (pred, _) = model.forward(&stack, &c).unwrap();
        pred.check(1e-6).unwrap();
        assert_eq!(pred.person_actions.len(), 3);
    }

    #[test]
    fn scene_branch_ignores_boxes() {
        let (model, stack) = toy_model(4);
        let a = clip_with(&[BoundingBox::new(0.1, 0.1, 0.3, 0.3)], &[0], 0, &model.config.labels);
        let b = clip_with(&[BoundingBox::new(0.5, 0.4, 0.9, 0.95)], &[0], 0, &model.config.labels);
        let (pa, _) = model.forward(&stack, &a).unwrap();
        let (pb, _) = model.forward(&stack, &b).unwrap();
        assert_eq!(pa.group_scene, pb.group_scene);
    }

    #[test]
    fn wrong_modality_is_rejected() {
        let (model, _) = toy_model(5);
        let flow = ModalityStack::new(ModalityKind::Flow, Array3::zeros((16, 16, 18)), "t").unwrap();
        let c = clip_with(&[BoundingBox::new(0.1, 0.1, 0.3, 0.3)], &[0], 0, &model.config.labels);
        assert!(model.forward(&flow, &c).is_err());
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let labels = space(3, 2);
        let c = clip_with(&[BoundingBox::new(0.1, 0.1, 0.3, 0.3)], &[2], 1, &labels);
        let pred = StreamPrediction {
            person_actions: vec![vec![0.0, 0.0, 1.0]],
            group_person: vec![0.0, 1.0],
            group_scene: vec![0.0, 1.0],
        };
        let l = compute_loss(&pred, &c, &LossWeights::volleyball());
        assert_eq!((l.l_i, l.l_g, l.l_gc, l.total), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn uniform_two_class_example() {
        let labels = space(2, 2);
        let c = clip_with(&[BoundingBox::new(0.1, 0.1, 0.3, 0.3)], &[0], 0, &labels);
        let pred = StreamPrediction {
            person_actions: vec![vec![0.5, 0.5]],
            group_person: vec![0.5, 0.5],
            group_scene: vec![0.5, 0.5],
        };
        let l = compute_loss(&pred, &c, &LossWeights::volleyball());
        // values from an independent evaluation: ln(2)/2 and 4·ln(2)/2
        assert!((l.l_i - 0.346_573_590_279_972_6).abs() < 1e-15);
        assert!((l.l_g - 0.346_573_590_279_972_6).abs() < 1e-15);
        assert!((l.l_gc - 0.346_573_590_279_972_6).abs() < 1e-15);
        assert!((l.total - 1.386_294_361_119_890_6).abs() < 1e-14);
    }

    #[test]
    fn loss_is_linear_in_action_weight() {
        let labels = space(3, 2);
        let c = clip_with(
            &[BoundingBox::new(0.1, 0.1, 0.3, 0.3), BoundingBox::new(0.4, 0.1, 0.6, 0.3)],
            &[1, 0],
            0,
            &labels,
        );
        let pred = StreamPrediction {
            person_actions: vec![vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8]],
            group_person: vec![0.7, 0.3],
            group_scene: vec![0.4, 0.6],
        };
        let l2 = compute_loss(&pred, &c, &LossWeights { w_i: 2.0, w_g: 1.0, w_gc: 1.0 });
        let l0 = compute_loss(&pred, &c, &LossWeights { w_i: 0.0, w_g: 1.0, w_gc: 1.0 });
        assert!((l2.total - l0.total - 2.0 * l2.l_i).abs() < 1e-14);
    }

    #[test]
    fn zero_probability_is_floored() {
        let labels = space(2, 2);
        let c = clip_with(&[BoundingBox::new(0.1, 0.1, 0.3, 0.3)], &[0], 0, &labels);
        let pred = StreamPrediction {
            person_actions: vec![vec![0.0, 1.0]],
            group_person: vec![0.0, 1.0],
            group_scene: vec![1.0, 0.0],
        };
        let l = compute_loss(&pred, &c, &LossWeights::collective());
        assert!(l.total.is_finite());
        assert!((l.l_i - (-LOG_EPS.ln()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn region_grid_agrees_with_concat_map() {
        let (model, stack) = toy_model(6);
        let norm = model.config.input_norm;
        let out = model.backbone.forward_with_taps(&stack.data.mapv(|v| v * norm.scale + norm.shift)).unwrap();
        let fm = concat_taps(&out.taps).unwrap();
        let b = BoundingBox::new(0.25, 0.3, 0.75, 0.9);
        let c = clip_with(&[b], &[0], 0, &model.config.labels);
        let (_, acts) = model.forward(&stack, &c).unwrap();
        assert_eq!(acts.person_regions[0], extract_person_region(&fm, &b, 4).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (model, _) = toy_model(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save_checkpoint(&path).unwrap();
        assert_eq!(StreamModel::load_checkpoint(&path).unwrap(), model);
        let mut v: serde_json::Value = io_util::read_json(&path).unwrap();
        v["version"] = serde_json::json!(99);
        io_util::write_json(&path, &v).unwrap();
        assert!(matches!(StreamModel::load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
