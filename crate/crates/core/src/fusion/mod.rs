//! Late fusion of stream outputs.
//!
//! Individual actions are fused per person across streams. Group activity is
//! fused over the joint set of person-branch and scene-branch vectors that
//! the branch mask selects, ordered `G_1 … G_K, C_1 … C_K`.

pub mod svm;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use svm::{train_ovr, LinearSvm, SvmParams};

use crate::data_model::{ModalityKind, ScoreRecord, StreamPrediction};
use crate::error::{Error, Result};
use crate::nn::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Max,
    Avg,
    Svm,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(FusionMode::Max),
            "avg" => Ok(FusionMode::Avg),
            "svm" => Ok(FusionMode::Svm),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Which branches of one stream take part in group fusion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamBranches {
    pub stream: ModalityKind,
    #[serde(default = "yes")]
    pub person: bool,
    #[serde(default = "yes")]
    pub scene: bool,
}

fn yes() -> bool {
    true
}

impl StreamBranches {
    pub fn both(stream: ModalityKind) -> Self {
        StreamBranches { stream, person: true, scene: true }
    }

    pub fn person_only(stream: ModalityKind) -> Self {
        StreamBranches { stream, person: true, scene: false }
    }

    pub fn scene_only(stream: ModalityKind) -> Self {
        StreamBranches { stream, person: false, scene: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub streams: Vec<StreamBranches>,
}

impl FusionConfig {
    pub fn new(mode: FusionMode, streams: Vec<StreamBranches>) -> Result<Self> {
        let cfg = FusionConfig { mode, streams };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every branch of rgb, flow and warped flow plus the person branch of
    /// posemap.
    pub fn volleyball_final(mode: FusionMode) -> Self {
        FusionConfig {
            mode,
            streams: vec![
                StreamBranches::both(ModalityKind::Rgb),
                StreamBranches::both(ModalityKind::Flow),
                StreamBranches::both(ModalityKind::WarpedFlow),
                StreamBranches::person_only(ModalityKind::Posemap),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.streams.is_empty() {
            return Err(Error::Fusion("fusion needs at least one stream".into()));
        }
        if self.selected_count() == 0 {
            return Err(Error::Fusion("branch mask selects no group score vector".into()));
        }
        Ok(())
    }

    pub fn selected_count(&self) -> usize {
        self.streams.iter().map(|s| s.person as usize + s.scene as usize).sum()
    }

    /// Keeps only the spatial streams (rgb, posemap).
    pub fn single_frame(&self) -> Result<Self> {
        let streams: Vec<_> =
            self.streams.iter().filter(|s| !s.stream.is_temporal()).cloned().collect();
        FusionConfig::new(self.mode, streams)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: FusionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_svm: Option<LinearSvm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_svm: Option<LinearSvm>,
}

impl FusionModel {
    /// Max or average fusion; nothing to learn.
    pub fn elementwise(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        if config.mode == FusionMode::Svm {
            return Err(Error::Fusion("svm fusion must be trained with train_svm_fusion".into()));
        }
        Ok(FusionModel { config, group_svm: None, action_svm: None })
    }
}

/// Element-wise max or mean of equally long score vectors. Max-fused
/// vectors are left unnormalized.
pub fn fuse_elementwise(scores: &[&[f64]], mode: FusionMode) -> Result<Vec<f64>> {
    let first = scores.first().ok_or_else(|| Error::Fusion("nothing to fuse".into()))?;
    let len = first.len();
    if scores.iter().any(|s| s.len() != len) {
        return Err(Error::Fusion("score vectors differ in length".into()));
    }
    match mode {
        FusionMode::Max => Ok((0..len)
            .map(|i| scores.iter().map(|s| s[i]).fold(f64::NEG_INFINITY, f64::max))
            .collect()),
        FusionMode::Avg => {
            let k = scores.len() as f64;
            Ok((0..len).map(|i| scores.iter().map(|s| s[i]).sum::<f64>() / k).collect())
        }
        FusionMode::Svm => Err(Error::Fusion("svm is not an element-wise fusion".into())),
    }
}

/// Group vectors chosen by the mask, `G` of every selected stream first,
/// then `C`.
pub fn selected_group_vectors<'a>(preds: &'a [StreamPrediction], config: &FusionConfig) -> Result<Vec<&'a [f64]>> {
    if preds.len() != config.streams.len() {
        return Err(Error::Fusion(format!(
            "fusion configured for {} streams, got {} predictions",
            config.streams.len(),
            preds.len()
        )));
    }
    let mut out = Vec::new();
    for (p, b) in preds.iter().zip(&config.streams) {
        if b.person {
            out.push(p.group_person.as_slice());
        }
    }
    for (p, b) in preds.iter().zip(&config.streams) {
        if b.scene {
            out.push(p.group_scene.as_slice());
        }
    }
    if out.is_empty() {
        return Err(Error::Fusion("branch mask selects no group score vector".into()));
    }
    Ok(out)
}

fn concat(vectors: &[&[f64]]) -> Vec<f64> {
    vectors.iter().flat_map(|v| v.iter().copied()).collect()
}

pub fn fuse_group(preds: &[StreamPrediction], model: &FusionModel) -> Result<Vec<f64>> {
    let selected = selected_group_vectors(preds, &model.config)?;
    match model.config.mode {
        FusionMode::Svm => {
            let svm = model.group_svm.as_ref().ok_or_else(|| Error::Fusion("svm fusion model is untrained".into()))?;
            svm.decision(&concat(&selected))
        }
        mode => fuse_elementwise(&selected, mode),
    }
}

fn person_vectors(preds: &[StreamPrediction], n: usize) -> Vec<&[f64]> {
    preds.iter().map(|p| p.person_actions[n].as_slice()).collect()
}

fn person_count(preds: &[StreamPrediction]) -> Result<usize> {
    let n = preds.first().ok_or_else(|| Error::Fusion("nothing to fuse".into()))?.person_actions.len();
    if preds.iter().any(|p| p.person_actions.len() != n) {
        return Err(Error::Fusion("streams disagree on the number of persons".into()));
    }
    Ok(n)
}

pub fn fuse_actions(preds: &[StreamPrediction], model: &FusionModel) -> Result<Vec<Vec<f64>>> {
    let n = person_count(preds)?;
    (0..n)
        .map(|k| {
            let vs = person_vectors(preds, k);
            match model.config.mode {
                FusionMode::Svm => {
                    let svm = model
                        .action_svm
                        .as_ref()
                        .ok_or_else(|| Error::Fusion("svm fusion model is untrained".into()))?;
                    svm.decision(&concat(&vs))
                }
                mode => fuse_elementwise(&vs, mode),
            }
        })
        .collect()
}

/// One clip's stream predictions with its ground truth, in stream order.
#[derive(Debug, Clone)]
pub struct LabeledScores {
    pub preds: Vec<StreamPrediction>,
    pub group: usize,
    pub actions: Vec<usize>,
}

/// Fits one-vs-rest SVMs on concatenated selected group scores and on
/// concatenated per-person action scores.
pub fn train_svm_fusion(
    config: FusionConfig,
    records: &[LabeledScores],
    n_groups: usize,
    n_actions: usize,
    params: &SvmParams,
) -> Result<FusionModel> {
    config.validate()?;
    let mut gx = Vec::with_capacity(records.len());
    let mut gy = Vec::with_capacity(records.len());
    let mut ax = Vec::new();
    let mut ay = Vec::new();
    for r in records {
        gx.push(concat(&selected_group_vectors(&r.preds, &config)?));
        gy.push(r.group);
        let n = person_count(&r.preds)?;
        if n != r.actions.len() {
            return Err(Error::Fusion("action labels do not match person count".into()));
        }
        for k in 0..n {
            ax.push(concat(&person_vectors(&r.preds, k)));
            ay.push(r.actions[k]);
        }
    }
    let group_svm = train_ovr(&gx, &gy, n_groups, params)?;
    // actions may legitimately collapse to one class on small sets
    let action_svm = match train_ovr(&ax, &ay, n_actions, params) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("action svm not trained: {e}");
            None
        }
    };
    let mut config = config;
    config.mode = FusionMode::Svm;
    Ok(FusionModel { config, group_svm: Some(group_svm), action_svm })
}

/// Fused prediction record for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub clip_id: String,
    pub group_pred: usize,
    pub person_preds: Vec<usize>,
}

/// Joins per-stream score dumps on `clip_id`, keeping the order of the
/// first dump. Clips missing from any dump are dropped.
pub fn align_dumps(dumps: &[Vec<ScoreRecord>]) -> Result<Vec<(String, Vec<StreamPrediction>)>> {
    let first = dumps.first().ok_or_else(|| Error::Fusion("no score dumps".into()))?;
    let maps: Vec<HashMap<&str, &StreamPrediction>> = dumps
        .iter()
        .map(|d| d.iter().map(|r| (r.clip_id.as_str(), &r.prediction)).collect())
        .collect();
    let mut out = Vec::with_capacity(first.len());
    for r in first {
        let preds: Option<Vec<StreamPrediction>> =
            maps.iter().map(|m| m.get(r.clip_id.as_str()).map(|p| (*p).clone())).collect();
        if let Some(preds) = preds {
            out.push((r.clip_id.clone(), preds));
        }
    }
    if out.is_empty() {
        return Err(Error::Fusion("score dumps share no clip ids".into()));
    }
    Ok(out)
}

pub fn fuse_clip(clip_id: &str, preds: &[StreamPrediction], model: &FusionModel) -> Result<FusedPrediction> {
    let group = fuse_group(preds, model)?;
    let actions = fuse_actions(preds, model)?;
    Ok(FusedPrediction {
        clip_id: clip_id.to_string(),
        group_pred: argmax(&group),
        person_preds: actions.iter().map(|a| argmax(a)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(g: &[f64], c: &[f64], persons: &[&[f64]]) -> StreamPrediction {
        StreamPrediction {
            person_actions: persons.iter().map(|p| p.to_vec()).collect(),
            group_person: g.to_vec(),
            group_scene: c.to_vec(),
        }
    }

    #[test]
    fn elementwise_examples() {
        let a = [0.2, 0.8];
        let b = [0.6, 0.4];
        let avg = fuse_elementwise(&[&a, &b], FusionMode::Avg).unwrap();
        assert!((avg[0] - 0.4).abs() < 1e-15 && (avg[1] - 0.6).abs() < 1e-15);
        assert_eq!(fuse_elementwise(&[&a, &b], FusionMode::Max).unwrap(), vec![0.6, 0.8]);
        assert_eq!(fuse_elementwise(&[&a], FusionMode::Max).unwrap(), a.to_vec());
        assert_eq!(fuse_elementwise(&[&a], FusionMode::Avg).unwrap(), a.to_vec());
        assert!(fuse_elementwise(&[], FusionMode::Avg).is_err());
        assert!(fuse_elementwise(&[&a, &[1.0]], FusionMode::Avg).is_err());
    }

    #[test]
    fn group_fusion_with_masks() {
        let p = pred(&[0.7, 0.3], &[0.1, 0.9], &[&[1.0]]);
        let cfg = FusionConfig::new(FusionMode::Avg, vec![StreamBranches::person_only(ModalityKind::Rgb)]).unwrap();
        let m = FusionModel::elementwise(cfg).unwrap();
        assert_eq!(fuse_group(std::slice::from_ref(&p), &m).unwrap(), vec![0.7, 0.3]);

        let v = [0.25, 0.75];
        let q = pred(&v, &v, &[&[1.0]]);
        let cfg = FusionConfig::new(
            FusionMode::Avg,
            vec![StreamBranches::both(ModalityKind::Rgb), StreamBranches::both(ModalityKind::Flow)],
        )
        .unwrap();
        let m = FusionModel::elementwise(cfg).unwrap();
        assert_eq!(fuse_group(&[q.clone(), q], &m).unwrap(), v.to_vec());
    }

    #[test]
    fn empty_mask_is_rejected() {
        let cfg = FusionConfig {
            mode: FusionMode::Avg,
            streams: vec![StreamBranches { stream: ModalityKind::Rgb, person: false, scene: false }],
        };
        assert!(cfg.validate().is_err());
        assert!(FusionModel::elementwise(cfg).is_err());
    }

    #[test]
    fn volleyball_final_mask_has_seven_vectors() {
        let cfg = FusionConfig::volleyball_final(FusionMode::Avg);
        assert_eq!(cfg.selected_count(), 7);
        let preds: Vec<_> = (0..4)
            .map(|k| pred(&[k as f64, 0.0], &[10.0 + k as f64, 0.0], &[&[1.0]]))
            .collect();
        let sel = selected_group_vectors(&preds, &cfg).unwrap();
        let firsts: Vec<f64> = sel.iter().map(|v| v[0]).collect();
        // posemap scene (13.0) is excluded
        assert_eq!(firsts, vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0]);
        assert_eq!(cfg.single_frame().unwrap().streams.len(), 2);
    }

    #[test]
    fn action_fusion() {
        let a = pred(&[0.5, 0.5], &[0.5, 0.5], &[&[0.2, 0.8], &[0.9, 0.1]]);
        let cfg = FusionConfig::new(
            FusionMode::Avg,
            vec![
                StreamBranches::both(ModalityKind::Rgb),
                StreamBranches::both(ModalityKind::Flow),
                StreamBranches::both(ModalityKind::Posemap),
            ],
        )
        .unwrap();
        let m = FusionModel::elementwise(cfg.clone()).unwrap();
        let same = fuse_actions(&[a.clone(), a.clone(), a.clone()], &m).unwrap();
        assert!((same[0][1] - 0.8).abs() < 1e-15 && (same[1][0] - 0.9).abs() < 1e-15);

        let b = pred(&[0.5, 0.5], &[0.5, 0.5], &[&[0.5, 0.5], &[0.3, 0.7]]);
        let c = pred(&[0.5, 0.5], &[0.5, 0.5], &[&[0.8, 0.2], &[0.0, 1.0]]);
        let fused = fuse_actions(&[a.clone(), b.clone(), c.clone()], &m).unwrap();
        assert!((fused[0][0] - (0.2 + 0.5 + 0.8) / 3.0).abs() < 1e-15);
        assert!((fused[1][1] - (0.1 + 0.7 + 1.0) / 3.0).abs() < 1e-15);

        let short = pred(&[0.5, 0.5], &[0.5, 0.5], &[&[0.5, 0.5]]);
        assert!(fuse_actions(&[a, b, short], &m).is_err());
    }

    #[test]
    fn block_average_svm_reproduces_avg_argmax() {
        let g = [0.1, 0.6, 0.3];
        let c = [0.5, 0.2, 0.3];
        let p = pred(&g, &c, &[&[1.0]]);
        let cfg = FusionConfig::new(FusionMode::Svm, vec![StreamBranches::both(ModalityKind::Rgb)]).unwrap();
        let svm = LinearSvm::block_average(2, 3);
        let model = FusionModel { config: cfg, group_svm: Some(svm), action_svm: None };
        let s = fuse_group(std::slice::from_ref(&p), &model).unwrap();
        assert!((s[0] - 0.3).abs() < 1e-15 && (s[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn untrained_svm_is_an_error() {
        let cfg = FusionConfig::new(FusionMode::Svm, vec![StreamBranches::both(ModalityKind::Rgb)]).unwrap();
        let model = FusionModel { config: cfg.clone(), group_svm: None, action_svm: None };
        let p = pred(&[0.5, 0.5], &[0.5, 0.5], &[&[1.0]]);
        assert!(fuse_group(&[p], &model).is_err());
        assert!(FusionModel::elementwise(cfg).is_err());
    }

    #[test]
    fn dumps_are_aligned_by_clip_id() {
        let rec = |id: &str, v: f64| ScoreRecord { clip_id: id.into(), prediction: pred(&[v, 1.0 - v], &[v, 1.0 - v], &[&[1.0]]) };
        let a = vec![rec("x", 0.1), rec("y", 0.2), rec("z", 0.3)];
        let b = vec![rec("z", 0.9), rec("x", 0.8)];
        let joined = align_dumps(&[a, b]).unwrap();
        assert_eq!(joined.len(), 2);
        assert_eq!(joined[0].0, "x");
        assert_eq!(joined[0].1[1].group_person[0], 0.8);
        assert!(align_dumps(&[vec![rec("p", 0.1)], vec![rec("q", 0.1)]]).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn stream_order_does_not_matter(vs in prop::collection::vec(simplex(4), 1..6), rot in 0usize..6) {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let mut rotated = refs.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            rotated.reverse();
            for mode in [FusionMode::Max, FusionMode::Avg] {
                let a = fuse_elementwise(&refs, mode).unwrap();
                let b = fuse_elementwise(&rotated, mode).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    // summation order may change the last bit of the mean
                    prop_assert!((x - y).abs() <= 1e-15);
                }
                if mode == FusionMode::Max {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn avg_stays_on_simplex_and_max_in_unit_box(vs in prop::collection::vec(simplex(5), 1..6)) {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let avg = fuse_elementwise(&refs, FusionMode::Avg).unwrap();
            prop_assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(avg.iter().all(|v| (0.0..=1.0).contains(v)));
            let max = fuse_elementwise(&refs, FusionMode::Max).unwrap();
            prop_assert!(max.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn duplicating_every_stream_keeps_avg_argmax(vs in prop::collection::vec(simplex(4), 1..5), times in 2usize..4) {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let dup: Vec<&[f64]> = refs.iter().flat_map(|r| std::iter::repeat_n(*r, times)).collect();
            let a = fuse_elementwise(&refs, FusionMode::Avg).unwrap();
            let b = fuse_elementwise(&dup, FusionMode::Avg).unwrap();
            let (ia, ib) = (argmax(&a), argmax(&b));
            // equal up to rounding, so only a near-tie may flip
            prop_assert!(ia == ib || (a[ia] - a[ib]).abs() < 1e-12);
        }

        #[test]
        fn block_average_matches_avg_argmax(vs in prop::collection::vec(simplex(3), 1..5)) {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let avg = fuse_elementwise(&refs, FusionMode::Avg).unwrap();
            let svm = LinearSvm::block_average(refs.len(), 3);
            let dec = svm.decision(&concat(&refs)).unwrap();
            let (ia, id) = (argmax(&avg), argmax(&dec));
            prop_assert!(ia == id || (avg[ia] - avg[id]).abs() < 1e-12);
        }
    }
}
