//! End-to-end orchestration over a [`RunConfig`]: data generation, modality
//! caching, per-stream training, score dumps, fusion and evaluation. Every
//! step reads and writes files under the configured directories.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data_model::{read_clip_index, read_score_dump, write_score_dump, LabelSpace, ModalityKind, ValidatedClip};
use crate::datasets::{generate_synthetic, SyntheticDataset};
use crate::error::{Error, Result};
use crate::fusion::{
    align_dumps, fuse_clip, train_svm_fusion, FusedPrediction, FusionConfig, FusionMode, FusionModel, LabeledScores,
};
use crate::io_util;
use crate::metrics::{evaluate, moving_merge, Evaluation};
use crate::modality::{load_modality, save_cached, BlockMatcher, ModalitySource};
use crate::stream::StreamModel;
use crate::train::{score_samples, train_stream, AdamParams, EpochRecord, Sample, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Output locations derived from the run configuration.
pub struct Layout<'a>(pub &'a RunConfig);

impl Layout<'_> {
    pub fn checkpoint(&self, kind: ModalityKind) -> PathBuf {
        self.0.output_dir.join("checkpoints").join(format!("{kind}.json"))
    }

    pub fn history(&self, kind: ModalityKind) -> PathBuf {
        self.0.output_dir.join("history").join(format!("{kind}.json"))
    }

    pub fn scores(&self, kind: ModalityKind, split: Split) -> PathBuf {
        self.0.output_dir.join("scores").join(format!("{kind}.{}.jsonl", split.as_str()))
    }

    pub fn fusion_model(&self) -> PathBuf {
        self.0.output_dir.join("fusion").join("model.json")
    }

    pub fn predictions(&self) -> PathBuf {
        self.0.output_dir.join("fusion").join("predictions.jsonl")
    }

    pub fn metrics(&self) -> PathBuf {
        self.0.output_dir.join("metrics.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.0.output_dir.join("report")
    }
}

pub fn gen_synthetic(cfg: &RunConfig) -> Result<SyntheticDataset> {
    let synth = cfg.synthetic.as_ref().ok_or_else(|| Error::Config("config has no synthetic section".into()))?;
    generate_synthetic(synth, &cfg.dataset.root)
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<ValidatedClip>> {
    let labels = cfg.labels()?;
    let index = match split {
        Split::Train => &cfg.dataset.train_index,
        Split::Test => &cfg.dataset.test_index,
    };
    read_clip_index(&cfg.dataset.root.join(index), &labels)
}

fn source(cfg: &RunConfig) -> ModalitySource {
    ModalitySource { root: cfg.dataset.root.clone(), input_size: cfg.input_size, window: cfg.window }
}

/// Computes and caches one modality for every clip of both splits.
/// Returns the number of clips written.
pub fn prepare(cfg: &RunConfig, kind: ModalityKind) -> Result<usize> {
    if kind == ModalityKind::Rgb {
        return Err(Error::Config("rgb is read straight from frames and needs no preparation".into()));
    }
    let src = source(cfg);
    let estimator = BlockMatcher::default();
    let mut clips = load_split(cfg, Split::Train)?;
    clips.extend(load_split(cfg, Split::Test)?);
    clips.par_iter().try_for_each(|clip| {
        let stack = src.build(kind, clip, &estimator)?;
        save_cached(&cfg.cache_dir, &stack)
    })?;
    Ok(clips.len())
}

fn samples(cfg: &RunConfig, kind: ModalityKind, split: Split) -> Result<Vec<Sample>> {
    let src = source(cfg);
    load_split(cfg, split)?
        .into_par_iter()
        .map(|clip| Ok(Sample { stack: load_modality(&cfg.cache_dir, &src, kind, &clip)?, clip }))
        .collect()
}

fn stream_seed(cfg: &RunConfig, kind: ModalityKind) -> u64 {
    let index = ModalityKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64;
    cfg.seed.wrapping_mul(1_000_003).wrapping_add(index)
}

/// Trains one stream, then writes its checkpoint, loss history and score
/// dumps for both splits.
pub fn train(cfg: &RunConfig, kind: ModalityKind) -> Result<Vec<EpochRecord>> {
    let spec = cfg.stream(kind)?;
    let stream_cfg = cfg.stream_config(kind)?;
    let train_set = samples(cfg, kind, Split::Train)?;
    let seed = stream_seed(cfg, kind);
    let mut model = StreamModel::new(stream_cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamParams::with_lr(spec.lr),
        seed,
        hflip_prob: cfg.hflip_prob,
        deterministic: cfg.deterministic,
    };
    let history = train_stream(&mut model, &train_set, &opts)?;
    let layout = Layout(cfg);
    model.save_checkpoint(&layout.checkpoint(kind))?;
    io_util::write_json(&layout.history(kind), &history)?;
    write_score_dump(&layout.scores(kind, Split::Train), &score_samples(&model, &train_set)?)?;
    let test_set = samples(cfg, kind, Split::Test)?;
    write_score_dump(&layout.scores(kind, Split::Test), &score_samples(&model, &test_set)?)?;
    Ok(history)
}

/// Rewrites the score dump of one split from the saved checkpoint.
pub fn dump_scores(cfg: &RunConfig, kind: ModalityKind, split: Split) -> Result<usize> {
    let layout = Layout(cfg);
    let model = StreamModel::load_checkpoint(&layout.checkpoint(kind))?;
    let set = samples(cfg, kind, split)?;
    let records = score_samples(&model, &set)?;
    write_score_dump(&layout.scores(kind, split), &records)?;
    Ok(records.len())
}

fn fusion_config(cfg: &RunConfig, mode: FusionMode, single_frame: bool) -> Result<FusionConfig> {
    let base = FusionConfig::new(mode, cfg.fusion.streams.clone())?;
    if single_frame {
        base.single_frame()
    } else {
        Ok(base)
    }
}

fn read_dumps(cfg: &RunConfig, fc: &FusionConfig, split: Split) -> Result<Vec<(String, Vec<crate::data_model::StreamPrediction>)>> {
    let layout = Layout(cfg);
    let dumps = fc.streams.iter().map(|b| read_score_dump(&layout.scores(b.stream, split))).collect::<Result<Vec<_>>>()?;
    align_dumps(&dumps)
}

/// Builds the fusion model (fitting the SVM on training-split scores when
/// asked) and fuses the test split. Nothing is written.
pub fn fuse_predictions(
    cfg: &RunConfig,
    mode: FusionMode,
    single_frame: bool,
) -> Result<(FusionModel, Vec<FusedPrediction>)> {
    let fc = fusion_config(cfg, mode, single_frame)?;
    let labels = cfg.labels()?;
    let model = match mode {
        FusionMode::Svm => {
            let truth = load_split(cfg, Split::Train)?;
            let by_id: std::collections::HashMap<&str, &ValidatedClip> = truth.iter().map(|c| (c.id(), c)).collect();
            let records = read_dumps(cfg, &fc, Split::Train)?
                .into_iter()
                .filter_map(|(id, preds)| {
                    by_id.get(id.as_str()).map(|c| LabeledScores {
                        preds,
                        group: c.group(),
                        actions: c.persons().iter().map(|p| p.action).collect(),
                    })
                })
                .collect::<Vec<_>>();
            train_svm_fusion(fc, &records, labels.num_groups(), labels.num_actions(), &cfg.svm)?
        }
        _ => FusionModel::elementwise(fc)?,
    };
    let preds = read_dumps(cfg, &model.config, Split::Test)?
        .iter()
        .map(|(id, p)| fuse_clip(id, p, &model))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, preds))
}

/// `fuse` subcommand: writes the fusion model and the fused test predictions.
pub fn fuse(cfg: &RunConfig, mode: FusionMode, single_frame: bool) -> Result<Vec<FusedPrediction>> {
    let (model, preds) = fuse_predictions(cfg, mode, single_frame)?;
    let layout = Layout(cfg);
    io_util::write_json(&layout.fusion_model(), &model)?;
    io_util::write_json_lines(&layout.predictions(), &preds)?;
    Ok(preds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub mode: FusionMode,
    pub single_frame: bool,
    pub merged: bool,
    pub evaluation: Evaluation,
}

fn score(cfg: &RunConfig, preds: &[FusedPrediction], merge: bool) -> Result<Evaluation> {
    let labels: LabelSpace = cfg.labels()?;
    let truth = load_split(cfg, Split::Test)?;
    let eval = evaluate(preds, &truth, &labels)?;
    if merge {
        let (mapping, names) = moving_merge(&labels.group_classes)?;
        eval.merged(&mapping, names)
    } else {
        Ok(eval)
    }
}

/// `evaluate` subcommand. Scores the saved fused predictions, or re-fuses
/// the spatial streams only with `single_frame`, and writes `metrics.json`.
pub fn evaluate_run(cfg: &RunConfig, merge_moving: bool, single_frame: bool) -> Result<MetricsFile> {
    let layout = Layout(cfg);
    let (mode, preds) = if single_frame {
        (cfg.fusion.mode, fuse_predictions(cfg, cfg.fusion.mode, true)?.1)
    } else {
        let path = layout.predictions();
        if !path.exists() {
            return Err(Error::MissingCache(path));
        }
        let model: FusionModel = io_util::read_json(&layout.fusion_model())?;
        (model.config.mode, io_util::read_json_lines(&path)?)
    };
    let evaluation = score(cfg, &preds, merge_moving)?;
    let out = MetricsFile { mode, single_frame, merged: merge_moving, evaluation };
    io_util::write_json(&layout.metrics(), &out)?;
    Ok(out)
}

/// Group accuracy of an in-memory fusion over arbitrary branches, on the
/// test split. Used for per-stream and per-branch comparisons.
pub fn fused_accuracy(cfg: &RunConfig, fc: FusionConfig) -> Result<f64> {
    let mut c = cfg.clone();
    c.fusion = fc;
    let (_, preds) = fuse_predictions(&c, c.fusion.mode, false)?;
    Ok(score(&c, &preds, false)?.mca)
}

/// Summary of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub histories: Vec<(ModalityKind, Vec<EpochRecord>)>,
    pub metrics: MetricsFile,
}

/// Generates data when configured, prepares every non-RGB modality, trains
/// every stream, fuses with the configured mode and evaluates.
pub fn run_all(cfg: &RunConfig) -> Result<RunSummary> {
    if cfg.synthetic.is_some() {
        gen_synthetic(cfg)?;
    }
    let mut histories = Vec::new();
    for s in &cfg.streams {
        if s.modality != ModalityKind::Rgb {
            prepare(cfg, s.modality)?;
        }
        histories.push((s.modality, train(cfg, s.modality)?));
    }
    fuse(cfg, cfg.fusion.mode, false)?;
    let metrics = evaluate_run(cfg, false, false)?;
    Ok(RunSummary { histories, metrics })
}

/// `report` subcommand: CSV tables and SVG figures from whatever metrics
/// and loss histories the run has produced so far.
pub fn report(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout(cfg);
    let metrics_path = layout.metrics();
    let metrics: Option<MetricsFile> = if metrics_path.exists() { Some(io_util::read_json(&metrics_path)?) } else { None };
    let mut curves = Vec::new();
    for s in &cfg.streams {
        let path = layout.history(s.modality);
        if path.exists() {
            curves.push((s.modality.to_string(), io_util::read_json::<Vec<EpochRecord>>(&path)?));
        }
    }
    let labels = cfg.labels()?;
    crate::report::write_report(&layout.report_dir(), metrics.as_ref(), &labels.action_classes, &curves)
}
