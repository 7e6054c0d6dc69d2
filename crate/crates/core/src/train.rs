//! Mini-batch training of one stream with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{ModalityStack, ScoreRecord, ValidatedClip};
use crate::error::{Error, Result};
use crate::stream::{compute_loss, LossBreakdown, StreamModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    params: AdamParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(model: &StreamModel, params: AdamParams) -> Self {
        let zeros: Vec<Vec<f64>> = model.views().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Adam { params, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, model: &mut StreamModel, grad: &StreamModel) {
        self.t += 1;
        let AdamParams { lr, beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let grads = grad.views();
        for (((p, g), m), v) in model.views_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// A clip paired with its modality input.
#[derive(Debug, Clone)]
pub struct Sample {
    pub stack: ModalityStack,
    pub clip: ValidatedClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub seed: u64,
    /// Probability of mirroring a sample horizontally each time it is drawn.
    pub hflip_prob: f64,
    /// Sum per-clip gradients in clip order rather than in parallel.
    pub deterministic: bool,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0) || !self.adam.lr.is_finite() {
            return Err(Error::Config("learning rate must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config("hflip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean training loss over all clips seen in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

fn mean_loss(losses: &[LossBreakdown]) -> LossBreakdown {
    let n = losses.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| losses.iter().map(f).sum::<f64>() / n;
    LossBreakdown { l_i: sum(|l| l.l_i), l_g: sum(|l| l.l_g), l_gc: sum(|l| l.l_gc), total: sum(|l| l.total) }
}

fn batch_gradient(
    model: &StreamModel,
    items: &[(usize, bool)],
    samples: &[Sample],
    deterministic: bool,
) -> Result<(Vec<(usize, LossBreakdown)>, StreamModel)> {
    let per_clip = |&(i, flip): &(usize, bool)| -> Result<(usize, LossBreakdown, StreamModel)> {
        let s = &samples[i];
        let (loss, grad) = if flip {
            model.loss_and_grad(&s.stack.hflipped(), &s.clip.hflipped())?
        } else {
            model.loss_and_grad(&s.stack, &s.clip)?
        };
        Ok((i, loss, grad))
    };
    let scale = 1.0 / items.len() as f64;
    if deterministic {
        let results: Vec<_> = items.par_iter().map(per_clip).collect::<Result<_>>()?;
        let mut total = model.zeros_like();
        let mut losses = Vec::with_capacity(results.len());
        for (i, loss, g) in results {
            total.add_scaled(&g, scale);
            losses.push((i, loss));
        }
        Ok((losses, total))
    } else {
        items
            .par_iter()
            .map(|item| {
                let (i, loss, g) = per_clip(item)?;
                let mut scaled = model.zeros_like();
                scaled.add_scaled(&g, scale);
                Ok((vec![(i, loss)], scaled))
            })
            .try_reduce(
                || (Vec::new(), model.zeros_like()),
                |(mut la, mut ga), (lb, gb)| {
                    la.extend(lb);
                    ga.add_scaled(&gb, 1.0);
                    Ok((la, ga))
                },
            )
    }
}

/// Trains `model` in place and returns the per-epoch loss history.
pub fn train_stream(model: &mut StreamModel, samples: &[Sample], opts: &TrainOptions) -> Result<Vec<EpochRecord>> {
    opts.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(model, opts.adam);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = vec![None; samples.len()];
        for (batch, chunk) in order.chunks(opts.batch_size).enumerate() {
            let items: Vec<(usize, bool)> = chunk.iter().map(|&i| (i, rng.random_bool(opts.hflip_prob))).collect();
            let (losses, grad) = batch_gradient(model, &items, samples, opts.deterministic)?;
            let mean = losses.iter().map(|(_, l)| l.total).sum::<f64>() / losses.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss: mean });
            }
            adam.step(model, &grad);
            for (i, l) in losses {
                epoch_losses[i] = Some(l);
            }
        }
        // summed in clip order so the record does not depend on the shuffle
        let losses: Vec<LossBreakdown> = epoch_losses.into_iter().flatten().collect();
        let loss = mean_loss(&losses);
        log::info!("{} epoch {epoch}: loss {:.6}", model.config.modality, loss.total);
        history.push(EpochRecord { epoch, loss });
    }
    Ok(history)
}

/// Forward pass over every sample, in sample order.
pub fn score_samples(model: &StreamModel, samples: &[Sample]) -> Result<Vec<ScoreRecord>> {
    samples
        .par_iter()
        .map(|s| {
            let (prediction, _) = model.forward(&s.stack, &s.clip)?;
            Ok(ScoreRecord { clip_id: s.clip.id().to_string(), prediction })
        })
        .collect()
}

/// Mean loss of `model` over `samples` without updating it.
pub fn evaluate_loss(model: &StreamModel, samples: &[Sample]) -> Result<LossBreakdown> {
    let losses: Vec<LossBreakdown> = samples
        .par_iter()
        .map(|s| {
            let (pred, _) = model.forward(&s.stack, &s.clip)?;
            Ok(compute_loss(&pred, &s.clip, &model.config.loss_weights))
        })
        .collect::<Result<_>>()?;
    Ok(mean_loss(&losses))
}
