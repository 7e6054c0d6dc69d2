//! Confusion matrices, accuracy, mean per-class accuracy and class merging.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{LabelSpace, ValidatedClip};
use crate::error::{Error, Result};
use crate::fusion::FusedPrediction;

/// Square count matrix; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u64>>", into = "Vec<Vec<u64>>")]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl TryFrom<Vec<Vec<u64>>> for ConfusionMatrix {
    type Error = Error;

    fn try_from(counts: Vec<Vec<u64>>) -> Result<Self> {
        ConfusionMatrix::from_counts(counts)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<u64>> {
    fn from(cm: ConfusionMatrix) -> Self {
        cm.counts
    }
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; n]; n] }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Evaluation("confusion matrix must be square and nonempty".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Correct over total.
    pub fn mca(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Evaluation("empty confusion matrix".into()));
        }
        Ok(self.correct() as f64 / total as f64)
    }

    /// Recall of each class; `None` for classes without ground-truth support.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let s: u64 = row.iter().sum();
                (s > 0).then(|| row[i] as f64 / s as f64)
            })
            .collect()
    }

    /// Mean recall over classes with support; unsupported classes are
    /// skipped with a warning.
    pub fn mpca(&self) -> Result<f64> {
        let acc = self.per_class_accuracy();
        let present: Vec<f64> = acc.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Evaluation("no class has ground-truth support".into()));
        }
        if present.len() < acc.len() {
            let missing: Vec<usize> = acc.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i).collect();
            log::warn!("classes {missing:?} have no ground-truth support and are excluded from MPCA");
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Sums rows and columns into `new_classes` classes via `mapping[old]`.
    pub fn merge_classes(&self, mapping: &[usize], new_classes: usize) -> Result<ConfusionMatrix> {
        if mapping.len() != self.num_classes() {
            return Err(Error::Evaluation(format!(
                "mapping covers {} classes, matrix has {}",
                mapping.len(),
                self.num_classes()
            )));
        }
        let mut hit = vec![false; new_classes];
        for &m in mapping {
            if m >= new_classes {
                return Err(Error::Evaluation(format!("mapping target {m} outside {new_classes} classes")));
            }
            hit[m] = true;
        }
        if let Some(miss) = hit.iter().position(|h| !h) {
            return Err(Error::Evaluation(format!("no old class maps onto new class {miss}")));
        }
        let mut out = ConfusionMatrix::new(new_classes);
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                out.counts[mapping[i]][mapping[j]] += c;
            }
        }
        Ok(out)
    }

    fn merge(mut self, other: &ConfusionMatrix) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

/// Mapping that folds crossing and walking into a single moving class.
/// Returns the old→new index map and the new class names.
pub fn moving_merge(classes: &[String]) -> Result<(Vec<usize>, Vec<String>)> {
    let find = |n: &str| {
        classes
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| Error::Evaluation(format!("merge needs a {n:?} class")))
    };
    let (cross, walk) = (find("crossing")?, find("walking")?);
    let mut names = Vec::new();
    let mut mapping = vec![0; classes.len()];
    for (i, c) in classes.iter().enumerate() {
        if i == walk {
            continue;
        }
        mapping[i] = names.len();
        names.push(if i == cross { "moving".to_string() } else { c.clone() });
    }
    mapping[walk] = mapping[cross];
    Ok((mapping, names))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub group_classes: Vec<String>,
    pub group: ConfusionMatrix,
    pub mca: f64,
    pub mpca: f64,
    pub action: ConfusionMatrix,
    pub action_accuracy: f64,
}

impl Evaluation {
    /// Same evaluation with group classes merged.
    pub fn merged(&self, mapping: &[usize], names: Vec<String>) -> Result<Evaluation> {
        let group = self.group.merge_classes(mapping, names.len())?;
        Ok(Evaluation {
            group_classes: names,
            mca: group.mca()?,
            mpca: group.mpca()?,
            group,
            action: self.action.clone(),
            action_accuracy: self.action_accuracy,
        })
    }
}

/// Scores fused predictions against ground truth clips.
pub fn evaluate(preds: &[FusedPrediction], truth: &[ValidatedClip], labels: &LabelSpace) -> Result<Evaluation> {
    let by_id: HashMap<&str, &ValidatedClip> = truth.iter().map(|c| (c.id(), c)).collect();
    if preds.is_empty() {
        return Err(Error::Evaluation("no predictions to evaluate".into()));
    }
    let unknown: Vec<&str> = preds.iter().filter(|p| !by_id.contains_key(p.clip_id.as_str())).map(|p| p.clip_id.as_str()).collect();
    if !unknown.is_empty() {
        return Err(Error::Evaluation(format!(
            "{} predicted clip ids have no ground truth (first: {})",
            unknown.len(),
            unknown[0]
        )));
    }
    let (n_g, n_i) = (labels.num_groups(), labels.num_actions());
    let pair = preds
        .par_iter()
        .map(|p| -> Result<(ConfusionMatrix, ConfusionMatrix)> {
            let clip = by_id[p.clip_id.as_str()];
            let mut g = ConfusionMatrix::new(n_g);
            let mut a = ConfusionMatrix::new(n_i);
            if p.group_pred >= n_g {
                return Err(Error::Evaluation(format!("{}: group prediction {} out of range", p.clip_id, p.group_pred)));
            }
            g.add(clip.group(), p.group_pred);
            if p.person_preds.len() != clip.persons().len() {
                return Err(Error::Evaluation(format!("{}: person count mismatch", p.clip_id)));
            }
            for (person, &pred) in clip.persons().iter().zip(&p.person_preds) {
                if pred >= n_i {
                    return Err(Error::Evaluation(format!("{}: action prediction {pred} out of range", p.clip_id)));
                }
                a.add(person.action, pred);
            }
            Ok((g, a))
        })
        .try_reduce(
            || (ConfusionMatrix::new(n_g), ConfusionMatrix::new(n_i)),
            |(g1, a1), (g2, a2)| Ok((g1.merge(&g2), a1.merge(&a2))),
        )?;
    let (group, action) = pair;
    Ok(Evaluation {
        group_classes: labels.group_classes.clone(),
        mca: group.mca()?,
        mpca: group.mpca()?,
        action_accuracy: action.mca().unwrap_or(0.0),
        group,
        action,
    })
}
