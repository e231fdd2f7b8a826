//! Per-class ROC/AUC scoring of predicted class distributions and the
//! class-averaged total AUC.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classes::ClassSet;
use crate::error::{GpsmError, Result};

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positives: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positives.len() {
        return Err(GpsmError::input("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GpsmError::input("scores contain NaN"));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based midranks of the positives; twice the value keeps the
    // arithmetic in integers.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positives[k]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(Some(twice_u as f64 / (2 * p * n) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub id: u16,
    pub name: String,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub per_class: Vec<ClassAuc>,
    /// Mean of the defined per-class AUCs.
    pub total_auc: f64,
    /// Classes left out of the mean.
    pub excluded: Vec<u16>,
    pub num_points: usize,
}

impl AucReport {
    pub fn per_class_auc(&self) -> BTreeMap<u16, f64> {
        self.per_class
            .iter()
            .filter_map(|c| c.auc.map(|a| (c.id, a)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_inputs(
    predictions: &[Vec<f64>],
    truth: &[u16],
    class_set: &ClassSet,
) -> Result<Vec<usize>> {
    if predictions.len() != truth.len() {
        return Err(GpsmError::input(
            "predictions and ground truth differ in length",
        ));
    }
    if let Some(i) = predictions.iter().position(|p| p.len() != class_set.len()) {
        return Err(GpsmError::input(format!(
            "prediction {i} has {} entries, expected {}",
            predictions[i].len(),
            class_set.len()
        )));
    }
    truth.iter().map(|&l| class_set.require_index(l)).collect()
}

/// Score each class against the rest with its predicted probability and
/// average the defined AUCs. Ground-truth-unlabeled points must be removed
/// beforehand.
pub fn total_auc(
    predictions: &[Vec<f64>],
    truth: &[u16],
    class_set: &ClassSet,
) -> Result<AucReport> {
    let truth_idx = check_inputs(predictions, truth, class_set)?;
    let mut per_class = Vec::with_capacity(class_set.len());
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut defined = 0usize;
    for (j, info) in class_set.iter().enumerate() {
        let scores: Vec<f64> = predictions.iter().map(|p| p[j]).collect();
        let positives: Vec<bool> = truth_idx.iter().map(|&t| t == j).collect();
        let n_pos = positives.iter().filter(|&&p| p).count();
        let auc = binary_auc(&scores, &positives)?;
        match auc {
            Some(a) => {
                sum += a;
                defined += 1;
            }
            None => excluded.push(info.id),
        }
        per_class.push(ClassAuc {
            id: info.id,
            name: info.name.clone(),
            auc,
            positives: n_pos,
            negatives: truth.len() - n_pos,
        });
    }
    if defined == 0 {
        return Err(GpsmError::Evaluation(
            "no class has both positive and negative ground-truth points".into(),
        ));
    }
    Ok(AucReport {
        per_class,
        total_auc: sum / defined as f64,
        excluded,
        num_points: truth.len(),
    })
}

/// ROC vertices `(false positive rate, true positive rate)` from the most to
/// the least confident threshold, starting at `(0, 0)`.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != positives.len() {
        return Err(GpsmError::input("scores and labels differ in length"));
    }
    let n_pos = positives.iter().filter(|&&p| p).count() as f64;
    let n_neg = positives.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push((
            if n_neg > 0.0 { fp / n_neg } else { 0.0 },
            if n_pos > 0.0 { tp / n_pos } else { 0.0 },
        ));
    }
    Ok(out)
}

/// Per-class ROC curves as CSV with header `class_id,fpr,tpr`.
pub fn roc_csv(predictions: &[Vec<f64>], truth: &[u16], class_set: &ClassSet) -> Result<String> {
    let truth_idx = check_inputs(predictions, truth, class_set)?;
    let mut csv = String::from("class_id,fpr,tpr\n");
    for (j, info) in class_set.iter().enumerate() {
        let scores: Vec<f64> = predictions.iter().map(|p| p[j]).collect();
        let positives: Vec<bool> = truth_idx.iter().map(|&t| t == j).collect();
        for (f, t) in roc_curve(&scores, &positives)? {
            writeln!(csv, "{},{f},{t}", info.id).unwrap();
        }
    }
    Ok(csv)
}
