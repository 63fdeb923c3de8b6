//! Prediction rules and test metrics.
//!
//! Class indices are zero-based with `k` standing for the augmented class.

use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::error::{LacError, Result};
use crate::loss::softmax;
use crate::models_optim::Model;

/// Index of the largest score; ties go to the smallest index.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// OVR rejection rule over the `k` known-class scores: ac (index `k`) when
/// every score is negative, otherwise the argmax.
pub fn predict_ovr_threshold(known_scores: &[f64]) -> usize {
    let best = predict(known_scores);
    if known_scores[best] < 0.0 {
        known_scores.len()
    } else {
        best
    }
}

/// Softmax-threshold rule over `k` known-class probabilities.
pub fn predict_softmax_threshold(known_probs: &[f64], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(LacError::invalid(format!("threshold {tau} outside (0,1]")));
    }
    let best = predict(known_probs);
    Ok(if known_probs[best] < tau {
        known_probs.len()
    } else {
        best
    })
}

fn check_lengths(preds: &[usize], truths: &[usize]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(LacError::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(LacError::EmptyBatch("predictions"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64> {
    check_lengths(preds, truths)?;
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn confusion_matrix(preds: &[usize], truths: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(preds, truths)?;
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= classes || t >= classes {
            return Err(LacError::invalid(format!(
                "label outside 1..={classes}"
            )));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

/// Unweighted mean of per-class F1 over all `classes`. A class with no true
/// and no predicted instances scores 0.
pub fn macro_f1(preds: &[usize], truths: &[usize], classes: usize) -> Result<f64> {
    let cm = confusion_matrix(preds, truths, classes)?;
    Ok(macro_f1_from_confusion(&cm))
}

fn macro_f1_from_confusion(cm: &[Vec<usize>]) -> f64 {
    let classes = cm.len();
    let total: f64 = (0..classes)
        .map(|c| {
            let tp = cm[c][c] as f64;
            let actual: usize = cm[c].iter().sum();
            let predicted: usize = cm.iter().map(|row| row[c]).sum();
            let denom = (actual + predicted) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .sum();
    total / classes as f64
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half (Mann-Whitney).
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(LacError::Shape("scores and flags differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(LacError::invalid("NaN score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(LacError::invalid("AUC needs both positive and negative examples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// How test predictions and augmented-class scores are derived from the
/// `k + 1` model outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionRule {
    /// Argmax over all outputs; ac score = softmax probability of output `k`.
    Argmax,
    /// [`predict_ovr_threshold`] on the known outputs; ac score = negated
    /// max known score.
    OvrThreshold,
    /// [`predict_softmax_threshold`] on the softmax over known outputs; ac
    /// score = negated max known probability.
    SoftmaxThreshold { tau: f64 },
}

pub const SOFTMAX_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: f64,
    /// Rows are true classes, columns predictions (zero-based, ac last).
    pub confusion: Vec<Vec<usize>>,
    pub n_test: usize,
    pub k: usize,
}

/// Predictions and ac scores of `rule` for each row of model scores.
pub fn apply_rule(rule: PredictionRule, scores: &[f64]) -> Result<(usize, f64)> {
    let k = scores.len() - 1;
    Ok(match rule {
        PredictionRule::Argmax => (predict(scores), softmax(scores)?[k]),
        PredictionRule::OvrThreshold => {
            let known = &scores[..k];
            let max = known.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (predict_ovr_threshold(known), -max)
        }
        PredictionRule::SoftmaxThreshold { tau } => {
            let probs = softmax(&scores[..k])?;
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (predict_softmax_threshold(&probs, tau)?, -max)
        }
    })
}

/// Metrics from predictions, ac scores and true labels over `k + 1` classes.
pub fn report(preds: &[usize], ac_scores: &[f64], truths: &[usize], k: usize) -> Result<MetricsReport> {
    let confusion = confusion_matrix(preds, truths, k + 1)?;
    let is_ac: Vec<bool> = truths.iter().map(|&t| t == k).collect();
    Ok(MetricsReport {
        accuracy: accuracy(preds, truths)?,
        macro_f1: macro_f1_from_confusion(&confusion),
        auc: auc(ac_scores, &is_ac)?,
        confusion,
        n_test: preds.len(),
        k,
    })
}

/// Scores the test split with `model` under `rule`.
pub fn evaluate(model: &Model, rule: PredictionRule, test: &Dataset) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(LacError::EmptyBatch("test"));
    }
    let truths = test
        .labels()
        .ok_or_else(|| LacError::invalid("test split has no labels"))?;
    let k = model.outputs() - 1;
    let scores = model.forward(test.features())?;
    let mut preds = Vec::with_capacity(test.len());
    let mut ac_scores = Vec::with_capacity(test.len());
    for row in scores.outer_iter() {
        let (p, s) = apply_rule(rule, row.as_slice().expect("standard layout"))?;
        preds.push(p);
        ac_scores.push(s);
    }
    report(&preds, &ac_scores, truths, k)
}
