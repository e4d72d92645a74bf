//! Binary classification metrics: accuracy, F1, and area under the
//! precision-recall curve (average-precision formulation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Full evaluation of scored predictions against labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub f1: f64,
    pub aupr: f64,
    pub confusion: Confusion,
    pub n: usize,
    pub threshold: f64,
}

fn validate(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {bad} is not binary")));
    }
    Ok(())
}

/// Confusion counts; scores at or above the threshold classify as positive,
/// so a score of exactly 0.5 counts as a positive call at the default.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    validate(scores, labels)?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Fraction of correct calls at threshold 0.5.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let c = confusion(scores, labels, 0.5)?;
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// Harmonic mean of precision and recall from confusion counts. With no
/// true positives: 0 if any positive call or positive label exists, else 1
/// (the degenerate all-negative case is perfectly classified).
pub fn f1_from_confusion(c: &Confusion) -> f64 {
    if c.tp == 0 {
        return if c.fp > 0 || c.fn_ > 0 { 0.0 } else { 1.0 };
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    2.0 * p * r / (p + r)
}

/// F1 at threshold 0.5.
pub fn f1(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(f1_from_confusion(&confusion(scores, labels, 0.5)?))
}

/// Area under the precision-recall curve as average precision:
/// sum of (R_k - R_{k-1}) * P_k over descending score thresholds, with
/// equal scores grouped into a single step so ordering cannot matter.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    validate(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::invalid(
            "area under the PR curve is undefined for single-class labels",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // advance over the whole tie group before taking a PR point
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Full report; the threshold applies to accuracy/F1/confusion, while AUPR
/// is threshold-free.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let c = confusion(scores, labels, threshold)?;
    Ok(EvalReport {
        acc: (c.tp + c.tn) as f64 / c.total() as f64,
        f1: f1_from_confusion(&c),
        aupr: aupr(scores, labels)?,
        confusion: c,
        n: scores.len(),
        threshold,
    })
}
