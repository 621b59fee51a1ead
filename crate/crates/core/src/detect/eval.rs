use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub composite: f64,
    pub confusion: Confusion,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Area under the ROC curve as the Mann–Whitney U statistic over `n₁ n₀`,
/// with tied scores counted as ½.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuroc("both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, with ties given their average rank.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the average (i + j + 2) / 2.
        let positives_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += positives_in_tie * (i + j + 2) as u128;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - (pos as u128) * (pos as u128 + 1);
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Threshold metrics with predicted positive iff `score ≥ threshold`.
pub fn eval_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalSummary> {
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let auroc = auroc(scores, labels)?;
    Ok(EvalSummary { precision, recall, f1, auroc, composite: (f1 + auroc) / 2.0, confusion: c, threshold })
}

/// ROC curve from the highest threshold down, starting at (0, 0).
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuroc("both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold: t });
    }
    Ok(points)
}

/// Distinct score that maximizes F1 when used as the threshold; the lowest
/// such score wins ties.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let mut candidates = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, 0.5);
    for t in candidates {
        let f1 = eval_at_threshold(scores, labels, t)?.f1;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedAuroc(_))));
    }

    #[test]
    fn threshold_examples() {
        let e = eval_at_threshold(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.5).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
        let e = eval_at_threshold(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1], 0.5).unwrap();
        assert_eq!((e.recall, e.f1), (0.0, 0.0));

        let mut scores = vec![0.9; 46];
        scores.extend(vec![0.9; 4]);
        scores.extend(vec![0.1; 4]);
        scores.extend(vec![0.1; 46]);
        let mut labels = vec![1u8; 46];
        labels.extend(vec![0; 4]);
        labels.extend(vec![1; 4]);
        labels.extend(vec![0; 46]);
        let e = eval_at_threshold(&scores, &labels, 0.5).unwrap();
        assert_eq!(e.confusion, Confusion { tp: 46, fp: 4, tn: 46, fn_: 4 });
        assert!((e.precision - 0.92).abs() < 1e-15);
        assert!((e.recall - 0.92).abs() < 1e-15);
        assert!((e.f1 - 0.92).abs() < 1e-15);
        assert_eq!(e.composite, (e.f1 + e.auroc) / 2.0);
    }

    #[test]
    fn roc_ends_at_one_one() {
        let pts = roc_points(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(pts.len(), 5);
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn tuned_threshold_maximizes_f1() {
        let scores = [0.1, 0.2, 0.3, 0.35, 0.4];
        let labels = [0, 0, 1, 1, 1];
        let t = tune_threshold(&scores, &labels).unwrap();
        assert_eq!(t, 0.3);
        assert_eq!(eval_at_threshold(&scores, &labels, t).unwrap().f1, 1.0);
    }
}
