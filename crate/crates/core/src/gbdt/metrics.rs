use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Binary classification summary at threshold 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    /// Indexed by label: `[negative, positive]`.
    pub classes: [ClassMetrics; 2],
    pub accuracy: f64,
}

/// Area under the ROC curve via the rank-sum statistic, tied scores
/// receiving their average rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn class_metrics(tp: usize, fp: usize, fn_: usize) -> ClassMetrics {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// AUC plus per-class precision, recall and F1 with positives predicted at
/// probability `>= 0.5`.
pub fn evaluate_binary(probabilities: &[f64], labels: &[bool]) -> Result<BinaryReport> {
    if probabilities.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("no examples to evaluate".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in probabilities.iter().zip(labels) {
        match (p >= 0.5, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(BinaryReport {
        auc: auc(probabilities, labels),
        classes: [class_metrics(tn, fn_, fp), class_metrics(tp, fp, fn_)],
        accuracy: (tp + tn) as f64 / labels.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores() {
        let r = evaluate_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.classes[1].f1, 1.0);
        assert_eq!(r.classes[0].f1, 1.0);
    }

    #[test]
    fn ties_are_averaged() {
        // every score equal: AUC exactly one half
        assert_eq!(
            auc(&[0.3; 6], &[true, false, true, false, false, true]),
            Some(0.5)
        );
        // one positive tied with one negative above another negative
        assert_eq!(auc(&[0.5, 0.5, 0.1], &[true, false, false]), Some(0.75));
    }

    #[test]
    fn single_class_has_no_auc() {
        let r = evaluate_binary(&[0.2, 0.9], &[true, true]).unwrap();
        assert_eq!(r.auc, None);
        assert_eq!(r.classes[1].recall, 0.5);
        assert_eq!(r.classes[0].support, 0);
    }
}
