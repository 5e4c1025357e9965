//! Support-weighted F1 over binary label sets and majority baselines.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tasks::Label;

/// Per-label precision/recall/F1 with support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelScore {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-label scores over every label seen in either column.
pub fn label_scores(pairs: &[(Label, Label)]) -> Result<Vec<LabelScore>> {
    if pairs.is_empty() {
        return Err(Error::data("weighted F1 of an empty prediction set"));
    }
    // (true positives, predicted count, support)
    let mut counts: BTreeMap<Label, (usize, usize, usize)> = BTreeMap::new();
    for &(truth, pred) in pairs {
        counts.entry(truth).or_default().2 += 1;
        let e = counts.entry(pred).or_default();
        e.1 += 1;
        if truth == pred {
            e.0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(label, (tp, predicted, support))| {
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            LabelScore {
                label,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect())
}

/// `sum_l (support_l / N) * F1_l` over `(true, predicted)` pairs, with
/// F1 = 0 whenever precision + recall = 0.
pub fn weighted_f1(pairs: &[(Label, Label)]) -> Result<f64> {
    let scores = label_scores(pairs)?;
    let n = pairs.len() as f64;
    Ok(scores
        .iter()
        .map(|s| s.support as f64 / n * s.f1)
        .sum())
}

/// Most frequent label; ties go to the alphabetically first label name.
pub fn majority_label(truth: &[Label]) -> Result<Label> {
    let mut counts: BTreeMap<&'static str, (usize, Label)> = BTreeMap::new();
    for &l in truth {
        counts.entry(l.name()).or_insert((0, l)).0 += 1;
    }
    let mut best: Option<(usize, Label)> = None;
    for (_, (c, l)) in counts {
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, l));
        }
    }
    best.map(|(_, l)| l)
        .ok_or_else(|| Error::data("majority baseline of an empty label set"))
}

/// Weighted F1 of always predicting the majority label.
pub fn majority_baseline(truth: &[Label]) -> Result<f64> {
    let m = majority_label(truth)?;
    let pairs: Vec<(Label, Label)> = truth.iter().map(|&t| (t, m)).collect();
    weighted_f1(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    fn constant(a: Label, na: usize, b: Label, nb: usize, pred: Label) -> Vec<(Label, Label)> {
        let mut v = vec![(a, pred); na];
        v.extend(vec![(b, pred); nb]);
        v
    }

    #[test]
    fn published_majority_baselines() {
        let cases = [
            (constant(Hold, 4203, Shift, 2330, Hold), 0.5037),
            (constant(Hold, 1496, Shift, 971, Hold), 0.4579),
            (constant(Short, 238, Long, 238, Short), 0.3333),
            (constant(Hold, 143, Shift, 170, Shift), 0.3823),
        ];
        for (pairs, expect) in cases {
            let f = weighted_f1(&pairs).unwrap();
            assert!((f - expect).abs() <= 1e-4, "{f} vs {expect}");
        }
    }

    #[test]
    fn majority_baseline_matches() {
        let mut truth = vec![Hold; 1496];
        truth.extend(vec![Shift; 971]);
        assert!((majority_baseline(&truth).unwrap() - 0.4579).abs() <= 1e-4);
        let mut tie = vec![Short; 5];
        tie.extend(vec![Long; 5]);
        assert_eq!(majority_label(&tie).unwrap(), Long);
        let mut tie = vec![Shift; 3];
        tie.extend(vec![Hold; 3]);
        assert_eq!(majority_label(&tie).unwrap(), Hold);
    }

    #[test]
    fn perfect_and_empty() {
        let pairs = vec![(Hold, Hold), (Shift, Shift), (Hold, Hold)];
        assert_eq!(weighted_f1(&pairs).unwrap(), 1.0);
        assert!(weighted_f1(&[]).is_err());
        assert!(majority_baseline(&[]).is_err());
    }

    #[test]
    fn hand_computed_mixed_case() {
        // HOLD: tp 2, predicted 3, support 3 -> p 2/3 r 2/3 f 2/3
        // SHIFT: tp 1, predicted 2, support 2 -> p 1/2 r 1/2 f 1/2
        let pairs = vec![(Hold, Hold), (Hold, Hold), (Hold, Shift), (Shift, Shift), (Shift, Hold)];
        let f = weighted_f1(&pairs).unwrap();
        assert!((f - (0.6 * 2.0 / 3.0 + 0.4 * 0.5)).abs() < 1e-15);
    }
}
