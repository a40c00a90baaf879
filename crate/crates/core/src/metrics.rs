//! AUC, per-class precision and per-node evaluation reports.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Batch, Matrix, ModelParams};

/// How multi-class AUC is reduced to a single number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucAverage {
    /// Unweighted mean of one-vs-rest AUCs over the classes present.
    #[default]
    Macro,
    /// Single binary AUC over all (sample, class) pairs, one-hot targets.
    Micro,
}

/// Evaluation of one model on one labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub loss: f64,
    /// One entry per class; 0 for classes the model never predicts.
    pub per_class_precision: Vec<f64>,
    pub n_samples: usize,
}

/// Mann-Whitney AUC with average ranks for ties.
///
/// `labels` are 0/1; both classes must be present.
pub fn auc_binary(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Input("binary labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative samples".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok((u / (p * q)).clamp(0.0, 1.0))
}

/// One-vs-rest AUC over the classes present in `labels`.
pub fn auc_ovr(probs: &Matrix, labels: &[usize], average: AucAverage) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let k = probs.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let mut present = vec![false; k];
    labels.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::UndefinedMetric(
            "one-vs-rest AUC needs at least two classes".into(),
        ));
    }
    match average {
        AucAverage::Macro => {
            let mut total = 0.0;
            let mut count = 0;
            for c in (0..k).filter(|&c| present[c]) {
                let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, c)).collect();
                let bin: Vec<u8> = labels.iter().map(|&y| u8::from(y == c)).collect();
                total += auc_binary(&scores, &bin)?;
                count += 1;
            }
            Ok(total / count as f64)
        }
        AucAverage::Micro => {
            let scores = probs.as_slice().to_vec();
            let bin: Vec<u8> = labels
                .iter()
                .flat_map(|&y| (0..k).map(move |c| u8::from(y == c)))
                .collect();
            auc_binary(&scores, &bin)
        }
    }
}

/// Macro one-vs-rest AUC.
pub fn auc_macro_ovr(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    auc_ovr(probs, labels, AucAverage::Macro)
}

/// `TP / (TP + FP)` per class; classes never predicted get 0.
pub fn precision_per_class(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::Shape("prediction and label lengths differ".into()));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        predicted[p] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    Ok(tp
        .iter()
        .zip(&predicted)
        .map(|(&tp, &n)| if n == 0 { 0.0 } else { tp as f64 / n as f64 })
        .collect())
}

/// Loss, AUC and precision of `params` on `batch`.
pub fn evaluate(params: &ModelParams, batch: &Batch, average: AucAverage) -> Result<EvalReport> {
    let logits = nn::forward(params, batch)?;
    let (loss, probs) = nn::softmax_cross_entropy(&logits, &batch.labels)?;
    let auc = auc_ovr(&probs, &batch.labels, average)?;
    let pred = probs.argmax_rows();
    let per_class_precision = precision_per_class(&pred, &batch.labels, probs.cols())?;
    Ok(EvalReport {
        auc,
        loss,
        per_class_precision,
        n_samples: batch.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn perfect_and_tied() {
        assert_eq!(auc_binary(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_binary(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn small_pairwise_case() {
        // Pairs (pos, neg): 0.35>0.1, 0.35<0.4, 0.8>0.1, 0.8>0.4 -> 3/4.
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        assert_eq!(pair_oracle(&s, &l), 0.75);
        assert!((auc_binary(&s, &l).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc_binary(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
        let probs = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        assert!(matches!(
            auc_macro_ovr(&probs, &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn binary_reduction_and_one_hot() {
        let pos = [0.9, 0.2, 0.6, 0.4, 0.4];
        let labels = [1usize, 0, 1, 0, 1];
        let rows: Vec<Vec<f64>> = pos.iter().map(|&p| vec![1.0 - p, p]).collect();
        let probs = Matrix::from_rows(&rows).unwrap();
        let bin: Vec<u8> = labels.iter().map(|&y| y as u8).collect();
        let a = auc_macro_ovr(&probs, &labels).unwrap();
        assert!((a - auc_binary(&pos, &bin).unwrap()).abs() < 1e-12);

        let labels3 = [0usize, 2, 1, 2];
        let rows: Vec<Vec<f64>> = labels3
            .iter()
            .map(|&y| (0..3).map(|c| f64::from(u8::from(c == y))).collect())
            .collect();
        let onehot = Matrix::from_rows(&rows).unwrap();
        assert_eq!(auc_macro_ovr(&onehot, &labels3).unwrap(), 1.0);
        assert_eq!(auc_ovr(&onehot, &labels3, AucAverage::Micro).unwrap(), 1.0);
    }

    #[test]
    fn absent_classes_are_skipped() {
        // Class 2 never appears; only columns 0 and 1 contribute.
        let probs = Matrix::from_rows(&[
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.6, 0.3],
            vec![0.5, 0.4, 0.1],
        ])
        .unwrap();
        let labels = [0, 1, 0];
        let c0 = auc_binary(&[0.7, 0.1, 0.5], &[1, 0, 1]).unwrap();
        let c1 = auc_binary(&[0.2, 0.6, 0.4], &[0, 1, 0]).unwrap();
        let a = auc_macro_ovr(&probs, &labels).unwrap();
        assert!((a - (c0 + c1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn precision_counts() {
        assert_eq!(precision_per_class(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), vec![1.0; 3]);
        assert_eq!(
            precision_per_class(&[0, 0, 0, 0], &[0, 1, 0, 1], 2).unwrap(),
            vec![0.5, 0.0]
        );
        assert!(matches!(
            precision_per_class(&[3], &[0], 3),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn precision_matches_confusion_matrix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pred: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let truth: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let mut cm = [[0usize; 3]; 3];
        for (&p, &t) in pred.iter().zip(&truth) {
            cm[p][t] += 1;
        }
        let got = precision_per_class(&pred, &truth, 3).unwrap();
        for c in 0..3 {
            let col: usize = cm[c].iter().sum();
            let expected = if col == 0 { 0.0 } else { cm[c][c] as f64 / col as f64 };
            assert!((got[c] - expected).abs() < 1e-15);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
            (2usize..40).prop_flat_map(|n| {
                (
                    prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), n),
                    prop::collection::vec(0u8..2, n),
                )
            })
            .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
        }

        proptest! {
            #[test]
            fn complement_sums_to_one((s, l) in instance()) {
                let flipped: Vec<u8> = l.iter().map(|&v| 1 - v).collect();
                let a = auc_binary(&s, &l).unwrap();
                let b = auc_binary(&s, &flipped).unwrap();
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }

            #[test]
            fn monotone_transform_invariant((s, l) in instance()) {
                let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
                let a = auc_binary(&s, &l).unwrap();
                let b = auc_binary(&t, &l).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((a - pair_oracle(&s, &l)).abs() < 1e-12);
            }
        }
    }
}
