//! Classification metrics, graded (ordinal) metrics and privacy leakage.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPredictions {
    pub true_labels: Vec<usize>,
    pub predicted_labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledPredictions {
    pub fn new(
        true_labels: Vec<usize>,
        predicted_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if true_labels.len() != predicted_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: true_labels.len(),
                got: predicted_labels.len(),
            });
        }
        if true_labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        if num_classes < 2 {
            return Err(invalid("need at least two classes"));
        }
        if let Some(&bad) = true_labels
            .iter()
            .chain(&predicted_labels)
            .find(|&&l| l >= num_classes)
        {
            return Err(Error::UnknownLabel(bad));
        }
        Ok(Self {
            true_labels,
            predicted_labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    /// `m[t][p]` counts samples of true class `t` predicted as `p`.
    pub fn confusion(&self) -> Vec<Vec<usize>> {
        let mut m = vec![vec![0; self.num_classes]; self.num_classes];
        for (&t, &p) in self.true_labels.iter().zip(&self.predicted_labels) {
            m[t][p] += 1;
        }
        m
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_class(preds: &LabeledPredictions, class: usize) -> Result<()> {
    if class >= preds.num_classes {
        return Err(Error::UnknownLabel(class));
    }
    Ok(())
}

/// Recall of `class`; 0 when the class never occurs.
pub fn class_recall(preds: &LabeledPredictions, class: usize) -> Result<f64> {
    check_class(preds, class)?;
    let m = preds.confusion();
    Ok(ratio(m[class][class], m[class].iter().sum()))
}

/// Precision of `class`; 0 when the class is never predicted.
pub fn class_precision(preds: &LabeledPredictions, class: usize) -> Result<f64> {
    check_class(preds, class)?;
    let m = preds.confusion();
    Ok(ratio(m[class][class], m.iter().map(|row| row[class]).sum()))
}

/// F1 of `class`, defined as 0 when precision + recall is 0.
pub fn class_f1(preds: &LabeledPredictions, class: usize) -> Result<f64> {
    let p = class_precision(preds, class)?;
    let r = class_recall(preds, class)?;
    Ok(if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    })
}

/// Unweighted mean of per-class F1 over all classes.
pub fn macro_f1(preds: &LabeledPredictions) -> Result<f64> {
    let mut sum = 0.0;
    for c in 0..preds.num_classes {
        sum += class_f1(preds, c)?;
    }
    Ok(sum / preds.num_classes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradedMetrics {
    /// Fraction of exact matches.
    pub t: f64,
    /// Fraction of under-predictions.
    pub fn_rate: f64,
    /// Fraction of over-predictions.
    pub fp_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Ordinal metrics: under-prediction counts against recall, over-prediction
/// against precision.
pub fn graded_metrics(preds: &LabeledPredictions) -> Result<GradedMetrics> {
    let n = preds.len() as f64;
    let (mut hit, mut under, mut over) = (0usize, 0usize, 0usize);
    for (&a, &p) in preds.true_labels.iter().zip(&preds.predicted_labels) {
        match p.cmp(&a) {
            std::cmp::Ordering::Equal => hit += 1,
            std::cmp::Ordering::Less => under += 1,
            std::cmp::Ordering::Greater => over += 1,
        }
    }
    let (t, fn_rate, fp_rate) = (hit as f64 / n, under as f64 / n, over as f64 / n);
    let recall = if t == 0.0 { 0.0 } else { t / (t + fn_rate) };
    let precision = if t == 0.0 { 0.0 } else { t / (t + fp_rate) };
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(GradedMetrics {
        t,
        fn_rate,
        fp_rate,
        precision,
        recall,
        fscore,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackRates {
    pub tpr: f64,
    pub fpr: f64,
}

impl AttackRates {
    pub fn new(tpr: f64, fpr: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tpr) || !(0.0..=1.0).contains(&fpr) {
            return Err(invalid(format!(
                "rates must lie in [0, 1], got tpr={tpr} fpr={fpr}"
            )));
        }
        Ok(Self { tpr, fpr })
    }
}

/// `TPR − FPR`.
pub fn privacy_leakage(rates: AttackRates) -> f64 {
    rates.tpr - rates.fpr
}
