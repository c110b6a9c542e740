use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Confusion-matrix metrics of one evaluation.
///
/// Binary reports fill the positive-class fields; every report also carries
/// macro (unweighted class mean) and micro (pooled) averages. A per-class
/// ratio with an empty denominator counts as 0 in the macro average; the
/// positive-class fields are `None` in that case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub n_classes: usize,
    pub positive_class: usize,
    pub accuracy: f64,
    /// Recall of the positive class.
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1_of(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

pub fn compute_metrics(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
    positive_class: usize,
) -> Result<Metrics, HarnessError> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(HarnessError::Data(format!(
            "need equal, non-empty prediction and label lists, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    if n_classes < 2 || positive_class >= n_classes {
        return Err(HarnessError::Data(format!(
            "positive class {positive_class} invalid for {n_classes} classes"
        )));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(HarnessError::Data(format!(
            "label {bad} outside classes 0..{n_classes}"
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let n = preds.len();
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<(Option<f64>, Option<f64>)> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = (0..n_classes).map(|r| confusion[r][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            (ratio(tp, predicted), ratio(tp, actual))
        })
        .collect();
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let macro_precision = mean(per_class.iter().map(|c| c.0.unwrap_or(0.0)).collect());
    let macro_recall = mean(per_class.iter().map(|c| c.1.unwrap_or(0.0)).collect());
    let macro_f1 = mean(per_class.iter().map(|c| f1_of(c.0, c.1).unwrap_or(0.0)).collect());
    // single-label: pooled TP = correct, pooled FP = pooled FN = n - correct
    let micro = correct as f64 / n as f64;
    let (precision, recall) = per_class[positive_class];
    Ok(Metrics {
        n,
        n_classes,
        positive_class,
        accuracy: micro,
        sensitivity: recall,
        precision,
        recall,
        f1: f1_of(precision, recall),
        macro_precision,
        macro_recall,
        macro_f1,
        micro_precision: micro,
        micro_recall: micro,
        micro_f1: micro,
        confusion,
    })
}

/// Mean and sample standard deviation over folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    /// Folds where the quantity was defined.
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }

    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.sd)
    }
}

/// Per-fold metrics and their aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<Metrics>,
    pub accuracy: Summary,
    pub sensitivity: Option<Summary>,
    pub precision: Option<Summary>,
    pub recall: Option<Summary>,
    pub f1: Option<Summary>,
    pub macro_f1: Summary,
    /// Accuracy over all test predictions pooled across folds.
    pub pooled_accuracy: f64,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<Metrics>) -> Result<Self, HarnessError> {
        if folds.is_empty() {
            return Err(HarnessError::Data("no folds to aggregate".into()));
        }
        let pick = |f: fn(&Metrics) -> Option<f64>| -> Option<Summary> {
            Summary::of(&folds.iter().filter_map(f).collect::<Vec<_>>())
        };
        let correct: usize = folds
            .iter()
            .map(|m| (0..m.n_classes).map(|c| m.confusion[c][c]).sum::<usize>())
            .sum();
        let total: usize = folds.iter().map(|m| m.n).sum();
        Ok(Self {
            accuracy: pick(|m| Some(m.accuracy)).expect("non-empty"),
            sensitivity: pick(|m| m.sensitivity),
            precision: pick(|m| m.precision),
            recall: pick(|m| m.recall),
            f1: pick(|m| m.f1),
            macro_f1: pick(|m| Some(m.macro_f1)).expect("non-empty"),
            pooled_accuracy: correct as f64 / total as f64,
            folds,
        })
    }

    /// One row per fold plus `mean` and `sd` rows.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "fold",
            "n",
            "accuracy",
            "sensitivity",
            "precision",
            "recall",
            "f1",
            "macro_f1",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, m) in self.folds.iter().enumerate() {
            w.write_record([
                i.to_string(),
                m.n.to_string(),
                m.accuracy.to_string(),
                opt(m.sensitivity),
                opt(m.precision),
                opt(m.recall),
                opt(m.f1),
                m.macro_f1.to_string(),
            ])?;
        }
        let stat = |s: Option<Summary>, sd: bool| {
            s.map(|s| if sd { s.sd } else { s.mean }.to_string())
                .unwrap_or_default()
        };
        for (label, sd) in [("mean", false), ("sd", true)] {
            w.write_record([
                label.to_string(),
                String::new(),
                stat(Some(self.accuracy), sd),
                stat(self.sensitivity, sd),
                stat(self.precision, sd),
                stat(self.recall, sd),
                stat(self.f1, sd),
                stat(Some(self.macro_f1), sd),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
