//! Confusion matrix and accuracy / precision / recall / F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, i: usize) -> u64 {
        self.counts[i][i]
    }

    pub fn false_positives(&self, i: usize) -> u64 {
        self.counts.iter().map(|row| row[i]).sum::<u64>() - self.counts[i][i]
    }

    pub fn false_negatives(&self, i: usize) -> u64 {
        self.counts[i].iter().sum::<u64>() - self.counts[i][i]
    }

    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }
}

pub fn confusion<S: AsRef<str>, P: AsRef<str>>(
    classes: &[String],
    truth: &[S],
    predicted: &[P],
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let index = |label: &str| {
        classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    };
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        counts[index(t.as_ref())?][index(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Macro,
    #[default]
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a precision or recall denominator was zero and the value defaulted to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub averaging: Averaging,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 || cm.classes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_class: Vec<ClassMetrics> = (0..cm.classes.len())
        .map(|i| {
            let tp = cm.true_positives(i);
            let (precision, zp) = ratio(tp, tp + cm.false_positives(i));
            let (recall, zr) = ratio(tp, tp + cm.false_negatives(i));
            ClassMetrics {
                label: cm.classes[i].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.support(i),
                zero_division: zp || zr,
            }
        })
        .collect();

    // weight by raw support and divide once, so a perfect score stays exactly 1
    let (weights, denom): (Vec<f64>, f64) = match averaging {
        Averaging::Macro => (vec![1.0; per_class.len()], per_class.len() as f64),
        Averaging::Weighted => (per_class.iter().map(|c| c.support as f64).collect(), total as f64),
    };
    let avg = |get: fn(&ClassMetrics) -> f64| -> f64 {
        let sum: f64 = per_class.iter().zip(&weights).map(|(c, w)| w * get(c)).sum();
        (sum / denom).clamp(0.0, 1.0)
    };
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        precision: avg(|c| c.precision),
        recall: avg(|c| c.recall),
        f1: avg(|c| c.f1),
        averaging,
        confusion: cm.clone(),
        per_class,
    })
}

/// Convenience: confusion matrix plus metrics in one call.
pub fn evaluate<S: AsRef<str>, P: AsRef<str>>(
    classes: &[String],
    truth: &[S],
    predicted: &[P],
    averaging: Averaging,
) -> Result<MetricsReport> {
    metrics(&confusion(classes, truth, predicted)?, averaging)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_is_diagonal() {
        let cs = classes(&["a", "b", "c"]);
        let y = ["a", "b", "c", "a"];
        let cm = confusion(&cs, &y, &y).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        for avg in [Averaging::Macro, Averaging::Weighted] {
            let r = metrics(&cm, avg).unwrap();
            assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn hand_tally() {
        let cs = classes(&["a", "b"]);
        let cm = confusion(&cs, &["a", "a", "b"], &["a", "b", "b"]).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        let r = metrics(&cm, Averaging::Macro).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.precision - 0.75).abs() < 1e-12);
        assert!((r.recall - 0.75).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_recall_equals_accuracy() {
        let cs = classes(&["a", "b"]);
        let cm = confusion(&cs, &["a", "a", "b"], &["a", "b", "b"]).unwrap();
        let r = metrics(&cm, Averaging::Weighted).unwrap();
        assert!((r.recall - r.accuracy).abs() < 1e-12);
        // precision: 2/3 * 1 + 1/3 * 1/2
        assert!((r.precision - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_class() {
        let cs = classes(&["only"]);
        let r = evaluate(&cs, &["only"; 4], &["only"; 4], Averaging::Weighted).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class[0].f1, 1.0);
    }

    #[test]
    fn error_paths() {
        let cs = classes(&["a"]);
        let none: [&str; 0] = [];
        assert!(matches!(confusion(&cs, &none, &none), Err(Error::EmptyDataset)));
        assert!(matches!(
            confusion(&cs, &["a"], &["a", "a"]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(confusion(&cs, &["a"], &["z"]), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn zero_division_flagged() {
        let cs = classes(&["a", "b"]);
        let cm = confusion(&cs, &["a", "a"], &["a", "a"]).unwrap();
        let r = metrics(&cm, Averaging::Macro).unwrap();
        let b = &r.per_class[1];
        assert!(b.zero_division);
        assert_eq!((b.precision, b.recall, b.f1), (0.0, 0.0, 0.0));
        assert!(!r.per_class[0].zero_division);
    }

    #[test]
    fn json_keys() {
        let cs = classes(&["a", "b"]);
        let r = evaluate(&cs, &["a", "b"], &["a", "a"], Averaging::Weighted).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "accuracy",
            "precision",
            "recall",
            "f1",
            "per_class",
            "averaging",
            "confusion",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["averaging"], "weighted");
    }
}
