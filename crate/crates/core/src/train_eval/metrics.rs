use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<u8, ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    /// Rows are true labels, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
    /// Metrics whose denominator was zero and were reported as 0.
    pub warnings: Vec<String>,
}

fn ratio(num: usize, den: usize, what: String, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(what);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Two-class report.
pub fn compute_report(y_true: &[u8], y_pred: &[u8]) -> Result<MetricsReport, MetricsError> {
    compute_report_n(y_true, y_pred, 2)
}

pub fn compute_report_n(y_true: &[u8], y_pred: &[u8], num_classes: usize) -> Result<MetricsReport, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch { y_true: y_true.len(), y_pred: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&l| l as usize >= num_classes) {
        return Err(MetricsError::UnknownLabel(bad));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t as usize][p as usize] += 1;
    }
    let n = y_true.len();
    let mut warnings = Vec::new();
    let mut per_class = BTreeMap::new();
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let predicted: usize = (0..num_classes).map(|r| confusion[r][c]).sum();
        let support: usize = confusion[c].iter().sum();
        let precision = ratio(tp, predicted, format!("precision of class {c} is ill-defined (no predictions)"), &mut warnings);
        let recall = ratio(tp, support, format!("recall of class {c} is ill-defined (no true samples)"), &mut warnings);
        per_class.insert(c as u8, ClassMetrics { precision, recall, f1: f1_score(precision, recall), support });
    }
    let k = num_classes as f64;
    let macro_avg = AverageMetrics {
        precision: per_class.values().map(|m| m.precision).sum::<f64>() / k,
        recall: per_class.values().map(|m| m.recall).sum::<f64>() / k,
        f1: per_class.values().map(|m| m.f1).sum::<f64>() / k,
    };
    let w = |f: fn(&ClassMetrics) -> f64| per_class.values().map(|m| f(m) * m.support as f64).sum::<f64>() / n as f64;
    let weighted_avg = AverageMetrics { precision: w(|m| m.precision), recall: w(|m| m.recall), f1: w(|m| m.f1) };
    let trace: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        per_class,
        accuracy: trace as f64 / n as f64,
        macro_avg,
        weighted_avg,
        confusion,
        total: n,
        warnings,
    })
}

impl MetricsReport {
    /// Plain-text table with precision, recall, f1-score and support columns,
    /// followed by accuracy, macro and weighted averages.
    pub fn to_table(&self, names: &BTreeMap<u8, String>) -> String {
        let label = |c: &u8| names.get(c).cloned().unwrap_or_else(|| c.to_string());
        let width = self.per_class.keys().map(|c| label(c).len()).chain([12]).max().unwrap_or(12);
        let mut s = String::new();
        let _ = writeln!(s, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        let _ = writeln!(s);
        for (c, m) in &self.per_class {
            let _ = writeln!(
                s,
                "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                label(c),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>width$} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, self.total);
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                s,
                "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                name, a.precision, a.recall, a.f1, self.total
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_confusion(cm: [[usize; 2]; 2]) -> (Vec<u8>, Vec<u8>) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        for (i, row) in cm.iter().enumerate() {
            for (j, &count) in row.iter().enumerate() {
                t.extend(std::iter::repeat_n(i as u8, count));
                p.extend(std::iter::repeat_n(j as u8, count));
            }
        }
        (t, p)
    }

    #[test]
    fn perfect_classifier() {
        let y = [0, 1, 1, 0, 1];
        let r = compute_report(&y, &y).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 3]]);
        assert!(r.per_class.values().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn constant_predictor_flags_zero_precision() {
        let r = compute_report(&[0, 1, 1, 0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(r.per_class[&1].recall, 0.0);
        assert_eq!(r.per_class[&1].precision, 0.0);
        assert!(r.warnings.iter().any(|w| w.contains("precision of class 1")));
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_report(&[0], &[0, 1]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(compute_report(&[], &[]), Err(MetricsError::Empty)));
        assert!(matches!(compute_report(&[0, 2], &[0, 1]), Err(MetricsError::UnknownLabel(2))));
    }

    #[test]
    fn table_layout() {
        let (t, p) = from_confusion([[83, 17], [2, 98]]);
        let r = compute_report(&t, &p).unwrap();
        let names = BTreeMap::from([(0, "Coverage".to_string()), (1, "No covering".to_string())]);
        let table = r.to_table(&names);
        assert!(table.contains("    Coverage      0.98      0.83      0.90       100"), "{table}");
        assert!(table.contains("    accuracy                          0.91       200"), "{table}");
    }

    /// Counts computed independently of the confusion matrix.
    fn brute(t: &[u8], p: &[u8]) -> Vec<(f64, f64)> {
        (0..2u8)
            .map(|c| {
                let tp = t.iter().zip(p).filter(|(&a, &b)| a == c && b == c).count();
                let fp = t.iter().zip(p).filter(|(&a, &b)| a != c && b == c).count();
                let fnn = t.iter().zip(p).filter(|(&a, &b)| a == c && b != c).count();
                let pr = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let rc = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
                (pr, rc)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn weighted_average_between_class_extremes(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let r = compute_report(&t, &p).unwrap();
            let vals = |f: fn(&ClassMetrics) -> f64| {
                let v: Vec<f64> = r.per_class.values().map(f).collect();
                (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            };
            for (avg, f) in [
                (r.weighted_avg.precision, (|m: &ClassMetrics| m.precision) as fn(&ClassMetrics) -> f64),
                (r.weighted_avg.recall, |m: &ClassMetrics| m.recall),
                (r.weighted_avg.f1, |m: &ClassMetrics| m.f1),
            ] {
                let (lo, hi) = vals(f);
                prop_assert!(avg >= lo - 1e-12 && avg <= hi + 1e-12);
            }
            let b = brute(&t, &p);
            for c in 0..2u8 {
                prop_assert_eq!(r.per_class[&c].precision, b[c as usize].0);
                prop_assert_eq!(r.per_class[&c].recall, b[c as usize].1);
            }
        }
    }
}
