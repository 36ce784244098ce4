//! Accuracy, balanced accuracy and support-weighted F1 from a confusion matrix,
//! plus the percent tables used in reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{csv_io, ClassLabel, ClassMap, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a ClassLabel, &'a ClassLabel)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in pairs {
            cm.add(*t, *p);
        }
        cm
    }

    pub fn add(&mut self, truth: ClassLabel, predicted: ClassLabel) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.0[i][i]).sum()
    }

    pub fn support(&self, c: ClassLabel) -> u64 {
        self.0[c.index()].iter().sum()
    }

    pub fn predicted(&self, c: ClassLabel) -> u64 {
        self.0.iter().map(|row| row[c.index()]).sum()
    }

    pub fn true_positives(&self, c: ClassLabel) -> u64 {
        self.0[c.index()][c.index()]
    }
}

/// Builds the matrix from id-keyed predictions and truth with identical keys.
pub fn confusion(preds: &BTreeMap<String, ClassLabel>, truth: &BTreeMap<String, ClassLabel>) -> Result<ConfusionMatrix> {
    let missing: Vec<&str> = truth.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    let extra: Vec<&str> = preds.keys().filter(|k| !truth.contains_key(*k)).map(String::as_str).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::KeyMismatch(format!(
            "missing predictions for {missing:?}; predictions without truth {extra:?}"
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (id, t) in truth {
        cm.add(*t, preds[id]);
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(cm: &ConfusionMatrix, c: ClassLabel) -> f64 {
    ratio(cm.true_positives(c), cm.predicted(c))
}

pub fn recall(cm: &ConfusionMatrix, c: ClassLabel) -> f64 {
    ratio(cm.true_positives(c), cm.support(c))
}

/// Zero when precision and recall are both zero.
pub fn f1(cm: &ConfusionMatrix, c: ClassLabel) -> f64 {
    let (p, r) = (precision(cm, c), recall(cm, c));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Mean recall over classes with non-zero support.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let present: Vec<ClassLabel> = ClassLabel::ALL.into_iter().filter(|&c| cm.support(c) > 0).collect();
    if present.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok(present.iter().map(|&c| recall(cm, c)).sum::<f64>() / present.len() as f64)
}

/// `Σ_c support_c · F1_c / total`.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(ClassLabel::ALL
        .iter()
        .map(|&c| cm.support(c) as f64 * f1(cm, c))
        .sum::<f64>()
        / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: ClassMap<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        let per_class = ClassMap(ClassLabel::ALL.map(|c| ClassMetrics {
            precision: precision(&cm, c),
            recall: recall(&cm, c),
            f1: f1(&cm, c),
            support: cm.support(c),
        }));
        Ok(MetricsReport {
            accuracy: accuracy(&cm)?,
            balanced_accuracy: balanced_accuracy(&cm)?,
            weighted_f1: weighted_f1(&cm)?,
            per_class,
            confusion: cm,
        })
    }

    pub fn evaluate(preds: &BTreeMap<String, ClassLabel>, truth: &BTreeMap<String, ClassLabel>) -> Result<Self> {
        Self::from_confusion(confusion(preds, truth)?)
    }

    /// Per-class breakdown and confusion matrix as aligned text.
    pub fn detail_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for c in ClassLabel::ALL {
            let m = self.per_class[c];
            let _ = writeln!(
                s,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.name(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        let _ = writeln!(s, "\nconfusion (rows = truth, columns = predicted)");
        let _ = write!(s, "{:<10}", "");
        for c in ClassLabel::ALL {
            let _ = write!(s, " {:>9}", c.name());
        }
        s.push('\n');
        for c in ClassLabel::ALL {
            let _ = write!(s, "{:<10}", c.name());
            for v in self.confusion.0[c.index()] {
                let _ = write!(s, " {v:>9}");
            }
            s.push('\n');
        }
        s
    }
}

/// Averages the headline metrics of several reports (e.g. one per fold).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub weighted_f1: f64,
}

impl Summary {
    pub fn of(report: &MetricsReport) -> Self {
        Summary {
            accuracy: report.accuracy,
            balanced_accuracy: report.balanced_accuracy,
            weighted_f1: report.weighted_f1,
        }
    }

    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Result<Self> {
        let mut acc = Summary {
            accuracy: 0.0,
            balanced_accuracy: 0.0,
            weighted_f1: 0.0,
        };
        let mut n = 0;
        for r in reports {
            acc.accuracy += r.accuracy;
            acc.balanced_accuracy += r.balanced_accuracy;
            acc.weighted_f1 += r.weighted_f1;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        let n = n as f64;
        acc.accuracy /= n;
        acc.balanced_accuracy /= n;
        acc.weighted_f1 /= n;
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub network: String,
    pub image_size: String,
    pub summary: Summary,
}

/// A results table in percent with two decimals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub title: String,
    pub rows: Vec<TableRow>,
    /// Row indices before which a separator line is drawn.
    pub breaks: Vec<usize>,
}

impl ResultsTable {
    pub fn new(title: impl Into<String>) -> Self {
        ResultsTable {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, network: impl Into<String>, image_size: impl Into<String>, summary: Summary) {
        self.rows.push(TableRow {
            network: network.into(),
            image_size: image_size.into(),
            summary,
        });
    }

    pub fn separator(&mut self) {
        self.breaks.push(self.rows.len());
    }

    pub fn to_text(&self) -> String {
        let headers = ["network", "image size", "accuracy", "balanced accuracy", "weighted F1-score"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.network.clone(),
                    r.image_size.clone(),
                    format!("{:.2}", 100.0 * r.summary.accuracy),
                    format!("{:.2}", 100.0 * r.summary.balanced_accuracy),
                    format!("{:.2}", 100.0 * r.summary.weighted_f1),
                ]
            })
            .collect();
        let mut widths = headers.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        let rule = "=".repeat(total);
        let thin = "-".repeat(total);
        let line = |vals: [&str; 5]| {
            let mut s = format!("{:<w0$}  {:<w1$}", vals[0], vals[1], w0 = widths[0], w1 = widths[1]);
            for (v, w) in vals[2..].iter().zip(&widths[2..]) {
                let _ = write!(s, "  {v:>w$}");
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "{}", self.title);
        }
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "{}", line(headers));
        let _ = writeln!(out, "{rule}");
        for (i, row) in cells.iter().enumerate() {
            if i > 0 && self.breaks.contains(&i) {
                let _ = writeln!(out, "{thin}");
            }
            let _ = writeln!(out, "{}", line([&row[0], &row[1], &row[2], &row[3], &row[4]]));
        }
        let _ = writeln!(out, "{rule}");
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["network", "image_size", "accuracy", "balanced_accuracy", "weighted_f1"])
            .map_err(|e| csv_io(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.network.as_str(),
                r.image_size.as_str(),
                &format!("{:.2}", 100.0 * r.summary.accuracy),
                &format!("{:.2}", 100.0 * r.summary.balanced_accuracy),
                &format!("{:.2}", 100.0 * r.summary.weighted_f1),
            ])
            .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    fn labels(pairs: &[(ClassLabel, ClassLabel)]) -> (BTreeMap<String, ClassLabel>, BTreeMap<String, ClassLabel>) {
        let preds = pairs.iter().enumerate().map(|(i, (_, p))| (format!("s{i:03}"), *p)).collect();
        let truth = pairs.iter().enumerate().map(|(i, (t, _))| (format!("s{i:03}"), *t)).collect();
        (preds, truth)
    }

    fn twelve_sample_case() -> Vec<(ClassLabel, ClassLabel)> {
        let mut v = vec![(Normal, Normal); 8];
        v.extend([(Normal, Anomalous); 2]);
        v.push((Anomalous, Anomalous));
        v.push((Anomalous, Normal));
        v
    }

    #[test]
    fn hand_derived_case() {
        let (p, t) = labels(&twelve_sample_case());
        let cm = confusion(&p, &t).unwrap();
        let mut expected = [[0; 4]; 4];
        expected[0][0] = 8;
        expected[0][1] = 2;
        expected[1][1] = 1;
        expected[1][0] = 1;
        assert_eq!(cm.0, expected);
        let r = MetricsReport::from_confusion(cm).unwrap();
        assert!((r.accuracy - 0.75).abs() < 1e-12);
        assert!((r.balanced_accuracy - 0.65).abs() < 1e-12);
        // class A: P = 8/9, R = 0.8, F1 = 16/19; class B: P = 1/3, R = 0.5, F1 = 0.4
        let want = (10.0 * 16.0 / 19.0 + 2.0 * 0.4) / 12.0;
        assert!((r.weighted_f1 - want).abs() < 1e-12);
        assert!((r.weighted_f1 - 0.76842).abs() < 1e-5);
    }

    #[test]
    fn perfect_and_degenerate() {
        let pairs: Vec<_> = ClassLabel::ALL.iter().flat_map(|&c| [(c, c); 3]).collect();
        let (p, t) = labels(&pairs);
        let r = MetricsReport::evaluate(&p, &t).unwrap();
        assert_eq!((r.accuracy, r.balanced_accuracy, r.weighted_f1), (1.0, 1.0, 1.0));
        let cm = confusion(&p, &t).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(cm.0[i][j] > 0, i == j);
            }
        }

        let pairs: Vec<_> = ClassLabel::ALL.iter().flat_map(|&c| [(c, Alnus); 5]).collect();
        let (p, t) = labels(&pairs);
        let r = MetricsReport::evaluate(&p, &t).unwrap();
        assert!((r.accuracy - 0.25).abs() < 1e-12);
        assert!((r.balanced_accuracy - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_and_mismatched() {
        let empty = BTreeMap::new();
        let cm = confusion(&empty, &empty).unwrap();
        assert_eq!(cm, ConfusionMatrix::default());
        assert!(matches!(accuracy(&cm), Err(Error::EmptyMatrix)));
        let mut p = BTreeMap::new();
        p.insert("a".to_string(), Normal);
        let mut t = BTreeMap::new();
        t.insert("b".to_string(), Normal);
        match confusion(&p, &t) {
            Err(Error::KeyMismatch(msg)) => assert!(msg.contains("\"a\"") && msg.contains("\"b\"")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_class_truth() {
        let (p, t) = labels(&[(Debris, Debris), (Debris, Alnus), (Debris, Debris), (Debris, Normal)]);
        let cm = confusion(&p, &t).unwrap();
        let acc = accuracy(&cm).unwrap();
        assert_eq!(acc, recall(&cm, Debris));
        assert_eq!(acc, balanced_accuracy(&cm).unwrap());
        // With zero support elsewhere, weighted F1 is the debris F1.
        assert!((weighted_f1(&cm).unwrap() - f1(&cm, Debris)).abs() < 1e-15);
    }

    #[test]
    fn table_layout() {
        let mut t = ResultsTable::new("per network and size");
        let s = Summary {
            accuracy: 0.9248,
            balanced_accuracy: 0.922,
            weighted_f1: 0.92658,
        };
        t.push("compact-a", "224x224", s);
        t.separator();
        t.push("compact-b", "260x260", Summary { accuracy: 1.0, balanced_accuracy: 1.0, weighted_f1: 1.0 });
        let text = t.to_text();
        assert!(text.contains("balanced accuracy"));
        assert!(text.contains("92.48"));
        assert!(text.contains("92.66"));
        assert!(text.contains("100.00"));
        assert!(text.lines().any(|l| l.starts_with("---")));
    }
}
