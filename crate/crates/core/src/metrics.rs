//! Confusion matrices, weighted precision/recall/F1 and the comparison table.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// Rows are the actual class, columns the predicted class, both in [`Label::ALL`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    pub fn get(&self, actual: Label, predicted: Label) -> u64 {
        self.counts[actual.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Number of records whose actual class is `label`.
    pub fn support(&self, label: Label) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    pub fn predicted(&self, label: Label) -> u64 {
        self.counts.iter().map(|row| row[label.index()]).sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }
}

pub fn confusion_matrix(pairs: &[(Label, Label)]) -> Result<ConfusionMatrix> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (actual, predicted) in pairs {
        cm.counts[actual.index()][predicted.index()] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub troll: ClassMetrics,
    #[serde(rename = "not-troll")]
    pub not_troll: ClassMetrics,
}

impl PerClass {
    pub fn get(&self, label: Label) -> &ClassMetrics {
        match label {
            Label::Troll => &self.troll,
            Label::NotTroll => &self.not_troll,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub per_class: PerClass,
    pub weighted: WeightedMetrics,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class and support-weighted metrics; undefined ratios are 0.
pub fn weighted_report(cm: &ConfusionMatrix) -> EvaluationReport {
    let class = |label: Label| {
        let tp = cm.get(label, label);
        let precision = ratio(tp, cm.predicted(label));
        let recall = ratio(tp, cm.support(label));
        ClassMetrics {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: cm.support(label),
        }
    };
    let per_class = PerClass {
        troll: class(Label::Troll),
        not_troll: class(Label::NotTroll),
    };
    let total = cm.total();
    let weigh = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            return 0.0;
        }
        Label::ALL
            .iter()
            .map(|l| per_class.get(*l).support as f64 * f(per_class.get(*l)))
            .sum::<f64>()
            / total as f64
    };
    EvaluationReport {
        confusion: *cm,
        weighted: WeightedMetrics {
            precision: weigh(|m| m.precision),
            recall: weigh(|m| m.recall),
            f1: weigh(|m| m.f1),
        },
        per_class,
        accuracy: ratio(cm.correct(), total),
    }
}

/// Rounds half away from zero to three decimals and formats with exactly three.
pub fn format3(x: f64) -> String {
    let scaled = libm::round(x * 1000.0) as i64;
    let sign = if scaled < 0 { "-" } else { "" };
    let a = scaled.unsigned_abs();
    format!("{sign}{}.{:03}", a / 1000, a % 1000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub approach: String,
    pub classifier: String,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub csv: String,
    pub text: String,
    /// Indices of rows sharing the highest rounded weighted F1.
    pub best: Vec<usize>,
}

/// CSV and aligned text with columns approach, classifier, precision, recall, f1.
///
/// The best weighted F1 is flagged with `*`; ties (at three decimals) are all flagged.
pub fn render_comparison(rows: &[ComparisonRow]) -> ComparisonTable {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.approach.clone(),
                r.classifier.clone(),
                format3(r.report.weighted.precision),
                format3(r.report.weighted.recall),
                format3(r.report.weighted.f1),
            ]
        })
        .collect();
    let best_f1 = cells.iter().map(|c| c[4].as_str()).max_by(|a, b| cmp_decimal(a, b));
    let best: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| Some(c[4].as_str()) == best_f1)
        .map(|(i, _)| i)
        .collect();

    let header = ["approach", "classifier", "precision", "recall", "f1", "best"];
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", header.join(","));
    for (i, c) in cells.iter().enumerate() {
        let flag = if best.contains(&i) { "*" } else { "" };
        let quoted: Vec<String> = c.iter().map(|s| csv_field(s)).collect();
        let _ = writeln!(csv, "{},{flag}", quoted.join(","));
    }

    let mut widths = header.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let mut text = String::new();
    let line = |out: &mut String, fields: [&str; 6]| {
        let mut s = String::new();
        for (i, (f, w)) in fields.iter().zip(widths).enumerate() {
            if i < 2 {
                let _ = write!(s, "{f:<w$}  ");
            } else {
                let _ = write!(s, "{f:>w$}  ");
            }
        }
        let _ = writeln!(out, "{}", s.trim_end());
    };
    line(&mut text, header);
    for (i, c) in cells.iter().enumerate() {
        let flag = if best.contains(&i) { "*" } else { "" };
        line(&mut text, [&c[0], &c[1], &c[2], &c[3], &c[4], flag]);
    }
    ComparisonTable { csv, text, best }
}

fn cmp_decimal(a: &str, b: &str) -> core::cmp::Ordering {
    let parse = |s: &str| s.parse::<f64>().unwrap_or(f64::NEG_INFINITY);
    parse(a).total_cmp(&parse(b))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn confusion_counts_pairs() {
        use Label::*;
        let mut pairs = vec![(Troll, Troll); 5];
        pairs.extend(vec![(NotTroll, NotTroll); 5]);
        assert_eq!(confusion_matrix(&pairs).unwrap().counts, [[5, 0], [0, 5]]);
        let pairs = vec![(NotTroll, Troll); 3];
        assert_eq!(confusion_matrix(&pairs).unwrap().counts, [[0, 0], [3, 0]]);
        assert_eq!(confusion_matrix(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn xlnet_behaviour_gives_its_matrix() {
        use Label::*;
        let mut pairs = Vec::new();
        pairs.extend(vec![(Troll, Troll); 319]);
        pairs.extend(vec![(Troll, NotTroll); 76]);
        pairs.extend(vec![(NotTroll, NotTroll); 87]);
        pairs.extend(vec![(NotTroll, Troll); 185]);
        assert_eq!(confusion_matrix(&pairs).unwrap().counts, [[319, 76], [185, 87]]);
    }

    #[test]
    fn zero_denominators_are_zero() {
        let r = weighted_report(&ConfusionMatrix::from_counts([[3, 0], [2, 0]]));
        assert_eq!(r.per_class.not_troll.precision, 0.0);
        assert_eq!(r.per_class.not_troll.f1, 0.0);
        assert!(r.weighted.f1 > 0.0 && r.weighted.f1 <= 1.0);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(format3(0.5975), "0.598");
        assert_eq!(format3(0.4584), "0.458");
        assert_eq!(format3(1.0), "1.000");
        assert_eq!(format3(-0.0625), "-0.063");
        assert_eq!(format3(0.0), "0.000");
    }

    fn row(name: &str, counts: [[u64; 2]; 2]) -> ComparisonRow {
        ComparisonRow {
            approach: "visual".into(),
            classifier: name.into(),
            report: weighted_report(&ConfusionMatrix::from_counts(counts)),
        }
    }

    #[test]
    fn single_row_is_best() {
        let t = render_comparison(&[row("CNN", [[1, 1], [1, 1]])]);
        assert_eq!(t.best, [0]);
        assert_eq!(t.csv.lines().count(), 2);
        assert!(t.csv.lines().nth(1).unwrap().ends_with(",*"));
    }

    #[test]
    fn ties_are_all_flagged() {
        let t = render_comparison(&[
            row("a", [[4, 1], [1, 4]]),
            row("b", [[1, 4], [4, 1]]),
            row("c", [[4, 1], [1, 4]]),
        ]);
        assert_eq!(t.best, [0, 2]);
        let lens: Vec<usize> = t.text.lines().map(|l| l.find("0.").unwrap_or(0)).skip(1).collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]), "columns align:\n{}", t.text);
    }

    fn oracle(pairs: &[(bool, bool)]) -> (f64, f64, f64) {
        // per-definition computation over raw prediction pairs, troll = true
        let n = pairs.len() as f64;
        let mut out = (0.0, 0.0, 0.0);
        for class in [true, false] {
            let support = pairs.iter().filter(|(a, _)| *a == class).count() as f64;
            let predicted = pairs.iter().filter(|(_, p)| *p == class).count() as f64;
            let tp = pairs.iter().filter(|(a, p)| *a == class && *p == class).count() as f64;
            let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let r = if support > 0.0 { tp / support } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            out.0 += support / n * p;
            out.1 += support / n * r;
            out.2 += support / n * f;
        }
        out
    }

    proptest! {
        #[test]
        fn report_matches_per_definition_oracle(
            pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..=20)
        ) {
            let labelled: Vec<(Label, Label)> = pairs
                .iter()
                .map(|(a, p)| {
                    let l = |b: bool| if b { Label::Troll } else { Label::NotTroll };
                    (l(*a), l(*p))
                })
                .collect();
            let r = weighted_report(&confusion_matrix(&labelled).unwrap());
            let (p, rc, f) = oracle(&pairs);
            prop_assert!((r.weighted.precision - p).abs() < 1e-12);
            prop_assert!((r.weighted.recall - rc).abs() < 1e-12);
            prop_assert!((r.weighted.f1 - f).abs() < 1e-12);
        }

        #[test]
        fn class_permutation_leaves_weighted_metrics(a in 0u64..50, b in 0u64..50, c in 0u64..50, d in 1u64..50) {
            let r1 = weighted_report(&ConfusionMatrix::from_counts([[a, b], [c, d]]));
            let r2 = weighted_report(&ConfusionMatrix::from_counts([[d, c], [b, a]]));
            prop_assert!((r1.weighted.f1 - r2.weighted.f1).abs() < 1e-12);
            prop_assert!((r1.weighted.precision - r2.weighted.precision).abs() < 1e-12);
            prop_assert!((r1.weighted.recall - r2.weighted.recall).abs() < 1e-12);
        }

        #[test]
        fn per_class_f1_is_harmonic_mean(a in 1u64..50, b in 0u64..50, c in 0u64..50, d in 1u64..50) {
            let r = weighted_report(&ConfusionMatrix::from_counts([[a, b], [c, d]]));
            for m in [r.per_class.troll, r.per_class.not_troll] {
                prop_assert!((1.0 / m.f1 - 0.5 * (1.0 / m.precision + 1.0 / m.recall)).abs() < 1e-9);
            }
        }
    }
}
