//! Confusion-matrix metrics with one-vs-rest reduction per class.
//!
//! Any ratio whose denominator is zero evaluates to `0.0`; the name of each
//! such metric is listed in [`MetricsReport::zero_denominators`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard per-sample outcome of pseudo-labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Class(usize),
    Abstain,
}

impl Decision {
    pub fn class(self) -> Option<usize> {
        match self {
            Decision::Class(c) => Some(c),
            Decision::Abstain => None,
        }
    }
}

pub const ABSTAIN: &str = "ABSTAIN";

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Class(c) => write!(f, "{c}"),
            Decision::Abstain => f.write_str(ABSTAIN),
        }
    }
}

/// Rows are true classes, columns predicted classes. Abstentions are kept
/// per true class outside the `C×C` block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    abstained: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
            abstained: vec![0; classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>, abstained: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes || abstained.len() != classes {
            return Err(Error::dim(format!(
                "confusion counts of length {} / {} do not fit {classes} classes",
                counts.len(),
                abstained.len()
            )));
        }
        Ok(Self {
            classes,
            counts,
            abstained,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn abstained(&self, truth: usize) -> u64 {
        self.abstained[truth]
    }

    pub fn abstained_total(&self) -> u64 {
        self.abstained.iter().sum()
    }

    /// Samples that received a class (abstentions excluded).
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_total(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_total(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        self.col_total(c) - self.tp(c)
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.row_total(c) - self.tp(c)
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn abstention_rate(&self) -> f64 {
        ratio(self.abstained_total(), self.abstained_total() + self.total()).0
    }

    /// Reorders classes: new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let c = self.classes;
        let mut out = Self::zeros(c);
        for t in 0..c {
            for p in 0..c {
                out.counts[t * c + p] = self.get(perm[t], perm[p]);
            }
            out.abstained[t] = self.abstained[perm[t]];
        }
        out
    }
}

pub fn confusion(truth: &[usize], decisions: &[Decision], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != decisions.len() {
        return Err(Error::dim(format!(
            "{} true labels but {} decisions",
            truth.len(),
            decisions.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (i, (&t, d)) in truth.iter().zip(decisions).enumerate() {
        if t >= classes {
            return Err(Error::InvalidValue(format!("true label {t} at {i} is outside 0..{classes}")));
        }
        match *d {
            Decision::Class(p) if p >= classes => {
                return Err(Error::InvalidValue(format!("decision {p} at {i} is outside 0..{classes}")));
            }
            Decision::Class(p) => cm.counts[t * classes + p] += 1,
            Decision::Abstain => cm.abstained[t] += 1,
        }
    }
    Ok(cm)
}

/// `num / den`, or `(0.0, true)` when `den` is zero.
fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> (f64, bool) {
    if p + r == 0.0 {
        (0.0, true)
    } else {
        (2.0 * p * r / (p + r), false)
    }
}

pub fn precision(cm: &ConfusionMatrix, c: usize) -> f64 {
    ratio(cm.tp(c), cm.tp(c) + cm.fp(c)).0
}

pub fn recall(cm: &ConfusionMatrix, c: usize) -> f64 {
    ratio(cm.tp(c), cm.tp(c) + cm.fn_(c)).0
}

/// True-positive rate; identical to recall.
pub fn tpr(cm: &ConfusionMatrix, c: usize) -> f64 {
    recall(cm, c)
}

pub fn f1(cm: &ConfusionMatrix, c: usize) -> f64 {
    harmonic(precision(cm, c), recall(cm, c)).0
}

pub fn fpr(cm: &ConfusionMatrix, c: usize) -> f64 {
    ratio(cm.fp(c), cm.fp(c) + cm.tn(c)).0
}

/// One-vs-rest accuracy of class `c`: `(TP + TN) / total`.
pub fn class_accuracy(cm: &ConfusionMatrix, c: usize) -> f64 {
    ratio(cm.tp(c) + cm.tn(c), cm.total()).0
}

/// Headline accuracy: `trace / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.trace(), cm.total()).0
}

/// `a(c) = diagonal / row total`. Empty rows give `0.0` and a warning.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes())
        .map(|c| {
            let (v, empty) = ratio(cm.tp(c), cm.row_total(c));
            if empty {
                log::warn!("class {c} has no scored samples; its accuracy is taken as 0");
            }
            v
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro: Option<Averages>,
    /// `trace / total` over non-abstained samples.
    pub accuracy: f64,
    pub scored: u64,
    pub abstained: u64,
    pub abstention_rate: f64,
    /// Metrics that hit a zero denominator and were set to 0.
    pub zero_denominators: Vec<String>,
}

pub const TABLE_HEADER: [&str; 6] = ["Precision", "Recall", "TPR", "FPR", "F1-score", "Accuracy"];

impl MetricsReport {
    pub fn new(cm: &ConfusionMatrix, class_names: &[String], with_micro: bool) -> Self {
        let c = cm.classes();
        let mut flags = Vec::new();
        let mut flag = |name: String, (v, zero): (f64, bool)| {
            if zero {
                flags.push(name);
            }
            v
        };
        let mut per_class = Vec::with_capacity(c);
        for k in 0..c {
            let name = class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
            let p = flag(format!("precision[{name}]"), ratio(cm.tp(k), cm.tp(k) + cm.fp(k)));
            let r = flag(format!("recall[{name}]"), ratio(cm.tp(k), cm.tp(k) + cm.fn_(k)));
            let fp = flag(format!("fpr[{name}]"), ratio(cm.fp(k), cm.fp(k) + cm.tn(k)));
            let f = flag(format!("f1[{name}]"), harmonic(p, r));
            let a = flag(format!("accuracy[{name}]"), ratio(cm.tp(k) + cm.tn(k), cm.total()));
            per_class.push(ClassMetrics {
                name,
                support: cm.row_total(k),
                precision: p,
                recall: r,
                tpr: r,
                fpr: fp,
                f1: f,
                accuracy: a,
            });
        }
        let mean = |g: fn(&ClassMetrics) -> f64| {
            if c == 0 {
                0.0
            } else {
                per_class.iter().map(g).sum::<f64>() / c as f64
            }
        };
        let macro_avg = Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            tpr: mean(|m| m.tpr),
            fpr: mean(|m| m.fpr),
            f1: mean(|m| m.f1),
            accuracy: mean(|m| m.accuracy),
        };
        let micro = with_micro.then(|| {
            let sum = |g: &dyn Fn(usize) -> u64| (0..c).map(g).sum::<u64>();
            let (tp, fp, fn_, tn) = (
                sum(&|k| cm.tp(k)),
                sum(&|k| cm.fp(k)),
                sum(&|k| cm.fn_(k)),
                sum(&|k| cm.tn(k)),
            );
            let p = flag("precision[micro]".into(), ratio(tp, tp + fp));
            let r = flag("recall[micro]".into(), ratio(tp, tp + fn_));
            Averages {
                precision: p,
                recall: r,
                tpr: r,
                fpr: flag("fpr[micro]".into(), ratio(fp, fp + tn)),
                f1: flag("f1[micro]".into(), harmonic(p, r)),
                accuracy: flag("accuracy[micro]".into(), ratio(tp + tn, tp + fp + fn_ + tn)),
            }
        });
        let accuracy = flag("accuracy".into(), ratio(cm.trace(), cm.total()));
        Self {
            confusion: cm.clone(),
            per_class,
            macro_avg,
            micro,
            accuracy,
            scored: cm.total(),
            abstained: cm.abstained_total(),
            abstention_rate: cm.abstention_rate(),
            zero_denominators: flags,
        }
    }

    /// One row in table order: precision, recall, TPR, FPR, F1, accuracy.
    /// The accuracy column is always `trace / total`.
    pub fn table_row(&self, averaging: Averaging) -> [f64; 6] {
        let avg = match (averaging, &self.micro) {
            (Averaging::Micro, Some(m)) => m,
            _ => &self.macro_avg,
        };
        [avg.precision, avg.recall, avg.tpr, avg.fpr, avg.f1, self.accuracy]
    }

    pub fn table_csv(&self, averaging: Averaging) -> String {
        let row: Vec<String> = self.table_row(averaging).iter().map(|v| v.to_string()).collect();
        format!("{}\n{}\n", TABLE_HEADER.join(","), row.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let truth = [0, 1, 2, 2, 1];
        let d: Vec<_> = truth.iter().map(|&t| Decision::Class(t)).collect();
        let cm = confusion(&truth, &d, 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(t, p) > 0, t == p);
            }
        }
        assert_eq!(accuracy(&cm), 1.0);
    }

    #[test]
    fn all_abstain() {
        let cm = confusion(&[0, 1, 1], &[Decision::Abstain; 3], 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(cm.abstention_rate(), 1.0);
        let r = MetricsReport::new(&cm, &[], false);
        assert!(r.zero_denominators.contains(&"accuracy".to_string()));
    }

    #[test]
    fn random_tallies_match_hand_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth: Vec<usize> = (0..100).map(|_| rng.random_range(0..4)).collect();
        let dec: Vec<Decision> = (0..100)
            .map(|_| match rng.random_range(0..5) {
                4 => Decision::Abstain,
                c => Decision::Class(c),
            })
            .collect();
        let cm = confusion(&truth, &dec, 4).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                let hand = truth
                    .iter()
                    .zip(&dec)
                    .filter(|(a, b)| **a == t && **b == Decision::Class(p))
                    .count();
                assert_eq!(cm.get(t, p), hand as u64);
            }
            let hand = truth
                .iter()
                .zip(&dec)
                .filter(|(a, b)| **a == t && **b == Decision::Abstain)
                .count();
            assert_eq!(cm.abstained(t), hand as u64);
        }
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        assert!(confusion(&[3], &[Decision::Class(0)], 3).is_err());
        assert!(confusion(&[0], &[Decision::Class(5)], 3).is_err());
        assert!(confusion(&[0, 1], &[Decision::Class(0)], 3).is_err());
    }

    #[test]
    fn precision_arithmetic() {
        // class 0: TP 98, FP 2
        let cm = ConfusionMatrix::from_counts(2, vec![98, 0, 2, 50], vec![0, 0]).unwrap();
        assert!((precision(&cm, 0) - 0.98).abs() < 1e-15);
    }

    #[test]
    fn f1_fixed_point() {
        // TP 99, FP 1, FN 1 gives precision = recall = 0.99
        let cm = ConfusionMatrix::from_counts(2, vec![99, 1, 1, 99], vec![0, 0]).unwrap();
        assert!((precision(&cm, 0) - 0.99).abs() < 1e-15);
        assert!((recall(&cm, 0) - 0.99).abs() < 1e-15);
        assert!((f1(&cm, 0) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn per_class_accuracy_examples() {
        let diag = ConfusionMatrix::from_counts(2, vec![5, 0, 0, 3], vec![0, 0]).unwrap();
        assert_eq!(per_class_accuracy(&diag), vec![1.0, 1.0]);
        let cm = ConfusionMatrix::from_counts(2, vec![8, 2, 0, 0], vec![0, 0]).unwrap();
        assert_eq!(per_class_accuracy(&cm), vec![0.8, 0.0]);
    }

    #[test]
    fn macro_recall_is_balanced_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let counts: Vec<u64> = (0..25).map(|_| rng.random_range(1..40)).collect();
        let cm = ConfusionMatrix::from_counts(5, counts.clone(), vec![0; 5]).unwrap();
        let balanced: f64 = (0..5)
            .map(|c| counts[c * 5 + c] as f64 / counts[c * 5..c * 5 + 5].iter().sum::<u64>() as f64)
            .sum::<f64>()
            / 5.0;
        let a = per_class_accuracy(&cm);
        assert!((a.iter().sum::<f64>() / 5.0 - balanced).abs() < 1e-12);
    }

    #[test]
    fn table_row_for_diagonal_matrix() {
        let cm = ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 2, 0, 0, 0, 7], vec![0; 3]).unwrap();
        let r = MetricsReport::new(&cm, &[], true);
        assert_eq!(r.table_row(Averaging::Macro), [1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(r.table_csv(Averaging::Micro), "Precision,Recall,TPR,FPR,F1-score,Accuracy\n1,1,1,0,1,1\n");
    }

    fn arb_matrix() -> impl Strategy<Value = ConfusionMatrix> {
        (2usize..6).prop_flat_map(|c| {
            (proptest::collection::vec(0u64..30, c * c), proptest::collection::vec(0u64..5, c))
                .prop_map(move |(m, a)| ConfusionMatrix::from_counts(c, m, a).unwrap())
        })
    }

    proptest! {
        #[test]
        fn accuracy_is_trace_over_total(cm in arb_matrix()) {
            let r = MetricsReport::new(&cm, &[], false);
            if cm.total() > 0 {
                prop_assert_eq!(r.accuracy, cm.trace() as f64 / cm.total() as f64);
            }
        }

        #[test]
        fn f1_lies_between_precision_and_recall(cm in arb_matrix()) {
            for c in 0..cm.classes() {
                let (p, r, f) = (precision(&cm, c), recall(&cm, c), f1(&cm, c));
                if p + r > 0.0 {
                    prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
                }
            }
        }

        #[test]
        fn class_permutation_is_equivariant(cm in arb_matrix(), seed in any::<u64>()) {
            let c = cm.classes();
            let mut perm: Vec<usize> = (0..c).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p = cm.permuted(&perm);
            for i in 0..c {
                prop_assert_eq!(precision(&p, i), precision(&cm, perm[i]));
                prop_assert_eq!(fpr(&p, i), fpr(&cm, perm[i]));
                prop_assert_eq!(f1(&p, i), f1(&cm, perm[i]));
            }
        }
    }
}
