use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Decision;
use crate::tensor::{argmax, ProbMatrix};

/// Linear interpolation between order statistics: position `q/100·(n−1)`
/// in the sorted values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    /// Per-class percentile of the claimed samples' probabilities.
    pub raw: Vec<f64>,
    /// Per-class validation accuracy `a(c)`.
    pub accuracy: Vec<f64>,
    /// `a(c) · raw[c]`.
    pub calibrated: Vec<f64>,
    /// Classes whose raw threshold fell back to the global percentile.
    pub fallback: Vec<usize>,
    pub percentile: f64,
}

/// Per-class thresholds from unlabeled predictions and validation accuracy.
pub fn thresholds_from(unlabeled_probs: &ProbMatrix, accuracy: &[f64], q: f64) -> Result<ThresholdVector> {
    let n = unlabeled_probs.batch();
    let c = unlabeled_probs.shape().get(1).copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::Precondition("threshold calibration needs unlabeled predictions".into()));
    }
    if accuracy.len() != c {
        return Err(Error::dim(format!("{} accuracies for {c} classes", accuracy.len())));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Config(format!("threshold percentile must lie in [0, 100], got {q}")));
    }
    if let Some(a) = accuracy.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidValue(format!("class accuracy {a} outside [0, 1]")));
    }
    let mut claimed: Vec<Vec<f64>> = vec![Vec::new(); c];
    let mut maxes = Vec::with_capacity(n);
    for b in 0..n {
        let row = unlabeled_probs.row(b);
        let k = argmax(row);
        claimed[k].push(row[k] as f64);
        maxes.push(row[k] as f64);
    }
    let global = percentile(&maxes, q).expect("nonempty");
    let mut fallback = Vec::new();
    let raw: Vec<f64> = claimed
        .iter()
        .enumerate()
        .map(|(k, v)| {
            percentile(v, q).unwrap_or_else(|| {
                log::warn!("class {k} claims no unlabeled samples; using the global percentile {global:.4}");
                fallback.push(k);
                global
            })
        })
        .collect();
    let calibrated = raw.iter().zip(accuracy).map(|(t, a)| a * t).collect();
    Ok(ThresholdVector {
        raw,
        accuracy: accuracy.to_vec(),
        calibrated,
        fallback,
        percentile: q,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelResult {
    pub probs: ProbMatrix,
    pub decisions: Vec<Decision>,
    pub confidence: Vec<f64>,
}

impl PseudoLabelResult {
    pub fn abstained(&self) -> usize {
        self.decisions.iter().filter(|d| **d == Decision::Abstain).count()
    }
}

/// Labels row `i` with `c* = argmax p_i` (lowest index on ties) when
/// `p_i[c*] ≥ τ(c*)`, otherwise abstains.
pub fn assign_pseudo_labels(probs: &ProbMatrix, thresholds: &ThresholdVector) -> Result<PseudoLabelResult> {
    let c = probs.shape().get(1).copied().unwrap_or(0);
    if thresholds.calibrated.len() != c {
        return Err(Error::dim(format!(
            "{} thresholds for {c}-class probabilities",
            thresholds.calibrated.len()
        )));
    }
    let mut decisions = Vec::with_capacity(probs.batch());
    let mut confidence = Vec::with_capacity(probs.batch());
    for b in 0..probs.batch() {
        let row = probs.row(b);
        let k = argmax(row);
        let p = row[k] as f64;
        confidence.push(p);
        decisions.push(if p >= thresholds.calibrated[k] {
            Decision::Class(k)
        } else {
            Decision::Abstain
        });
    }
    Ok(PseudoLabelResult {
        probs: probs.clone(),
        decisions,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn tv(calibrated: Vec<f64>) -> ThresholdVector {
        ThresholdVector {
            raw: calibrated.clone(),
            accuracy: vec![1.0; calibrated.len()],
            calibrated,
            fallback: vec![],
            percentile: 90.0,
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert!((percentile(&v, 90.0).unwrap() - 0.91).abs() < 1e-12);
        assert_eq!(percentile(&[0.3], 90.0), Some(0.3));
        assert_eq!(percentile(&[], 90.0), None);
    }

    #[test]
    fn calibration_arithmetic() {
        // class 0 claims {0.1..1.0}; class 1 claims nothing
        let rows: Vec<f32> = (1..=10).flat_map(|i| [i as f32 / 10.0, 0.0]).collect();
        let p = Tensor::new(vec![10, 2], rows).unwrap();
        let t = thresholds_from(&p, &[0.5, 1.0], 90.0).unwrap();
        assert!((t.raw[0] - 0.91).abs() < 1e-6);
        assert!((t.calibrated[0] - 0.5 * t.raw[0]).abs() < 1e-15);
        assert_eq!(t.fallback, vec![1]);
        assert_eq!(t.raw[1], t.raw[0]);
    }

    #[test]
    fn identity_and_half() {
        let p = Tensor::new(vec![1, 2], vec![0.9, 0.1]).unwrap();
        let t = thresholds_from(&p, &[1.0, 1.0], 90.0).unwrap();
        assert_eq!(t.calibrated[0], 0.9f32 as f64);
        let t = thresholds_from(&Tensor::new(vec![1, 2], vec![0.8, 0.2]).unwrap(), &[0.5, 0.0], 90.0).unwrap();
        assert_eq!(t.calibrated[0], 0.5 * 0.8f32 as f64);
    }

    #[test]
    fn decision_examples() {
        let p = Tensor::new(vec![2, 2], vec![0.7, 0.3, 0.55, 0.45]).unwrap();
        let r = assign_pseudo_labels(&p, &tv(vec![0.6, 0.6])).unwrap();
        assert_eq!(r.decisions, vec![Decision::Class(0), Decision::Abstain]);
        assert_eq!(r.abstained(), 1);
    }

    #[test]
    fn argmax_ties_go_to_lowest_class() {
        let p = Tensor::new(vec![1, 3], vec![0.4, 0.4, 0.2]).unwrap();
        let r = assign_pseudo_labels(&p, &tv(vec![0.1, 0.1, 0.1])).unwrap();
        assert_eq!(r.decisions, vec![Decision::Class(0)]);
    }

    fn arb_probs() -> impl Strategy<Value = ProbMatrix> {
        (1usize..100, 2usize..6).prop_flat_map(|(n, c)| {
            proptest::collection::vec(0.0f32..1.0, n * c).prop_map(move |mut d| {
                for r in d.chunks_mut(c) {
                    let s: f32 = r.iter().sum::<f32>() + 1e-6;
                    r.iter_mut().for_each(|v| *v /= s);
                }
                Tensor::new(vec![n, c], d).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn decisions_never_undercut_thresholds(p in arb_probs(), t in 0.0f64..1.0) {
            let c = p.shape()[1];
            let r = assign_pseudo_labels(&p, &tv(vec![t; c])).unwrap();
            for (b, d) in r.decisions.iter().enumerate() {
                if let Decision::Class(k) = d {
                    prop_assert!(p.row(b)[*k] as f64 >= t);
                }
            }
        }

        #[test]
        fn lower_accuracy_never_reduces_labels(p in arb_probs(), a in 0.0f64..1.0, cut in 0.0f64..1.0) {
            let c = p.shape()[1];
            let hi = thresholds_from(&p, &vec![a.max(cut); c], 90.0).unwrap();
            let lo = thresholds_from(&p, &vec![a.min(cut); c], 90.0).unwrap();
            for k in 0..c {
                prop_assert!(hi.calibrated[k] <= hi.raw[k]);
                prop_assert!(lo.calibrated[k] <= hi.calibrated[k]);
            }
            let count = |t: &ThresholdVector| assign_pseudo_labels(&p, t).unwrap().abstained();
            prop_assert!(count(&lo) <= count(&hi));
        }
    }
}
