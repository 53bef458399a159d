//! Accuracy, one-vs-rest macro AUC, sensitivity and specificity.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Counts with rows = true class and columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Input("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { k, counts: rows.iter().flat_map(|r| r.iter().copied()).collect() })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Input(alloc::format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut counts = vec![0u64; k * k];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p >= k || t >= k {
            return Err(Error::Label { index: i, label: p.max(t), classes: k });
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Input("accuracy of an empty confusion matrix".into()));
    }
    let trace: u64 = (0..cm.k).map(|i| cm.get(i, i)).sum();
    Ok(trace as f64 / n as f64)
}

/// One-vs-rest macro averages over classes with defined denominators.
pub fn sensitivity_specificity(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Input("sensitivity of an empty confusion matrix".into()));
    }
    let (mut sens, mut spec) = (Vec::new(), Vec::new());
    for c in 0..cm.k {
        let tp = cm.get(c, c);
        let fn_: u64 = (0..cm.k).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
        let fp: u64 = (0..cm.k).filter(|&t| t != c).map(|t| cm.get(t, c)).sum();
        let tn = n - tp - fn_ - fp;
        if tp + fn_ > 0 {
            sens.push((tp, tp + fn_));
        }
        if tn + fp > 0 {
            spec.push((tn, tn + fp));
        }
    }
    if sens.is_empty() || spec.is_empty() {
        return Err(Error::UndefinedMetric("sensitivity/specificity"));
    }
    Ok((mean_of_ratios(&sens), mean_of_ratios(&spec)))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num / den` pairs, summed as an exact fraction and rounded once.
/// Falls back to floating-point summation if the fraction overflows.
fn mean_of_ratios(ratios: &[(u64, u64)]) -> f64 {
    let exact = ratios.iter().try_fold((0u128, 1u128), |(p, q), &(a, b)| {
        let (a, b) = (a as u128, b as u128);
        let g = gcd(q, b);
        let l = q.checked_mul(b / g)?;
        let num = p.checked_mul(l / q)?.checked_add(a.checked_mul(l / b)?)?;
        let r = gcd(num, l).max(1);
        Some((num / r, l / r))
    });
    match exact.and_then(|(p, q)| Some((p, q.checked_mul(ratios.len() as u128)?))) {
        Some((p, q)) if p < 1 << 53 && q < 1 << 53 => p as f64 / q as f64,
        _ => ratios.iter().map(|&(a, b)| a as f64 / b as f64).sum::<f64>() / ratios.len() as f64,
    }
}

/// Binary AUC of `scores` with `positive` flags via the Mann–Whitney rank
/// statistic; tied scores share their mean rank. `None` without both classes.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += mean_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUC for `scores[n × k]` (row-major). Classes without
/// both positives and negatives are skipped.
pub fn macro_auc_ovr(scores: &[f64], k: usize, truth: &[usize]) -> Result<f64> {
    let n = truth.len();
    if k == 0 || scores.len() != n * k {
        return Err(Error::Input(alloc::format!("{} scores for {n} samples × {k} classes", scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("non-finite score".into()));
    }
    let (mut total, mut used) = (0.0, 0usize);
    let mut column = vec![0.0; n];
    let mut positive = vec![false; n];
    for c in 0..k {
        for i in 0..n {
            column[i] = scores[i * k + c];
            positive[i] = truth[i] == c;
        }
        if let Some(auc) = binary_auc(&column, &positive) {
            total += auc;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("AUC"));
    }
    Ok(total / used as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// From class probabilities `scores[n × k]`; predictions are the row argmax
    /// (first maximum on ties).
    pub fn from_scores(scores: &[f64], k: usize, truth: &[usize]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Input("no samples to evaluate".into()));
        }
        let auc = macro_auc_ovr(scores, k, truth)?;
        let pred: Vec<usize> = scores
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect();
        let confusion = confusion_matrix(&pred, truth, k)?;
        let (sensitivity, specificity) = sensitivity_specificity(&confusion)?;
        Ok(MetricsReport { accuracy: accuracy(&confusion)?, auc, sensitivity, specificity, confusion })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_hand_count() {
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0], vec![1, 2]]);
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
        let perfect = confusion_matrix(&[2, 0, 1], &[2, 0, 1], 3).unwrap();
        assert_eq!(perfect.rows(), vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let missing = confusion_matrix(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(missing.rows()[2], vec![0, 0, 0]);
    }

    #[test]
    fn accuracy_and_rates() {
        let cm = ConfusionMatrix::from_rows(&[&[8, 2], &[1, 9]]).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 17.0 / 20.0);
        let (s, p) = sensitivity_specificity(&cm).unwrap();
        assert!((s - 0.85).abs() < 1e-15 && (p - 0.85).abs() < 1e-15);
        let diag = ConfusionMatrix::from_rows(&[&[3, 0, 0], &[0, 4, 0], &[0, 0, 5]]).unwrap();
        assert_eq!(accuracy(&diag).unwrap(), 1.0);
        assert_eq!(sensitivity_specificity(&diag).unwrap(), (1.0, 1.0));
        let empty = ConfusionMatrix::from_rows(&[&[0, 0], &[0, 0]]).unwrap();
        assert!(accuracy(&empty).is_err());
    }

    #[test]
    fn binary_sens_mirrors_spec() {
        // one-vs-rest: class-1 sensitivity is class-0 specificity and vice
        // versa, so the two macro averages coincide
        let cm = ConfusionMatrix::from_rows(&[&[5, 3], &[2, 7]]).unwrap();
        let (s, p) = sensitivity_specificity(&cm).unwrap();
        assert!((s - (5.0 / 8.0 + 7.0 / 9.0) / 2.0).abs() < 1e-15);
        assert_eq!(s, p);
    }

    #[test]
    fn auc_examples() {
        let auc = binary_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(binary_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(binary_auc(&[0.5; 6], &[true, false, true, false, false, true]), Some(0.5));
        assert_eq!(binary_auc(&[0.5, 0.7], &[true, true]), None);
        let scores = [0.9, 0.1, 0.6, 0.4, 0.65, 0.35, 0.2, 0.8];
        assert_eq!(macro_auc_ovr(&scores, 2, &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(matches!(macro_auc_ovr(&[1.0, 1.0], 1, &[0, 0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn report_on_perfect_and_constant() {
        let scores = [0.9, 0.1, 0.2, 0.8, 0.7, 0.3];
        let r = MetricsReport::from_scores(&scores, 2, &[0, 1, 0]).unwrap();
        assert_eq!((r.accuracy, r.auc), (1.0, 1.0));
        let flat = [0.25; 16];
        let r = MetricsReport::from_scores(&flat, 4, &[0, 1, 2, 3]).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.auc, 0.5);
        assert!(MetricsReport::from_scores(&[], 4, &[]).is_err());
    }
}
