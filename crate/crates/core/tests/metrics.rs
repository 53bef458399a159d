use gmcl_core::functional::softmax_cross_entropy;
use gmcl_core::metrics::{
    accuracy, binary_auc, confusion_matrix, macro_auc_ovr, sensitivity_specificity, ConfusionMatrix, MetricsReport,
};
use gmcl_core::{Error, Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

#[test]
fn uniform_cross_entropy() {
    let mut g = Graph::<f64>::new();
    let logits = g.constant(Tensor::full(&[3, 4], 0.7));
    let l = softmax_cross_entropy(&mut g, logits, &[0, 2, 3]).unwrap();
    assert!((g.value(l).item() - 1.386294).abs() < 1e-6);
}

#[test]
fn confusion_counts() {
    let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
    assert_eq!(cm.rows(), vec![vec![1, 0], vec![1, 2]]);
    let perfect = confusion_matrix(&[0, 1, 2, 2], &[0, 1, 2, 2], 4).unwrap();
    assert_eq!(perfect.rows(), vec![vec![1, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 2, 0], vec![0; 4]]);
    assert_eq!(accuracy(&perfect).unwrap(), 1.0);
    assert!(matches!(confusion_matrix(&[0], &[0, 1], 2), Err(Error::Input(_))));
}

#[test]
fn accuracy_and_rates_on_a_two_class_matrix() {
    let cm = ConfusionMatrix::from_rows(&[&[8, 2], &[1, 9]]).unwrap();
    assert_eq!(accuracy(&cm).unwrap(), 17.0 / 20.0);
    let (sens, spec) = sensitivity_specificity(&cm).unwrap();
    assert_eq!(sens, 0.85);
    assert_eq!(spec, 0.85);
    let diag = ConfusionMatrix::from_rows(&[&[3, 0, 0], &[0, 4, 0], &[0, 0, 1]]).unwrap();
    assert_eq!(sensitivity_specificity(&diag).unwrap(), (1.0, 1.0));
    let empty = ConfusionMatrix::from_rows(&[&[0, 0], &[0, 0]]).unwrap();
    assert!(matches!(accuracy(&empty), Err(Error::Input(_))));
}

#[test]
fn binary_sensitivity_is_specificity_of_the_other_class() {
    let cm = ConfusionMatrix::from_rows(&[&[5, 3], &[2, 7]]).unwrap();
    let sens1 = 7.0 / 9.0;
    let spec0 = 7.0 / (7.0 + 2.0);
    assert_eq!(sens1, spec0);
    let (s, p) = sensitivity_specificity(&cm).unwrap();
    assert!((s - (5.0 / 8.0 + 7.0 / 9.0) / 2.0).abs() < 1e-15);
    assert!((p - (7.0 / 9.0 + 5.0 / 8.0) / 2.0).abs() < 1e-15);
}

#[test]
fn reference_auc_cases() {
    let s = [0.1, 0.4, 0.35, 0.8];
    let pos = [false, false, true, true];
    assert_eq!(binary_auc(&s, &pos), Some(0.75));
    assert_eq!(binary_auc(&[0.1, 0.2, 0.8, 0.9], &pos), Some(1.0));
    assert_eq!(binary_auc(&[0.3; 4], &pos), Some(0.5));
    assert_eq!(binary_auc(&[0.3; 2], &[true, true]), None);

    let rows: Vec<f64> = s.iter().flat_map(|&p| [1.0 - p, p]).collect();
    assert_eq!(macro_auc_ovr(&rows, 2, &[0, 0, 1, 1]).unwrap(), 0.75);
    assert!(matches!(macro_auc_ovr(&[0.5, 0.5], 2, &[1]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn degenerate_classes_are_skipped() {
    // class 2 never occurs
    let scores = [0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.6, 0.3, 0.1];
    let auc = macro_auc_ovr(&scores, 3, &[0, 1, 0]).unwrap();
    assert_eq!(auc, 1.0);
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    // coarse scores so ties are common
    let scores: Vec<f64> = (0..n * k).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
    (scores, labels)
}

#[test]
fn rank_auc_equals_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.125).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        assert_eq!(binary_auc(&scores, &pos), pair_count_auc(&scores, &pos));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_auc_matches_brute_force(
        scores in prop::collection::vec(prop_oneof![(0u8..6).prop_map(|v| v as f64 / 5.0), 0.0f64..1.0], 2..=50),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.5)).collect();
        let a = binary_auc(&scores, &pos);
        let b = pair_count_auc(&scores, &pos);
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn metrics_ignore_sample_order(seed in any::<u64>(), n in 4usize..40, k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = random_instance(&mut rng, n, k);
        let Ok(a) = MetricsReport::from_scores(&scores, k, &labels) else { return Ok(()); };
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let ps: Vec<f64> = perm.iter().flat_map(|&i| scores[i * k..(i + 1) * k].to_vec()).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let b = MetricsReport::from_scores(&ps, k, &pl).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert!((a.auc - b.auc).abs() < 1e-12);
        prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        prop_assert!((a.sensitivity - b.sensitivity).abs() < 1e-12);
        prop_assert!((a.specificity - b.specificity).abs() < 1e-12);
    }

    #[test]
    fn binary_macro_auc_is_the_class_auc(seed in any::<u64>(), n in 2usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 9.0).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let rows: Vec<f64> = p.iter().flat_map(|&v| [1.0 - v, v]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        match binary_auc(&p, &pos) {
            Some(single) => prop_assert!((macro_auc_ovr(&rows, 2, &labels).unwrap() - single).abs() < 1e-12),
            None => prop_assert!(macro_auc_ovr(&rows, 2, &labels).is_err()),
        }
    }

    #[test]
    fn rates_match_per_class_averages(counts in prop::collection::vec(0u64..1000, 9)) {
        let rows: Vec<&[u64]> = counts.chunks(3).collect();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let n: u64 = counts.iter().sum();
        let mut sens = Vec::new();
        let mut spec = Vec::new();
        for c in 0..3 {
            let row: u64 = rows[c].iter().sum();
            let col: u64 = (0..3).map(|t| rows[t][c]).sum();
            let tp = rows[c][c];
            if row > 0 {
                sens.push(tp as f64 / row as f64);
            }
            if n - row > 0 {
                spec.push((n - row - (col - tp)) as f64 / (n - row) as f64);
            }
        }
        match sensitivity_specificity(&cm) {
            Ok((a, b)) => {
                prop_assert!((a - sens.iter().sum::<f64>() / sens.len() as f64).abs() < 1e-14);
                prop_assert!((b - spec.iter().sum::<f64>() / spec.len() as f64).abs() < 1e-14);
            }
            Err(_) => prop_assert!(n == 0 || sens.is_empty() || spec.is_empty()),
        }
    }

    #[test]
    fn report_fields_are_in_range(seed in any::<u64>(), n in 4usize..40, k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = random_instance(&mut rng, n, k);
        if let Ok(r) = MetricsReport::from_scores(&scores, k, &labels) {
            prop_assert_eq!(r.confusion.total(), n as u64);
            for v in [r.accuracy, r.auc, r.sensitivity, r.specificity] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
