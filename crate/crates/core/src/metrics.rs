//! Classification metrics: accuracy, macro precision/F1, macro one-vs-rest
//! AUC — each with an independent brute-force oracle.
//!
//! Averaging is macro (unweighted mean over classes present in the true
//! labels); AUC uses the rank statistic with midranks so tied scores count
//! half, and classes lacking either positives or negatives are excluded
//! from the AUC mean. Degenerate 0/0 precision or recall is defined as 0.

use std::fmt::Write as _;
use thiserror::Error;

/// Record-count guard for the oracle, which recomputes AUC by all-pairs.
pub const ORACLE_MAX_RECORDS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records to score")]
    Empty,
    #[error("metric undefined: records contain a single distinct true label")]
    SingleClass,
    #[error("record {index} invalid: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("oracle is test-scale only: {records} records exceeds {ORACLE_MAX_RECORDS}")]
    TestScaleExceeded { records: usize },
}

/// One scored example: the true label and the predicted distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub label: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest AUC; absent when the class lacks positives or negatives.
    pub auc: Option<f64>,
    /// Count of records whose true label is this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
    pub per_class: Vec<ClassMetrics>,
    pub records: usize,
}

fn validate(records: &[EvalRecord]) -> Result<usize, MetricsError> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    let classes = first.probs.len();
    if classes < 2 {
        return Err(MetricsError::InvalidRecord {
            index: 0,
            reason: format!("needs >= 2 classes, got {classes}"),
        });
    }
    for (index, r) in records.iter().enumerate() {
        if r.probs.len() != classes {
            return Err(MetricsError::InvalidRecord {
                index,
                reason: format!("expected {classes} probabilities, got {}", r.probs.len()),
            });
        }
        if r.label >= classes {
            return Err(MetricsError::InvalidRecord {
                index,
                reason: format!("label {} outside 0..{classes}", r.label),
            });
        }
        let sum: f64 = r.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || r.probs.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(MetricsError::InvalidRecord {
                index,
                reason: format!("probabilities are not a distribution (sum {sum})"),
            });
        }
    }
    Ok(classes)
}

/// Argmax with lowest-index tie break, matching the prediction rule.
fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of records whose argmax matches the true label.
pub fn accuracy(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    validate(records)?;
    let correct = records
        .iter()
        .filter(|r| argmax(&r.probs) == r.label)
        .count();
    Ok(correct as f64 / records.len() as f64)
}

struct Counts {
    tp: Vec<usize>,
    fp: Vec<usize>,
    fn_: Vec<usize>,
    support: Vec<usize>,
}

fn confusion_counts(records: &[EvalRecord], classes: usize) -> Counts {
    let mut c = Counts {
        tp: vec![0; classes],
        fp: vec![0; classes],
        fn_: vec![0; classes],
        support: vec![0; classes],
    };
    for r in records {
        let pred = argmax(&r.probs);
        c.support[r.label] += 1;
        if pred == r.label {
            c.tp[r.label] += 1;
        } else {
            c.fp[pred] += 1;
            c.fn_[r.label] += 1;
        }
    }
    c
}

fn safe_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro precision and F1 over classes present in the true labels.
pub fn macro_precision_f1(records: &[EvalRecord]) -> Result<(f64, f64), MetricsError> {
    let classes = validate(records)?;
    let c = confusion_counts(records, classes);
    let mut precisions = Vec::new();
    let mut f1s = Vec::new();
    for class in 0..classes {
        if c.support[class] == 0 {
            continue;
        }
        let p = safe_ratio(c.tp[class], c.tp[class] + c.fp[class]);
        let r = safe_ratio(c.tp[class], c.tp[class] + c.fn_[class]);
        precisions.push(p);
        f1s.push(f1_from(p, r));
    }
    let mp = precisions.iter().sum::<f64>() / precisions.len() as f64;
    let mf = f1s.iter().sum::<f64>() / f1s.len() as f64;
    Ok((mp, mf))
}

/// Binary AUC of `scores` against boolean positives via the rank statistic:
/// midranks handle ties as half-wins. Requires both classes present.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // midranks: tied scores share the average of their 1-based rank range
    let mut rank = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            rank[idx] = mid;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = rank
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(&r, _)| r)
        .sum();
    let auc =
        (pos_rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64);
    Some(auc)
}

/// Per-class one-vs-rest AUC over raw score columns. Exposed separately from
/// the record-level API so score-level invariants (e.g. monotone-transform
/// stability) can be exercised without the distribution constraint.
pub fn ovr_auc_from_scores(labels: &[usize], columns: &[Vec<f64>]) -> Vec<Option<f64>> {
    columns
        .iter()
        .enumerate()
        .map(|(class, scores)| {
            let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
            binary_auc(scores, &positive)
        })
        .collect()
}

/// Macro one-vs-rest AUC over classes with both positives and negatives.
pub fn macro_ovr_auc(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    let classes = validate(records)?;
    let distinct = {
        let mut seen = vec![false; classes];
        for r in records {
            seen[r.label] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(MetricsError::SingleClass);
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let columns: Vec<Vec<f64>> = (0..classes)
        .map(|c| records.iter().map(|r| r.probs[c]).collect())
        .collect();
    let aucs = ovr_auc_from_scores(&labels, &columns);
    let defined: Vec<f64> = aucs.into_iter().flatten().collect();
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Assembles the full report (all four headline metrics plus the per-class
/// breakdown and supports).
pub fn report(records: &[EvalRecord]) -> Result<MetricReport, MetricsError> {
    let classes = validate(records)?;
    let acc = accuracy(records)?;
    let (macro_p, macro_f1) = macro_precision_f1(records)?;
    let macro_auc = macro_ovr_auc(records)?;

    let counts = confusion_counts(records, classes);
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let columns: Vec<Vec<f64>> = (0..classes)
        .map(|c| records.iter().map(|r| r.probs[c]).collect())
        .collect();
    let aucs = ovr_auc_from_scores(&labels, &columns);

    let per_class = (0..classes)
        .map(|class| {
            let p = safe_ratio(counts.tp[class], counts.tp[class] + counts.fp[class]);
            let r = safe_ratio(counts.tp[class], counts.tp[class] + counts.fn_[class]);
            ClassMetrics {
                class,
                precision: p,
                recall: r,
                f1: f1_from(p, r),
                auc: aucs[class],
                support: counts.support[class],
            }
        })
        .collect();

    Ok(MetricReport {
        accuracy: acc,
        macro_precision: macro_p,
        macro_f1,
        macro_auc,
        per_class,
        records: records.len(),
    })
}

/// Recomputes every metric by naive enumeration: confusion by double loop,
/// AUC by counting all positive/negative pairs. No code shared with the
/// main implementations.
pub fn oracle_metrics(records: &[EvalRecord]) -> Result<MetricReport, MetricsError> {
    let classes = validate(records)?;
    if records.len() > ORACLE_MAX_RECORDS {
        return Err(MetricsError::TestScaleExceeded {
            records: records.len(),
        });
    }
    let mut distinct = std::collections::BTreeSet::new();
    for r in records {
        distinct.insert(r.label);
    }
    if distinct.len() < 2 {
        return Err(MetricsError::SingleClass);
    }

    // confusion matrix, rows true, cols predicted, by double loop
    let mut matrix = vec![vec![0usize; classes]; classes];
    for r in records {
        let mut pred = 0;
        for c in 1..classes {
            if r.probs[c] > r.probs[pred] {
                pred = c;
            }
        }
        matrix[r.label][pred] += 1;
    }

    let mut correct = 0usize;
    for c in 0..classes {
        correct += matrix[c][c];
    }
    let accuracy = correct as f64 / records.len() as f64;

    let mut per_class = Vec::with_capacity(classes);
    let mut macro_p_sum = 0.0;
    let mut macro_f1_sum = 0.0;
    let mut present = 0usize;
    for class in 0..classes {
        let support: usize = matrix[class].iter().sum();
        let tp = matrix[class][class];
        let mut predicted = 0usize;
        for row in matrix.iter() {
            predicted += row[class];
        }
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            0.0
        } else {
            tp as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };

        // all-pairs AUC for this class
        let mut wins = 0.0f64;
        let mut pairs = 0usize;
        for a in records.iter().filter(|r| r.label == class) {
            for b in records.iter().filter(|r| r.label != class) {
                pairs += 1;
                if a.probs[class] > b.probs[class] {
                    wins += 1.0;
                } else if a.probs[class] == b.probs[class] {
                    wins += 0.5;
                }
            }
        }
        let auc = if support == 0 || support == records.len() {
            None
        } else {
            Some(wins / pairs as f64)
        };

        if support > 0 {
            macro_p_sum += precision;
            macro_f1_sum += f1;
            present += 1;
        }
        per_class.push(ClassMetrics {
            class,
            precision,
            recall,
            f1,
            auc,
            support,
        });
    }

    let defined_aucs: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
    Ok(MetricReport {
        accuracy,
        macro_precision: macro_p_sum / present as f64,
        macro_f1: macro_f1_sum / present as f64,
        macro_auc: defined_aucs.iter().sum::<f64>() / defined_aucs.len() as f64,
        per_class,
        records: records.len(),
    })
}

impl MetricReport {
    /// CSV with header `metric,value,scheme`, headline rows first, then the
    /// per-class breakdown. Byte-deterministic for identical reports.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,scheme\n");
        let _ = writeln!(out, "accuracy,{},overall", self.accuracy);
        let _ = writeln!(out, "precision,{},macro", self.macro_precision);
        let _ = writeln!(out, "f1,{},macro", self.macro_f1);
        let _ = writeln!(out, "auc,{},macro_ovr", self.macro_auc);
        for c in &self.per_class {
            let _ = writeln!(out, "precision,{},class_{}", c.precision, c.class);
            let _ = writeln!(out, "recall,{},class_{}", c.recall, c.class);
            let _ = writeln!(out, "f1,{},class_{}", c.f1, c.class);
            if let Some(auc) = c.auc {
                let _ = writeln!(out, "auc,{},class_{}", auc, c.class);
            }
            let _ = writeln!(out, "support,{},class_{}", c.support, c.class);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(label: usize, probs: &[f64]) -> EvalRecord {
        EvalRecord {
            label,
            probs: probs.to_vec(),
        }
    }

    fn onehotish(label: usize, classes: usize, confidence: f64) -> EvalRecord {
        let rest = (1.0 - confidence) / (classes - 1) as f64;
        let mut probs = vec![rest; classes];
        probs[label] = confidence;
        EvalRecord { label, probs }
    }

    #[test]
    fn accuracy_all_correct_all_wrong_and_counts() {
        let right: Vec<EvalRecord> = (0..4).map(|c| onehotish(c % 2, 2, 0.9)).collect();
        assert_eq!(accuracy(&right).unwrap(), 1.0);

        let wrong: Vec<EvalRecord> = (0..4)
            .map(|c| rec(c % 2, if c % 2 == 0 { &[0.1, 0.9] } else { &[0.9, 0.1] }))
            .collect();
        assert_eq!(accuracy(&wrong).unwrap(), 0.0);

        let mut mixed = right;
        mixed[3] = rec(1, &[0.8, 0.2]);
        assert_eq!(accuracy(&mixed).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_rejects_empty() {
        assert_eq!(accuracy(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn perfect_predictions_give_ones() {
        let records: Vec<EvalRecord> = (0..10).map(|i| onehotish(i % 3, 3, 0.8)).collect();
        let (p, f1) = macro_precision_f1(&records).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn absent_class_excluded_from_macro() {
        // class 2 never true-labeled and never predicted
        let records = vec![
            rec(0, &[0.9, 0.05, 0.05]),
            rec(1, &[0.05, 0.9, 0.05]),
            rec(0, &[0.9, 0.05, 0.05]),
        ];
        let (p, f1) = macro_precision_f1(&records).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn hand_evaluated_confusion_matrix() {
        // confusion [[2,1],[0,3]] rows true, cols predicted
        let records = vec![
            rec(0, &[0.9, 0.1]),
            rec(0, &[0.8, 0.2]),
            rec(0, &[0.3, 0.7]), // true 0 predicted 1
            rec(1, &[0.2, 0.8]),
            rec(1, &[0.1, 0.9]),
            rec(1, &[0.4, 0.6]),
        ];
        let (p, f1) = macro_precision_f1(&records).unwrap();
        assert!((p - 0.875).abs() < 1e-12);
        assert!((f1 - (0.8 + 2.0 * 0.75 / 1.75) / 2.0).abs() < 1e-9);
        assert!((f1 - 0.828571).abs() < 1e-6);
    }

    #[test]
    fn auc_perfect_separation_is_one() {
        let records = vec![
            rec(0, &[0.9, 0.1]),
            rec(0, &[0.8, 0.2]),
            rec(1, &[0.2, 0.8]),
            rec(1, &[0.3, 0.7]),
        ];
        assert!((macro_ovr_auc(&records).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let records = vec![
            rec(0, &[0.5, 0.5]),
            rec(1, &[0.5, 0.5]),
            rec(0, &[0.5, 0.5]),
            rec(1, &[0.5, 0.5]),
        ];
        assert_eq!(macro_ovr_auc(&records).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        let records = vec![rec(0, &[0.9, 0.1]), rec(0, &[0.6, 0.4])];
        assert_eq!(macro_ovr_auc(&records), Err(MetricsError::SingleClass));
        assert_eq!(oracle_metrics(&records), Err(MetricsError::SingleClass));
    }

    #[test]
    fn rank_auc_equals_pair_counting_on_random_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let n = rng.gen_range(6..=20);
            let classes = 3;
            let records: Vec<EvalRecord> = (0..n)
                .map(|_| {
                    let label = rng.gen_range(0..classes);
                    // quantized probabilities force frequent ties
                    let mut raw: Vec<f64> =
                        (0..classes).map(|_| rng.gen_range(0..5) as f64 + 0.5).collect();
                    let sum: f64 = raw.iter().sum();
                    raw.iter_mut().for_each(|p| *p /= sum);
                    EvalRecord { label, probs: raw }
                })
                .collect();
            let distinct: std::collections::BTreeSet<usize> =
                records.iter().map(|r| r.label).collect();
            if distinct.len() < 2 {
                continue;
            }
            let fast = macro_ovr_auc(&records).unwrap();
            let slow = oracle_metrics(&records).unwrap().macro_auc;
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn oracle_equivalence_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..100 {
            let n = rng.gen_range(4..=120);
            let classes = rng.gen_range(2..=5);
            let records: Vec<EvalRecord> = (0..n)
                .map(|_| {
                    let label = rng.gen_range(0..classes);
                    let mut raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    raw.iter_mut().for_each(|p| *p /= sum);
                    EvalRecord { label, probs: raw }
                })
                .collect();
            let distinct: std::collections::BTreeSet<usize> =
                records.iter().map(|r| r.label).collect();
            if distinct.len() < 2 {
                continue;
            }
            let fast = report(&records).unwrap();
            let slow = oracle_metrics(&records).unwrap();
            assert!((fast.accuracy - slow.accuracy).abs() < 1e-10, "trial {trial}");
            assert!(
                (fast.macro_precision - slow.macro_precision).abs() < 1e-10,
                "trial {trial}"
            );
            assert!((fast.macro_f1 - slow.macro_f1).abs() < 1e-10, "trial {trial}");
            assert!((fast.macro_auc - slow.macro_auc).abs() < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn oracle_perfect_predictions_all_ones() {
        let records: Vec<EvalRecord> = (0..9).map(|i| onehotish(i % 3, 3, 0.9)).collect();
        let r = oracle_metrics(&records).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_precision, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.macro_auc, 1.0);
    }

    #[test]
    fn oracle_scale_guard() {
        let records: Vec<EvalRecord> = (0..ORACLE_MAX_RECORDS + 1)
            .map(|i| onehotish(i % 2, 2, 0.9))
            .collect();
        assert!(matches!(
            oracle_metrics(&records),
            Err(MetricsError::TestScaleExceeded { .. })
        ));
    }

    #[test]
    fn label_permutation_leaves_macro_metrics_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let classes = 4;
        let records: Vec<EvalRecord> = (0..60)
            .map(|_| {
                let label = rng.gen_range(0..classes);
                let mut raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.iter_mut().for_each(|p| *p /= sum);
                EvalRecord { label, probs: raw }
            })
            .collect();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<EvalRecord> = records
            .iter()
            .map(|r| {
                let mut probs = vec![0.0; classes];
                for (c, &p) in r.probs.iter().enumerate() {
                    probs[perm[c]] = p;
                }
                EvalRecord {
                    label: perm[r.label],
                    probs,
                }
            })
            .collect();
        let a = report(&records).unwrap();
        let b = report(&permuted).unwrap();
        assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
        assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        assert!((a.macro_auc - b.macro_auc).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_score_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
        let columns: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let base = ovr_auc_from_scores(&labels, &columns);
        let transformed: Vec<Vec<f64>> = columns
            .iter()
            .map(|col| col.iter().map(|&s| (3.0 * s).exp() + 1.0).collect())
            .collect();
        let shifted = ovr_auc_from_scores(&labels, &transformed);
        for (a, b) in base.iter().zip(&shifted) {
            match (a, b) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                _ => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn csv_layout_and_determinism() {
        let records = vec![
            rec(0, &[0.9, 0.1]),
            rec(1, &[0.2, 0.8]),
            rec(0, &[0.7, 0.3]),
        ];
        let r = report(&records).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,value,scheme\n"));
        assert!(csv.contains("accuracy,1,overall"));
        assert!(csv.contains("auc,1,macro_ovr"));
        assert!(csv.contains("support,2,class_0"));
        assert_eq!(csv, report(&records).unwrap().to_csv());
    }
}
