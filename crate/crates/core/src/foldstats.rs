//! Nuclei-composition statistics and fold ranking by train/valid
//! distribution similarity.

use crate::field::{ClassMap, InstanceMap};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FoldError {
    #[error("field extents differ: {0}×{1} vs {2}×{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("class counts differ: {0} vs {1}")]
    ClassCountMismatch(usize, usize),
    #[error("split has no nuclei; ratios are undefined")]
    EmptySplit,
    #[error("instance {id} carries class {class} beyond {num_classes} classes")]
    ClassOutOfRange { id: u32, class: u32, num_classes: u32 },
    #[error("need at least one fold")]
    NoFolds,
}

/// Majority pixel class per instance (ties go to the lowest class id).
pub fn instance_classes(
    inst: &InstanceMap,
    cls: &ClassMap,
) -> Result<BTreeMap<u32, u32>, FoldError> {
    if !inst.same_dims(cls) {
        return Err(FoldError::ShapeMismatch(
            inst.height(),
            inst.width(),
            cls.height(),
            cls.width(),
        ));
    }
    let mut tallies: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for (&id, &c) in inst.data().iter().zip(cls.data()) {
        if id > 0 {
            *tallies.entry(id).or_default().entry(c).or_insert(0) += 1;
        }
    }
    let mut out = BTreeMap::new();
    for (id, tally) in tallies {
        // BTreeMap iterates classes ascending, so strict improvement keeps
        // the lowest id on ties
        let mut best_class = 0u32;
        let mut best_count = 0usize;
        for (&class, &count) in &tally {
            if count > best_count {
                best_count = count;
                best_class = class;
            }
        }
        out.insert(id, best_class);
    }
    Ok(out)
}

/// Instances per class over a whole split, classes decided by pixel
/// majority.
pub fn class_counts(
    labels: &[(InstanceMap, ClassMap)],
    num_classes: u32,
) -> Result<Vec<usize>, FoldError> {
    let mut counts = vec![0usize; num_classes as usize];
    for (inst, cls) in labels {
        for (id, class) in instance_classes(inst, cls)? {
            if class == 0 {
                continue; // majority-background instance, counted nowhere
            }
            if class > num_classes {
                return Err(FoldError::ClassOutOfRange {
                    id,
                    class,
                    num_classes,
                });
            }
            counts[class as usize - 1] += 1;
        }
    }
    Ok(counts)
}

/// Normalizes counts into proportions that sum to 1.
pub fn ratios(counts: &[usize]) -> Result<Vec<f64>, FoldError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(FoldError::EmptySplit);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Elementwise train/valid ratio quotient. A class absent from valid but
/// present in train yields +infinity; absent from both yields 1.
pub fn similarity(r_train: &[f64], r_valid: &[f64]) -> Result<Vec<f64>, FoldError> {
    if r_train.len() != r_valid.len() {
        return Err(FoldError::ClassCountMismatch(r_train.len(), r_valid.len()));
    }
    Ok(r_train
        .iter()
        .zip(r_valid)
        .map(|(&t, &v)| {
            if v > 0.0 {
                t / v
            } else if t > 0.0 {
                f64::INFINITY
            } else {
                1.0
            }
        })
        .collect())
}

/// Stratification score: sum of squared deviations of Sim from 1. Zero iff
/// the two distributions are identical; any infinite Sim makes it infinite.
pub fn fold_score(sim: &[f64]) -> f64 {
    if sim.iter().any(|s| s.is_infinite()) {
        return f64::INFINITY;
    }
    sim.iter().map(|&s| (s - 1.0) * (s - 1.0)).sum()
}

/// Per-class columns of one fold's report.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldClassStats {
    pub class_id: u32,
    pub count_train: usize,
    pub count_valid: usize,
    pub ratio_train: f64,
    pub ratio_valid: f64,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold_id: u32,
    pub score: f64,
    pub classes: Vec<FoldClassStats>,
}

/// One fold's label data.
#[derive(Debug, Clone)]
pub struct FoldInput {
    pub id: u32,
    pub train: Vec<(InstanceMap, ClassMap)>,
    pub valid: Vec<(InstanceMap, ClassMap)>,
}

/// Scores every fold and sorts ascending (best stratified first); ties go
/// to the lower fold id.
pub fn rank_folds(folds: &[FoldInput], num_classes: u32) -> Result<Vec<FoldReport>, FoldError> {
    if folds.is_empty() {
        return Err(FoldError::NoFolds);
    }
    let mut reports = Vec::with_capacity(folds.len());
    for fold in folds {
        let count_train = class_counts(&fold.train, num_classes)?;
        let count_valid = class_counts(&fold.valid, num_classes)?;
        let ratio_train = ratios(&count_train)?;
        let ratio_valid = ratios(&count_valid)?;
        let sim = similarity(&ratio_train, &ratio_valid)?;
        let score = fold_score(&sim);
        let classes = (0..num_classes as usize)
            .map(|i| FoldClassStats {
                class_id: i as u32 + 1,
                count_train: count_train[i],
                count_valid: count_valid[i],
                ratio_train: ratio_train[i],
                ratio_valid: ratio_valid[i],
                sim: sim[i],
            })
            .collect();
        reports.push(FoldReport {
            fold_id: fold.id,
            score,
            classes,
        });
    }
    reports.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.fold_id.cmp(&b.fold_id))
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::synth_instances;

    fn labels_with_classes(counts: &[(u32, usize)]) -> (InstanceMap, ClassMap) {
        // one row per instance, `size` pixels wide
        let width = counts.iter().map(|&(_, s)| s).max().unwrap_or(1).max(1);
        let height = counts.len().max(1);
        let mut inst = InstanceMap::filled(height, width, 0);
        let mut cls = ClassMap::filled(height, width, 0);
        for (i, &(class, size)) in counts.iter().enumerate() {
            for c in 0..size {
                inst.set(i, c, i as u32 + 1);
                cls.set(i, c, class);
            }
        }
        (inst, cls)
    }

    #[test]
    fn counts_empty_split() {
        assert_eq!(class_counts(&[], 4).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn counts_by_type() {
        let labels = labels_with_classes(&[(2, 3), (2, 4), (5, 2)]);
        let counts = class_counts(&[labels], 6).unwrap();
        assert_eq!(counts, vec![0, 2, 0, 0, 1, 0]);
    }

    #[test]
    fn majority_rule_with_tie_to_lowest() {
        // instance 1: 3 pixels class 1, 2 pixels class 3 → class 1
        let mut inst = InstanceMap::filled(1, 5, 0);
        let mut cls = ClassMap::filled(1, 5, 0);
        for c in 0..5 {
            inst.set(0, c, 1);
            cls.set(0, c, if c < 3 { 1 } else { 3 });
        }
        assert_eq!(instance_classes(&inst, &cls).unwrap()[&1], 1);
        // exact tie 2/2 between classes 2 and 4 → class 2
        let mut inst = InstanceMap::filled(1, 4, 0);
        let mut cls = ClassMap::filled(1, 4, 0);
        for c in 0..4 {
            inst.set(0, c, 1);
            cls.set(0, c, if c < 2 { 4 } else { 2 });
        }
        assert_eq!(instance_classes(&inst, &cls).unwrap()[&1], 2);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratios(&[1, 1]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(ratios(&[3, 1]).unwrap(), vec![0.75, 0.25]);
        assert!(matches!(ratios(&[0, 0]), Err(FoldError::EmptySplit)));
        let r = ratios(&[7, 11, 13, 29]).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_examples() {
        let same = similarity(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
        assert_eq!(same, vec![1.0, 1.0]);
        let s = similarity(&[0.6, 0.4], &[0.5, 0.5]).unwrap();
        assert!((s[0] - 1.2).abs() < 1e-15);
        assert!((s[1] - 0.8).abs() < 1e-15);
        let inf = similarity(&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.0]).unwrap();
        assert!(inf[1].is_infinite());
        assert_eq!(inf[2], 1.0);
    }

    #[test]
    fn score_examples() {
        assert_eq!(fold_score(&[1.0, 1.0, 1.0]), 0.0);
        let s = fold_score(&[1.2, 0.8]);
        assert!((s - 0.08).abs() < 1e-12);
        assert!(fold_score(&[1.0, f64::INFINITY]).is_infinite());
        assert!(fold_score(&[1.001]) > 0.0);
    }

    #[test]
    fn scale_invariance_is_exact() {
        let counts = vec![12usize, 7, 31, 4];
        let scaled: Vec<usize> = counts.iter().map(|&c| c * 9).collect();
        assert_eq!(ratios(&counts).unwrap(), ratios(&scaled).unwrap());
    }

    #[test]
    fn rank_folds_prefers_stratified_fold() {
        // fold 1: train 3:1, valid 1:1 → skewed; fold 2: both 3:1 → score 0
        let train_a = labels_with_classes(&[(1, 3), (1, 3), (1, 3), (2, 3)]);
        let valid_a = labels_with_classes(&[(1, 3), (2, 3)]);
        let train_b = labels_with_classes(&[(1, 3), (1, 3), (1, 3), (2, 3)]);
        let valid_b = labels_with_classes(&[(1, 3), (1, 3), (1, 3), (2, 3)]);
        let folds = vec![
            FoldInput {
                id: 1,
                train: vec![train_a],
                valid: vec![valid_a],
            },
            FoldInput {
                id: 2,
                train: vec![train_b],
                valid: vec![valid_b],
            },
        ];
        let ranked = rank_folds(&folds, 2).unwrap();
        assert_eq!(ranked[0].fold_id, 2);
        assert_eq!(ranked[0].score, 0.0);
        assert!(ranked[1].score > 0.0);
        // permuting the input changes nothing
        let swapped = vec![folds[1].clone(), folds[0].clone()];
        let ranked2 = rank_folds(&swapped, 2).unwrap();
        assert_eq!(ranked2[0].fold_id, 2);
        assert_eq!(ranked2[1].fold_id, 1);
    }

    #[test]
    fn rank_folds_tie_breaks_by_id() {
        let mk = || labels_with_classes(&[(1, 3), (2, 3)]);
        let folds = vec![
            FoldInput {
                id: 7,
                train: vec![mk()],
                valid: vec![mk()],
            },
            FoldInput {
                id: 3,
                train: vec![mk()],
                valid: vec![mk()],
            },
        ];
        let ranked = rank_folds(&folds, 2).unwrap();
        assert_eq!(ranked[0].fold_id, 3);
        assert_eq!(ranked[0].score, 0.0);
        assert_eq!(ranked[1].score, 0.0);
    }

    #[test]
    fn rank_folds_rejects_empty_input() {
        assert!(matches!(rank_folds(&[], 2), Err(FoldError::NoFolds)));
    }

    #[test]
    fn synthetic_split_counts_are_consistent() {
        let (inst, cls) = synth_instances(40, 96, 96, 6, 3).unwrap();
        let counts = class_counts(&[(inst, cls)], 3).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 6);
    }

    #[test]
    fn score_zero_iff_ratios_equal() {
        let a = ratios(&[5, 15, 10]).unwrap();
        let b = ratios(&[1, 3, 2]).unwrap();
        assert_eq!(fold_score(&similarity(&a, &b).unwrap()), 0.0);
        let c = ratios(&[2, 3, 1]).unwrap();
        assert!(fold_score(&similarity(&a, &c).unwrap()) > 0.0);
    }
}
