//! Challenge evaluation: IoU instance matching, panoptic quality, the
//! dataset-aggregated multi-class mPQ+ and the multi-class R² over
//! per-image nucleus counts.

use crate::field::InstanceMap;
use crate::postproc::TypedInstances;
use crate::util::KahanSum;
use std::collections::HashMap;
use thiserror::Error;

/// Damping added to PQ denominators so empty classes stay finite; matches
/// the challenge reference convention (perfect scores are ≈1, not 1).
pub const PQ_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("field extents differ: {0}×{1} vs {2}×{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image counts differ: {0} ground-truth vs {1} predicted")]
    ImageCountMismatch(usize, usize),
    #[error("class counts differ: {0} vs {1}")]
    ClassCountMismatch(usize, usize),
    #[error("need at least 2 images for count regression, got {0}")]
    InsufficientData(usize),
}

/// Instance pairing at IoU > 0.5 (necessarily one-to-one).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// (gt id, pred id, IoU), sorted by gt id.
    pub pairs: Vec<(u32, u32, f64)>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

/// Pairs every (gt, pred) instance couple whose IoU strictly exceeds 0.5.
pub fn match_instances(gt: &InstanceMap, pred: &InstanceMap) -> Result<MatchResult, MetricsError> {
    if !gt.same_dims(pred) {
        return Err(MetricsError::ShapeMismatch(
            gt.height(),
            gt.width(),
            pred.height(),
            pred.width(),
        ));
    }
    let mut gt_area: HashMap<u32, usize> = HashMap::new();
    let mut pred_area: HashMap<u32, usize> = HashMap::new();
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        if g > 0 {
            *gt_area.entry(g).or_insert(0) += 1;
        }
        if p > 0 {
            *pred_area.entry(p).or_insert(0) += 1;
        }
        if g > 0 && p > 0 {
            *inter.entry((g, p)).or_insert(0) += 1;
        }
    }
    let mut pairs = Vec::new();
    let mut matched_gt: Vec<u32> = Vec::new();
    let mut matched_pred: Vec<u32> = Vec::new();
    for (&(g, p), &i) in &inter {
        let union = gt_area[&g] + pred_area[&p] - i;
        let iou = i as f64 / union as f64;
        if iou > 0.5 {
            pairs.push((g, p, iou));
            matched_gt.push(g);
            matched_pred.push(p);
        }
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut unmatched_gt: Vec<u32> = gt_area
        .keys()
        .copied()
        .filter(|g| !matched_gt.contains(g))
        .collect();
    let mut unmatched_pred: Vec<u32> = pred_area
        .keys()
        .copied()
        .filter(|p| !matched_pred.contains(p))
        .collect();
    unmatched_gt.sort_unstable();
    unmatched_pred.sort_unstable();
    Ok(MatchResult {
        pairs,
        unmatched_gt,
        unmatched_pred,
    })
}

/// Panoptic quality aggregates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqResult {
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub sum_iou: f64,
}

fn pq_from_counts(true_pos: usize, false_pos: usize, false_neg: usize, sum_iou: f64) -> PqResult {
    let dq = true_pos as f64
        / (true_pos as f64 + 0.5 * false_pos as f64 + 0.5 * false_neg as f64 + PQ_EPSILON);
    let sq = sum_iou / (true_pos as f64 + PQ_EPSILON);
    PqResult {
        dq,
        sq,
        pq: dq * sq,
        true_pos,
        false_pos,
        false_neg,
        sum_iou,
    }
}

/// Panoptic quality of one map pair.
pub fn pq(gt: &InstanceMap, pred: &InstanceMap) -> Result<PqResult, MetricsError> {
    let m = match_instances(gt, pred)?;
    let mut sum_iou = KahanSum::<f64>::new();
    for &(_, _, iou) in &m.pairs {
        sum_iou.add(iou);
    }
    Ok(pq_from_counts(
        m.pairs.len(),
        m.unmatched_pred.len(),
        m.unmatched_gt.len(),
        sum_iou.value(),
    ))
}

/// Per-class PQ aggregated over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPq {
    pub class_id: u32,
    pub result: PqResult,
    /// False when the class occurs in neither ground truth nor prediction
    /// anywhere in the dataset (its epsilon-damped PQ is 0 by convention).
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpqResult {
    pub per_class: Vec<ClassPq>,
    pub mean: f64,
}

/// mPQ+: tp/fp/fn/IoU mass accumulated per class across the whole dataset
/// before the PQ formula is applied; the mean runs over all C classes.
pub fn mpq_plus(
    gt: &[TypedInstances],
    pred: &[TypedInstances],
    num_classes: u32,
) -> Result<MpqResult, MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::ImageCountMismatch(gt.len(), pred.len()));
    }
    let mut per_class = Vec::with_capacity(num_classes as usize);
    for class_id in 1..=num_classes {
        let mut true_pos = 0usize;
        let mut false_pos = 0usize;
        let mut false_neg = 0usize;
        let mut sum_iou = KahanSum::<f64>::new();
        let mut present = false;
        for (g, p) in gt.iter().zip(pred) {
            let g_map = g.restrict_to_class(class_id);
            let p_map = p.restrict_to_class(class_id);
            let m = match_instances(&g_map, &p_map)?;
            true_pos += m.pairs.len();
            false_pos += m.unmatched_pred.len();
            false_neg += m.unmatched_gt.len();
            for &(_, _, iou) in &m.pairs {
                sum_iou.add(iou);
            }
            present |= g.types.values().any(|&c| c == class_id)
                || p.types.values().any(|&c| c == class_id);
        }
        per_class.push(ClassPq {
            class_id,
            result: pq_from_counts(true_pos, false_pos, false_neg, sum_iou.value()),
            present,
        });
    }
    let mut mean = KahanSum::<f64>::new();
    for c in &per_class {
        mean.add(c.result.pq);
    }
    Ok(MpqResult {
        mean: mean.value() / num_classes as f64,
        per_class,
    })
}

/// Number of instances of each class (index c-1 holds class c).
pub fn count_per_class(t: &TypedInstances, num_classes: u32) -> Vec<usize> {
    let mut counts = vec![0usize; num_classes as usize];
    for &c in t.types.values() {
        if c >= 1 && c <= num_classes {
            counts[c as usize - 1] += 1;
        }
    }
    counts
}

/// Per-image, per-class nucleus counts; rectangular across images.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsTable {
    num_classes: usize,
    rows: Vec<Vec<usize>>,
}

impl CountsTable {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<usize>) -> Result<(), MetricsError> {
        if row.len() != self.num_classes {
            return Err(MetricsError::ClassCountMismatch(
                self.num_classes,
                row.len(),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_images(&self) -> usize {
        self.rows.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2Result {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Coefficient of determination between true and predicted counts, per
/// class, then averaged. A zero-variance class scores 1 when predicted
/// exactly and 0 otherwise.
pub fn multi_r2(gt: &CountsTable, pred: &CountsTable) -> Result<R2Result, MetricsError> {
    if gt.num_images() != pred.num_images() {
        return Err(MetricsError::ImageCountMismatch(
            gt.num_images(),
            pred.num_images(),
        ));
    }
    if gt.num_classes() != pred.num_classes() {
        return Err(MetricsError::ClassCountMismatch(
            gt.num_classes(),
            pred.num_classes(),
        ));
    }
    let n = gt.num_images();
    if n < 2 {
        return Err(MetricsError::InsufficientData(n));
    }
    let mut per_class = Vec::with_capacity(gt.num_classes());
    for c in 0..gt.num_classes() {
        let mut mean = KahanSum::<f64>::new();
        for row in gt.rows() {
            mean.add(row[c] as f64);
        }
        let mean = mean.value() / n as f64;
        let mut ss_res = KahanSum::<f64>::new();
        let mut ss_tot = KahanSum::<f64>::new();
        for (g_row, p_row) in gt.rows().iter().zip(pred.rows()) {
            let g = g_row[c] as f64;
            let p = p_row[c] as f64;
            ss_res.add((g - p) * (g - p));
            ss_tot.add((g - mean) * (g - mean));
        }
        let (ss_res, ss_tot) = (ss_res.value(), ss_tot.value());
        let r2 = if ss_tot == 0.0 {
            if ss_res == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - ss_res / ss_tot
        };
        per_class.push(r2);
    }
    let mut mean = KahanSum::<f64>::new();
    for &r in &per_class {
        mean.add(r);
    }
    Ok(R2Result {
        mean: mean.value() / per_class.len() as f64,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::InstanceMap;
    use crate::targets::synth_instances;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    // Exhaustive all-pairs IoU matching oracle.
    fn match_oracle(gt: &InstanceMap, pred: &InstanceMap) -> Vec<(u32, u32)> {
        let mut gt_ids: Vec<u32> = gt.data().iter().copied().filter(|&v| v > 0).collect();
        gt_ids.sort_unstable();
        gt_ids.dedup();
        let mut pred_ids: Vec<u32> = pred.data().iter().copied().filter(|&v| v > 0).collect();
        pred_ids.sort_unstable();
        pred_ids.dedup();
        let mut out = Vec::new();
        for &g in &gt_ids {
            for &p in &pred_ids {
                let mut inter = 0usize;
                let mut union = 0usize;
                for (&a, &b) in gt.data().iter().zip(pred.data()) {
                    let ga = a == g;
                    let pb = b == p;
                    if ga && pb {
                        inter += 1;
                    }
                    if ga || pb {
                        union += 1;
                    }
                }
                if union > 0 && inter as f64 / union as f64 > 0.5 {
                    out.push((g, p));
                }
            }
        }
        out
    }

    fn random_map(rng: &mut ChaCha8Rng) -> InstanceMap {
        // scattered rectangles, possibly overlapping earlier ones
        let (h, w) = (32usize, 32usize);
        let mut m = InstanceMap::filled(h, w, 0);
        let n = rng.gen_range(0..8);
        for id in 1..=n {
            let r0 = rng.gen_range(0..h - 4);
            let c0 = rng.gen_range(0..w - 4);
            let rh = rng.gen_range(2..6);
            let rw = rng.gen_range(2..6);
            for r in r0..(r0 + rh).min(h) {
                for c in c0..(c0 + rw).min(w) {
                    m.set(r, c, id as u32);
                }
            }
        }
        m
    }

    #[test]
    fn identical_maps_match_at_full_iou() {
        let (inst, _) = synth_instances(2, 48, 48, 4, 2).unwrap();
        let m = match_instances(&inst, &inst).unwrap();
        assert_eq!(m.pairs.len(), 4);
        assert!(m.pairs.iter().all(|&(g, p, iou)| g == p && iou == 1.0));
        assert!(m.unmatched_gt.is_empty());
        assert!(m.unmatched_pred.is_empty());
    }

    #[test]
    fn disjoint_maps_do_not_match() {
        let mut gt = InstanceMap::filled(4, 8, 0);
        let mut pred = InstanceMap::filled(4, 8, 0);
        for r in 0..4 {
            gt.set(r, 0, 1);
            pred.set(r, 7, 1);
        }
        let m = match_instances(&gt, &pred).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_gt, vec![1]);
        assert_eq!(m.unmatched_pred, vec![1]);
    }

    #[test]
    fn matching_equals_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..500 {
            let gt = random_map(&mut rng);
            let pred = random_map(&mut rng);
            let m = match_instances(&gt, &pred).unwrap();
            let got: Vec<(u32, u32)> = m.pairs.iter().map(|&(g, p, _)| (g, p)).collect();
            let mut oracle = match_oracle(&gt, &pred);
            oracle.sort_unstable();
            let mut got_sorted = got.clone();
            got_sorted.sort_unstable();
            assert_eq!(got_sorted, oracle);
        }
    }

    #[test]
    fn pq_worked_examples() {
        // identical non-empty maps
        let (inst, _) = synth_instances(5, 48, 48, 3, 2).unwrap();
        let r = pq(&inst, &inst).unwrap();
        assert!((r.pq - 1.0).abs() < 1e-5);
        assert!((r.pq - r.dq * r.sq).abs() < 1e-12);

        // empty prediction vs one instance
        let mut gt = InstanceMap::filled(4, 4, 0);
        gt.set(1, 1, 1);
        gt.set(1, 2, 1);
        let pred = InstanceMap::filled(4, 4, 0);
        let r = pq(&gt, &pred).unwrap();
        assert_eq!(r.pq, 0.0);
        assert_eq!((r.true_pos, r.false_pos, r.false_neg), (0, 0, 1));

        // one pair at IoU 0.6: |gt|=8, |pred|=8, overlap 6 → union 10
        let mut gt = InstanceMap::filled(1, 10, 0);
        let mut pred = InstanceMap::filled(1, 10, 0);
        for c in 0..8 {
            gt.set(0, c, 1);
        }
        for c in 2..10 {
            pred.set(0, c, 1);
        }
        let r = pq(&gt, &pred).unwrap();
        assert!((r.pq - 0.6).abs() < 1e-5);
        assert!((r.pq - 0.5999988000018001).abs() < 1e-12);
    }

    #[test]
    fn pq_is_label_permutation_invariant() {
        let (inst, _) = synth_instances(6, 48, 48, 4, 2).unwrap();
        let (h, w) = inst.dims();
        let permuted =
            InstanceMap::from_vec(h, w, inst.data().iter().map(|&v| v * 31 % 97 + v).collect());
        let a = pq(&inst, &inst).unwrap();
        let b = pq(&inst, &permuted).unwrap();
        assert!((a.pq - b.pq).abs() < 1e-12);
    }

    fn typed(inst: InstanceMap, classes: &[(u32, u32)]) -> TypedInstances {
        let types: BTreeMap<u32, u32> = classes.iter().copied().collect();
        let type_scores = types.keys().map(|&k| (k, 1.0)).collect();
        TypedInstances {
            inst,
            types,
            type_scores,
        }
    }

    #[test]
    fn mpq_single_image_single_class_equals_pq() {
        let (inst, _) = synth_instances(9, 48, 48, 4, 1).unwrap();
        let t = typed(inst.clone(), &[(1, 1), (2, 1), (3, 1), (4, 1)]);
        let m = mpq_plus(&[t.clone()], &[t.clone()], 1).unwrap();
        let direct = pq(&inst, &inst).unwrap();
        assert!((m.per_class[0].result.pq - direct.pq).abs() < 1e-9);
        assert!((m.mean - direct.pq).abs() < 1e-9);
    }

    #[test]
    fn mpq_absent_class_scores_zero_and_is_flagged() {
        let (inst, _) = synth_instances(10, 48, 48, 2, 1).unwrap();
        let t = typed(inst, &[(1, 1), (2, 1)]);
        let m = mpq_plus(&[t.clone()], &[t], 2).unwrap();
        assert!(m.per_class[0].present);
        assert!(!m.per_class[1].present);
        assert_eq!(m.per_class[1].result.pq, 0.0);
        // mean over both classes
        assert!((m.mean - m.per_class[0].result.pq / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mpq_mean_is_arithmetic_over_classes() {
        // class 1 matched perfectly, class 2 mistyped on the pred side →
        // fp+fn, pq_2 = 0
        let mut inst = InstanceMap::filled(4, 8, 0);
        for r in 0..4 {
            for c in 0..3 {
                inst.set(r, c, 1);
                inst.set(r, c + 4, 2);
            }
        }
        let gt = typed(inst.clone(), &[(1, 1), (2, 2)]);
        let pred = typed(inst, &[(1, 1), (2, 1)]);
        let m = mpq_plus(&[gt], &[pred], 2).unwrap();
        assert!(m.per_class[0].result.pq < 1.0); // extra fp dilutes class 1
        assert_eq!(m.per_class[1].result.pq, 0.0);
        let expect = (m.per_class[0].result.pq + m.per_class[1].result.pq) / 2.0;
        assert!((m.mean - expect).abs() < 1e-12);
    }

    #[test]
    fn counts_per_class_examples() {
        let t = typed(InstanceMap::filled(1, 1, 0), &[(1, 1), (2, 1), (3, 4)]);
        assert_eq!(count_per_class(&t, 6), vec![2, 0, 0, 1, 0, 0]);
        let empty = typed(InstanceMap::filled(1, 1, 0), &[]);
        assert_eq!(count_per_class(&empty, 3), vec![0, 0, 0]);
    }

    #[test]
    fn r2_worked_examples() {
        let mut gt = CountsTable::new(1);
        let mut pred = CountsTable::new(1);
        for (g, p) in [(1usize, 1usize), (2, 2), (3, 5)] {
            gt.push(vec![g]).unwrap();
            pred.push(vec![p]).unwrap();
        }
        let r = multi_r2(&gt, &pred).unwrap();
        assert!((r.per_class[0] - -1.0).abs() < 1e-12);

        // perfect prediction
        let r = multi_r2(&gt, &gt).unwrap();
        assert_eq!(r.per_class[0], 1.0);

        // predicting the meanscores zero
        let mut mean_pred = CountsTable::new(1);
        for _ in 0..3 {
            mean_pred.push(vec![2]).unwrap();
        }
        let r = multi_r2(&gt, &mean_pred).unwrap();
        assert!(r.per_class[0].abs() < 1e-12);
    }

    #[test]
    fn r2_requires_two_images() {
        let mut gt = CountsTable::new(1);
        gt.push(vec![1]).unwrap();
        let mut pred = CountsTable::new(1);
        pred.push(vec![1]).unwrap();
        assert!(matches!(
            multi_r2(&gt, &pred),
            Err(MetricsError::InsufficientData(1))
        ));
    }

    #[test]
    fn r2_invariant_under_image_reorder() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<usize>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(0..20)).collect())
            .collect();
        let preds: Vec<Vec<usize>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(0..20)).collect())
            .collect();
        let build = |order: &[usize]| {
            let mut g = CountsTable::new(3);
            let mut p = CountsTable::new(3);
            for &i in order {
                g.push(rows[i].clone()).unwrap();
                p.push(preds[i].clone()).unwrap();
            }
            multi_r2(&g, &p).unwrap()
        };
        let a = build(&[0, 1, 2, 3, 4, 5]);
        let b = build(&[5, 3, 1, 0, 2, 4]);
        for (x, y) in a.per_class.iter().zip(&b.per_class) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn self_pq_is_near_one(seed in 0u64..100) {
            let (inst, _) = synth_instances(seed, 40, 40, 3, 2).unwrap();
            if inst.data().iter().any(|&v| v > 0) {
                let r = pq(&inst, &inst).unwrap();
                prop_assert!(r.pq >= 1.0 - 1e-5);
                prop_assert!(r.pq <= 1.0);
            }
        }

        #[test]
        fn matched_pairs_are_unique(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_map(&mut rng);
            let pred = random_map(&mut rng);
            let m = match_instances(&gt, &pred).unwrap();
            let mut gts: Vec<u32> = m.pairs.iter().map(|p| p.0).collect();
            let mut preds: Vec<u32> = m.pairs.iter().map(|p| p.1).collect();
            let before = (gts.len(), preds.len());
            gts.sort_unstable();
            gts.dedup();
            preds.sort_unstable();
            preds.dedup();
            prop_assert_eq!(before, (gts.len(), preds.len()));
            prop_assert!(m.pairs.iter().all(|p| p.2 > 0.5));
        }
    }
}
