//! Evaluation metrics: class alignment, pixel-wise precision/recall/Dice,
//! aggregated Jaccard index, mutual information, NMI, and the Wilcoxon
//! signed-rank test.

pub mod assignment;
pub mod wilcoxon;

use crate::error::{Error, Result};
use crate::image::{InstanceMask, SegmentationMask};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult};

/// Per-run evaluation scores. The instance-level AJI values are present
/// only when instance masks were available.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
    pub aji_standard: Option<f64>,
    pub aji_paper: Option<f64>,
    pub nmi: f64,
    /// Mutual information in nats.
    pub mi: f64,
}

fn contingency(pred: &SegmentationMask, gt: &SegmentationMask, k: usize) -> Vec<f64> {
    let mut table = vec![0.0; k * k];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        table[p as usize * k + g as usize] += 1.0;
    }
    table
}

/// One-to-one class assignment `perm[pred_class] = gt_class` maximizing the
/// total per-class intersection, computed by optimal assignment on the
/// K x K contingency matrix. Among equal-total optima the lexicographically
/// smallest permutation wins.
pub fn align_labels(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
    k: usize,
) -> Result<Vec<usize>> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch("mask dimensions differ".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let table = contingency(pred, gt, k);
    let best_total = assignment::max_assignment_total(&table, k, k);

    // Fix classes greedily in ascending pred order, choosing the smallest
    // gt class that still completes to the optimal total. Counts are
    // integers, so the equality check is exact.
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    let mut fixed_total = 0.0;
    for p in 0..k {
        let free: Vec<usize> = (0..k).filter(|&g| !used[g]).collect();
        for &g in &free {
            let remaining_rows: Vec<usize> = (p + 1..k).collect();
            let remaining_cols: Vec<usize> = free.iter().copied().filter(|&c| c != g).collect();
            let mut sub = Vec::with_capacity(remaining_rows.len() * remaining_cols.len());
            for &r in &remaining_rows {
                for &c in &remaining_cols {
                    sub.push(table[r * k + c]);
                }
            }
            let completion =
                assignment::max_assignment_total(&sub, remaining_rows.len(), remaining_cols.len());
            if fixed_total + table[p * k + g] + completion >= best_total - 0.5 {
                perm[p] = g;
                used[g] = true;
                fixed_total += table[p * k + g];
                break;
            }
        }
    }
    Ok(perm)
}

/// Pixel-wise precision, recall, and Dice for one class over aligned masks.
/// An empty denominator scores 1 when the class is absent from both masks
/// and 0 otherwise.
pub fn dice_precision_recall(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
    class_id: u32,
) -> (f64, f64, f64) {
    assert_eq!(pred.n_pixels(), gt.n_pixels(), "mask sizes differ");
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fnn = 0u64;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p == class_id, g == class_id) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    let both_empty = tp + fp == 0 && tp + fnn == 0;
    let empty_score = if both_empty { 1.0 } else { 0.0 };
    let precision = if tp + fp == 0 { empty_score } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fnn == 0 { empty_score } else { tp as f64 / (tp + fnn) as f64 };
    let dice = if 2 * tp + fp + fnn == 0 {
        empty_score
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
    };
    (precision, recall, dice)
}

/// Macro-averaged Dice over classes 0..k (masks must be aligned already).
pub fn mean_dice(pred: &SegmentationMask, gt: &SegmentationMask, k: usize) -> f64 {
    let mut total = 0.0;
    for class in 0..k {
        total += dice_precision_recall(pred, gt, class as u32).2;
    }
    total / k as f64
}

/// Aggregated Jaccard index in both variants:
/// `aji_standard` follows the aggregated definition (matched intersections
/// over matched unions plus all unmatched pixels), `aji_paper` averages the
/// per-instance smoothed Jaccard over ground-truth instances. Matching is
/// greedy by descending intersection with each prediction instance usable
/// once.
pub fn aji(gt: &InstanceMask, pred: &InstanceMask, epsilon: f64) -> Result<(f64, f64)> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::DimensionMismatch("instance mask dimensions differ".into()));
    }
    let n_gt = gt.n_instances();
    if n_gt == 0 {
        return Err(Error::NoInstances);
    }
    let n_pred = pred.n_instances();

    let mut gt_size = vec![0u64; n_gt + 1];
    let mut pred_size = vec![0u64; n_pred + 1];
    let mut inter = std::collections::HashMap::<(u32, u32), u64>::new();
    for (&g, &p) in gt.ids().iter().zip(pred.ids()) {
        if g != 0 {
            gt_size[g as usize] += 1;
        }
        if p != 0 {
            pred_size[p as usize] += 1;
        }
        if g != 0 && p != 0 {
            *inter.entry((g, p)).or_insert(0) += 1;
        }
    }

    let mut pairs: Vec<(u64, u32, u32)> =
        inter.iter().map(|(&(g, p), &count)| (count, g, p)).collect();
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut matched_pred = vec![0u32; n_gt + 1]; // 0 = unmatched
    let mut pred_used = vec![false; n_pred + 1];
    let mut matched_inter = vec![0u64; n_gt + 1];
    for &(count, g, p) in &pairs {
        if matched_pred[g as usize] == 0 && !pred_used[p as usize] {
            matched_pred[g as usize] = p;
            pred_used[p as usize] = true;
            matched_inter[g as usize] = count;
        }
    }

    let mut numerator = 0u64;
    let mut denominator = 0u64;
    let mut paper_sum = 0.0;
    for g in 1..=n_gt {
        let p = matched_pred[g];
        let inter = matched_inter[g];
        let union = gt_size[g] + if p != 0 { pred_size[p as usize] } else { 0 } - inter;
        numerator += inter;
        denominator += union;
        paper_sum += inter as f64 / (union as f64 + epsilon);
    }
    for p in 1..=n_pred {
        if !pred_used[p] {
            denominator += pred_size[p];
        }
    }
    let standard = if denominator == 0 { 0.0 } else { numerator as f64 / denominator as f64 };
    Ok((standard, paper_sum / n_gt as f64))
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

fn label_counts(labels: &[u32]) -> Vec<u64> {
    let size = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut counts = vec![0u64; size];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}

/// Mutual information in nats from empirical joint frequencies;
/// zero-probability cells contribute nothing.
pub fn mutual_information(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "label arrays differ in length");
    assert!(!a.is_empty(), "label arrays must be non-empty");
    let n = a.len() as f64;
    let ca = label_counts(a);
    let cb = label_counts(b);
    let cols = cb.len();
    let mut joint = vec![0u64; ca.len() * cols];
    for (&x, &y) in a.iter().zip(b) {
        joint[x as usize * cols + y as usize] += 1;
    }
    let mut mi = 0.0;
    for (x, &cx) in ca.iter().enumerate() {
        if cx == 0 {
            continue;
        }
        for (y, &cy) in cb.iter().enumerate() {
            let cxy = joint[x * cols + y];
            if cxy > 0 && cy > 0 {
                let pxy = cxy as f64 / n;
                let px = cx as f64 / n;
                let py = cy as f64 / n;
                mi += pxy * (pxy / (px * py)).ln();
            }
        }
    }
    mi
}

/// Normalized mutual information 2 I(a;b) / (H(a) + H(b)). When both
/// entropies vanish the two labelings are single-cluster partitions, which
/// agree by definition, so the value is 1.
pub fn nmi(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "label arrays differ in length");
    assert!(!a.is_empty(), "label arrays must be non-empty");
    let n = a.len() as f64;
    let ha = entropy(&label_counts(a), n);
    let hb = entropy(&label_counts(b), n);
    if ha + hb == 0.0 {
        return 1.0;
    }
    2.0 * mutual_information(a, b) / (ha + hb)
}

/// Macro-averaged semantic scores over classes 0..k plus the label-level
/// information metrics. `pred` must already be aligned to `gt`.
pub fn semantic_scores(pred: &SegmentationMask, gt: &SegmentationMask, k: usize) -> ScoreSet {
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut dice = 0.0;
    for class in 0..k {
        let (p, r, d) = dice_precision_recall(pred, gt, class as u32);
        precision += p;
        recall += r;
        dice += d;
    }
    let kf = k as f64;
    ScoreSet {
        precision: precision / kf,
        recall: recall / kf,
        dice: dice / kf,
        aji_standard: None,
        aji_paper: None,
        nmi: nmi(gt.labels(), pred.labels()),
        mi: mutual_information(gt.labels(), pred.labels()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mask(width: usize, labels: Vec<u32>, k: usize) -> SegmentationMask {
        let height = labels.len() / width;
        SegmentationMask::new(width, height, labels, k).unwrap()
    }

    #[test]
    fn identity_alignment_for_equal_masks() {
        let m = mask(4, vec![0, 1, 2, 0, 1, 2, 0, 1], 3);
        assert_eq!(align_labels(&m, &m, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn swapped_classes_align_with_swap() {
        let gt = mask(4, vec![0, 1, 0, 1, 0, 1, 0, 1], 2);
        let pred = mask(4, vec![1, 0, 1, 0, 1, 0, 1, 0], 2);
        assert_eq!(align_labels(&pred, &gt, 2).unwrap(), vec![1, 0]);
    }

    #[test]
    fn alignment_matches_brute_force_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let k = rng.gen_range(2..=5usize);
            let labels_a: Vec<u32> = (0..48).map(|_| rng.gen_range(0..k) as u32).collect();
            let labels_b: Vec<u32> = (0..48).map(|_| rng.gen_range(0..k) as u32).collect();
            let pred = mask(8, labels_a, k);
            let gt = mask(8, labels_b, k);
            let perm = align_labels(&pred, &gt, k).unwrap();
            let (best_perm, best_total) = brute_force_alignment(&pred, &gt, k);
            let total: f64 = {
                let table = contingency(&pred, &gt, k);
                (0..k).map(|p| table[p * k + perm[p]]).sum()
            };
            assert_abs_diff_eq!(total, best_total, epsilon = 1e-9);
            assert_eq!(perm, best_perm);
        }
    }

    /// Exhaustive search: best total first, then the lexicographically
    /// smallest permutation achieving it.
    fn brute_force_alignment(
        pred: &SegmentationMask,
        gt: &SegmentationMask,
        k: usize,
    ) -> (Vec<usize>, f64) {
        let table = contingency(pred, gt, k);
        let total_of =
            |perm: &[usize]| -> f64 { (0..k).map(|p| table[p * k + perm[p]]).sum() };
        let mut best_total = f64::NEG_INFINITY;
        permute(&mut (0..k).collect::<Vec<_>>(), 0, &mut |perm| {
            best_total = best_total.max(total_of(perm));
        });
        let mut best_perm: Option<Vec<usize>> = None;
        permute(&mut (0..k).collect::<Vec<_>>(), 0, &mut |perm| {
            if total_of(perm) >= best_total - 1e-9
                && best_perm.as_deref().map_or(true, |bp| perm < bp)
            {
                best_perm = Some(perm.to_vec());
            }
        });
        (best_perm.unwrap(), best_total)
    }

    fn permute(items: &mut Vec<usize>, start: usize, f: &mut impl FnMut(&[usize])) {
        if start == items.len() {
            f(items);
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, f);
            items.swap(start, i);
        }
        // Restore ascending order for deterministic enumeration.
        items[start..].sort_unstable();
    }

    #[test]
    fn identical_masks_score_perfectly() {
        let m = mask(4, vec![0, 1, 1, 0], 2);
        assert_eq!(dice_precision_recall(&m, &m, 0), (1.0, 1.0, 1.0));
        assert_eq!(dice_precision_recall(&m, &m, 1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let pred = mask(4, vec![0, 0, 1, 1], 2);
        let gt = mask(4, vec![1, 1, 0, 0], 2);
        assert_eq!(dice_precision_recall(&pred, &gt, 0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_counted_confusion() {
        // TP = 50, FP = 25, FN = 25 for class 1 on a 1 x 200 strip.
        let mut pred_labels = vec![0u32; 200];
        let mut gt_labels = vec![0u32; 200];
        for i in 0..75 {
            pred_labels[i] = 1;
        }
        for i in 25..100 {
            gt_labels[i] = 1;
        }
        let pred = mask(200, pred_labels, 2);
        let gt = mask(200, gt_labels, 2);
        let (p, r, d) = dice_precision_recall(&pred, &gt, 1);
        assert_abs_diff_eq!(p, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn absent_class_in_both_masks_scores_one() {
        let m = mask(2, vec![0, 0], 3);
        assert_eq!(dice_precision_recall(&m, &m, 2), (1.0, 1.0, 1.0));
    }

    #[test]
    fn dice_is_harmonic_mean_of_precision_and_recall() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let labels_a: Vec<u32> = (0..64).map(|_| rng.gen_range(0..3)).collect();
            let labels_b: Vec<u32> = (0..64).map(|_| rng.gen_range(0..3)).collect();
            let pred = mask(8, labels_a, 3);
            let gt = mask(8, labels_b, 3);
            for class in 0..3 {
                let (p, r, d) = dice_precision_recall(&pred, &gt, class);
                let (ps, rs, ds) = dice_precision_recall(&gt, &pred, class);
                assert_abs_diff_eq!(d, ds, epsilon = 1e-12);
                assert_eq!(p, rs);
                assert_eq!(r, ps);
                if p + r > 0.0 {
                    assert_abs_diff_eq!(d, 2.0 * p * r / (p + r), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn perfect_instance_match() {
        let ids = vec![0, 1, 1, 0, 1, 1, 0, 0, 0];
        let gt = InstanceMask::new(3, 3, ids.clone()).unwrap();
        let pred = InstanceMask::new(3, 3, ids).unwrap();
        let (standard, paper) = aji(&gt, &pred, 1e-6).unwrap();
        assert_eq!(standard, 1.0);
        assert!((paper - 1.0).abs() < 1e-6);
    }

    #[test]
    fn half_covered_instance() {
        // GT instance of 100 pixels, prediction covers the inner 50.
        let mut gt_ids = vec![0u32; 400];
        let mut pred_ids = vec![0u32; 400];
        for i in 0..100 {
            gt_ids[i] = 1;
        }
        for i in 0..50 {
            pred_ids[i] = 1;
        }
        let gt = InstanceMask::new(20, 20, gt_ids).unwrap();
        let pred = InstanceMask::new(20, 20, pred_ids).unwrap();
        let (standard, paper) = aji(&gt, &pred, 1e-6).unwrap();
        assert_abs_diff_eq!(standard, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(paper, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn no_gt_instances_is_an_error() {
        let gt = InstanceMask::new(2, 2, vec![0; 4]).unwrap();
        let pred = InstanceMask::new(2, 2, vec![0, 1, 0, 0]).unwrap();
        assert!(matches!(aji(&gt, &pred, 1e-6), Err(Error::NoInstances)));
    }

    #[test]
    fn unmatched_prediction_pixels_penalize_standard_variant() {
        let mut gt_ids = vec![0u32; 16];
        let mut pred_ids = vec![0u32; 16];
        gt_ids[0] = 1;
        gt_ids[1] = 1;
        pred_ids[0] = 1;
        pred_ids[1] = 1;
        // A spurious prediction instance elsewhere.
        pred_ids[8] = 2;
        pred_ids[9] = 2;
        let gt = InstanceMask::new(4, 4, gt_ids).unwrap();
        let pred = InstanceMask::new(4, 4, pred_ids).unwrap();
        let (standard, paper) = aji(&gt, &pred, 1e-6).unwrap();
        assert_abs_diff_eq!(standard, 2.0 / 4.0, epsilon = 1e-12);
        assert!((paper - 1.0).abs() < 1e-5, "paper variant ignores spurious instances");
    }

    #[test]
    fn identical_uniform_binary_labelings_have_ln2_information() {
        let a = vec![0u32, 1, 0, 1, 0, 1, 0, 1];
        assert_abs_diff_eq!(mutual_information(&a, &a), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&a, &a), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn independent_labelings_have_zero_information() {
        // Product design: every (a, b) cell equally filled.
        let mut a = Vec::new();
        let mut b = Vec::new();
        for x in 0..2u32 {
            for y in 0..3u32 {
                a.push(x);
                b.push(y);
            }
        }
        assert_abs_diff_eq!(mutual_information(&a, &b), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&a, &b), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_contingency() {
        // Joint counts [[2, 1], [1, 2]] over six samples.
        let a = vec![0u32, 0, 0, 1, 1, 1];
        let b = vec![0u32, 0, 1, 0, 1, 1];
        let mi = mutual_information(&a, &b);
        assert_abs_diff_eq!(mi, 0.05663301226513241, epsilon = 1e-9);
        assert_abs_diff_eq!(nmi(&a, &b), mi / 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&a, &b), 0.08170, epsilon = 1e-5);
    }

    #[test]
    fn information_is_symmetric_and_relabeling_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let a: Vec<u32> = (0..100).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u32> = (0..100).map(|_| rng.gen_range(0..3)).collect();
        assert_abs_diff_eq!(mutual_information(&a, &b), mutual_information(&b, &a), epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&a, &b), nmi(&b, &a), epsilon = 1e-12);
        // Relabel a through the permutation 0->3, 1->2, 2->1, 3->0.
        let relabeled: Vec<u32> = a.iter().map(|&l| 3 - l).collect();
        assert_abs_diff_eq!(mutual_information(&relabeled, &b), mutual_information(&a, &b), epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&relabeled, &b), nmi(&a, &b), epsilon = 1e-12);
        // Upper bound by the smaller marginal entropy.
        let n = a.len() as f64;
        let bound = entropy(&label_counts(&a), n).min(entropy(&label_counts(&b), n));
        assert!(mutual_information(&a, &b) <= bound + 1e-12);
    }

    #[test]
    fn constant_labelings_agree_perfectly() {
        let a = vec![5u32; 10];
        let b = vec![3u32; 10];
        assert_abs_diff_eq!(nmi(&a, &b), 1.0, epsilon = 1e-15);
    }
}
