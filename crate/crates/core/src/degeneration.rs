//! Detectors for the degenerative failure modes of unsupervised
//! segmentation: collapse, empty classes, instability across repeats, and
//! the redundant-class protocol.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::SegmentationMask;
use crate::methods::{fit_and_predict, LabeledImage, Method};
use crate::metrics::{align_labels, dice_precision_recall};

/// A class occupying at least this share of the pixels is a collapse.
pub const COLLAPSE_THRESHOLD: f64 = 0.97;
/// A class strictly below this pixel share counts as empty.
pub const EMPTY_CLASS_RATIO: f64 = 0.01;
/// Std of per-run mean Dice above this marks a method unstable.
pub const INSTABILITY_THRESHOLD: f64 = 0.08;
/// A K -> K+1 Dice gain beyond this flags the redundant-class issue.
pub const REDUNDANT_GAIN_THRESHOLD: f64 = 0.01;

/// Per-prediction degeneration flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegenerationReport {
    pub collapse: bool,
    pub empty_classes: Vec<u32>,
}

impl DegenerationReport {
    pub fn of_mask(mask: &SegmentationMask, k: usize) -> DegenerationReport {
        DegenerationReport {
            collapse: detect_collapse(mask, COLLAPSE_THRESHOLD),
            empty_classes: detect_empty_classes(mask, k, EMPTY_CLASS_RATIO),
        }
    }
}

/// Aggregated flags over a repeated-run set.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerationSummary {
    pub runs: usize,
    /// Runs whose prediction collapsed.
    pub collapse_count: usize,
    /// Runs with at least one empty class.
    pub empty_class_count: usize,
    pub unstable: bool,
    /// Dice improvement from adding a surplus class, when assessed.
    pub redundant_class_gain: Option<f64>,
}

/// True when one class holds at least `threshold` of all pixels
/// (inclusive boundary).
pub fn detect_collapse(mask: &SegmentationMask, threshold: f64) -> bool {
    let total = mask.n_pixels() as f64;
    let mut counts = vec![0u64; mask.max_label_plus_one()];
    for &l in mask.labels() {
        counts[l as usize] += 1;
    }
    counts.iter().any(|&c| c as f64 / total >= threshold)
}

/// Classes whose pixel share is strictly below `ratio`; absent classes
/// have share zero and are always listed.
pub fn detect_empty_classes(mask: &SegmentationMask, k: usize, ratio: f64) -> Vec<u32> {
    let total = mask.n_pixels() as f64;
    let mut counts = vec![0u64; k];
    for &l in mask.labels() {
        if (l as usize) < k {
            counts[l as usize] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| (c as f64 / total) < ratio)
        .map(|(class, _)| class as u32)
        .collect()
}

/// True when the population standard deviation of per-run mean Dice
/// exceeds `threshold` (strictly).
pub fn assess_instability(per_run_mean_dice: &[f64], threshold: f64) -> Result<bool> {
    if per_run_mean_dice.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "instability needs at least 2 runs, got {}",
            per_run_mean_dice.len()
        )));
    }
    let n = per_run_mean_dice.len() as f64;
    let mean = per_run_mean_dice.iter().sum::<f64>() / n;
    let var = per_run_mean_dice.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(var.sqrt() > threshold)
}

/// Mean Dice of a prediction against ground truth with `gt_k` semantic
/// classes, allowing the prediction to use `pred_k >= gt_k` classes. The
/// prediction classes are assigned one-to-one to ground-truth classes by
/// maximum intersection; pixels of surplus (unassigned) classes are dropped
/// from the evaluation before scoring.
pub fn aligned_dice_dropping_surplus(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
    pred_k: usize,
    gt_k: usize,
) -> Result<f64> {
    if pred_k < gt_k {
        return Err(Error::InvalidInput(format!(
            "prediction uses {pred_k} classes but ground truth has {gt_k}"
        )));
    }
    // Rectangular contingency: rows are prediction classes, columns gt.
    let mut table = vec![0.0; pred_k * gt_k];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        table[p as usize * gt_k + g as usize] += 1.0;
    }
    let assignment = crate::metrics::assignment::max_assignment(&table, pred_k, gt_k);

    // Keep only pixels of assigned prediction classes, remapped onto the
    // ground-truth label space.
    let mut kept_pred = Vec::new();
    let mut kept_gt = Vec::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if let Some(target) = assignment[p as usize] {
            kept_pred.push(target as u32);
            kept_gt.push(g);
        }
    }
    if kept_pred.is_empty() {
        return Ok(0.0);
    }
    let width = kept_pred.len();
    let pred_mask = SegmentationMask::new(width, 1, kept_pred, gt_k)?;
    let gt_mask = SegmentationMask::new(width, 1, kept_gt, gt_k)?;
    let mut dice = 0.0;
    for class in 0..gt_k {
        dice += dice_precision_recall(&pred_mask, &gt_mask, class as u32).2;
    }
    Ok(dice / gt_k as f64)
}

/// Mean aligned Dice of one method over the dataset at the given class
/// count. At `eval_k` above the ground-truth `k`, surplus classes are
/// dropped before scoring.
fn mean_dice_for_run(
    method: Method,
    dataset: &[LabeledImage],
    eval_k: usize,
    gt_k: usize,
    config: &RunConfig,
) -> Result<f64> {
    let masks = fit_and_predict(method, dataset, eval_k, config)?.masks;
    let mut total = 0.0;
    for (img, pred) in dataset.iter().zip(&masks) {
        total += if eval_k == gt_k {
            let perm = align_labels(pred, &img.mask, gt_k)?;
            let aligned = pred.relabel(&perm)?;
            crate::metrics::mean_dice(&aligned, &img.mask, gt_k)
        } else {
            aligned_dice_dropping_surplus(pred, &img.mask, eval_k, gt_k)?
        };
    }
    Ok(total / dataset.len() as f64)
}

/// Redundant-class gain: mean Dice when fitting K+1 classes (surplus class
/// removed for scoring) minus mean Dice when fitting K classes, averaged
/// over `repeats` seeded runs. A clearly positive gain means the method
/// needs an extra semantically meaningless class to score well.
pub fn assess_redundant_class(
    dataset: &[LabeledImage],
    method: Method,
    k: usize,
    config: &RunConfig,
    repeats: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset must not be empty".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be >= 1".into()));
    }
    let mut gain_sum = 0.0;
    for r in 0..repeats {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(r as u64);
        let base = mean_dice_for_run(method, dataset, k, k, &cfg)?;
        let extra = mean_dice_for_run(method, dataset, k + 1, k, &cfg)?;
        gain_sum += extra - base;
    }
    Ok(gain_sum / repeats as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with_dominance(total: usize, dominant: usize) -> SegmentationMask {
        let mut labels = vec![1u32; total];
        for l in labels.iter_mut().take(dominant) {
            *l = 0;
        }
        SegmentationMask::new(total, 1, labels, 2).unwrap()
    }

    #[test]
    fn collapse_boundaries() {
        // 1000 pixels: 96%, 97%, 98% dominance.
        assert!(!detect_collapse(&mask_with_dominance(1000, 960), COLLAPSE_THRESHOLD));
        assert!(detect_collapse(&mask_with_dominance(1000, 970), COLLAPSE_THRESHOLD));
        assert!(detect_collapse(&mask_with_dominance(1000, 980), COLLAPSE_THRESHOLD));
    }

    #[test]
    fn balanced_mask_does_not_collapse() {
        assert!(!detect_collapse(&mask_with_dominance(1000, 500), COLLAPSE_THRESHOLD));
    }

    #[test]
    fn collapse_is_invariant_under_relabeling() {
        let m = mask_with_dominance(1000, 980);
        let swapped = m.relabel(&[1, 0]).unwrap();
        assert_eq!(
            detect_collapse(&m, COLLAPSE_THRESHOLD),
            detect_collapse(&swapped, COLLAPSE_THRESHOLD)
        );
    }

    #[test]
    fn empty_class_boundaries() {
        // 1000 pixels; class 1 at 0.5%, 1.0%, 2.0%.
        for (count, expect_empty) in [(5usize, true), (10, false), (20, false)] {
            let mut labels = vec![0u32; 1000];
            for l in labels.iter_mut().take(count) {
                *l = 1;
            }
            let mask = SegmentationMask::new(1000, 1, labels, 2).unwrap();
            let empty = detect_empty_classes(&mask, 2, EMPTY_CLASS_RATIO);
            assert_eq!(empty.contains(&1), expect_empty, "count {count}");
        }
    }

    #[test]
    fn absent_class_is_listed() {
        let mask = SegmentationMask::new(4, 1, vec![0, 0, 1, 1], 3).unwrap();
        assert_eq!(detect_empty_classes(&mask, 3, EMPTY_CLASS_RATIO), vec![2]);
    }

    #[test]
    fn zero_ratio_lists_nothing_and_full_ratio_lists_minorities() {
        let mask = SegmentationMask::new(4, 1, vec![0, 0, 0, 1], 2).unwrap();
        assert!(detect_empty_classes(&mask, 2, 0.0).is_empty());
        assert_eq!(detect_empty_classes(&mask, 2, 1.0), vec![0, 1]);
        let collapsed = SegmentationMask::new(4, 1, vec![0, 0, 0, 0], 2).unwrap();
        assert_eq!(detect_empty_classes(&collapsed, 2, 1.0), vec![1]);
    }

    #[test]
    fn instability_thresholds() {
        let stable = vec![0.737; 10];
        assert!(!assess_instability(&stable, INSTABILITY_THRESHOLD).unwrap());

        // Two-point sets with known population std.
        let spread_009 = vec![0.5 - 0.09, 0.5 + 0.09];
        assert!(assess_instability(&spread_009, INSTABILITY_THRESHOLD).unwrap());
        let spread_0043 = vec![0.737 - 0.043, 0.737 + 0.043];
        assert!(!assess_instability(&spread_0043, INSTABILITY_THRESHOLD).unwrap());
    }

    #[test]
    fn instability_requires_two_runs() {
        assert!(assess_instability(&[0.5], INSTABILITY_THRESHOLD).is_err());
    }

    #[test]
    fn instability_ignores_run_order() {
        let a = vec![0.1, 0.5, 0.9, 0.3];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(
            assess_instability(&a, INSTABILITY_THRESHOLD).unwrap(),
            assess_instability(&b, INSTABILITY_THRESHOLD).unwrap()
        );
    }

    #[test]
    fn surplus_drop_scores_perfect_prediction_with_extra_class() {
        // Ground truth two classes; prediction adds a third class that
        // swallows a few pixels but is otherwise exact.
        let gt = SegmentationMask::new(8, 1, vec![0, 0, 0, 0, 1, 1, 1, 1], 2).unwrap();
        let pred = SegmentationMask::new(8, 1, vec![0, 0, 2, 2, 1, 1, 1, 1], 3).unwrap();
        let d = aligned_dice_dropping_surplus(&pred, &gt, 3, 2).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "surplus pixels are dropped, got {d}");
    }
}
