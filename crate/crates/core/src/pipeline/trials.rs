//! Repeated-experiment harness: run each method several times with derived
//! seeds, score every prediction, flag degenerations, and summarize.

use crate::config::RunConfig;
use crate::degeneration::{assess_instability, DegenerationReport, INSTABILITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::methods::{fit_and_predict, LabeledImage, Method};
use crate::metrics::{align_labels, semantic_scores, wilcoxon_signed_rank, ScoreSet, WilcoxonResult};
use std::time::Instant;

/// One method entry of a comparison study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    pub k: usize,
    pub lambda: f64,
}

/// One (method, repeat) run.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub run_id: String,
    pub seed: u64,
    pub method: Method,
    pub k: usize,
    pub lambda: f64,
    /// Scores averaged over the dataset images.
    pub scores: ScoreSet,
    pub degeneration: DegenerationReport,
    pub epochs: usize,
    /// Measured wall time; informational only and excluded from reports
    /// that must be reproducible byte-for-byte.
    pub wall_ms: f64,
    /// Aligned mean Dice per image, in dataset order.
    pub per_image_dice: Vec<f64>,
}

/// Aggregates of one method across repeats.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub k: usize,
    pub lambda: f64,
    pub runs: usize,
    pub mean_dice: f64,
    /// Population std of per-run mean Dice.
    pub std_dice: f64,
    /// Upper bound: the best run.
    pub max_dice: f64,
    pub mean_nmi: f64,
    pub collapse_count: usize,
    pub empty_class_count: usize,
    pub unstable: bool,
}

#[derive(Debug, Clone)]
pub struct TrialsOutcome {
    pub trials: Vec<TrialReport>,
    pub summaries: Vec<MethodSummary>,
    /// Two-sided signed-rank tests between the per-(repeat, image) Dice
    /// lists of each method pair, in listing order.
    pub wilcoxon: Vec<(Method, Method, WilcoxonResult)>,
}

pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores one prediction against its ground truth: classes are aligned by
/// maximum intersection before any pixel metric.
pub fn evaluate_prediction(
    pred: &crate::image::SegmentationMask,
    gt: &crate::image::SegmentationMask,
    k: usize,
) -> Result<(ScoreSet, DegenerationReport)> {
    let perm = align_labels(pred, gt, k)?;
    let aligned = pred.relabel(&perm)?;
    let scores = semantic_scores(&aligned, gt, k);
    let degeneration = DegenerationReport::of_mask(pred, k);
    Ok((scores, degeneration))
}

fn merge_scores(per_image: &[ScoreSet]) -> ScoreSet {
    let n = per_image.len() as f64;
    ScoreSet {
        precision: per_image.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: per_image.iter().map(|s| s.recall).sum::<f64>() / n,
        dice: per_image.iter().map(|s| s.dice).sum::<f64>() / n,
        aji_standard: None,
        aji_paper: None,
        nmi: per_image.iter().map(|s| s.nmi).sum::<f64>() / n,
        mi: per_image.iter().map(|s| s.mi).sum::<f64>() / n,
    }
}

/// Runs every method `repeats` times on the dataset. Trial r of any method
/// uses seed `config.seed + r`, so a single trial can be re-run in
/// isolation. Each prediction is aligned, scored, and checked for
/// degenerations; the summary carries mean, std, and upper bound per
/// method plus pairwise signed-rank p-values on per-image Dice lists.
pub fn run_repeated_trials(
    dataset: &[LabeledImage],
    methods: &[MethodConfig],
    config: &RunConfig,
    repeats: usize,
) -> Result<TrialsOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset must not be empty".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidInput("need at least one method".into()));
    }
    if repeats < 2 {
        return Err(Error::InvalidInput("repeats must be >= 2".into()));
    }

    let mut trials = Vec::new();
    let mut summaries = Vec::new();
    let mut dice_lists: Vec<Vec<f64>> = Vec::new();

    for mc in methods {
        let mut per_run_dice = Vec::with_capacity(repeats);
        let mut per_pair_dice = Vec::with_capacity(repeats * dataset.len());
        let mut nmi_sum = 0.0;
        let mut collapse_count = 0;
        let mut empty_class_count = 0;

        for r in 0..repeats {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(r as u64);
            cfg.lambda = mc.lambda;
            let started = Instant::now();
            let outcome = fit_and_predict(mc.method, dataset, mc.k, &cfg).map_err(|e| {
                Error::InvalidInput(format!(
                    "method {} failed at seed {}: {e}",
                    mc.method, cfg.seed
                ))
            })?;
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;

            let mut image_scores = Vec::with_capacity(dataset.len());
            let mut collapse = false;
            let mut empty: Vec<u32> = Vec::new();
            let mut per_image_dice = Vec::with_capacity(dataset.len());
            for (li, pred) in dataset.iter().zip(&outcome.masks) {
                let (scores, degen) = evaluate_prediction(pred, &li.mask, mc.k)?;
                per_image_dice.push(scores.dice);
                per_pair_dice.push(scores.dice);
                image_scores.push(scores);
                collapse |= degen.collapse;
                for c in degen.empty_classes {
                    if !empty.contains(&c) {
                        empty.push(c);
                    }
                }
            }
            empty.sort_unstable();
            let scores = merge_scores(&image_scores);
            per_run_dice.push(scores.dice);
            nmi_sum += scores.nmi;
            collapse_count += collapse as usize;
            empty_class_count += (!empty.is_empty()) as usize;

            trials.push(TrialReport {
                run_id: format!("{}-r{r}", mc.method),
                seed: cfg.seed,
                method: mc.method,
                k: mc.k,
                lambda: mc.lambda,
                scores,
                degeneration: DegenerationReport { collapse, empty_classes: empty },
                epochs: outcome.epochs,
                wall_ms,
                per_image_dice,
            });
        }

        let (mean_dice, std_dice) = mean_and_population_std(&per_run_dice);
        summaries.push(MethodSummary {
            method: mc.method,
            k: mc.k,
            lambda: mc.lambda,
            runs: repeats,
            mean_dice,
            std_dice,
            max_dice: per_run_dice.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_nmi: nmi_sum / repeats as f64,
            collapse_count,
            empty_class_count,
            unstable: assess_instability(&per_run_dice, INSTABILITY_THRESHOLD)?,
        });
        dice_lists.push(per_pair_dice);
    }

    let mut wilcoxon = Vec::new();
    for i in 0..methods.len() {
        for j in (i + 1)..methods.len() {
            let result = wilcoxon_signed_rank(&dice_lists[i], &dice_lists[j])?;
            wilcoxon.push((methods[i].method, methods[j].method, result));
        }
    }

    Ok(TrialsOutcome { trials, summaries, wilcoxon })
}
