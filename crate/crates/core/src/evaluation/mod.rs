//! Shared-task scoring: weighted F1, intensity binarization and the
//! Task A / B / C aggregates.
//!
//! Task A is sentiment. Task B averages the binary presence scores of
//! humour, sarcasm, offensiveness and motivation; Task C averages their
//! intensity scores. Motivation is binary, so it enters both unchanged.

mod reference;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureRecord, Head, LabelSet, ModalitySet};
use crate::error::{Error, Result};
use crate::model::{predict, MmmtModel};

pub use reference::{reference_table, render_comparison, render_grid, ReferenceTable, RunAxis, TableId};

/// Support-weighted mean of per-class F1. Undefined precision or recall
/// counts as 0; a class without support has weight 0.
pub fn weighted_f1(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::input(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::input("weighted F1 of an empty set"));
    }
    if let Some(v) = preds.iter().chain(golds).find(|v| **v >= num_classes) {
        return Err(Error::input(format!("label {v} outside [0, {num_classes})")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        predicted[p] += 1;
        support[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let n = golds.len() as f64;
    let mut score = 0.0;
    for c in 0..num_classes {
        if support[c] == 0 {
            continue;
        }
        let precision = if predicted[c] > 0 {
            tp[c] as f64 / predicted[c] as f64
        } else {
            0.0
        };
        let recall = tp[c] as f64 / support[c] as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        score += support[c] as f64 / n * f1;
    }
    Ok(score)
}

/// Intensity ranks to presence: 0 stays 0, 1-3 become 1.
pub fn binarize_task_c(ranks: &[usize]) -> Result<Vec<usize>> {
    ranks
        .iter()
        .map(|&r| match r {
            0 => Ok(0),
            1..=3 => Ok(1),
            _ => Err(Error::input(format!("intensity rank {r} outside [0, 3]"))),
        })
        .collect()
}

/// Raw subtask scores feeding [`aggregate`]. Emotion arrays are indexed in
/// humour, sarcasm, offensive, motivation order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubtaskScores {
    pub sentiment: Option<f64>,
    pub binary: [Option<f64>; 4],
    pub intensity: [Option<f64>; 4],
}

impl SubtaskScores {
    /// Sets motivation, which counts for both tasks.
    pub fn set_motivation(&mut self, score: Option<f64>) {
        self.binary[3] = score;
        self.intensity[3] = score;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: usize,
    pub sentiment: Option<f64>,
    pub humour_binary: Option<f64>,
    pub humour_intensity: Option<f64>,
    pub sarcasm_binary: Option<f64>,
    pub sarcasm_intensity: Option<f64>,
    pub offensive_binary: Option<f64>,
    pub offensive_intensity: Option<f64>,
    pub motivation: Option<f64>,
    pub task_a: Option<f64>,
    pub task_b: Option<f64>,
    pub task_c: Option<f64>,
    /// Mean of the three task scores; absent if any of them is.
    pub mean: Option<f64>,
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let present: Option<Vec<f64>> = values.iter().copied().collect();
    present.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Task aggregates from subtask scores. Any missing input leaves the
/// aggregates that depend on it unavailable.
pub fn aggregate(scores: &SubtaskScores, records: usize) -> MetricsReport {
    let task_a = scores.sentiment;
    let task_b = mean_of(&scores.binary);
    let task_c = mean_of(&scores.intensity);
    MetricsReport {
        records,
        sentiment: scores.sentiment,
        humour_binary: scores.binary[0],
        humour_intensity: scores.intensity[0],
        sarcasm_binary: scores.binary[1],
        sarcasm_intensity: scores.intensity[1],
        offensive_binary: scores.binary[2],
        offensive_intensity: scores.intensity[2],
        motivation: scores.binary[3],
        task_a,
        task_b,
        task_c,
        mean: mean_of(&[task_a, task_b, task_c]),
    }
}

/// Aggregate a report from task-level scores only, e.g. leaderboard rows.
pub fn aggregate_tasks(task_a: Option<f64>, task_b: Option<f64>, task_c: Option<f64>) -> MetricsReport {
    MetricsReport {
        records: 0,
        sentiment: task_a,
        humour_binary: None,
        humour_intensity: None,
        sarcasm_binary: None,
        sarcasm_intensity: None,
        offensive_binary: None,
        offensive_intensity: None,
        motivation: None,
        task_a,
        task_b,
        task_c,
        mean: mean_of(&[task_a, task_b, task_c]),
    }
}

/// Rows where both the prediction and the gold label for `head` exist.
fn paired(preds: &[LabelSet], golds: &[LabelSet], head: Head) -> (Vec<usize>, Vec<usize>) {
    preds
        .iter()
        .zip(golds)
        .filter_map(|(p, g)| Some((usize::from(p.get(head)?), usize::from(g.get(head)?))))
        .unzip()
}

/// Weighted F1 of one head as trained: intensity labels are compared as
/// presence when the head has two classes. `None` without labeled rows.
pub fn head_f1(preds: &[LabelSet], golds: &[LabelSet], head: Head, num_classes: usize) -> Result<Option<f64>> {
    let (mut p, mut g) = paired(preds, golds, head);
    if p.is_empty() {
        return Ok(None);
    }
    if num_classes == 2 && head.has_intensity() {
        g = binarize_task_c(&g)?;
        p = binarize_task_c(&p)?;
    }
    weighted_f1(&p, &g, num_classes).map(Some)
}

/// Shared-task report. With `binary_emotions` the humour / sarcasm /
/// offensive predictions are presence labels: they score Task B directly
/// and Task C is unavailable. Otherwise Task B binarizes the intensities.
pub fn evaluate_predictions(preds: &[LabelSet], golds: &[LabelSet], binary_emotions: bool) -> Result<MetricsReport> {
    if preds.len() != golds.len() {
        return Err(Error::input(format!(
            "{} predictions for {} gold records",
            preds.len(),
            golds.len()
        )));
    }
    let mut scores = SubtaskScores {
        sentiment: head_f1(preds, golds, Head::Sentiment, 3)?,
        ..Default::default()
    };
    for (i, head) in [Head::Humour, Head::Sarcasm, Head::Offensive].into_iter().enumerate() {
        let (p, g) = paired(preds, golds, head);
        if p.is_empty() {
            continue;
        }
        let gb = binarize_task_c(&g)?;
        scores.binary[i] = Some(weighted_f1(&binarize_task_c(&p)?, &gb, 2)?);
        if !binary_emotions {
            scores.intensity[i] = Some(weighted_f1(&p, &g, 4)?);
        }
    }
    scores.set_motivation(head_f1(preds, golds, Head::Motivation, 2)?);
    Ok(aggregate(&scores, golds.len()))
}

/// Eval-mode predictions for `records` and their report.
pub fn evaluate_model(
    model: &MmmtModel,
    records: &[FeatureRecord],
    modalities: ModalitySet,
    batch_size: usize,
) -> Result<(Vec<LabelSet>, MetricsReport)> {
    let outputs = model.infer(records, modalities, batch_size)?;
    let preds = predict(&outputs);
    let golds: Vec<LabelSet> = records.iter().map(|r| r.labels).collect();
    let report = evaluate_predictions(&preds, &golds, model.config().binary_emotion_heads)?;
    Ok((preds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    /// Full confusion matrix, then per-class precision and recall from its
    /// row and column sums.
    #[allow(clippy::needless_range_loop)]
    pub(crate) fn brute_force_f1(preds: &[usize], golds: &[usize], k: usize) -> f64 {
        let mut confusion = vec![vec![0u64; k]; k];
        for (&g, &p) in golds.iter().zip(preds) {
            confusion[g][p] += 1;
        }
        let n = golds.len() as f64;
        let mut total = 0.0;
        for c in 0..k {
            let tp = confusion[c][c] as f64;
            let actual: u64 = confusion[c].iter().sum();
            let predicted: u64 = (0..k).map(|g| confusion[g][c]).sum();
            if actual == 0 {
                continue;
            }
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = tp / actual as f64;
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            total += actual as f64 / n * f1;
        }
        total
    }

    #[test]
    fn hand_case_is_two_thirds() {
        assert_eq!(weighted_f1(&[0, 1, 1], &[0, 0, 1], 2).unwrap(), 2.0 / 3.0);
        assert_eq!(weighted_f1(&[2, 0, 1], &[2, 0, 1], 3).unwrap(), 1.0);
    }

    #[test]
    fn fuzzed_instances_match_brute_force() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..1000 {
            let k = 2 + rng.below(4) as usize;
            let n = 1 + rng.below(500) as usize;
            let golds: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
            let fast = weighted_f1(&preds, &golds, k).unwrap();
            let slow = brute_force_f1(&preds, &golds, k);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn input_errors() {
        assert!(matches!(weighted_f1(&[0], &[0, 1], 2), Err(Error::Input(_))));
        assert!(matches!(weighted_f1(&[], &[], 2), Err(Error::Input(_))));
        assert!(matches!(weighted_f1(&[2], &[0], 2), Err(Error::Input(_))));
        assert!(matches!(binarize_task_c(&[4]), Err(Error::Input(_))));
    }

    #[test]
    fn binarization() {
        assert_eq!(binarize_task_c(&[0, 1, 2, 3]).unwrap(), vec![0, 1, 1, 1]);
        assert_eq!(binarize_task_c(&[0, 0]).unwrap(), vec![0, 0]);
        let once = binarize_task_c(&[3, 0, 2]).unwrap();
        assert_eq!(binarize_task_c(&once).unwrap(), once);
    }

    #[test]
    fn per_emotion_scores_aggregate_to_task_b() {
        let mut s = SubtaskScores {
            binary: [Some(0.8111), Some(0.8191), Some(0.485), None],
            ..SubtaskScores::default()
        };
        s.set_motivation(Some(0.98));
        let r = aggregate(&s, 0);
        assert!((r.task_b.unwrap() - 0.7738).abs() < 0.0005);
        assert!(r.task_c.is_none());
        assert!(r.mean.is_none());
    }

    #[test]
    fn task_scores_average_to_mean() {
        let r = aggregate_tasks(Some(0.5318), Some(0.8059), Some(0.5443));
        assert!((r.mean.unwrap() - 0.6273).abs() < 0.00005);
        assert!(aggregate_tasks(Some(0.5), Some(0.8), None).mean.is_none());
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let golds = vec![
            LabelSet::new(0, 1, 2, 3, 1),
            LabelSet::new(2, 0, 0, 1, 0),
            LabelSet::new(1, 3, 1, 0, 0),
        ];
        let r = evaluate_predictions(&golds, &golds, false).unwrap();
        for v in [r.task_a, r.task_b, r.task_c, r.mean] {
            assert_eq!(v, Some(1.0));
        }
        let binary = evaluate_predictions(&golds, &golds, true).unwrap();
        assert_eq!(binary.task_b, Some(1.0));
        assert!(binary.task_c.is_none());
    }

    #[test]
    fn unlabeled_records_are_skipped() {
        let golds = vec![LabelSet::new(0, 1, 2, 3, 1), LabelSet::default()];
        let preds = vec![LabelSet::new(0, 1, 2, 3, 1), LabelSet::new(1, 1, 1, 1, 1)];
        let r = evaluate_predictions(&preds, &golds, false).unwrap();
        assert_eq!(r.mean, Some(1.0));
        let none = evaluate_predictions(&preds, &[LabelSet::default(); 2], false).unwrap();
        assert!(none.task_a.is_none() && none.mean.is_none());
    }

    #[test]
    fn two_class_intensity_head_compares_presence() {
        let golds = vec![LabelSet::new(0, 3, 0, 0, 0), LabelSet::new(0, 0, 0, 0, 0)];
        let preds = vec![LabelSet::new(0, 1, 0, 0, 0), LabelSet::new(0, 0, 0, 0, 0)];
        assert_eq!(head_f1(&preds, &golds, Head::Humour, 2).unwrap(), Some(1.0));
        assert!(head_f1(&preds, &golds, Head::Humour, 4).unwrap().unwrap() < 1.0);
    }

    proptest! {
        #[test]
        fn invariant_under_pair_permutation_and_relabeling(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..80),
            rot in 0usize..4,
            seed in any::<u64>(),
        ) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let base = weighted_f1(&p, &g, 4).unwrap();
            let mut shuffled = pairs.clone();
            SplitMix64::new(seed).shuffle(&mut shuffled);
            let (sp, sg): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            prop_assert!((weighted_f1(&sp, &sg, 4).unwrap() - base).abs() < 1e-12);
            let relabel = |v: &[usize]| v.iter().map(|x| (x + rot) % 4).collect::<Vec<_>>();
            prop_assert!((weighted_f1(&relabel(&p), &relabel(&g), 4).unwrap() - base).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
