//! Class-balancing oversampling of training indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FeatureRecord, Head, HeadSet, LabelSet};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OversampleMode {
    /// Plain shuffled pass over the data.
    None,
    /// Weight `1 / freq(class)` for one head: uniform expected class mix.
    SingleHead(Head),
    /// Weight = mean over heads of `1 / freq(class)`.
    MeanInverse,
}

impl fmt::Display for OversampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OversampleMode::None => f.write_str("none"),
            OversampleMode::SingleHead(h) => write!(f, "single-head:{h}"),
            OversampleMode::MeanInverse => f.write_str("mean-inverse"),
        }
    }
}

impl FromStr for OversampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(OversampleMode::None),
            "mean-inverse" => Ok(OversampleMode::MeanInverse),
            other => match other.strip_prefix("single-head:") {
                Some(h) => Ok(OversampleMode::SingleHead(h.parse()?)),
                None => Err(Error::config(format!(
                    "unknown oversample mode `{other}` (none | mean-inverse | single-head:<head>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for OversampleMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OversampleMode> for String {
    fn from(m: OversampleMode) -> Self {
        m.to_string()
    }
}

fn class_frequencies(labels: &[&LabelSet], head: Head) -> Vec<usize> {
    let mut counts = vec![0; head.num_classes()];
    for l in labels {
        if let Some(v) = l.get(head) {
            counts[usize::from(v)] += 1;
        }
    }
    let labeled: usize = counts.iter().sum();
    if labeled > 0 {
        for (c, &k) in counts.iter().enumerate() {
            if k == 0 {
                log::warn!("{head}: class {c} has no support and is excluded from oversampling");
            }
        }
    }
    counts
}

/// Per-record sampling weights. `heads` restricts the mean-inverse average;
/// records without any relevant label get weight zero.
pub fn sampling_weights(labels: &[&LabelSet], mode: OversampleMode, heads: HeadSet) -> Result<Vec<f64>> {
    let weights = match mode {
        OversampleMode::None => vec![1.0; labels.len()],
        OversampleMode::SingleHead(head) => {
            let freq = class_frequencies(labels, head);
            labels
                .iter()
                .map(|l| l.get(head).map_or(0.0, |v| 1.0 / freq[usize::from(v)] as f64))
                .collect()
        }
        OversampleMode::MeanInverse => {
            let freqs: Vec<(Head, Vec<usize>)> = heads.iter().map(|h| (h, class_frequencies(labels, h))).collect();
            labels
                .iter()
                .map(|l| {
                    let inv: Vec<f64> = freqs
                        .iter()
                        .filter_map(|(h, f)| l.get(*h).map(|v| 1.0 / f[usize::from(v)] as f64))
                        .collect();
                    if inv.is_empty() {
                        0.0
                    } else {
                        inv.iter().sum::<f64>() / inv.len() as f64
                    }
                })
                .collect()
        }
    };
    if !labels.is_empty() && weights.iter().all(|w| *w == 0.0) {
        return Err(Error::data(format!("no record carries a label usable by {mode}")));
    }
    Ok(weights)
}

/// One epoch of indices, `records.len()` long, drawn with replacement
/// according to [`sampling_weights`] (or a shuffle for `None`).
pub fn oversample_indices(
    records: &[FeatureRecord],
    mode: OversampleMode,
    heads: HeadSet,
    rng: &mut SplitMix64,
) -> Result<Vec<usize>> {
    let labels: Vec<&LabelSet> = records.iter().map(|r| &r.labels).collect();
    draw_indices(&labels, mode, heads, rng)
}

pub(crate) fn draw_indices(
    labels: &[&LabelSet],
    mode: OversampleMode,
    heads: HeadSet,
    rng: &mut SplitMix64,
) -> Result<Vec<usize>> {
    if mode == OversampleMode::None {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        rng.shuffle(&mut idx);
        return Ok(idx);
    }
    let weights = sampling_weights(labels, mode, heads)?;
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    Ok((0..labels.len())
        .map(|_| {
            let x = rng.next_f64() * acc;
            cumulative.partition_point(|c| *c <= x).min(last_positive)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motivation_split(pos: usize, neg: usize) -> Vec<LabelSet> {
        (0..pos + neg)
            .map(|i| LabelSet {
                motivation: Some(u8::from(i < pos)),
                ..Default::default()
            })
            .collect()
    }

    #[test]
    fn single_head_balances_ninety_ten() {
        let labels = motivation_split(10, 90);
        let refs: Vec<&LabelSet> = labels.iter().collect();
        let mut rng = SplitMix64::new(5);
        let mut counts = [0usize; 2];
        let draws = 100_000;
        while counts.iter().sum::<usize>() < draws {
            for i in draw_indices(
                &refs,
                OversampleMode::SingleHead(Head::Motivation),
                HeadSet::all(),
                &mut rng,
            )
            .unwrap()
            {
                counts[usize::from(labels[i].motivation.unwrap())] += 1;
            }
        }
        let total = counts.iter().sum::<usize>() as f64;
        for c in counts {
            assert!((c as f64 / total - 0.5).abs() < 0.01, "{counts:?}");
        }
        // chi-square against uniform, 1 dof, critical value 6.635 at p = 0.01
        let expected = total / 2.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 6.635, "chi2 {chi2}");
    }

    #[test]
    fn uniform_labels_give_uniform_weights() {
        let labels: Vec<LabelSet> = (0..12)
            .map(|i| LabelSet::new(i % 3, i % 4, (i + 1) % 4, (i + 2) % 4, i % 2))
            .collect();
        let refs: Vec<&LabelSet> = labels.iter().collect();
        for mode in [OversampleMode::SingleHead(Head::Sentiment), OversampleMode::MeanInverse] {
            let w = sampling_weights(&refs, mode, HeadSet::all()).unwrap();
            assert!(w.iter().all(|x| (x - w[0]).abs() < 1e-15), "{mode}: {w:?}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let labels = motivation_split(3, 20);
        let refs: Vec<&LabelSet> = labels.iter().collect();
        let mode = OversampleMode::MeanInverse;
        let a = draw_indices(&refs, mode, HeadSet::all(), &mut SplitMix64::new(1)).unwrap();
        let b = draw_indices(&refs, mode, HeadSet::all(), &mut SplitMix64::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), labels.len());
    }

    #[test]
    fn unlabeled_records_are_never_drawn() {
        let mut labels = motivation_split(5, 5);
        labels[0].motivation = None;
        let refs: Vec<&LabelSet> = labels.iter().collect();
        let mut rng = SplitMix64::new(2);
        for _ in 0..200 {
            let idx = draw_indices(
                &refs,
                OversampleMode::SingleHead(Head::Motivation),
                HeadSet::all(),
                &mut rng,
            )
            .unwrap();
            assert!(!idx.contains(&0));
        }
        let none: Vec<LabelSet> = vec![LabelSet::default(); 3];
        let refs: Vec<&LabelSet> = none.iter().collect();
        assert!(sampling_weights(&refs, OversampleMode::MeanInverse, HeadSet::all()).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "mean-inverse".parse::<OversampleMode>().unwrap(),
            OversampleMode::MeanInverse
        );
        assert_eq!(
            "single-head:sarcasm".parse::<OversampleMode>().unwrap(),
            OversampleMode::SingleHead(Head::Sarcasm)
        );
        assert!("sometimes".parse::<OversampleMode>().is_err());
    }
}
