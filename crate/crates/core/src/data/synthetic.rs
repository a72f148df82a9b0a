//! Deterministic synthetic feature data.
//!
//! Every (modality, head, class) triple owns a Gaussian anchor vector drawn
//! from `anchor_seed`. A record's modality vector is the normalized sum of
//! the anchors of its five labels, blended with unit Gaussian noise:
//!
//! ```text
//! v = separability * sum_h anchor[m][h][label_h] / sqrt(5) + (1 - separability) * noise
//! ```
//!
//! Splits meant to be learned together (train / validation) must share the
//! anchor seed and differ in `seed`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FeatureDims, FeatureRecord, Head, LabelSet, Modality, Split};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Unnormalized class weights for each head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    per_head: Vec<Vec<f64>>,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            per_head: Head::ALL.iter().map(|h| vec![1.0; h.num_classes()]).collect(),
        }
    }

    /// Weights proportional to the published split counts.
    pub fn table1(split: Split) -> Self {
        let stats = super::table1(split);
        Self {
            per_head: Head::ALL
                .iter()
                .map(|h| stats.counts(*h).iter().map(|&c| c as f64).collect())
                .collect(),
        }
    }

    pub fn get(&self, head: Head) -> &[f64] {
        &self.per_head[head.index()]
    }

    pub fn set(&mut self, head: Head, weights: Vec<f64>) -> Result<()> {
        if weights.len() != head.num_classes() {
            return Err(Error::config(format!(
                "{head} needs {} weights, got {}",
                head.num_classes(),
                weights.len()
            )));
        }
        self.per_head[head.index()] = weights;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for head in Head::ALL {
            let w = self.get(head);
            let total: f64 = w.iter().sum();
            if w.len() != head.num_classes()
                || w.iter().any(|v| !v.is_finite() || *v < 0.0)
                || !(total > 0.0 && total.is_finite())
            {
                return Err(Error::config(format!("{head} weights {w:?} are not normalizable")));
            }
        }
        Ok(())
    }
}

/// Parses `uniform`, `table1-train`, `table1-val`, `table1-test`, or
/// `head=w0,w1,...;head=...` (unlisted heads stay uniform).
impl FromStr for ClassWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(Self::uniform());
        }
        if let Some(split) = s.strip_prefix("table1-") {
            return Ok(Self::table1(split.parse()?));
        }
        let mut weights = Self::uniform();
        for part in s.split(';').filter(|p| !p.trim().is_empty()) {
            let (head, values) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("weights entry `{part}` lacks `=`")))?;
            let head: Head = head.parse()?;
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::config(format!("weight `{v}` is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            weights.set(head, values)?;
        }
        weights.validate()?;
        Ok(weights)
    }
}

/// How labels are drawn from the class weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSampling {
    /// Independent categorical draw per record and head.
    Multinomial,
    /// Largest-remainder quotas per head, then a seeded shuffle; marginals
    /// are exact.
    Quota,
}

impl FromStr for LabelSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(LabelSampling::Multinomial),
            "quota" => Ok(LabelSampling::Quota),
            other => Err(Error::config(format!("unknown sampling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub seed: u64,
    pub anchor_seed: u64,
    pub separability: f64,
    pub weights: ClassWeights,
    pub sampling: LabelSampling,
    pub dims: FeatureDims,
}

impl SyntheticConfig {
    pub fn new(n: usize, seed: u64, separability: f64, dims: FeatureDims) -> Self {
        Self {
            n,
            seed,
            anchor_seed: 0,
            separability,
            weights: ClassWeights::uniform(),
            sampling: LabelSampling::Multinomial,
            dims,
        }
    }
}

/// Class-conditional anchor vectors, indexed by modality, head and class.
///
/// Each (modality, head) pair owns one Gaussian direction `u`, and class `c`
/// of a `K`-class head sits at `(2c / (K - 1) - 1) * u`. Classes are thus
/// evenly spaced along a line in rank order, matching the ordinal labels.
#[derive(Debug, Clone)]
pub struct Anchors {
    vectors: Vec<Vec<Vec<Vec<f64>>>>,
    directions: Vec<Vec<Vec<f64>>>,
}

impl Anchors {
    pub fn new(anchor_seed: u64, dims: &FeatureDims) -> Self {
        let mut rng = SplitMix64::new(anchor_seed);
        let directions: Vec<Vec<Vec<f64>>> = Modality::ALL
            .iter()
            .map(|m| {
                Head::ALL
                    .iter()
                    .map(|_| (0..dims.get(*m)).map(|_| rng.next_gaussian()).collect())
                    .collect()
            })
            .collect();
        let vectors = directions
            .iter()
            .map(|per_head| {
                Head::ALL
                    .iter()
                    .zip(per_head)
                    .map(|(h, u)| {
                        (0..h.num_classes())
                            .map(|c| {
                                let t = Self::position(*h, c);
                                u.iter().map(|x| t * x).collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { vectors, directions }
    }

    /// Coordinate of `class` along its head's direction, in `[-1, 1]`.
    pub fn position(head: Head, class: usize) -> f64 {
        2.0 * class as f64 / (head.num_classes() - 1) as f64 - 1.0
    }

    pub fn direction(&self, modality: Modality, head: Head) -> &[f64] {
        &self.directions[modality.index()][head.index()]
    }

    pub fn get(&self, modality: Modality, head: Head, class: usize) -> &[f64] {
        &self.vectors[modality.index()][head.index()][class]
    }
}

fn draw_categorical(rng: &mut SplitMix64, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.next_f64() * total;
    for (c, w) in weights.iter().enumerate() {
        if x < *w {
            return c;
        }
        x -= w;
    }
    // rounding at the upper edge lands on the last class with weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Largest-remainder apportionment of `n` items.
fn quota_counts(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<FeatureRecord>> {
    if cfg.n == 0 {
        return Err(Error::config("synthetic split needs n >= 1"));
    }
    if !(0.0..=1.0).contains(&cfg.separability) {
        return Err(Error::config(format!(
            "separability must lie in [0, 1], got {}",
            cfg.separability
        )));
    }
    cfg.weights.validate()?;

    let mut rng = SplitMix64::new(cfg.seed);
    let mut labels = vec![LabelSet::default(); cfg.n];
    match cfg.sampling {
        LabelSampling::Multinomial => {
            for l in labels.iter_mut() {
                for head in Head::ALL {
                    let c = draw_categorical(&mut rng, cfg.weights.get(head));
                    l.set(head, Some(c as u8));
                }
            }
        }
        LabelSampling::Quota => {
            for head in Head::ALL {
                let mut column: Vec<u8> = quota_counts(cfg.n, cfg.weights.get(head))
                    .iter()
                    .enumerate()
                    .flat_map(|(c, &k)| std::iter::repeat_n(c as u8, k))
                    .collect();
                rng.shuffle(&mut column);
                for (l, v) in labels.iter_mut().zip(column) {
                    l.set(head, Some(v));
                }
            }
        }
    }

    let anchors = Anchors::new(cfg.anchor_seed, &cfg.dims);
    let norm = 1.0 / (Head::ALL.len() as f64).sqrt();
    let sep = cfg.separability;
    let records = labels
        .into_iter()
        .enumerate()
        .map(|(i, labels)| {
            let mut rec = FeatureRecord {
                id: format!("syn{}_{i:06}", cfg.seed),
                labels,
                ..Default::default()
            };
            for m in Modality::ALL {
                let d = cfg.dims.get(m);
                let mut v = vec![0.0f64; d];
                for head in Head::ALL {
                    let class = usize::from(labels.get(head).unwrap());
                    for (x, a) in v.iter_mut().zip(anchors.get(m, head, class)) {
                        *x += a;
                    }
                }
                let v = v
                    .into_iter()
                    .map(|a| (sep * a * norm + (1.0 - sep) * rng.next_gaussian()) as f32)
                    .collect();
                *rec.vector_mut(m) = Some(v);
            }
            rec
        })
        .collect();
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_stats, encode_features, table1};

    fn small_dims() -> FeatureDims {
        FeatureDims::new(48, 32, 40)
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SyntheticConfig::new(100, 7, 0.5, small_dims());
        let a = encode_features(&generate_synthetic(&cfg).unwrap(), &cfg.dims).unwrap();
        let b = encode_features(&generate_synthetic(&cfg).unwrap(), &cfg.dims).unwrap();
        assert_eq!(a, b);
        let other = SyntheticConfig { seed: 8, ..cfg.clone() };
        let c = encode_features(&generate_synthetic(&other).unwrap(), &cfg.dims).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fully_separable_data_is_solved_by_anchor_matching() {
        let cfg = SyntheticConfig::new(64, 3, 1.0, FeatureDims::default());
        let records = generate_synthetic(&cfg).unwrap();
        let anchors = Anchors::new(cfg.anchor_seed, &cfg.dims);
        let dot = |a: &[f32], b: &[f64]| a.iter().zip(b).map(|(x, y)| f64::from(*x) * y).sum::<f64>();
        for rec in &records {
            for head in Head::ALL {
                // projection onto the head's directions, scaled to class units
                let (num, den) = Modality::ALL.iter().fold((0.0, 0.0), |(n, d), m| {
                    let u = anchors.direction(*m, head);
                    (
                        n + dot(rec.vector(*m).unwrap(), u),
                        d + u.iter().map(|x| x * x).sum::<f64>(),
                    )
                });
                let t = num / den * (Head::ALL.len() as f64).sqrt();
                let predicted = (0..head.num_classes())
                    .min_by(|&a, &b| {
                        let da = (Anchors::position(head, a) - t).abs();
                        let db = (Anchors::position(head, b) - t).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                assert_eq!(Some(predicted as u8), rec.labels.get(head), "{} {head}", rec.id);
            }
        }
    }

    #[test]
    fn multinomial_sampling_matches_table1_proportions() {
        let mut cfg = SyntheticConfig::new(7000, 11, 0.0, FeatureDims::new(1, 1, 1));
        cfg.weights = ClassWeights::table1(Split::Train);
        let stats = compute_stats(generate_synthetic(&cfg).unwrap().iter().map(|r| &r.labels));
        for (got, want) in stats.counts(Head::Sentiment).iter().zip([973.0, 4510.0, 1517.0]) {
            let share = *got as f64 / 7000.0;
            assert!((share - want / 7000.0).abs() < 0.02, "{got} vs {want}");
        }
    }

    #[test]
    fn quota_sampling_reproduces_table1_exactly() {
        let mut cfg = SyntheticConfig::new(7000, 11, 0.0, FeatureDims::new(1, 1, 1));
        cfg.weights = ClassWeights::table1(Split::Train);
        cfg.sampling = LabelSampling::Quota;
        let stats = compute_stats(generate_synthetic(&cfg).unwrap().iter().map(|r| &r.labels));
        assert_eq!(stats, table1(Split::Train));
        assert_eq!(stats.counts(Head::Sentiment), &[973, 4510, 1517]);
        assert_eq!(stats.counts(Head::Motivation), &[6714, 286]);
    }

    #[test]
    fn quota_counts_largest_remainder() {
        assert_eq!(quota_counts(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(quota_counts(7, &[0.0, 1.0]), vec![0, 7]);
    }

    #[test]
    fn weight_parsing() {
        let w: ClassWeights = "motivation=9,1".parse().unwrap();
        assert_eq!(w.get(Head::Motivation), &[9.0, 1.0]);
        assert_eq!(w.get(Head::Sentiment), &[1.0, 1.0, 1.0]);
        assert!("motivation=0,0".parse::<ClassWeights>().is_err());
        assert!("motivation=1,2,3".parse::<ClassWeights>().is_err());
        assert!("sentiment=-1,2,3".parse::<ClassWeights>().is_err());
        assert_eq!(
            "table1-val".parse::<ClassWeights>().unwrap(),
            ClassWeights::table1(Split::Validation)
        );
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SyntheticConfig::new(0, 1, 0.5, small_dims());
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SyntheticConfig::new(4, 1, 1.5, small_dims());
        assert!(generate_synthetic(&cfg).is_err());
    }
}
