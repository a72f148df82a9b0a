//! Mini-batch training with Adam, a triangular cyclic learning rate,
//! oversampled epochs and early stopping on validation weighted F1.

mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{oversample_indices, FeatureRecord, Head, HeadSet, LabelSet, ModalitySet, OversampleMode};
use crate::error::{Error, Result};
use crate::evaluation::head_f1;
use crate::model::{multitask_loss, predict, Batch, HeadWeights, MmmtModel, ModelConfig};
use crate::rng::SplitMix64;
use crate::tensor::Parameterized;

pub use optim::{adam_step, lr_at, AdamConfig, AdamState, CyclicSchedule};

/// Epochs without improvement tolerated before stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Patience {
    Epochs(usize),
    Infinite,
}

impl fmt::Display for Patience {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Patience::Epochs(n) => write!(f, "{n}"),
            Patience::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Patience {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" | "none" => Ok(Patience::Infinite),
            n => n
                .parse()
                .map(Patience::Epochs)
                .map_err(|_| Error::config(format!("train.patience must be an integer or `inf`, got `{n}`"))),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PatienceRepr {
    Count(usize),
    Text(String),
}

impl<'de> Deserialize<'de> for Patience {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match PatienceRepr::deserialize(d)? {
            PatienceRepr::Count(n) => Ok(Patience::Epochs(n)),
            PatienceRepr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for Patience {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Patience::Epochs(n) => s.serialize_u64(*n as u64),
            Patience::Infinite => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Half-cycle length of the learning-rate triangle, in epochs.
    pub lr_step_size_epochs: usize,
    pub adam: AdamConfig,
    pub patience: Patience,
    pub heads: HeadSet,
    pub modalities: ModalitySet,
    pub oversample: OversampleMode,
    pub seed: u64,
    pub loss_weights: HeadWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 256,
            base_lr: 1e-4,
            max_lr: 1e-3,
            lr_step_size_epochs: 5,
            adam: AdamConfig::default(),
            patience: Patience::Epochs(10),
            heads: HeadSet::all(),
            modalities: ModalitySet::all(),
            oversample: OversampleMode::MeanInverse,
            seed: 0,
            loss_weights: HeadWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if self.lr_step_size_epochs == 0 {
            return Err(Error::config("train.lr_step_size_epochs must be at least 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!(
                "train.base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.max_lr >= self.base_lr && self.max_lr.is_finite()) {
            return Err(Error::config(format!(
                "train.max_lr ({}) must be finite and >= base_lr ({})",
                self.max_lr, self.base_lr
            )));
        }
        if self.heads.is_empty() {
            return Err(Error::config("train.heads is empty"));
        }
        if self.modalities.is_empty() {
            return Err(Error::config("train.modalities is empty"));
        }
        self.adam.validate()?;
        self.loss_weights.validate()
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> CyclicSchedule {
        CyclicSchedule {
            base_lr: self.base_lr,
            max_lr: self.max_lr,
            step_size: self.lr_step_size_epochs * steps_per_epoch.max(1),
        }
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr_first: f64,
    pub lr_last: f64,
    pub train_loss: f64,
    pub train_head_loss: BTreeMap<String, f64>,
    pub val_f1: BTreeMap<String, f64>,
    pub val_metric: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric.
    pub model: MmmtModel,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// The log as newline-delimited JSON.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Weighted F1 of every enabled head, as each head is trained.
pub fn validation_f1(
    model: &MmmtModel,
    records: &[FeatureRecord],
    heads: HeadSet,
    modalities: ModalitySet,
    batch_size: usize,
) -> Result<BTreeMap<String, f64>> {
    let preds = predict(&model.infer(records, modalities, batch_size)?);
    let golds: Vec<LabelSet> = records.iter().map(|r| r.labels).collect();
    let mut out = BTreeMap::new();
    for head in heads.iter() {
        if let Some(f1) = head_f1(&preds, &golds, head, model.config().head_classes(head))? {
            out.insert(head.name().to_string(), f1);
        }
    }
    Ok(out)
}

fn check_records(records: &[FeatureRecord], config: &ModelConfig, what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::data(format!("{what} set is empty")));
    }
    let dims = config.feature_dims();
    records.iter().try_for_each(|r| r.validate(&dims))
}

/// Trains a freshly initialized model and returns the best one seen.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_set: &[FeatureRecord],
    val_set: &[FeatureRecord],
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    check_records(train_set, model_config, "training")?;
    check_records(val_set, model_config, "validation")?;

    let mut master = SplitMix64::new(config.seed);
    let mut init_rng = master.fork();
    let mut sample_rng = master.fork();
    let mut dropout_rng = master.fork();

    let mut model = MmmtModel::new(model_config.clone(), &mut init_rng)?;
    model.set_modalities(config.modalities);
    let dims = model.feature_dims();
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let schedule = config.schedule(steps_per_epoch);
    let mut adam = AdamState::new(&model);
    let mut step = 0usize;

    let mut best: Option<(MmmtModel, usize, f64)> = None;
    let mut stale = 0usize;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let order = oversample_indices(train_set, config.oversample, config.heads, &mut sample_rng)?;
        let lr_first = schedule.lr_at(step);
        let mut lr_last = lr_first;
        let mut loss_sum = 0.0;
        let mut head_sums = [0.0; 5];
        let mut head_rows = [0usize; 5];
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&FeatureRecord> = chunk.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<LabelSet> = refs.iter().map(|r| r.labels).collect();
            let batch = Batch::assemble(&refs, config.modalities, &dims)?;
            let (outputs, cache) = model.forward(&batch, config.modalities, true, &mut dropout_rng)?;
            let (report, grads) = multitask_loss(&outputs, &labels, config.heads, &config.loss_weights)?;
            if !report.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, step {step}: {}",
                    report.total
                )));
            }
            model.zero_grads();
            model.backward(&batch, &cache, &grads, false)?;
            lr_last = schedule.lr_at(step);
            adam_step(&mut model, &mut adam, lr_last, &config.adam)?;
            step += 1;

            loss_sum += report.total * refs.len() as f64;
            for head in config.heads.iter() {
                if let Some(l) = report.per_head[head.index()] {
                    let n = labels.iter().filter(|l| l.get(head).is_some()).count();
                    head_sums[head.index()] += l * n as f64;
                    head_rows[head.index()] += n;
                }
            }
        }

        let val_f1 = validation_f1(&model, val_set, config.heads, config.modalities, config.batch_size)?;
        if val_f1.is_empty() {
            return Err(Error::data("validation set has no labels for the enabled heads"));
        }
        let val_metric = val_f1.values().sum::<f64>() / val_f1.len() as f64;
        let improved = best.as_ref().is_none_or(|(_, _, m)| val_metric > *m);
        if improved {
            best = Some((model.clone(), epoch, val_metric));
            stale = 0;
        } else {
            stale += 1;
        }

        let train_head_loss = Head::ALL
            .iter()
            .filter(|h| head_rows[h.index()] > 0)
            .map(|h| (h.name().to_string(), head_sums[h.index()] / head_rows[h.index()] as f64))
            .collect();
        let record = EpochRecord {
            epoch,
            steps: steps_per_epoch,
            lr_first,
            lr_last,
            train_loss: loss_sum / order.len() as f64,
            train_head_loss,
            val_f1,
            val_metric,
            improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val {:.4}{}",
            record.train_loss,
            val_metric,
            if improved { " *" } else { "" }
        );
        log.push(record);

        if let Patience::Epochs(p) = config.patience {
            if stale > p {
                stopped_early = true;
                break;
            }
        }
    }

    let (model, best_epoch, best_metric) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_metric,
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, FeatureDims, SyntheticConfig};

    fn small_model() -> ModelConfig {
        ModelConfig {
            d_image: 12,
            d_clip: 8,
            d_text: 10,
            d_common: 16,
            d_model: 16,
            ..ModelConfig::default()
        }
    }

    fn data(n: usize, seed: u64, sep: f64) -> Vec<FeatureRecord> {
        generate_synthetic(&SyntheticConfig::new(n, seed, sep, FeatureDims::new(12, 8, 10))).unwrap()
    }

    #[test]
    fn patience_parsing_and_serde() {
        assert_eq!("inf".parse::<Patience>().unwrap(), Patience::Infinite);
        assert_eq!("3".parse::<Patience>().unwrap(), Patience::Epochs(3));
        assert!("x".parse::<Patience>().is_err());
        let cfg: TrainConfig = toml::from_str("patience = \"inf\"\nmax_epochs = 7").unwrap();
        assert_eq!(cfg.patience, Patience::Infinite);
        assert_eq!(cfg.max_epochs, 7);
        let cfg: TrainConfig = toml::from_str("patience = 2\nheads = [\"sentiment\"]").unwrap();
        assert_eq!(cfg.patience, Patience::Epochs(2));
        assert_eq!(cfg.heads, HeadSet::of(&[Head::Sentiment]));
        assert!(toml::from_str::<TrainConfig>("learning_rate = 1").is_err());
    }

    #[test]
    fn invalid_train_configs() {
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                max_lr: 1e-5,
                ..Default::default()
            },
            TrainConfig {
                heads: HeadSet::empty(),
                ..Default::default()
            },
            TrainConfig {
                modalities: ModalitySet::empty(),
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn patience_zero_stops_after_first_stale_epoch() {
        // with a zero learning rate nothing improves after epoch 1
        let cfg = TrainConfig {
            base_lr: 1e-300,
            max_lr: 1e-300,
            patience: Patience::Epochs(0),
            max_epochs: 10,
            batch_size: 8,
            ..Default::default()
        };
        let train_set = data(16, 1, 0.5);
        let out = train(&small_model(), &cfg, &train_set, &train_set).unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.stopped_early);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn fixed_seed_gives_identical_runs() {
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 8,
            seed: 4,
            ..Default::default()
        };
        let train_set = data(20, 2, 0.7);
        let val = data(10, 3, 0.7);
        let a = train(&small_model(), &cfg, &train_set, &val).unwrap();
        let b = train(&small_model(), &cfg, &train_set, &val).unwrap();
        assert_eq!(a.log_jsonl().unwrap(), b.log_jsonl().unwrap());
        assert_eq!(a.model, b.model);
        assert_eq!(a.log[0].steps, 3);
    }

    #[test]
    fn returned_model_is_the_best_epoch() {
        let cfg = TrainConfig {
            max_epochs: 8,
            batch_size: 8,
            patience: Patience::Infinite,
            ..Default::default()
        };
        let train_set = data(24, 5, 0.6);
        let val = data(12, 6, 0.6);
        let out = train(&small_model(), &cfg, &train_set, &val).unwrap();
        let best = out.log.iter().map(|r| r.val_metric).fold(f64::MIN, f64::max);
        assert_eq!(out.best_metric, best);
        assert_eq!(out.log[out.best_epoch - 1].val_metric, best);
        let again = validation_f1(&out.model, &val, cfg.heads, cfg.modalities, 8).unwrap();
        let metric = again.values().sum::<f64>() / again.len() as f64;
        assert_eq!(metric, best);
    }

    #[test]
    fn single_small_step_reduces_loss() {
        let cfg = small_model();
        let mut model = MmmtModel::new(cfg.clone(), &mut SplitMix64::new(3)).unwrap();
        let recs = data(8, 7, 0.5);
        let refs: Vec<&FeatureRecord> = recs.iter().collect();
        let labels: Vec<LabelSet> = recs.iter().map(|r| r.labels).collect();
        let batch = Batch::assemble(&refs, ModalitySet::all(), &cfg.feature_dims()).unwrap();
        let loss = |m: &MmmtModel| {
            let (out, _) = m
                .forward(&batch, ModalitySet::all(), false, &mut SplitMix64::new(0))
                .unwrap();
            multitask_loss(&out, &labels, HeadSet::all(), &HeadWeights::default())
                .unwrap()
                .0
                .total
        };
        let before = loss(&model);
        let (out, cache) = model
            .forward(&batch, ModalitySet::all(), false, &mut SplitMix64::new(0))
            .unwrap();
        let (_, grads) = multitask_loss(&out, &labels, HeadSet::all(), &HeadWeights::default()).unwrap();
        model.zero_grads();
        model.backward(&batch, &cache, &grads, false).unwrap();
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &mut state, 1e-6, &AdamConfig::default()).unwrap();
        assert!(loss(&model) < before);
    }

    #[test]
    fn empty_or_mismatched_data_is_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&small_model(), &cfg, &[], &data(2, 1, 0.5)),
            Err(Error::Data(_))
        ));
        let wrong = generate_synthetic(&SyntheticConfig::new(4, 1, 0.5, FeatureDims::new(3, 8, 10))).unwrap();
        assert!(matches!(
            train(&small_model(), &cfg, &wrong, &wrong),
            Err(Error::Data(_))
        ));
    }
}
