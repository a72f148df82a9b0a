//! Run configuration: a TOML file with `[model]` and `[train]` tables,
//! overridden by command-line flags.
//!
//! ```toml
//! [model]
//! d_model = 64
//! heads_per_layer = [8, 8, 16, 16]
//! binary_emotion_heads = false
//!
//! [train]
//! max_epochs = 100
//! batch_size = 256
//! base_lr = 1e-4
//! max_lr = 1e-3
//! lr_step_size_epochs = 5
//! patience = 10          # or "inf"
//! heads = ["sentiment", "humour", "sarcasm", "offensive", "motivation"]
//! modalities = ["image", "clip", "text"]
//! oversample = "mean-inverse"
//! seed = 0
//! ```
//!
//! Feature dims normally come from the data files. If the file sets
//! `d_image`, `d_clip` or `d_text`, they must agree with the data.

use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FeatureDims, HeadSet, ModalitySet, OversampleMode};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{Patience, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// A parsed config plus which feature dims it pinned explicitly.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pinned_dims: [bool; 3],
}

const DIM_KEYS: [&str; 3] = ["d_image", "d_clip", "d_text"];

impl LoadedConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::config(format!("{origin}: {e}")))?;
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("{origin}: {e}")))?;
        let model = table.get("model").and_then(|m| m.as_table());
        let pinned_dims = DIM_KEYS.map(|k| model.is_some_and(|m| m.contains_key(k)));
        Ok(Self { config, pinned_dims })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    /// The model config with dims taken from the data.
    pub fn model_for(&self, data: &FeatureDims, what: &str) -> Result<ModelConfig> {
        let cfg = &self.config.model;
        let explicit = [cfg.d_image, cfg.d_clip, cfg.d_text];
        let actual = [data.image, data.clip, data.text];
        for i in 0..3 {
            if self.pinned_dims[i] && explicit[i] != actual[i] {
                return Err(Error::data(format!(
                    "config sets {} = {}, but {what} has dims {data}",
                    DIM_KEYS[i], explicit[i]
                )));
            }
        }
        Ok(cfg.clone().with_feature_dims(*data))
    }
}

/// Flags that override `[train]` and `[model]` values.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Heads to train, e.g. `sentiment` or `humour,sarcasm` (default all)
    #[arg(long)]
    pub heads: Option<HeadSet>,
    /// Input modalities, e.g. `text` or `image+clip` (default all)
    #[arg(long)]
    pub modalities: Option<ModalitySet>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Early-stopping patience in epochs, or `inf`
    #[arg(long)]
    pub patience: Option<Patience>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub max_lr: Option<f64>,
    #[arg(long)]
    pub lr_step_size_epochs: Option<usize>,
    /// `mean-inverse`, `none`, or `single-head:<head>`
    #[arg(long)]
    pub oversample: Option<OversampleMode>,
    /// Train humour, sarcasm and offensive as two-class heads
    #[arg(long)]
    pub binary_emotion_heads: bool,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        let t = &mut config.train;
        if let Some(v) = self.heads {
            t.heads = v;
        }
        if let Some(v) = self.modalities {
            t.modalities = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.base_lr {
            t.base_lr = v;
        }
        if let Some(v) = self.max_lr {
            t.max_lr = v;
        }
        if let Some(v) = self.lr_step_size_epochs {
            t.lr_step_size_epochs = v;
        }
        if let Some(v) = self.oversample {
            t.oversample = v;
        }
        if self.binary_emotion_heads {
            config.model.binary_emotion_heads = true;
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical JSON of both configs.
pub fn config_digest(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let json = serde_json::to_vec(&RunConfig {
        model: model.clone(),
        train: train.clone(),
    })?;
    Ok(sha256_hex(&json))
}

/// Digest with the modality mask blanked, shared by all runs of an ablation.
pub fn ablation_digest(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let mut train = train.clone();
    train.modalities = ModalitySet::empty();
    config_digest(model, &train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Head, Modality};

    #[test]
    fn empty_config_is_default() {
        let c = LoadedConfig::parse("", "x").unwrap();
        assert_eq!(c.config, RunConfig::default());
    }

    #[test]
    fn values_and_unknown_fields() {
        let c = LoadedConfig::parse(
            "[model]\nd_model = 32\nheads_per_layer = [4, 4]\nlayers = 2\n[train]\npatience = \"inf\"\nheads = [\"sentiment\"]\n",
            "x",
        )
        .unwrap();
        assert_eq!(c.config.model.d_model, 32);
        assert_eq!(c.config.train.patience, Patience::Infinite);
        assert_eq!(c.config.train.heads, HeadSet::of(&[Head::Sentiment]));
        let err = LoadedConfig::parse("[train]\nlearning_rate = 1\n", "cfg.toml").unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(LoadedConfig::parse("[trian]\n", "x").is_err());
    }

    #[test]
    fn pinned_dims_must_match_data() {
        let data = FeatureDims::new(8, 4, 6);
        let free = LoadedConfig::parse("[model]\nd_model = 16\n", "x").unwrap();
        assert_eq!(free.model_for(&data, "train").unwrap().feature_dims(), data);
        let pinned = LoadedConfig::parse("[model]\nd_clip = 512\n", "x").unwrap();
        let err = pinned.model_for(&data, "train").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("d_clip = 512"), "{err}");
        let ok = LoadedConfig::parse("[model]\nd_clip = 4\n", "x").unwrap();
        assert!(ok.model_for(&data, "train").is_ok());
    }

    #[test]
    fn flags_override_file() {
        let mut c = LoadedConfig::parse("[train]\nseed = 3\nmax_epochs = 7\n", "x")
            .unwrap()
            .config;
        let o = Overrides {
            seed: Some(9),
            modalities: Some(ModalitySet::of(&[Modality::Text])),
            binary_emotion_heads: true,
            ..Default::default()
        };
        o.apply(&mut c);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.train.modalities, ModalitySet::of(&[Modality::Text]));
        assert!(c.model.binary_emotion_heads);
    }

    #[test]
    fn ablation_digest_ignores_modalities_only() {
        let m = ModelConfig::default();
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.modalities = ModalitySet::of(&[Modality::Clip]);
        assert_ne!(config_digest(&m, &a).unwrap(), config_digest(&m, &b).unwrap());
        assert_eq!(ablation_digest(&m, &a).unwrap(), ablation_digest(&m, &b).unwrap());
        b.seed = 1;
        assert_ne!(ablation_digest(&m, &a).unwrap(), ablation_digest(&m, &b).unwrap());
    }
}
