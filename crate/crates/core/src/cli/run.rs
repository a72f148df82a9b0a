//! Training runs with their on-disk artifacts, and the modality ablation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::atomic_write;
use super::config::{ablation_digest, config_digest, sha256_hex, LoadedConfig};
use crate::data::{decode_features, FeatureFile, Modality, ModalitySet};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, render_grid, MetricsReport};
use crate::model::{save_checkpoint, ModelConfig};
use crate::training::{train, TrainConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "epochs.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A feature file together with the digest of its bytes.
#[derive(Debug, Clone)]
pub struct Input {
    pub path: PathBuf,
    pub sha256: String,
    pub file: FeatureFile,
}

impl Input {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let file = decode_features(&bytes).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            file,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a training run and check its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub metrics: MetricsReport,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Model config for a train/val pair, which must share dims.
pub fn resolve_model(config: &LoadedConfig, train_in: &Input, val_in: &Input) -> Result<ModelConfig> {
    if train_in.file.dims != val_in.file.dims {
        return Err(Error::data(format!(
            "train file has dims {}, validation file has dims {}",
            train_in.file.dims, val_in.file.dims
        )));
    }
    config.model_for(&train_in.file.dims, &train_in.path.display().to_string())
}

/// Trains, then writes checkpoint, epoch log, validation metrics and
/// manifest into `out_dir`.
pub fn run_training(
    command: &str,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_in: &Input,
    val_in: &Input,
    out_dir: &Path,
) -> Result<RunManifest> {
    model_config.validate()?;
    train_config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let outcome = train(model_config, train_config, &train_in.file.records, &val_in.file.records)?;
    let (_, metrics) = evaluate_model(
        &outcome.model,
        &val_in.file.records,
        outcome.model.modalities(),
        train_config.batch_size,
    )?;

    let artifacts: BTreeMap<String, PathBuf> = [
        ("checkpoint", CHECKPOINT_FILE),
        ("log", LOG_FILE),
        ("metrics", METRICS_FILE),
    ]
    .into_iter()
    .map(|(k, f)| (k.to_string(), out_dir.join(f)))
    .collect();
    save_checkpoint(&outcome.model, &artifacts["checkpoint"])?;
    atomic_write(&artifacts["log"], outcome.log_jsonl()?.as_bytes())?;
    atomic_write(&artifacts["metrics"], &to_json(&metrics)?)?;

    let manifest = RunManifest {
        command: command.to_string(),
        model: model_config.clone(),
        train: train_config.clone(),
        config_digest: config_digest(model_config, train_config)?,
        seed: train_config.seed,
        inputs: [("train", train_in), ("validation", val_in)]
            .into_iter()
            .map(|(role, i)| InputDigest {
                role: role.to_string(),
                path: i.path.clone(),
                sha256: i.sha256.clone(),
            })
            .collect(),
        artifacts,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        metrics,
    };
    atomic_write(&out_dir.join(MANIFEST_FILE), &to_json(&manifest)?)?;
    Ok(manifest)
}

/// Reruns a manifest into `out_dir` after checking its inputs are unchanged.
pub fn reproduce(manifest: &RunManifest, out_dir: &Path) -> Result<RunManifest> {
    let role = |name: &str| {
        manifest
            .inputs
            .iter()
            .find(|i| i.role == name)
            .ok_or_else(|| Error::config(format!("manifest lacks a `{name}` input")))
    };
    let (t, v) = (role("train")?, role("validation")?);
    let train_in = Input::read(&t.path)?;
    let val_in = Input::read(&v.path)?;
    for (want, got) in [(t, &train_in), (v, &val_in)] {
        if want.sha256 != got.sha256 {
            return Err(Error::data(format!(
                "{} changed since the run: sha256 {} != recorded {}",
                want.path.display(),
                got.sha256,
                want.sha256
            )));
        }
    }
    run_training(
        &manifest.command,
        &manifest.model,
        &manifest.train,
        &train_in,
        &val_in,
        out_dir,
    )
}

/// Feature subsets in the order of the published ablation table.
pub const ABLATION_ROWS: [(&str, &[Modality]); 7] = [
    ("text", &[Modality::Text]),
    ("image", &[Modality::Image]),
    ("clip", &[Modality::Clip]),
    ("image+text", &[Modality::Image, Modality::Text]),
    ("clip+image", &[Modality::Clip, Modality::Image]),
    ("clip+text", &[Modality::Clip, Modality::Text]),
    ("image+clip+text", &[Modality::Image, Modality::Clip, Modality::Text]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub features: String,
    pub modalities: ModalitySet,
    pub config_digest: String,
    pub best_epoch: usize,
    pub task_a: Option<f64>,
    pub task_b: Option<f64>,
    pub task_c: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Digest of the config with the modality mask blanked.
    pub config_digest: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"));
        let header: Vec<String> = ["Task A", "Task B", "Task C", "Mean"].map(String::from).to_vec();
        let rows: Vec<(String, Vec<String>)> = self
            .rows
            .iter()
            .map(|r| {
                (
                    r.features.clone(),
                    vec![cell(r.task_a), cell(r.task_b), cell(r.task_c), cell(r.mean)],
                )
            })
            .collect();
        format!(
            "Modality ablation (validation)\n{}config digest {}\n",
            render_grid("Features", &header, &rows),
            self.config_digest
        )
    }
}

/// Trains one model per feature subset with otherwise identical settings.
/// Each run writes its artifacts under `out_dir/<features>/`.
pub fn run_ablation(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_in: &Input,
    val_in: &Input,
    out_dir: &Path,
    parallel: bool,
) -> Result<AblationReport> {
    let shared = ablation_digest(model_config, train_config)?;
    let one = |features: &str, mods: &[Modality]| -> Result<AblationRow> {
        let mut cfg = train_config.clone();
        cfg.modalities = ModalitySet::of(mods);
        log::info!("ablation run `{features}`");
        let m = run_training("ablate", model_config, &cfg, train_in, val_in, &out_dir.join(features))?;
        Ok(AblationRow {
            features: features.to_string(),
            modalities: cfg.modalities,
            config_digest: ablation_digest(&m.model, &m.train)?,
            best_epoch: m.best_epoch,
            task_a: m.metrics.task_a,
            task_b: m.metrics.task_b,
            task_c: m.metrics.task_c,
            mean: m.metrics.mean,
        })
    };
    let results: Vec<Result<AblationRow>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = ABLATION_ROWS.iter().map(|(f, m)| s.spawn(move || one(f, m))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::data("ablation worker panicked")))
                })
                .collect()
        })
    } else {
        ABLATION_ROWS.iter().map(|(f, m)| one(f, m)).collect()
    };
    let report = AblationReport {
        config_digest: shared,
        rows: results.into_iter().collect::<Result<_>>()?,
    };
    atomic_write(&out_dir.join("ablation.json"), &to_json(&report)?)?;
    atomic_write(&out_dir.join("ablation.txt"), report.render().as_bytes())?;
    Ok(report)
}
