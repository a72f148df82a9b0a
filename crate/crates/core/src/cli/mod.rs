//! The `mmmt` command line.
//!
//! Exit codes: 0 success, 1 runtime or data failure (including a failed
//! check), 2 usage or configuration error.

pub mod config;
pub mod run;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    compute_stats, generate_synthetic, read_manifest, table1, table1_manifest, write_feature_file, write_manifest,
    ClassWeights, FeatureDims, LabelSampling, LabelSet, ManifestRow, ModalitySet, Split, SplitStats, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_model, evaluate_predictions, reference_table, render_comparison, MetricsReport, TableId,
};
use crate::gradcheck::{check_model, Selection};
use crate::model::{load_checkpoint, predict, MmmtModel};
use config::{LoadedConfig, Overrides};
use run::{resolve_model, run_ablation, run_training, Input, RunManifest};

/// Writes to a sibling temp file, then renames over `path`, so readers
/// never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "mmmt", version, about = "Multi-modal multi-task meme affect classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic feature file
    Gen(GenArgs),
    /// Train one model
    Train(TrainArgs),
    /// Train one model per non-empty modality subset
    Ablate(AblateArgs),
    /// Score a checkpoint or a prediction CSV against a labeled feature file
    Eval(EvalArgs),
    /// Write per-record predictions as CSV
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients of the full loss
    Gradcheck(GradcheckArgs),
    /// Label counts of a feature file or label manifest
    Stats(StatsArgs),
    /// Write a label manifest with the published split counts
    Table1(Table1Args),
    /// Rerun a training manifest and compare its metrics
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the class anchors; keep it fixed across splits
    #[arg(long, default_value_t = 0)]
    pub anchor_seed: u64,
    /// 1 = pure class anchors, 0 = pure noise
    #[arg(long, default_value_t = 1.0)]
    pub separability: f64,
    /// `uniform`, `table1-train|validation|test`, or `head=w0,w1;...`
    #[arg(long, default_value = "uniform")]
    pub weights: ClassWeights,
    /// `multinomial` or `quota`; defaults to quota for the table1 presets
    #[arg(long)]
    pub sampling: Option<LabelSampling>,
    /// `image,clip,text`
    #[arg(long, default_value = "1792,512,768")]
    pub dims: FeatureDims,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with `[model]` and `[train]` tables
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: TrainArgs,
    /// Train the seven runs concurrently
    #[arg(long)]
    pub parallel: bool,
    /// Also print the published ablation table
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Prediction CSV (`id` plus five label columns) instead of a checkpoint
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Labeled feature file
    #[arg(long)]
    pub data: PathBuf,
    /// Inference modalities; defaults to those the checkpoint was trained on
    #[arg(long)]
    pub modalities: Option<ModalitySet>,
    /// With --predictions: emotion columns hold binary labels, so Task C
    /// is not scored
    #[arg(long)]
    pub binary_emotions: bool,
    /// Reference table to compare against: table2, table3, table5, table7
    #[arg(long)]
    pub compare: Vec<TableId>,
    /// Print the report as JSON
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report here
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub modalities: Option<ModalitySet>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// TOML config; only `[model]` is used
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Check every parameter element instead of a sample per tensor
    #[arg(long)]
    pub full: bool,
    /// Elements sampled per parameter tensor
    #[arg(long, default_value_t = 32)]
    pub per_tensor: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Feature file or CSV label manifest (by extension `.csv`)
    pub input: PathBuf,
    /// Fail unless counts equal a published split: table1-train|validation|test
    #[arg(long)]
    pub expect: Option<String>,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long)]
    pub split: Split,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_usage() {
        2
    } else {
        1
    }
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Table1(a) => cmd_table1(&a),
        Command::Reproduce(a) => cmd_reproduce(&a),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let preset =
        a.weights != ClassWeights::uniform() && Split::ALL.iter().any(|s| a.weights == ClassWeights::table1(*s));
    let cfg = SyntheticConfig {
        n: a.n as usize,
        seed: a.seed,
        anchor_seed: a.anchor_seed,
        separability: a.separability,
        weights: a.weights.clone(),
        sampling: a.sampling.unwrap_or(if preset {
            LabelSampling::Quota
        } else {
            LabelSampling::Multinomial
        }),
        dims: a.dims,
    };
    let records = generate_synthetic(&cfg)?;
    write_feature_file(&records, &a.dims, &a.out)?;
    let digest = config::sha256_hex(&std::fs::read(&a.out)?);
    emit(&format!(
        "wrote {} records ({}) to {}\nsha256 {digest}\n",
        records.len(),
        a.dims,
        a.out.display()
    ))?;
    Ok(0)
}

fn load_run(a: &TrainArgs) -> Result<(LoadedConfig, Input, Input)> {
    let mut loaded = LoadedConfig::load(a.config.as_deref())?;
    a.overrides.apply(&mut loaded.config);
    loaded.config.train.validate()?;
    let train_in = Input::read(&a.train)?;
    let val_in = Input::read(&a.val)?;
    Ok((loaded, train_in, val_in))
}

pub fn render_report(report: &MetricsReport) -> String {
    let rows = [
        ("sentiment", report.sentiment),
        ("humour (binary)", report.humour_binary),
        ("humour (intensity)", report.humour_intensity),
        ("sarcasm (binary)", report.sarcasm_binary),
        ("sarcasm (intensity)", report.sarcasm_intensity),
        ("offensive (binary)", report.offensive_binary),
        ("offensive (intensity)", report.offensive_intensity),
        ("motivation", report.motivation),
        ("Task A", report.task_a),
        ("Task B", report.task_b),
        ("Task C", report.task_c),
        ("Mean", report.mean),
    ];
    let mut out = format!("records {}\n", report.records);
    for (name, v) in rows {
        let _ = writeln!(
            out,
            "{name:<22} {}",
            v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"))
        );
    }
    out
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let (loaded, train_in, val_in) = load_run(a)?;
    let model = resolve_model(&loaded, &train_in, &val_in)?;
    let manifest = run_training("train", &model, &loaded.config.train, &train_in, &val_in, &a.out_dir)?;
    emit(&format!(
        "best epoch {} of {}{}\n{}wrote {}\n",
        manifest.best_epoch,
        loaded.config.train.max_epochs,
        if manifest.stopped_early { " (stopped early)" } else { "" },
        render_report(&manifest.metrics),
        a.out_dir.display()
    ))?;
    Ok(0)
}

fn cmd_ablate(a: &AblateArgs) -> Result<i32> {
    let (loaded, train_in, val_in) = load_run(&a.run)?;
    let model = resolve_model(&loaded, &train_in, &val_in)?;
    let report = run_ablation(
        &model,
        &loaded.config.train,
        &train_in,
        &val_in,
        &a.run.out_dir,
        a.parallel,
    )?;
    let mut text = report.render();
    if a.compare {
        let reference = reference_table(TableId::Ablation);
        let header: Vec<String> = reference.columns.iter().map(|c| c.to_string()).collect();
        let rows: Vec<(String, Vec<String>)> = reference
            .rows
            .iter()
            .map(|(l, v)| {
                (
                    l.to_string(),
                    v.iter()
                        .map(|x| x.map_or("N/A".into(), |x| format!("{x:.4}")))
                        .collect(),
                )
            })
            .collect();
        let _ = write!(
            text,
            "\n{} [{}]\n{}",
            reference.title,
            reference.id.key(),
            crate::evaluation::render_grid(reference.corner, &header, &rows)
        );
    }
    emit(&text)?;
    Ok(0)
}

fn checkpoint_for(path: &Path, data: &Input) -> Result<MmmtModel> {
    let model = load_checkpoint(path)?;
    if model.feature_dims() != data.file.dims {
        return Err(Error::data(format!(
            "checkpoint {} expects dims {}, but {} has dims {}",
            path.display(),
            model.feature_dims(),
            data.path.display(),
            data.file.dims
        )));
    }
    Ok(model)
}

fn read_predictions(path: &Path, data: &Input) -> Result<Vec<LabelSet>> {
    let rows = read_manifest(path)?;
    let mut by_id: HashMap<&str, LabelSet> = HashMap::with_capacity(rows.len());
    for r in &rows {
        if by_id.insert(&r.id, r.labels).is_some() {
            return Err(Error::data(format!("{}: duplicate id `{}`", path.display(), r.id)));
        }
    }
    data.file
        .records
        .iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .copied()
                .ok_or_else(|| Error::data(format!("{} has no prediction for `{}`", path.display(), r.id)))
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    if a.batch_size == 0 {
        return Err(Error::config("--batch-size must be at least 1"));
    }
    let data = Input::read(&a.data)?;
    let report = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let model = checkpoint_for(ckpt, &data)?;
            let mask = a.modalities.unwrap_or(model.modalities());
            evaluate_model(&model, &data.file.records, mask, a.batch_size)?.1
        }
        (None, Some(preds)) => {
            let preds = read_predictions(preds, &data)?;
            let golds: Vec<LabelSet> = data.file.records.iter().map(|r| r.labels).collect();
            evaluate_predictions(&preds, &golds, a.binary_emotions)?
        }
        (None, None) => return Err(Error::config("eval needs --checkpoint or --predictions")),
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(out) = &a.out {
        atomic_write(out, json.as_bytes())?;
    }
    let mut text = if a.json { json } else { render_report(&report) };
    for id in &a.compare {
        let _ = write!(text, "\n{}", render_comparison(&reference_table(*id), &report));
    }
    emit(&text)?;
    Ok(0)
}

fn cmd_predict(a: &PredictArgs) -> Result<i32> {
    if a.batch_size == 0 {
        return Err(Error::config("--batch-size must be at least 1"));
    }
    let data = Input::read(&a.data)?;
    let model = checkpoint_for(&a.checkpoint, &data)?;
    let mask = a.modalities.unwrap_or(model.modalities());
    let preds = predict(&model.infer(&data.file.records, mask, a.batch_size)?);
    let rows: Vec<ManifestRow> = data
        .file
        .records
        .iter()
        .zip(preds)
        .map(|(r, labels)| ManifestRow {
            id: r.id.clone(),
            labels,
        })
        .collect();
    write_manifest(&rows, &a.out)?;
    emit(&format!("wrote {} predictions to {}\n", rows.len(), a.out.display()))?;
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    if a.batch == 0 || a.eps.is_nan() || a.eps <= 0.0 {
        return Err(Error::config("--batch must be >= 1 and --eps positive"));
    }
    let model = LoadedConfig::load(a.config.as_deref())?.config.model;
    model.validate()?;
    let selection = if a.full {
        Selection::All
    } else {
        Selection::Sampled {
            per_tensor: a.per_tensor.max(1),
            seed: a.seed,
        }
    };
    let report = check_model(&model, a.batch, a.seed, a.eps, selection)?;
    let mut text = format!(
        "checked {} of {} parameters, max relative error {:.3e}\n",
        report.checked,
        model.parameter_count(),
        report.max_rel_error
    );
    if let Some(w) = &report.worst {
        let _ = writeln!(
            text,
            "worst: {}[{}] analytic {:.6e} numeric {:.6e}",
            w.param, w.index, w.analytic, w.numeric
        );
    }
    let pass = report.max_rel_error < a.tolerance;
    let _ = writeln!(text, "{}", if pass { "ok" } else { "FAILED" });
    emit(&text)?;
    Ok(if pass { 0 } else { 1 })
}

fn cmd_stats(a: &StatsArgs) -> Result<i32> {
    let is_csv = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let stats: SplitStats = if is_csv {
        let rows = read_manifest(&a.input)?;
        compute_stats(rows.iter().map(|r| &r.labels))
    } else {
        let data = Input::read(&a.input)?;
        compute_stats(data.file.records.iter().map(|r| &r.labels))
    };
    let mut text = stats.to_string();
    let mut code = 0;
    if let Some(expect) = &a.expect {
        let split: Split = expect
            .strip_prefix("table1-")
            .ok_or_else(|| Error::config(format!("--expect `{expect}` must be table1-<split>")))?
            .parse()?;
        let diffs = stats.differences(&table1(split));
        if diffs.is_empty() {
            let _ = writeln!(text, "matches table1-{}", split.name());
        } else {
            for (head, class, got, want) in diffs {
                let _ = writeln!(text, "mismatch {head} class {class}: {got} != {want}");
            }
            code = 1;
        }
    }
    emit(&text)?;
    Ok(code)
}

fn cmd_table1(a: &Table1Args) -> Result<i32> {
    let rows = table1_manifest(a.split, a.seed);
    write_manifest(&rows, &a.out)?;
    emit(&format!("wrote {} rows to {}\n", rows.len(), a.out.display()))?;
    Ok(0)
}

fn cmd_reproduce(a: &ReproduceArgs) -> Result<i32> {
    let recorded = RunManifest::read(&a.manifest)?;
    let rerun = run::reproduce(&recorded, &a.out_dir)?;
    let same = rerun.metrics == recorded.metrics && rerun.best_epoch == recorded.best_epoch;
    emit(&format!(
        "{}{}\n",
        render_report(&rerun.metrics),
        if same {
            "reproduced"
        } else {
            "metrics differ from the manifest"
        }
    ))?;
    Ok(if same { 0 } else { 1 })
}
