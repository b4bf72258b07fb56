//! Subcommands of the `dwiqa` binary.
//!
//! Every command reads and writes under one data root (`--data-dir`, or
//! `DWIQA_DATA_DIR`) and records a run manifest next to its outputs.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dwiqa_classifier::arch::{ArchSpec, Family};
use dwiqa_classifier::checkpoint::{Checkpoint, CheckpointKind};
use dwiqa_classifier::explain::ThresholdMode;
use dwiqa_classifier::train::{train, TrainConfig};
use dwiqa_core::codec::{read_labels, read_manifest, write_manifest};
use dwiqa_core::dataset::{stratified_case_split, TaskMode, TaskSpec};
use dwiqa_core::metrics::CiMethod;
use dwiqa_core::phantom::GT_READER;
use dwiqa_core::preprocess::PreprocessConfig;
use dwiqa_core::{Artifact, ArtifactLabel, BoxScore, SliceRecord, Subset};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agreement::{box_score_agreement, label_agreement};
use crate::manifest::{sha256_bytes, sha256_file, RunManifest, MANIFEST_FILE};
use crate::pipeline::*;

#[derive(Debug, Parser)]
#[command(name = "dwiqa", version, about = "Artifact quality assessment for breast DWI")]
pub struct Cli {
    /// Data root holding cases, slices, labels and run outputs.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom cohort with ground-truth labels.
    Phantom(PhantomArgs),
    /// Mask, crop and slice every case.
    Preprocess(PreprocessArgs),
    /// Case-level stratified train/val/test split.
    Split(SplitArgs),
    /// Train one architecture on one task.
    Train(TrainArgs),
    /// Pick the run with the highest validation AUROC.
    Select(SelectArgs),
    /// Predict slice classes with a checkpoint.
    Infer(InferArgs),
    /// Grad-CAM heatmaps, boxes and overlays.
    Explain(ExplainArgs),
    /// Score predictions against labels.
    Evaluate(EvaluateArgs),
    /// Cohen's kappa between two readers.
    Agreement(AgreementArgs),
    /// Run the review HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with a cohort configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// TOML file with preprocessing parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    /// hyper or hypo.
    #[arg(long)]
    pub artifact: Artifact,
    /// binary or multiclass.
    #[arg(long, default_value = "binary", value_parser = parse_mode)]
    pub mode: TaskMode,
}

impl TaskArgs {
    fn spec(&self) -> TaskSpec {
        TaskSpec::new(self.artifact, self.mode)
    }

    fn tag(&self) -> String {
        format!("{}_{}", self.artifact, mode_name(self.mode))
    }
}

fn parse_mode(s: &str) -> Result<TaskMode, String> {
    match s {
        "binary" => Ok(TaskMode::Binary),
        "multiclass" => Ok(TaskMode::Multiclass),
        other => Err(format!("expected binary or multiclass, got {other:?}")),
    }
}

fn mode_name(m: TaskMode) -> &'static str {
    match m {
        TaskMode::Binary => "binary",
        TaskMode::Multiclass => "multiclass",
    }
}

#[derive(Debug, Clone, Args)]
pub struct LabelArgs {
    /// Label CSV; defaults to the phantom ground truth.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = GT_READER)]
    pub reader: String,
}

impl LabelArgs {
    fn path(&self, layout: &Layout) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| layout.ground_truth_labels())
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, num_args = 3, value_delimiter = ',', default_values_t = [0.7, 0.15, 0.15])]
    pub fractions: Vec<f64>,
    /// Output file; defaults to `splits/<artifact>_<mode>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long, default_value = "mini_dense")]
    pub arch: Family,
    /// Split manifest; defaults to `splits/<artifact>_<mode>.json`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// TOML file with a training configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate; defaults to the task's reference rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub min_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Output directory; defaults to `runs/<artifact>_<mode>_<arch>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Run directories, each holding `val_metrics.json`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Where to write the selection; defaults to `selected.json` beside the runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SubsetArgs {
    /// Split manifest restricting the slices.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Subset of the split to use: train, val, test or all.
    #[arg(long, default_value = "test")]
    pub subset: String,
}

impl SubsetArgs {
    fn select(&self, records: Vec<SliceRecord>) -> Result<Vec<SliceRecord>> {
        if self.subset == "all" {
            return Ok(records);
        }
        let subset: Subset = self.subset.parse()?;
        let path = self.split.as_ref().context("--split is required unless --subset all")?;
        let split = read_manifest(path)?;
        Ok(records
            .into_iter()
            .filter(|r| split.subset_of(&r.case_id) == Some(subset))
            .collect())
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub subset: SubsetArgs,
    /// Output directory for `predictions.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub subset: SubsetArgs,
    /// Heatmap threshold in (0, 1).
    #[arg(long, default_value_t = dwiqa_classifier::explain::DEFAULT_THRESHOLD)]
    pub threshold: f32,
    /// Treat the threshold as a pixel fraction instead of a value.
    #[arg(long)]
    pub quantile: bool,
    #[arg(long, default_value_t = dwiqa_classifier::explain::DEFAULT_MIN_AREA)]
    pub min_area: usize,
    /// Explain this class instead of the predicted one.
    #[arg(long)]
    pub class: Option<usize>,
    /// Only explain slices predicted positive (class > 0).
    #[arg(long)]
    pub positives_only: bool,
    /// Output directory; defaults to `explanations`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Output directory for `metrics.json`; defaults to the predictions' directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// Label CSVs; rows from all files are pooled.
    #[arg(long, required = true)]
    pub labels: Vec<PathBuf>,
    /// Box-score CSVs.
    #[arg(long)]
    pub box_scores: Vec<PathBuf>,
    #[arg(long)]
    pub reader_a: String,
    #[arg(long)]
    pub reader_b: String,
    /// Confidence interval: bootstrap or asymptotic.
    #[arg(long, default_value = "bootstrap")]
    pub ci: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; defaults to `agreement/<a>_<b>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// Path relative to the data root when it lies beneath it.
fn rel(layout: &Layout, p: &Path) -> String {
    p.strip_prefix(&layout.root).unwrap_or(p).to_string_lossy().into_owned()
}

/// Hash over every slice pack, keyed by case.
fn slices_hash(layout: &Layout) -> Result<String> {
    let mut acc = String::new();
    for case in layout.sliced_case_ids()? {
        acc.push_str(&format!("{case}:{}\n", sha256_file(&layout.slice_pack(&case))?));
    }
    Ok(sha256_bytes(acc.as_bytes()))
}

fn checkpoint_name(kind: CheckpointKind) -> String {
    format!("{}.ckpt", kind.name())
}

pub fn run(cli: Cli) -> Result<()> {
    let layout = Layout::new(&cli.data_dir);
    match cli.command {
        Command::Phantom(a) => phantom(&layout, a),
        Command::Preprocess(a) => preprocess(&layout, a),
        Command::Split(a) => split(&layout, a),
        Command::Train(a) => train_cmd(&layout, a),
        Command::Select(a) => select(&layout, a),
        Command::Infer(a) => infer(&layout, a),
        Command::Explain(a) => explain(&layout, a),
        Command::Evaluate(a) => evaluate(&layout, a),
        Command::Agreement(a) => agreement(&layout, a),
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(layout, SocketAddr::new(a.host, a.port)))
        }
    }
}

fn phantom(layout: &Layout, a: PhantomArgs) -> Result<()> {
    let mut cfg: CohortConfig = read_toml(a.config.as_deref())?;
    if let Some(n) = a.cases {
        cfg.cases = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let truths = generate_cohort(layout, &cfg)?;
    let mut m = RunManifest::new("phantom", &cfg)?;
    m.seed("cohort", cfg.seed)
        .output("labels", rel(layout, &layout.ground_truth_labels()))
        .output("cases", "cases");
    m.finalize().write(&layout.root.join("phantom.run.json"))?;
    eprintln!("generated {} cases under {}", truths.len(), layout.root.display());
    Ok(())
}

fn preprocess(layout: &Layout, a: PreprocessArgs) -> Result<()> {
    let cfg: PreprocessConfig = read_toml(a.config.as_deref())?;
    let warnings = preprocess_cohort(layout, &cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut m = RunManifest::new("preprocess", &cfg)?;
    let mut inputs = String::new();
    for case in layout.case_ids()? {
        inputs.push_str(&format!(
            "{case}:{}:{}\n",
            sha256_file(&layout.dwi(&case))?,
            sha256_file(&layout.structural(&case))?
        ));
    }
    m.input_hash("volumes", sha256_bytes(inputs.as_bytes()))
        .input_hash("slices_out", slices_hash(layout)?)
        .output("slices", "slices")
        .output("masks", "masks");
    m.finalize().write(&layout.root.join("preprocess.run.json"))?;
    eprintln!("wrote {} slice packs", layout.sliced_case_ids()?.len());
    Ok(())
}

fn default_split_path(layout: &Layout, task: &TaskArgs) -> PathBuf {
    layout.root.join("splits").join(format!("{}.json", task.tag()))
}

fn split(layout: &Layout, a: SplitArgs) -> Result<()> {
    let labels_path = a.labels.path(layout);
    let labels: Vec<ArtifactLabel> = read_labels(&labels_path)?
        .into_iter()
        .filter(|l: &ArtifactLabel| l.reader_id == a.labels.reader)
        .collect();
    if labels.is_empty() {
        bail!("no labels by reader {} in {}", a.labels.reader, labels_path.display());
    }
    let fractions: [f64; 3] = a.fractions.as_slice().try_into().context("need three fractions")?;
    let split = stratified_case_split(&labels, a.task.spec(), fractions, a.seed)?;
    let out = a.out.unwrap_or_else(|| default_split_path(layout, &a.task));
    fs::create_dir_all(out.parent().unwrap_or(Path::new(".")))?;
    write_manifest(&out, &split)?;
    let mut m = RunManifest::new("split", &serde_json::json!({"task": a.task.spec(), "fractions": fractions, "reader": a.labels.reader}))?;
    m.input_file("labels", &labels_path)?;
    m.seed("split", a.seed).output("split", rel(layout, &out));
    m.finalize().write(&out.with_extension("run.json"))?;
    for s in Subset::ALL {
        eprintln!("{s}: {} cases", split.cases(s).len());
    }
    Ok(())
}

fn read_reader_labels(path: &Path, reader: &str) -> Result<Vec<ArtifactLabel>> {
    let labels: Vec<ArtifactLabel> = read_labels(path)?;
    let own: Vec<ArtifactLabel> = labels.into_iter().filter(|l| l.reader_id == reader).collect();
    if own.is_empty() {
        bail!("no labels by reader {reader} in {}", path.display());
    }
    Ok(own)
}

fn train_cmd(layout: &Layout, a: TrainArgs) -> Result<()> {
    let task = a.task.spec();
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_toml(Some(p))?,
        None => TrainConfig::for_task(task, a.arch),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.max_epochs {
        cfg.max_epochs = v;
        cfg.min_epochs = cfg.min_epochs.min(v);
    }
    if let Some(v) = a.min_epochs {
        cfg.min_epochs = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if a.no_augment {
        cfg.augment = false;
    }
    cfg.validate()?;
    if cfg.lr_overridden() {
        eprintln!("note: learning rate {} lies outside the reference range", cfg.lr);
    }

    let split_path = a.split.clone().unwrap_or_else(|| default_split_path(layout, &a.task));
    let split = read_manifest(&split_path)?;
    if split.task != task.artifact {
        bail!("split {} was made for {}, not {}", split_path.display(), split.task, task.artifact);
    }
    let labels_path = a.labels.path(layout);
    let labels = read_reader_labels(&labels_path, &a.labels.reader)?;
    let by = labels_by_slice(&labels, &a.labels.reader);
    let records = load_slices(layout)?;
    let tr = samples_for(&records, &by, task, &split, Subset::Train)?;
    let va = samples_for(&records, &by, task, &split, Subset::Val)?;
    eprintln!("training {} on {} ({} train, {} val slices)", a.arch, a.task.tag(), tr.len(), va.len());

    let arch = ArchSpec::new(a.arch);
    let outcome = train(&tr, &va, &arch, task, &cfg, |r| {
        eprintln!("epoch {:3}  train {:.4}  val {:.4}", r.epoch, r.train_loss, r.val_loss)
    })?;

    let out = a
        .out
        .unwrap_or_else(|| layout.root.join("runs").join(format!("{}_{}", a.task.tag(), a.arch)));
    fs::create_dir_all(&out)?;
    for ck in [&outcome.last, &outcome.best] {
        ck.write(out.join(checkpoint_name(ck.meta.kind)))?;
    }
    write_json(&out.join("history.json"), &outcome.history)?;

    let model = outcome.last.model()?;
    let ids: Vec<String> = va.iter().map(|s| s.id.clone()).collect();
    let images: Vec<_> = va.iter().map(|s| s.image.clone()).collect();
    let rows = prediction_rows(&ids, &predict_images(&model, &images)?);
    let report = evaluate_rows(&rows, &by, task)?;
    let summary = ValidationSummary {
        arch: a.arch,
        task,
        checkpoint: CheckpointKind::LastEpoch.name().into(),
        auroc: report.auroc,
        report,
    };
    write_json(&out.join("val_metrics.json"), &summary)?;

    let mut m = RunManifest::new("train", &serde_json::json!({"arch": arch, "task": task, "train": cfg}))?;
    m.input_file("labels", &labels_path)?
        .input_file("split", &split_path)?
        .input_hash("slices", slices_hash(layout)?)
        .seed("train", cfg.seed);
    for name in [
        checkpoint_name(CheckpointKind::LastEpoch),
        checkpoint_name(CheckpointKind::BestVal),
        "history.json".into(),
        "val_metrics.json".into(),
    ] {
        m.output(name.clone(), rel(layout, &out.join(&name)));
    }
    m.finalize().write(&out.join(MANIFEST_FILE))?;
    eprintln!(
        "validation AUROC {:.4} (last epoch {}, best epoch {})",
        summary.auroc, outcome.last.meta.epoch, outcome.best.meta.epoch
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub run: String,
    pub arch: Family,
    pub auroc: f64,
    pub candidates: Vec<(String, f64)>,
}

fn select(layout: &Layout, a: SelectArgs) -> Result<()> {
    let summaries = a
        .runs
        .iter()
        .map(|r| read_json::<ValidationSummary>(&r.join("val_metrics.json")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(t) = summaries.first().map(|s| s.task) {
        if summaries.iter().any(|s| s.task != t) {
            bail!("runs were trained on different tasks");
        }
    }
    let best = select_best(&summaries).context("no run has a finite validation AUROC")?;
    let names: Vec<String> = a.runs.iter().map(|r| rel(layout, r)).collect();
    let sel = Selection {
        run: names[best].clone(),
        arch: summaries[best].arch,
        auroc: summaries[best].auroc,
        candidates: names.iter().cloned().zip(summaries.iter().map(|s| s.auroc)).collect(),
    };
    let out = a.out.unwrap_or_else(|| {
        a.runs[0].parent().map_or_else(|| PathBuf::from("selected.json"), |p| p.join("selected.json"))
    });
    write_json(&out, &sel)?;
    println!("{} ({}, validation AUROC {:.4})", sel.run, sel.arch, sel.auroc);
    Ok(())
}

fn infer(layout: &Layout, a: InferArgs) -> Result<()> {
    let ck = Checkpoint::read(&a.checkpoint)?;
    let model = ck.model()?;
    let records = a.subset.select(load_slices(layout)?)?;
    if records.is_empty() {
        bail!("no slices selected");
    }
    let images: Vec<_> = records.iter().map(slice_image).collect();
    let ids: Vec<String> = records.iter().map(|r| r.slice_id.clone()).collect();
    let rows = prediction_rows(&ids, &predict_images(&model, &images)?);
    fs::create_dir_all(&a.out)?;
    let pred_path = a.out.join("predictions.csv");
    write_predictions(&pred_path, &rows)?;
    let mut m = RunManifest::new("infer", &serde_json::json!({"subset": a.subset.subset}))?;
    m.input_file("checkpoint", &a.checkpoint)?
        .input_hash("slices", slices_hash(layout)?);
    if let Some(s) = &a.subset.split {
        m.input_file("split", s)?;
    }
    m.output("predictions", rel(layout, &pred_path));
    m.finalize().write(&a.out.join(MANIFEST_FILE))?;
    eprintln!("{} predictions written to {}", rows.len(), pred_path.display());
    Ok(())
}

fn explain(layout: &Layout, a: ExplainArgs) -> Result<()> {
    let ck = Checkpoint::read(&a.checkpoint)?;
    let model = ck.model()?;
    let mut records = a.subset.select(load_slices(layout)?)?;
    if a.positives_only {
        let images: Vec<_> = records.iter().map(slice_image).collect();
        let preds = predict_images(&model, &images)?;
        records = records.into_iter().zip(preds).filter(|(_, p)| p.class > 0).map(|(r, _)| r).collect();
    }
    let cfg = ExplainConfig {
        target: a.class.map_or(ExplainTarget::Predicted, ExplainTarget::Class),
        threshold: a.threshold,
        mode: if a.quantile { ThresholdMode::Quantile } else { ThresholdMode::Value },
        min_area: a.min_area,
    };
    let explanations = explain_records(&model, &records, &cfg)?;
    let out = a.out.unwrap_or_else(|| layout.explanations());
    write_explanations(&out, &records, &explanations)?;
    let mut m = RunManifest::new("explain", &serde_json::json!({"explain": cfg, "subset": a.subset.subset, "positives_only": a.positives_only}))?;
    m.input_file("checkpoint", &a.checkpoint)?
        .input_hash("slices", slices_hash(layout)?);
    if let Some(s) = &a.subset.split {
        m.input_file("split", s)?;
    }
    m.output("boxes", rel(layout, &boxes_path(&out)))
        .output("overlays", rel(layout, &out.join("overlays")))
        .output("heatmaps", rel(layout, &out.join("heatmaps")));
    m.finalize().write(&out.join(MANIFEST_FILE))?;
    let n_boxes: usize = explanations.iter().map(|e| e.boxes.len()).sum();
    eprintln!("{} slices explained, {n_boxes} boxes", explanations.len());
    Ok(())
}

fn evaluate(layout: &Layout, a: EvaluateArgs) -> Result<()> {
    let rows = read_predictions(&a.predictions)?;
    let labels_path = a.labels.path(layout);
    let labels = read_reader_labels(&labels_path, &a.labels.reader)?;
    let report = evaluate_rows(&rows, &labels_by_slice(&labels, &a.labels.reader), a.task.spec())?;
    let out = a
        .out
        .unwrap_or_else(|| a.predictions.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    fs::create_dir_all(&out)?;
    let metrics_path = out.join("metrics.json");
    write_json(&metrics_path, &report)?;
    let mut m = RunManifest::new("evaluate", &serde_json::json!({"task": a.task.spec(), "reader": a.labels.reader}))?;
    m.input_file("predictions", &a.predictions)?
        .input_file("labels", &labels_path)?
        .output("metrics", rel(layout, &metrics_path));
    m.finalize().write(&out.join("evaluate.run.json"))?;
    println!(
        "AUROC {:.4}  AUPRC {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}",
        report.auroc, report.auprc, report.accuracy, report.precision, report.recall
    );
    Ok(())
}

fn agreement(layout: &Layout, a: AgreementArgs) -> Result<()> {
    let ci = match a.ci.as_str() {
        "bootstrap" => match CiMethod::default() {
            CiMethod::Bootstrap { resamples, .. } => CiMethod::Bootstrap { resamples, seed: a.seed },
            other => other,
        },
        "asymptotic" => CiMethod::Asymptotic,
        other => bail!("unknown CI method {other:?}"),
    };
    let mut labels: Vec<ArtifactLabel> = Vec::new();
    let mut m = RunManifest::new("agreement", &serde_json::json!({"reader_a": a.reader_a, "reader_b": a.reader_b, "ci": ci}))?;
    for (i, p) in a.labels.iter().enumerate() {
        labels.extend(read_labels::<ArtifactLabel>(p)?);
        m.input_file(format!("labels_{i}"), p)?;
    }
    let mut scores: Vec<BoxScore> = Vec::new();
    for (i, p) in a.box_scores.iter().enumerate() {
        scores.extend(read_labels::<BoxScore>(p)?);
        m.input_file(format!("box_scores_{i}"), p)?;
    }
    let mut rows = label_agreement(&labels, &a.reader_a, &a.reader_b, ci)?;
    rows.extend(box_score_agreement(&scores, &a.reader_a, &a.reader_b, ci)?);
    let out = a
        .out
        .unwrap_or_else(|| layout.root.join("agreement").join(format!("{}_{}.json", a.reader_a, a.reader_b)));
    write_json(&out, &rows)?;
    m.seed("bootstrap", a.seed).output("table", rel(layout, &out));
    m.finalize().write(&out.with_extension("run.json"))?;
    for r in &rows {
        println!(
            "{:6} {:6} n={:4} kappa {:.3} [{:.3}, {:.3}] {}",
            r.item,
            format!("{:?}", r.scale).to_lowercase(),
            r.pairs,
            r.result.kappa,
            r.result.ci_low,
            r.result.ci_high,
            r.result.band.name()
        );
    }
    Ok(())
}
