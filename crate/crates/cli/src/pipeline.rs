//! Data-root layout and the batch stages of the workflow. Every stage reads
//! and writes files under one root so that the CLI, the service and the tests
//! share a single code path.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dwiqa_classifier::arch::Family;
use dwiqa_classifier::explain::{
    components_to_bboxes, grad_cam, render_overlay, threshold_heatmap_with, BoundingBox, Heatmap, ThresholdMode,
    DEFAULT_MIN_AREA, DEFAULT_THRESHOLD,
};
use dwiqa_classifier::model::{Model, Prediction};
use dwiqa_classifier::train::Sample;
use dwiqa_core::codec::{read_dwi, read_labels, read_slice_pack, write_labels, write_slice_pack, write_volume};
use dwiqa_core::dataset::TaskSpec;
use dwiqa_core::metrics::{report, MetricsReport};
use dwiqa_core::phantom::{derive_slice_labels, generate_case, GroundTruth, PhantomConfig};
use dwiqa_core::preprocess::{normalize01, preprocess_case, PreprocessConfig};
use dwiqa_core::{ArtifactLabel, Artifact, Side, SliceRecord, SplitManifest, Subset};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "DWIQA_DATA_DIR";

/// Paths under a data root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn case_dir(&self, case: &str) -> PathBuf {
        self.root.join("cases").join(case)
    }

    pub fn dwi(&self, case: &str) -> PathBuf {
        self.case_dir(case).join("dwi.dwiqa")
    }

    pub fn structural(&self, case: &str) -> PathBuf {
        self.case_dir(case).join("structural.dwiqa")
    }

    pub fn truth(&self, case: &str) -> PathBuf {
        self.case_dir(case).join("truth.json")
    }

    pub fn mask(&self, case: &str) -> PathBuf {
        self.root.join("masks").join(format!("{case}.dwiqa"))
    }

    pub fn slices_dir(&self) -> PathBuf {
        self.root.join("slices")
    }

    pub fn slice_pack(&self, case: &str) -> PathBuf {
        self.slices_dir().join(format!("{case}.dwiqas"))
    }

    pub fn ground_truth_labels(&self) -> PathBuf {
        self.root.join("labels").join("ground_truth.csv")
    }

    pub fn explanations(&self) -> PathBuf {
        self.root.join("explanations")
    }

    /// Case ids that have a generated case directory, sorted.
    pub fn case_ids(&self) -> Result<Vec<String>> {
        list_stems(&self.root.join("cases"), None)
    }

    /// Case ids with an extracted slice pack, sorted.
    pub fn sliced_case_ids(&self) -> Result<Vec<String>> {
        list_stems(&self.slices_dir(), Some("dwiqas"))
    }
}

fn list_stems(dir: &Path, ext: Option<&str>) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let matches = match ext {
            Some(e) => path.extension().is_some_and(|x| x == e),
            None => path.is_dir(),
        };
        if matches {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Synthetic cohort: `cases` phantoms whose per-case seeds come from one
/// ChaCha8 stream, all sharing the `phantom` template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub cases: usize,
    pub seed: u64,
    pub id_prefix: String,
    pub phantom: PhantomConfig,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            cases: 60,
            seed: 0,
            id_prefix: "phantom".into(),
            phantom: PhantomConfig::default(),
        }
    }
}

impl CohortConfig {
    pub fn case_configs(&self) -> Vec<PhantomConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.cases)
            .map(|i| PhantomConfig {
                case_id: format!("{}_{i:03}", self.id_prefix),
                seed: rng.next_u64(),
                ..self.phantom.clone()
            })
            .collect()
    }
}

/// Generate and write every case, plus the ground-truth label file.
pub fn generate_cohort(layout: &Layout, cfg: &CohortConfig) -> Result<Vec<GroundTruth>> {
    if cfg.cases == 0 {
        bail!("a cohort needs at least one case");
    }
    let truths = cfg
        .case_configs()
        .par_iter()
        .map(|pc| -> Result<GroundTruth> {
            let case = generate_case(pc)?;
            fs::create_dir_all(layout.case_dir(&pc.case_id))?;
            write_volume(layout.dwi(&pc.case_id), case.dwi)?;
            write_volume(layout.structural(&pc.case_id), case.structural)?;
            write_json(&layout.truth(&pc.case_id), &case.truth)?;
            Ok(case.truth)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<ArtifactLabel> = truths.iter().flat_map(derive_slice_labels).collect();
    let path = layout.ground_truth_labels();
    create_parent(&path)?;
    write_labels(&path, &labels)?;
    Ok(truths)
}

pub fn read_truth(layout: &Layout, case: &str) -> Result<GroundTruth> {
    read_json(&layout.truth(case))
}

/// Mask, crop and slice every generated case. Returns per-case warnings.
pub fn preprocess_cohort(layout: &Layout, cfg: &PreprocessConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let cases = layout.case_ids()?;
    if cases.is_empty() {
        bail!("no cases under {}", layout.root.join("cases").display());
    }
    fs::create_dir_all(layout.slices_dir())?;
    fs::create_dir_all(layout.root.join("masks"))?;
    let warnings = cases
        .par_iter()
        .map(|case| -> Result<Vec<String>> {
            let structural = read_dwi(layout.structural(case))?;
            let dwi = read_dwi(layout.dwi(case))?;
            let (bm, slices) = preprocess_case(&structural, &dwi, cfg)?;
            write_volume(layout.mask(case), bm.mask)?;
            write_slice_pack(layout.slice_pack(case), &slices)?;
            Ok(bm.warnings.into_iter().map(|w| format!("{case}: {w}")).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(warnings.concat())
}

/// All slice records, in case order then extraction order.
pub fn load_slices(layout: &Layout) -> Result<Vec<SliceRecord>> {
    let cases = layout.sliced_case_ids()?;
    let packs = cases
        .par_iter()
        .map(|c| read_slice_pack(layout.slice_pack(c)).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(packs.concat())
}

pub fn load_slices_from(dir: &Path) -> Result<Vec<SliceRecord>> {
    let mut out = Vec::new();
    for stem in list_stems(dir, Some("dwiqas"))? {
        out.extend(read_slice_pack(dir.join(format!("{stem}.dwiqas")))?);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<ArtifactLabel>> {
    Ok(read_labels(path)?)
}

/// Labels of one reader keyed by slice id.
pub fn labels_by_slice<'a>(labels: &'a [ArtifactLabel], reader: &str) -> HashMap<&'a str, &'a ArtifactLabel> {
    labels
        .iter()
        .filter(|l| l.reader_id == reader)
        .map(|l| (l.slice_id.as_str(), l))
        .collect()
}

/// Model input for one slice: `[0, 1]` min-max scaled pixels.
pub fn slice_image(record: &SliceRecord) -> dwiqa_core::Plane<f32> {
    normalize01(&record.pixels)
}

/// Training samples for the cases of `subset`; every slice needs a label.
pub fn samples_for(
    records: &[SliceRecord],
    labels: &HashMap<&str, &ArtifactLabel>,
    task: TaskSpec,
    split: &SplitManifest,
    subset: Subset,
) -> Result<Vec<Sample>> {
    records
        .iter()
        .filter(|r| split.subset_of(&r.case_id) == Some(subset))
        .map(|r| {
            let label = labels
                .get(r.slice_id.as_str())
                .with_context(|| format!("no label for {}", r.slice_id))?;
            Ok(Sample {
                id: r.slice_id.clone(),
                image: slice_image(r),
                class: task.class_of(label)?,
            })
        })
        .collect()
}

/// Predictions in input order, batched to bound memory.
pub fn predict_images(model: &Model, images: &[dwiqa_core::Plane<f32>]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(256) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub slice_id: String,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let classes = rows.first().map_or(0, |r| r.probs.len());
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["slice_id".to_string(), "predicted".to_string()];
    header.extend((0..classes).map(|c| format!("prob_{c}")));
    w.write_record(&header)?;
    for r in rows {
        if r.probs.len() != classes {
            bail!("{} has {} probabilities, expected {classes}", r.slice_id, r.probs.len());
        }
        let mut rec = vec![r.slice_id.clone(), r.predicted.to_string()];
        rec.extend(r.probs.iter().map(|p| format!("{p:.9}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let classes = r.headers()?.iter().filter(|h| h.starts_with("prob_")).count();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != classes + 2 {
            bail!("malformed predictions row {:?}", rec);
        }
        out.push(PredictionRow {
            slice_id: rec[0].to_string(),
            predicted: rec[1].parse()?,
            probs: (0..classes).map(|c| rec[c + 2].parse()).collect::<std::result::Result<_, _>>()?,
        });
    }
    Ok(out)
}

pub fn prediction_rows(ids: &[String], preds: &[Prediction]) -> Vec<PredictionRow> {
    ids.iter()
        .zip(preds)
        .map(|(id, p)| PredictionRow {
            slice_id: id.clone(),
            predicted: p.class,
            probs: p.probs.iter().map(|&v| v as f64).collect(),
        })
        .collect()
}

/// Metrics of predictions against one reader's labels. Every prediction needs a label.
pub fn evaluate_rows(rows: &[PredictionRow], labels: &HashMap<&str, &ArtifactLabel>, task: TaskSpec) -> Result<MetricsReport> {
    if rows.is_empty() {
        bail!("no predictions to evaluate");
    }
    let mut truth = Vec::with_capacity(rows.len());
    for r in rows {
        let l = labels
            .get(r.slice_id.as_str())
            .with_context(|| format!("no label for {}", r.slice_id))?;
        truth.push(task.class_of(l)?);
    }
    let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.probs.clone()).collect();
    let predicted: Vec<usize> = rows.iter().map(|r| r.predicted).collect();
    Ok(report(&probs, &predicted, &truth, task.class_count())?)
}

/// Validation result of one trained run, as consumed by model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub arch: Family,
    pub task: TaskSpec,
    /// Which checkpoint was scored (`last_epoch`).
    pub checkpoint: String,
    pub auroc: f64,
    pub report: MetricsReport,
}

fn family_rank(f: Family) -> usize {
    match f {
        Family::MiniDense => 0,
        Family::MiniRes => 1,
        Family::MiniSe => 2,
    }
}

/// Index of the run with the highest validation AUROC; ties go to the dense
/// family, then residual, then squeeze-excitation, then the earlier entry.
pub fn select_best(candidates: &[ValidationSummary]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.auroc.is_nan() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &candidates[b];
                let better = c.auroc > cur.auroc || (c.auroc == cur.auroc && family_rank(c.arch) < family_rank(cur.arch));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Which class a Grad-CAM map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExplainTarget {
    /// The model's predicted class for each slice.
    #[default]
    Predicted,
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub target: ExplainTarget,
    pub threshold: f32,
    pub mode: ThresholdMode,
    pub min_area: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            target: ExplainTarget::Predicted,
            threshold: DEFAULT_THRESHOLD,
            mode: ThresholdMode::Value,
            min_area: DEFAULT_MIN_AREA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub slice_id: String,
    pub class: usize,
    pub heatmap: Heatmap,
    pub boxes: Vec<BoundingBox>,
}

pub fn explain_records(model: &Model, records: &[SliceRecord], cfg: &ExplainConfig) -> Result<Vec<Explanation>> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        bail!("threshold {} outside (0, 1)", cfg.threshold);
    }
    records
        .par_iter()
        .map(|r| {
            let img = slice_image(r);
            let class = match cfg.target {
                ExplainTarget::Predicted => model.predict(std::slice::from_ref(&img))?[0].class,
                ExplainTarget::Class(c) => c,
            };
            let heatmap = grad_cam(model, &img, class)?;
            let boxes = components_to_bboxes(&threshold_heatmap_with(&heatmap, cfg.threshold, cfg.mode), cfg.min_area);
            Ok(Explanation {
                slice_id: r.slice_id.clone(),
                class,
                heatmap,
                boxes,
            })
        })
        .collect()
}

pub fn boxes_path(dir: &Path) -> PathBuf {
    dir.join("boxes.csv")
}

pub fn overlay_path(dir: &Path, slice_id: &str) -> PathBuf {
    dir.join("overlays").join(format!("{slice_id}.png"))
}

pub fn heatmap_path(dir: &Path, slice_id: &str) -> PathBuf {
    dir.join("heatmaps").join(format!("{slice_id}.json"))
}

/// Heatmaps (JSON arrays), one box CSV and PNG overlays under `dir`.
pub fn write_explanations(dir: &Path, records: &[SliceRecord], explanations: &[Explanation]) -> Result<()> {
    fs::create_dir_all(dir.join("overlays"))?;
    fs::create_dir_all(dir.join("heatmaps"))?;
    let by_id: HashMap<&str, &SliceRecord> = records.iter().map(|r| (r.slice_id.as_str(), r)).collect();
    let mut w = csv::Writer::from_path(boxes_path(dir))?;
    w.write_record(["slice_id", "row_min", "col_min", "row_max", "col_max"])?;
    for e in explanations {
        for b in &e.boxes {
            w.write_record([
                e.slice_id.clone(),
                b.row_min.to_string(),
                b.col_min.to_string(),
                b.row_max.to_string(),
                b.col_max.to_string(),
            ])?;
        }
    }
    w.flush()?;
    explanations.par_iter().try_for_each(|e| -> Result<()> {
        let rec = by_id.get(e.slice_id.as_str()).context("explanation without slice")?;
        let overlay = render_overlay(&rec.pixels, &e.boxes, 255)?;
        fs::write(overlay_path(dir, &e.slice_id), dwiqa_core::codec::encode_png(&overlay)?)?;
        write_json(&heatmap_path(dir, &e.slice_id), &e.heatmap)?;
        Ok(())
    })
}

pub fn read_boxes(path: &Path) -> Result<BTreeMap<String, Vec<BoundingBox>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: BTreeMap<String, Vec<BoundingBox>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let n = |i: usize| -> Result<usize> { Ok(rec[i].parse()?) };
        out.entry(rec[0].to_string())
            .or_default()
            .push(BoundingBox::new(n(1)?, n(2)?, n(3)?, n(4)?));
    }
    Ok(out)
}

/// Ground-truth region pixels of one half-slice and polarity, mapped into the
/// `target_rows x target_cols` coordinates of the extracted slice.
pub fn region_in_slice(
    truth: &GroundTruth,
    artifact: Artifact,
    side: Side,
    z: usize,
    target_rows: usize,
    target_cols: usize,
) -> Vec<(usize, usize)> {
    let d = truth.dims;
    let cols = side.columns(d.w);
    let mut out: Vec<(usize, usize)> = Vec::new();
    for a in truth.artifacts.iter().filter(|a| a.polarity == artifact) {
        for idx in a.region.iter() {
            let (zz, y, x) = d.coords(idx);
            if zz != z || !cols.contains(&x) {
                continue;
            }
            let r = ((y as f64 + 0.5) * target_rows as f64 / d.h as f64) as usize;
            let c = (((x - cols.start) as f64 + 0.5) * target_cols as f64 / cols.len() as f64) as usize;
            out.push((r.min(target_rows - 1), c.min(target_cols - 1)));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Tight box around region pixels.
pub fn region_box(pixels: &[(usize, usize)]) -> Option<BoundingBox> {
    let (first, rest) = pixels.split_first()?;
    let mut b = BoundingBox::new(first.0, first.1, first.0, first.1);
    for &(r, c) in rest {
        b.row_min = b.row_min.min(r);
        b.row_max = b.row_max.max(r);
        b.col_min = b.col_min.min(c);
        b.col_max = b.col_max.max(c);
    }
    Some(b)
}
