//! Seeded mini-batch training with class-balanced sampling, augmentation and
//! validation-loss early stopping.

use dwiqa_core::dataset::{sampler_weights, AugmentPlan, TaskMode, TaskSpec, WeightedSampler};
use dwiqa_core::{Artifact, Plane};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Family};
use crate::checkpoint::{Checkpoint, CheckpointKind, CheckpointMeta};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Result};

/// Reference learning-rate range of the full-size backbones.
pub const REFERENCE_LR_RANGE: (f64, f64) = (4e-6, 9e-5);

/// One training example: a `[0, 1]` image and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Plane<f32>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 8e-6,
            batch_size: 32,
            max_epochs: 200,
            min_epochs: 40,
            patience: 10,
            seed: 0,
            adam: AdamConfig::default(),
            augment: true,
        }
    }
}

impl TrainConfig {
    /// Per-task reference learning rates of the full-size counterparts.
    /// Multiclass rates for the residual families are not tabulated; their
    /// binary rates are reused.
    pub fn reference_lr(task: TaskSpec, family: Family) -> f64 {
        match (task.artifact, family, task.mode) {
            (Artifact::Hyper, Family::MiniRes, _) => 4e-6,
            (Artifact::Hyper, _, _) => 8e-6,
            (Artifact::Hypo, Family::MiniDense, _) => 9e-5,
            (Artifact::Hypo, Family::MiniRes, _) => 1e-5,
            (Artifact::Hypo, Family::MiniSe, TaskMode::Binary | TaskMode::Multiclass) => 5e-5,
        }
    }

    pub fn for_task(task: TaskSpec, family: Family) -> Self {
        Self {
            lr: Self::reference_lr(task, family),
            ..Self::default()
        }
    }

    /// Whether `lr` lies outside the reference range (and so counts as an override).
    pub fn lr_overridden(&self) -> bool {
        !(REFERENCE_LR_RANGE.0..=REFERENCE_LR_RANGE.1).contains(&self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size, patience and max_epochs must be >= 1".into()));
        }
        if self.min_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "min_epochs {} exceeds max_epochs {}",
                self.min_epochs, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// 1-based epoch with the lowest validation loss (earliest on ties).
pub fn best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| l < b) {
            best = Some((i + 1, l));
        }
    }
    best.map(|(e, _)| e)
}

/// Stop after epoch `e = val_losses.len()` when `e >= min_epochs` and the best
/// epoch is at least `patience` epochs old, or at `max_epochs`.
pub fn should_stop(val_losses: &[f64], cfg: &TrainConfig) -> bool {
    let e = val_losses.len();
    if e >= cfg.max_epochs {
        return true;
    }
    if e < cfg.min_epochs {
        return false;
    }
    best_epoch(val_losses).is_some_and(|b| e - b >= cfg.patience)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn check_split(samples: &[Sample], classes: usize, what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data(format!("{what} split is empty")));
    }
    if let Some(s) = samples.iter().find(|s| s.class >= classes) {
        return Err(Error::Data(format!("{} has class {} outside [0, {classes})", s.id, s.class)));
    }
    Ok(())
}

/// Mean cross-entropy over a sample set (no augmentation).
pub fn evaluate_loss(model: &Model, samples: &[Sample]) -> Result<f64> {
    let losses: Vec<f32> = samples
        .par_iter()
        .map(|s| model.loss(&s.image, s.class))
        .collect::<Result<_>>()?;
    Ok(losses.iter().map(|&l| l as f64).sum::<f64>() / samples.len() as f64)
}

/// Train from a seeded initialisation. Each epoch draws `train.len()` samples
/// with class-balanced replacement, augments each with its own seed and
/// steps Adam once per batch of `batch_size`.
pub fn train(
    train: &[Sample],
    val: &[Sample],
    arch: &ArchSpec,
    task: TaskSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let classes = task.class_count();
    check_split(train, classes, "train")?;
    check_split(val, classes, "validation")?;
    let (rows, cols) = (train[0].image.height, train[0].image.width);
    let mut model = Model::with_input(arch, task, rows, cols, cfg.seed)?;
    for s in train.iter().chain(val) {
        model.check_input(&s.image)?;
    }
    let weights = sampler_weights(&train.iter().map(|s| s.class).collect::<Vec<_>>(), classes)
        .map_err(|e| Error::Data(format!("train split: {e}")))?;
    let sampler = WeightedSampler::new(&weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model.params.len(), cfg.adam);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<f32>)> = None;
    let n_params = model.params.len();

    loop {
        let epoch = history.len() + 1;
        let order = sampler.epoch(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let jobs: Vec<(usize, u64)> = batch.iter().map(|&i| (i, rng.next_u64())).collect();
            let results: Vec<(f32, Vec<f32>)> = jobs
                .par_iter()
                .map(|&(i, seed)| {
                    let s = &train[i];
                    let img = if cfg.augment {
                        AugmentPlan::draw(&mut ChaCha8Rng::seed_from_u64(seed)).apply(&s.image)
                    } else {
                        s.image.clone()
                    };
                    let mut g = vec![0f32; n_params];
                    let loss = model.loss_and_grad(&img, s.class, &mut g)?;
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            // Summed in batch order so results do not depend on scheduling.
            let mut grad = vec![0f32; n_params];
            for (loss, g) in &results {
                loss_sum += *loss as f64;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut model.params, &grad, cfg.lr)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss: evaluate_loss(&model, val)?,
        };
        if !record.val_loss.is_finite() {
            return Err(Error::Data(format!("validation loss diverged at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(_, l, _)| record.val_loss < *l) {
            best = Some((epoch, record.val_loss, model.params.clone()));
        }
        history.push(record);
        on_epoch(&record);
        let val_losses: Vec<f64> = history.iter().map(|r| r.val_loss).collect();
        if should_stop(&val_losses, cfg) {
            break;
        }
    }

    let meta = |kind, epoch| CheckpointMeta {
        kind,
        arch: arch.clone(),
        task,
        input_rows: rows,
        input_cols: cols,
        epoch,
        train_loss_history: history.iter().map(|r| r.train_loss).collect(),
        val_loss_history: history.iter().map(|r| r.val_loss).collect(),
        train_config: Some(cfg.clone()),
        param_count: n_params,
    };
    let (best_epoch, _, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        last: Checkpoint {
            meta: meta(CheckpointKind::LastEpoch, history.len()),
            params: model.params,
        },
        best: Checkpoint {
            meta: meta(CheckpointKind::BestVal, best_epoch),
            params: best_params,
        },
        history,
    })
}
