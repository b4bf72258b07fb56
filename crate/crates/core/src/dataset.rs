//! Label semantics, case-level splitting, class-balanced sampling and
//! training-time augmentation.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{parse_slice_id, Artifact, ArtifactLabel, Plane, SplitManifest, Subset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Scores 1-2 versus 3-5.
    Binary,
    /// The five scores as five classes.
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub artifact: Artifact,
    pub mode: TaskMode,
}

impl TaskSpec {
    pub fn new(artifact: Artifact, mode: TaskMode) -> Self {
        Self { artifact, mode }
    }

    pub fn class_count(&self) -> usize {
        match self.mode {
            TaskMode::Binary => 2,
            TaskMode::Multiclass => 5,
        }
    }

    /// Map a resolved 1-5 score to a class index.
    pub fn class_of_score(&self, score: u8) -> Result<usize> {
        match self.mode {
            TaskMode::Binary => binarize_score(score),
            TaskMode::Multiclass => {
                check_resolved(score)?;
                Ok(score as usize - 1)
            }
        }
    }

    pub fn class_of(&self, label: &ArtifactLabel) -> Result<usize> {
        self.class_of_score(label.score(self.artifact))
            .map_err(|e| match e {
                Error::Unresolved(_) => Error::Unresolved(format!(
                    "slice {} has an ambiguous {} score; run resolve_ambiguous first",
                    label.slice_id, self.artifact
                )),
                other => other,
            })
    }
}

fn check_resolved(score: u8) -> Result<()> {
    match score {
        1..=5 => Ok(()),
        6 => Err(Error::Unresolved(
            "score 6 is ambiguous; run resolve_ambiguous first".into(),
        )),
        s => Err(Error::ScoreRange {
            what: "artifact score".into(),
            score: s as i64,
            min: 1,
            max: 5,
        }),
    }
}

/// Scores 1 and 2 become class 0, scores 3 to 5 class 1.
pub fn binarize_score(score: u8) -> Result<usize> {
    check_resolved(score)?;
    Ok((score >= 3) as usize)
}

/// Consensus re-read of an ambiguous slice. Only the polarities that were
/// scored 6 need a value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub slice_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper_score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypo_score: Option<u8>,
}

/// Replace every score of 6 with its adjudicated value. Labels without a 6
/// are returned untouched; adjudicated ones come back with `resolved = true`.
pub fn resolve_ambiguous(labels: &[ArtifactLabel], adjudications: &[Adjudication]) -> Result<Vec<ArtifactLabel>> {
    let by_slice: BTreeMap<&str, &Adjudication> =
        adjudications.iter().map(|a| (a.slice_id.as_str(), a)).collect();
    labels
        .iter()
        .map(|l| {
            if !l.has_ambiguous() {
                return Ok(l.clone());
            }
            let missing = |what: Artifact| {
                Error::MissingAdjudication(format!("{} score of slice {} is 6", what, l.slice_id))
            };
            let adj = by_slice.get(l.slice_id.as_str());
            let mut out = l.clone();
            for (artifact, score) in [
                (Artifact::Hyper, &mut out.hyper_score),
                (Artifact::Hypo, &mut out.hypo_score),
            ] {
                if *score != 6 {
                    continue;
                }
                let value = adj
                    .and_then(|a| match artifact {
                        Artifact::Hyper => a.hyper_score,
                        Artifact::Hypo => a.hypo_score,
                    })
                    .ok_or_else(|| missing(artifact))?;
                if !(1..=5).contains(&value) {
                    return Err(Error::ScoreRange {
                        what: format!("adjudicated {artifact} score of {}", l.slice_id),
                        score: value as i64,
                        min: 1,
                        max: 5,
                    });
                }
                *score = value;
            }
            out.resolved = true;
            Ok(out)
        })
        .collect()
}

/// Per-case slice-class histograms for one task, keyed by case id.
pub fn case_histograms(labels: &[ArtifactLabel], task: TaskSpec) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut seen = BTreeSet::new();
    let mut hist: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for l in labels {
        if !seen.insert(l.slice_id.as_str()) {
            return Err(Error::Invalid(format!(
                "slice {} labelled more than once; split on one consensus label per slice",
                l.slice_id
            )));
        }
        let (case, _, _) = parse_slice_id(&l.slice_id)?;
        let class = task.class_of(l)?;
        hist.entry(case.to_string())
            .or_insert_with(|| vec![0; task.class_count()])[class] += 1;
    }
    Ok(hist)
}

const MAX_REFINE_PASSES: usize = 50;

/// Assign whole cases to train/val/test.
///
/// Cases are shuffled by `seed`, then each goes to the subset whose squared
/// deviation from its target (per-class slice counts plus total slice count)
/// grows least. Ties resolve in the order train, val, test. The greedy result
/// is then refined by case moves and swaps that lower the total deviation.
pub fn stratified_case_split(
    labels: &[ArtifactLabel],
    task: TaskSpec,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitManifest> {
    let probe = SplitManifest {
        task: task.artifact,
        seed,
        fractions,
        assignments: BTreeMap::new(),
    };
    probe.validate()?;
    let hist = case_histograms(labels, task)?;
    if hist.len() < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 cases to split, got {}",
            hist.len()
        )));
    }
    let classes = task.class_count();
    let mut totals = vec![0usize; classes];
    for h in hist.values() {
        for (t, &c) in totals.iter_mut().zip(h) {
            *t += c;
        }
    }
    let n_total: usize = totals.iter().sum();

    let mut order: Vec<(&String, &Vec<usize>)> = hist.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut counts = [vec![0f64; classes], vec![0f64; classes], vec![0f64; classes]];
    let mut sizes = [0f64; 3];
    let mut assignments = BTreeMap::new();
    let mut placed: Vec<(&String, &Vec<usize>, usize)> = Vec::with_capacity(order.len());
    for (case, h) in order {
        let m: usize = h.iter().sum();
        let cost = |j: usize| {
            let class_term: f64 = (0..classes)
                .map(|c| {
                    let hc = h[c] as f64;
                    let target = fractions[j] * totals[c] as f64;
                    hc * (2.0 * (counts[j][c] - target) + hc)
                })
                .sum();
            let m = m as f64;
            class_term + m * (2.0 * (sizes[j] - fractions[j] * n_total as f64) + m)
        };
        let mut best = 0;
        let mut best_cost = cost(0);
        for j in 1..3 {
            let c = cost(j);
            if c < best_cost {
                best = j;
                best_cost = c;
            }
        }
        for c in 0..classes {
            counts[best][c] += h[c] as f64;
        }
        sizes[best] += m as f64;
        placed.push((case, h, best));
    }

    // Local search: single-case moves and cross-subset swaps, taken while
    // they strictly lower the total squared deviation.
    let subset_cost = |counts: &[f64], size: f64, j: usize| -> f64 {
        let class_term: f64 = (0..classes)
            .map(|c| (counts[c] - fractions[j] * totals[c] as f64).powi(2))
            .sum();
        class_term + (size - fractions[j] * n_total as f64).powi(2)
    };
    let shift = |counts: &mut [Vec<f64>; 3], sizes: &mut [f64; 3], h: &[usize], from: usize, to: usize| {
        for c in 0..classes {
            counts[from][c] -= h[c] as f64;
            counts[to][c] += h[c] as f64;
        }
        let m: usize = h.iter().sum();
        sizes[from] -= m as f64;
        sizes[to] += m as f64;
    };
    let pair_cost = |counts: &[Vec<f64>; 3], sizes: &[f64; 3], a: usize, b: usize| {
        subset_cost(&counts[a], sizes[a], a) + subset_cost(&counts[b], sizes[b], b)
    };
    for _ in 0..MAX_REFINE_PASSES {
        let mut improved = false;
        for i in 0..placed.len() {
            for to in 0..3 {
                let from = placed[i].2;
                if to == from {
                    continue;
                }
                let before = pair_cost(&counts, &sizes, from, to);
                shift(&mut counts, &mut sizes, placed[i].1, from, to);
                if pair_cost(&counts, &sizes, from, to) < before - 1e-9 {
                    placed[i].2 = to;
                    improved = true;
                } else {
                    shift(&mut counts, &mut sizes, placed[i].1, to, from);
                }
            }
            for k in i + 1..placed.len() {
                let (a, b) = (placed[i].2, placed[k].2);
                if a == b {
                    continue;
                }
                let before = pair_cost(&counts, &sizes, a, b);
                shift(&mut counts, &mut sizes, placed[i].1, a, b);
                shift(&mut counts, &mut sizes, placed[k].1, b, a);
                if pair_cost(&counts, &sizes, a, b) < before - 1e-9 {
                    placed[i].2 = b;
                    placed[k].2 = a;
                    improved = true;
                } else {
                    shift(&mut counts, &mut sizes, placed[k].1, a, b);
                    shift(&mut counts, &mut sizes, placed[i].1, b, a);
                }
            }
        }
        if !improved {
            break;
        }
    }
    for (case, _, j) in placed {
        assignments.insert(case.clone(), Subset::ALL[j]);
    }
    Ok(SplitManifest {
        assignments,
        ..probe
    })
}

/// Inverse-frequency sampling weights: class `c` gets `N / (K * n_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerWeights {
    pub weights: Vec<f64>,
    pub class_counts: BTreeMap<usize, usize>,
    pub class_weights: Vec<f64>,
}

pub fn sampler_weights(classes: &[usize], class_count: usize) -> Result<SamplerWeights> {
    let mut counts = vec![0usize; class_count];
    for &c in classes {
        if c >= class_count {
            return Err(Error::Invalid(format!("class {c} outside [0, {class_count})")));
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Invalid(format!("class {c} has no training samples")));
    }
    let n = classes.len() as f64;
    let class_weights: Vec<f64> = counts
        .iter()
        .map(|&nc| n / (class_count as f64 * nc as f64))
        .collect();
    Ok(SamplerWeights {
        weights: classes.iter().map(|&c| class_weights[c]).collect(),
        class_counts: counts.iter().copied().enumerate().collect(),
        class_weights,
    })
}

/// Draws sample indices with replacement in proportion to their weights.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
    len: usize,
}

impl WeightedSampler {
    pub fn new(weights: &SamplerWeights) -> Result<Self> {
        let dist = WeightedIndex::new(&weights.weights)
            .map_err(|e| Error::Invalid(format!("sampler weights: {e}")))?;
        Ok(Self {
            dist,
            len: weights.weights.len(),
        })
    }

    /// One epoch: as many draws as there are samples.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.len).map(|_| self.dist.sample(rng)).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

pub const ROTATION_LIMIT_DEG: f64 = 12.0;

/// The random choices behind one augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub rotation_deg: Option<f64>,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentPlan {
    pub const IDENTITY: AugmentPlan = AugmentPlan {
        rotation_deg: None,
        hflip: false,
        vflip: false,
    };

    /// Always consumes four draws: rotate?, angle, hflip?, vflip?.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let rotate = rng.random::<f64>() < 0.5;
        let angle = rng.random_range(-ROTATION_LIMIT_DEG..=ROTATION_LIMIT_DEG);
        let hflip = rng.random::<f64>() < 0.5;
        let vflip = rng.random::<f64>() < 0.5;
        Self {
            rotation_deg: rotate.then_some(angle),
            hflip,
            vflip,
        }
    }

    pub fn apply(&self, img: &Plane<f32>) -> Plane<f32> {
        let mut out = match self.rotation_deg {
            Some(deg) => rotate(img, deg),
            None => img.clone(),
        };
        if self.hflip {
            out = flip_horizontal(&out);
        }
        if self.vflip {
            out = flip_vertical(&out);
        }
        out
    }
}

/// Seeded random rotation and flips of an image in `[0, 1]`.
pub fn augment(img: &Plane<f32>, seed: u64) -> Plane<f32> {
    AugmentPlan::draw(&mut ChaCha8Rng::seed_from_u64(seed)).apply(img)
}

pub fn flip_horizontal<T: Copy>(img: &Plane<T>) -> Plane<T> {
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks(img.width) {
        data.extend(row.iter().rev());
    }
    Plane {
        width: img.width,
        height: img.height,
        data,
    }
}

pub fn flip_vertical<T: Copy>(img: &Plane<T>) -> Plane<T> {
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks(img.width).rev() {
        data.extend_from_slice(row);
    }
    Plane {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Rotate about the image centre by `deg` (counter-clockwise on screen),
/// bilinear with zeros outside the source.
pub fn rotate(img: &Plane<f32>, deg: f64) -> Plane<f32> {
    let (w, h) = (img.width, img.height);
    let (s, c) = deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            img.get(y as usize, x as usize) as f64
        }
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = (at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx) * (1.0 - fy)
                + (at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx) * fy;
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}
