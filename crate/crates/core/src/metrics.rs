//! Classification and agreement metrics.
//!
//! AUROC uses the rank (Mann-Whitney) formulation with half credit for ties.
//! AUPRC is step-wise average precision over tied score blocks. Cohen's kappa
//! carries a seeded percentile-bootstrap confidence interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if counts.iter().any(|r| r.len() != classes) {
            return Err(Error::DimMismatch("confusion matrix must be square".into()));
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::DimMismatch(format!(
            "{} labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::Invalid(format!(
                "label pair ({t}, {p}) outside [0, {classes})"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Precision and recall of class 1.
    BinaryPositive,
    /// Support-weighted mean over classes.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn basic_metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<BasicMetrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Invalid("confusion matrix is empty".into()));
    }
    let correct: u64 = (0..cm.classes).map(|c| cm.counts[c][c]).sum();
    let accuracy = ratio(correct, n);
    let per_class = |c: usize| {
        (
            ratio(cm.counts[c][c], cm.predicted(c)),
            ratio(cm.counts[c][c], cm.support(c)),
        )
    };
    let (precision, recall) = match averaging {
        Averaging::BinaryPositive => {
            if cm.classes != 2 {
                return Err(Error::Invalid(format!(
                    "binary averaging needs 2 classes, got {}",
                    cm.classes
                )));
            }
            per_class(1)
        }
        Averaging::Weighted => (0..cm.classes).fold((0.0, 0.0), |(p, r), c| {
            let w = cm.support(c) as f64 / n as f64;
            let (pc, rc) = per_class(c);
            (p + w * pc, r + w * rc)
        }),
    };
    Ok(BasicMetrics {
        accuracy,
        precision,
        recall,
    })
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Invalid(format!("non-finite score at {i}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score (stable).
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// `P(score+ > score-) + P(tie) / 2` over all positive-negative pairs.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("roc_auc needs both classes present".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of positives, kept doubled so it stays integral.
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128; // twice the mean rank of the block
        let block_pos = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_pos += rank2 * block_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Average precision: sum over tied score blocks of precision after the block
/// times the recall gained in it.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, labels)?;
    if pos == 0 {
        return Err(Error::Invalid("pr_auc needs at least one positive".into()));
    }
    let idx = descending(scores);
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let block_tp = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        tp += block_tp;
        fp += (j - i + 1) as u64 - block_tp;
        if block_tp > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (block_tp as f64 / pos as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

/// Points of the ROC curve `(fpr, tpr)` from the highest threshold down.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    let (pos, neg) = check_binary(scores, labels)?;
    let idx = descending(scores);
    let mut pts = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] {
                tp += 1
            } else {
                fp += 1
            }
            i += 1;
        }
        pts.push((t, ratio(fp as u64, neg as u64), ratio(tp as u64, pos as u64)));
    }
    Ok(pts)
}

/// Points of the precision-recall curve `(threshold, recall, precision)`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    let (pos, _) = check_binary(scores, labels)?;
    let idx = descending(scores);
    let mut pts = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            tp += labels[idx[i]] as usize;
            seen += 1;
            i += 1;
        }
        pts.push((t, ratio(tp as u64, pos as u64), ratio(tp as u64, seen as u64)));
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrScores {
    /// `None` for classes absent from the ground truth.
    pub per_class: Vec<Option<f64>>,
    pub weighted: f64,
    pub warnings: Vec<String>,
}

fn ovr(
    probs: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    metric: fn(&[f64], &[bool]) -> Result<f64>,
) -> Result<OvrScores> {
    if probs.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} probability rows vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.iter().any(|r| r.len() != classes) || labels.iter().any(|&l| l >= classes) {
        return Err(Error::Invalid(format!("probabilities/labels must span {classes} classes")));
    }
    let mut support = vec![0usize; classes];
    for &l in labels {
        support[l] += 1;
    }
    if support.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Invalid("one-vs-rest needs at least 2 distinct labels".into()));
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut warnings = Vec::new();
    let mut weighted = 0.0;
    for c in 0..classes {
        if support[c] == 0 {
            warnings.push(format!("class {c} absent from ground truth; excluded"));
            per_class.push(None);
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let truth: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let v = metric(&scores, &truth)?;
        weighted += v * support[c] as f64 / labels.len() as f64;
        per_class.push(Some(v));
    }
    Ok(OvrScores {
        per_class,
        weighted,
        warnings,
    })
}

/// One-vs-rest AUROC per class plus the support-weighted mean.
pub fn ovr_weighted_auc(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<OvrScores> {
    ovr(probs, labels, classes, roc_auc)
}

/// One-vs-rest average precision per class plus the support-weighted mean.
pub fn ovr_weighted_ap(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<OvrScores> {
    ovr(probs, labels, classes, pr_auc)
}

/// Landis-Koch agreement bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl AgreementBand {
    pub fn of(kappa: f64) -> Self {
        match kappa {
            k if k <= 0.0 => Self::Poor,
            k if k <= 0.20 => Self::Slight,
            k if k <= 0.40 => Self::Fair,
            k if k <= 0.60 => Self::Moderate,
            k if k <= 0.80 => Self::Substantial,
            _ => Self::AlmostPerfect,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Poor => "poor",
            Self::Slight => "slight",
            Self::Fair => "fair",
            Self::Moderate => "moderate",
            Self::Substantial => "substantial",
            Self::AlmostPerfect => "almost_perfect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Seeded percentile bootstrap over rating pairs.
    Bootstrap { resamples: usize, seed: u64 },
    /// Normal approximation with `se = sqrt(po (1 - po) / (n (1 - pe)^2))`.
    Asymptotic,
}

impl Default for CiMethod {
    fn default() -> Self {
        CiMethod::Bootstrap {
            resamples: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub band: AgreementBand,
    /// Expected agreement was 1 (both raters constant on one category).
    pub degenerate: bool,
}

/// `(kappa, p_o, p_e, degenerate)` from a confusion matrix, using integer
/// sums so exact rational inputs give correctly rounded results.
pub fn kappa_from_counts(cm: &ConfusionMatrix) -> (f64, f64, f64, bool) {
    let n = cm.total() as u128;
    if n == 0 {
        return (0.0, 0.0, 0.0, true);
    }
    let diag: u128 = (0..cm.classes).map(|c| cm.counts[c][c] as u128).sum();
    let chance: u128 = (0..cm.classes)
        .map(|c| cm.support(c) as u128 * cm.predicted(c) as u128)
        .sum();
    let po = diag as f64 / n as f64;
    let pe = chance as f64 / (n * n) as f64;
    if chance == n * n {
        return (if diag == n { 1.0 } else { 0.0 }, po, pe, true);
    }
    let num = (n * diag) as i128 - chance as i128;
    let den = (n * n - chance) as i128;
    (num as f64 / den as f64, po, pe, false)
}

/// Percentile with linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Cohen's kappa between two raters over categories `0..classes`, with a 95% CI.
pub fn cohen_kappa(a: &[usize], b: &[usize], classes: usize, ci: CiMethod) -> Result<KappaResult> {
    let cm = confusion(a, b, classes)?;
    let n = a.len();
    if n == 0 {
        return Err(Error::Invalid("kappa needs at least one rating pair".into()));
    }
    let (kappa, po, pe, degenerate) = kappa_from_counts(&cm);
    let (mut lo, mut hi) = match ci {
        CiMethod::Asymptotic => {
            if degenerate {
                (kappa, kappa)
            } else {
                let se = (po * (1.0 - po) / (n as f64 * (1.0 - pe).powi(2))).sqrt();
                (kappa - 1.96 * se, kappa + 1.96 * se)
            }
        }
        CiMethod::Bootstrap { resamples, seed } => {
            if resamples == 0 {
                return Err(Error::Invalid("bootstrap needs at least one resample".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut stats = Vec::with_capacity(resamples);
            let mut boot = ConfusionMatrix::zeros(classes);
            for _ in 0..resamples {
                boot.counts.iter_mut().for_each(|r| r.fill(0));
                for _ in 0..n {
                    let i = rng.random_range(0..n);
                    boot.counts[a[i]][b[i]] += 1;
                }
                stats.push(kappa_from_counts(&boot).0);
            }
            stats.sort_by(f64::total_cmp);
            (percentile(&stats, 0.025), percentile(&stats, 0.975))
        }
    };
    // The percentile interval may exclude a point estimate on skewed resample
    // distributions; the reported interval always brackets it.
    lo = lo.min(kappa).max(-1.0);
    hi = hi.max(kappa).min(1.0);
    Ok(KappaResult {
        kappa,
        ci_low: lo,
        ci_high: hi,
        band: AgreementBand::of(kappa),
        degenerate,
    })
}

/// Scores in, per-class probabilities out. Rows of `probs` are aligned with `labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: usize,
    pub samples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub auroc: f64,
    pub auprc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_auroc: Option<Vec<Option<f64>>>,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Full metrics for one task mode. Binary tasks (2 classes) score on
/// `P(class 1)` with positive-class precision/recall; multiclass uses
/// weighted averages and one-vs-rest curves.
pub fn report(probs: &[Vec<f64>], predicted: &[usize], labels: &[usize], classes: usize) -> Result<MetricsReport> {
    let cm = confusion(labels, predicted, classes)?;
    if probs.len() != labels.len() {
        return Err(Error::DimMismatch("probabilities and labels differ in length".into()));
    }
    if classes == 2 {
        let basic = basic_metrics(&cm, Averaging::BinaryPositive)?;
        let scores: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        Ok(MetricsReport {
            classes,
            samples: labels.len(),
            accuracy: basic.accuracy,
            precision: basic.precision,
            recall: basic.recall,
            auroc: roc_auc(&scores, &truth)?,
            auprc: pr_auc(&scores, &truth)?,
            per_class_auroc: None,
            confusion: cm,
            warnings: Vec::new(),
        })
    } else {
        let basic = basic_metrics(&cm, Averaging::Weighted)?;
        let auc = ovr_weighted_auc(probs, labels, classes)?;
        let ap = ovr_weighted_ap(probs, labels, classes)?;
        Ok(MetricsReport {
            classes,
            samples: labels.len(),
            accuracy: basic.accuracy,
            precision: basic.precision,
            recall: basic.recall,
            auroc: auc.weighted,
            auprc: ap.weighted,
            per_class_auroc: Some(auc.per_class),
            confusion: cm,
            warnings: auc.warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        let diag = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(diag.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(confusion(&[], &[], 2).unwrap(), ConfusionMatrix::zeros(2));
        assert!(confusion(&[0], &[], 2).is_err());
        assert!(confusion(&[0], &[2], 2).is_err());
    }

    #[test]
    fn basic_metric_examples() {
        let cm = ConfusionMatrix::from_counts(vec![vec![1, 1], vec![0, 2]]).unwrap();
        let m = basic_metrics(&cm, Averaging::BinaryPositive).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);

        let diag = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![0, 4]]).unwrap();
        for avg in [Averaging::BinaryPositive, Averaging::Weighted] {
            let m = basic_metrics(&diag, avg).unwrap();
            assert_eq!((m.accuracy, m.precision, m.recall), (1.0, 1.0, 1.0));
        }

        // supports (3, 1); everything predicted as class 0 -> precision (0.75, 0)
        // would give 0.5625; use a matrix where per-class precision is (1, 0):
        // class 0 fully right, class 1 predicted as 0? precision_0 would drop.
        // Instead: class 1 sample predicted as class 2 in a 3-class matrix.
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
        let m = basic_metrics(&cm, Averaging::Weighted).unwrap();
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!(basic_metrics(&ConfusionMatrix::zeros(2), Averaging::Weighted).is_err());
    }

    #[test]
    fn auc_examples() {
        let l = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &l).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.3, 0.6, 0.2], &l).unwrap(), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let ap = pr_auc(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        for n in 1..8 {
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let mut labels = vec![false; n];
            labels[n - 1] = true;
            assert!((pr_auc(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-15);
        }
        assert!(pr_auc(&[0.3], &[false]).is_err());
    }

    #[test]
    fn ovr_examples() {
        let labels = [0, 1, 2, 1];
        let onehot: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..3).map(|c| (c == l) as u8 as f64).collect())
            .collect();
        let r = ovr_weighted_auc(&onehot, &labels, 3).unwrap();
        assert_eq!(r.weighted, 1.0);
        let uniform = vec![vec![1.0 / 3.0; 3]; 4];
        let r = ovr_weighted_auc(&uniform, &labels, 3).unwrap();
        assert!(r.per_class.iter().all(|&v| v == Some(0.5)));

        let r = ovr_weighted_auc(&onehot[..2], &labels[..2], 3).unwrap();
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.warnings.len(), 1);
        assert!(ovr_weighted_auc(&onehot[..1], &labels[..1], 3).is_err());
    }

    #[test]
    fn ovr_crafted_three_class() {
        let labels = [0usize, 0, 1, 1, 2, 2];
        let probs = vec![
            vec![0.6, 0.3, 0.1],
            vec![0.3, 0.4, 0.3],
            vec![0.2, 0.5, 0.3],
            vec![0.4, 0.4, 0.2],
            vec![0.1, 0.3, 0.6],
            vec![0.3, 0.3, 0.4],
        ];
        let r = ovr_weighted_auc(&probs, &labels, 3).unwrap();
        let mut weighted = 0.0;
        for c in 0..3 {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let t: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            let oracle = pairwise_auc(&s, &t);
            assert!((r.per_class[c].unwrap() - oracle).abs() < 1e-12);
            weighted += oracle / 3.0;
        }
        assert!((r.weighted - weighted).abs() < 1e-12);
        // class 0: positives 0.6, 0.3 vs negatives 0.2 0.4 0.1 0.3 -> (4 + 2.5) / 8
        assert!((r.per_class[0].unwrap() - 6.5 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_example() {
        let cm = ConfusionMatrix::from_counts(vec![vec![45, 5], vec![15, 35]]).unwrap();
        let (k, po, pe, deg) = kappa_from_counts(&cm);
        assert_eq!((k, po, pe, deg), (0.6, 0.8, 0.5, false));
    }

    #[test]
    fn kappa_identical_and_degenerate() {
        let a = [0, 1, 2, 1, 0];
        let r = cohen_kappa(&a, &a, 3, CiMethod::default()).unwrap();
        assert_eq!((r.kappa, r.ci_low, r.ci_high), (1.0, 1.0, 1.0));
        assert_eq!(r.band, AgreementBand::AlmostPerfect);
        let c = [1, 1, 1];
        let r = cohen_kappa(&c, &c, 3, CiMethod::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.kappa, 1.0);
        assert!(cohen_kappa(&[0, 1], &[0], 2, CiMethod::default()).is_err());
    }

    #[test]
    fn landis_koch_bands() {
        assert_eq!(AgreementBand::of(-0.1), AgreementBand::Poor);
        assert_eq!(AgreementBand::of(0.0), AgreementBand::Poor);
        assert_eq!(AgreementBand::of(0.12), AgreementBand::Slight);
        assert_eq!(AgreementBand::of(0.33), AgreementBand::Fair);
        assert_eq!(AgreementBand::of(0.46), AgreementBand::Moderate);
        assert_eq!(AgreementBand::of(0.6), AgreementBand::Moderate);
        assert_eq!(AgreementBand::of(0.61), AgreementBand::Substantial);
        assert_eq!(AgreementBand::of(0.95), AgreementBand::AlmostPerfect);
    }

    #[test]
    fn report_perfect_and_constant() {
        let labels = [0usize, 1, 1, 0, 0];
        let probs: Vec<Vec<f64>> = labels.iter().map(|&l| if l == 1 { vec![0.1, 0.9] } else { vec![0.8, 0.2] }).collect();
        let r = report(&probs, &labels, &labels, 2).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.auroc, r.auprc), (1.0, 1.0, 1.0, 1.0, 1.0));

        let constant = vec![vec![0.7, 0.3]; 5];
        let r = report(&constant, &[0; 5], &labels, 2).unwrap();
        assert_eq!(r.accuracy, 0.6);
        assert_eq!(r.auroc, 0.5);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_and_complements(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..60)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 19.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            let pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert!((a - pairwise_auc(&scores, &labels)).abs() < 1e-12);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            prop_assert!((a + roc_auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 3.0).collect();
            prop_assert_eq!(a, roc_auc(&cubed, &labels).unwrap());
        }

        #[test]
        fn kappa_bounds_and_ci(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..80), seed in 0u64..100
        ) {
            let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let ci = CiMethod::Bootstrap { resamples: 100, seed };
            let r = cohen_kappa(&a, &b, 3, ci).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r.kappa));
            prop_assert!(r.ci_low <= r.kappa && r.kappa <= r.ci_high);
            prop_assert_eq!(r, cohen_kappa(&a, &b, 3, ci).unwrap());
            let off_diag = a.iter().zip(&b).any(|(x, y)| x != y);
            if !off_diag { prop_assert_eq!(r.kappa, 1.0); }
            if r.kappa == 1.0 && !r.degenerate { prop_assert!(!off_diag); }
        }

        #[test]
        fn weighted_single_class_reduces(n in 1u64..50, wrong in 0u64..50) {
            // Only class 0 present in truth: weighted recall equals class-0 recall.
            let cm = ConfusionMatrix::from_counts(vec![vec![n, wrong], vec![0, 0]]).unwrap();
            let m = basic_metrics(&cm, Averaging::Weighted).unwrap();
            prop_assert!((m.recall - n as f64 / (n + wrong) as f64).abs() < 1e-12);
            prop_assert!((m.precision - 1.0).abs() < 1e-12);
        }
    }
}
