//! Inter-reader agreement tables.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::{bail, Result};
use dwiqa_core::dataset::binarize_score;
use dwiqa_core::metrics::{cohen_kappa, CiMethod, KappaResult};
use dwiqa_core::{Artifact, ArtifactLabel, BoxScore};
use serde::{Deserialize, Serialize};

/// Category set over which kappa is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Raw scores 1-6 as six categories.
    Score,
    /// Artifact present (score >= 3) or not; pairs with a score of 6 are left out.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub item: String,
    pub scale: Scale,
    pub reader_a: String,
    pub reader_b: String,
    pub pairs: usize,
    #[serde(flatten)]
    pub result: KappaResult,
}

fn paired<'a, T>(rows: &'a [T], key: impl Fn(&T) -> (&str, &str), a: &str, b: &str) -> Vec<(&'a T, &'a T)> {
    let mut by_a: BTreeMap<&str, &T> = BTreeMap::new();
    let mut by_b: BTreeMap<&str, &T> = BTreeMap::new();
    for r in rows {
        let (slice, reader) = key(r);
        if reader == a {
            by_a.insert(slice, r);
        } else if reader == b {
            by_b.insert(slice, r);
        }
    }
    by_a.iter().filter_map(|(s, x)| by_b.get(s).map(|y| (*x, *y))).collect()
}

/// Kappa of two readers for both polarities, on the raw and the binary scale.
pub fn label_agreement(labels: &[ArtifactLabel], a: &str, b: &str, ci: CiMethod) -> Result<Vec<AgreementRow>> {
    if a == b {
        bail!("agreement needs two different readers");
    }
    let pairs = paired(labels, |l| (&l.slice_id, &l.reader_id), a, b);
    let mut rows = Vec::new();
    for artifact in Artifact::BOTH {
        let (mut ra, mut rb) = (Vec::new(), Vec::new());
        for (x, y) in &pairs {
            ra.push(x.score(artifact) as usize - 1);
            rb.push(y.score(artifact) as usize - 1);
        }
        if ra.is_empty() {
            continue;
        }
        rows.push(AgreementRow {
            item: artifact.to_string(),
            scale: Scale::Score,
            reader_a: a.into(),
            reader_b: b.into(),
            pairs: ra.len(),
            result: cohen_kappa(&ra, &rb, 6, ci)?,
        });
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        for (x, y) in &pairs {
            if let (Ok(p), Ok(q)) = (binarize_score(x.score(artifact)), binarize_score(y.score(artifact))) {
                ba.push(p);
                bb.push(q);
            }
        }
        if !ba.is_empty() {
            rows.push(AgreementRow {
                item: artifact.to_string(),
                scale: Scale::Binary,
                reader_a: a.into(),
                reader_b: b.into(),
                pairs: ba.len(),
                result: cohen_kappa(&ba, &bb, 2, ci)?,
            });
        }
    }
    Ok(rows)
}

/// Kappa of two readers' 1-5 box scores.
pub fn box_score_agreement(scores: &[BoxScore], a: &str, b: &str, ci: CiMethod) -> Result<Option<AgreementRow>> {
    let pairs = paired(scores, |s| (&s.slice_id, &s.reader_id), a, b);
    if pairs.is_empty() {
        return Ok(None);
    }
    let ra: Vec<usize> = pairs.iter().map(|(x, _)| x.score as usize - 1).collect();
    let rb: Vec<usize> = pairs.iter().map(|(_, y)| y.score as usize - 1).collect();
    Ok(Some(AgreementRow {
        item: "boxes".into(),
        scale: Scale::Score,
        reader_a: a.into(),
        reader_b: b.into(),
        pairs: ra.len(),
        result: cohen_kappa(&ra, &rb, 5, ci)?,
    }))
}

/// Every unordered pair of distinct readers, sorted.
pub fn reader_pairs<'a>(readers: impl IntoIterator<Item = &'a str>) -> Vec<(String, String)> {
    let set: BTreeSet<&str> = readers.into_iter().collect();
    let v: Vec<&str> = set.into_iter().collect();
    let mut out = Vec::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            out.push((v[i].to_string(), v[j].to_string()));
        }
    }
    out
}
