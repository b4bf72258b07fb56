//! Shared domain types.
//!
//! Volumes are stored Z-major then row-major: the voxel at `(z, y, x)` lives at
//! `z * h * w + y * w + x`. Row 0 is the anterior edge of the slice.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// b-values present in the acquisition protocol (s/mm²).
pub const B_VALUES: [u32; 3] = [50, 750, 1500];

/// Default slice target size after resizing, `(cols, rows)`.
pub const TARGET_COLS: usize = 160;
pub const TARGET_ROWS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub z: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(z: usize, h: usize, w: usize) -> Self {
        Self { z, h, w }
    }

    pub fn len(&self) -> usize {
        self.z * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let plane = self.slice_len();
        (idx / plane, (idx % plane) / self.w, idx % self.w)
    }

    fn check_nonzero(&self) -> Result<()> {
        if self.z == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Invalid(format!("volume dims must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.z, self.h, self.w)
    }
}

/// A diffusion-weighted volume, `Z x H x W` non-negative finite intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiVolume {
    pub case_id: String,
    pub b_value: u32,
    pub dims: Dims,
    /// `(dz, dy, dx)` in mm.
    pub spacing: [f64; 3],
    voxels: Vec<f32>,
}

impl DwiVolume {
    pub fn new(
        case_id: impl Into<String>,
        b_value: u32,
        dims: Dims,
        spacing: [f64; 3],
        voxels: Vec<f32>,
    ) -> Result<Self> {
        dims.check_nonzero()?;
        if !B_VALUES.contains(&b_value) {
            return Err(Error::Invalid(format!(
                "b-value {b_value} not one of {B_VALUES:?}"
            )));
        }
        if voxels.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "{} voxels for dims {dims}",
                voxels.len()
            )));
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = voxels.iter().position(|&v| v < 0.0) {
            return Err(Error::Invalid(format!("negative intensity at voxel {i}")));
        }
        Ok(Self {
            case_id: case_id.into(),
            b_value,
            dims,
            spacing,
            voxels,
        })
    }

    /// Same metadata, new voxel payload (validated).
    pub fn with_voxels(&self, voxels: Vec<f32>) -> Result<Self> {
        Self::new(
            self.case_id.clone(),
            self.b_value,
            self.dims,
            self.spacing,
            voxels,
        )
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.dims.index(z, y, x)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        min_max(&self.voxels)
    }
}

/// Binary mask paired with a [`DwiVolume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    pub case_id: String,
    pub dims: Dims,
    voxels: Vec<u8>,
}

impl MaskVolume {
    pub fn new(case_id: impl Into<String>, dims: Dims, voxels: Vec<u8>) -> Result<Self> {
        dims.check_nonzero()?;
        if voxels.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "{} mask voxels for dims {dims}",
                voxels.len()
            )));
        }
        if let Some(i) = voxels.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!(
                "mask value {} at voxel {i} is not binary",
                voxels[i]
            )));
        }
        Ok(Self {
            case_id: case_id.into(),
            dims,
            voxels,
        })
    }

    pub fn zeros(case_id: impl Into<String>, dims: Dims) -> Self {
        Self {
            case_id: case_id.into(),
            dims,
            voxels: vec![0; dims.len()],
        }
    }

    pub fn ones(case_id: impl Into<String>, dims: Dims) -> Self {
        Self {
            case_id: case_id.into(),
            dims,
            voxels: vec![1; dims.len()],
        }
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().map(|&v| v as usize).sum()
    }

    /// True when every foreground voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &MaskVolume) -> bool {
        self.dims == other.dims
            && self
                .voxels
                .iter()
                .zip(&other.voxels)
                .all(|(&a, &b)| a <= b)
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::DimMismatch(format!(
                "mask dims {} vs volume dims {dims}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// Row-major 2D image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimMismatch(format!(
                "{} pixels for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn code(self) -> char {
        match self {
            Side::Left => 'L',
            Side::Right => 'R',
        }
    }

    /// Column range `[start, end)` of this half in a slice `w` wide.
    pub fn columns(self, w: usize) -> std::ops::Range<usize> {
        match self {
            Side::Left => 0..w / 2,
            Side::Right => w / 2..w,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "L" => Ok(Side::Left),
            "right" | "R" => Ok(Side::Right),
            other => Err(Error::Invalid(format!("unknown side {other:?}"))),
        }
    }
}

/// Canonical slice identifier, e.g. `case_007_L_012`.
pub fn slice_id(case_id: &str, side: Side, slice_index: usize) -> String {
    format!("{case_id}_{}_{slice_index:03}", side.code())
}

/// Inverse of [`slice_id`]: `(case_id, side, slice_index)`.
pub fn parse_slice_id(id: &str) -> Result<(&str, Side, usize)> {
    let bad = || Error::Invalid(format!("malformed slice id {id:?}"));
    let (rest, z) = id.rsplit_once('_').ok_or_else(bad)?;
    let (case, side) = rest.rsplit_once('_').ok_or_else(bad)?;
    if case.is_empty() || z.is_empty() || !z.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let side = match side {
        "L" => Side::Left,
        "R" => Side::Right,
        _ => return Err(bad()),
    };
    Ok((case, side, z.parse().map_err(|_| bad())?))
}

/// One breast half-slice, after preprocessing `160 x 128` 8-bit pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub slice_id: String,
    pub case_id: String,
    pub side: Side,
    pub slice_index: usize,
    pub pixels: Plane<u8>,
}

/// Artifact polarity; also names the per-polarity classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Artifact {
    Hyper,
    Hypo,
}

impl Artifact {
    pub const BOTH: [Artifact; 2] = [Artifact::Hyper, Artifact::Hypo];
}

impl fmt::Display for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Artifact::Hyper => "hyper",
            Artifact::Hypo => "hypo",
        })
    }
}

impl FromStr for Artifact {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyper" => Ok(Artifact::Hyper),
            "hypo" => Ok(Artifact::Hypo),
            other => Err(Error::Invalid(format!("unknown artifact task {other:?}"))),
        }
    }
}

/// Per-slice severity scores from one reader. Scores are 1-5 with 6 marking
/// an ambiguous slice awaiting adjudication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactLabel {
    pub slice_id: String,
    pub reader_id: String,
    pub hyper_score: u8,
    pub hypo_score: u8,
    #[serde(default)]
    pub resolved: bool,
}

impl ArtifactLabel {
    pub fn new(
        slice_id: impl Into<String>,
        reader_id: impl Into<String>,
        hyper_score: u8,
        hypo_score: u8,
        resolved: bool,
    ) -> Self {
        Self {
            slice_id: slice_id.into(),
            reader_id: reader_id.into(),
            hyper_score,
            hypo_score,
            resolved,
        }
    }

    pub fn score(&self, artifact: Artifact) -> u8 {
        match artifact {
            Artifact::Hyper => self.hyper_score,
            Artifact::Hypo => self.hypo_score,
        }
    }

    pub fn has_ambiguous(&self) -> bool {
        self.hyper_score == 6 || self.hypo_score == 6
    }

    pub fn validate(&self) -> Result<()> {
        if self.reader_id.is_empty() {
            return Err(Error::Invalid("reader_id is required".into()));
        }
        if self.slice_id.is_empty() {
            return Err(Error::Invalid("slice_id is required".into()));
        }
        let max = if self.resolved { 5 } else { 6 };
        for (what, s) in [("hyper", self.hyper_score), ("hypo", self.hypo_score)] {
            if !(1..=max).contains(&s) {
                return Err(Error::ScoreRange {
                    what: format!("{what} score of {}", self.slice_id),
                    score: s as i64,
                    min: 1,
                    max,
                });
            }
        }
        Ok(())
    }
}

/// Reader quality score for one slice's bounding boxes (1 = no overlap with
/// the artifact, 5 = precise location).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxScore {
    pub slice_id: String,
    pub reader_id: String,
    pub score: u8,
}

impl BoxScore {
    pub fn validate(&self) -> Result<()> {
        if self.reader_id.is_empty() {
            return Err(Error::Invalid("reader_id is required".into()));
        }
        if !(1..=5).contains(&self.score) {
            return Err(Error::ScoreRange {
                what: format!("box score of {}", self.slice_id),
                score: self.score as i64,
                min: 1,
                max: 5,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn position(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::Invalid(format!("unknown subset {other:?}"))),
        }
    }
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Case-to-subset assignment for one artifact task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub task: Artifact,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub assignments: BTreeMap<String, Subset>,
}

impl SplitManifest {
    pub fn subset_of(&self, case_id: &str) -> Option<Subset> {
        self.assignments.get(case_id).copied()
    }

    pub fn cases(&self, subset: Subset) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &s)| s == subset)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::Invalid(format!(
                "split fractions {:?} must be in [0,1] and sum to 1",
                self.fractions
            )));
        }
        Ok(())
    }
}

pub(crate) fn min_max(values: &[f32]) -> (f32, f32) {
    values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_index_roundtrip() {
        let d = Dims::new(3, 4, 5);
        for i in 0..d.len() {
            let (z, y, x) = d.coords(i);
            assert_eq!(d.index(z, y, x), i);
        }
    }

    #[test]
    fn volume_rejects_bad_input() {
        let d = Dims::new(1, 1, 2);
        assert!(DwiVolume::new("c", 1500, d, [1.0; 3], vec![0.0]).is_err());
        assert!(DwiVolume::new("c", 1000, d, [1.0; 3], vec![0.0, 1.0]).is_err());
        assert!(DwiVolume::new("c", 1500, d, [1.0; 3], vec![-1.0, 1.0]).is_err());
        assert!(matches!(
            DwiVolume::new("c", 1500, d, [1.0; 3], vec![f32::NAN, 1.0]),
            Err(Error::NonFinite(0))
        ));
        assert!(DwiVolume::new("c", 1500, Dims::new(0, 1, 1), [1.0; 3], vec![]).is_err());
        assert!(MaskVolume::new("c", d, vec![0, 2]).is_err());
    }

    #[test]
    fn label_validation() {
        assert!(ArtifactLabel::new("s", "GT", 6, 1, false).validate().is_ok());
        assert!(ArtifactLabel::new("s", "GT", 6, 1, true).validate().is_err());
        assert!(ArtifactLabel::new("s", "GT", 0, 1, false).validate().is_err());
        assert!(ArtifactLabel::new("s", "", 1, 1, false).validate().is_err());
        let b = BoxScore {
            slice_id: "s".into(),
            reader_id: "R".into(),
            score: 6,
        };
        assert!(b.validate().is_err());
    }

    #[test]
    fn slice_id_roundtrip() {
        let id = slice_id("case_007", Side::Right, 12);
        assert_eq!(id, "case_007_R_012");
        assert_eq!(parse_slice_id(&id).unwrap(), ("case_007", Side::Right, 12));
        for bad in ["", "c_X_001", "c_L_", "_L_001", "c_L_1a", "noseparators"] {
            assert!(parse_slice_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn side_columns_partition() {
        for w in [2usize, 3, 320, 321] {
            let l = Side::Left.columns(w);
            let r = Side::Right.columns(w);
            assert_eq!(l.start, 0);
            assert_eq!(l.end, r.start);
            assert_eq!(r.end, w);
        }
        assert_eq!(Side::Left.columns(320), 0..160);
        assert_eq!(Side::Right.columns(320), 160..320);
    }
}
