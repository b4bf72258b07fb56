//! Breast masking, maximum intensity projections and slice extraction.

pub mod morphology;
pub mod resample;

use serde::{Deserialize, Serialize};

use crate::types::{min_max, slice_id, Artifact, DwiVolume, MaskVolume, Plane, Side, SliceRecord, TARGET_COLS, TARGET_ROWS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Slices on each side of `z` contributing to the adjacent-slice MIP.
    pub adjacent_window_k: usize,
    pub dilation_radius: usize,
    pub closing_radius: usize,
    pub sternum_row_fraction_threshold: f64,
    pub target_cols: usize,
    pub target_rows: usize,
    pub jpeg_quality: u8,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            adjacent_window_k: 2,
            dilation_radius: 3,
            closing_radius: 5,
            sternum_row_fraction_threshold: 0.6,
            target_cols: TARGET_COLS,
            target_rows: TARGET_ROWS,
            jpeg_quality: 95,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adjacent_window_k < 1 {
            return Err(Error::Invalid("adjacent_window_k must be >= 1".into()));
        }
        if self.dilation_radius < 1 || self.closing_radius < 1 {
            return Err(Error::Invalid("morphology radii must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sternum_row_fraction_threshold) {
            return Err(Error::Invalid("sternum threshold must be in [0, 1]".into()));
        }
        if self.target_cols == 0 || self.target_rows == 0 {
            return Err(Error::Invalid("target size must be non-zero".into()));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(Error::Invalid("jpeg_quality must be in 1..=100".into()));
        }
        Ok(())
    }
}

/// Result of mask generation. An all-empty mask is reported, not rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct BreastMask {
    pub mask: MaskVolume,
    pub warnings: Vec<String>,
}

/// Threshold each slice's adjacent-slice MIP at its mean (strictly greater is
/// kept), then dilate and close.
pub fn compute_breast_mask(t1_like: &DwiVolume, cfg: &PreprocessConfig) -> Result<BreastMask> {
    cfg.validate()?;
    let d = t1_like.dims;
    let n = d.slice_len();
    let k = cfg.adjacent_window_k;
    let mut out = Vec::with_capacity(d.len());
    let mut mip = vec![0f32; n];
    for z in 0..d.z {
        let lo = z.saturating_sub(k);
        let hi = (z + k).min(d.z - 1);
        mip.copy_from_slice(t1_like.slice(lo));
        for zz in lo + 1..=hi {
            for (m, &v) in mip.iter_mut().zip(t1_like.slice(zz)) {
                *m = m.max(v);
            }
        }
        let mean = mip.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let bin: Vec<u8> = mip.iter().map(|&v| (v as f64 > mean) as u8).collect();
        let dil = morphology::dilate(&bin, d.w, d.h, cfg.dilation_radius);
        out.extend(morphology::close(&dil, d.w, d.h, cfg.closing_radius));
    }
    let mask = MaskVolume::new(t1_like.case_id.clone(), d, out)?;
    let mut warnings = Vec::new();
    if mask.count() == 0 {
        warnings.push(format!(
            "breast mask for {} is empty (no voxel exceeds its window mean)",
            t1_like.case_id
        ));
    }
    Ok(BreastMask { mask, warnings })
}

/// Remove thoracic rows. Scanning each slice from the anterior edge, the first
/// row whose occupancy exceeds `threshold * W` marks the chest wall; every row
/// posterior to it is cleared. Slices without such a row are left unchanged.
pub fn crop_sternum(mask: &MaskVolume, cfg: &PreprocessConfig) -> MaskVolume {
    let d = mask.dims;
    let limit = cfg.sternum_row_fraction_threshold * d.w as f64;
    let mut out = mask.voxels().to_vec();
    for z in 0..d.z {
        let plane = &mut out[z * d.slice_len()..(z + 1) * d.slice_len()];
        let wall = (0..d.h).find(|&y| {
            let occ: usize = plane[y * d.w..(y + 1) * d.w].iter().map(|&v| v as usize).sum();
            occ as f64 > limit
        });
        if let Some(row) = wall {
            plane[(row + 1) * d.w..].fill(0);
        }
    }
    MaskVolume::new(mask.case_id.clone(), d, out).expect("cropping keeps the mask binary")
}

pub fn apply_mask(v: &DwiVolume, mask: &MaskVolume) -> Result<DwiVolume> {
    mask.check_dims(v.dims)?;
    let voxels = v
        .voxels()
        .iter()
        .zip(mask.voxels())
        .map(|(&x, &m)| if m == 1 { x } else { 0.0 })
        .collect();
    v.with_voxels(voxels)
}

/// Per-volume min-max normalisation to `[0, 1]`; a constant volume maps to zeros.
pub fn normalize_volume(v: &DwiVolume) -> Vec<f32> {
    let (lo, hi) = v.min_max();
    if hi <= lo {
        return vec![0.0; v.voxels().len()];
    }
    let span = (hi - lo) as f64;
    v.voxels()
        .iter()
        .map(|&x| ((x - lo) as f64 / span) as f32)
        .collect()
}

/// Per-pixel maximum across slices of a `Z x H x W` stack.
pub fn project_max(stack: &[f32], z: usize, plane_len: usize) -> Vec<f32> {
    let mut out = vec![f32::NEG_INFINITY; plane_len];
    for s in 0..z {
        for (o, &v) in out.iter_mut().zip(&stack[s * plane_len..(s + 1) * plane_len]) {
            *o = o.max(v);
        }
    }
    out
}

pub fn invert(values: &[f32]) -> Vec<f32> {
    values.iter().map(|&v| 1.0 - v).collect()
}

/// Maximum intensity projection along z for one artifact polarity.
///
/// Hyper: normalise, mask, project, invert (bright artifacts show dark).
/// Hypo: normalise, invert, mask, project (dark artifacts show bright).
pub fn mip(v: &DwiVolume, polarity: Artifact, mask: &MaskVolume) -> Result<Plane<f32>> {
    mask.check_dims(v.dims)?;
    let d = v.dims;
    let norm = normalize_volume(v);
    let prepared: Vec<f32> = match polarity {
        Artifact::Hyper => mask_values(&norm, mask.voxels()),
        Artifact::Hypo => mask_values(&invert(&norm), mask.voxels()),
    };
    let projected = project_max(&prepared, d.z, d.slice_len());
    let data = match polarity {
        Artifact::Hyper => invert(&projected),
        Artifact::Hypo => projected,
    };
    Plane::new(d.w, d.h, data)
}

fn mask_values(values: &[f32], mask: &[u8]) -> Vec<f32> {
    values
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
        .collect()
}

/// `round(255 * (x - min) / (max - min))`, half away from zero; a constant
/// input maps to zeros.
pub fn rescale_to_u8(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = min_max(values);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let span = (hi - lo) as f64;
    values
        .iter()
        .map(|&x| (255.0 * (x - lo) as f64 / span).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Split every masked slice at `floor(W / 2)` into breast halves, rescale each
/// half to 0-255 and resize it to the target size.
pub fn extract_slices(v: &DwiVolume, mask: &MaskVolume, cfg: &PreprocessConfig) -> Result<Vec<SliceRecord>> {
    let d = v.dims;
    if d.w < 2 {
        return Err(Error::Invalid(format!("slice width {} < 2 cannot be halved", d.w)));
    }
    let masked = apply_mask(v, mask)?;
    let mut out = Vec::with_capacity(d.z * 2);
    for z in 0..d.z {
        let plane = masked.slice(z);
        for side in Side::BOTH {
            let cols = side.columns(d.w);
            let hw = cols.len();
            let mut half = Vec::with_capacity(hw * d.h);
            for y in 0..d.h {
                half.extend_from_slice(&plane[y * d.w + cols.start..y * d.w + cols.end]);
            }
            let scaled = Plane::new(hw, d.h, rescale_to_u8(&half))?;
            let pixels = resample::resize_u8(&scaled, cfg.target_cols, cfg.target_rows);
            out.push(SliceRecord {
                slice_id: slice_id(&v.case_id, side, z),
                case_id: v.case_id.clone(),
                side,
                slice_index: z,
                pixels,
            });
        }
    }
    Ok(out)
}

/// Min-max scale 8-bit pixels to `[0, 1]`; a constant image maps to zeros.
pub fn normalize01(pixels: &Plane<u8>) -> Plane<f32> {
    let (lo, hi) = pixels
        .data
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return Plane::filled(pixels.width, pixels.height, 0.0);
    }
    let span = (hi - lo) as f32;
    pixels.map(|v| (v - lo) as f32 / span)
}

/// Structural mask generation, sternum crop, grid matching and slice extraction for one case.
pub fn preprocess_case(
    structural: &DwiVolume,
    dwi: &DwiVolume,
    cfg: &PreprocessConfig,
) -> Result<(BreastMask, Vec<SliceRecord>)> {
    let mut bm = compute_breast_mask(structural, cfg)?;
    bm.mask = resample::resample_mask(&crop_sternum(&bm.mask, cfg), dwi.dims);
    bm.mask.case_id = dwi.case_id.clone();
    let slices = extract_slices(dwi, &bm.mask, cfg)?;
    Ok((bm, slices))
}
