//! Synthetic breast DWI phantoms with injected artifacts of known severity.
//!
//! Each case has two breasts (anterior, rows near 0) above a thorax band.
//! The high-b-value channel is a low-contrast, low-pass textured field with
//! sparse bright foci and rectified Gaussian noise; a noise-free structural
//! channel gives the same geometry for mask generation.
//!
//! Random streams are split by purpose (background, plan, artifacts), so the
//! artifact-free volume of a seed is reproducible by generating the same seed
//! with an empty plan.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::types::{slice_id, Artifact, ArtifactLabel, Dims, DwiVolume, MaskVolume, Side};
use crate::{Error, Result};

pub const GT_READER: &str = "GT_SYNTH";

/// Intensity floor inside the breast so that darkening is always visible.
const TISSUE_FLOOR: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    CoilFlare,
    SkinFold,
    PulsationGhost,
    SignalVoid,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::CoilFlare,
        ArtifactKind::SkinFold,
        ArtifactKind::PulsationGhost,
        ArtifactKind::SignalVoid,
    ];

    pub fn polarity(self) -> Artifact {
        match self {
            ArtifactKind::CoilFlare | ArtifactKind::SkinFold => Artifact::Hyper,
            ArtifactKind::PulsationGhost | ArtifactKind::SignalVoid => Artifact::Hypo,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::CoilFlare => "coil_flare",
            ArtifactKind::SkinFold => "skin_fold",
            ArtifactKind::PulsationGhost => "pulsation_ghost",
            ArtifactKind::SignalVoid => "signal_void",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown artifact kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityLevel {
    pub severity: u8,
    /// Peak added intensity of hyperintense kinds, as a multiple of the
    /// volume's robust maximum (99th percentile inside the mask).
    pub amplitude: f64,
    /// Strongest multiplicative factor of hypointense kinds.
    pub darkening: f64,
    /// Region area per affected slice as a fraction of that half's breast area.
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeverityTable {
    pub levels: Vec<SeverityLevel>,
}

impl Default for SeverityTable {
    fn default() -> Self {
        let level = |severity, amplitude, darkening, area_fraction| SeverityLevel {
            severity,
            amplitude,
            darkening,
            area_fraction,
        };
        Self {
            levels: vec![
                level(2, 1.5, 0.6, 0.01),
                level(3, 2.5, 0.4, 0.03),
                level(4, 4.0, 0.2, 0.08),
                level(5, 6.0, 0.05, 0.15),
            ],
        }
    }
}

impl SeverityTable {
    pub fn empty() -> Self {
        Self { levels: Vec::new() }
    }

    pub fn get(&self, severity: u8) -> Option<&SeverityLevel> {
        self.levels.iter().find(|l| l.severity == severity)
    }

    pub fn severities(&self) -> Vec<u8> {
        self.levels.iter().map(|l| l.severity).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("severity table: {msg}")));
        for l in &self.levels {
            if !(2..=5).contains(&l.severity) {
                return bad(format!("severity {} outside 2..=5", l.severity));
            }
            if !(l.amplitude > 0.0) || !l.amplitude.is_finite() {
                return bad(format!("amplitude of {} must be positive", l.severity));
            }
            if !(0.0..1.0).contains(&l.darkening) {
                return bad(format!("darkening of {} must be in [0, 1)", l.severity));
            }
            if !(l.area_fraction > 0.0 && l.area_fraction <= 1.0) {
                return bad(format!("area fraction of {} must be in (0, 1]", l.severity));
            }
            if l.severity == 5 && l.area_fraction > 0.5 {
                return bad("area fraction of severity 5 exceeds 0.5".into());
            }
        }
        for pair in self.levels.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b.severity <= a.severity {
                return bad("levels must be listed in increasing severity".into());
            }
            if b.amplitude <= a.amplitude || b.area_fraction <= a.area_fraction {
                return bad(format!(
                    "amplitude and area must strictly increase from {} to {}",
                    a.severity, b.severity
                ));
            }
            if b.darkening >= a.darkening {
                return bad(format!(
                    "darkening must strictly deepen from {} to {}",
                    a.severity, b.severity
                ));
            }
        }
        Ok(())
    }
}

/// Breast and thorax geometry, as fractions of the slice height/width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreastGeometry {
    /// Column centres of the left and right breast.
    pub centres: [f64; 2],
    pub half_width: f64,
    /// Row of the anterior tip and of the base (chest side) of each breast.
    pub tip_row: f64,
    pub base_row: f64,
    /// Rows `[thorax_top, thorax_bottom)` hold the thorax band.
    pub thorax_top: f64,
    pub thorax_bottom: f64,
    pub thorax_half_width: f64,
    /// Relative breast shrink at the first and last slice (0 = no taper).
    pub z_taper: f64,
}

impl Default for BreastGeometry {
    fn default() -> Self {
        Self {
            centres: [0.25, 0.75],
            half_width: 0.11,
            tip_row: 0.08,
            base_row: 0.45,
            thorax_top: 0.55,
            thorax_bottom: 0.95,
            thorax_half_width: 0.45,
            z_taper: 0.6,
        }
    }
}

/// One artifact to inject: `z_start..=z_end` on one breast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub severity: u8,
    pub side: Side,
    pub z_start: usize,
    pub z_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ArtifactPlan {
    /// Per side and polarity, `0..=max_per_side` artifacts with uniformly
    /// drawn kind, severity and slice span.
    Random {
        max_per_side: usize,
        min_len: usize,
        max_len: usize,
    },
    Explicit { artifacts: Vec<ArtifactSpec> },
}

impl Default for ArtifactPlan {
    fn default() -> Self {
        ArtifactPlan::Random {
            max_per_side: 2,
            min_len: 3,
            max_len: 12,
        }
    }
}

impl ArtifactPlan {
    pub fn none() -> Self {
        ArtifactPlan::Explicit {
            artifacts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub case_id: String,
    pub seed: u64,
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub background_noise_sigma: f64,
    /// Mean-ish tissue intensity of the high-b channel.
    pub tissue_level: f64,
    pub foci_per_breast: usize,
    pub breasts: BreastGeometry,
    pub severity_table: SeverityTable,
    pub artifacts: ArtifactPlan,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            case_id: "phantom_000".into(),
            seed: 0,
            dims: Dims::new(40, 256, 320),
            spacing: [4.0, 1.0, 1.0],
            background_noise_sigma: 4.0,
            tissue_level: 60.0,
            foci_per_breast: 6,
            breasts: BreastGeometry::default(),
            severity_table: SeverityTable::default(),
            artifacts: ArtifactPlan::default(),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        self.severity_table.validate()?;
        let d = self.dims;
        if d.z == 0 || d.h < 16 || d.w < 16 {
            return Err(Error::Invalid(format!("phantom dims {d} too small (need Z >= 1, H, W >= 16)")));
        }
        if !(self.background_noise_sigma >= 0.0) || !(self.tissue_level > 0.0) {
            return Err(Error::Invalid("noise sigma must be >= 0 and tissue level > 0".into()));
        }
        let g = &self.breasts;
        if !(g.tip_row < g.base_row && g.base_row < g.thorax_top && g.thorax_top < g.thorax_bottom) {
            return Err(Error::Invalid("breast geometry rows must be ordered tip < base < thorax".into()));
        }
        if let ArtifactPlan::Random { min_len, max_len, .. } = self.artifacts {
            if min_len == 0 || min_len > max_len {
                return Err(Error::Invalid("random plan needs 1 <= min_len <= max_len".into()));
            }
        }
        Ok(())
    }
}

/// Sparse voxel set stored as `[start, len]` runs of flat indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub runs: Vec<[u32; 2]>,
}

impl Region {
    pub fn from_sorted(indices: &[usize]) -> Self {
        let mut runs: Vec<[u32; 2]> = Vec::new();
        for &i in indices {
            let i = i as u32;
            match runs.last_mut() {
                Some([s, l]) if *s + *l == i => *l += 1,
                _ => runs.push([i, 1]),
            }
        }
        Self { runs }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.runs
            .iter()
            .flat_map(|&[s, l]| (s as usize)..(s + l) as usize)
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|r| r[1] as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn slices(&self, dims: Dims) -> BTreeSet<usize> {
        self.iter().map(|i| dims.coords(i).0).collect()
    }

    pub fn to_mask(&self, case_id: &str, dims: Dims) -> MaskVolume {
        let mut v = vec![0u8; dims.len()];
        for i in self.iter() {
            v[i] = 1;
        }
        MaskVolume::new(case_id, dims, v).expect("region mask is binary")
    }
}

/// Injection log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedArtifact {
    #[serde(flatten)]
    pub spec: ArtifactSpec,
    pub polarity: Artifact,
    pub seed: u64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub case_id: String,
    pub dims: Dims,
    pub artifacts: Vec<InjectedArtifact>,
}

impl GroundTruth {
    /// Score of one half-slice: the largest severity among artifacts of that
    /// polarity whose region touches it, else 1.
    pub fn score(&self, polarity: Artifact, side: Side, z: usize) -> u8 {
        let cols = side.columns(self.dims.w);
        self.artifacts
            .iter()
            .filter(|a| a.polarity == polarity)
            .filter(|a| {
                a.region.iter().any(|i| {
                    let (zz, _, x) = self.dims.coords(i);
                    zz == z && cols.contains(&x)
                })
            })
            .map(|a| a.spec.severity)
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub dwi: DwiVolume,
    /// Noise-free anatomy channel used for mask generation.
    pub structural: DwiVolume,
    /// True breast region; every injected artifact lies inside it.
    pub mask: MaskVolume,
    pub truth: GroundTruth,
}

const STREAM_BACKGROUND: u64 = 0;
const STREAM_PLAN: u64 = 1;
const STREAM_ARTIFACTS: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tissue {
    Background,
    Breast,
    Thorax,
}

fn anatomy(cfg: &PhantomConfig) -> Vec<Tissue> {
    let d = cfg.dims;
    let g = &cfg.breasts;
    let (h, w) = (d.h as f64, d.w as f64);
    let mut out = vec![Tissue::Background; d.len()];
    let mid = (d.z as f64 - 1.0) / 2.0;
    for z in 0..d.z {
        let t = if d.z > 1 { (z as f64 - mid) / (d.z as f64 / 2.0) } else { 0.0 };
        let scale = (1.0 - g.z_taper * t * t).max(0.05).sqrt();
        let base = g.base_row * h;
        let depth = (g.base_row - g.tip_row) * h * scale;
        let hw = g.half_width * w * scale;
        for y in 0..d.h {
            let yc = y as f64 + 0.5;
            for x in 0..d.w {
                let xc = x as f64 + 0.5;
                let breast = yc <= base
                    && g.centres.iter().any(|&c| {
                        let dx = (xc - c * w) / hw;
                        let dy = (base - yc) / depth;
                        dx * dx + dy * dy <= 1.0
                    });
                let thorax = yc >= g.thorax_top * h
                    && yc < g.thorax_bottom * h
                    && (xc - w / 2.0).abs() <= g.thorax_half_width * w;
                out[d.index(z, y, x)] = if breast {
                    Tissue::Breast
                } else if thorax {
                    Tissue::Thorax
                } else {
                    Tissue::Background
                };
            }
        }
    }
    out
}

/// Trilinear interpolation of a coarse uniform random grid, rescaled to [0, 1].
fn lowpass_texture(d: Dims, rng: &mut ChaCha8Rng) -> Vec<f32> {
    const CELL_Z: usize = 4;
    const CELL_XY: usize = 16;
    let gz = d.z / CELL_Z + 2;
    let gy = d.h / CELL_XY + 2;
    let gx = d.w / CELL_XY + 2;
    let grid: Vec<f32> = (0..gz * gy * gx).map(|_| rng.random::<f32>()).collect();
    let at = |z: usize, y: usize, x: usize| grid[(z * gy + y) * gx + x];
    let mut out = Vec::with_capacity(d.len());
    for z in 0..d.z {
        let fz = z as f32 / CELL_Z as f32;
        let (z0, tz) = (fz as usize, fz.fract());
        for y in 0..d.h {
            let fy = y as f32 / CELL_XY as f32;
            let (y0, ty) = (fy as usize, fy.fract());
            for x in 0..d.w {
                let fx = x as f32 / CELL_XY as f32;
                let (x0, tx) = (fx as usize, fx.fract());
                let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
                let plane = |zz: usize| {
                    lerp(
                        lerp(at(zz, y0, x0), at(zz, y0, x0 + 1), tx),
                        lerp(at(zz, y0 + 1, x0), at(zz, y0 + 1, x0 + 1), tx),
                        ty,
                    )
                };
                out.push(lerp(plane(z0), plane(z0 + 1), tz));
            }
        }
    }
    let (lo, hi) = crate::types::min_max(&out);
    if hi > lo {
        out.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    }
    out
}

fn add_foci(cfg: &PhantomConfig, tissue: &[Tissue], out: &mut [f32], rng: &mut ChaCha8Rng) {
    let d = cfg.dims;
    for &c in &cfg.breasts.centres {
        let cx = c * d.w as f64;
        let hw = (cfg.breasts.half_width * d.w as f64).max(1.0);
        for _ in 0..cfg.foci_per_breast {
            // Rejection-sample a breast voxel near this breast.
            let mut centre = None;
            for _ in 0..200 {
                let z = rng.random_range(0..d.z);
                let y = rng.random_range(0..d.h);
                let x = (cx + rng.random_range(-hw..hw)).clamp(0.0, d.w as f64 - 1.0) as usize;
                if tissue[d.index(z, y, x)] == Tissue::Breast {
                    centre = Some((z, y, x));
                    break;
                }
            }
            let amplitude = cfg.tissue_level as f32 * rng.random_range(0.8f32..1.6);
            let sigma = rng.random_range(1.2f32..2.4);
            let Some((fz, fy, fx)) = centre else { continue };
            let r = (3.0 * sigma).ceil() as i64;
            for dz in -1i64..=1 {
                let z = fz as i64 + dz;
                if z < 0 || z >= d.z as i64 {
                    continue;
                }
                let zfall = (-(dz * dz) as f32 / 1.2).exp();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, x) = (fy as i64 + dy, fx as i64 + dx);
                        if y < 0 || x < 0 || y >= d.h as i64 || x >= d.w as i64 {
                            continue;
                        }
                        let i = d.index(z as usize, y as usize, x as usize);
                        if tissue[i] == Tissue::Breast {
                            let r2 = (dx * dx + dy * dy) as f32;
                            out[i] += amplitude * zfall * (-r2 / (2.0 * sigma * sigma)).exp();
                        }
                    }
                }
            }
        }
    }
}

fn draw_plan(cfg: &PhantomConfig) -> Vec<ArtifactSpec> {
    let ArtifactPlan::Random {
        max_per_side,
        min_len,
        max_len,
    } = cfg.artifacts
    else {
        unreachable!("explicit plans are not drawn")
    };
    let severities = cfg.severity_table.severities();
    if severities.is_empty() {
        return Vec::new();
    }
    let mut rng = stream(cfg.seed, STREAM_PLAN);
    let z = cfg.dims.z;
    let mut out = Vec::new();
    for side in Side::BOTH {
        for polarity in Artifact::BOTH {
            let kinds: Vec<ArtifactKind> = ArtifactKind::ALL
                .into_iter()
                .filter(|k| k.polarity() == polarity)
                .collect();
            for _ in 0..rng.random_range(0..=max_per_side) {
                let kind = kinds[rng.random_range(0..kinds.len())];
                let severity = severities[rng.random_range(0..severities.len())];
                let len = rng.random_range(min_len..=max_len).min(z);
                let z_start = rng.random_range(0..=z - len);
                out.push(ArtifactSpec {
                    kind,
                    severity,
                    side,
                    z_start,
                    z_end: z_start + len - 1,
                });
            }
        }
    }
    out
}

/// Build one phantom case from its config.
pub fn generate_case(cfg: &PhantomConfig) -> Result<PhantomCase> {
    cfg.validate()?;
    let d = cfg.dims;
    let tissue = anatomy(cfg);

    let mask_voxels: Vec<u8> = tissue.iter().map(|&t| (t == Tissue::Breast) as u8).collect();
    let mask = MaskVolume::new(cfg.case_id.clone(), d, mask_voxels)?;
    let structural_voxels: Vec<f32> = tissue
        .iter()
        .map(|t| match t {
            Tissue::Breast => 1.0,
            Tissue::Thorax => 0.8,
            Tissue::Background => 0.0,
        })
        .collect();
    let structural = DwiVolume::new(cfg.case_id.clone(), 50, d, cfg.spacing, structural_voxels)?;

    let mut rng = stream(cfg.seed, STREAM_BACKGROUND);
    let texture = lowpass_texture(d, &mut rng);
    let level = cfg.tissue_level as f32;
    let mut voxels: Vec<f32> = tissue
        .iter()
        .zip(&texture)
        .map(|(t, &tex)| match t {
            Tissue::Breast => level * (0.55 + 0.45 * tex),
            Tissue::Thorax => level * 0.35 * (0.5 + 0.5 * tex),
            Tissue::Background => 0.0,
        })
        .collect();
    add_foci(cfg, &tissue, &mut voxels, &mut rng);
    if cfg.background_noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, cfg.background_noise_sigma as f32)
            .map_err(|e| Error::Invalid(format!("noise: {e}")))?;
        for v in voxels.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).abs();
        }
    }
    for (v, &m) in voxels.iter_mut().zip(mask.voxels()) {
        if m == 1 {
            *v = v.max(TISSUE_FLOOR);
        }
    }
    let mut dwi = DwiVolume::new(cfg.case_id.clone(), 1500, d, cfg.spacing, voxels)?;

    let specs = match &cfg.artifacts {
        ArtifactPlan::Explicit { artifacts } => artifacts.clone(),
        ArtifactPlan::Random { .. } => draw_plan(cfg),
    };
    let mut seeds = stream(cfg.seed, STREAM_ARTIFACTS);
    let mut artifacts = Vec::with_capacity(specs.len());
    for spec in specs {
        let seed = seeds.next_u64();
        let (next, region) = inject_artifact(&dwi, &mask, &spec, &cfg.severity_table, seed)?;
        dwi = next;
        artifacts.push(InjectedArtifact {
            spec,
            polarity: spec.kind.polarity(),
            seed,
            region,
        });
    }
    Ok(PhantomCase {
        dwi,
        structural,
        mask,
        truth: GroundTruth {
            case_id: cfg.case_id.clone(),
            dims: d,
            artifacts,
        },
    })
}

/// 99th percentile of the voxels inside `mask`.
pub fn robust_max(v: &DwiVolume, mask: &MaskVolume) -> Option<f32> {
    let mut inside: Vec<f32> = v
        .voxels()
        .iter()
        .zip(mask.voxels())
        .filter(|(_, &m)| m == 1)
        .map(|(&x, _)| x)
        .collect();
    if inside.is_empty() {
        return None;
    }
    let k = ((inside.len() - 1) as f64 * 0.99).round() as usize;
    let (_, kth, _) = inside.select_nth_unstable_by(k, f32::total_cmp);
    Some(*kth)
}

/// Chamfer (3-4) distance to the nearest pixel outside `inside`, in pixels.
fn distance_to_outside(inside: &[bool], w: usize, h: usize) -> Vec<f32> {
    const BIG: u32 = u32::MAX / 4;
    let mut d: Vec<u32> = inside.iter().map(|&b| if b { BIG } else { 0 }).collect();
    let get = |d: &[u32], y: i64, x: i64| {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let best = [
                get(&d, y, x - 1) + 3,
                get(&d, y - 1, x) + 3,
                get(&d, y - 1, x - 1) + 4,
                get(&d, y - 1, x + 1) + 4,
            ];
            d[i] = d[i].min(*best.iter().min().unwrap());
        }
    }
    for y in (0..h as i64).rev() {
        for x in (0..w as i64).rev() {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let best = [
                get(&d, y, x + 1) + 3,
                get(&d, y + 1, x) + 3,
                get(&d, y + 1, x + 1) + 4,
                get(&d, y + 1, x - 1) + 4,
            ];
            d[i] = d[i].min(*best.iter().min().unwrap());
        }
    }
    d.into_iter().map(|v| v as f32 / 3.0).collect()
}

/// Shape parameters drawn once per artifact and reused on every slice.
struct Shape {
    u: f64,
    v: f64,
    ratio: f64,
    period: usize,
    phase: usize,
}

impl Shape {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            u: rng.random_range(0.2..0.8),
            v: rng.random_range(0.3..0.7),
            ratio: rng.random_range(0.6..1.6),
            period: rng.random_range(8..=14),
            phase: rng.random_range(0..14),
        }
    }
}

/// Lower cost = selected first. `pix` are `(y, x)` breast pixels of one half-slice.
fn region_costs(kind: ArtifactKind, side: Side, shape: &Shape, pix: &[(usize, usize)], w: usize, h: usize) -> Vec<f64> {
    let (mut ymin, mut ymax, mut xmin, mut xmax) = (usize::MAX, 0, usize::MAX, 0);
    let (mut sy, mut sx) = (0.0, 0.0);
    for &(y, x) in pix {
        ymin = ymin.min(y);
        ymax = ymax.max(y);
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        sy += y as f64;
        sx += x as f64;
    }
    let n = pix.len() as f64;
    let (cy, cx) = (sy / n, sx / n);
    let dist = |a: (f64, f64), b: (usize, usize)| ((a.0 - b.0 as f64).powi(2) + (a.1 - b.1 as f64).powi(2)).sqrt();
    match kind {
        ArtifactKind::CoilFlare => {
            // Anchor at the lateral edge of a row drawn from the breast extent.
            let row = ymin + ((ymax - ymin) as f64 * shape.u).round() as usize;
            let in_row = pix.iter().filter(|p| p.0 == row).map(|p| p.1);
            let lateral = match side {
                Side::Left => in_row.min(),
                Side::Right => in_row.max(),
            }
            .unwrap_or(match side {
                Side::Left => xmin,
                Side::Right => xmax,
            });
            let anchor = (row as f64, lateral as f64);
            pix.iter().map(|&p| dist(anchor, p)).collect()
        }
        ArtifactKind::SkinFold => {
            let mut inside = vec![false; w * h];
            for &(y, x) in pix {
                inside[y * w + x] = true;
            }
            let depth = distance_to_outside(&inside, w, h);
            // Boundary pixel furthest along a direction between lateral and medial.
            let theta = std::f64::consts::PI * (0.15 + 0.7 * shape.u);
            let (dy, dx) = (-theta.sin(), theta.cos());
            let anchor = pix
                .iter()
                .filter(|&&(y, x)| depth[y * w + x] <= 1.0)
                .max_by(|a, b| {
                    let da = (a.0 as f64 - cy) * dy + (a.1 as f64 - cx) * dx;
                    let db = (b.0 as f64 - cy) * dy + (b.1 as f64 - cx) * dx;
                    da.total_cmp(&db)
                })
                .copied()
                .unwrap_or(pix[0]);
            let anchor = (anchor.0 as f64, anchor.1 as f64);
            pix.iter()
                .map(|&(y, x)| 6.0 * (depth[y * w + x] as f64 - 1.0) + dist(anchor, (y, x)))
                .collect()
        }
        ArtifactKind::PulsationGhost => {
            let xc = xmin as f64 + (xmax - xmin) as f64 * shape.v;
            pix.iter()
                .map(|&(y, x)| {
                    let band = (y + shape.phase) % shape.period;
                    band as f64 * 1e5 + (x as f64 - xc).abs()
                })
                .collect()
        }
        ArtifactKind::SignalVoid => {
            let centre = (
                ymin as f64 + (ymax - ymin) as f64 * shape.u,
                xmin as f64 + (xmax - xmin) as f64 * shape.v,
            );
            pix.iter()
                .map(|&(y, x)| {
                    let ey = (y as f64 - centre.0) * shape.ratio;
                    let ex = (x as f64 - centre.1) / shape.ratio;
                    ey * ey + ex * ex
                })
                .collect()
        }
    }
}

/// Inject one artifact. On every slice of the span, the `round(f * area)`
/// cheapest breast pixels of that half form the region; hyper kinds add up
/// to `a * robust_max`, hypo kinds scale down to the darkening factor. The
/// strength falls off linearly in cost rank to 70% at the region edge.
pub fn inject_artifact(
    v: &DwiVolume,
    mask: &MaskVolume,
    spec: &ArtifactSpec,
    table: &SeverityTable,
    seed: u64,
) -> Result<(DwiVolume, Region)> {
    if !(2..=5).contains(&spec.severity) {
        return Err(Error::ScoreRange {
            what: format!("{} severity", spec.kind),
            score: spec.severity as i64,
            min: 2,
            max: 5,
        });
    }
    let level = *table.get(spec.severity).ok_or_else(|| {
        Error::Invalid(format!("severity {} missing from the severity table", spec.severity))
    })?;
    mask.check_dims(v.dims)?;
    let d = v.dims;
    if spec.z_start > spec.z_end || spec.z_end >= d.z {
        return Err(Error::Invalid(format!(
            "artifact slices {}..={} outside 0..{}",
            spec.z_start, spec.z_end, d.z
        )));
    }
    let Some(peak) = robust_max(v, mask) else {
        return Ok((v.clone(), Region::default()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::draw(&mut rng);
    let cols = spec.side.columns(d.w);
    let mut voxels = v.voxels().to_vec();
    let mut region = Vec::new();
    for z in spec.z_start..=spec.z_end {
        let plane = mask.slice(z);
        let pix: Vec<(usize, usize)> = (0..d.h)
            .flat_map(|y| cols.clone().map(move |x| (y, x)))
            .filter(|&(y, x)| plane[y * d.w + x] == 1)
            .collect();
        let n = (level.area_fraction * pix.len() as f64).round() as usize;
        if n == 0 {
            continue;
        }
        let costs = region_costs(spec.kind, spec.side, &shape, &pix, d.w, d.h);
        let mut order: Vec<usize> = (0..pix.len()).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
        for (rank, &k) in order[..n].iter().enumerate() {
            let (y, x) = pix[k];
            let i = d.index(z, y, x);
            let strength = 1.0 - 0.3 * rank as f64 / n as f64;
            voxels[i] = match spec.kind.polarity() {
                Artifact::Hyper => voxels[i] + (level.amplitude * strength * peak as f64) as f32,
                Artifact::Hypo => voxels[i] * (1.0 - (1.0 - level.darkening) * strength) as f32,
            };
            region.push(i);
        }
    }
    region.sort_unstable();
    Ok((v.with_voxels(voxels)?, Region::from_sorted(&region)))
}

/// Ground-truth labels for every half-slice, reader `GT_SYNTH`.
pub fn derive_slice_labels(gt: &GroundTruth) -> Vec<ArtifactLabel> {
    let d = gt.dims;
    // Highest severity per (polarity, side, slice), from one pass over the regions.
    let mut best = vec![1u8; 2 * 2 * d.z];
    let slot = |p: Artifact, s: Side, z: usize| (p as usize * 2 + s as usize) * d.z + z;
    for a in &gt.artifacts {
        let mut touched = BTreeSet::new();
        for i in a.region.iter() {
            let (z, _, x) = d.coords(i);
            let side = if Side::Left.columns(d.w).contains(&x) { Side::Left } else { Side::Right };
            touched.insert((side, z));
        }
        for (side, z) in touched {
            let s = &mut best[slot(a.polarity, side, z)];
            *s = (*s).max(a.spec.severity);
        }
    }
    let mut out = Vec::with_capacity(2 * d.z);
    for z in 0..d.z {
        for side in Side::BOTH {
            out.push(ArtifactLabel::new(
                slice_id(&gt.case_id, side, z),
                GT_READER,
                best[slot(Artifact::Hyper, side, z)],
                best[slot(Artifact::Hypo, side, z)],
                true,
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, artifacts: ArtifactPlan) -> PhantomConfig {
        PhantomConfig {
            seed,
            dims: Dims::new(16, 96, 128),
            artifacts,
            ..Default::default()
        }
    }

    fn explicit(specs: Vec<ArtifactSpec>) -> ArtifactPlan {
        ArtifactPlan::Explicit { artifacts: specs }
    }

    fn spec(kind: ArtifactKind, severity: u8, side: Side, z: (usize, usize)) -> ArtifactSpec {
        ArtifactSpec {
            kind,
            severity,
            side,
            z_start: z.0,
            z_end: z.1,
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small(3, ArtifactPlan::default());
        assert_eq!(generate_case(&cfg).unwrap(), generate_case(&cfg).unwrap());
    }

    #[test]
    fn empty_table_gives_clean_labels() {
        let cfg = PhantomConfig {
            severity_table: SeverityTable::empty(),
            ..small(5, ArtifactPlan::default())
        };
        let case = generate_case(&cfg).unwrap();
        assert!(case.truth.artifacts.is_empty());
        let labels = derive_slice_labels(&case.truth);
        assert_eq!(labels.len(), 32);
        assert!(labels.iter().all(|l| (l.hyper_score, l.hypo_score) == (1, 1)));
    }

    #[test]
    fn severity_five_left_span_matches_voxel_delta() {
        let plan = explicit(vec![spec(ArtifactKind::CoilFlare, 5, Side::Left, (10, 14))]);
        let case = generate_case(&small(7, plan)).unwrap();
        let clean = generate_case(&small(7, ArtifactPlan::none())).unwrap();
        let d = case.dwi.dims;
        let labels = derive_slice_labels(&case.truth);
        for l in &labels {
            let (_, side, z) = crate::types::parse_slice_id(&l.slice_id).unwrap();
            let changed = side.columns(d.w).any(|x| {
                (0..d.h).any(|y| case.dwi.get(z, y, x) - clean.dwi.get(z, y, x) > 0.0)
            });
            let expect = if side == Side::Left && (10..=14).contains(&z) { 5 } else { 1 };
            assert_eq!(l.hyper_score, expect, "{}", l.slice_id);
            assert_eq!(changed, expect == 5, "{}", l.slice_id);
            assert_eq!(l.hypo_score, 1);
        }
        // The logged region is exactly the set of brightened voxels.
        let brightened: Vec<usize> = (0..d.len())
            .filter(|&i| case.dwi.voxels()[i] != clean.dwi.voxels()[i])
            .collect();
        assert_eq!(case.truth.artifacts[0].region, Region::from_sorted(&brightened));
    }

    #[test]
    fn hyper_raises_and_hypo_lowers() {
        let base = generate_case(&small(1, ArtifactPlan::none())).unwrap();
        let table = SeverityTable::default();
        for kind in ArtifactKind::ALL {
            let s = spec(kind, 3, Side::Right, (4, 9));
            let (after, region) = inject_artifact(&base.dwi, &base.mask, &s, &table, 42).unwrap();
            assert!(!region.is_empty());
            assert!(region.to_mask("c", base.dwi.dims).is_subset_of(&base.mask));
            for i in region.iter() {
                let delta = after.voxels()[i] - base.dwi.voxels()[i];
                match kind.polarity() {
                    Artifact::Hyper => assert!(delta > 0.0, "{kind}"),
                    Artifact::Hypo => {
                        assert!(delta < 0.0, "{kind}");
                        assert!(after.voxels()[i] >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn region_area_tracks_fraction() {
        let base = generate_case(&small(2, ArtifactPlan::none())).unwrap();
        let table = SeverityTable::default();
        let d = base.dwi.dims;
        for kind in ArtifactKind::ALL {
            for level in &table.levels {
                let s = spec(kind, level.severity, Side::Left, (0, d.z - 1));
                let (_, region) = inject_artifact(&base.dwi, &base.mask, &s, &table, 9).unwrap();
                let mut per_slice = vec![0usize; d.z];
                for i in region.iter() {
                    per_slice[d.coords(i).0] += 1;
                }
                for z in 0..d.z {
                    let area = Side::Left
                        .columns(d.w)
                        .flat_map(|x| (0..d.h).map(move |y| (y, x)))
                        .filter(|&(y, x)| base.mask.voxels()[d.index(z, y, x)] == 1)
                        .count();
                    let target = level.area_fraction * area as f64;
                    if target >= 4.0 {
                        let ratio = per_slice[z] as f64 / target;
                        assert!((0.75..=1.25).contains(&ratio), "{kind} s{} z{z}: {ratio}", level.severity);
                    }
                }
            }
        }
    }

    #[test]
    fn severity_monotone() {
        let base = generate_case(&small(4, ArtifactPlan::none())).unwrap();
        let table = SeverityTable::default();
        for kind in ArtifactKind::ALL {
            let mut prev: Option<(usize, f64, f64)> = None;
            for sev in 2..=5 {
                let s = spec(kind, sev, Side::Left, (3, 12));
                let (after, region) = inject_artifact(&base.dwi, &base.mask, &s, &table, 17).unwrap();
                let deltas: Vec<f64> = after
                    .voxels()
                    .iter()
                    .zip(base.dwi.voxels())
                    .map(|(a, b)| (a - b).abs() as f64)
                    .collect();
                let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
                let peak = deltas.iter().cloned().fold(0.0, f64::max);
                if let Some((area, prev_mean, prev_peak)) = prev {
                    assert!(region.len() > area, "{kind} area at {sev}");
                    assert!(mean >= prev_mean, "{kind} mean delta at {sev}");
                    if kind.polarity() == Artifact::Hyper {
                        assert!(peak > prev_peak, "{kind} amplitude at {sev}");
                    }
                }
                prev = Some((region.len(), mean, peak));
            }
        }
    }

    #[test]
    fn max_rule_and_side_separation() {
        let plan = explicit(vec![
            spec(ArtifactKind::CoilFlare, 4, Side::Left, (2, 6)),
            spec(ArtifactKind::SkinFold, 2, Side::Left, (5, 9)),
            spec(ArtifactKind::SignalVoid, 3, Side::Right, (0, 3)),
        ]);
        let case = generate_case(&small(8, plan)).unwrap();
        let labels = derive_slice_labels(&case.truth);
        let get = |side, z| {
            let id = slice_id("phantom_000", side, z);
            labels.iter().find(|l| l.slice_id == id).unwrap().clone()
        };
        assert_eq!(get(Side::Left, 5).hyper_score, 4);
        assert_eq!(get(Side::Left, 8).hyper_score, 2);
        assert_eq!(get(Side::Left, 1).hypo_score, 1);
        assert_eq!(get(Side::Right, 1).hypo_score, 3);
        assert_eq!(get(Side::Right, 1).hyper_score, 1);
        for l in &labels {
            let (_, side, z) = crate::types::parse_slice_id(&l.slice_id).unwrap();
            assert_eq!(l.hyper_score, case.truth.score(Artifact::Hyper, side, z));
            assert_eq!(l.hypo_score, case.truth.score(Artifact::Hypo, side, z));
        }
    }

    #[test]
    fn artifacts_stay_in_mask_and_tissue_floor() {
        let case = generate_case(&small(12, ArtifactPlan::default())).unwrap();
        for a in &case.truth.artifacts {
            assert!(a.region.to_mask("c", case.dwi.dims).is_subset_of(&case.mask));
        }
        assert!(case
            .dwi
            .voxels()
            .iter()
            .zip(case.mask.voxels())
            .all(|(&v, &m)| m == 0 || v > 0.0));
    }

    #[test]
    fn table_validation() {
        assert!(SeverityTable::default().validate().is_ok());
        let mut t = SeverityTable::default();
        t.levels[1].amplitude = 1.0;
        assert!(t.validate().is_err());
        let mut t = SeverityTable::default();
        t.levels[3].area_fraction = 0.6;
        assert!(t.validate().is_err());
        let mut t = SeverityTable::default();
        t.levels[2].darkening = 0.5;
        assert!(t.validate().is_err());
        assert!(generate_case(&PhantomConfig {
            severity_table: t,
            ..small(0, ArtifactPlan::default())
        })
        .is_err());
    }

    #[test]
    fn inject_rejects_bad_severity() {
        let base = generate_case(&small(1, ArtifactPlan::none())).unwrap();
        let s = spec(ArtifactKind::SignalVoid, 6, Side::Left, (0, 1));
        assert!(inject_artifact(&base.dwi, &base.mask, &s, &SeverityTable::default(), 0).is_err());
        let s = spec(ArtifactKind::SignalVoid, 1, Side::Left, (0, 1));
        assert!(inject_artifact(&base.dwi, &base.mask, &s, &SeverityTable::default(), 0).is_err());
        assert!("ring".parse::<ArtifactKind>().is_err());
    }

    #[test]
    fn region_runs_roundtrip() {
        let idx = vec![1, 2, 3, 7, 9, 10];
        let r = Region::from_sorted(&idx);
        assert_eq!(r.runs, vec![[1, 3], [7, 1], [9, 2]]);
        assert_eq!(r.iter().collect::<Vec<_>>(), idx);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<Region>(&json).unwrap(), r);
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = small(9, ArtifactPlan::default());
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<PhantomConfig>(&text).unwrap(), cfg);
    }
}
