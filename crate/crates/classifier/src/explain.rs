//! Grad-CAM heatmaps (0 = strongest activation, 1 = none) and the boxes
//! derived from them.

use dwiqa_core::preprocess::resample::resize_f32;
use dwiqa_core::Plane;
use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, Shape};
use crate::model::Model;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f32 = 0.2;
pub const DEFAULT_MIN_AREA: usize = 4;

/// Inverted, min-max normalised class activation map at slice resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub values: Plane<f32>,
}

impl Heatmap {
    pub fn new(values: Plane<f32>) -> Result<Self> {
        if let Some(v) = values.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("heatmap value {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    /// `(row, col)` of the strongest activation (first minimum in raster order).
    pub fn strongest(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.data.iter().enumerate() {
            if v < self.values.data[best] {
                best = i;
            }
        }
        (best / self.values.width, best % self.values.width)
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn new(row_min: usize, col_min: usize, row_max: usize, col_max: usize) -> Self {
        Self {
            row_min,
            col_min,
            row_max,
            col_max,
        }
    }

    pub fn area(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let b = Self::new(
            self.row_min.max(other.row_min),
            self.col_min.max(other.col_min),
            self.row_max.min(other.row_max),
            self.col_max.min(other.col_max),
        );
        (b.row_min <= b.row_max && b.col_min <= b.col_max).then_some(b)
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other).map_or(0, |b| b.area());
        inter as f64 / (self.area() + other.area() - inter) as f64
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.row_min <= self.row_max && self.col_min <= self.col_max && self.row_max < rows && self.col_max < cols
    }
}

/// `ReLU(sum_k alpha_k A_k)` with `alpha_k` the spatial mean of the gradient
/// of map `k`. Returns one value per spatial position.
pub fn cam_from_maps(acts: &[f32], grads: &[f32], shape: Shape) -> Vec<f32> {
    assert_eq!(acts.len(), shape.len());
    assert_eq!(grads.len(), shape.len());
    let plane = shape.plane();
    let mut cam = vec![0f64; plane];
    for k in 0..shape.c {
        let g = &grads[k * plane..(k + 1) * plane];
        let alpha = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        for (c, &a) in cam.iter_mut().zip(&acts[k * plane..(k + 1) * plane]) {
            *c += alpha * a as f64;
        }
    }
    cam.into_iter().map(|v| v.max(0.0) as f32).collect()
}

/// Upsample a raw CAM to `rows x cols`, min-max normalise and invert.
/// A constant map means no activation and gives all ones.
pub fn heatmap_from_cam(raw: &Plane<f32>, rows: usize, cols: usize) -> Heatmap {
    let (lo, hi) = raw.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Heatmap {
            values: Plane::filled(cols, rows, 1.0),
        };
    }
    let up = resize_f32(raw, cols, rows);
    let (lo, hi) = up.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Heatmap {
            values: Plane::filled(cols, rows, 1.0),
        };
    }
    let span = hi - lo;
    Heatmap {
        values: up.map(|v| (1.0 - (v - lo) / span).clamp(0.0, 1.0)),
    }
}

/// Grad-CAM of `class` on the model's final feature stage.
pub fn grad_cam(model: &Model, image: &Plane<f32>, class: usize) -> Result<Heatmap> {
    grad_cam_at(model, image, class, model.net.feature)
}

/// Grad-CAM with an explicit target node (any spatial activation).
pub fn grad_cam_at(model: &Model, image: &Plane<f32>, class: usize, target: NodeId) -> Result<Heatmap> {
    model.check_input(image)?;
    let classes = model.net.classes;
    if class >= classes {
        return Err(Error::Data(format!("class {class} outside [0, {classes})")));
    }
    let g = &model.net.graph;
    if target >= g.nodes.len() {
        return Err(Error::Config(format!("target node {target} does not exist")));
    }
    let shape = g.shape(target);
    let tape = g.forward(&model.params, &image.data);
    let mut onehot = vec![0f32; classes];
    onehot[class] = 1.0;
    let mut scratch = vec![0f32; model.params.len()];
    let grads = g.backward(&model.params, &tape, &onehot, &mut scratch);
    let dmap = if grads[target].is_empty() {
        vec![0f32; shape.len()]
    } else {
        grads[target].clone()
    };
    let raw = Plane::new(shape.w, shape.h, cam_from_maps(&tape.acts[target], &dmap, shape))?;
    Ok(heatmap_from_cam(&raw, image.height, image.width))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep pixels with `h <= t`.
    #[default]
    Value,
    /// Keep the `t` fraction of pixels with the lowest values (ties at the
    /// cut-off are all kept).
    Quantile,
}

/// Binary mask of strongly activated pixels: `h <= t`, inclusive.
pub fn threshold_heatmap(h: &Heatmap, t: f32) -> Plane<bool> {
    h.values.map(|v| v <= t)
}

pub fn threshold_heatmap_with(h: &Heatmap, t: f32, mode: ThresholdMode) -> Plane<bool> {
    match mode {
        ThresholdMode::Value => threshold_heatmap(h, t),
        ThresholdMode::Quantile => {
            let n = h.values.data.len();
            let keep = ((t as f64 * n as f64 - 1e-6).ceil().max(0.0) as usize).min(n);
            if keep == 0 {
                return h.values.map(|_| false);
            }
            let mut sorted = h.values.data.clone();
            sorted.sort_by(f32::total_cmp);
            threshold_heatmap(h, sorted[keep - 1])
        }
    }
}

/// Tight boxes around 8-connected components of at least `min_area` pixels,
/// sorted by `(row_min, col_min)`.
pub fn components_to_bboxes(mask: &Plane<bool>, min_area: usize) -> Vec<BoundingBox> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut area = 0;
        let mut b = BoundingBox::new(start / w, start % w, start / w, start % w);
        while let Some(p) = stack.pop() {
            area += 1;
            let (r, c) = (p / w, p % w);
            b.row_min = b.row_min.min(r);
            b.row_max = b.row_max.max(r);
            b.col_min = b.col_min.min(c);
            b.col_max = b.col_max.max(c);
            for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let q = nr * w + nc;
                    if mask.data[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if area >= min_area {
            boxes.push(b);
        }
    }
    boxes.sort_by_key(|b| (b.row_min, b.col_min, b.row_max, b.col_max));
    boxes
}

/// Heatmap to boxes with the default value threshold and minimum area.
pub fn boxes_for(h: &Heatmap) -> Vec<BoundingBox> {
    components_to_bboxes(&threshold_heatmap(h, DEFAULT_THRESHOLD), DEFAULT_MIN_AREA)
}

/// A copy of `slice` with 1-px box outlines drawn at `value`.
pub fn render_overlay(slice: &Plane<u8>, boxes: &[BoundingBox], value: u8) -> Result<Plane<u8>> {
    if let Some(b) = boxes.iter().find(|b| !b.fits(slice.height, slice.width)) {
        return Err(Error::Shape(format!(
            "box {b:?} outside a {}x{} image",
            slice.height, slice.width
        )));
    }
    let mut out = slice.clone();
    for b in boxes {
        for c in b.col_min..=b.col_max {
            out.set(b.row_min, c, value);
            out.set(b.row_max, c, value);
        }
        for r in b.row_min..=b.row_max {
            out.set(r, b.col_min, value);
            out.set(r, b.col_max, value);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchSpec, Family};
    use dwiqa_core::dataset::{TaskMode, TaskSpec};
    use dwiqa_core::Artifact;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(rows: usize, cols: usize, on: &[(usize, usize)]) -> Plane<bool> {
        let mut m = Plane::filled(cols, rows, false);
        for &(r, c) in on {
            m.set(r, c, true);
        }
        m
    }

    #[test]
    fn cam_hand_evaluated() {
        // One 4x4 map, gradient 0.5 everywhere, activation 2 in the top-left
        // quadrant and 0.25 elsewhere: raw = 0.5 * A.
        let shape = Shape::new(1, 4, 4);
        let acts: Vec<f32> = (0..16).map(|i| if i / 4 < 2 && i % 4 < 2 { 2.0 } else { 0.25 }).collect();
        let raw = cam_from_maps(&acts, &[0.5; 16], shape);
        assert_eq!(raw[0], 1.0);
        assert_eq!(raw[15], 0.125);
        let h = heatmap_from_cam(&Plane::new(4, 4, raw).unwrap(), 16, 16);
        let (r, c) = h.strongest();
        assert!(r < 8 && c < 8, "({r},{c})");
        assert_eq!(h.values.get(r, c), 0.0);
        assert_eq!(h.values.get(15, 15), 1.0);
    }

    #[test]
    fn cam_relu_and_negative_alpha() {
        // Two maps with opposite-sign gradients cancel where activations agree.
        let shape = Shape::new(2, 1, 2);
        let raw = cam_from_maps(&[1.0, 3.0, 1.0, 1.0], &[1.0, 1.0, -1.0, -1.0], shape);
        assert_eq!(raw, vec![0.0, 2.0]);
        let neg = cam_from_maps(&[1.0, 3.0], &[-1.0, -1.0], Shape::new(1, 1, 2));
        assert_eq!(neg, vec![0.0, 0.0]);
    }

    #[test]
    fn constant_cam_gives_ones_and_no_boxes() {
        let h = heatmap_from_cam(&Plane::filled(4, 4, 0.7), 16, 20);
        assert!(h.values.data.iter().all(|&v| v == 1.0));
        assert_eq!((h.values.height, h.values.width), (16, 20));
        assert!(boxes_for(&h).is_empty());
    }

    #[test]
    fn image_independent_model_gives_blank_heatmap() {
        let task = TaskSpec::new(Artifact::Hyper, TaskMode::Binary);
        let mut m = Model::with_input(&ArchSpec::new(Family::MiniDense), task, 64, 64, 1).unwrap();
        // Zero every weight except the head bias: logits no longer see the image.
        let n = m.params.len();
        m.params.iter_mut().for_each(|p| *p = 0.0);
        m.params[n - 1] = 0.3;
        let img = Plane::new(64, 64, (0..4096).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let h = grad_cam(&m, &img, 1).unwrap();
        assert!(h.values.data.iter().all(|&v| v == 1.0));
        assert!(grad_cam(&m, &img, 2).is_err());
    }

    #[test]
    fn random_models_stay_in_range() {
        let task = TaskSpec::new(Artifact::Hypo, TaskMode::Multiclass);
        for (i, family) in [Family::MiniDense, Family::MiniRes, Family::MiniSe].into_iter().enumerate() {
            let m = Model::with_input(&ArchSpec::new(family), task, 64, 80, i as u64).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let img = Plane::new(80, 64, (0..64 * 80).map(|_| rng.random::<f32>()).collect()).unwrap();
            for class in 0..5 {
                let h = grad_cam(&m, &img, class).unwrap();
                assert_eq!((h.values.height, h.values.width), (64, 80));
                assert!(h.values.data.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let flat = Heatmap::new(Plane::filled(5, 5, 0.5)).unwrap();
        assert!(threshold_heatmap(&flat, 0.2).data.iter().all(|&b| !b));
        let mut v = Plane::filled(5, 5, 0.9);
        v.set(1, 1, 0.2);
        v.set(3, 4, 0.0);
        let h = Heatmap::new(v).unwrap();
        let m = threshold_heatmap(&h, 0.2);
        assert_eq!(m.data.iter().filter(|&&b| b).count(), 2);
        assert!(m.get(1, 1) && m.get(3, 4));
        let mut single = Plane::filled(5, 5, 0.3);
        single.set(2, 2, 0.0);
        let m = threshold_heatmap(&Heatmap::new(single).unwrap(), 0.2);
        assert_eq!(m, mask_from(5, 5, &[(2, 2)]));
        assert!(Heatmap::new(Plane::filled(2, 2, 1.5)).is_err());
    }

    #[test]
    fn quantile_mode_keeps_lowest_fraction() {
        let h = Heatmap::new(Plane::new(10, 1, (0..10).map(|i| i as f32 / 10.0).collect()).unwrap()).unwrap();
        let m = threshold_heatmap_with(&h, 0.2, ThresholdMode::Quantile);
        assert_eq!(m.data, [true, true, false, false, false, false, false, false, false, false]);
        assert_eq!(threshold_heatmap_with(&h, 0.2, ThresholdMode::Value).data.iter().filter(|&&b| b).count(), 3);
    }

    #[test]
    fn box_examples() {
        assert_eq!(
            components_to_bboxes(&mask_from(10, 10, &[(5, 7)]), 1),
            vec![BoundingBox::new(5, 7, 5, 7)]
        );
        assert!(components_to_bboxes(&mask_from(10, 10, &[(5, 7)]), 4).is_empty());
        let mut blobs = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                blobs.push((r + 1, c + 1));
                blobs.push((r + 6, c + 5));
            }
        }
        assert_eq!(
            components_to_bboxes(&mask_from(10, 10, &blobs), 4),
            vec![BoundingBox::new(1, 1, 3, 3), BoundingBox::new(6, 5, 8, 7)]
        );
        // L: vertical bar at col 1 rows 2..=6, foot along row 6 to col 4.
        let mut l: Vec<_> = (2..=6).map(|r| (r, 1)).collect();
        l.extend((2..=4).map(|c| (6, c)));
        assert_eq!(components_to_bboxes(&mask_from(8, 8, &l), 4), vec![BoundingBox::new(2, 1, 6, 4)]);
        // Diagonal neighbours join under 8-connectivity.
        let diag = mask_from(4, 4, &[(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(components_to_bboxes(&diag, 4), vec![BoundingBox::new(0, 0, 3, 3)]);
        assert!(components_to_bboxes(&Plane::filled(4, 4, false), 1).is_empty());
    }

    #[test]
    fn box_geometry() {
        let a = BoundingBox::new(0, 0, 1, 1);
        let b = BoundingBox::new(1, 1, 2, 2);
        assert_eq!(a.area(), 4);
        assert_eq!(a.intersection(&b), Some(BoundingBox::new(1, 1, 1, 1)));
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BoundingBox::new(5, 5, 6, 6)), 0.0);
    }

    #[test]
    fn overlay_examples() {
        let img = Plane::new(6, 5, (0..30).map(|i| i as u8).collect()).unwrap();
        assert_eq!(render_overlay(&img, &[], 255).unwrap(), img);
        let full = render_overlay(&img, &[BoundingBox::new(0, 0, 4, 5)], 255).unwrap();
        for r in 0..5 {
            for c in 0..6 {
                let border = r == 0 || r == 4 || c == 0 || c == 5;
                assert_eq!(full.get(r, c), if border { 255 } else { img.get(r, c) });
            }
        }
        let big = Plane::filled(12, 12, 7u8);
        let boxes = [BoundingBox::new(1, 1, 4, 4), BoundingBox::new(6, 6, 10, 10)];
        let out = render_overlay(&big, &boxes, 200).unwrap();
        for b in &boxes {
            for r in b.row_min + 1..b.row_max {
                for c in b.col_min + 1..b.col_max {
                    assert_eq!(out.get(r, c), 7);
                }
            }
        }
        assert!(render_overlay(&img, &[BoundingBox::new(0, 0, 5, 0)], 255).is_err());
    }

    fn heatmap_strategy() -> impl Strategy<Value = Heatmap> {
        (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f32..=1.0, w * h)
                .prop_map(move |d| Heatmap::new(Plane::new(w, h, d).unwrap()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn retained_pixels_are_boxed(h in heatmap_strategy(), t in 0.01f32..0.99) {
            let m = threshold_heatmap(&h, t);
            let boxes = components_to_bboxes(&m, 1);
            for b in &boxes {
                prop_assert!(b.fits(m.height, m.width));
            }
            for r in 0..m.height {
                for c in 0..m.width {
                    if m.get(r, c) {
                        prop_assert!(boxes.iter().any(|b| b.contains(r, c)));
                    }
                }
            }
            let keys: Vec<_> = boxes.iter().map(|b| (b.row_min, b.col_min)).collect();
            prop_assert!(keys.windows(2).all(|k| k[0] <= k[1]));
        }

        #[test]
        fn threshold_is_monotone(h in heatmap_strategy(), a in 0.01f32..0.99, b in 0.01f32..0.99) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for mode in [ThresholdMode::Value, ThresholdMode::Quantile] {
                let (m1, m2) = (threshold_heatmap_with(&h, lo, mode), threshold_heatmap_with(&h, hi, mode));
                prop_assert!(m1.data.iter().zip(&m2.data).all(|(x, y)| !x || *y));
            }
        }

        #[test]
        fn inversion_keeps_peak(raw in proptest::collection::vec(0.0f32..5.0, 16)) {
            let plane = Plane::new(4, 4, raw.clone()).unwrap();
            let h = heatmap_from_cam(&plane, 4, 4);
            let max = raw.iter().copied().fold(f32::MIN, f32::max);
            let min = raw.iter().copied().fold(f32::MAX, f32::min);
            prop_assume!(max > min);
            // same resolution: the resample is the identity, so the peak maps to 0
            let (r, c) = h.strongest();
            prop_assert_eq!(raw[r * 4 + c], max);
        }
    }
}
