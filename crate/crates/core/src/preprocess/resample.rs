//! Image resampling. Bilinear uses pixel-centre alignment (no corner
//! alignment) with edge clamping.

use crate::types::{Dims, MaskVolume, Plane};

struct Taps {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            Taps {
                i0,
                i1,
                frac: s - i0 as f64,
            }
        })
        .collect()
}

fn bilinear(src: &Plane<f64>, width: usize, height: usize) -> Vec<f64> {
    let tx = taps(src.width, width);
    let ty = taps(src.height, height);
    let mut out = Vec::with_capacity(width * height);
    for y in &ty {
        for x in &tx {
            let top = src.get(y.i0, x.i0) * (1.0 - x.frac) + src.get(y.i0, x.i1) * x.frac;
            let bot = src.get(y.i1, x.i0) * (1.0 - x.frac) + src.get(y.i1, x.i1) * x.frac;
            out.push(top * (1.0 - y.frac) + bot * y.frac);
        }
    }
    out
}

/// Bilinear resize of an 8-bit plane, rounding half away from zero.
pub fn resize_u8(src: &Plane<u8>, width: usize, height: usize) -> Plane<u8> {
    let wide = src.map(|v| v as f64);
    let data = bilinear(&wide, width, height)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Plane {
        width,
        height,
        data,
    }
}

pub fn resize_f32(src: &Plane<f32>, width: usize, height: usize) -> Plane<f32> {
    let wide = src.map(|v| v as f64);
    let data = bilinear(&wide, width, height)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    Plane {
        width,
        height,
        data,
    }
}

/// Nearest-neighbour plane resize (binary masks, label maps).
pub fn resize_nearest<T: Copy>(src: &Plane<T>, width: usize, height: usize) -> Plane<T> {
    let map = |o: usize, n_in: usize, n_out: usize| {
        (((o as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1)
    };
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = map(y, src.height, height);
        for x in 0..width {
            data.push(src.get(sy, map(x, src.width, width)));
        }
    }
    Plane {
        width,
        height,
        data,
    }
}

/// Nearest-neighbour resampling of a mask volume onto another grid.
pub fn resample_mask(mask: &MaskVolume, dims: Dims) -> MaskVolume {
    if mask.dims == dims {
        return mask.clone();
    }
    let src = mask.dims;
    let map = |o: usize, n_in: usize, n_out: usize| {
        (((o as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1)
    };
    let mut out = Vec::with_capacity(dims.len());
    for z in 0..dims.z {
        let sz = map(z, src.z, dims.z);
        for y in 0..dims.h {
            let sy = map(y, src.h, dims.h);
            for x in 0..dims.w {
                out.push(mask.voxels()[src.index(sz, sy, map(x, src.w, dims.w))]);
            }
        }
    }
    MaskVolume::new(mask.case_id.clone(), dims, out).expect("resampled mask stays binary")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize() {
        let p = Plane::new(3, 2, vec![1u8, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(resize_u8(&p, 3, 2), p);
        assert_eq!(resize_nearest(&p, 3, 2), p);
    }

    #[test]
    fn halving_rows_averages_pairs() {
        // 4 rows -> 2 rows samples at source rows 0.5 and 2.5.
        let p = Plane::new(1, 4, vec![0u8, 10, 20, 31]).unwrap();
        assert_eq!(resize_u8(&p, 1, 2).data, vec![5, 26]);
    }

    #[test]
    fn constant_stays_constant() {
        let p = Plane::filled(7, 5, 0.25f32);
        let r = resize_f32(&p, 16, 11);
        assert!(r.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn mask_resample_doubles() {
        let m = MaskVolume::new("c", Dims::new(1, 1, 2), vec![0, 1]).unwrap();
        let r = resample_mask(&m, Dims::new(1, 2, 4));
        assert_eq!(r.voxels(), &[0, 0, 1, 1, 0, 0, 1, 1]);
    }
}
