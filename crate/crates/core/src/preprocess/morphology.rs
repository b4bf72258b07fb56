//! Binary morphology on single slices with disk structuring elements.
//!
//! Each disk is decomposed into horizontal chords, so one pass costs
//! `O(h * w * (2r + 1))` using per-row prefix counts.

/// Half-widths of the chords of a disk of radius `r`, indexed by `dy + r`.
fn chords(r: usize) -> Vec<usize> {
    let r2 = (r * r) as i64;
    (-(r as i64)..=r as i64)
        .map(|dy| {
            let mut hw = 0i64;
            while (hw + 1) * (hw + 1) + dy * dy <= r2 {
                hw += 1;
            }
            hw as usize
        })
        .collect()
}

fn prefix_rows(img: &[u8], w: usize, h: usize) -> Vec<u32> {
    let mut pre = vec![0u32; h * (w + 1)];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        let out = &mut pre[y * (w + 1)..(y + 1) * (w + 1)];
        for x in 0..w {
            out[x + 1] = out[x] + row[x] as u32;
        }
    }
    pre
}

/// Dilation; pixels outside the image count as background.
pub fn dilate(img: &[u8], w: usize, h: usize, r: usize) -> Vec<u8> {
    let hw = chords(r);
    let pre = prefix_rows(img, w, h);
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let hit = hw.iter().enumerate().any(|(i, &c)| {
                let yy = y as i64 + i as i64 - r as i64;
                if yy < 0 || yy >= h as i64 {
                    return false;
                }
                let lo = x.saturating_sub(c);
                let hi = (x + c + 1).min(w);
                let base = yy as usize * (w + 1);
                pre[base + hi] > pre[base + lo]
            });
            out[y * w + x] = hit as u8;
        }
    }
    out
}

/// Erosion; pixels outside the image count as foreground, which keeps
/// closing extensive for objects touching the border.
pub fn erode(img: &[u8], w: usize, h: usize, r: usize) -> Vec<u8> {
    let hw = chords(r);
    let pre = prefix_rows(img, w, h);
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let keep = hw.iter().enumerate().all(|(i, &c)| {
                let yy = y as i64 + i as i64 - r as i64;
                if yy < 0 || yy >= h as i64 {
                    return true;
                }
                let lo = x.saturating_sub(c);
                let hi = (x + c + 1).min(w);
                let base = yy as usize * (w + 1);
                (pre[base + hi] - pre[base + lo]) as usize == hi - lo
            });
            out[y * w + x] = keep as u8;
        }
    }
    out
}

pub fn close(img: &[u8], w: usize, h: usize, r: usize) -> Vec<u8> {
    erode(&dilate(img, w, h, r), w, h, r)
}
