//! Contrast-limited adaptive histogram equalization on the V channel.
//!
//! The image is partitioned into `grid × grid` tiles (the last row/column of
//! tiles absorbs any remainder). Each tile's 256-bin histogram is clipped at
//! `ceil(clip_limit × tile_pixel_count)` and the excess is redistributed in
//! a single uniform pass: every bin gains `excess / 256`, and the rounding
//! residual (`excess mod 256`) is folded into the clip ceiling instead of a
//! second pass. The clipped histogram's min-shifted CDF maps the tile to
//! `[0, 255]`, and each pixel blends the four surrounding tile mappings
//! bilinearly (pixels outside the outer tile centers clamp to the nearest
//! tile).

use super::{equalize_lut, v_plane};
use crate::img::{hsv_to_rgb, rgb_to_hsv, ImageRgb};
use crate::{round_clamp_u8, Error, Result};

/// Tile spans along one axis: `len/grid` each, last tile absorbs the rest.
fn tile_bounds(len: usize, grid: usize) -> Vec<(usize, usize)> {
    let base = len / grid;
    (0..grid)
        .map(|i| {
            let start = i * base;
            let end = if i + 1 == grid { len } else { start + base };
            (start, end)
        })
        .collect()
}

/// Per-pixel interpolation endpoints along one axis: which two tiles to
/// blend and the blend fraction toward the second one.
fn axis_interp(len: usize, bounds: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = bounds
        .iter()
        .map(|&(s, e)| s as f64 + (e - s - 1) as f64 / 2.0)
        .collect();
    let last = centers.len() - 1;
    let mut seg = 0usize;
    (0..len)
        .map(|p| {
            let pf = p as f64;
            if pf <= centers[0] {
                (0, 0, 0.0)
            } else if pf >= centers[last] {
                (last, last, 0.0)
            } else {
                while pf > centers[seg + 1] {
                    seg += 1;
                }
                let frac = (pf - centers[seg]) / (centers[seg + 1] - centers[seg]);
                (seg, seg + 1, frac)
            }
        })
        .collect()
}

/// Clip-and-redistribute one tile histogram, then build its CDF mapping.
fn tile_lut(
    v: &[u8],
    width: usize,
    (x0, x1): (usize, usize),
    (y0, y1): (usize, usize),
    clip_limit: f64,
) -> [u8; 256] {
    let mut hist = [0u64; 256];
    for y in y0..y1 {
        for &val in &v[y * width + x0..y * width + x1] {
            hist[val as usize] += 1;
        }
    }
    let n = ((x1 - x0) * (y1 - y0)) as u64;
    let clip = (clip_limit * n as f64).ceil() as u64;
    let excess: u64 = hist.iter().map(|&h| h.saturating_sub(clip)).sum();
    let share = excess / 256;
    let residual = excess % 256;
    let ceiling = clip + residual;
    for h in hist.iter_mut() {
        *h = (*h).min(ceiling) + share;
    }
    equalize_lut(&hist)
}

/// CLAHE on the V channel; H and S are carried through unchanged.
pub fn apply_clahe(img: &ImageRgb, clip_limit: f64, grid: u32) -> Result<ImageRgb> {
    if !(clip_limit > 0.0 && clip_limit <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "clahe clip limit {clip_limit} must be in (0, 1]"
        )));
    }
    if grid < 1 {
        return Err(Error::InvalidParameter("clahe grid must be >= 1".into()));
    }
    if img.width() < grid || img.height() < grid {
        return Err(Error::InvalidParameter(format!(
            "clahe grid {grid} exceeds image dimensions {}x{}",
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = grid as usize;
    let v = v_plane(img);

    let xb = tile_bounds(w, grid);
    let yb = tile_bounds(h, grid);
    let luts: Vec<Vec<[u8; 256]>> = yb
        .iter()
        .map(|&ys| xb.iter().map(|&xs| tile_lut(&v, w, xs, ys, clip_limit)).collect())
        .collect();

    let xi = axis_interp(w, &xb);
    let yi = axis_interp(h, &yb);

    let mut hsv = rgb_to_hsv(img);
    for y in 0..h {
        let (ty1, ty2, fy) = yi[y];
        for x in 0..w {
            let (tx1, tx2, fx) = xi[x];
            let val = v[y * w + x] as usize;
            let top = lerp(luts[ty1][tx1][val], luts[ty1][tx2][val], fx);
            let bottom = lerp(luts[ty2][tx1][val], luts[ty2][tx2][val], fx);
            let blended = top * (1.0 - fy) + bottom * fy;
            hsv.v[y * w + x] = round_clamp_u8(blended) as f32;
        }
    }
    Ok(hsv_to_rgb(&hsv))
}

#[inline]
fn lerp(a: u8, b: u8, frac: f64) -> f64 {
    a as f64 * (1.0 - frac) + b as f64 * frac
}
