//! JPEG compression as a pixel-domain round trip.
//!
//! Color transform to full-range YCbCr, 8×8 orthonormal DCT, quality-scaled
//! quantization (round half away from zero), inverse — no entropy coding and
//! no file emission. With 4:4:4 sampling every 8×8 block is processed
//! independently, so compressing a block-aligned crop equals cropping the
//! compressed image bit for bit. That locality is what allows compressing
//! 64×64 training patches individually instead of whole images.
//!
//! Normative constants (base quantization tables, color transform weights)
//! are reproduced in `docs/FORMATS.md`.

use std::sync::OnceLock;

use crate::img::ImageRgb;
use crate::{round_clamp_u8, Error, Result};

/// Classical luminance base quantization table (row-major).
pub const BASE_LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Classical chrominance base quantization table (row-major).
pub const BASE_CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality-scaled quantization tables for one quality factor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantTables {
    pub luma: [u16; 64],
    pub chroma: [u16; 64],
    pub qf: u8,
}

/// Chroma sampling mode for the round trip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChromaMode {
    /// No subsampling; block locality holds at 8-pixel granularity.
    #[default]
    Yuv444,
    /// 2×2 box subsampling; locality holds at 16-pixel granularity.
    Yuv420,
}

/// Scale the base tables for a quality factor in `[1, 100]`:
/// `scale = 5000/qf` below 50, `200 − 2·qf` otherwise, and each entry is
/// `clamp(floor((base·scale + 50)/100), 1, 255)`.
pub fn quality_to_tables(qf: u8) -> Result<QuantTables> {
    if !(1..=100).contains(&qf) {
        return Err(Error::InvalidParameter(format!(
            "quality factor {qf} must be in [1, 100]"
        )));
    }
    let scale: u32 = if qf < 50 {
        5000 / qf as u32
    } else {
        200 - 2 * qf as u32
    };
    let scale_one = |base: &[u16; 64]| -> [u16; 64] {
        let mut out = [0u16; 64];
        for (o, &b) in out.iter_mut().zip(base.iter()) {
            *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
        }
        out
    };
    Ok(QuantTables {
        luma: scale_one(&BASE_LUMA_QUANT),
        chroma: scale_one(&BASE_CHROMA_QUANT),
        qf,
    })
}

// ---------------------------------------------------------------------------
// 8×8 DCT
// ---------------------------------------------------------------------------

/// Orthonormal 1-D DCT-II basis: `M[k][n] = c_k/2 · cos((2n+1)kπ/16)` with
/// `c_0 = 1/√2`, `c_k = 1` otherwise. `M` is orthogonal.
fn cosine_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let ck = if k == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
            for (n, cell) in row.iter_mut().enumerate() {
                *cell = ck / 2.0
                    * ((2.0 * n as f64 + 1.0) * k as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

/// 2-D orthonormal DCT-II of an 8×8 block (row-major). A constant block of
/// value `c` transforms to a single DC coefficient `8c`.
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let m = cosine_basis();
    let mut rows = [0.0f64; 64];
    for y in 0..8 {
        for k in 0..8 {
            let mut acc = 0.0;
            for n in 0..8 {
                acc += m[k][n] * block[y * 8 + n];
            }
            rows[y * 8 + k] = acc;
        }
    }
    let mut out = [0.0f64; 64];
    for x in 0..8 {
        for k in 0..8 {
            let mut acc = 0.0;
            for n in 0..8 {
                acc += m[k][n] * rows[n * 8 + x];
            }
            out[k * 8 + x] = acc;
        }
    }
    out
}

/// Inverse of [`dct8x8`]; the round trip reproduces the block within 1e-10.
pub fn idct8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    let m = cosine_basis();
    let mut cols = [0.0f64; 64];
    for x in 0..8 {
        for n in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += m[k][n] * coeffs[k * 8 + x];
            }
            cols[n * 8 + x] = acc;
        }
    }
    let mut out = [0.0f64; 64];
    for y in 0..8 {
        for n in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += m[k][n] * cols[y * 8 + k];
            }
            out[y * 8 + n] = acc;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Round trip
// ---------------------------------------------------------------------------

/// JPEG round trip at 4:4:4 (the default used everywhere in the pipeline).
pub fn jpeg_roundtrip(img: &ImageRgb, qf: u8) -> Result<ImageRgb> {
    jpeg_roundtrip_with(img, qf, ChromaMode::Yuv444)
}

/// JPEG round trip with an explicit chroma mode.
///
/// Images whose dimensions are not multiples of the block granularity
/// (8 for 4:4:4, 16 for 4:2:0) are edge-replicated up and cropped back;
/// interior blocks are unaffected by the padding.
pub fn jpeg_roundtrip_with(img: &ImageRgb, qf: u8, mode: ChromaMode) -> Result<ImageRgb> {
    let tables = quality_to_tables(qf)?;
    let granularity = match mode {
        ChromaMode::Yuv444 => 8,
        ChromaMode::Yuv420 => 16,
    };
    let (w, h) = (img.width(), img.height());
    let wp = w.div_ceil(granularity) * granularity;
    let hp = h.div_ceil(granularity) * granularity;
    let padded;
    let src = if (wp, hp) == (w, h) {
        img
    } else {
        padded = replicate_pad(img, wp, hp);
        &padded
    };

    let out = roundtrip_padded(src, &tables, mode);
    if (wp, hp) == (w, h) {
        Ok(out)
    } else {
        out.crop(0, 0, w, h)
    }
}

fn replicate_pad(img: &ImageRgb, wp: u32, hp: u32) -> ImageRgb {
    ImageRgb::from_fn(wp, hp, |x, y| {
        img.pixel(x.min(img.width() - 1), y.min(img.height() - 1))
    })
}

/// Full-range BT.601 RGB → YCbCr.
#[inline]
fn to_ycbcr(px: [u8; 3]) -> [f64; 3] {
    let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

/// Full-range BT.601 YCbCr → RGB with final rounding and clamping.
#[inline]
fn to_rgb(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    [
        round_clamp_u8(y + 1.402 * cr),
        round_clamp_u8(y - 0.344_136 * cb - 0.714_136 * cr),
        round_clamp_u8(y + 1.772 * cb),
    ]
}

/// Quantize-dequantize every 8×8 block of one plane in place.
fn requantize_plane(plane: &mut [f64], w: usize, h: usize, table: &[u16; 64]) {
    debug_assert!(w % 8 == 0 && h % 8 == 0);
    let mut block = [0.0f64; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for row in 0..8 {
                let start = (by + row) * w + bx;
                block[row * 8..row * 8 + 8].copy_from_slice(&plane[start..start + 8]);
            }
            for v in block.iter_mut() {
                *v -= 128.0;
            }
            let mut coeffs = dct8x8(&block);
            for (c, &q) in coeffs.iter_mut().zip(table.iter()) {
                let q = q as f64;
                *c = (*c / q).round() * q;
            }
            let spatial = idct8x8(&coeffs);
            for row in 0..8 {
                let start = (by + row) * w + bx;
                for col in 0..8 {
                    plane[start + col] = spatial[row * 8 + col] + 128.0;
                }
            }
        }
    }
}

fn roundtrip_padded(img: &ImageRgb, tables: &QuantTables, mode: ChromaMode) -> ImageRgb {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = w * h;
    let mut y_plane = vec![0.0f64; n];
    let mut cb_plane = vec![0.0f64; n];
    let mut cr_plane = vec![0.0f64; n];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let [y, cb, cr] = to_ycbcr([px[0], px[1], px[2]]);
        y_plane[i] = y;
        cb_plane[i] = cb;
        cr_plane[i] = cr;
    }

    requantize_plane(&mut y_plane, w, h, &tables.luma);
    match mode {
        ChromaMode::Yuv444 => {
            requantize_plane(&mut cb_plane, w, h, &tables.chroma);
            requantize_plane(&mut cr_plane, w, h, &tables.chroma);
        }
        ChromaMode::Yuv420 => {
            for plane in [&mut cb_plane, &mut cr_plane] {
                let mut small = downsample2(plane, w, h);
                requantize_plane(&mut small, w / 2, h / 2, &tables.chroma);
                upsample2_into(&small, plane, w, h);
            }
        }
    }

    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        data.extend_from_slice(&to_rgb(y_plane[i], cb_plane[i], cr_plane[i]));
    }
    ImageRgb::new(w as u32, h as u32, data).expect("same dimensions")
}

/// 2×2 box average.
fn downsample2(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0f64; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            let i = 2 * y * w + 2 * x;
            out[y * w2 + x] = (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) / 4.0;
        }
    }
    out
}

/// Nearest-neighbor 2× upsampling back into the full-resolution plane.
fn upsample2_into(small: &[f64], plane: &mut [f64], w: usize, h: usize) {
    let w2 = w / 2;
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = small[(y / 2) * w2 + x / 2];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: u32, h: u32) -> ImageRgb {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageRgb::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    /// Smooth test image: quantization error depends on content, and a
    /// gradient-plus-texture field is closer to the natural images the
    /// pipeline runs on than white noise.
    fn smooth_image(seed: u64, w: u32, h: u32) -> ImageRgb {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        ImageRgb::from_fn(w, h, |x, y| {
            let base = 96.0
                + 64.0 * ((x as f64 * 0.11 + a * 6.0).sin() + (y as f64 * 0.07 + b * 6.0).cos());
            let r = base + 30.0 * ((x + y) as f64 * 0.05 + c).sin();
            [
                r.clamp(0.0, 255.0) as u8,
                (base * 0.8).clamp(0.0, 255.0) as u8,
                (255.0 - base * 0.6).clamp(0.0, 255.0) as u8,
            ]
        })
    }

    #[test]
    fn qf_100_tables_are_all_ones() {
        let t = quality_to_tables(100).unwrap();
        assert!(t.luma.iter().all(|&q| q == 1));
        assert!(t.chroma.iter().all(|&q| q == 1));
    }

    #[test]
    fn qf_50_reproduces_base_tables() {
        let t = quality_to_tables(50).unwrap();
        assert_eq!(t.luma, BASE_LUMA_QUANT);
        assert_eq!(t.chroma, BASE_CHROMA_QUANT);
    }

    #[test]
    fn qf_90_luma_dc_entry() {
        // base 16, scale 20: floor((16·20 + 50)/100) = 3.
        let t = quality_to_tables(90).unwrap();
        assert_eq!(t.luma[0], 3);
    }

    #[test]
    fn qf_range_is_enforced() {
        assert!(quality_to_tables(0).is_err());
        assert!(quality_to_tables(101).is_err());
    }

    #[test]
    fn tables_are_monotone_in_qf() {
        let mut prev = quality_to_tables(1).unwrap();
        for qf in 2..=100 {
            let cur = quality_to_tables(qf).unwrap();
            for i in 0..64 {
                assert!(
                    cur.luma[i] <= prev.luma[i] && cur.chroma[i] <= prev.chroma[i],
                    "entry {i} not monotone between qf {} and {qf}",
                    qf - 1
                );
            }
            prev = cur;
        }
    }

    #[test]
    fn dct_of_constant_block_is_pure_dc() {
        let block = [37.5f64; 64];
        let coeffs = dct8x8(&block);
        assert!((coeffs[0] - 8.0 * 37.5).abs() < 1e-9, "dc = {}", coeffs[0]);
        for (i, &c) in coeffs.iter().enumerate().skip(1) {
            assert!(c.abs() < 1e-9, "ac coefficient {i} = {c}");
        }
    }

    #[test]
    fn dct_of_zero_block_is_zero() {
        let coeffs = dct8x8(&[0.0; 64]);
        assert!(coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn dct_roundtrip_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..32 {
            let mut block = [0.0f64; 64];
            for v in block.iter_mut() {
                *v = rng.gen_range(-128.0..128.0);
            }
            let back = idct8x8(&dct8x8(&block));
            for (a, b) in block.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    fn max_abs_diff(a: &ImageRgb, b: &ImageRgb) -> u8 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as i16 - y as i16).unsigned_abs() as u8)
            .max()
            .unwrap()
    }

    #[test]
    fn qf_100_deviation_is_bounded() {
        // Only transform/rounding error survives all-ones tables; the
        // empirical per-sample bound over these fixed seeds is ≤ 2.
        for seed in 0..6u64 {
            let img = smooth_image(seed, 64, 64);
            let out = jpeg_roundtrip(&img, 100).unwrap();
            let dev = max_abs_diff(&img, &out);
            assert!(dev <= 2, "seed {seed}: qf=100 deviation {dev} > 2");
        }
        for seed in 0..6u64 {
            let img = random_image(seed, 64, 64);
            let out = jpeg_roundtrip(&img, 100).unwrap();
            let dev = max_abs_diff(&img, &out);
            assert!(dev <= 2, "noise seed {seed}: qf=100 deviation {dev} > 2");
        }
    }

    #[test]
    fn requantization_is_near_idempotent() {
        for (seed, qf) in [(1u64, 95u8), (2, 90), (3, 80)] {
            let img = smooth_image(seed, 64, 64);
            let once = jpeg_roundtrip(&img, qf).unwrap();
            let twice = jpeg_roundtrip(&once, qf).unwrap();
            let dev = max_abs_diff(&once, &twice);
            assert!(dev <= 2, "seed {seed} qf {qf}: second pass moved {dev}");
        }
    }

    #[test]
    fn locality_for_aligned_patches() {
        // compress(crop) == crop(compress) for 64-aligned patches at 4:4:4.
        for qf in [75u8, 90, 100] {
            let img = smooth_image(9, 192, 128);
            let whole = jpeg_roundtrip(&img, qf).unwrap();
            for py in 0..2u32 {
                for px in 0..3u32 {
                    let patch = img.crop(px * 64, py * 64, 64, 64).unwrap();
                    let patch_rt = jpeg_roundtrip(&patch, qf).unwrap();
                    let crop_rt = whole.crop(px * 64, py * 64, 64, 64).unwrap();
                    assert_eq!(patch_rt, crop_rt, "qf {qf} patch ({py},{px})");
                }
            }
        }
    }

    #[test]
    fn locality_holds_at_16_granularity_for_420() {
        let img = smooth_image(10, 128, 128);
        let whole = jpeg_roundtrip_with(&img, 90, ChromaMode::Yuv420).unwrap();
        let patch = img.crop(64, 0, 64, 64).unwrap();
        let patch_rt = jpeg_roundtrip_with(&patch, 90, ChromaMode::Yuv420).unwrap();
        assert_eq!(patch_rt, whole.crop(64, 0, 64, 64).unwrap());
    }

    #[test]
    fn padding_preserves_interior_blocks() {
        let img = smooth_image(11, 100, 60); // pads to 104x64
        let out = jpeg_roundtrip(&img, 90).unwrap();
        assert_eq!((out.width(), out.height()), (100, 60));
        let aligned = img.crop(0, 0, 96, 56).unwrap();
        let aligned_rt = jpeg_roundtrip(&aligned, 90).unwrap();
        assert_eq!(out.crop(0, 0, 96, 56).unwrap(), aligned_rt);
    }

    #[test]
    fn mse_is_nonincreasing_in_qf_statistically() {
        let imgs: Vec<ImageRgb> = (0..4).map(|s| smooth_image(100 + s, 96, 96)).collect();
        let mse_at = |qf: u8| -> f64 {
            imgs.iter()
                .map(|img| {
                    let out = jpeg_roundtrip(img, qf).unwrap();
                    img.data()
                        .iter()
                        .zip(out.data())
                        .map(|(&a, &b)| {
                            let d = a as f64 - b as f64;
                            d * d
                        })
                        .sum::<f64>()
                        / img.data().len() as f64
                })
                .sum::<f64>()
                / imgs.len() as f64
        };
        let sweep: Vec<f64> = [60u8, 75, 85, 95, 100].iter().map(|&q| mse_at(q)).collect();
        for pair in sweep.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "mse increased with qf: {sweep:?}"
            );
        }
    }
}
