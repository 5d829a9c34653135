//! Deterministic procedural image generator.
//!
//! Produces natural-looking color rasters (multi-octave value noise, a two
//! color palette field, a per-image dynamic-range envelope and fine grain)
//! entirely from a seed. Used to build self-contained corpora for tests and
//! demos; statistics are rich enough that tonal operators leave the same
//! kind of histogram traces they leave on photographs.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::img::{save_image, ImageRgb};
use crate::rng::{stream, StreamId};
use crate::{round_clamp_u8, Result};

#[inline]
fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Add one octave of bilinear value noise with the given cell size.
fn add_value_noise(
    seed: u64,
    tag: u64,
    octave: u64,
    w: usize,
    h: usize,
    cell: usize,
    amplitude: f32,
    out: &mut [f32],
) {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let mut rng = stream(seed, StreamId::Synth, &[tag, octave]);
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.gen::<f32>()).collect();
    for y in 0..h {
        let gy = y / cell;
        let fy = smooth((y % cell) as f32 / cell as f32);
        for x in 0..w {
            let gx = x / cell;
            let fx = smooth((x % cell) as f32 / cell as f32);
            let a = lattice[gy * gw + gx];
            let b = lattice[gy * gw + gx + 1];
            let c = lattice[(gy + 1) * gw + gx];
            let d = lattice[(gy + 1) * gw + gx + 1];
            let top = a + (b - a) * fx;
            let bot = c + (d - c) * fx;
            out[y * w + x] += amplitude * (top + (bot - top) * fy);
        }
    }
}

/// Normalized fractal field in `[0, 1]`.
fn fbm_field(seed: u64, tag: u64, w: usize, h: usize, cells: &[usize], amps: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    for (i, (&cell, &amp)) in cells.iter().zip(amps.iter()).enumerate() {
        add_value_noise(seed, tag, i as u64, w, h, cell, amp, &mut out);
    }
    let total: f32 = amps.iter().sum();
    for v in out.iter_mut() {
        *v /= total;
    }
    out
}

/// Sensor-style grain amplitude, identical across the corpus. A consistent
/// noise floor is what gives pristine images a recognizable signature that
/// tonal operators rescale and JPEG compression launders — the trace
/// ecology the detector is supposed to live in. High-ISO-like grain keeps
/// even the gentle operators (gamma) measurable per patch.
const GRAIN_SIGMA: f32 = 4.0;

/// Generate one image deterministically from `seed`.
pub fn generate_image(seed: u64, width: u32, height: u32) -> ImageRgb {
    let (w, h) = (width as usize, height as usize);
    let mut meta = stream(seed, StreamId::Synth, &[0xface]);

    // Two palette anchors, kept moderately saturated.
    let mut color = |lo: u8, hi: u8| -> [f32; 3] {
        [
            meta.gen_range(lo..=hi) as f32,
            meta.gen_range(lo..=hi) as f32,
            meta.gen_range(lo..=hi) as f32,
        ]
    };
    let pal_a = color(20, 140);
    let pal_b = color(110, 240);
    // Mild dynamic-range envelope: sources rarely span the full range
    // exactly, which keeps stretch-type operators from being no-ops.
    let lo = meta.gen_range(0.0f32..28.0);
    let hi = meta.gen_range(227.0f32..255.0);
    let luma_gain = meta.gen_range(0.75f32..1.05);
    // Per-image tone tendency in float space: shadow- or highlight-heavy
    // content, with a continuous histogram (real gamma traces only appear
    // when the 8-bit operator runs later).
    let tone = meta.gen_range(0.45f32..2.2);
    // Local-contrast diversity across the corpus.
    let detail_amp = meta.gen_range(10.0f32..34.0);

    let structure = fbm_field(
        seed,
        1,
        w,
        h,
        &[64, 32, 16, 8, 4],
        &[1.0, 0.55, 0.32, 0.18, 0.10],
    );
    let palette_mix = fbm_field(seed, 2, w, h, &[128, 64], &[1.0, 0.4]);
    let detail = fbm_field(seed, 3, w, h, &[2, 1], &[0.6, 0.4]);

    let mut grain = stream(seed, StreamId::Synth, &[0xbead]);
    let span = (hi - lo) / 255.0;
    ImageRgb::from_fn(width, height, |x, y| {
        let i = y as usize * w + x as usize;
        let l = 0.18 + luma_gain * structure[i].max(0.0).powf(tone);
        let m = palette_mix[i];
        let d = (detail[i] - 0.5) * detail_amp;
        let mut px = [0u8; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let base = pal_a[c] + (pal_b[c] - pal_a[c]) * m;
            let val = base * l + d;
            // Triangular kick with the corpus-wide grain amplitude.
            let g: f32 = (grain.gen::<f32>() + grain.gen::<f32>() - 1.0) * GRAIN_SIGMA * 2.449;
            *out = round_clamp_u8(shoulder_toe(lo + span * val + g) as f64);
        }
        px
    })
}

/// Film-like toe and shoulder: compresses values smoothly into (0, 255)
/// instead of clamping, so pristine images carry no mass exactly at the
/// range limits (hard saturation is a trace only the operators leave).
#[inline]
fn shoulder_toe(v: f32) -> f32 {
    const KNEE: f32 = 14.0;
    if v < KNEE {
        KNEE * ((v - KNEE) / KNEE).exp()
    } else if v > 255.0 - KNEE {
        255.0 - KNEE * (-(v - (255.0 - KNEE)) / KNEE).exp()
    } else {
        v
    }
}

/// Write `count` generated PNGs (`img0000.png`, ...) into `dir`.
pub fn generate_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    width: u32,
    height: u32,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = generate_image(seed.wrapping_add(i as u64), width, height);
        let path = dir.join(format!("img{i:04}.png"));
        save_image(&img, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_image(42, 96, 64);
        let b = generate_image(42, 96, 64);
        let c = generate_image(43, 96, 64);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn images_have_usable_tonal_statistics() {
        // Patch-level histograms need breadth for the operators to leave
        // traces: require a decent number of distinct V values per patch.
        let img = generate_image(7, 128, 128);
        for (px, py) in [(0u32, 0u32), (64, 0), (0, 64), (64, 64)] {
            let patch = img.crop(px, py, 64, 64).unwrap();
            let mut seen = [false; 256];
            for p in patch.data().chunks_exact(3) {
                seen[p[0].max(p[1]).max(p[2]) as usize] = true;
            }
            let distinct = seen.iter().filter(|&&s| s).count();
            assert!(
                distinct >= 32,
                "patch ({px},{py}) has only {distinct} distinct V values"
            );
        }
    }
}
