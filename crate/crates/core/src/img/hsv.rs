//! RGB ↔ HSV conversion on the hexcone model.
//!
//! V is kept on the 0–255 scale (V = max(R,G,B)) so the adjusted channel
//! stays commensurate with 8-bit histograms. The conversion is exact in the
//! sense that `hsv_to_rgb(rgb_to_hsv(x)) == x` for every 8-bit RGB triple:
//! the float error of the intermediate representation is far below the
//! final rounding step.

use super::ImageRgb;
use crate::round_clamp_u8;

/// Planar HSV raster: H in degrees `[0, 360)`, S in `[0, 1]`, V in `[0, 255]`.
#[derive(Clone, Debug)]
pub struct ImageHsv {
    width: u32,
    height: u32,
    pub h: Vec<f32>,
    pub s: Vec<f32>,
    pub v: Vec<f32>,
}

impl ImageHsv {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

/// Convert one 8-bit RGB triple to (H, S, V).
pub fn pixel_to_hsv(r: u8, g: u8, b: u8) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max as f32;
    if max == 0 {
        return (0.0, 0.0, 0.0);
    }
    let range = (max - min) as f64;
    let s = (range / max as f64) as f32;
    if max == min {
        return (0.0, s, v);
    }
    let (rf, gf, bf) = (r as f64, g as f64, b as f64);
    let mut h6 = if r == max {
        (gf - bf) / range
    } else if g == max {
        (bf - rf) / range + 2.0
    } else {
        (rf - gf) / range + 4.0
    };
    if h6 < 0.0 {
        h6 += 6.0;
    }
    ((60.0 * h6) as f32, s, v)
}

/// Convert one (H, S, V) triple back to 8-bit RGB.
pub fn pixel_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let v = v as f64;
    let s = s as f64;
    if s <= 0.0 {
        let g = round_clamp_u8(v);
        return [g, g, g];
    }
    let h6 = (h as f64 / 60.0).rem_euclid(6.0);
    let sector = (h6 as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [round_clamp_u8(r), round_clamp_u8(g), round_clamp_u8(b)]
}

/// Hexcone RGB → HSV over the whole raster.
pub fn rgb_to_hsv(img: &ImageRgb) -> ImageHsv {
    let n = img.width() as usize * img.height() as usize;
    let mut out = ImageHsv {
        width: img.width(),
        height: img.height(),
        h: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for px in img.data().chunks_exact(3) {
        let (h, s, v) = pixel_to_hsv(px[0], px[1], px[2]);
        out.h.push(h);
        out.s.push(s);
        out.v.push(v);
    }
    out
}

/// Inverse hexcone HSV → RGB; channel writes are rounded half away from
/// zero and clamped.
pub fn hsv_to_rgb(img: &ImageHsv) -> ImageRgb {
    let mut data = Vec::with_capacity(img.h.len() * 3);
    for i in 0..img.h.len() {
        data.extend_from_slice(&pixel_to_rgb(img.h[i], img.s[i], img.v[i]));
    }
    ImageRgb::new(img.width, img.height, data).expect("planar buffers share one length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gray_axis_and_primaries() {
        assert_eq!(pixel_to_hsv(255, 255, 255), (0.0, 0.0, 255.0));
        let (h, s, v) = pixel_to_hsv(255, 0, 0);
        assert_eq!((h, v), (0.0, 255.0));
        assert_abs_diff_eq!(s, 1.0);
    }

    #[test]
    fn hand_evaluated_hexcone_pixel() {
        // (64, 128, 192): V = 192, S = (192-64)/192 = 2/3,
        // H = 60*((64-128)/128 + 4) = 60*3.5 = 210.
        let (h, s, v) = pixel_to_hsv(64, 128, 192);
        assert_abs_diff_eq!(h, 210.0, epsilon = 1e-4);
        assert_abs_diff_eq!(s, 2.0 / 3.0, epsilon = 1e-6);
        assert_eq!(v, 192.0);
        assert_eq!(pixel_to_rgb(210.0, 2.0 / 3.0, 192.0), [64, 128, 192]);
    }

    #[test]
    fn gray_reconstruction() {
        assert_eq!(pixel_to_rgb(0.0, 0.0, 128.0), [128, 128, 128]);
    }

    #[test]
    fn roundtrip_identity_stratified() {
        // Every combination on a coarse lattice plus the extremes.
        let levels: Vec<u8> = (0..=255).step_by(15).chain([1, 254]).collect();
        for &r in &levels {
            for &g in &levels {
                for &b in &levels {
                    let (h, s, v) = pixel_to_hsv(r, g, b);
                    assert_eq!(
                        pixel_to_rgb(h, s, v),
                        [r, g, b],
                        "roundtrip failed at ({r},{g},{b})"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn roundtrip_identity_random(r: u8, g: u8, b: u8) {
            let (h, s, v) = pixel_to_hsv(r, g, b);
            prop_assert_eq!(pixel_to_rgb(h, s, v), [r, g, b]);
        }

        #[test]
        fn v_equals_channel_max(r: u8, g: u8, b: u8) {
            let (_, _, v) = pixel_to_hsv(r, g, b);
            prop_assert_eq!(v, r.max(g).max(b) as f32);
        }
    }
}
