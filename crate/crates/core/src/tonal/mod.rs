//! Contrast, brightness and tonal adjustment operators.
//!
//! The first group (CLAHE, gamma correction, histogram stretching) is what
//! the detector is trained against; the second group (HistEq, brightness/
//! contrast, S-curve, the Auto* tools) exists only to test generalization
//! under processing mismatch. CLAHE, HS, HistEq, the S-curve and
//! AutoContrast operate on the V channel of the HSV decomposition; gamma,
//! brightness/contrast, AutoTone and AutoColor operate per RGB channel.
//!
//! Every operator is deterministic and maps a valid `ImageRgb` to a valid
//! `ImageRgb` of the same size.

mod clahe;

pub use clahe::apply_clahe;

use rand::Rng;

use crate::img::{hsv_to_rgb, rgb_to_hsv, ImageRgb};
use crate::{round_clamp_u8, Error, Result};

/// One tonal adjustment and its parameters. The variant names double as the
/// stable CLI vocabulary (`--kind` values, kebab-case).
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorSpec {
    Clahe { clip_limit: f64, grid: u32 },
    Gamma { gamma: f64 },
    HistStretch { sat_low: f64, sat_high: f64 },
    HistEq,
    Brightness { offset: f64 },
    Contrast { amount: f64 },
    SCurve,
    AutoContrast { clip: f64 },
    AutoColor { clip: f64 },
    AutoTone { clip: f64 },
}

impl OperatorSpec {
    /// Run the operator. Parameter ranges are validated before any work.
    pub fn apply(&self, img: &ImageRgb) -> Result<ImageRgb> {
        match *self {
            OperatorSpec::Clahe { clip_limit, grid } => apply_clahe(img, clip_limit, grid),
            OperatorSpec::Gamma { gamma } => apply_gamma(img, gamma),
            OperatorSpec::HistStretch { sat_low, sat_high } => {
                apply_hist_stretch(img, sat_low, sat_high)
            }
            OperatorSpec::HistEq => Ok(apply_hist_eq(img)),
            OperatorSpec::Brightness { offset } => apply_brightness_contrast(img, offset, 0.0),
            OperatorSpec::Contrast { amount } => apply_brightness_contrast(img, 0.0, amount),
            OperatorSpec::SCurve => Ok(apply_s_curve(img)),
            OperatorSpec::AutoContrast { clip } => apply_auto(img, AutoMode::Contrast, clip),
            OperatorSpec::AutoColor { clip } => apply_auto(img, AutoMode::Color, clip),
            OperatorSpec::AutoTone { clip } => apply_auto(img, AutoMode::Tone, clip),
        }
    }

    /// Compact single-token form used in dataset manifests and reports,
    /// e.g. `clahe:clip=0.005;grid=8` or `gamma:gamma=1.5`.
    pub fn to_token(&self) -> String {
        match *self {
            OperatorSpec::Clahe { clip_limit, grid } => {
                format!("clahe:clip={clip_limit};grid={grid}")
            }
            OperatorSpec::Gamma { gamma } => format!("gamma:gamma={gamma}"),
            OperatorSpec::HistStretch { sat_low, sat_high } => {
                format!("hist-stretch:low={sat_low};high={sat_high}")
            }
            OperatorSpec::HistEq => "hist-eq".into(),
            OperatorSpec::Brightness { offset } => format!("brightness:offset={offset}"),
            OperatorSpec::Contrast { amount } => format!("contrast:amount={amount}"),
            OperatorSpec::SCurve => "s-curve".into(),
            OperatorSpec::AutoContrast { clip } => format!("auto-contrast:clip={clip}"),
            OperatorSpec::AutoColor { clip } => format!("auto-color:clip={clip}"),
            OperatorSpec::AutoTone { clip } => format!("auto-tone:clip={clip}"),
        }
    }

    /// Parse the token form produced by [`to_token`](Self::to_token); also
    /// accepts a bare kind with explicit `key=value` parameters, which is
    /// how the CLI assembles operators from flags.
    pub fn parse_token(token: &str) -> Result<OperatorSpec> {
        let (kind, params) = match token.split_once(':') {
            Some((k, p)) => (k, p),
            None => (token, ""),
        };
        let mut pairs = Vec::new();
        for part in params.split(';').filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("operator parameter {part:?} is not key=value"))
            })?;
            let v: f64 = v.parse().map_err(|_| {
                Error::InvalidParameter(format!("operator parameter {k}={v:?} is not numeric"))
            })?;
            pairs.push((k.to_string(), v));
        }
        Self::from_kind_params(kind, &pairs)
    }

    /// Assemble from a kind name and `(key, value)` parameter pairs.
    pub fn from_kind_params(kind: &str, params: &[(String, f64)]) -> Result<OperatorSpec> {
        let get = |key: &str, default: Option<f64>| -> Result<f64> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .or(default)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("operator {kind} needs parameter {key}"))
                })
        };
        let spec = match kind {
            "clahe" => OperatorSpec::Clahe {
                clip_limit: get("clip", Some(0.005))?,
                grid: get("grid", Some(8.0))? as u32,
            },
            "gamma" => OperatorSpec::Gamma {
                gamma: get("gamma", None)?,
            },
            "hist-stretch" => OperatorSpec::HistStretch {
                sat_low: get("low", Some(5.0))?,
                sat_high: get("high", Some(5.0))?,
            },
            "hist-eq" => OperatorSpec::HistEq,
            "brightness" => OperatorSpec::Brightness {
                offset: get("offset", None)?,
            },
            "contrast" => OperatorSpec::Contrast {
                amount: get("amount", None)?,
            },
            "s-curve" => OperatorSpec::SCurve,
            "auto-contrast" => OperatorSpec::AutoContrast {
                clip: get("clip", Some(7.0))?,
            },
            "auto-color" => OperatorSpec::AutoColor {
                clip: get("clip", Some(7.0))?,
            },
            "auto-tone" => OperatorSpec::AutoTone {
                clip: get("clip", Some(5.0))?,
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown operator kind {other:?}"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check parameter ranges without running the operator.
    pub fn validate(&self) -> Result<()> {
        match *self {
            OperatorSpec::Clahe { clip_limit, grid } => {
                if !(clip_limit > 0.0 && clip_limit <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "clahe clip limit {clip_limit} must be in (0, 1]"
                    )));
                }
                if grid < 1 {
                    return Err(Error::InvalidParameter("clahe grid must be >= 1".into()));
                }
            }
            OperatorSpec::Gamma { gamma } => {
                if gamma <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "gamma {gamma} must be positive"
                    )));
                }
            }
            OperatorSpec::HistStretch { sat_low, sat_high } => {
                check_tail(sat_low)?;
                check_tail(sat_high)?;
            }
            OperatorSpec::Brightness { offset } => check_hundred("brightness offset", offset)?,
            OperatorSpec::Contrast { amount } => check_hundred("contrast amount", amount)?,
            OperatorSpec::AutoContrast { clip }
            | OperatorSpec::AutoColor { clip }
            | OperatorSpec::AutoTone { clip } => check_tail(clip)?,
            OperatorSpec::HistEq | OperatorSpec::SCurve => {}
        }
        Ok(())
    }
}

fn check_tail(pct: f64) -> Result<()> {
    if !(0.0..50.0).contains(&pct) {
        return Err(Error::InvalidParameter(format!(
            "saturation/clip percentage {pct} must be in [0, 50)"
        )));
    }
    Ok(())
}

fn check_hundred(name: &str, x: f64) -> Result<()> {
    if !(-100.0..=100.0).contains(&x) {
        return Err(Error::InvalidParameter(format!(
            "{name} {x} must be in [-100, 100]"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Per-channel and V-channel machinery
// ---------------------------------------------------------------------------

/// Map every RGB sample through a per-channel lookup table (R, G and B get
/// the same table).
fn map_rgb_lut(img: &ImageRgb, lut: &[u8; 256]) -> ImageRgb {
    let data = img.data().iter().map(|&x| lut[x as usize]).collect();
    ImageRgb::new(img.width(), img.height(), data).expect("same length")
}

/// Map each channel through its own lookup table.
fn map_rgb_luts(img: &ImageRgb, luts: &[[u8; 256]; 3]) -> ImageRgb {
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        data.push(luts[0][px[0] as usize]);
        data.push(luts[1][px[1] as usize]);
        data.push(luts[2][px[2] as usize]);
    }
    ImageRgb::new(img.width(), img.height(), data).expect("same length")
}

/// The V plane of the HSV decomposition; always exactly integral for 8-bit
/// input since V = max(R, G, B).
pub(crate) fn v_plane(img: &ImageRgb) -> Vec<u8> {
    img.data()
        .chunks_exact(3)
        .map(|px| px[0].max(px[1]).max(px[2]))
        .collect()
}

/// Replace the V channel through a lookup table and reconstruct RGB. Pixels
/// whose V value is unchanged come back bit-identical (the HSV round trip
/// is exact).
fn map_v_lut(img: &ImageRgb, lut: &[u8; 256]) -> ImageRgb {
    let mut hsv = rgb_to_hsv(img);
    for v in hsv.v.iter_mut() {
        *v = lut[*v as usize] as f32;
    }
    hsv_to_rgb(&hsv)
}

/// 256-bin histogram of a sample plane.
pub(crate) fn histogram256(plane: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in plane {
        hist[v as usize] += 1;
    }
    hist
}

/// Percentile bounds for stretch-type operators.
///
/// `lo` is the smallest value whose cumulative count exceeds the low-tail
/// budget `sat_low% · n`; `hi` is the largest value whose upper cumulative
/// count exceeds the high-tail budget. At 0% the bounds are the occupied
/// min/max, so a full-range channel is left untouched.
pub(crate) fn stretch_bounds(hist: &[u64; 256], sat_low: f64, sat_high: f64) -> (u8, u8) {
    let n: u64 = hist.iter().sum();
    let t_low = sat_low / 100.0 * n as f64;
    let t_high = sat_high / 100.0 * n as f64;
    let mut lo = 255u8;
    let mut cum = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cum += count;
        if cum as f64 > t_low {
            lo = v as u8;
            break;
        }
    }
    let mut hi = 0u8;
    let mut upper = 0u64;
    for (v, &count) in hist.iter().enumerate().rev() {
        upper += count;
        if upper as f64 > t_high {
            hi = v as u8;
            break;
        }
    }
    (lo, hi.max(lo))
}

/// Affine stretch table mapping `[lo, hi]` onto `[0, 255]`. Degenerate
/// bounds (`hi == lo`) map values at or below `lo` to 0 and everything
/// above to 255.
pub(crate) fn stretch_lut(lo: u8, hi: u8) -> [u8; 256] {
    let mut lut = [0u8; 256];
    if hi == lo {
        for (v, out) in lut.iter_mut().enumerate() {
            *out = if v as u8 > lo { 255 } else { 0 };
        }
        return lut;
    }
    let span = (hi - lo) as f64;
    for (v, out) in lut.iter_mut().enumerate() {
        *out = round_clamp_u8(255.0 * (v as f64 - lo as f64) / span);
    }
    lut
}

/// Classical min-shifted equalization table:
/// `v ↦ round((cdf(v) − cdf_min) / (total − cdf_min) · 255)`, so the darkest
/// occupied bin maps to 0. A single-bin histogram yields the identity table.
pub(crate) fn equalize_lut(hist: &[u64; 256]) -> [u8; 256] {
    let total: u64 = hist.iter().sum();
    let cdf_min = hist.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let mut lut = [0u8; 256];
    if total == cdf_min {
        for (v, out) in lut.iter_mut().enumerate() {
            *out = v as u8;
        }
        return lut;
    }
    let denom = (total - cdf_min) as f64;
    let mut cdf = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cdf += count;
        if cdf >= cdf_min {
            lut[v] = round_clamp_u8((cdf - cdf_min) as f64 / denom * 255.0);
        }
    }
    lut
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Gamma correction applied to each RGB channel independently:
/// `x ↦ round(255 · (x/255)^gamma)`.
pub fn apply_gamma(img: &ImageRgb, gamma: f64) -> Result<ImageRgb> {
    if gamma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma {gamma} must be positive"
        )));
    }
    let mut lut = [0u8; 256];
    for (x, out) in lut.iter_mut().enumerate() {
        *out = round_clamp_u8(255.0 * (x as f64 / 255.0).powf(gamma));
    }
    Ok(map_rgb_lut(img, &lut))
}

/// Histogram stretching of the V channel with independent per-tail
/// saturation percentages.
pub fn apply_hist_stretch(img: &ImageRgb, sat_low: f64, sat_high: f64) -> Result<ImageRgb> {
    check_tail(sat_low)?;
    check_tail(sat_high)?;
    let hist = histogram256(&v_plane(img));
    let (lo, hi) = stretch_bounds(&hist, sat_low, sat_high);
    Ok(map_v_lut(img, &stretch_lut(lo, hi)))
}

/// Global histogram equalization of the V channel.
pub fn apply_hist_eq(img: &ImageRgb) -> ImageRgb {
    let hist = histogram256(&v_plane(img));
    map_v_lut(img, &equalize_lut(&hist))
}

/// Brightness/contrast with the pivot-128 affine law, per RGB channel:
/// `x ↦ clamp(round(128 + (1 + contrast/100)·(x − 128) + 255·brightness/200))`.
///
/// This is a documented approximation of the editor tools, not a pixel-exact
/// replica.
pub fn apply_brightness_contrast(img: &ImageRgb, brightness: f64, contrast: f64) -> Result<ImageRgb> {
    check_hundred("brightness offset", brightness)?;
    check_hundred("contrast amount", contrast)?;
    let gain = 1.0 + contrast / 100.0;
    let lift = 255.0 * brightness / 200.0;
    let mut lut = [0u8; 256];
    for (x, out) in lut.iter_mut().enumerate() {
        *out = round_clamp_u8(128.0 + gain * (x as f64 - 128.0) + lift);
    }
    Ok(map_rgb_lut(img, &lut))
}

/// Midtone-contrast S-curve on the V channel: the smoothstep tone curve
/// `x ↦ 255·(3t² − 2t³)` with `t = x/255`. Monotone, fixes 0 and 255,
/// steepest at the midtones.
pub fn apply_s_curve(img: &ImageRgb) -> ImageRgb {
    map_v_lut(img, &s_curve_lut())
}

pub(crate) fn s_curve_lut() -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (x, out) in lut.iter_mut().enumerate() {
        let t = x as f64 / 255.0;
        *out = round_clamp_u8(255.0 * t * t * (3.0 - 2.0 * t));
    }
    lut
}

/// The Auto* editor tools, as documented clip-stretch approximations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AutoMode {
    /// Histogram stretch with `clip%` tails on V only.
    Contrast,
    /// Independent histogram stretch per R, G, B channel.
    Tone,
    /// Per-channel stretch, then each channel's median is shifted halfway
    /// toward the three-channel median average ("snap neutral midtones").
    Color,
}

/// Apply one of the Auto* modes with the given clipping percentage per tail.
pub fn apply_auto(img: &ImageRgb, mode: AutoMode, clip: f64) -> Result<ImageRgb> {
    check_tail(clip)?;
    match mode {
        AutoMode::Contrast => apply_hist_stretch(img, clip, clip),
        AutoMode::Tone => Ok(map_rgb_luts(img, &per_channel_stretch_luts(img, clip))),
        AutoMode::Color => {
            let stretched = map_rgb_luts(img, &per_channel_stretch_luts(img, clip));
            let med = channel_medians(&stretched);
            let avg = (med[0] as f64 + med[1] as f64 + med[2] as f64) / 3.0;
            let mut luts = [[0u8; 256]; 3];
            for c in 0..3 {
                let shift = (avg - med[c] as f64) / 2.0;
                for (x, out) in luts[c].iter_mut().enumerate() {
                    *out = round_clamp_u8(x as f64 + shift);
                }
            }
            Ok(map_rgb_luts(&stretched, &luts))
        }
    }
}

fn per_channel_stretch_luts(img: &ImageRgb, clip: f64) -> [[u8; 256]; 3] {
    let mut hists = [[0u64; 256]; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            hists[c][px[c] as usize] += 1;
        }
    }
    let mut luts = [[0u8; 256]; 3];
    for c in 0..3 {
        let (lo, hi) = stretch_bounds(&hists[c], clip, clip);
        luts[c] = stretch_lut(lo, hi);
    }
    luts
}

/// Lower median per channel: the smallest value whose cumulative count
/// reaches half the pixel count.
fn channel_medians(img: &ImageRgb) -> [u8; 3] {
    let mut hists = [[0u64; 256]; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            hists[c][px[c] as usize] += 1;
        }
    }
    let n = (img.width() as u64) * (img.height() as u64);
    let mut med = [0u8; 3];
    for c in 0..3 {
        let mut cum = 0u64;
        for (v, &count) in hists[c].iter().enumerate() {
            cum += count;
            if 2 * cum >= n {
                med[c] = v as u8;
                break;
            }
        }
    }
    med
}

/// Draw one training-class adjustment: CLAHE(0.005, 8×8), gamma (1.5 or 0.7
/// with probability ½ each) or histogram stretching (5%/5%), each with
/// probability ⅓.
pub fn sample_training_adjustment(rng: &mut impl Rng) -> OperatorSpec {
    match rng.gen_range(0u8..3) {
        0 => OperatorSpec::Clahe {
            clip_limit: 0.005,
            grid: 8,
        },
        1 => OperatorSpec::Gamma {
            gamma: if rng.gen_bool(0.5) { 1.5 } else { 0.7 },
        },
        _ => OperatorSpec::HistStretch {
            sat_low: 5.0,
            sat_high: 5.0,
        },
    }
}
