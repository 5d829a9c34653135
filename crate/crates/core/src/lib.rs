//! Detection of generic contrast/tonal adjustment in images, robust to JPEG
//! recompression.
//!
//! The toolkit covers the full detection pipeline:
//!
//! * [`img`] — 8-bit RGB raster type, lossless PNG/PPM I/O, RGB↔HSV
//!   conversion and non-overlapping 64×64 patch tiling.
//! * [`tonal`] — the tonal adjustment operators used to synthesize the
//!   "adjusted" class (CLAHE, gamma, histogram stretching) plus the
//!   mismatched operators used only at test time.
//! * [`jpeg`] — JPEG compression as a pixel-domain round trip (8×8 DCT,
//!   quality-scaled quantization, inverse), local to 8×8 blocks so it can be
//!   applied per patch during training.
//! * [`cnn`] — the patch classification network: forward pass, hand-derived
//!   backpropagation, Adam, and a portable model file format.
//! * [`pipeline`] — dataset construction, leakage-safe splitting, and the
//!   two-stage (unaware → JPEG-aware) training protocol.
//! * [`eval`] — patch-score fusion, ROC/AUC, false-positive-rate calibrated
//!   thresholds and quality-factor sweep reports.
//! * [`synth`] — deterministic procedural image generator used for
//!   self-contained corpora in tests and demos.

// Link the system BLAS the conv/dense GEMMs dispatch to.
extern crate blas_src;

pub mod cnn;
mod error;
pub mod eval;
pub mod img;
pub mod jpeg;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tonal;

pub use error::{Error, Result};

/// Quantize a real sample to one 8-bit channel value: round half away from
/// zero, then clamp to `[0, 255]`. Every channel write in the crate goes
/// through this.
#[inline]
pub fn round_clamp_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}
