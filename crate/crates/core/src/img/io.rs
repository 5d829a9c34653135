//! Lossless raster I/O: 8-bit PNG and binary PPM (P6).
//!
//! Both formats round-trip bit-exactly, which the dataset pipeline relies
//! on before the final JPEG stage. Anything else (16-bit depth, grayscale,
//! other containers) is rejected at ingestion.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ColorType, ImageEncoder};

use super::ImageRgb;
use crate::{Error, Result};

/// Decode a PNG or binary PPM file into an [`ImageRgb`], pixel-exactly.
///
/// No color management is applied. PNG alpha is stripped; bit depths other
/// than 8 are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(path, &bytes)
    } else {
        Err(Error::ingest(path, "unsupported format (not PNG or P6 PPM)"))
    }
}

/// Encode an [`ImageRgb`] losslessly; the format is chosen by extension
/// (`.png` or `.ppm`). `load_image(save_image(x)) == x` bit-exactly.
pub fn save_image(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => {
            let mut out = Vec::new();
            image::codecs::png::PngEncoder::new(&mut out)
                .write_image(img.data(), img.width(), img.height(), ColorType::Rgb8.into())
                .map_err(|e| Error::ingest(path, format!("png encode failed: {e}")))?;
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        "ppm" => {
            let mut out = Vec::with_capacity(img.data().len() + 32);
            write!(out, "P6\n{} {}\n255\n", img.width(), img.height())
                .expect("in-memory write");
            out.extend_from_slice(img.data());
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        _ => Err(Error::InvalidParameter(format!(
            "unsupported output extension {ext:?} (use .png or .ppm)"
        ))),
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImageRgb> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::ingest(path, format!("png decode failed: {e}")))?;
    match decoded {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = (buf.width(), buf.height());
            ImageRgb::new(w, h, buf.into_raw())
        }
        image::DynamicImage::ImageRgba8(buf) => {
            // Alpha stripped per the ingestion contract.
            let (w, h) = (buf.width(), buf.height());
            let mut data = Vec::with_capacity(w as usize * h as usize * 3);
            for px in buf.pixels() {
                data.extend_from_slice(&px.0[..3]);
            }
            ImageRgb::new(w, h, data)
        }
        image::DynamicImage::ImageRgb16(_)
        | image::DynamicImage::ImageRgba16(_)
        | image::DynamicImage::ImageLuma16(_)
        | image::DynamicImage::ImageLumaA16(_) => {
            Err(Error::ingest(path, "unsupported bit depth (16-bit)"))
        }
        image::DynamicImage::ImageLuma8(_) | image::DynamicImage::ImageLumaA8(_) => {
            Err(Error::ingest(path, "grayscale input is not supported"))
        }
        other => Err(Error::ingest(
            path,
            format!("unsupported pixel layout {:?}", other.color()),
        )),
    }
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<ImageRgb> {
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        *field = read_ppm_number(path, bytes, &mut pos)?;
    }
    // Single whitespace byte separates the header from raster data.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::ingest(path, "malformed ppm header")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::ingest(
            path,
            format!("unsupported bit depth (maxval {maxval}, need 255)"),
        ));
    }
    let need = width * height * 3;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::ingest(path, "truncated ppm raster"))?;
    ImageRgb::new(width as u32, height as u32, raster.to_vec())
}

fn read_ppm_number(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // Skip whitespace and '#' comment lines.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while !matches!(bytes.get(*pos), None | Some(b'\n')) {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::ingest(path, "malformed ppm header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ingest(path, "malformed ppm header"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_bytes_decode_directly() {
        // 2x1 P6 with pixels (255,0,0) and (0,0,255).
        let raw = b"P6\n2 1\n255\n\xff\x00\x00\x00\x00\xff";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.ppm");
        std::fs::write(&path, raw).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.data(), &[255, 0, 0, 0, 0, 255]);
    }

    #[test]
    fn png_and_ppm_roundtrip_bit_exact() {
        let img = ImageRgb::from_fn(37, 23, |x, y| {
            [(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x ^ y) % 256) as u8]
        });
        let dir = tempfile::tempdir().unwrap();
        for name in ["r.png", "r.ppm"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back, img, "lossless roundtrip through {name}");
        }
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let deep = image::ImageBuffer::<image::Rgb<u16>, _>::from_pixel(
            4,
            4,
            image::Rgb([1000u16, 2000, 3000]),
        );
        deep.save(&path).unwrap();
        match load_image(&path) {
            Err(Error::Ingest { reason, .. }) => {
                assert!(reason.contains("bit depth"), "reason: {reason}")
            }
            other => panic!("expected ingest error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let img = ImageRgb::from_fn(4, 4, |_, _| [1, 2, 3]);
        match save_image(&img, "/nonexistent-dir/x.png") {
            Err(Error::Io { .. }) => {}
            other => panic!("expected io error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn ppm_comments_and_whitespace_are_tolerated() {
        let raw = b"P6 # comment\n# another\n 3\t2 \n255\n\
                    \x01\x02\x03\x04\x05\x06\x07\x08\x09\x0a\x0b\x0c\
                    \x0d\x0e\x0f\x10\x11\x12";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        std::fs::write(&path, &raw[..]).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.pixel(0, 0), [1, 2, 3]);
        assert_eq!(img.pixel(2, 1), [16, 17, 18]);
    }
}
