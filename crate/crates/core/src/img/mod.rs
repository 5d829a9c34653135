//! Image representation, lossless I/O, RGB↔HSV conversion and 64×64 patch
//! tiling.
//!
//! All operations here are pure functions of their inputs; images can be
//! shared freely across threads for reading.

mod hsv;
mod io;

pub use hsv::{hsv_to_rgb, pixel_to_hsv, pixel_to_rgb, rgb_to_hsv, ImageHsv};
pub use io::{load_image, save_image};

use crate::{Error, Result};

/// Side length of a detector patch, fixed by the classifier input size.
pub const PATCH_SIZE: u32 = 64;

/// An 8-bit three-channel raster: row-major, interleaved R,G,B samples.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageRgb {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageRgb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageRgb({}x{})", self.width, self.height)
    }
}

impl ImageRgb {
    /// Wrap raw interleaved RGB samples. `data.len()` must equal
    /// `width * height * 3`.
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "pixel buffer length {} does not match {}x{}x3 = {}",
                data.len(),
                width,
                height,
                expected
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "image dimensions must be nonzero".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Build an image by evaluating `f(x, y) -> [r, g, b]` at every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Interleaved RGB samples, row-major.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Copy out the `w`×`h` region anchored at `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<ImageRgb> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidParameter(format!(
                "crop {}x{}+{}+{} exceeds image {}x{}",
                w, h, x0, y0, self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for y in y0..y0 + h {
            let start = 3 * (y as usize * self.width as usize + x0 as usize);
            data.extend_from_slice(&self.data[start..start + 3 * w as usize]);
        }
        ImageRgb::new(w, h, data)
    }
}

/// Non-overlapping 64×64 patches in row-major grid order, anchored at the
/// image's top-left corner. Right/bottom strips narrower than one patch are
/// discarded.
#[derive(Clone, Debug)]
pub struct PatchGrid {
    pub rows: u32,
    pub cols: u32,
    pub patch_size: u32,
    pub patches: Vec<ImageRgb>,
}

impl PatchGrid {
    /// Patch at grid position `(row, col)`.
    pub fn patch(&self, row: u32, col: u32) -> &ImageRgb {
        &self.patches[(row * self.cols + col) as usize]
    }
}

/// Tile an image into the 64×64 patch grid fed to the classifier.
///
/// Patch `(r, c)` covers pixel rows `[64r, 64r+64)` and columns
/// `[64c, 64c+64)`.
pub fn tile_patches(image: &ImageRgb) -> Result<PatchGrid> {
    if image.width < PATCH_SIZE || image.height < PATCH_SIZE {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
            min: PATCH_SIZE,
        });
    }
    let rows = image.height / PATCH_SIZE;
    let cols = image.width / PATCH_SIZE;
    let mut patches = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        for c in 0..cols {
            patches.push(
                image
                    .crop(c * PATCH_SIZE, r * PATCH_SIZE, PATCH_SIZE, PATCH_SIZE)
                    .expect("grid patch stays in bounds"),
            );
        }
    }
    Ok(PatchGrid {
        rows,
        cols,
        patch_size: PATCH_SIZE,
        patches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(width: u32, height: u32) -> ImageRgb {
        ImageRgb::from_fn(width, height, |x, y| {
            [
                (x % 256) as u8,
                (y % 256) as u8,
                ((x + y) % 256) as u8,
            ]
        })
    }

    #[test]
    fn roundtrip_buffer_invariant() {
        assert!(ImageRgb::new(2, 2, vec![0; 11]).is_err());
        assert!(ImageRgb::new(2, 2, vec![0; 12]).is_ok());
        assert!(ImageRgb::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn tiling_matches_floor_arithmetic() {
        // Grid size for a 4288x2848 raster: 67 columns by 44 rows.
        let rows = 2848 / 64;
        let cols = 4288 / 64;
        assert_eq!((rows, cols), (44, 67));
        assert_eq!(rows * cols, 2948);

        // Desk-size check on real tiling.
        let img = gradient(130, 200);
        let grid = tile_patches(&img).unwrap();
        assert_eq!(grid.rows, 3);
        assert_eq!(grid.cols, 2);
        assert_eq!(grid.patches.len(), 6);
    }

    #[test]
    fn single_patch_image_tiles_to_itself() {
        let img = gradient(64, 64);
        let grid = tile_patches(&img).unwrap();
        assert_eq!(grid.patches.len(), 1);
        assert_eq!(grid.patches[0], img);
    }

    #[test]
    fn undersized_image_is_rejected() {
        let img = gradient(63, 128);
        match tile_patches(&img) {
            Err(Error::ImageTooSmall { width: 63, .. }) => {}
            other => panic!("expected ImageTooSmall, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn patches_reassemble_the_cropped_region() {
        let img = gradient(150, 100);
        let grid = tile_patches(&img).unwrap();
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let patch = grid.patch(r, c);
                for y in 0..64 {
                    for x in 0..64 {
                        assert_eq!(
                            patch.pixel(x, y),
                            img.pixel(c * 64 + x, r * 64 + y),
                            "mismatch at patch ({r},{c}) offset ({x},{y})"
                        );
                    }
                }
            }
        }
    }
}
