//! Activation/weight tensor in NHWC layout.

use crate::img::ImageRgb;

/// Floating point element of the network: `f32` for real work, `f64` for
/// gradient checking.
pub trait Scalar:
    ndarray::LinalgScalar
    + num_traits::Float
    + num_traits::FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A `(batch, height, width, channels)` block, row-major with channels
/// contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<F> {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor4<F> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![F::zero(); n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), n * h * w * c, "tensor buffer length mismatch");
        Self { n, h, w, c, data }
    }

    /// Stack 64×64 RGB patches into a batch, scaling pixels to `[0, 1]`.
    pub fn from_patches(patches: &[ImageRgb]) -> Self {
        let n = patches.len();
        assert!(n > 0, "empty patch batch");
        let (h, w) = (patches[0].height() as usize, patches[0].width() as usize);
        let mut data = Vec::with_capacity(n * h * w * 3);
        let scale = F::of_f64(1.0 / 255.0);
        for p in patches {
            assert_eq!(
                (p.height() as usize, p.width() as usize),
                (h, w),
                "patch batch must be uniform"
            );
            data.extend(p.data().iter().map(|&b| F::of_f64(b as f64) * scale));
        }
        Self { n, h, w, c: 3, data }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<F> {
        self.data
    }

    /// Elements of one batch sample, contiguous.
    #[inline]
    pub fn sample(&self, i: usize) -> &[F] {
        let stride = self.h * self.w * self.c;
        &self.data[i * stride..(i + 1) * stride]
    }

    #[inline]
    pub fn sample_mut(&mut self, i: usize) -> &mut [F] {
        let stride = self.h * self.w * self.c;
        &mut self.data[i * stride..(i + 1) * stride]
    }
}
