//! Layer primitives: unpadded convolution (im2col + GEMM), 2×2 max-pooling,
//! dense, ReLU and inverted dropout. Each forward has a matching
//! hand-derived backward; convolutions recompute their im2col patch matrix
//! in the backward pass instead of caching it.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::tensor::{Scalar, Tensor4};

/// Fill `scratch` with the im2col patch matrix of one sample:
/// row `oy·ow + ox`, column `(dy·kw + dx)·cin + ci`.
fn im2col<F: Scalar>(
    sample: &[F],
    ih: usize,
    iw: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    scratch: &mut [F],
) {
    let (oh, ow) = (ih - kh + 1, iw - kw + 1);
    let k = kh * kw * cin;
    debug_assert_eq!(scratch.len(), oh * ow * k);
    let mut row = 0;
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut scratch[row * k..(row + 1) * k];
            let mut off = 0;
            for dy in 0..kh {
                let src = ((oy + dy) * iw + ox) * cin;
                dst[off..off + kw * cin].copy_from_slice(&sample[src..src + kw * cin]);
                off += kw * cin;
            }
            row += 1;
        }
    }
}

/// Samples per im2col slab. Larger slabs amortize the GEMM's weight packing
/// across the batch at the cost of scratch memory.
const CONV_CHUNK: usize = 8;

/// Unpadded stride-1 convolution. Weights are laid out
/// `[kh][kw][cin][cout]`, bias per output channel.
pub fn conv_forward<F: Scalar>(
    input: &Tensor4<F>,
    w: &[F],
    b: &[F],
    kh: usize,
    kw: usize,
    cout: usize,
) -> Tensor4<F> {
    let (n, ih, iw, cin) = input.dims();
    let (oh, ow) = (ih - kh + 1, iw - kw + 1);
    let k = kh * kw * cin;
    let p = oh * ow;
    debug_assert_eq!(w.len(), k * cout);
    debug_assert_eq!(b.len(), cout);

    let mut out = Tensor4::zeros(n, oh, ow, cout);
    let w_mat = ArrayView2::from_shape((k, cout), w).expect("weight shape");

    if kh == 1 && kw == 1 {
        // Pointwise convolution: the whole batch is already a patch matrix.
        let a_mat = ArrayView2::from_shape((n * p, k), input.data()).expect("1x1 view");
        let mut c_mat =
            ArrayViewMut2::from_shape((n * p, cout), out.data_mut()).expect("out shape");
        general_mat_mul(F::one(), &a_mat, &w_mat, F::zero(), &mut c_mat);
    } else {
        let mut scratch = vec![F::zero(); CONV_CHUNK.min(n) * p * k];
        for chunk_start in (0..n).step_by(CONV_CHUNK) {
            let g = CONV_CHUNK.min(n - chunk_start);
            for j in 0..g {
                im2col(
                    input.sample(chunk_start + j),
                    ih,
                    iw,
                    cin,
                    kh,
                    kw,
                    &mut scratch[j * p * k..(j + 1) * p * k],
                );
            }
            let a_mat =
                ArrayView2::from_shape((g * p, k), &scratch[..g * p * k]).expect("im2col shape");
            let out_rows =
                &mut out.data_mut()[chunk_start * p * cout..(chunk_start + g) * p * cout];
            let mut c_mat =
                ArrayViewMut2::from_shape((g * p, cout), out_rows).expect("out shape");
            general_mat_mul(F::one(), &a_mat, &w_mat, F::zero(), &mut c_mat);
        }
    }
    for row in out.data_mut().chunks_exact_mut(cout) {
        for (o, &bias) in row.iter_mut().zip(b.iter()) {
            *o += bias;
        }
    }
    out
}

/// Gradients of the convolution: input gradient plus accumulated weight and
/// bias gradients.
pub fn conv_backward<F: Scalar>(
    input: &Tensor4<F>,
    w: &[F],
    kh: usize,
    kw: usize,
    cout: usize,
    grad_out: &Tensor4<F>,
) -> (Tensor4<F>, Vec<F>, Vec<F>) {
    let (n, ih, iw, cin) = input.dims();
    let (_, oh, ow, _) = grad_out.dims();
    let k = kh * kw * cin;
    let p = oh * ow;

    let mut grad_in = Tensor4::zeros(n, ih, iw, cin);
    let mut grad_w = vec![F::zero(); k * cout];
    let mut grad_b = vec![F::zero(); cout];

    let w_mat = ArrayView2::from_shape((k, cout), w).expect("weight shape");

    for row in grad_out.data().chunks_exact(cout) {
        for (gb, &g) in grad_b.iter_mut().zip(row.iter()) {
            *gb += g;
        }
    }

    if kh == 1 && kw == 1 {
        let a_mat = ArrayView2::from_shape((n * p, k), input.data()).expect("1x1 view");
        let g_mat = ArrayView2::from_shape((n * p, cout), grad_out.data()).expect("grad shape");
        let mut gw = ArrayViewMut2::from_shape((k, cout), &mut grad_w[..]).expect("gw shape");
        general_mat_mul(F::one(), &a_mat.t(), &g_mat, F::one(), &mut gw);
        let mut gi =
            ArrayViewMut2::from_shape((n * p, k), grad_in.data_mut()).expect("gi shape");
        general_mat_mul(F::one(), &g_mat, &w_mat.t(), F::zero(), &mut gi);
        return (grad_in, grad_w, grad_b);
    }

    let chunk = CONV_CHUNK.min(n);
    let mut scratch = vec![F::zero(); chunk * p * k];
    let mut d_cols = vec![F::zero(); chunk * p * k];

    for chunk_start in (0..n).step_by(CONV_CHUNK) {
        let g = CONV_CHUNK.min(n - chunk_start);
        for j in 0..g {
            im2col(
                input.sample(chunk_start + j),
                ih,
                iw,
                cin,
                kh,
                kw,
                &mut scratch[j * p * k..(j + 1) * p * k],
            );
        }
        let a_mat =
            ArrayView2::from_shape((g * p, k), &scratch[..g * p * k]).expect("im2col shape");
        let g_rows = &grad_out.data()[chunk_start * p * cout..(chunk_start + g) * p * cout];
        let g_mat = ArrayView2::from_shape((g * p, cout), g_rows).expect("grad shape");

        // dW += A^T · G
        let mut gw = ArrayViewMut2::from_shape((k, cout), &mut grad_w[..]).expect("gw shape");
        general_mat_mul(F::one(), &a_mat.t(), &g_mat, F::one(), &mut gw);

        // dA = G · W^T, scattered back onto the input windows.
        {
            let mut da = ArrayViewMut2::from_shape((g * p, k), &mut d_cols[..g * p * k])
                .expect("dcols shape");
            general_mat_mul(F::one(), &g_mat, &w_mat.t(), F::zero(), &mut da);
        }
        for j in 0..g {
            let gi = grad_in.sample_mut(chunk_start + j);
            let cols = &d_cols[j * p * k..(j + 1) * p * k];
            let mut row = 0;
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = &cols[row * k..(row + 1) * k];
                    let mut off = 0;
                    for dy in 0..kh {
                        let dst = ((oy + dy) * iw + ox) * cin;
                        for (gv, &d) in
                            gi[dst..dst + kw * cin].iter_mut().zip(&src[off..off + kw * cin])
                        {
                            *gv += d;
                        }
                        off += kw * cin;
                    }
                    row += 1;
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

/// 2×2 max-pool with stride 2; trailing odd rows/columns are discarded.
/// Returns the pooled tensor and, per output element, which of the four
/// window positions won (`dy·2 + dx`, first index wins ties).
pub fn maxpool_forward<F: Scalar>(input: &Tensor4<F>) -> (Tensor4<F>, Vec<u8>) {
    let (n, ih, iw, c) = input.dims();
    let (oh, ow) = (ih / 2, iw / 2);
    let mut out = Tensor4::zeros(n, oh, ow, c);
    let mut argmax = vec![0u8; n * oh * ow * c];
    for i in 0..n {
        let src = input.sample(i);
        let dst = out.sample_mut(i);
        for oy in 0..oh {
            for ox in 0..ow {
                let o_base = (oy * ow + ox) * c;
                for ch in 0..c {
                    let mut best = F::neg_infinity();
                    let mut best_pos = 0u8;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = src[((2 * oy + dy) * iw + 2 * ox + dx) * c + ch];
                            if v > best {
                                best = v;
                                best_pos = (dy * 2 + dx) as u8;
                            }
                        }
                    }
                    dst[o_base + ch] = best;
                    argmax[i * oh * ow * c + o_base + ch] = best_pos;
                }
            }
        }
    }
    (out, argmax)
}

/// Route pooled gradients back to the recorded argmax positions.
pub fn maxpool_backward<F: Scalar>(
    grad_out: &Tensor4<F>,
    argmax: &[u8],
    in_dims: (usize, usize, usize, usize),
) -> Tensor4<F> {
    let (n, ih, iw, c) = in_dims;
    let (_, oh, ow, _) = grad_out.dims();
    let mut grad_in = Tensor4::zeros(n, ih, iw, c);
    for i in 0..n {
        let g = grad_out.sample(i);
        let gi = grad_in.sample_mut(i);
        for oy in 0..oh {
            for ox in 0..ow {
                let o_base = (oy * ow + ox) * c;
                for ch in 0..c {
                    let pos = argmax[i * oh * ow * c + o_base + ch];
                    let (dy, dx) = ((pos / 2) as usize, (pos % 2) as usize);
                    gi[((2 * oy + dy) * iw + 2 * ox + dx) * c + ch] += g[o_base + ch];
                }
            }
        }
    }
    grad_in
}

/// Dense layer over flattened features; weights `[cin][cout]`.
pub fn dense_forward<F: Scalar>(input: &Tensor4<F>, w: &[F], b: &[F], cout: usize) -> Tensor4<F> {
    let (n, h, wd, cin_c) = input.dims();
    let cin = h * wd * cin_c;
    let mut out = Tensor4::zeros(n, 1, 1, cout);
    let a = ArrayView2::from_shape((n, cin), input.data()).expect("dense input");
    let w_mat = ArrayView2::from_shape((cin, cout), w).expect("dense weight");
    let mut c_mat = ArrayViewMut2::from_shape((n, cout), out.data_mut()).expect("dense out");
    general_mat_mul(F::one(), &a, &w_mat, F::zero(), &mut c_mat);
    for row in out.data_mut().chunks_exact_mut(cout) {
        for (o, &bias) in row.iter_mut().zip(b.iter()) {
            *o += bias;
        }
    }
    out
}

pub fn dense_backward<F: Scalar>(
    input: &Tensor4<F>,
    w: &[F],
    cout: usize,
    grad_out: &Tensor4<F>,
) -> (Tensor4<F>, Vec<F>, Vec<F>) {
    let (n, h, wd, cin_c) = input.dims();
    let cin = h * wd * cin_c;
    let a = ArrayView2::from_shape((n, cin), input.data()).expect("dense input");
    let g = ArrayView2::from_shape((n, cout), grad_out.data()).expect("dense grad");
    let w_mat = ArrayView2::from_shape((cin, cout), w).expect("dense weight");

    let mut grad_w = vec![F::zero(); cin * cout];
    {
        let mut gw = ArrayViewMut2::from_shape((cin, cout), &mut grad_w[..]).expect("gw");
        general_mat_mul(F::one(), &a.t(), &g, F::zero(), &mut gw);
    }
    let mut grad_b = vec![F::zero(); cout];
    for row in grad_out.data().chunks_exact(cout) {
        for (gb, &gv) in grad_b.iter_mut().zip(row.iter()) {
            *gb += gv;
        }
    }
    let mut grad_in = Tensor4::zeros(n, h, wd, cin_c);
    {
        let mut gi = ArrayViewMut2::from_shape((n, cin), grad_in.data_mut()).expect("gi");
        general_mat_mul(F::one(), &g, &w_mat.t(), F::zero(), &mut gi);
    }
    (grad_in, grad_w, grad_b)
}

pub fn relu_in_place<F: Scalar>(t: &mut Tensor4<F>) {
    for v in t.data_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// ReLU gradient from the cached output: pass where the output is positive.
/// The rectified output doubles as the mask (it equals the pre-activation
/// wherever that was positive).
pub fn relu_backward<F: Scalar>(output: &Tensor4<F>, mut grad: Tensor4<F>) -> Tensor4<F> {
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        if o <= F::zero() {
            *g = F::zero();
        }
    }
    grad
}

/// Inverted dropout: each element is kept with probability `1 − p` and
/// scaled by `1/(1 − p)` so inference needs no rescaling. Returns the
/// multiplier mask for replay in the backward pass.
pub fn dropout_forward<F: Scalar>(
    input: &Tensor4<F>,
    p: f64,
    rng: &mut impl rand::Rng,
) -> (Tensor4<F>, Vec<F>) {
    let keep = 1.0 - p;
    let scale = F::of_f64(1.0 / keep);
    let mut out = input.clone();
    let mut mask = vec![F::zero(); input.len()];
    for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
        if rng.gen_bool(keep) {
            *m = scale;
            *v = *v * scale;
        } else {
            *v = F::zero();
        }
    }
    (out, mask)
}

pub fn dropout_backward<F: Scalar>(mut grad: Tensor4<F>, mask: &[F]) -> Tensor4<F> {
    for (g, &m) in grad.data_mut().iter_mut().zip(mask.iter()) {
        *g = *g * m;
    }
    grad
}

