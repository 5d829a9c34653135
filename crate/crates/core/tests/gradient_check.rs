//! Finite-difference verification of every backward pass, in 64-bit check
//! mode: each layer type in isolation against a linear readout, then a
//! reduced all-layer-type network end to end through the softmax
//! cross-entropy loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tonedetect_core::cnn::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, maxpool_backward, maxpool_forward, relu_backward, relu_in_place,
};
use tonedetect_core::cnn::{
    cross_entropy_from_logits, LayerKind, Mode, Net, NetSpec, Tensor4,
};

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * scale).collect()
}

/// Relative agreement between an analytic and a numerical derivative. Pairs
/// that are both numerically zero compare as exact.
fn check_pair(analytic: f64, numeric: f64, what: &str) {
    let mag = analytic.abs().max(numeric.abs());
    if mag < 1e-6 {
        assert!(
            (analytic - numeric).abs() < 1e-9,
            "{what}: near-zero pair diverged ({analytic} vs {numeric})"
        );
    } else {
        let rel = (analytic - numeric).abs() / mag;
        assert!(
            rel < TOL,
            "{what}: relative error {rel} (analytic {analytic}, numeric {numeric})"
        );
    }
}

/// Central finite difference of `f` under perturbation of one slot.
fn central_diff(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(H) - f(-H)) / (2.0 * H)
}

// ---------------------------------------------------------------------------
// Isolated layers, linear readout: L = Σ c ⊙ layer(x)
// ---------------------------------------------------------------------------

#[test]
fn conv_gradients_match_finite_differences() {
    let mut r = rng(1);
    let (n, ih, iw, cin, cout, kh, kw) = (2, 6, 5, 3, 4, 3, 3);
    let x = random_vec(&mut r, n * ih * iw * cin, 1.0);
    let w = random_vec(&mut r, kh * kw * cin * cout, 0.5);
    let b = random_vec(&mut r, cout, 0.5);
    let (oh, ow) = (ih - kh + 1, iw - kw + 1);
    let c = random_vec(&mut r, n * oh * ow * cout, 1.0);

    let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
        let input = Tensor4::from_vec(n, ih, iw, cin, x.to_vec());
        let out = conv_forward(&input, w, b, kh, kw, cout);
        out.data().iter().zip(&c).map(|(&o, &ci)| o * ci).sum()
    };

    let input = Tensor4::from_vec(n, ih, iw, cin, x.clone());
    let grad_out = Tensor4::from_vec(n, oh, ow, cout, c.clone());
    let (gi, gw, gb) = conv_backward(&input, &w, kh, kw, cout, &grad_out);

    for j in (0..w.len()).step_by(3) {
        let num = central_diff(|h| {
            let mut wp = w.clone();
            wp[j] += h;
            loss(&x, &wp, &b)
        });
        check_pair(gw[j], num, &format!("conv dW[{j}]"));
    }
    for j in 0..b.len() {
        let num = central_diff(|h| {
            let mut bp = b.clone();
            bp[j] += h;
            loss(&x, &w, &bp)
        });
        check_pair(gb[j], num, &format!("conv db[{j}]"));
    }
    for j in (0..x.len()).step_by(7) {
        let num = central_diff(|h| {
            let mut xp = x.clone();
            xp[j] += h;
            loss(&xp, &w, &b)
        });
        check_pair(gi.data()[j], num, &format!("conv dX[{j}]"));
    }
}

#[test]
fn pointwise_conv_gradients_match_finite_differences() {
    let mut r = rng(2);
    let (n, ih, iw, cin, cout) = (2, 3, 3, 5, 2);
    let x = random_vec(&mut r, n * ih * iw * cin, 1.0);
    let w = random_vec(&mut r, cin * cout, 0.5);
    let b = random_vec(&mut r, cout, 0.5);
    let c = random_vec(&mut r, n * ih * iw * cout, 1.0);

    let loss = |x: &[f64], w: &[f64]| -> f64 {
        let input = Tensor4::from_vec(n, ih, iw, cin, x.to_vec());
        let out = conv_forward(&input, w, &b, 1, 1, cout);
        out.data().iter().zip(&c).map(|(&o, &ci)| o * ci).sum()
    };

    let input = Tensor4::from_vec(n, ih, iw, cin, x.clone());
    let grad_out = Tensor4::from_vec(n, ih, iw, cout, c.clone());
    let (gi, gw, _) = conv_backward(&input, &w, 1, 1, cout, &grad_out);
    for j in 0..w.len() {
        let num = central_diff(|h| {
            let mut wp = w.clone();
            wp[j] += h;
            loss(&x, &wp)
        });
        check_pair(gw[j], num, &format!("1x1 dW[{j}]"));
    }
    for j in (0..x.len()).step_by(5) {
        let num = central_diff(|h| {
            let mut xp = x.clone();
            xp[j] += h;
            loss(&xp, &w)
        });
        check_pair(gi.data()[j], num, &format!("1x1 dX[{j}]"));
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut r = rng(3);
    let (n, cin, cout) = (3, 7, 4);
    let x = random_vec(&mut r, n * cin, 1.0);
    let w = random_vec(&mut r, cin * cout, 0.5);
    let b = random_vec(&mut r, cout, 0.5);
    let c = random_vec(&mut r, n * cout, 1.0);

    let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
        let input = Tensor4::from_vec(n, 1, 1, cin, x.to_vec());
        let out = dense_forward(&input, w, b, cout);
        out.data().iter().zip(&c).map(|(&o, &ci)| o * ci).sum()
    };

    let input = Tensor4::from_vec(n, 1, 1, cin, x.clone());
    let grad_out = Tensor4::from_vec(n, 1, 1, cout, c.clone());
    let (gi, gw, gb) = dense_backward(&input, &w, cout, &grad_out);
    for j in 0..w.len() {
        let num = central_diff(|h| {
            let mut wp = w.clone();
            wp[j] += h;
            loss(&x, &wp, &b)
        });
        check_pair(gw[j], num, &format!("dense dW[{j}]"));
    }
    for j in 0..b.len() {
        let num = central_diff(|h| {
            let mut bp = b.clone();
            bp[j] += h;
            loss(&x, &w, &bp)
        });
        check_pair(gb[j], num, &format!("dense db[{j}]"));
    }
    for j in 0..x.len() {
        let num = central_diff(|h| {
            let mut xp = x.clone();
            xp[j] += h;
            loss(&xp, &w, &b)
        });
        check_pair(gi.data()[j], num, &format!("dense dX[{j}]"));
    }
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    // Any two window values within 2H of each other would make the max
    // non-differentiable at the probe scale; this seed keeps them apart.
    let mut r = rng(4);
    let (n, ih, iw, ch) = (2, 5, 6, 3);
    let x = random_vec(&mut r, n * ih * iw * ch, 1.0);
    let (out0, _) = maxpool_forward(&Tensor4::from_vec(n, ih, iw, ch, x.clone()));
    let (_, oh, ow, _) = out0.dims();
    let c = random_vec(&mut r, n * oh * ow * ch, 1.0);

    let loss = |x: &[f64]| -> f64 {
        let (out, _) = maxpool_forward(&Tensor4::from_vec(n, ih, iw, ch, x.to_vec()));
        out.data().iter().zip(&c).map(|(&o, &ci)| o * ci).sum()
    };

    let input = Tensor4::from_vec(n, ih, iw, ch, x.clone());
    let (_, argmax) = maxpool_forward(&input);
    let grad_out = Tensor4::from_vec(n, oh, ow, ch, c.clone());
    let gi = maxpool_backward(&grad_out, &argmax, input.dims());
    for j in 0..x.len() {
        let num = central_diff(|h| {
            let mut xp = x.clone();
            xp[j] += h;
            loss(&xp)
        });
        check_pair(gi.data()[j], num, &format!("pool dX[{j}]"));
    }
}

#[test]
fn maxpool_tie_routes_to_first_index() {
    // A window of equal values must send all gradient to position (0,0).
    let x = vec![1.0f64; 4 * 3]; // 1 sample, 2x2 spatial (one window), 3 ch
    let input = Tensor4::from_vec(1, 2, 2, 3, x);
    let (_, argmax) = maxpool_forward(&input);
    assert!(argmax.iter().all(|&a| a == 0));
    let grad_out = Tensor4::from_vec(1, 1, 1, 3, vec![1.0, 2.0, 3.0]);
    let gi = maxpool_backward(&grad_out, &argmax, (1, 2, 2, 3));
    assert_eq!(&gi.data()[..3], &[1.0, 2.0, 3.0]);
    assert!(gi.data()[3..].iter().all(|&g| g == 0.0));
}

#[test]
fn relu_and_dropout_gradients_match_finite_differences() {
    let mut r = rng(5);
    let len = 40;
    // Keep activations away from the ReLU kink at the probe scale.
    let x: Vec<f64> = (0..len)
        .map(|_| {
            let v: f64 = (r.gen::<f64>() - 0.5) * 2.0;
            v + 0.05 * v.signum()
        })
        .collect();
    let c = random_vec(&mut r, len, 1.0);

    let relu_loss = |x: &[f64]| -> f64 {
        let mut t = Tensor4::from_vec(1, 1, 1, len, x.to_vec());
        relu_in_place(&mut t);
        t.data().iter().zip(&c).map(|(&o, &ci)| o * ci).sum()
    };
    let mut out = Tensor4::from_vec(1, 1, 1, len, x.clone());
    relu_in_place(&mut out);
    let gi = relu_backward(&out, Tensor4::from_vec(1, 1, 1, len, c.clone()));
    for j in 0..len {
        let num = central_diff(|h| {
            let mut xp = x.clone();
            xp[j] += h;
            relu_loss(&xp)
        });
        check_pair(gi.data()[j], num, &format!("relu dX[{j}]"));
    }

    // Dropout with a replayed mask is a fixed diagonal scaling.
    let drop_loss = |x: &[f64]| -> f64 {
        let mut mask_rng = rng(77);
        let (out, _) = dropout_forward(
            &Tensor4::from_vec(1, 1, 1, len, x.to_vec()),
            0.5,
            &mut mask_rng,
        );
        out.data().iter().zip(&c).map(|(&o, &ci)| o * ci).sum()
    };
    let mut mask_rng = rng(77);
    let (_, mask) = dropout_forward(&Tensor4::from_vec(1, 1, 1, len, x.clone()), 0.5, &mut mask_rng);
    let gi = dropout_backward(Tensor4::from_vec(1, 1, 1, len, c.clone()), &mask);
    for j in 0..len {
        let num = central_diff(|h| {
            let mut xp = x.clone();
            xp[j] += h;
            drop_loss(&xp)
        });
        check_pair(gi.data()[j], num, &format!("dropout dX[{j}]"));
    }
}

// ---------------------------------------------------------------------------
// End to end on a reduced network through softmax cross-entropy
// ---------------------------------------------------------------------------

/// A miniature of the patch classifier at one-eighth width: every layer
/// type, 8×8 inputs.
fn reduced_spec() -> NetSpec {
    NetSpec {
        input: (8, 8, 3),
        layers: vec![
            LayerKind::Conv { kh: 3, kw: 3, cin: 3, cout: 4 },
            LayerKind::Relu,
            LayerKind::Conv { kh: 3, kw: 3, cin: 4, cout: 8 },
            LayerKind::Relu,
            LayerKind::MaxPool2,
            LayerKind::Conv { kh: 1, kw: 1, cin: 8, cout: 4 },
            LayerKind::Relu,
            LayerKind::Flatten,
            LayerKind::Dense { cin: 16, cout: 31 },
            LayerKind::Relu,
            LayerKind::Dropout { p: 0.5 },
            LayerKind::Dense { cin: 31, cout: 2 },
        ],
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let net = Net::<f64>::init(reduced_spec(), 11).unwrap();
    let mut r = rng(6);
    let n = 4;
    let data: Vec<f64> = (0..n * 8 * 8 * 3).map(|_| r.gen::<f64>()).collect();
    let batch = Tensor4::from_vec(n, 8, 8, 3, data);
    let labels = vec![0usize, 1, 1, 0];
    let mode = Mode::Train { dropout_seed: 42 };

    let loss_of = |net: &Net<f64>| -> f64 {
        let (_, cache) = net.forward(&batch, mode);
        cross_entropy_from_logits(&cache.logits, &labels)
    };

    let (_, cache) = net.forward(&batch, mode);
    let grads = net.backward(&cache, &labels);

    let mut checked = 0usize;
    let mut max_rel: f64 = 0.0;
    for (bi, block) in grads.iter().enumerate() {
        for (slot, is_weight) in [(true, true), (false, false)] {
            let _ = slot;
            let len = if is_weight { block.w.len() } else { block.b.len() };
            let stride = (len / 40).max(1);
            for j in (0..len).step_by(stride) {
                let analytic = if is_weight { block.w[j] } else { block.b[j] };
                let num = central_diff(|h| {
                    let mut p = net.clone();
                    if is_weight {
                        p.params[bi].w[j] += h;
                    } else {
                        p.params[bi].b[j] += h;
                    }
                    loss_of(&p)
                });
                check_pair(analytic, num, &format!("block {bi} w={is_weight} [{j}]"));
                let mag = analytic.abs().max(num.abs());
                if mag >= 1e-6 {
                    max_rel = max_rel.max((analytic - num).abs() / mag);
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 100, "probe coverage too thin ({checked})");
    assert!(max_rel < TOL, "max relative error {max_rel}");
}

#[test]
fn dropout_seed_replays_identically() {
    let net = Net::<f64>::init(reduced_spec(), 12).unwrap();
    let mut r = rng(9);
    let data: Vec<f64> = (0..2 * 8 * 8 * 3).map(|_| r.gen::<f64>()).collect();
    let batch = Tensor4::from_vec(2, 8, 8, 3, data);
    let (p1, _) = net.forward(&batch, Mode::Train { dropout_seed: 5 });
    let (p2, _) = net.forward(&batch, Mode::Train { dropout_seed: 5 });
    let (p3, _) = net.forward(&batch, Mode::Train { dropout_seed: 6 });
    assert_eq!(p1, p2);
    assert_ne!(p1, p3);
}
