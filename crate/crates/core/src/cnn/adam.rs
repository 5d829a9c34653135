//! Adam optimizer with bias-corrected first/second moments.

use super::net::{Net, ParamBlock};
use super::tensor::Scalar;
use crate::{Error, Result};

/// Optimizer hyperparameters. The defaults are the training settings used
/// throughout: learning rate 1e-4 with first-moment decay 0.99.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment accumulators plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<ParamBlock<F>>,
    pub v: Vec<ParamBlock<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Fresh zeroed state shaped like `net`.
    pub fn new(net: &Net<F>, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            step: 0,
            m: net.zeroed_blocks(),
            v: net.zeroed_blocks(),
        }
    }
}

/// One bias-corrected Adam update, in place. Gradient and state blocks must
/// be shaped exactly like the parameters.
pub fn adam_step<F: Scalar>(
    net: &mut Net<F>,
    grads: &[ParamBlock<F>],
    state: &mut AdamState<F>,
) -> Result<()> {
    if grads.len() != net.params.len() || state.m.len() != net.params.len() {
        return Err(Error::Shape {
            layer: "optimizer".into(),
            expected: format!("{} parameter blocks", net.params.len()),
            actual: format!("{} gradient / {} moment blocks", grads.len(), state.m.len()),
        });
    }
    state.step += 1;
    let h = state.hyper;
    let corr1 = 1.0 - h.beta1.powi(state.step as i32);
    let corr2 = 1.0 - h.beta2.powi(state.step as i32);
    let beta1 = F::of_f64(h.beta1);
    let beta2 = F::of_f64(h.beta2);
    let one_m_beta1 = F::of_f64(1.0 - h.beta1);
    let one_m_beta2 = F::of_f64(1.0 - h.beta2);
    let lr_over_corr1 = F::of_f64(h.lr / corr1);
    let inv_sqrt_corr2 = F::of_f64(1.0 / corr2.sqrt());
    let eps = F::of_f64(h.eps);

    for ((p, g), (m, v)) in net
        .params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if g.w.len() != p.w.len() || g.b.len() != p.b.len() {
            return Err(Error::Shape {
                layer: "optimizer".into(),
                expected: format!("{}+{} parameters", p.w.len(), p.b.len()),
                actual: format!("{}+{} gradients", g.w.len(), g.b.len()),
            });
        }
        let update = |p: &mut [F], g: &[F], m: &mut [F], v: &mut [F]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + one_m_beta1 * g[i];
                v[i] = beta2 * v[i] + one_m_beta2 * g[i] * g[i];
                let v_hat_sqrt = (v[i] * inv_sqrt_corr2 * inv_sqrt_corr2).sqrt();
                p[i] = p[i] - lr_over_corr1 * m[i] / (v_hat_sqrt + eps);
            }
        };
        update(&mut p.w, &g.w, &mut m.w, &mut v.w);
        update(&mut p.b, &g.b, &mut m.b, &mut v.b);
    }
    Ok(())
}
