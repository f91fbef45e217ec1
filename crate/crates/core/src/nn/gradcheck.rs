//! Finite-difference verification of analytic gradients.
//!
//! The check only uses the forward pass, so it is independent of the
//! reverse-mode implementation it validates.
//!
//! ReLU is not differentiable at 0, and central differences with step `h`
//! give garbage whenever a pre-activation sits within about `h` of the kink.
//! [`relu_kink_margin`] reports how close an instance gets; callers draw
//! instances until the margin is comfortable.

use super::{Layer, LossTarget, Network, NnError, Scratch};
use crate::rng::Rng;

/// Outcome of one gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over the checked parameters.
    pub max_rel_err: f64,
    /// Number of parameters compared.
    pub checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// When `sample` is given, that many parameter indices are drawn at random
/// (without replacement) instead of checking every parameter; large networks
/// stay cheap that way. The relative error uses
/// |a - n| / max(|a|, |n|, 1e-6) so near-zero gradients do not blow up the
/// ratio.
pub fn check_gradients(
    net: &Network,
    x: &[f64],
    target: &LossTarget,
    h: f64,
    sample: Option<(usize, &mut Rng)>,
) -> Result<GradCheckReport, NnError> {
    let (_, analytic) = net.backward(x, target)?;
    let n_params = net.param_count();

    let indices: Vec<usize> = match sample {
        Some((count, rng)) if count < n_params => {
            let mut all: Vec<usize> = (0..n_params).collect();
            rng.shuffle(&mut all);
            all.truncate(count);
            all
        }
        _ => (0..n_params).collect(),
    };

    let mut probe = net.clone();
    let mut max_rel_err: f64 = 0.0;
    for &idx in &indices {
        let original = *probe.param_mut(idx).expect("index within param count");
        *probe.param_mut(idx).unwrap() = original + h;
        let up = probe.loss(x, target)?;
        *probe.param_mut(idx).unwrap() = original - h;
        let down = probe.loss(x, target)?;
        *probe.param_mut(idx).unwrap() = original;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic.flat(idx).expect("gradient index");
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > max_rel_err {
            max_rel_err = rel;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked: indices.len(),
    })
}

/// Smallest |pre-activation| over all ReLU units for this input, or infinity
/// if no ReLU unit exists.
pub fn relu_kink_margin(net: &Network, x: &[f64]) -> Result<f64, NnError> {
    let mut scratch = Scratch::new(net, x.len())?;
    net.forward_trace(x, &mut scratch)?;
    let mut margin = f64::INFINITY;
    for (layer, z) in net.layers.iter().zip(&scratch.zs) {
        let is_relu = match layer {
            Layer::Dense(d) => d.activation == super::Activation::Relu,
            Layer::Conv1d(c) => c.activation == super::Activation::Relu,
            Layer::GlobalAvgPool => false,
        };
        if is_relu {
            for &zv in &z.data {
                margin = margin.min(zv.abs());
            }
        }
    }
    Ok(margin)
}
