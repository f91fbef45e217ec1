//! Bias-corrected Adam.

use super::{Gradients, Layer, Network, NnError};

/// Hyperparameters; the defaults are the standard published settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    /// Zero-initialized moments shaped like `net`; the step counter starts
    /// at 0.
    pub fn new(config: AdamConfig, net: &Network) -> Self {
        AdamState {
            config,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update of `net` in place from accumulated gradients.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != net.layers.len() {
            return Err(NnError::GradientMismatch);
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);

        for (i, layer) in net.layers.iter_mut().enumerate() {
            let (w, b): (&mut [f64], &mut [f64]) = match layer {
                Layer::Dense(d) => (&mut d.weights, &mut d.bias),
                Layer::Conv1d(cv) => (&mut cv.kernels, &mut cv.bias),
                Layer::GlobalAvgPool => continue,
            };
            let g = &grads.layers[i];
            if g.weights.len() != w.len() || g.bias.len() != b.len() {
                return Err(NnError::GradientMismatch);
            }
            update(
                w,
                &g.weights,
                &mut self.m.layers[i].weights,
                &mut self.v.layers[i].weights,
                c,
                bc1,
                bc2,
            );
            update(
                b,
                &g.bias,
                &mut self.m.layers[i].bias,
                &mut self.v.layers[i].bias,
                c,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

fn update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c: AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, LossTarget};
    use crate::rng::Rng;

    fn scalar_net(w: f64) -> Network {
        Network::new(vec![Layer::Dense(DenseLayer {
            in_dim: 1,
            out_dim: 1,
            weights: vec![w],
            bias: vec![0.0],
            activation: Activation::Identity,
        })])
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut net = scalar_net(0.75);
        let grads = Gradients::zeros_like(&net);
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        adam.step(&mut net, &grads).unwrap();
        match &net.layers[0] {
            Layer::Dense(d) => assert_eq!(d.weights[0], 0.75),
            _ => unreachable!(),
        }
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // After bias correction the first update is lr * g / (|g| + eps'),
        // essentially lr * sign(g).
        for g in [3.0, -0.004, 1e6] {
            let mut net = scalar_net(1.0);
            let mut grads = Gradients::zeros_like(&net);
            grads.layers[0].weights[0] = g;
            let mut adam = AdamState::new(AdamConfig::default(), &net);
            adam.step(&mut net, &grads).unwrap();
            let w = match &net.layers[0] {
                Layer::Dense(d) => d.weights[0],
                _ => unreachable!(),
            };
            let step = 1.0 - w;
            assert!(
                (step - 1e-3 * g.signum()).abs() < 1e-6,
                "g {g} gave step {step}"
            );
        }
    }

    #[test]
    fn training_trajectory_is_bit_identical() {
        let run = || {
            let mut rng = Rng::from_seed(77);
            let mut net = Network::new(vec![
                Layer::Dense(DenseLayer::glorot(4, 6, Activation::Relu, &mut rng)),
                Layer::Dense(DenseLayer::glorot(6, 2, Activation::Identity, &mut rng)),
            ]);
            let mut adam = AdamState::new(AdamConfig::default(), &net);
            let x = [0.3, -0.2, 0.9, 0.1];
            let t = [1.0, -1.0];
            for _ in 0..25 {
                let (_, grads) = net.backward(&x, &LossTarget::Mse(&t)).unwrap();
                adam.step(&mut net, &grads).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fifty_steps_mostly_monotone_for_both_losses() {
        // Loss over 50 Adam steps on a fixed tiny batch should fall almost
        // monotonically (at most 2 non-monotone steps allowed).
        let mut rng = Rng::from_seed(5);
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
            .map(|_| {
                let x: Vec<f64> = (0..6).map(|_| rng.range(-1.0, 1.0)).collect();
                let t: Vec<f64> = (0..6).map(|_| rng.range(0.0, 1.0)).collect();
                (x, t)
            })
            .collect();
        let mut net = Network::new(vec![
            Layer::Dense(DenseLayer::glorot(6, 8, Activation::Relu, &mut rng)),
            Layer::Dense(DenseLayer::glorot(8, 6, Activation::Identity, &mut rng)),
        ]);
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        let mut grads = Gradients::zeros_like(&net);
        let mut losses = Vec::new();
        for _ in 0..50 {
            grads.zero();
            let mut loss = 0.0;
            for (x, t) in &batch {
                let mut scratch = crate::nn::Scratch::new(&net, x.len()).unwrap();
                net.forward_trace(x, &mut scratch).unwrap();
                loss += net
                    .backward_from_trace(
                        &mut scratch,
                        &LossTarget::Mse(t),
                        &mut grads,
                        1.0 / batch.len() as f64,
                    )
                    .unwrap();
            }
            losses.push(loss / batch.len() as f64);
            adam.step(&mut net, &grads).unwrap();
        }
        let violations = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(violations <= 2, "{violations} non-monotone MSE steps");

        // Cross-entropy on a small classifier.
        let mut net = Network::new(vec![
            Layer::Dense(DenseLayer::glorot(4, 8, Activation::Relu, &mut rng)),
            Layer::Dense(DenseLayer::glorot(8, 3, Activation::Identity, &mut rng)),
        ]);
        let batch: Vec<(Vec<f64>, usize)> = (0..9)
            .map(|i| {
                let x: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
                (x, i % 3)
            })
            .collect();
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        let mut grads = Gradients::zeros_like(&net);
        let mut losses = Vec::new();
        for _ in 0..50 {
            grads.zero();
            let mut loss = 0.0;
            for (x, label) in &batch {
                let mut scratch = crate::nn::Scratch::new(&net, x.len()).unwrap();
                net.forward_trace(x, &mut scratch).unwrap();
                loss += net
                    .backward_from_trace(
                        &mut scratch,
                        &LossTarget::CrossEntropy(*label),
                        &mut grads,
                        1.0 / batch.len() as f64,
                    )
                    .unwrap();
            }
            losses.push(loss / batch.len() as f64);
            adam.step(&mut net, &grads).unwrap();
        }
        let violations = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(violations <= 2, "{violations} non-monotone CE steps");
    }
}
