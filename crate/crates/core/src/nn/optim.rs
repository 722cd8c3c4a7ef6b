//! Parameter updates: Adam (default) and plain SGD.

use super::{Network, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer with per-parameter state, deterministic given its state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(learning_rate),
            OptimizerKind::Sgd => Self::sgd(learning_rate),
        }
    }

    /// Apply one update from the gradients currently accumulated in the
    /// network. Gradients are not cleared.
    pub fn step(&mut self, net: &mut Network<T>) {
        self.step_count += 1;
        let t = self.step_count;
        let lr = T::from_f64(self.learning_rate);
        match self.kind {
            OptimizerKind::Sgd => {
                net.visit_params_mut(&mut |_name, param, grad| {
                    for (p, &g) in param.iter_mut().zip(grad.iter()) {
                        *p -= lr * g;
                    }
                });
            }
            OptimizerKind::Adam => {
                let b1 = T::from_f64(self.beta1);
                let b2 = T::from_f64(self.beta2);
                let eps = T::from_f64(self.eps);
                let corr1 = T::from_f64(1.0 - self.beta1.powi(t as i32));
                let corr2 = T::from_f64(1.0 - self.beta2.powi(t as i32));
                let one = T::one();
                let (m_state, v_state) = (&mut self.m, &mut self.v);
                let mut idx = 0;
                net.visit_params_mut(&mut |_name, param, grad| {
                    if m_state.len() <= idx {
                        m_state.push(vec![T::zero(); param.len()]);
                        v_state.push(vec![T::zero(); param.len()]);
                    }
                    let m = &mut m_state[idx];
                    let v = &mut v_state[idx];
                    for i in 0..param.len() {
                        let g = grad[i];
                        m[i] = b1 * m[i] + (one - b1) * g;
                        v[i] = b2 * v[i] + (one - b2) * g * g;
                        let m_hat = m[i] / corr1;
                        let v_hat = v[i] / corr2;
                        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                    idx += 1;
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Mode, NetworkSpec, Shape, Tensor};

    /// One FC(1,1) with zero bias behaves as a scalar weight w.
    fn scalar_net(w0: f64) -> Network<f64> {
        let spec = NetworkSpec::new(
            (1, 1, 1),
            vec![LayerSpec::Fc { input: 1, output: 1 }],
        );
        let mut net = Network::build(&spec, 0).unwrap();
        net.visit_params_mut(&mut |name, p, _g| {
            if name.contains("weight") {
                p[0] = w0;
            } else {
                p[0] = 0.0;
            }
        });
        net
    }

    fn weight(net: &mut Network<f64>) -> f64 {
        let mut w = 0.0;
        net.visit_params_mut(&mut |name, p, _g| {
            if name.contains("weight") {
                w = p[0];
            }
        });
        w
    }

    /// Set gradient of f(w) = w^2, i.e. 2w (bias grad left at zero).
    fn set_quadratic_grad(net: &mut Network<f64>) {
        let w = weight(net);
        net.visit_params_mut(&mut |name, _p, g| {
            g[0] = if name.contains("weight") { 2.0 * w } else { 0.0 };
        });
    }

    #[test]
    fn adam_with_zero_gradient_leaves_weights_unchanged() {
        let mut net = scalar_net(0.7);
        let mut opt = Optimizer::adam(1e-3);
        net.zero_grads();
        opt.step(&mut net);
        assert_eq!(weight(&mut net), 0.7);
    }

    #[test]
    fn sgd_step_on_quadratic_matches_closed_form() {
        let mut net = scalar_net(1.0);
        let mut opt = Optimizer::sgd(0.1);
        set_quadratic_grad(&mut net);
        opt.step(&mut net);
        assert!((weight(&mut net) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn adam_converges_on_quadratic_within_500_steps() {
        let mut net = scalar_net(1.0);
        let mut opt = Optimizer::adam(1e-2);
        for _ in 0..500 {
            net.zero_grads();
            set_quadratic_grad(&mut net);
            opt.step(&mut net);
        }
        let w = weight(&mut net);
        assert!(w.abs() < 1e-3, "w after 500 Adam steps = {w}");
    }

    #[test]
    fn optimizer_is_deterministic() {
        let run = || {
            let spec = NetworkSpec::new(
                (1, 2, 2),
                vec![LayerSpec::Fc { input: 4, output: 2 }],
            );
            let mut net = Network::<f64>::build(&spec, 3).unwrap();
            let mut opt = Optimizer::adam(1e-3);
            let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.3, -0.1, 0.9, 0.2]).unwrap();
            for _ in 0..5 {
                let out = net.forward(&x, Mode::Train, None).unwrap();
                let target = Tensor::zeros(out.shape());
                let (_l, g) = crate::nn::loss::mse_loss(&out, &target).unwrap();
                net.zero_grads();
                net.backward(&g).unwrap();
                opt.step(&mut net);
            }
            let mut ws = Vec::new();
            net.visit_params_mut(&mut |_n, p, _g| ws.extend_from_slice(p));
            ws
        };
        assert_eq!(run(), run());
    }
}
