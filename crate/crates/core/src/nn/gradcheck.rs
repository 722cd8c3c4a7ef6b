//! Finite-difference gradient verification.
//!
//! The checker relies only on the forward pass and the loss definitions,
//! so it stays independent of the reverse-mode implementation it audits.
//! Central differences are taken per parameter — exhaustively for small
//! tensors, on a deterministic evenly spread subset for large ones — and
//! additionally along random full-parameter directions, which touch every
//! coordinate at once.

use rayon::prelude::*;

use super::loss::{cross_entropy_loss, mse_loss, vae_loss};
use super::{Mode, Network, NnError, Tensor};
use crate::rng::{self, Domain};
use rand::Rng;

/// Loss under which gradients are checked.
pub enum LossTarget {
    Mse(Tensor<f64>),
    CrossEntropy(Vec<usize>),
    Vae(Tensor<f64>),
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Tensors at or below this size are checked exhaustively.
    pub exhaustive_below: usize,
    /// Larger tensors get this many evenly spread probes.
    pub samples_per_tensor: usize,
    /// Random full-parameter directional derivatives.
    pub directional_probes: usize,
    /// Gradients with both analytic and numeric magnitude below this are
    /// treated as matching zeros.
    pub zero_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            exhaustive_below: 4096,
            samples_per_tensor: 600,
            directional_probes: 3,
            zero_floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub total_params: usize,
    pub checked_params: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub directional_max_rel_err: f64,
}

fn relative_error(a: f64, f: f64, floor: f64) -> f64 {
    if a.abs() < floor && f.abs() < floor {
        0.0
    } else {
        (a - f).abs() / a.abs().max(f.abs())
    }
}

/// Forward in training mode replaying frozen noise, then evaluate `loss`.
fn eval_loss(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    loss: &LossTarget,
) -> Result<f64, NnError> {
    let out = net.forward(input, Mode::Train, None)?;
    Ok(match loss {
        LossTarget::Mse(target) => mse_loss(&out, target)?.0,
        LossTarget::CrossEntropy(classes) => cross_entropy_loss(&out, classes)?.0,
        LossTarget::Vae(target) => {
            let (mean, logvar) = {
                let latent = net
                    .vae_latent()
                    .ok_or(NnError::BackwardBeforeForward("vae latent missing"))?;
                let (m, lv) = latent.posterior().ok_or(NnError::BackwardBeforeForward("vae"))?;
                (m.clone(), lv.clone())
            };
            vae_loss(&out, target, &mean, &logvar)?.0.total
        }
    })
}

/// Analytic gradients for all parameters under `loss`, in visitation order.
fn analytic_gradients(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    loss: &LossTarget,
) -> Result<Vec<(String, Vec<f64>)>, NnError> {
    let out = net.forward(input, Mode::Train, None)?;
    net.zero_grads();
    match loss {
        LossTarget::Mse(target) => {
            let (_l, grad) = mse_loss(&out, target)?;
            net.backward(&grad)?;
        }
        LossTarget::CrossEntropy(classes) => {
            let (_l, grad) = cross_entropy_loss(&out, classes)?;
            net.backward(&grad)?;
        }
        LossTarget::Vae(target) => {
            let (mean, logvar) = {
                let latent = net.vae_latent().unwrap();
                let (m, lv) = latent.posterior().unwrap();
                (m.clone(), lv.clone())
            };
            let (_parts, grads) = vae_loss(&out, target, &mean, &logvar)?;
            net.vae_latent_mut()
                .unwrap()
                .set_kl_grad(grads.d_mean, grads.d_logvar);
            net.backward(&grads.d_recon)?;
        }
    }
    let mut collected = Vec::new();
    net.visit_params_mut(&mut |name, _p, g| {
        collected.push((name.to_string(), g.to_vec()));
    });
    Ok(collected)
}

fn set_param(net: &mut Network<f64>, tensor_idx: usize, elem: usize, value: f64) {
    let mut k = 0;
    net.visit_params_mut(&mut |_n, p, _g| {
        if k == tensor_idx {
            p[elem] = value;
        }
        k += 1;
    });
}

fn get_param(net: &mut Network<f64>, tensor_idx: usize, elem: usize) -> f64 {
    let mut k = 0;
    let mut out = 0.0;
    net.visit_params_mut(&mut |_n, p, _g| {
        if k == tensor_idx {
            out = p[elem];
        }
        k += 1;
    });
    out
}

/// Verify the network's reverse-mode gradients against central finite
/// differences. The network must already hold the parameters to check;
/// `input` is a small batch.
///
/// Dropout masks and latent noise are drawn once (from `opts.seed`) and
/// frozen, so every finite-difference evaluation sees the identical
/// stochastic path.
pub fn check_gradients(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    loss: &LossTarget,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    // Prime the stochastic layers once, then freeze.
    let mut noise = rng::stream(opts.seed, Domain::Test, 77);
    net.forward(input, Mode::Train, Some(&mut noise))?;

    let analytic = analytic_gradients(net, input, loss)?;
    let total_params: usize = analytic.iter().map(|(_n, g)| g.len()).sum();

    // Probe selection.
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (t, (_name, g)) in analytic.iter().enumerate() {
        if g.len() <= opts.exhaustive_below {
            jobs.extend((0..g.len()).map(|i| (t, i)));
        } else {
            let m = opts.samples_per_tensor.min(g.len());
            jobs.extend((0..m).map(|j| (t, j * g.len() / m)));
        }
    }

    let base = net.clone();
    let eps = opts.epsilon;
    let results: Vec<(f64, usize, usize)> = jobs
        .par_chunks(512)
        .map(|chunk| {
            let mut local = base.clone();
            let mut worst = (0.0f64, 0usize, 0usize);
            for &(t, i) in chunk {
                let orig = get_param(&mut local, t, i);
                set_param(&mut local, t, i, orig + eps);
                let lp = eval_loss(&mut local, input, loss).expect("fd forward");
                set_param(&mut local, t, i, orig - eps);
                let lm = eval_loss(&mut local, input, loss).expect("fd forward");
                set_param(&mut local, t, i, orig);
                let fd = (lp - lm) / (2.0 * eps);
                let err = relative_error(analytic[t].1[i], fd, opts.zero_floor);
                if err > worst.0 {
                    worst = (err, t, i);
                }
            }
            worst
        })
        .collect();

    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();
    for (err, t, i) in results {
        if err > max_rel_err {
            max_rel_err = err;
            worst_param = format!("{}[{}]", analytic[t].0, i);
        }
    }

    // Directional probes across the full parameter vector.
    let mut directional_max = 0.0f64;
    let mut dir_rng = rng::stream(opts.seed, Domain::Test, 78);
    for _ in 0..opts.directional_probes {
        let mut direction: Vec<Vec<f64>> = analytic
            .iter()
            .map(|(_n, g)| (0..g.len()).map(|_| dir_rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let norm: f64 = direction
            .iter()
            .flat_map(|v| v.iter())
            .map(|&x| x * x)
            .sum::<f64>()
            .sqrt();
        for v in direction.iter_mut().flat_map(|v| v.iter_mut()) {
            *v /= norm;
        }
        let g_dot_v: f64 = analytic
            .iter()
            .zip(&direction)
            .flat_map(|((_n, g), d)| g.iter().zip(d).map(|(&a, &b)| a * b))
            .sum();

        let shifted = |sign: f64| -> Result<f64, NnError> {
            let mut local = base.clone();
            let mut k = 0;
            local.visit_params_mut(&mut |_n, p, _g| {
                for (pi, &di) in p.iter_mut().zip(&direction[k]) {
                    *pi += sign * eps * di;
                }
                k += 1;
            });
            eval_loss(&mut local, input, loss)
        };
        let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps);
        directional_max = directional_max.max(relative_error(g_dot_v, fd, opts.zero_floor));
    }

    Ok(GradCheckReport {
        total_params,
        checked_params: jobs.len(),
        max_rel_err,
        worst_param,
        directional_max_rel_err: directional_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, NetworkSpec, Shape};

    fn random_input(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = rng::stream(seed, Domain::Test, 50);
        Tensor::from_vec(
            shape,
            (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn check(spec: NetworkSpec, loss: LossTarget, batch: usize) -> GradCheckReport {
        let mut net = Network::<f64>::build(&spec, 11).unwrap();
        let input = random_input(spec.input_shape(batch), 21);
        let report = check_gradients(&mut net, &input, &loss, &GradCheckOptions::default()).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
        assert!(
            report.directional_max_rel_err < 1e-4,
            "directional err {}",
            report.directional_max_rel_err
        );
        report
    }

    #[test]
    fn fc_gradient_matches_closed_form() {
        // Single FC with MSE: grad_W = 2 (Wx + b - y) x^T / N.
        let spec = NetworkSpec::new((1, 1, 3), vec![LayerSpec::Fc { input: 3, output: 2 }]);
        let mut net = Network::<f64>::build(&spec, 1).unwrap();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -1.0, 2.0]).unwrap();
        let y = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.3, -0.2]).unwrap();
        let out = net.forward(&x, Mode::Train, None).unwrap();
        let (_l, grad) = mse_loss(&out, &y).unwrap();
        net.zero_grads();
        net.backward(&grad).unwrap();

        let residual: Vec<f64> = out.data().iter().zip(y.data()).map(|(&p, &t)| p - t).collect();
        let n = 2.0;
        net.visit_params_mut(&mut |name, _p, g| {
            if name.contains("weight") {
                for o in 0..2 {
                    for i in 0..3 {
                        let expect = 2.0 * residual[o] * x.data()[i] / n;
                        assert!(
                            (g[o * 3 + i] - expect).abs() < 1e-12,
                            "dW[{o}][{i}] = {} vs {}",
                            g[o * 3 + i],
                            expect
                        );
                    }
                }
            }
        });
    }

    #[test]
    fn conv_layer_gradcheck() {
        let spec = NetworkSpec::new(
            (2, 6, 6),
            vec![LayerSpec::Conv2d {
                filters: 3,
                kernel: 5,
                stride: 1,
                padding: 2,
            }],
        );
        check(spec, LossTarget::Mse(random_input(Shape::new(2, 3, 6, 6), 99)), 2);
    }

    #[test]
    fn pool_relu_gradcheck() {
        let spec = NetworkSpec::new(
            (1, 6, 6),
            vec![
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Relu,
                LayerSpec::Fc { input: 9, output: 2 },
            ],
        );
        check(spec, LossTarget::Mse(random_input(Shape::new(2, 2, 1, 1), 98)), 2);
    }

    #[test]
    fn batchnorm_gradcheck() {
        let spec = NetworkSpec::new(
            (2, 4, 4),
            vec![
                LayerSpec::BatchNorm { channels: 2 },
                LayerSpec::Fc { input: 32, output: 2 },
            ],
        );
        check(spec, LossTarget::Mse(random_input(Shape::new(3, 2, 1, 1), 97)), 3);
    }

    #[test]
    fn dropout_gradcheck_with_frozen_mask() {
        let spec = NetworkSpec::new(
            (1, 4, 4),
            vec![
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Fc { input: 16, output: 2 },
            ],
        );
        check(spec, LossTarget::Mse(random_input(Shape::new(2, 2, 1, 1), 96)), 2);
    }

    #[test]
    fn softmax_head_gradcheck() {
        let spec = NetworkSpec::new(
            (1, 1, 6),
            vec![
                LayerSpec::Fc { input: 6, output: 4 },
                LayerSpec::SoftmaxHead,
            ],
        );
        check(spec, LossTarget::Mse(random_input(Shape::new(2, 4, 1, 1), 95)), 2);
    }

    #[test]
    fn cross_entropy_gradcheck() {
        let spec = NetworkSpec::new(
            (1, 2, 2),
            vec![LayerSpec::Fc { input: 4, output: 3 }],
        );
        check(spec, LossTarget::CrossEntropy(vec![0, 2]), 2);
    }

    #[test]
    fn vae_latent_gradcheck_including_kl_path() {
        let spec = NetworkSpec::new(
            (1, 1, 6),
            vec![
                LayerSpec::Fc { input: 6, output: 5 },
                LayerSpec::Relu,
                LayerSpec::VaeLatent { input: 5, latent: 3 },
                LayerSpec::Fc { input: 3, output: 8 },
            ],
        );
        check(spec, LossTarget::Vae(random_input(Shape::new(2, 8, 1, 1), 94)), 2);
    }
}
