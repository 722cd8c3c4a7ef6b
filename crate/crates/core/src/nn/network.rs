//! Network assembly: layer specifications, build-time shape validation,
//! and the forward/backward orchestration over a layer stack.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d, Dropout, Fc, MaxPool, Relu, Softmax, VaeLatent};
use super::{Mode, NnError, Scalar, Shape, Tensor};
use crate::rng::{self, Domain};

/// One layer of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
    },
    Relu,
    Fc {
        input: usize,
        output: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Dropout {
        rate: f64,
    },
    SoftmaxHead,
    VaeLatent {
        input: usize,
        latent: usize,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel: 5,
            stride: 1,
            padding: 2,
        }
    }
}

/// Input dimensions (channels, height, width) plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: (usize, usize, usize), layers: Vec<LayerSpec>) -> Self {
        Self {
            input_channels: input.0,
            input_height: input.1,
            input_width: input.2,
            layers,
        }
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(batch, self.input_channels, self.input_height, self.input_width)
    }

    /// Propagate shapes through every layer, returning the per-layer
    /// output shapes (sample dimension fixed at 1). Chained shapes must be
    /// consistent; in particular a fully connected layer's declared input
    /// size must equal the incoming feature count.
    pub fn validate(&self) -> Result<Vec<Shape>, NnError> {
        let mut shape = self.input_shape(1);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |reason: String| NnError::InvalidSpec { layer: i, reason };
            shape = match *layer {
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    if stride != 1 {
                        return Err(err(format!("conv stride must be 1, got {stride}")));
                    }
                    if kernel == 0 || filters == 0 {
                        return Err(err("conv kernel and filter count must be positive".into()));
                    }
                    if shape.h + 2 * padding < kernel || shape.w + 2 * padding < kernel {
                        return Err(err(format!(
                            "conv kernel {kernel} exceeds padded input {}x{}",
                            shape.h, shape.w
                        )));
                    }
                    Shape::new(
                        1,
                        filters,
                        shape.h + 2 * padding + 1 - kernel,
                        shape.w + 2 * padding + 1 - kernel,
                    )
                }
                LayerSpec::MaxPool { size } => {
                    if size == 0 || shape.h % size != 0 || shape.w % size != 0 {
                        return Err(err(format!(
                            "pool size {size} does not divide {}x{}",
                            shape.h, shape.w
                        )));
                    }
                    Shape::new(1, shape.c, shape.h / size, shape.w / size)
                }
                LayerSpec::Relu | LayerSpec::SoftmaxHead => shape,
                LayerSpec::Fc { input, output } => {
                    if shape.features() != input {
                        return Err(err(format!(
                            "fc expects {input} inputs but receives {} features",
                            shape.features()
                        )));
                    }
                    Shape::new(1, output, 1, 1)
                }
                LayerSpec::BatchNorm { channels } => {
                    if shape.c != channels {
                        return Err(err(format!(
                            "batchnorm over {channels} channels but input has {}",
                            shape.c
                        )));
                    }
                    shape
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(err(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    shape
                }
                LayerSpec::VaeLatent { input, latent } => {
                    if shape.features() != input {
                        return Err(err(format!(
                            "latent block expects {input} inputs but receives {} features",
                            shape.features()
                        )));
                    }
                    Shape::new(1, latent, 1, 1)
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape, NnError> {
        Ok(*self.validate()?.last().unwrap_or(&self.input_shape(1)))
    }

    /// Feature count entering the first fully connected layer, if any.
    pub fn first_fc_input(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::Fc { input, .. } => Some(*input),
            _ => None,
        })
    }

    /// Stable hash of the spec; stored in model files so weights trained
    /// for one architecture refuse to load into another.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("spec serializes");
        rng::fnv1a64(&json)
    }
}

#[derive(Debug, Clone)]
pub enum LayerState<T> {
    Conv(Conv2d<T>),
    Pool(MaxPool<T>),
    Relu(Relu<T>),
    Fc(Fc<T>),
    Bn(BatchNorm<T>),
    Drop(Dropout<T>),
    Softmax(Softmax<T>),
    Vae(VaeLatent<T>),
}

/// A built network: parameters, gradients, and layer caches.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<LayerState<T>>,
}

impl<T: Scalar> Network<T> {
    /// Build from a validated spec with Kaiming-uniform initialization.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut shape = spec.input_shape(1);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let mut init_rng = rng::stream(seed, Domain::WeightInit, i as u64);
            let state = match *layer {
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    padding,
                    ..
                } => {
                    let mut conv = Conv2d::new(shape.c, filters, kernel, padding);
                    conv.init_kaiming(&mut init_rng);
                    shape = conv.out_shape(shape);
                    LayerState::Conv(conv)
                }
                LayerSpec::MaxPool { size } => {
                    shape = Shape::new(shape.n, shape.c, shape.h / size, shape.w / size);
                    LayerState::Pool(MaxPool::new(size))
                }
                LayerSpec::Relu => LayerState::Relu(Relu::new()),
                LayerSpec::Fc { input, output } => {
                    let mut fc = Fc::new(input, output);
                    fc.init_kaiming(&mut init_rng);
                    shape = Shape::new(shape.n, output, 1, 1);
                    LayerState::Fc(fc)
                }
                LayerSpec::BatchNorm { channels } => LayerState::Bn(BatchNorm::new(channels)),
                LayerSpec::Dropout { rate } => LayerState::Drop(Dropout::new(rate)),
                LayerSpec::SoftmaxHead => LayerState::Softmax(Softmax::new()),
                LayerSpec::VaeLatent { input, latent } => {
                    let mut vae = VaeLatent::new(input, latent);
                    vae.init_kaiming(&mut init_rng);
                    shape = Shape::new(shape.n, latent, 1, 1);
                    LayerState::Vae(vae)
                }
            };
            layers.push(state);
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    /// Run the stack. `noise` feeds dropout masks and latent samples in
    /// training mode; passing `None` in training mode replays the
    /// previously drawn noise (needed for finite-difference checks).
    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
        mut noise: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor<T>, NnError> {
        let expected = self.spec.input_shape(input.shape().n);
        if input.shape() != expected {
            return Err(NnError::ShapeMismatch {
                op: "network forward",
                expected: expected.to_string(),
                got: input.shape().to_string(),
            });
        }
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = match layer {
                LayerState::Conv(l) => l.forward(&x, mode)?,
                LayerState::Pool(l) => l.forward(&x, mode)?,
                LayerState::Relu(l) => l.forward(&x, mode)?,
                LayerState::Fc(l) => l.forward(&x, mode)?,
                LayerState::Bn(l) => l.forward(&x, mode)?,
                LayerState::Drop(l) => l.forward(&x, mode, noise.as_deref_mut())?,
                LayerState::Softmax(l) => l.forward(&x, mode)?,
                LayerState::Vae(l) => l.forward(&x, mode, noise.as_deref_mut())?,
            };
        }
        Ok(x)
    }

    /// Reverse pass; accumulates parameter gradients and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                LayerState::Conv(l) => l.backward(&g)?,
                LayerState::Pool(l) => l.backward(&g)?,
                LayerState::Relu(l) => l.backward(&g)?,
                LayerState::Fc(l) => l.backward(&g)?,
                LayerState::Bn(l) => l.backward(&g)?,
                LayerState::Drop(l) => l.backward(&g)?,
                LayerState::Softmax(l) => l.backward(&g)?,
                LayerState::Vae(l) => l.backward(&g)?,
            };
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_name, _param, grad| {
            for g in grad.iter_mut() {
                *g = T::zero();
            }
        });
    }

    /// The VAE latent block, if the architecture has one.
    pub fn vae_latent_mut(&mut self) -> Option<&mut VaeLatent<T>> {
        self.layers.iter_mut().find_map(|l| match l {
            LayerState::Vae(v) => Some(v),
            _ => None,
        })
    }

    pub fn vae_latent(&self) -> Option<&VaeLatent<T>> {
        self.layers.iter().find_map(|l| match l {
            LayerState::Vae(v) => Some(v),
            _ => None,
        })
    }

    /// Visit every parameter tensor with its gradient, in declaration
    /// order. The visitation order is the serialization order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerState::Conv(l) => {
                    f(&format!("layer{i}.conv.weight"), &mut l.weights, &mut l.grad_weights);
                    f(&format!("layer{i}.conv.bias"), &mut l.bias, &mut l.grad_bias);
                }
                LayerState::Fc(l) => {
                    f(&format!("layer{i}.fc.weight"), &mut l.weights, &mut l.grad_weights);
                    f(&format!("layer{i}.fc.bias"), &mut l.bias, &mut l.grad_bias);
                }
                LayerState::Bn(l) => {
                    f(&format!("layer{i}.bn.gamma"), &mut l.gamma, &mut l.grad_gamma);
                    f(&format!("layer{i}.bn.beta"), &mut l.beta, &mut l.grad_beta);
                }
                LayerState::Vae(l) => {
                    f(
                        &format!("layer{i}.vae.mean.weight"),
                        &mut l.mean_head.weights,
                        &mut l.mean_head.grad_weights,
                    );
                    f(
                        &format!("layer{i}.vae.mean.bias"),
                        &mut l.mean_head.bias,
                        &mut l.mean_head.grad_bias,
                    );
                    f(
                        &format!("layer{i}.vae.logvar.weight"),
                        &mut l.logvar_head.weights,
                        &mut l.logvar_head.grad_weights,
                    );
                    f(
                        &format!("layer{i}.vae.logvar.bias"),
                        &mut l.logvar_head.bias,
                        &mut l.logvar_head.grad_bias,
                    );
                }
                _ => {}
            }
        }
    }

    /// Non-trainable state that still belongs in a model file (batch norm
    /// running statistics), visited in declaration order.
    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let LayerState::Bn(l) = layer {
                f(&format!("layer{i}.bn.running_mean"), &mut l.running_mean);
                f(&format!("layer{i}.bn.running_var"), &mut l.running_var);
            }
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params_mut(&mut |_n, p, _g| count += p.len());
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec::new(
            (1, 8, 8),
            vec![
                LayerSpec::conv(2),
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Relu,
                LayerSpec::Fc {
                    input: 2 * 4 * 4,
                    output: 3,
                },
            ],
        )
    }

    #[test]
    fn validate_propagates_shapes() {
        let shapes = toy_spec().validate().unwrap();
        assert_eq!(shapes[0], Shape::new(1, 2, 8, 8));
        assert_eq!(shapes[1], Shape::new(1, 2, 4, 4));
        assert_eq!(shapes[3], Shape::new(1, 3, 1, 1));
    }

    #[test]
    fn validate_rejects_inconsistent_fc() {
        let mut spec = toy_spec();
        spec.layers[3] = LayerSpec::Fc {
            input: 99,
            output: 3,
        };
        assert!(matches!(
            spec.validate(),
            Err(NnError::InvalidSpec { layer: 3, .. })
        ));
    }

    #[test]
    fn build_and_forward_yields_declared_output_shape() {
        let spec = toy_spec();
        let mut net = Network::<f32>::build(&spec, 7).unwrap();
        let input = Tensor::zeros(spec.input_shape(4));
        let out = net.forward(&input, Mode::Infer, None).unwrap();
        assert_eq!(out.shape(), Shape::new(4, 3, 1, 1));
    }

    #[test]
    fn backward_without_forward_errors() {
        let spec = toy_spec();
        let mut net = Network::<f32>::build(&spec, 7).unwrap();
        let g = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert!(matches!(
            net.backward(&g),
            Err(NnError::BackwardBeforeForward(_))
        ));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_param_gradients() {
        let spec = toy_spec();
        let mut net = Network::<f64>::build(&spec, 7).unwrap();
        let input = Tensor::from_vec(
            spec.input_shape(2),
            (0..128).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        net.forward(&input, Mode::Train, None).unwrap();
        net.zero_grads();
        net.backward(&Tensor::zeros(Shape::new(2, 3, 1, 1))).unwrap();
        net.visit_params_mut(&mut |name, _p, g| {
            assert!(g.iter().all(|&v| v == 0.0), "nonzero grad in {name}");
        });
    }

    #[test]
    fn spec_hash_distinguishes_architectures() {
        let a = toy_spec();
        let mut b = toy_spec();
        b.layers[0] = LayerSpec::conv(3);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), toy_spec().hash());
    }
}
