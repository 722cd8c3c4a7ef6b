//! Minimal tensor and layer library with exact forward/backward semantics.
//!
//! Everything the three fixed architectures need, nothing more: 4-D
//! tensors, the eight layer kinds, the three losses, Adam/SGD, and a
//! finite-difference gradient checker. Training runs in `f32`; an `f64`
//! instantiation exists for gradient checking.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;

use thiserror::Error;

pub use network::{LayerSpec, Network, NetworkSpec};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid network spec at layer {layer}: {reason}")]
    InvalidSpec { layer: usize, reason: String },
    #[error("backward called without a cached forward pass in {0}")]
    BackwardBeforeForward(&'static str),
    #[error("{op} requires even spatial dims, got {h}x{w}")]
    OddSpatialDims { op: &'static str, h: usize, w: usize },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("non-finite loss ({value}) at {context}")]
    NonFiniteLoss { value: f64, context: String },
    #[error("stochastic layer needs an RNG in training mode and has no frozen state")]
    MissingNoiseSource,
    #[error("model file error: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Float type the net can be instantiated with. `f32` for training,
/// `f64` for gradient checking.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Tensor shape, up to 4-D: batch, channels, height, width. Lower-rank
/// data uses size-1 trailing dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Per-sample element count.
    pub fn features(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Contiguous row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, NnError> {
        if data.len() != shape.numel() {
            return Err(NnError::ShapeMismatch {
                op: "from_vec",
                expected: format!("{} elements", shape.numel()),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Sample `n`'s contiguous block.
    pub fn sample(&self, n: usize) -> &[T] {
        let f = self.shape.features();
        &self.data[n * f..(n + 1) * f]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let f = self.shape.features();
        &mut self.data[n * f..(n + 1) * f]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: Shape) -> Result<Self, NnError> {
        if shape.numel() != self.data.len() {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                expected: format!("{} elements", self.data.len()),
                got: format!("{}", shape.numel()),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(Scalar::to_f64(v)))
                .collect(),
        }
    }
}

/// Forward-pass mode. Dropout and the VAE latent draw noise only in
/// `Train`; batch norm switches between batch and running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
