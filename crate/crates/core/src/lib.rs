//! End-to-end around-the-corner imaging pipeline.
//!
//! The library reproduces a complete non-line-of-sight sensing workflow on
//! a desk-scale L-shaped hallway: a Monte-Carlo path tracer renders
//! domain-randomized measurements of the scene, geometric preprocessing
//! rectifies and background-subtracts them, compact convolutional networks
//! localize / identify / reconstruct the hidden object, and the evaluation
//! kit runs the grid protocol, tracking, occlusion-sensitivity, and area
//! ablation studies.
//!
//! Modules, in pipeline order:
//!
//! - [`scene`] — hallway world model, parameter randomization, grid layout
//! - [`render`] — path tracer, radiosity oracle, render jobs
//! - [`preprocess`] — rectification, background subtraction, unit scaling
//! - [`nn`] — tensors, layers, losses, optimizers, gradient checking
//! - [`models`] — the three network presets and their training loops
//! - [`evalkit`] — grid evaluation, tracking, sensitivity, ablations
//! - [`datastore`] — dataset generation, manifests, splits, imports

pub mod datastore;
pub mod evalkit;
pub mod image;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod render;
pub mod rng;
pub mod scene;

pub use image::{ImageGrid, Range};
pub use scene::{GridSpec, ObjectClass, SceneConfig, SceneInstance, TargetObject};
