//! The three fixed architectures, their training loops, and inference
//! entry points.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::image::{ImageGrid, Range};
use crate::nn::loss::{cross_entropy_loss, mse_loss, vae_loss};
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::{LayerSpec, Mode, Network, NetworkSpec, NnError, Shape, Tensor};
use crate::rng::{self, Domain};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("model file error: {0}")]
    ModelFile(String),
    #[error("model is a {got:?} model, expected {expected:?}")]
    WrongPreset { got: Preset, expected: Preset },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The architectures of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Preset {
    /// Regression of the hidden object's floor position.
    Localization,
    /// Three-way object classification.
    Identification,
    /// Variational encoder-decoder reconstructing the occluded view.
    Generative,
    /// Generative variant for 128x128 inputs and 3x128x128 outputs,
    /// trained from paired images on disk.
    GenerativeReal,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Localization,
        Preset::Identification,
        Preset::Generative,
        Preset::GenerativeReal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Localization => "localization",
            Preset::Identification => "identification",
            Preset::Generative => "generative",
            Preset::GenerativeReal => "generative_real",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    fn tag(self) -> u8 {
        match self {
            Preset::Localization => 0,
            Preset::Identification => 1,
            Preset::Generative => 2,
            Preset::GenerativeReal => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.tag() == tag)
    }

    /// Default epoch counts: 7 for localization, 20 for identification,
    /// 100 for the generative models.
    pub fn default_epochs(self) -> usize {
        match self {
            Preset::Localization => 7,
            Preset::Identification => 20,
            Preset::Generative | Preset::GenerativeReal => 100,
        }
    }

    /// Output image dimensions (channels, height, width) of the
    /// generative presets.
    pub fn output_dims(self) -> Option<(usize, usize, usize)> {
        match self {
            Preset::Generative => Some((1, 64, 64)),
            Preset::GenerativeReal => Some((3, 128, 128)),
            _ => None,
        }
    }

    /// The layer stack. Convolutions are 5x5, stride 1, padding 2; a ReLU
    /// follows each pooling layer and precedes each fully connected layer.
    pub fn spec(self) -> NetworkSpec {
        use LayerSpec as L;
        match self {
            Preset::Localization => NetworkSpec::new(
                (1, 64, 64),
                vec![
                    L::conv(8),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::conv(16),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::conv(32),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::Fc { input: 2048, output: 24 },
                    L::Relu,
                    L::Fc { input: 24, output: 2 },
                ],
            ),
            Preset::Identification => NetworkSpec::new(
                (1, 64, 64),
                vec![
                    L::conv(8),
                    L::BatchNorm { channels: 8 },
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::Dropout { rate: 0.5 },
                    L::Fc { input: 8192, output: 12 },
                    L::Relu,
                    L::Dropout { rate: 0.5 },
                    L::Fc { input: 12, output: 3 },
                ],
            ),
            Preset::Generative => NetworkSpec::new(
                (1, 64, 64),
                vec![
                    L::conv(8),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::conv(15),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::conv(32),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::Fc { input: 2048, output: 100 },
                    L::Relu,
                    L::VaeLatent { input: 100, latent: 20 },
                    L::Fc { input: 20, output: 600 },
                    L::Relu,
                    L::Fc { input: 600, output: 4096 },
                ],
            ),
            Preset::GenerativeReal => NetworkSpec::new(
                (1, 128, 128),
                vec![
                    L::conv(8),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::conv(15),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::conv(32),
                    L::MaxPool { size: 2 },
                    L::Relu,
                    L::Fc { input: 8192, output: 100 },
                    L::Relu,
                    L::VaeLatent { input: 100, latent: 20 },
                    L::Fc { input: 20, output: 600 },
                    L::Fc { input: 600, output: 3 * 128 * 128 },
                ],
            ),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    pub fn for_preset(preset: Preset) -> Self {
        Self {
            epochs: preset.default_epochs(),
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Labels for one training task.
#[derive(Debug, Clone)]
pub enum TaskLabels {
    /// Object floor position in meters, canonical scene frame.
    Location(Vec<[f32; 2]>),
    /// Object class index.
    Class(Vec<usize>),
    /// Target output image per sample.
    Target(Vec<Tensor<f32>>),
}

impl TaskLabels {
    fn len(&self) -> usize {
        match self {
            TaskLabels::Location(v) => v.len(),
            TaskLabels::Class(v) => v.len(),
            TaskLabels::Target(v) => v.len(),
        }
    }
}

/// In-memory training set: preprocessed `[-1, 1]` inputs plus labels.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: TaskLabels,
}

/// Standardization of regression targets, stored with the model so
/// inference can invert it.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetStats {
    pub mean: [f32; 2],
    pub std: [f32; 2],
}

impl TargetStats {
    fn fit(targets: &[[f32; 2]]) -> Self {
        let n = targets.len().max(1) as f32;
        let mut mean = [0.0f32; 2];
        for t in targets {
            mean[0] += t[0] / n;
            mean[1] += t[1] / n;
        }
        let mut var = [0.0f32; 2];
        for t in targets {
            var[0] += (t[0] - mean[0]).powi(2) / n;
            var[1] += (t[1] - mean[1]).powi(2) / n;
        }
        Self {
            mean,
            std: [var[0].sqrt().max(1e-6), var[1].sqrt().max(1e-6)],
        }
    }

    fn standardize(&self, t: [f32; 2]) -> [f32; 2] {
        [
            (t[0] - self.mean[0]) / self.std[0],
            (t[1] - self.mean[1]) / self.std[1],
        ]
    }

    fn destandardize(&self, t: [f32; 2]) -> [f32; 2] {
        [
            t[0] * self.std[0] + self.mean[0],
            t[1] * self.std[1] + self.mean[1],
        ]
    }
}

/// A trained network plus the metadata inference needs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub preset: Preset,
    pub network: Network<f32>,
    pub target_stats: Option<TargetStats>,
}

/// Convert a preprocessed image into a network input tensor.
pub fn tensor_from_image(image: &ImageGrid) -> Tensor<f32> {
    Tensor::from_vec(
        Shape::new(1, image.channels(), image.height(), image.width()),
        image.data().to_vec(),
    )
    .expect("image data length matches its dimensions")
}

/// Reassemble one sample of a flat network output into an image, clamping
/// into the unit range.
pub fn image_from_flat(
    data: &[f32],
    dims: (usize, usize, usize),
) -> Result<ImageGrid, ModelError> {
    let (c, h, w) = dims;
    let clamped: Vec<f32> = data.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok(ImageGrid::new(w, h, c, Range::Unit, clamped)?)
}

fn stack_batch(set: &TrainSet, indices: &[usize], input_shape: Shape) -> Tensor<f32> {
    let feat = input_shape.features();
    let mut data = Vec::with_capacity(indices.len() * feat);
    for &i in indices {
        data.extend_from_slice(set.inputs[i].data());
    }
    Tensor::from_vec(
        Shape::new(indices.len(), input_shape.c, input_shape.h, input_shape.w),
        data,
    )
    .expect("batch assembly")
}

fn validate_set(preset: Preset, set: &TrainSet) -> Result<(), ModelError> {
    if set.inputs.is_empty() {
        return Err(ModelError::Dataset("empty training set".into()));
    }
    if set.inputs.len() != set.labels.len() {
        return Err(ModelError::Dataset(format!(
            "{} inputs but {} labels",
            set.inputs.len(),
            set.labels.len()
        )));
    }
    let expected = preset.spec().input_shape(1);
    for (i, input) in set.inputs.iter().enumerate() {
        if input.shape() != expected {
            return Err(ModelError::Dataset(format!(
                "input {i} has shape {} but {:?} expects {expected}",
                input.shape(),
                preset
            )));
        }
    }
    let label_ok = matches!(
        (preset, &set.labels),
        (Preset::Localization, TaskLabels::Location(_))
            | (Preset::Identification, TaskLabels::Class(_))
            | (Preset::Generative, TaskLabels::Target(_))
            | (Preset::GenerativeReal, TaskLabels::Target(_))
    );
    if !label_ok {
        return Err(ModelError::Dataset(format!(
            "label kind does not match task {:?}",
            preset
        )));
    }
    if let (Some(dims), TaskLabels::Target(targets)) = (preset.output_dims(), &set.labels) {
        let want = dims.0 * dims.1 * dims.2;
        for (i, t) in targets.iter().enumerate() {
            if t.numel() != want {
                return Err(ModelError::Dataset(format!(
                    "target {i} has {} elements, expected {want}",
                    t.numel()
                )));
            }
        }
    }
    Ok(())
}

/// Train a preset on the set with shuffled mini-batches. Returns the
/// model and the per-epoch mean training loss. Deterministic in
/// `(set, cfg)` and independent of thread count.
pub fn train(
    preset: Preset,
    set: &TrainSet,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, Vec<f64>), ModelError> {
    validate_set(preset, set)?;
    let spec = preset.spec();
    let input_shape = spec.input_shape(1);
    let mut net = Network::<f32>::build(&spec, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);

    let target_stats = match &set.labels {
        TaskLabels::Location(targets) => Some(TargetStats::fit(targets)),
        _ => None,
    };

    let n = set.inputs.len();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, Domain::TrainShuffle, epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let x = stack_batch(set, batch, input_shape);
            let mut noise = rng::stream(cfg.seed, Domain::TrainDropout, step);
            let out = net.forward(&x, Mode::Train, Some(&mut noise))?;

            let loss = match &set.labels {
                TaskLabels::Location(targets) => {
                    let stats = target_stats.as_ref().unwrap();
                    let mut t = Vec::with_capacity(batch.len() * 2);
                    for &i in batch {
                        t.extend(stats.standardize(targets[i]));
                    }
                    let target =
                        Tensor::from_vec(Shape::new(batch.len(), 2, 1, 1), t).expect("targets");
                    let (loss, grad) = mse_loss(&out, &target)?;
                    net.zero_grads();
                    net.backward(&grad)?;
                    loss as f64
                }
                TaskLabels::Class(classes) => {
                    let labels: Vec<usize> = batch.iter().map(|&i| classes[i]).collect();
                    let (loss, grad) = cross_entropy_loss(&out, &labels)?;
                    net.zero_grads();
                    net.backward(&grad)?;
                    loss as f64
                }
                TaskLabels::Target(targets) => {
                    let feat = out.shape().features();
                    let mut t = Vec::with_capacity(batch.len() * feat);
                    for &i in batch {
                        t.extend_from_slice(targets[i].data());
                    }
                    let target = Tensor::from_vec(
                        Shape::new(batch.len(), feat, 1, 1),
                        t,
                    )
                    .expect("targets");
                    let (mean, logvar) = {
                        let latent = net
                            .vae_latent()
                            .ok_or_else(|| ModelError::Dataset("no latent block".into()))?;
                        let (m, lv) = latent.posterior().expect("forward ran");
                        (m.clone(), lv.clone())
                    };
                    let (parts, grads) = vae_loss(&out, &target, &mean, &logvar)?;
                    net.vae_latent_mut()
                        .unwrap()
                        .set_kl_grad(grads.d_mean, grads.d_logvar);
                    net.zero_grads();
                    net.backward(&grads.d_recon)?;
                    parts.total as f64
                }
            };
            opt.step(&mut net);
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        curve.push(epoch_loss / n as f64);
    }

    Ok((
        TrainedModel {
            preset,
            network: net,
            target_stats,
        },
        curve,
    ))
}

fn check_input(model: &TrainedModel, image: &ImageGrid) -> Result<Tensor<f32>, ModelError> {
    let spec_shape = model.network.spec().input_shape(1);
    if image.channels() != spec_shape.c
        || image.height() != spec_shape.h
        || image.width() != spec_shape.w
    {
        return Err(ModelError::Dataset(format!(
            "input image {}x{}x{} does not match network input {spec_shape}",
            image.channels(),
            image.height(),
            image.width()
        )));
    }
    Ok(tensor_from_image(image))
}

/// Regressed object position in meters, canonical scene frame.
pub fn predict_location(
    model: &mut TrainedModel,
    image: &ImageGrid,
) -> Result<(f64, f64), ModelError> {
    if model.preset != Preset::Localization {
        return Err(ModelError::WrongPreset {
            got: model.preset,
            expected: Preset::Localization,
        });
    }
    let x = check_input(model, image)?;
    let out = model.network.forward(&x, Mode::Infer, None)?;
    let raw = [out.data()[0], out.data()[1]];
    let m = model
        .target_stats
        .map(|s| s.destandardize(raw))
        .unwrap_or(raw);
    Ok((m[0] as f64, m[1] as f64))
}

/// Class probabilities (softmax over the three logits).
pub fn predict_class(model: &mut TrainedModel, image: &ImageGrid) -> Result<[f64; 3], ModelError> {
    if model.preset != Preset::Identification {
        return Err(ModelError::WrongPreset {
            got: model.preset,
            expected: Preset::Identification,
        });
    }
    let x = check_input(model, image)?;
    let out = model.network.forward(&x, Mode::Infer, None)?;
    let mut probs = [out.data()[0], out.data()[1], out.data()[2]];
    crate::nn::layers::softmax_row(&mut probs);
    Ok([probs[0] as f64, probs[1] as f64, probs[2] as f64])
}

/// How the latent vector is formed during reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    /// Deterministic: the posterior mean.
    MeanLatent,
    /// Reparameterized sample with this seed.
    Sample(u64),
}

/// Decode the occluded-view image from a measurement.
pub fn reconstruct(
    model: &mut TrainedModel,
    image: &ImageGrid,
    mode: ReconMode,
) -> Result<ImageGrid, ModelError> {
    let dims = model.preset.output_dims().ok_or(ModelError::WrongPreset {
        got: model.preset,
        expected: Preset::Generative,
    })?;
    let x = check_input(model, image)?;
    let out = match mode {
        ReconMode::MeanLatent => model.network.forward(&x, Mode::Infer, None)?,
        ReconMode::Sample(seed) => {
            // The generative stacks have no dropout, so training mode only
            // switches the latent to its reparameterized sample.
            let mut noise = rng::stream(seed, Domain::TrainLatent, 0);
            model.network.forward(&x, Mode::Train, Some(&mut noise))?
        }
    };
    image_from_flat(out.data(), dims)
}

const MODEL_MAGIC: &[u8; 8] = b"NLOSMDL1";

/// Serialize: magic, preset tag, spec hash, spec JSON, target stats, then
/// per-layer parameter and buffer arrays as little-endian f32 in
/// declaration order.
pub fn save_model(model: &mut TrainedModel, path: &Path) -> Result<(), ModelError> {
    let spec_json = serde_json::to_vec(model.network.spec())
        .map_err(|e| ModelError::ModelFile(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(model.preset.tag());
    out.extend_from_slice(&model.network.spec().hash().to_le_bytes());
    out.extend_from_slice(&(spec_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec_json);
    match model.target_stats {
        Some(s) => {
            out.push(1);
            for v in s.mean.iter().chain(s.std.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    let mut params = Vec::new();
    model
        .network
        .visit_params_mut(&mut |_n, p, _g| params.extend_from_slice(p));
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut buffers = Vec::new();
    model
        .network
        .visit_buffers_mut(&mut |_n, b| buffers.extend_from_slice(b));
    out.extend_from_slice(&(buffers.len() as u64).to_le_bytes());
    for v in &buffers {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| ModelError::ModelFile(m.to_string());
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        if *pos + n > bytes.len() {
            return Err(ModelError::ModelFile("truncated model file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 8)? != MODEL_MAGIC {
        return Err(bad("bad magic"));
    }
    let preset = Preset::from_tag(take(&mut pos, 1)?[0]).ok_or_else(|| bad("unknown preset"))?;
    let stored_hash = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let json_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let spec: NetworkSpec = serde_json::from_slice(take(&mut pos, json_len)?)
        .map_err(|e| bad(&format!("spec json: {e}")))?;
    if spec.hash() != stored_hash {
        return Err(bad("spec hash mismatch"));
    }
    if spec != preset.spec() {
        return Err(bad("stored spec does not match its preset"));
    }
    let target_stats = if take(&mut pos, 1)?[0] == 1 {
        let mut vals = [0.0f32; 4];
        for v in vals.iter_mut() {
            *v = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        }
        Some(TargetStats {
            mean: [vals[0], vals[1]],
            std: [vals[2], vals[3]],
        })
    } else {
        None
    };

    let mut network = Network::<f32>::build(&spec, 0)?;
    let param_count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    if param_count != network.param_count() {
        return Err(bad("parameter count mismatch"));
    }
    let raw = take(&mut pos, param_count * 4)?;
    let mut values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    network.visit_params_mut(&mut |_n, p, _g| {
        for v in p.iter_mut() {
            *v = values.next().expect("length checked");
        }
    });
    let buffer_count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let raw = take(&mut pos, buffer_count * 4)?;
    let mut values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut filled = 0usize;
    network.visit_buffers_mut(&mut |_n, b| {
        for v in b.iter_mut() {
            if let Some(x) = values.next() {
                *v = x;
                filled += 1;
            }
        }
    });
    if filled != buffer_count {
        return Err(bad("buffer count mismatch"));
    }

    Ok(TrainedModel {
        preset,
        network,
        target_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes_hold_only_with_padding_two() {
        // The fully connected input sizes pin the conv padding: 64 -> 32
        // -> 16 -> 8 with same-size convolutions.
        assert_eq!(Preset::Localization.spec().first_fc_input(), Some(2048));
        assert_eq!(Preset::Identification.spec().first_fc_input(), Some(8192));
        assert_eq!(Preset::Generative.spec().first_fc_input(), Some(2048));
        assert_eq!(Preset::GenerativeReal.spec().first_fc_input(), Some(8192));
        for preset in Preset::ALL {
            preset.spec().validate().unwrap();
        }
        for padding in [0usize, 1, 3] {
            for preset in [Preset::Localization, Preset::Identification, Preset::Generative] {
                let mut spec = preset.spec();
                for layer in spec.layers.iter_mut() {
                    if let LayerSpec::Conv2d { padding: p, .. } = layer {
                        *p = padding;
                    }
                }
                assert!(
                    spec.validate().is_err(),
                    "{preset:?} with padding {padding} must fail validation"
                );
            }
        }
    }

    #[test]
    fn generative_output_length_matches_image_dims() {
        for preset in [Preset::Generative, Preset::GenerativeReal] {
            let (c, h, w) = preset.output_dims().unwrap();
            let out = preset.spec().output_shape().unwrap();
            assert_eq!(out.features(), c * h * w);
        }
    }

    fn tiny_location_set(n: usize) -> TrainSet {
        use rand::Rng;
        let mut rng = rng::stream(5, Domain::Test, 60);
        let shape = Shape::new(1, 1, 64, 64);
        let inputs = (0..n)
            .map(|_| {
                Tensor::from_vec(
                    shape,
                    (0..shape.numel())
                        .map(|_| rng.gen_range(-1.0f32..1.0))
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let labels = (0..n)
            .map(|_| [rng.gen_range(0.1f32..0.4), rng.gen_range(-0.4f32..-0.1)])
            .collect();
        TrainSet {
            inputs,
            labels: TaskLabels::Location(labels),
        }
    }

    #[test]
    fn one_epoch_yields_one_loss_entry() {
        let set = tiny_location_set(10);
        let mut cfg = TrainConfig::for_preset(Preset::Localization);
        cfg.epochs = 1;
        cfg.batch_size = 4;
        let (_model, curve) = train(Preset::Localization, &set, &cfg).unwrap();
        assert_eq!(curve.len(), 1);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let set = tiny_location_set(8);
        let mut cfg = TrainConfig::for_preset(Preset::Localization);
        cfg.epochs = 2;
        cfg.batch_size = 4;
        let weights = |m: &mut TrainedModel| {
            let mut w = Vec::new();
            m.network.visit_params_mut(&mut |_n, p, _g| w.extend_from_slice(p));
            w
        };
        let (mut m1, c1) = train(Preset::Localization, &set, &cfg).unwrap();
        let (mut m2, c2) = train(Preset::Localization, &set, &cfg).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(weights(&mut m1), weights(&mut m2));
    }

    #[test]
    fn predict_location_is_finite_on_zero_input() {
        let set = tiny_location_set(6);
        let mut cfg = TrainConfig::for_preset(Preset::Localization);
        cfg.epochs = 1;
        let (mut model, _) = train(Preset::Localization, &set, &cfg).unwrap();
        let zeros = ImageGrid::zeros(64, 64, 1, Range::Unit);
        let (x, y) = predict_location(&mut model, &zeros).unwrap();
        assert!(x.is_finite() && y.is_finite());
    }

    #[test]
    fn predictors_refuse_models_of_other_presets() {
        let set = tiny_location_set(4);
        let mut cfg = TrainConfig::for_preset(Preset::Localization);
        cfg.epochs = 1;
        let (mut model, _) = train(Preset::Localization, &set, &cfg).unwrap();
        let img = ImageGrid::zeros(64, 64, 1, Range::Unit);
        assert!(matches!(
            predict_class(&mut model, &img),
            Err(ModelError::WrongPreset { .. })
        ));
        assert!(matches!(
            reconstruct(&mut model, &img, ReconMode::MeanLatent),
            Err(ModelError::WrongPreset { .. })
        ));
    }

    #[test]
    fn model_files_round_trip_and_bind_to_their_preset() {
        let set = tiny_location_set(4);
        let mut cfg = TrainConfig::for_preset(Preset::Localization);
        cfg.epochs = 1;
        let (mut model, _) = train(Preset::Localization, &set, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loc.model");
        save_model(&mut model, &path).unwrap();
        let mut back = load_model(&path).unwrap();
        assert_eq!(back.preset, Preset::Localization);
        assert_eq!(back.target_stats, model.target_stats);

        let img = ImageGrid::zeros(64, 64, 1, Range::Unit);
        let a = predict_location(&mut model, &img).unwrap();
        let b = predict_location(&mut back, &img).unwrap();
        assert_eq!(a, b);
    }
}
