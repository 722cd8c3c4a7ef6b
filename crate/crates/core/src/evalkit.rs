//! Evaluation protocols: grid localization/identification statistics,
//! frame-by-frame tracking, occlusion-sensitivity maps, and the
//! area-1/area-2 ablation.

pub mod plots;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{load_sample, DatasetManifest, DatastoreError};
use crate::image::{ImageGrid, Range};
use crate::models::{
    self, train, ModelError, Preset, TrainConfig, TrainSet, TrainedModel,
};
use crate::nn::{Mode, Shape, Tensor};
use crate::preprocess::{
    rectify, scale_unit, subtract_background, BackgroundMode, BackgroundModel, Homography,
    PreprocessError,
};
use crate::scene::ObjectClass;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("test sample {0} lacks a grid cell, required for stack background modes")]
    MissingGridCell(u64),
    #[error("occlusion block {block} exceeds image size {size}")]
    BlockTooLarge { block: usize, size: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

/// One preprocessed evaluation sample.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: u64,
    /// Network-ready `[-1, 1]` input.
    pub input: ImageGrid,
    /// Exact object position, meters.
    pub true_xy: (f64, f64),
    pub class: ObjectClass,
    pub grid: Option<(usize, usize)>,
}

/// Per-sample evaluation outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: u64,
    pub true_xy: (f64, f64),
    pub predicted_xy: (f64, f64),
    pub true_class: usize,
    pub predicted_class: usize,
    pub grid: Option<(usize, usize)>,
}

impl EvalItem {
    pub fn position_error(&self) -> f64 {
        let dx = self.predicted_xy.0 - self.true_xy.0;
        let dy = self.predicted_xy.1 - self.true_xy.1;
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPointStats {
    pub row: usize,
    pub col: usize,
    pub count: usize,
    pub mean_error: f64,
    pub accuracy: f64,
}

/// Localization and identification statistics over a labeled test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    /// Mean Euclidean localization error, meters.
    pub mean_error: f64,
    /// Distance from the corner (along the occluded corridor) splitting
    /// near from far statistics.
    pub near_threshold: f64,
    pub near_error: f64,
    pub near_count: usize,
    pub far_error: f64,
    pub far_count: usize,
    /// Identification accuracy over all samples.
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: [[usize; 3]; 3],
    pub per_point: Vec<GridPointStats>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("samples            {}\n", self.sample_count));
        s.push_str(&format!(
            "mean loc error     {:.4} m\n",
            self.mean_error
        ));
        s.push_str(&format!(
            "near (<= {:.2} m)   {:.4} m over {} samples\n",
            self.near_threshold, self.near_error, self.near_count
        ));
        s.push_str(&format!(
            "far  (>  {:.2} m)   {:.4} m over {} samples\n",
            self.near_threshold, self.far_error, self.far_count
        ));
        s.push_str(&format!("id accuracy        {:.4}\n", self.accuracy));
        s.push_str("confusion (rows = truth, cols = predicted)\n");
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!(
                "  {:<9} {:>6} {:>6} {:>6}\n",
                ObjectClass::ALL[i].name(),
                row[0],
                row[1],
                row[2]
            ));
        }
        if !self.per_point.is_empty() {
            s.push_str("grid point stats (row col n err acc)\n");
            for p in &self.per_point {
                s.push_str(&format!(
                    "  {} {}  {:>3}  {:.4}  {:.3}\n",
                    p.row, p.col, p.count, p.mean_error, p.accuracy
                ));
            }
        }
        s
    }
}

/// Distance threshold separating near and far grid statistics, meters
/// from the corner along the occluded corridor axis.
pub const NEAR_THRESHOLD: f64 = 0.25;

/// Aggregate per-sample outcomes into a report.
pub fn assemble_report(items: &[EvalItem]) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let n = items.len();
    let mut mean_error = 0.0;
    let mut near = (0.0, 0usize);
    let mut far = (0.0, 0usize);
    let mut confusion = [[0usize; 3]; 3];
    let mut correct = 0usize;
    let mut per_point: std::collections::BTreeMap<(usize, usize), (usize, f64, usize)> =
        std::collections::BTreeMap::new();

    for item in items {
        let err = item.position_error();
        mean_error += err;
        // Distance from the corner measured along the corridor axis.
        if item.true_xy.0 <= NEAR_THRESHOLD + 1e-9 {
            near.0 += err;
            near.1 += 1;
        } else {
            far.0 += err;
            far.1 += 1;
        }
        confusion[item.true_class][item.predicted_class] += 1;
        let hit = item.true_class == item.predicted_class;
        if hit {
            correct += 1;
        }
        if let Some(cell) = item.grid {
            let e = per_point.entry(cell).or_insert((0, 0.0, 0));
            e.0 += 1;
            e.1 += err;
            e.2 += hit as usize;
        }
    }

    Ok(EvalReport {
        sample_count: n,
        mean_error: mean_error / n as f64,
        near_threshold: NEAR_THRESHOLD,
        near_error: if near.1 > 0 { near.0 / near.1 as f64 } else { 0.0 },
        near_count: near.1,
        far_error: if far.1 > 0 { far.0 / far.1 as f64 } else { 0.0 },
        far_count: far.1,
        accuracy: correct as f64 / n as f64,
        confusion,
        per_point: per_point
            .into_iter()
            .map(|((row, col), (count, err, hits))| GridPointStats {
                row,
                col,
                count,
                mean_error: err / count as f64,
                accuracy: hits as f64 / count as f64,
            })
            .collect(),
    })
}

fn stack_inputs(samples: &[EvalSample]) -> Tensor<f32> {
    let first = &samples[0].input;
    let shape = Shape::new(
        samples.len(),
        first.channels(),
        first.height(),
        first.width(),
    );
    let mut data = Vec::with_capacity(shape.numel());
    for s in samples {
        data.extend_from_slice(s.input.data());
    }
    Tensor::from_vec(shape, data).expect("uniform sample dims")
}

/// Batched localization inference on a stacked input tensor.
pub fn batch_predict_locations(
    model: &mut TrainedModel,
    inputs: &Tensor<f32>,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let out = model.network.forward(inputs, Mode::Infer, None)?;
    let stats = model.target_stats;
    Ok((0..out.shape().n)
        .map(|i| {
            let raw = [out.data()[i * 2], out.data()[i * 2 + 1]];
            let m = stats.map(|s| s_destandardize(s, raw)).unwrap_or(raw);
            (m[0] as f64, m[1] as f64)
        })
        .collect())
}

fn s_destandardize(s: models::TargetStats, t: [f32; 2]) -> [f32; 2] {
    [t[0] * s.std[0] + s.mean[0], t[1] * s.std[1] + s.mean[1]]
}

/// Batched identification inference returning argmax classes.
pub fn batch_predict_classes(
    model: &mut TrainedModel,
    inputs: &Tensor<f32>,
) -> Result<Vec<usize>, EvalError> {
    let out = model.network.forward(inputs, Mode::Infer, None)?;
    let k = out.shape().features();
    Ok((0..out.shape().n)
        .map(|i| {
            let row = &out.data()[i * k..(i + 1) * k];
            row.iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .map(|(idx, _)| idx)
                .unwrap_or(0)
        })
        .collect())
}

/// Run both models over the test set and aggregate the grid statistics.
pub fn run_grid_eval(
    loc_model: &mut TrainedModel,
    id_model: &mut TrainedModel,
    samples: &[EvalSample],
) -> Result<EvalReport, EvalError> {
    Ok(run_grid_eval_detailed(loc_model, id_model, samples)?.0)
}

pub fn run_grid_eval_detailed(
    loc_model: &mut TrainedModel,
    id_model: &mut TrainedModel,
    samples: &[EvalSample],
) -> Result<(EvalReport, Vec<EvalItem>), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut items = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let inputs = stack_inputs(chunk);
        let locs = batch_predict_locations(loc_model, &inputs)?;
        let classes = batch_predict_classes(id_model, &inputs)?;
        for ((s, xy), class) in chunk.iter().zip(locs).zip(classes) {
            items.push(EvalItem {
                id: s.id,
                true_xy: s.true_xy,
                predicted_xy: xy,
                true_class: s.class.index(),
                predicted_class: class,
                grid: s.grid,
            });
        }
    }
    Ok((assemble_report(&items)?, items))
}

/// Build evaluation samples from a dataset manifest under a background
/// subtraction mode. Stack modes (mean/min) build the per-pixel reference
/// from all frames sharing the sample's grid cell and class.
pub fn load_eval_samples(
    manifest: &DatasetManifest,
    root: &std::path::Path,
    mode: BackgroundMode,
) -> Result<Vec<EvalSample>, EvalError> {
    let mut samples = Vec::new();
    match mode {
        BackgroundMode::GroundTruth => {
            for rec in &manifest.samples {
                let loaded = load_sample(manifest, root, rec.id)?;
                let label = loaded
                    .record
                    .label
                    .clone()
                    .ok_or(EvalError::MissingGridCell(rec.id))?;
                let input = crate::datastore::preprocessed_input(&loaded)?;
                samples.push(EvalSample {
                    id: rec.id,
                    input,
                    true_xy: (label.x, label.y),
                    class: label.class,
                    grid: label.grid,
                });
            }
        }
        BackgroundMode::PixelMean | BackgroundMode::PixelMin => {
            // Group frames by (grid cell, class); each group is the
            // rendered analog of one capture video.
            let mut groups: std::collections::BTreeMap<(usize, usize, usize), Vec<u64>> =
                std::collections::BTreeMap::new();
            for rec in &manifest.samples {
                let label = rec
                    .label
                    .as_ref()
                    .ok_or(EvalError::MissingGridCell(rec.id))?;
                let (row, col) = label.grid.ok_or(EvalError::MissingGridCell(rec.id))?;
                groups
                    .entry((row, col, label.class.index()))
                    .or_default()
                    .push(rec.id);
            }
            for ids in groups.values() {
                let loaded: Vec<_> = ids
                    .iter()
                    .map(|&id| load_sample(manifest, root, id))
                    .collect::<Result<_, _>>()?;
                let stack: Vec<ImageGrid> = loaded.iter().map(|l| l.input.clone()).collect();
                let bg = match mode {
                    BackgroundMode::PixelMean => BackgroundModel::PixelMean(stack),
                    _ => BackgroundModel::PixelMin(stack),
                };
                for l in &loaded {
                    let label = l.record.label.clone().unwrap();
                    let diff = subtract_background(&l.input, &bg)?;
                    samples.push(EvalSample {
                        id: l.record.id,
                        input: scale_unit(&diff),
                        true_xy: (label.x, label.y),
                        class: label.class,
                        grid: label.grid,
                    });
                }
            }
            samples.sort_by_key(|s| s.id);
        }
    }
    Ok(samples)
}

/// Object track from a frame sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Track {
    pub points: Vec<TrackPoint>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
}

/// Localize the object in each frame independently: rectify, subtract the
/// (rectified) background, scale, predict. No temporal smoothing.
pub fn track(
    loc_model: &mut TrainedModel,
    frames: &[ImageGrid],
    bg: &BackgroundModel,
    h: &Homography,
) -> Result<Track, EvalError> {
    if frames.is_empty() {
        return Ok(Track { points: Vec::new() });
    }
    let out_size = loc_model.network.spec().input_height;
    let bg_rect = bg.rectified(h, out_size)?;
    let mut points = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let rect = rectify(frame, h, out_size)?;
        let diff = subtract_background(&rect, &bg_rect)?;
        let input = scale_unit(&diff);
        let (x, y) = models::predict_location(loc_model, &input)?;
        points.push(TrackPoint { frame: i, x, y });
    }
    Ok(Track { points })
}

/// Which model a sensitivity analysis probes.
pub enum SensitivityTask<'a> {
    /// Degradation metric: localization error increase in meters.
    Localization(&'a mut TrainedModel),
    /// Degradation metric: identification accuracy drop.
    Identification(&'a mut TrainedModel),
}

/// Occlusion sensitivity: zero a `block x block` square at every stride
/// position of every sample's input, measure the prediction degradation,
/// and average it into a per-pixel map. Improvements clamp to zero.
pub fn occlusion_sensitivity(
    mut task: SensitivityTask<'_>,
    samples: &[EvalSample],
    block: usize,
    stride: usize,
) -> Result<ImageGrid, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let size = samples[0].input.width();
    if block > size {
        return Err(EvalError::BlockTooLarge { block, size });
    }
    let stride = stride.max(1);

    let inputs = stack_inputs(samples);
    let base_metric = sensitivity_metric(&mut task, &inputs, samples)?;

    // Block positions cover the image; the last position aligns to the
    // bottom/right edge even off-stride.
    let mut starts = Vec::new();
    let mut p = 0;
    loop {
        starts.push(p.min(size - block));
        if p + block >= size {
            break;
        }
        p += stride;
    }
    starts.dedup();

    let mut heat = vec![0.0f64; size * size];
    let mut cover = vec![0u32; size * size];
    let feat = Shape::new(1, 1, size, size).features();
    for &y0 in &starts {
        for &x0 in &starts {
            let mut blocked = inputs.clone();
            for n in 0..samples.len() {
                let sample = &mut blocked.data_mut()[n * feat..(n + 1) * feat];
                for y in y0..y0 + block {
                    for v in &mut sample[y * size + x0..y * size + x0 + block] {
                        *v = 0.0;
                    }
                }
            }
            let metric = sensitivity_metric(&mut task, &blocked, samples)?;
            let degradation = (metric - base_metric).max(0.0);
            for y in y0..y0 + block {
                for x in x0..x0 + block {
                    heat[y * size + x] += degradation;
                    cover[y * size + x] += 1;
                }
            }
        }
    }
    let data: Vec<f32> = heat
        .iter()
        .zip(&cover)
        .map(|(&h, &c)| if c > 0 { (h / c as f64) as f32 } else { 0.0 })
        .collect();
    Ok(ImageGrid::new(size, size, 1, Range::Linear, data)?)
}

/// Degradation scale: mean localization error (meters) or one minus the
/// identification accuracy, so that bigger means worse for both.
fn sensitivity_metric(
    task: &mut SensitivityTask<'_>,
    inputs: &Tensor<f32>,
    samples: &[EvalSample],
) -> Result<f64, EvalError> {
    match task {
        SensitivityTask::Localization(model) => {
            let locs = batch_predict_locations(model, inputs)?;
            let mut err = 0.0;
            for (s, (x, y)) in samples.iter().zip(locs) {
                err += ((x - s.true_xy.0).powi(2) + (y - s.true_xy.1).powi(2)).sqrt();
            }
            Ok(err / samples.len() as f64)
        }
        SensitivityTask::Identification(model) => {
            let classes = batch_predict_classes(model, inputs)?;
            let correct = samples
                .iter()
                .zip(classes)
                .filter(|(s, c)| s.class.index() == *c)
                .count();
            Ok(1.0 - correct as f64 / samples.len() as f64)
        }
    }
}

/// Visible region for the ablation study. Area 1 lies beyond the corner
/// line (toward the illuminated wall), area 2 between the corner and the
/// camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Area1,
    Area2,
    Both,
}

impl Region {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "area1" => Some(Region::Area1),
            "area2" => Some(Region::Area2),
            "both" => Some(Region::Both),
            _ => None,
        }
    }
}

/// Zero the columns hidden by the region choice. `corner_col` is the
/// fractional rectified column of the corner; columns right of it belong
/// to area 1.
pub fn apply_region_mask(data: &mut [f32], width: usize, region: Region, corner_col: f64) {
    if region == Region::Both {
        return;
    }
    let rows = data.len() / width;
    for r in 0..rows {
        for c in 0..width {
            let in_area1 = (c as f64) > corner_col;
            let keep = match region {
                Region::Area1 => in_area1,
                Region::Area2 => !in_area1,
                Region::Both => true,
            };
            if !keep {
                data[r * width + c] = 0.0;
            }
        }
    }
}

/// Outcome of one ablation condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub region: Region,
    pub loc_error: f64,
    pub id_accuracy: f64,
    pub report: EvalReport,
}

/// Retrain both tasks with the complementary region zeroed at train and
/// test time, then evaluate on the masked test set.
#[allow(clippy::too_many_arguments)]
pub fn area_ablation(
    loc_train: &TrainSet,
    id_train: &TrainSet,
    test: &[EvalSample],
    corner_col: f64,
    region: Region,
    loc_cfg: &TrainConfig,
    id_cfg: &TrainConfig,
) -> Result<AblationResult, EvalError> {
    let mask_set = |set: &TrainSet| -> TrainSet {
        let mut masked = set.clone();
        for input in &mut masked.inputs {
            let w = input.shape().w;
            apply_region_mask(input.data_mut(), w, region, corner_col);
        }
        masked
    };
    let (mut loc_model, _) = train(Preset::Localization, &mask_set(loc_train), loc_cfg)?;
    let (mut id_model, _) = train(Preset::Identification, &mask_set(id_train), id_cfg)?;

    let masked_test: Vec<EvalSample> = test
        .iter()
        .map(|s| {
            let mut m = s.clone();
            let w = m.input.width();
            apply_region_mask(m.input.data_mut(), w, region, corner_col);
            m
        })
        .collect();

    let report = run_grid_eval(&mut loc_model, &mut id_model, &masked_test)?;
    Ok(AblationResult {
        region,
        loc_error: report.mean_error,
        id_accuracy: report.accuracy,
        report,
    })
}
