//! Dataset generation orchestration, the on-disk format, splits, and
//! ingestion of external paired-image datasets.
//!
//! Layout: `manifest.json` plus `images/{id}_in.pgm`, `{id}_out.pgm`,
//! `{id}_bg.pgm`, all paths relative to the dataset root.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageGrid;
use crate::models::{TaskLabels, TrainSet};
use crate::preprocess::{scale_unit, subtract_background, BackgroundModel};
use crate::render::{render, render_pair_opts, PairOptions, RenderError, RenderJob, View};
use crate::rng::{self, Domain};
use crate::scene::{GridSpec, ObjectClass, SceneConfig, SceneError, SceneInstance, TargetObject};

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("split fractions {0:?} do not sum to 1")]
    BadFractions([f64; 3]),
    #[error("import error: {0}")]
    Import(String),
    #[error("validation failed for sample {id}: {reason}")]
    SampleInvalid { id: u64, reason: String },
}

/// Exact generation-time label of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub x: f64,
    pub y: f64,
    pub class: ObjectClass,
    pub yaw: f64,
    /// Grid cell for protocol test sets.
    pub grid: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub input: String,
    pub output: String,
    pub background: Option<String>,
    /// FNV-1a of each file's bytes, hex.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub seed: u64,
    /// Concrete scene parameters the sample was rendered with.
    pub params: Option<SceneInstance>,
    pub label: Option<SampleLabel>,
    pub files: SampleFiles,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// (channels, height, width) of inputs and outputs.
    pub input_dims: (usize, usize, usize),
    pub output_dims: (usize, usize, usize),
    pub sample_count: usize,
    pub config_hash: String,
    pub splits: Option<Splits>,
    pub samples: Vec<SampleRecord>,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<(), DatastoreError> {
        let tmp = root.join("manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self).expect("manifest serializes"))?;
        std::fs::rename(&tmp, root.join(MANIFEST_NAME))?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self, DatastoreError> {
        let bytes = std::fs::read(root.join(MANIFEST_NAME))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)
            .map_err(|e| DatastoreError::Manifest(e.to_string()))?;
        if manifest.sample_count != manifest.samples.len() {
            return Err(DatastoreError::Manifest(format!(
                "sample_count {} but {} records",
                manifest.sample_count,
                manifest.samples.len()
            )));
        }
        if let Some(splits) = &manifest.splits {
            let mut seen = std::collections::HashSet::new();
            for id in splits.train.iter().chain(&splits.val).chain(&splits.test) {
                if !seen.insert(*id) {
                    return Err(DatastoreError::Manifest(format!("id {id} in two splits")));
                }
            }
            if seen.len() != manifest.samples.len() {
                return Err(DatastoreError::Manifest(
                    "splits are not exhaustive".to_string(),
                ));
            }
        }
        Ok(manifest)
    }

    pub fn record(&self, id: u64) -> Option<&SampleRecord> {
        self.samples.iter().find(|r| r.id == id)
    }

    /// Check every record's files: existence, dimensions, checksum.
    pub fn validate_files(&self, root: &Path) -> Result<(), DatastoreError> {
        for rec in &self.samples {
            for (name, rel) in [
                ("input", Some(&rec.files.input)),
                ("output", Some(&rec.files.output)),
                ("background", rec.files.background.as_ref()),
            ] {
                let Some(rel) = rel else { continue };
                let path = root.join(rel);
                let bytes = std::fs::read(&path).map_err(|e| DatastoreError::SampleInvalid {
                    id: rec.id,
                    reason: format!("{name} file {rel}: {e}"),
                })?;
                let sum = format!("{:016x}", rng::fnv1a64(&bytes));
                match rec.files.checksums.get(name) {
                    Some(expect) if *expect == sum => {}
                    Some(expect) => {
                        return Err(DatastoreError::SampleInvalid {
                            id: rec.id,
                            reason: format!("{name} checksum {sum} != {expect}"),
                        })
                    }
                    None => {}
                }
                let dims = if name == "output" {
                    self.output_dims
                } else {
                    self.input_dims
                };
                let img = ImageGrid::read_pgm16(&path, dims.0).map_err(|e| {
                    DatastoreError::SampleInvalid {
                        id: rec.id,
                        reason: format!("{name}: {e}"),
                    }
                })?;
                if img.height() != dims.1 || img.width() != dims.2 {
                    return Err(DatastoreError::SampleInvalid {
                        id: rec.id,
                        reason: format!(
                            "{name} is {}x{}, manifest says {}x{}",
                            img.height(),
                            img.width(),
                            dims.1,
                            dims.2
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Ids of one split, or all ids when no splits are assigned.
    pub fn split_ids(&self, which: SplitKind) -> Vec<u64> {
        match (&self.splits, which) {
            (Some(s), SplitKind::Train) => s.train.clone(),
            (Some(s), SplitKind::Val) => s.val.clone(),
            (Some(s), SplitKind::Test) => s.test.clone(),
            (None, _) => self.samples.iter().map(|r| r.id).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// Generation settings beyond the required knobs.
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub max_bounces: usize,
    pub output_channels: usize,
    /// Records per manifest checkpoint while generating.
    pub checkpoint_every: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_bounces: 4,
            output_channels: 1,
            checkpoint_every: 256,
        }
    }
}

/// Draw the training-set object for a sample: class uniform over the
/// three shapes, position uniform over the placement region, yaw uniform
/// over the jitter range.
pub fn sample_training_object(scene: &SceneInstance, sample_seed: u64) -> TargetObject {
    let mut rng = rng::stream(sample_seed, Domain::ObjectPlacement, 0);
    let class = ObjectClass::ALL[rng.gen_range(0..3usize)];
    let p = &scene.placement;
    let x = rng.gen_range(p.x_min..p.x_max);
    let y = rng.gen_range(p.y_min..p.y_max);
    let j = scene.objects.yaw_jitter;
    let yaw = if j > 0.0 { rng.gen_range(-j..j) } else { 0.0 };
    let mut obj = TargetObject::with_defaults(class, x, y, &scene.objects);
    obj.yaw = yaw;
    obj
}

fn generation_hash(scene: &SceneConfig, seed: u64, spp: usize, opts: &GenerateOptions) -> String {
    let blob = format!(
        "{}|{}|{}|{}|{}",
        scene.to_json(),
        seed,
        spp,
        opts.max_bounces,
        opts.output_channels
    );
    format!("{:016x}", rng::fnv1a64(blob.as_bytes()))
}

enum SampleTask {
    /// Continuous-position training sample.
    Training,
    /// Grid-protocol sample: cell plus exact jittered placement.
    Grid {
        row: usize,
        col: usize,
        class: ObjectClass,
    },
}

fn render_one_sample(
    scene_cfg: &SceneConfig,
    base_seed: u64,
    id: u64,
    spp: usize,
    opts: &GenerateOptions,
    task: &SampleTask,
    grid: &GridSpec,
    root: &Path,
) -> Result<SampleRecord, DatastoreError> {
    let sample_seed = rng::derive_seed(base_seed, id);
    let scene = scene_cfg.sample(sample_seed)?;

    let object = match task {
        SampleTask::Training => sample_training_object(&scene, sample_seed),
        SampleTask::Grid { row, col, class } => {
            let (cx, cy) = grid.position(*row, *col)?;
            let mut rng = rng::stream(sample_seed, Domain::ObjectPlacement, 1);
            let j = scene.objects.position_jitter;
            let (dx, dy) = if j > 0.0 {
                (rng.gen_range(-j..j), rng.gen_range(-j..j))
            } else {
                (0.0, 0.0)
            };
            let yj = scene.objects.yaw_jitter;
            let yaw = if yj > 0.0 { rng.gen_range(-yj..yj) } else { 0.0 };
            let mut obj =
                TargetObject::with_defaults(*class, cx + dx, cy + dy, &scene.objects);
            obj.yaw = yaw;
            obj
        }
    };
    object
        .validate_in(&scene)
        .map_err(|e| DatastoreError::SampleInvalid {
            id,
            reason: e.to_string(),
        })?;

    let pair_opts = PairOptions {
        samples_per_pixel: spp,
        max_bounces: opts.max_bounces,
        output_channels: opts.output_channels,
    };
    let (input, output) = render_pair_opts(&scene, Some(&object), sample_seed, &pair_opts)?;
    let mut bg_job = RenderJob::new(
        scene.clone(),
        View::TopDownDirect,
        spp,
        rng::derive_seed(sample_seed, 3),
    );
    bg_job.max_bounces = opts.max_bounces;
    let background = render(&bg_job)?;

    let rel_in = format!("images/{id:06}_in.pgm");
    let rel_out = format!("images/{id:06}_out.pgm");
    let rel_bg = format!("images/{id:06}_bg.pgm");
    input.write_pgm16(&root.join(&rel_in))?;
    output.write_pgm16(&root.join(&rel_out))?;
    background.write_pgm16(&root.join(&rel_bg))?;

    let mut checksums = BTreeMap::new();
    for (name, rel) in [("input", &rel_in), ("output", &rel_out), ("background", &rel_bg)] {
        let bytes = std::fs::read(root.join(rel))?;
        checksums.insert(name.to_string(), format!("{:016x}", rng::fnv1a64(&bytes)));
    }

    let grid_cell = match task {
        SampleTask::Training => None,
        SampleTask::Grid { row, col, .. } => Some((*row, *col)),
    };
    Ok(SampleRecord {
        id,
        seed: sample_seed,
        params: Some(scene),
        label: Some(SampleLabel {
            x: object.x,
            y: object.y,
            class: object.class,
            yaw: object.yaw,
            grid: grid_cell,
        }),
        files: SampleFiles {
            input: rel_in,
            output: rel_out,
            background: Some(rel_bg),
            checksums,
        },
    })
}

fn generate_impl(
    scene: &SceneConfig,
    tasks: Vec<SampleTask>,
    seed: u64,
    spp: usize,
    out_dir: &Path,
    opts: &GenerateOptions,
    grid: &GridSpec,
) -> Result<DatasetManifest, DatastoreError> {
    std::fs::create_dir_all(out_dir.join("images"))?;
    let config_hash = generation_hash(scene, seed, spp, opts);

    // Resume: reuse records whose files still verify.
    let mut existing: BTreeMap<u64, SampleRecord> = BTreeMap::new();
    if out_dir.join(MANIFEST_NAME).exists() {
        if let Ok(prev) = DatasetManifest::load(out_dir) {
            if prev.config_hash == config_hash {
                let single = DatasetManifest {
                    samples: Vec::new(),
                    ..prev.clone()
                };
                for rec in prev.samples {
                    let probe = DatasetManifest {
                        samples: vec![rec.clone()],
                        sample_count: 1,
                        ..single.clone()
                    };
                    if probe.validate_files(out_dir).is_ok() {
                        existing.insert(rec.id, rec);
                    }
                }
            }
        }
    }

    let n = tasks.len();
    let out_res = 64;
    let mut manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        input_dims: (1, 64, 64),
        output_dims: (opts.output_channels, out_res, out_res),
        sample_count: 0,
        config_hash: config_hash.clone(),
        splits: None,
        samples: Vec::with_capacity(n),
    };

    let chunk = opts.checkpoint_every.max(1);
    let mut records: Vec<SampleRecord> = Vec::with_capacity(n);
    let indexed: Vec<(u64, &SampleTask)> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64, t))
        .collect();
    for chunk_tasks in indexed.chunks(chunk) {
        let mut batch: Vec<SampleRecord> = chunk_tasks
            .par_iter()
            .map(|(id, task)| match existing.get(id) {
                Some(rec) => Ok(rec.clone()),
                None => render_one_sample(scene, seed, *id, spp, opts, task, grid, out_dir),
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.append(&mut batch);
        manifest.samples = records.clone();
        manifest.sample_count = manifest.samples.len();
        manifest.save(out_dir)?;
    }
    if n == 0 {
        manifest.save(out_dir)?;
    }

    Ok(manifest)
}

/// Generate `n` training samples: domain-randomized scenes with one
/// object drawn per sample, rendered as (input, output, background)
/// triples. Deterministic in `(scene, n, seed, spp)`; resumable.
pub fn generate_dataset(
    scene: &SceneConfig,
    n: usize,
    seed: u64,
    spp: usize,
    out_dir: &Path,
) -> Result<DatasetManifest, DatastoreError> {
    generate_dataset_opts(scene, n, seed, spp, out_dir, &GenerateOptions::default())
}

pub fn generate_dataset_opts(
    scene: &SceneConfig,
    n: usize,
    seed: u64,
    spp: usize,
    out_dir: &Path,
    opts: &GenerateOptions,
) -> Result<DatasetManifest, DatastoreError> {
    let tasks = (0..n).map(|_| SampleTask::Training).collect();
    generate_impl(scene, tasks, seed, spp, out_dir, opts, &GridSpec::default())
}

/// Generate the grid-protocol test set: every (cell, class) combination
/// rendered `reps` times with perturbed placement, matching the capture
/// protocol of the physical experiment.
pub fn generate_grid_testset(
    scene: &SceneConfig,
    grid: &GridSpec,
    reps: usize,
    seed: u64,
    spp: usize,
    out_dir: &Path,
) -> Result<DatasetManifest, DatastoreError> {
    generate_grid_testset_opts(scene, grid, reps, seed, spp, out_dir, &GenerateOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn generate_grid_testset_opts(
    scene: &SceneConfig,
    grid: &GridSpec,
    reps: usize,
    seed: u64,
    spp: usize,
    out_dir: &Path,
    opts: &GenerateOptions,
) -> Result<DatasetManifest, DatastoreError> {
    let mut tasks = Vec::new();
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            for class in ObjectClass::ALL {
                for _ in 0..reps {
                    tasks.push(SampleTask::Grid { row, col, class });
                }
            }
        }
    }
    generate_impl(scene, tasks, seed, spp, out_dir, opts, grid)
}

/// Deterministic shuffled split assignment, keyed by id hash so the
/// result is stable under record reordering.
pub fn split(
    manifest: &DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest, DatastoreError> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(DatastoreError::BadFractions(fractions));
    }
    let mut keyed: Vec<(u64, u64)> = manifest
        .samples
        .iter()
        .map(|r| (rng::mix64(seed ^ rng::mix64(r.id)), r.id))
        .collect();
    keyed.sort_unstable();
    let n = keyed.len();
    let n_train = (n as f64 * fractions[0]).round() as usize;
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train.min(n));
    let ids: Vec<u64> = keyed.into_iter().map(|(_k, id)| id).collect();
    let splits = Splits {
        train: ids[..n_train.min(n)].to_vec(),
        val: ids[n_train.min(n)..(n_train + n_val).min(n)].to_vec(),
        test: ids[(n_train + n_val).min(n)..].to_vec(),
    };
    Ok(DatasetManifest {
        splits: Some(splits),
        ..manifest.clone()
    })
}

/// Import a directory of `{stem}_in.pgm` / `{stem}_out.pgm` pairs as an
/// unlabeled dataset (sufficient for generative training only).
pub fn import_pairs(dir: &Path) -> Result<DatasetManifest, DatastoreError> {
    let mut ins: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut outs: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix("_in.pgm") {
            ins.insert(stem.to_string(), path.clone());
        } else if let Some(stem) = name.strip_suffix("_out.pgm") {
            outs.insert(stem.to_string(), path.clone());
        }
    }
    if ins.is_empty() {
        return Err(DatastoreError::Import("no *_in.pgm files found".into()));
    }
    if ins.len() != outs.len() {
        return Err(DatastoreError::Import(format!(
            "{} inputs but {} outputs",
            ins.len(),
            outs.len()
        )));
    }

    let mut input_dims = None;
    let mut output_dims = None;
    let mut samples = Vec::new();
    for (id, (stem, in_path)) in ins.iter().enumerate() {
        let out_path = outs
            .get(stem)
            .ok_or_else(|| DatastoreError::Import(format!("missing output for {stem}")))?;
        // Channel count: monochrome unless the height is three times the
        // width (stacked planes).
        let probe = |path: &Path| -> Result<((usize, usize, usize), ImageGrid), DatastoreError> {
            let mono = ImageGrid::read_pgm16(path, 1)?;
            if mono.height() == 3 * mono.width() {
                let rgb = ImageGrid::read_pgm16(path, 3)?;
                Ok(((3, rgb.height(), rgb.width()), rgb))
            } else {
                Ok(((1, mono.height(), mono.width()), mono))
            }
        };
        let (din, _) = probe(in_path)?;
        let (dout, _) = probe(out_path)?;
        match input_dims {
            None => {
                input_dims = Some(din);
                output_dims = Some(dout);
            }
            Some(d) if d == din && output_dims == Some(dout) => {}
            _ => {
                return Err(DatastoreError::Import(format!(
                    "inconsistent dimensions at {stem}"
                )))
            }
        }
        let rel = |p: &Path| {
            p.strip_prefix(dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut checksums = BTreeMap::new();
        checksums.insert(
            "input".to_string(),
            format!("{:016x}", rng::fnv1a64(&std::fs::read(in_path)?)),
        );
        checksums.insert(
            "output".to_string(),
            format!("{:016x}", rng::fnv1a64(&std::fs::read(out_path)?)),
        );
        samples.push(SampleRecord {
            id: id as u64,
            seed: 0,
            params: None,
            label: None,
            files: SampleFiles {
                input: rel(in_path),
                output: rel(out_path),
                background: None,
                checksums,
            },
        });
    }

    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        input_dims: input_dims.unwrap(),
        output_dims: output_dims.unwrap(),
        sample_count: samples.len(),
        config_hash: "imported".to_string(),
        splits: None,
        samples,
    })
}

/// Loaded images of one record.
pub struct LoadedSample {
    pub record: SampleRecord,
    pub input: ImageGrid,
    pub output: ImageGrid,
    pub background: Option<ImageGrid>,
}

pub fn load_sample(
    manifest: &DatasetManifest,
    root: &Path,
    id: u64,
) -> Result<LoadedSample, DatastoreError> {
    let record = manifest
        .record(id)
        .ok_or_else(|| DatastoreError::Manifest(format!("no record {id}")))?
        .clone();
    let input = ImageGrid::read_pgm16(&root.join(&record.files.input), manifest.input_dims.0)?;
    let output = ImageGrid::read_pgm16(&root.join(&record.files.output), manifest.output_dims.0)?;
    let background = match &record.files.background {
        Some(rel) => Some(ImageGrid::read_pgm16(&root.join(rel), manifest.input_dims.0)?),
        None => None,
    };
    Ok(LoadedSample {
        record,
        input,
        output,
        background,
    })
}

/// Preprocess one sample's measurement with its own ground-truth
/// background: rectified top-down input minus background, scaled to
/// `[-1, 1]`. No augmentation of any kind is applied.
pub fn preprocessed_input(sample: &LoadedSample) -> Result<ImageGrid, DatastoreError> {
    let bg = sample.background.as_ref().ok_or_else(|| {
        DatastoreError::Manifest(format!("sample {} has no background", sample.record.id))
    })?;
    let diff = subtract_background(&sample.input, &BackgroundModel::GroundTruth(bg.clone()))
        .map_err(|e| DatastoreError::Manifest(e.to_string()))?;
    Ok(scale_unit(&diff))
}

/// Which labels to attach when building a [`TrainSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Location,
    Class,
    Target,
}

/// Assemble an in-memory training set from a manifest split.
pub fn load_training_set(
    manifest: &DatasetManifest,
    root: &Path,
    task: TaskKind,
    split: Option<SplitKind>,
) -> Result<TrainSet, DatastoreError> {
    let ids = match split {
        Some(kind) => manifest.split_ids(kind),
        None => manifest.samples.iter().map(|r| r.id).collect(),
    };
    let mut inputs = Vec::with_capacity(ids.len());
    let mut locations = Vec::new();
    let mut classes = Vec::new();
    let mut targets = Vec::new();
    for id in ids {
        let sample = load_sample(manifest, root, id)?;
        match task {
            TaskKind::Location | TaskKind::Class => {
                let label = sample.record.label.clone().ok_or_else(|| {
                    DatastoreError::Manifest(format!("sample {id} is unlabeled"))
                })?;
                inputs.push(crate::models::tensor_from_image(&preprocessed_input(&sample)?));
                match task {
                    TaskKind::Location => locations.push([label.x as f32, label.y as f32]),
                    TaskKind::Class => classes.push(label.class.index()),
                    TaskKind::Target => unreachable!(),
                }
            }
            TaskKind::Target => {
                let input = match sample.background {
                    Some(_) => preprocessed_input(&sample)?,
                    // Imported pairs carry no background; they are already
                    // measurement-space images, so only scale them.
                    None => scale_unit(&sample.input),
                };
                inputs.push(crate::models::tensor_from_image(&input));
                targets.push(crate::models::tensor_from_image(&scale_unit(&sample.output)));
            }
        }
    }
    let labels = match task {
        TaskKind::Location => TaskLabels::Location(locations),
        TaskKind::Class => TaskLabels::Class(classes),
        TaskKind::Target => TaskLabels::Target(targets),
    };
    Ok(TrainSet { inputs, labels })
}
