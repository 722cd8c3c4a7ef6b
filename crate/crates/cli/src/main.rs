//! One binary wiring the library into the full pipeline: render scenes,
//! generate datasets, train the three models, run the grid evaluation,
//! track objects through frame sequences, and produce the sensitivity
//! and ablation analyses with SVG figures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nlos_core::datastore::{
    self, generate_dataset_opts, generate_grid_testset_opts, load_training_set, DatasetManifest,
    GenerateOptions, SplitKind, TaskKind,
};
use nlos_core::evalkit::{
    self, area_ablation, load_eval_samples, occlusion_sensitivity, plots, run_grid_eval_detailed,
    Region, SensitivityTask,
};
use nlos_core::image::{ImageGrid, Range};
use nlos_core::models::{
    self, load_model, save_model, Preset, ReconMode, TrainConfig, TrainedModel,
};
use nlos_core::nn::optim::OptimizerKind;
use nlos_core::preprocess::{estimate_homography, scale_unit, subtract_background, BackgroundMode, BackgroundModel};
use nlos_core::render::world::Camera;
use nlos_core::render::{render, RenderJob, View};
use nlos_core::scene::{GridSpec, ObjectClass, SceneConfig, TargetObject};

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  2  command-line usage error
  3  missing file or I/O failure
  4  invalid configuration
  5  data, model, or validation error
";

#[derive(Parser)]
#[command(
    name = "nlos",
    version,
    about = "Around-the-corner imaging pipeline: rendering, training, evaluation",
    after_help = EXIT_HELP
)]
struct Cli {
    /// Scene configuration JSON (defaults are built in).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; all randomness derives from it.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Worker threads (falls back to NLOS_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Perspective,
    Topdown,
    Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Loc,
    Id,
    Gen,
}

#[derive(Clone, Copy, ValueEnum)]
enum BgModeArg {
    Gt,
    Mean,
    Min,
}

impl From<BgModeArg> for BackgroundMode {
    fn from(v: BgModeArg) -> Self {
        match v {
            BgModeArg::Gt => BackgroundMode::GroundTruth,
            BgModeArg::Mean => BackgroundMode::PixelMean,
            BgModeArg::Min => BackgroundMode::PixelMin,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionArg {
    Area1,
    Area2,
    Both,
}

impl From<RegionArg> for Region {
    fn from(v: RegionArg) -> Self {
        match v {
            RegionArg::Area1 => Region::Area1,
            RegionArg::Area2 => Region::Area2,
            RegionArg::Both => Region::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    RectBox,
    Cube,
    Pyramid,
}

impl From<ClassArg> for ObjectClass {
    fn from(v: ClassArg) -> Self {
        match v {
            ClassArg::RectBox => ObjectClass::RectBox,
            ClassArg::Cube => ObjectClass::Cube,
            ClassArg::Pyramid => ObjectClass::Pyramid,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render one scene sample to PGM images.
    Render {
        #[arg(long)]
        out: PathBuf,
        /// Views to render; all three when omitted.
        #[arg(long, value_enum)]
        view: Vec<ViewArg>,
        #[arg(long, default_value_t = 256)]
        spp: usize,
        /// Place a hidden object of this class.
        #[arg(long, value_enum)]
        class: Option<ClassArg>,
        /// Object position; defaults to the grid center point.
        #[arg(long)]
        x: Option<f64>,
        #[arg(long)]
        y: Option<f64>,
    },
    /// Generate a rendered dataset (training or grid test protocol).
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Training samples with continuous object placement.
        #[arg(long, default_value_t = 0)]
        n: usize,
        /// Grid-protocol repetitions per (cell, class); replaces --n.
        #[arg(long)]
        grid_reps: Option<usize>,
        #[arg(long, default_value_t = 256)]
        spp: usize,
        /// Assign train/val/test splits, e.g. "0.8,0.1,0.1".
        #[arg(long)]
        split: Option<String>,
    },
    /// Train one of the three models on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate trained models on a grid test set.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        loc_model: PathBuf,
        #[arg(long)]
        id_model: PathBuf,
        #[arg(long, value_enum, default_value = "gt")]
        bg_mode: BgModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize an object frame by frame through a directory of frames.
    Track {
        /// Directory of perspective-view PGM frames, ordered by filename.
        #[arg(long)]
        frames: PathBuf,
        /// Object-free background frame (same view).
        #[arg(long)]
        bg: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occlusion-sensitivity heatmap of a trained model.
    Sensitivity {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value_t = 20)]
        block: usize,
        #[arg(long, default_value_t = 8)]
        stride: usize,
        /// Number of samples drawn from the dataset.
        #[arg(long, default_value_t = 800)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Area-1 / area-2 ablation: retrain with a region masked and evaluate.
    Ablate {
        #[arg(long)]
        train_dataset: PathBuf,
        #[arg(long)]
        test_dataset: PathBuf,
        #[arg(long, value_enum)]
        region: RegionArg,
        #[arg(long)]
        loc_epochs: Option<usize>,
        #[arg(long)]
        id_epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the occluded view from a measurement.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        /// Measurement: a linear PGM (requires --background) or an
        /// already-preprocessed .f32 unit image.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        background: Option<PathBuf>,
        /// "mean" for the posterior mean, or a seed number to sample.
        #[arg(long, default_value = "mean")]
        latent: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors mapped to documented exit codes.
enum CliError {
    Io(String),
    Config(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 3,
            CliError::Config(_) => 4,
            CliError::Data(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Config(m) | CliError::Data(m) => m,
        }
    }
}

type CliResult = Result<(), CliError>;

fn io_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{context}: {e}"))
}

fn data_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn load_scene_config(path: &Option<PathBuf>) -> Result<SceneConfig, CliError> {
    match path {
        None => Ok(SceneConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("config {}: {e}", p.display())))?;
            SceneConfig::from_json(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
        }
    }
}

/// Echo the effective configuration into the output directory.
fn echo_config(out: &Path, scene: &SceneConfig, seed: u64) -> CliResult {
    std::fs::create_dir_all(out).map_err(io_err("create output dir"))?;
    let effective = serde_json::json!({
        "seed": seed,
        "scene": serde_json::from_str::<serde_json::Value>(&scene.to_json()).unwrap(),
    });
    std::fs::write(
        out.join("config.json"),
        serde_json::to_vec_pretty(&effective).unwrap(),
    )
    .map_err(io_err("write config echo"))?;
    Ok(())
}

fn preset_for(task: TaskArg, manifest: Option<&DatasetManifest>) -> Preset {
    match task {
        TaskArg::Loc => Preset::Localization,
        TaskArg::Id => Preset::Identification,
        TaskArg::Gen => match manifest {
            Some(m) if m.input_dims == (1, 128, 128) => Preset::GenerativeReal,
            _ => Preset::Generative,
        },
    }
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(dir).map_err(|e| match e {
        datastore::DatastoreError::Io(e) => {
            CliError::Io(format!("dataset {}: {e}", dir.display()))
        }
        other => CliError::Data(format!("dataset {}: {other}", dir.display())),
    })
}

fn load_model_file(path: &Path) -> Result<TrainedModel, CliError> {
    load_model(path).map_err(|e| match e {
        models::ModelError::Io(e) => CliError::Io(format!("model {}: {e}", path.display())),
        other => CliError::Data(format!("model {}: {other}", path.display())),
    })
}

fn cmd_render(
    scene_cfg: &SceneConfig,
    seed: u64,
    out: &Path,
    views: &[ViewArg],
    spp: usize,
    class: Option<ClassArg>,
    x: Option<f64>,
    y: Option<f64>,
) -> CliResult {
    echo_config(out, scene_cfg, seed)?;
    let scene = scene_cfg.sample(seed).map_err(data_err("scene sampling"))?;
    let object = match class {
        None => None,
        Some(c) => {
            let grid = GridSpec::default();
            let (cx, cy) = grid.position(2, 2).unwrap();
            Some(TargetObject::with_defaults(
                c.into(),
                x.unwrap_or(cx),
                y.unwrap_or(cy),
                &scene.objects,
            ))
        }
    };
    let views: Vec<ViewArg> = if views.is_empty() {
        vec![ViewArg::Perspective, ViewArg::Topdown, ViewArg::Output]
    } else {
        views.to_vec()
    };
    for v in views {
        let (view, name) = match v {
            ViewArg::Perspective => (View::Perspective, "perspective"),
            ViewArg::Topdown => (View::TopDownDirect, "topdown"),
            ViewArg::Output => (View::OutputView, "output"),
        };
        let mut job = RenderJob::new(scene.clone(), view, spp, seed);
        job.object = object;
        let img = render(&job).map_err(data_err("render"))?;
        img.write_pgm16(&out.join(format!("{name}.pgm")))
            .map_err(io_err("write image"))?;
        println!("wrote {}", out.join(format!("{name}.pgm")).display());
    }
    Ok(())
}

fn cmd_generate(
    scene: &SceneConfig,
    seed: u64,
    out: &Path,
    n: usize,
    grid_reps: Option<usize>,
    spp: usize,
    split_arg: &Option<String>,
) -> CliResult {
    echo_config(out, scene, seed)?;
    let opts = GenerateOptions::default();
    let mut manifest = match grid_reps {
        Some(reps) => {
            generate_grid_testset_opts(scene, &GridSpec::default(), reps, seed, spp, out, &opts)
                .map_err(data_err("generate grid test set"))?
        }
        None => generate_dataset_opts(scene, n, seed, spp, out, &opts)
            .map_err(data_err("generate dataset"))?,
    };
    if let Some(fractions) = split_arg {
        let parts: Vec<f64> = fractions
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("--split: {e}")))?;
        if parts.len() != 3 {
            return Err(CliError::Config("--split needs three fractions".into()));
        }
        manifest = datastore::split(&manifest, [parts[0], parts[1], parts[2]], seed)
            .map_err(data_err("split"))?;
        manifest.save(out).map_err(data_err("save manifest"))?;
    }
    println!(
        "dataset at {} with {} samples",
        out.display(),
        manifest.sample_count
    );
    Ok(())
}

fn cmd_train(
    scene: &SceneConfig,
    seed: u64,
    dataset: &Path,
    task: TaskArg,
    epochs: Option<usize>,
    batch: usize,
    lr: f64,
    out: &Path,
) -> CliResult {
    echo_config(out, scene, seed)?;
    let manifest = load_manifest(dataset)?;
    let preset = preset_for(task, Some(&manifest));
    let kind = match task {
        TaskArg::Loc => TaskKind::Location,
        TaskArg::Id => TaskKind::Class,
        TaskArg::Gen => TaskKind::Target,
    };
    let split = manifest.splits.as_ref().map(|_| SplitKind::Train);
    let set = load_training_set(&manifest, dataset, kind, split)
        .map_err(data_err("load training set"))?;
    let cfg = TrainConfig {
        epochs: epochs.unwrap_or(preset.default_epochs()),
        batch_size: batch,
        learning_rate: lr,
        seed,
        optimizer: OptimizerKind::Adam,
    };
    let t0 = std::time::Instant::now();
    let (mut model, curve) =
        models::train(preset, &set, &cfg).map_err(data_err("training"))?;
    println!(
        "trained {} on {} samples for {} epochs in {:.1?}; final loss {:.5}",
        preset.name(),
        set.inputs.len(),
        cfg.epochs,
        t0.elapsed(),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    save_model(&mut model, &out.join("model.bin")).map_err(data_err("save model"))?;
    std::fs::write(
        out.join("loss_curve.json"),
        serde_json::to_vec_pretty(&curve).unwrap(),
    )
    .map_err(io_err("write loss curve"))?;
    Ok(())
}

fn cmd_eval(
    scene: &SceneConfig,
    seed: u64,
    dataset: &Path,
    loc_model: &Path,
    id_model: &Path,
    bg_mode: BgModeArg,
    out: &Path,
) -> CliResult {
    echo_config(out, scene, seed)?;
    let manifest = load_manifest(dataset)?;
    manifest
        .validate_files(dataset)
        .map_err(data_err("dataset validation"))?;
    let mut loc = load_model_file(loc_model)?;
    let mut id = load_model_file(id_model)?;
    let samples = load_eval_samples(&manifest, dataset, bg_mode.into())
        .map_err(data_err("load eval samples"))?;
    let (report, items) =
        run_grid_eval_detailed(&mut loc, &mut id, &samples).map_err(data_err("evaluation"))?;
    std::fs::write(out.join("report.json"), report.to_json()).map_err(io_err("write report"))?;
    std::fs::write(out.join("report.txt"), report.to_text()).map_err(io_err("write report"))?;
    std::fs::write(out.join("grid_scatter.svg"), plots::grid_scatter_svg(&items))
        .map_err(io_err("write plot"))?;
    println!("{}", report.to_text());
    Ok(())
}

fn cmd_track(
    scene_cfg: &SceneConfig,
    seed: u64,
    frames_dir: &Path,
    bg_path: &Path,
    model_path: &Path,
    out: &Path,
) -> CliResult {
    echo_config(out, scene_cfg, seed)?;
    let mut model = load_model_file(model_path)?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(frames_dir)
        .map_err(io_err("read frames dir"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Data(format!(
            "no .pgm frames in {}",
            frames_dir.display()
        )));
    }
    let frames: Vec<ImageGrid> = names
        .iter()
        .map(|p| ImageGrid::read_pgm16(p, 1))
        .collect::<Result<_, _>>()
        .map_err(data_err("read frames"))?;
    let bg_frame = ImageGrid::read_pgm16(bg_path, 1).map_err(data_err("read background"))?;

    // Homography from the scene's crop quadrilateral projected into the
    // measurement camera at the frames' resolution.
    let scene = scene_cfg.sample(seed).map_err(data_err("scene sampling"))?;
    let res = frames[0].width();
    let cam = Camera::new(
        scene.camera.position,
        scene.camera.look_at,
        scene.camera.fov_deg,
        res,
    );
    let mut src = [[0.0f64; 2]; 4];
    for (i, q) in scene.crop_quad.iter().enumerate() {
        let p = nlos_core::render::geom::Pt3::new(q[0] as f32, q[1] as f32, 0.0);
        let (px, py) = cam
            .project(p)
            .ok_or_else(|| CliError::Config("crop corner behind camera".into()))?;
        src[i] = [px, py];
    }
    let size = model.network.spec().input_height as f64 - 1.0;
    let dst = [[0.0, 0.0], [size, 0.0], [size, size], [0.0, size]];
    let h = estimate_homography(&src, &dst).map_err(data_err("homography"))?;

    let track = evalkit::track(
        &mut model,
        &frames,
        &BackgroundModel::GroundTruth(bg_frame),
        &h,
    )
    .map_err(data_err("tracking"))?;
    std::fs::write(
        out.join("track.json"),
        serde_json::to_vec_pretty(&track).unwrap(),
    )
    .map_err(io_err("write track"))?;
    std::fs::write(out.join("track.svg"), plots::track_svg(&track, None))
        .map_err(io_err("write plot"))?;
    println!("tracked {} frames", track.points.len());
    Ok(())
}

fn cmd_sensitivity(
    scene: &SceneConfig,
    seed: u64,
    dataset: &Path,
    model_path: &Path,
    task: TaskArg,
    block: usize,
    stride: usize,
    n: usize,
    out: &Path,
) -> CliResult {
    echo_config(out, scene, seed)?;
    let manifest = load_manifest(dataset)?;
    let mut model = load_model_file(model_path)?;
    let mut samples = load_eval_samples(&manifest, dataset, BackgroundMode::GroundTruth)
        .map_err(data_err("load samples"))?;
    samples.truncate(n);
    let sens_task = match task {
        TaskArg::Loc => SensitivityTask::Localization(&mut model),
        TaskArg::Id => SensitivityTask::Identification(&mut model),
        TaskArg::Gen => {
            return Err(CliError::Config(
                "sensitivity supports --task loc or id".into(),
            ))
        }
    };
    let map = occlusion_sensitivity(sens_task, &samples, block, stride)
        .map_err(data_err("sensitivity"))?;
    map.write_pgm16(&out.join("heatmap.pgm"))
        .map_err(io_err("write heatmap"))?;
    std::fs::write(out.join("heatmap.svg"), plots::heatmap_svg(&map))
        .map_err(io_err("write plot"))?;
    println!("heatmap over {} samples at {}", samples.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    scene_cfg: &SceneConfig,
    seed: u64,
    train_dataset: &Path,
    test_dataset: &Path,
    region: RegionArg,
    loc_epochs: Option<usize>,
    id_epochs: Option<usize>,
    out: &Path,
) -> CliResult {
    echo_config(out, scene_cfg, seed)?;
    let train_manifest = load_manifest(train_dataset)?;
    let test_manifest = load_manifest(test_dataset)?;
    let loc_set = load_training_set(&train_manifest, train_dataset, TaskKind::Location, None)
        .map_err(data_err("load training set"))?;
    let id_set = load_training_set(&train_manifest, train_dataset, TaskKind::Class, None)
        .map_err(data_err("load training set"))?;
    let test = load_eval_samples(&test_manifest, test_dataset, BackgroundMode::GroundTruth)
        .map_err(data_err("load test samples"))?;

    let scene = scene_cfg.sample(seed).map_err(data_err("scene sampling"))?;
    let corner_col = scene.corner_column(64);
    let mut loc_cfg = TrainConfig::for_preset(Preset::Localization);
    loc_cfg.seed = seed;
    if let Some(e) = loc_epochs {
        loc_cfg.epochs = e;
    }
    let mut id_cfg = TrainConfig::for_preset(Preset::Identification);
    id_cfg.seed = seed;
    if let Some(e) = id_epochs {
        id_cfg.epochs = e;
    }
    let result = area_ablation(
        &loc_set,
        &id_set,
        &test,
        corner_col,
        region.into(),
        &loc_cfg,
        &id_cfg,
    )
    .map_err(data_err("ablation"))?;
    std::fs::write(
        out.join("ablation.json"),
        serde_json::to_vec_pretty(&result).unwrap(),
    )
    .map_err(io_err("write result"))?;
    println!(
        "region {:?}: localization error {:.4} m, identification accuracy {:.3}",
        result.region, result.loc_error, result.id_accuracy
    );
    Ok(())
}

fn cmd_reconstruct(
    scene: &SceneConfig,
    seed: u64,
    model_path: &Path,
    input: &Path,
    background: &Option<PathBuf>,
    latent: &str,
    out: &Path,
) -> CliResult {
    echo_config(out, scene, seed)?;
    let mut model = load_model_file(model_path)?;
    let channels = model.network.spec().input_channels;
    let prepared = if input.extension().map(|e| e == "f32").unwrap_or(false) {
        ImageGrid::read_f32raw(input, Range::Unit).map_err(data_err("read input"))?
    } else {
        let raw = ImageGrid::read_pgm16(input, channels).map_err(data_err("read input"))?;
        let bg_path = background
            .as_ref()
            .ok_or_else(|| CliError::Config("PGM input needs --background".into()))?;
        let bg = ImageGrid::read_pgm16(bg_path, channels).map_err(data_err("read background"))?;
        let diff = subtract_background(&raw, &BackgroundModel::GroundTruth(bg))
            .map_err(data_err("subtract"))?;
        scale_unit(&diff)
    };
    let mode = match latent {
        "mean" => ReconMode::MeanLatent,
        s => ReconMode::Sample(
            s.parse::<u64>()
                .map_err(|_| CliError::Config(format!("--latent must be 'mean' or a seed, got {s}")))?,
        ),
    };
    let recon = models::reconstruct(&mut model, &prepared, mode).map_err(data_err("reconstruct"))?;
    recon
        .write_f32raw(&out.join("recon.f32"))
        .map_err(io_err("write f32"))?;
    // Preview: shift the unit range into a viewable linear image.
    let preview_data: Vec<f32> = recon.data().iter().map(|v| (v + 1.0) / 2.0).collect();
    let preview = ImageGrid::new(
        recon.width(),
        recon.height(),
        recon.channels(),
        Range::Linear,
        preview_data,
    )
    .map_err(data_err("preview"))?;
    preview
        .write_pgm16(&out.join("recon.pgm"))
        .map_err(io_err("write preview"))?;
    println!("reconstruction at {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let scene = load_scene_config(&cli.config)?;
    match &cli.command {
        Command::Render {
            out,
            view,
            spp,
            class,
            x,
            y,
        } => cmd_render(&scene, cli.seed, out, view, *spp, *class, *x, *y),
        Command::Generate {
            out,
            n,
            grid_reps,
            spp,
            split,
        } => cmd_generate(&scene, cli.seed, out, *n, *grid_reps, *spp, split),
        Command::Train {
            dataset,
            task,
            epochs,
            batch,
            lr,
            out,
        } => cmd_train(&scene, cli.seed, dataset, *task, *epochs, *batch, *lr, out),
        Command::Eval {
            dataset,
            loc_model,
            id_model,
            bg_mode,
            out,
        } => cmd_eval(&scene, cli.seed, dataset, loc_model, id_model, *bg_mode, out),
        Command::Track {
            frames,
            bg,
            model,
            out,
        } => cmd_track(&scene, cli.seed, frames, bg, model, out),
        Command::Sensitivity {
            dataset,
            model,
            task,
            block,
            stride,
            n,
            out,
        } => cmd_sensitivity(
            &scene, cli.seed, dataset, model, *task, *block, *stride, *n, out,
        ),
        Command::Ablate {
            train_dataset,
            test_dataset,
            region,
            loc_epochs,
            id_epochs,
            out,
        } => cmd_ablate(
            &scene,
            cli.seed,
            train_dataset,
            test_dataset,
            *region,
            *loc_epochs,
            *id_epochs,
            out,
        ),
        Command::Reconstruct {
            model,
            input,
            background,
            latent,
            out,
        } => cmd_reconstruct(&scene, cli.seed, model, input, background, latent, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("NLOS_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(w) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
