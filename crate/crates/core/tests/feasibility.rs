//! Scaled-down end-to-end probe: a few hundred rendered samples through
//! training and grid evaluation. Ignored by default; used to gauge
//! learnability before the full-size acceptance runs.

use nlos_core::datastore::{
    generate_dataset_opts, generate_grid_testset_opts, load_training_set, GenerateOptions,
    TaskKind,
};
use nlos_core::evalkit::{load_eval_samples, run_grid_eval};
use nlos_core::models::{train, Preset, TrainConfig};
use nlos_core::preprocess::BackgroundMode;
use nlos_core::scene::{GridSpec, SceneConfig};

#[test]
#[ignore]
fn small_scale_learnability_probe() {
    let scene = SceneConfig::default();
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("probe");
    let train_dir = dir.join("train");
    let test_dir = dir.join("test");
    std::fs::create_dir_all(&train_dir).unwrap();
    std::fs::create_dir_all(&test_dir).unwrap();

    let opts = GenerateOptions::default();
    let t0 = std::time::Instant::now();
    let train_manifest =
        generate_dataset_opts(&scene, 400, 1, 96, &train_dir, &opts).unwrap();
    let grid = GridSpec::default();
    let test_manifest =
        generate_grid_testset_opts(&scene, &grid, 1, 2, 96, &test_dir, &opts).unwrap();
    eprintln!(
        "generated {} train + {} test in {:.1?}",
        train_manifest.sample_count,
        test_manifest.sample_count,
        t0.elapsed()
    );

    let t1 = std::time::Instant::now();
    let loc_set = load_training_set(&train_manifest, &train_dir, TaskKind::Location, None).unwrap();
    let id_set = load_training_set(&train_manifest, &train_dir, TaskKind::Class, None).unwrap();
    let mut loc_cfg = TrainConfig::for_preset(Preset::Localization);
    loc_cfg.epochs = 7;
    let (mut loc_model, loc_curve) = train(Preset::Localization, &loc_set, &loc_cfg).unwrap();
    let mut id_cfg = TrainConfig::for_preset(Preset::Identification);
    id_cfg.epochs = 20;
    let (mut id_model, id_curve) = train(Preset::Identification, &id_set, &id_cfg).unwrap();
    eprintln!("trained in {:.1?}", t1.elapsed());
    eprintln!("loc loss curve: {loc_curve:.3?}");
    eprintln!("id loss curve: {id_curve:.3?}");

    let samples = load_eval_samples(&test_manifest, &test_dir, BackgroundMode::GroundTruth).unwrap();
    let report = run_grid_eval(&mut loc_model, &mut id_model, &samples).unwrap();
    eprintln!("{}", report.to_text());
    eprintln!(
        "PROBE RESULT: mean err {:.4} m (near {:.4}, far {:.4}), acc {:.3}",
        report.mean_error, report.near_error, report.far_error, report.accuracy
    );
}
