//! Learning-sanity oracles for the model stack: overfitting a small
//! rendered set, separating trivially separable classes, inference-mode
//! invariants, and a toy generative task.

use nlos_core::image::{ImageGrid, Range};
use nlos_core::models::{
    predict_class, predict_location, reconstruct, tensor_from_image, train, Preset, ReconMode,
    TaskLabels, TrainConfig, TrainSet, TrainedModel,
};
use nlos_core::nn::{Mode, Shape, Tensor};
use nlos_core::render::{render, RenderJob, View};
use nlos_core::rng::{derive_seed, stream, Domain};
use nlos_core::scene::SceneConfig;

/// Render a batch of preprocessed localization samples.
fn rendered_location_set(n: usize, spp: usize, seed: u64) -> TrainSet {
    let cfg = SceneConfig::default();
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let sample_seed = derive_seed(seed, i as u64);
        let scene = cfg.sample(sample_seed).unwrap();
        let obj = nlos_core::datastore::sample_training_object(&scene, sample_seed);
        let mut job = RenderJob::new(scene.clone(), View::TopDownDirect, spp, sample_seed);
        job.object = Some(obj);
        let with_obj = render(&job).unwrap();
        let bg_job = RenderJob::new(scene, View::TopDownDirect, spp, derive_seed(sample_seed, 3));
        let bg = render(&bg_job).unwrap();
        let diff = nlos_core::preprocess::subtract_background(
            &with_obj,
            &nlos_core::preprocess::BackgroundModel::GroundTruth(bg),
        )
        .unwrap();
        inputs.push(tensor_from_image(&nlos_core::preprocess::scale_unit(&diff)));
        labels.push([obj.x as f32, obj.y as f32]);
    }
    TrainSet {
        inputs,
        labels: TaskLabels::Location(labels),
    }
}

fn mean_train_error(model: &mut TrainedModel, set: &TrainSet) -> f64 {
    let TaskLabels::Location(labels) = &set.labels else {
        unreachable!()
    };
    let mut total = 0.0;
    for (input, label) in set.inputs.iter().zip(labels) {
        let img = ImageGrid::new(64, 64, 1, Range::Unit, input.data().to_vec()).unwrap();
        let (x, y) = predict_location(model, &img).unwrap();
        total += ((x - label[0] as f64).powi(2) + (y - label[1] as f64).powi(2)).sqrt();
    }
    total / set.inputs.len() as f64
}

#[test]
fn localization_net_overfits_25_rendered_samples() {
    let set = rendered_location_set(25, 64, 77);
    let mut cfg = TrainConfig::for_preset(Preset::Localization);
    cfg.batch_size = 25;
    cfg.learning_rate = 2e-3;

    // Up to 200 epochs, stopping as soon as the training error is under
    // a centimeter.
    let mut reached = None;
    let mut model = None;
    for round in 1..=10 {
        cfg.epochs = 20;
        cfg.seed = 3;
        let chunk_cfg = TrainConfig {
            epochs: round * 20,
            ..cfg.clone()
        };
        let (mut m, _curve) = train(Preset::Localization, &set, &chunk_cfg).unwrap();
        let err = mean_train_error(&mut m, &set);
        model = Some(m);
        if err < 0.01 {
            reached = Some((round * 20, err));
            break;
        }
    }
    let final_err = mean_train_error(model.as_mut().unwrap(), &set);
    assert!(
        reached.is_some(),
        "did not overfit within 200 epochs (final mean error {final_err:.4} m)"
    );
    let (epochs, err) = reached.unwrap();
    eprintln!("overfit to {err:.4} m within {epochs} epochs");
}

/// Three trivially separable classes: a bright block in a class-specific
/// corner of an otherwise dim image.
fn separable_class_set(per_class: usize, seed: u64) -> TrainSet {
    use rand::Rng;
    let mut rng = stream(seed, Domain::Test, 70);
    let mut inputs = Vec::new();
    let mut classes = Vec::new();
    for class in 0..3usize {
        for _ in 0..per_class {
            let mut data = vec![0.0f32; 64 * 64];
            for v in data.iter_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
            let (y0, x0) = [(4usize, 4usize), (4, 36), (36, 4)][class];
            for y in y0..y0 + 24 {
                for x in x0..x0 + 24 {
                    data[y * 64 + x] = rng.gen_range(0.7..1.0);
                }
            }
            inputs.push(Tensor::from_vec(Shape::new(1, 1, 64, 64), data).unwrap());
            classes.push(class);
        }
    }
    TrainSet {
        inputs,
        labels: TaskLabels::Class(classes),
    }
}

#[test]
fn identification_net_separates_disjoint_quadrants() {
    let set = separable_class_set(10, 5);
    let mut cfg = TrainConfig::for_preset(Preset::Identification);
    cfg.epochs = 30;
    cfg.batch_size = 10;
    let (mut model, _curve) = train(Preset::Identification, &set, &cfg).unwrap();

    let TaskLabels::Class(classes) = &set.labels else {
        unreachable!()
    };
    let mut correct = 0;
    for (input, &class) in set.inputs.iter().zip(classes) {
        let img = ImageGrid::new(64, 64, 1, Range::Unit, input.data().to_vec()).unwrap();
        let probs = predict_class(&mut model, &img).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "probabilities sum to {sum}");
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .unwrap()
            .0;
        correct += usize::from(pred == class);
    }
    assert_eq!(correct, set.inputs.len(), "expected 100% training accuracy");
}

#[test]
fn predict_class_is_dropout_invariant_at_inference() {
    let set = separable_class_set(4, 9);
    let mut cfg = TrainConfig::for_preset(Preset::Identification);
    cfg.epochs = 2;
    let (mut model, _) = train(Preset::Identification, &set, &cfg).unwrap();

    let img = ImageGrid::new(
        64,
        64,
        1,
        Range::Unit,
        set.inputs[0].data().to_vec(),
    )
    .unwrap();
    let a = predict_class(&mut model, &img).unwrap();
    let b = predict_class(&mut model, &img).unwrap();
    assert_eq!(a, b, "inference must not depend on dropout draws");

    // In training mode the dropout masks do perturb the logits, which is
    // exactly what inference mode switches off.
    let x = tensor_from_image(&img);
    let mut rng1 = stream(1, Domain::Test, 71);
    let mut rng2 = stream(2, Domain::Test, 72);
    let t1 = model.network.forward(&x, Mode::Train, Some(&mut rng1)).unwrap();
    let t2 = model.network.forward(&x, Mode::Train, Some(&mut rng2)).unwrap();
    assert_ne!(t1.data(), t2.data());
}

#[test]
fn generative_net_beats_the_mean_image_baseline_on_a_toy_task() {
    use rand::Rng;
    let mut rng = stream(11, Domain::Test, 73);
    // Deterministic input -> target structure: a bright half in the input
    // maps to a bright half in the target, two variants.
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let n_per = 20;
    for variant in 0..2usize {
        for _ in 0..n_per {
            let mut input = vec![-0.5f32; 64 * 64];
            let mut target = vec![-0.8f32; 64 * 64];
            for y in 0..64 {
                for x in 0..64 {
                    let lit_in = if variant == 0 { x < 32 } else { x >= 32 };
                    if lit_in {
                        input[y * 64 + x] = rng.gen_range(0.4..0.8);
                    }
                    let lit_out = if variant == 0 { y < 32 } else { y >= 32 };
                    if lit_out {
                        target[y * 64 + x] = 0.8;
                    }
                }
            }
            inputs.push(Tensor::from_vec(Shape::new(1, 1, 64, 64), input).unwrap());
            targets.push(Tensor::from_vec(Shape::new(1, 1, 64, 64), target).unwrap());
        }
    }
    let set = TrainSet {
        inputs,
        labels: TaskLabels::Target(targets.clone()),
    };
    let mut cfg = TrainConfig::for_preset(Preset::Generative);
    cfg.epochs = 40;
    cfg.batch_size = 8;
    let (mut model, curve) = train(Preset::Generative, &set, &cfg).unwrap();
    assert!(
        curve.last().unwrap() < curve.first().unwrap(),
        "loss did not improve: {curve:?}"
    );

    // Mean-image baseline.
    let mut mean_img = vec![0.0f32; 64 * 64];
    for t in &targets {
        for (m, &v) in mean_img.iter_mut().zip(t.data()) {
            *m += v / targets.len() as f32;
        }
    }

    let mut recon_mse = 0.0f64;
    let mut baseline_mse = 0.0f64;
    for (input, target) in set.inputs.iter().zip(&targets) {
        let img = ImageGrid::new(64, 64, 1, Range::Unit, input.data().to_vec()).unwrap();
        let recon = reconstruct(&mut model, &img, ReconMode::MeanLatent).unwrap();
        for ((&r, &t), &m) in recon.data().iter().zip(target.data()).zip(&mean_img) {
            recon_mse += ((r - t) as f64).powi(2);
            baseline_mse += ((m - t) as f64).powi(2);
        }
    }
    assert!(
        recon_mse < baseline_mse,
        "reconstruction MSE {recon_mse:.1} not below mean baseline {baseline_mse:.1}"
    );

    // MeanLatent reconstructions are deterministic; the two variants
    // decode to visibly different images.
    let img0 = ImageGrid::new(64, 64, 1, Range::Unit, set.inputs[0].data().to_vec()).unwrap();
    let img1 = ImageGrid::new(
        64,
        64,
        1,
        Range::Unit,
        set.inputs[n_per].data().to_vec(),
    )
    .unwrap();
    let r0a = reconstruct(&mut model, &img0, ReconMode::MeanLatent).unwrap();
    let r0b = reconstruct(&mut model, &img0, ReconMode::MeanLatent).unwrap();
    assert_eq!(r0a, r0b);
    let r1 = reconstruct(&mut model, &img1, ReconMode::MeanLatent).unwrap();
    let mad: f64 = r0a
        .data()
        .iter()
        .zip(r1.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / r0a.data().len() as f64;
    assert!(mad > 0.05, "variant reconstructions differ by only {mad:.4}");
}
