mod common;

use tpa3d::config::RunConfig;
use tpa3d::model::Tpa3d;
use tpa3d::pipeline::{bench, build_dataset, retrieval_precision};
use tpa3d::surface::TetGrid;
use tpa3d::train::{checkpoint_name, train, BatchSampler, Trainer, FINAL_CHECKPOINT, LOSS_LOG};
use tpa3d_autodiff::{no_grad, Array};

fn snapshot(params: &[&tpa3d_autodiff::Param]) -> Vec<Array> {
    params.iter().map(|p| p.value()).collect()
}

/// One D step then one G step; each must leave the other player's values and
/// grad buffers untouched. With `every_param_moves`, every parameter of the
/// stepping player must also receive a nonzero gradient (Adam moves it).
fn alternate(config: &RunConfig, every_param_moves: bool) {
    let data = build_dataset(config).unwrap();
    let model = Tpa3d::new(config).unwrap();
    let mut trainer = Trainer::new(&model, &data).unwrap();
    let batch = BatchSampler::new(&data, 0).next_batch(1, config.train.batch);

    let (g0, d0) = (snapshot(&model.generator_params()), snapshot(&model.discriminator_params()));
    trainer.discriminator_step(&batch).unwrap();
    assert!(model.generator_params().iter().all(|p| p.grad().is_none()), "a discriminator step leaves generator grads untouched");
    assert_eq!(snapshot(&model.generator_params()), g0);
    let d1 = snapshot(&model.discriminator_params());
    if every_param_moves {
        for ((p, before), after) in model.discriminator_params().iter().zip(&d0).zip(&d1) {
            assert_ne!(before, after, "discriminator parameter {} received no gradient", p.name());
        }
    }

    trainer.generator_step(&batch).unwrap();
    assert!(model.discriminator_params().iter().all(|p| p.grad().is_none() && !p.is_frozen()));
    assert_eq!(snapshot(&model.discriminator_params()), d1);
    let g1 = snapshot(&model.generator_params());
    assert_ne!(g1, g0);
    if every_param_moves {
        for ((p, before), after) in model.generator_params().iter().zip(&g0).zip(&g1) {
            assert_ne!(before, after, "generator parameter {} received no gradient", p.name());
        }
    }
}

#[test]
fn alternating_steps_touch_only_their_own_player() {
    alternate(&common::small_config(), false);
}

#[test]
fn full_config_has_no_dead_parameters() {
    // Every attention flag on; base resolution 2 keeps the recorded graph small.
    let mut config = RunConfig::default();
    config.generator.base_res = 2;
    config.train.batch = 2;
    alternate(&config, true);
}

#[test]
fn short_run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::small_config();
    config.train.steps = 10;
    config.train.checkpoint_every = 5;
    config.train.log_every = 5;
    let data = build_dataset(&config).unwrap();
    let model = Tpa3d::new(&config).unwrap();
    let report = train(&model, &data, dir.path()).unwrap();
    assert!(report.final_terms.all_finite());
    let csv = std::fs::read_to_string(dir.path().join(LOSS_LOG)).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.lines().skip(1).all(|l| l.split(',').all(|v| v.parse::<f64>().unwrap().is_finite())));
    assert!(dir.path().join(checkpoint_name(5)).exists());
    assert!(dir.path().join(FINAL_CHECKPOINT).exists());
    assert!(!dir.path().join(checkpoint_name(10)).exists());

    let resumed = Tpa3d::load(&config, Some(&dir.path().join(FINAL_CHECKPOINT))).unwrap();
    assert_eq!(resumed.generator.constant.value(), model.generator.constant.value());
}

#[test]
fn random_embeddings_retrieve_at_chance() {
    let mut r = common::rng(17);
    let sentences: Vec<Vec<f64>> = (0..16).map(|_| Array::randn([8], 1.0, &mut r).into_data()).collect();
    let embeddings: Vec<Vec<f64>> = (0..3200).map(|_| Array::randn([8], 1.0, &mut r).into_data()).collect();
    let truths: Vec<usize> = (0..3200).map(|i| i % 16).collect();
    for k in [1, 5] {
        let p = retrieval_precision(&embeddings, &truths, &sentences, k);
        let chance = k as f64 / 16.0;
        assert!((p - chance).abs() < 0.04, "top-{k}: {p} vs chance {chance}");
    }
    assert_eq!(retrieval_precision(&sentences, &(0..16).collect::<Vec<_>>(), &sentences, 1), 1.0);
}

#[test]
fn bench_times_both_paths_and_grows_with_grid() {
    let model = Tpa3d::new(&common::small_config()).unwrap();
    let report = bench(&model, 2).unwrap();
    assert!(report.render_path.mean_seconds > 0.0 && report.mesh_path.mean_seconds > 0.0);
    assert_eq!(report.mesh_path.samples, 2);

    let _guard = no_grad();
    let g = model.generate("a red sphere", 0).unwrap().output;
    let time = |res: usize| {
        let grid = TetGrid::new(res).unwrap();
        let t = std::time::Instant::now();
        model.mesh_on(&grid, &g.geo, &g.tex).unwrap();
        t.elapsed().as_secs_f64()
    };
    let (small, large) = (time(8), time(40));
    assert!(large > small, "{large} vs {small}");
}

#[test]
fn config_file_round_trip_drives_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let config = common::small_config();
    config.save(&path).unwrap();
    let loaded = RunConfig::load(&path).unwrap();
    assert_eq!(loaded, config);
    let (a, b) = (Tpa3d::new(&config).unwrap(), Tpa3d::new(&loaded).unwrap());
    assert_eq!(a.generate("a blue box", 1).unwrap().output.geo.values(), b.generate("a blue box", 1).unwrap().output.geo.values());
}
