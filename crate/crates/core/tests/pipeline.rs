use neuroclip::dsp::FilterSpec;
use neuroclip::harness::{
    build_task, crossval, embed, predict, preprocess_dataset, train_alignment, train_task, CrossvalConfig, FoldPlan,
    ModelKind, PreprocessConfig, TaskOptions, TrainConfig,
};
use neuroclip::model::{ModelConfig, ModelParams};
use neuroclip::signalio::{generate_synthetic_dataset, read_dataset, write_dataset, SynthConfig};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        stem_width: 4,
        block_widths: vec![4, 8],
        ..ModelConfig::default()
    }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs_align: 1,
        epochs_task: 2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn staged_training_survives_disk_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic_dataset(&SynthConfig {
        n_subjects_per_group: 2,
        epochs_per_subject: 6,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    write_dataset(&ds, dir.path().join("raw")).unwrap();
    let loaded = read_dataset(dir.path().join("raw")).unwrap();
    let clean = preprocess_dataset(
        &loaded,
        &PreprocessConfig {
            eeg_filter: Some(FilterSpec::bandpass(4.0, 18.0)),
            ..PreprocessConfig::default()
        },
    )
    .unwrap();

    let aligned = train_alignment(&clean, &tiny_model(), &quick(1)).unwrap();
    let tuned = train_task(&clean, &aligned.params, &quick(1), &TaskOptions::default()).unwrap();
    tuned.params.save(&dir.path().join("model")).unwrap();
    let restored = ModelParams::load(&dir.path().join("model")).unwrap();
    assert_eq!(restored, tuned.params);

    let set = build_task(&clean, "hc-vs-mbt".parse().unwrap(), &TaskOptions::default()).unwrap();
    let all: Vec<usize> = (0..set.samples.len()).collect();
    assert_eq!(
        predict(&restored, "hc-vs-mbt", &set, &all).unwrap(),
        predict(&tuned.params, "hc-vs-mbt", &set, &all).unwrap()
    );
    let e = &clean.epochs[0];
    let z = embed(&restored, &e.eeg, &e.fnirs).unwrap();
    assert_eq!(z.len(), tiny_model().d_model);
    assert!(z.iter().all(|v| v.is_finite()));
}

#[test]
fn fused_loso_reports_one_fold_per_subject() {
    let ds = generate_synthetic_dataset(&SynthConfig {
        n_subjects_per_group: 3,
        epochs_per_subject: 4,
        include_mat: false,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let set = build_task(&ds, "hc-vs-mbt".parse().unwrap(), &TaskOptions::default()).unwrap();
    let plan = FoldPlan::loso(&set).unwrap();
    let cfg = CrossvalConfig {
        train: quick(5),
        model: tiny_model(),
        kind: ModelKind::Fused,
        workers: 2,
    };
    let report = crossval(&ds, &set, &plan, &cfg).unwrap();
    assert_eq!(report.test_sizes, vec![4; 6]);
    assert_eq!(report.metrics.folds.len(), 6);
    let serial = crossval(&ds, &set, &plan, &CrossvalConfig { workers: 1, ..cfg }).unwrap();
    assert_eq!(serial, report);
}
