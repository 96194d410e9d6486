use biasguard::data::{make_splits, synth_gzsl, GzslDataset, SynthConfig};
use biasguard::diffcore::Tensor;
use biasguard::metric::MetricMatrix;
use biasguard::pipeline::{
    ablate, classify, classify_batch_with, evaluate, expand, lambda_grid, load_checkpoint,
    rows_to_csv, save_checkpoint, train, train_traced, AblationAxis, Branches, Checkpoint,
    MetricMode, TrainConfig,
};
use biasguard::{Error, ModelConfig};

fn tiny_data(seed: u64) -> GzslDataset {
    let raw = synth_gzsl(&SynthConfig {
        n_classes: 4,
        n_unseen: 1,
        samples_per_class: 20,
        d_visual: 8,
        k_semantic: 4,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    make_splits(&raw, 0.2, seed).unwrap().0
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::new(8, 4, 4, 6),
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn training_records_one_history_row_per_epoch() {
    let ds = tiny_data(0);
    let (ck, trace) = train_traced(&tiny_config(), &ds).unwrap();
    assert_eq!(ck.history.len(), 3);
    assert_eq!(ck.epoch, 3);
    // 48 train rows in batches of 16
    assert_eq!(trace.len(), 9);
    assert_eq!(ck.metric.source_batch_size(), 32);
    for l in &ck.history {
        let recombined = l.l_wgan + l.l_vae + l.l_mse + l.l_m;
        assert!((l.total - recombined).abs() < 1e-9 * l.total.abs().max(1.0));
    }
}

#[test]
fn zero_weights_leave_a_pure_wgan_run() {
    let ds = tiny_data(1);
    let mut cfg = tiny_config();
    cfg.weights.vae = 0.0;
    cfg.weights.mse = 0.0;
    cfg.weights.metric = 0.0;
    let ck = train(&cfg, &ds).unwrap();
    for l in &ck.history {
        assert!(l.total.is_finite());
        assert_eq!(l.total, l.l_wgan);
    }
}

#[test]
fn euclidean_and_single_branch_runs_use_the_identity_metric() {
    let ds = tiny_data(2);
    for (metric, branches) in [
        (MetricMode::Euclidean, Branches::AAndB),
        (MetricMode::Euclidean, Branches::AOnly),
    ] {
        let cfg = TrainConfig {
            metric,
            branches,
            ..tiny_config()
        };
        let ck = train(&cfg, &ds).unwrap();
        assert_eq!(ck.metric.matrix(), MetricMatrix::identity(6).matrix());
        assert!(ck.history.iter().all(|l| l.l_m == 0.0 || branches == Branches::AAndB));
    }
    let bad = TrainConfig {
        branches: Branches::AOnly,
        ..tiny_config()
    };
    assert!(matches!(train(&bad, &ds), Err(Error::Contract(_))));
}

#[test]
fn exact_metric_mode_trains() {
    let ds = tiny_data(3);
    let cfg = TrainConfig {
        differentiate_metric: true,
        ..tiny_config()
    };
    let ck = train(&cfg, &ds).unwrap();
    assert!(ck.history.iter().all(|l| l.total.is_finite()));
}

#[test]
fn divergent_training_aborts_with_the_last_good_state() {
    let ds = tiny_data(4);
    let cfg = TrainConfig {
        lr: 1e6,
        epochs: 50,
        ..tiny_config()
    };
    match train(&cfg, &ds) {
        Err(Error::TrainingAborted { last_good, .. }) => {
            let finite = last_good
                .params
                .named_tensors()
                .iter()
                .all(|(_, t)| t.is_finite());
            assert!(finite);
        }
        other => panic!("expected an abort, got {:?}", other.map(|c| c.history)),
    }
}

#[test]
fn wrong_feature_widths_are_rejected() {
    let ds = tiny_data(0);
    let cfg = TrainConfig {
        model: ModelConfig::new(9, 4, 4, 6),
        ..tiny_config()
    };
    assert!(matches!(train(&cfg, &ds), Err(Error::Dimension(_))));
}

#[test]
fn evaluation_ignores_record_order() {
    let ds = tiny_data(5);
    let ck = train(&tiny_config(), &ds).unwrap();
    let reversed: Vec<usize> = (0..ds.len()).rev().collect();
    let shuffled = ds.permuted(&reversed).unwrap();
    assert_eq!(evaluate(&ds, &ck).unwrap(), evaluate(&shuffled, &ck).unwrap());
}

#[test]
fn single_query_classification_matches_batch() {
    let ds = tiny_data(6);
    let ck = train(&tiny_config(), &ds).unwrap();
    let sem = ds.class_semantics();
    let rows: Vec<&[f64]> = ds.records().iter().take(10).map(|r| r.visual.as_slice()).collect();
    let batch = classify_batch_with(
        &ck.params,
        &ck.metric,
        ck.config.branches,
        &Tensor::from_rows(&rows).unwrap(),
        &sem,
    )
    .unwrap();
    for (row, want) in rows.iter().zip(batch) {
        assert_eq!(classify(row, &sem, &ck).unwrap(), want);
    }
    assert!(matches!(classify(&[0.0; 3], &sem, &ck), Err(Error::Dimension(_))));
}

#[test]
fn identical_prototypes_tie_to_the_lowest_class() {
    let ds = tiny_data(7);
    let ck = train(&tiny_config(), &ds).unwrap();
    let s = ds.class_semantics()[&0].clone();
    let twins = [(5u32, s.clone()), (2u32, s)].into_iter().collect();
    assert_eq!(classify(&ds.records()[0].visual, &twins, &ck).unwrap(), 2);
}

#[test]
fn checkpoint_files_round_trip_and_reject_damage() {
    let ds = tiny_data(8);
    let ck = train(&tiny_config(), &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&ck, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ck);

    let bytes = ck.to_bytes();
    let mut magic = bytes.clone();
    magic[1] = 0;
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
    let mut version = bytes.clone();
    version[4] = 2;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Version { found: 2, .. })));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
        Err(Error::Truncated(_))
    ));
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing")),
        Err(Error::Io(_))
    ));
}

#[test]
fn checkpoint_with_a_foreign_metric_size_is_rejected() {
    let ds = tiny_data(9);
    let mut ck = train(&tiny_config(), &ds).unwrap();
    ck.metric = MetricMatrix::identity(3);
    assert!(matches!(Checkpoint::from_bytes(&ck.to_bytes()), Err(Error::Dimension(_))));
}

#[test]
fn ablation_rows_match_direct_runs_regardless_of_threads() {
    let ds = tiny_data(10);
    let base = tiny_config();
    let axes = [
        AblationAxis::Metric(vec![MetricMode::Mahalanobis, MetricMode::Euclidean]),
        AblationAxis::Lambda(vec![(1.0, 1.0, 1.0), (1.0, 0.5, 1.0)]),
    ];
    let serial = ablate(&base, &axes, &ds, 1).unwrap();
    let parallel = ablate(&base, &axes, &ds, 3).unwrap();
    assert_eq!(serial.len(), 4);
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.report, b.report);
    }
    assert_eq!(serial[3].label, "metric=EUCLID;lambda=1:0.5:1");
    let direct = evaluate(&ds, &train(&serial[1].config, &ds).unwrap()).unwrap();
    assert_eq!(direct, serial[1].report);
    let table = rows_to_csv(&serial);
    assert!(table.starts_with("config,U,S,H\n"));
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn ablation_expansion_covers_the_grid() {
    let axes = [
        AblationAxis::Lambda(lambda_grid()),
        AblationAxis::Dims(vec![(6, 4), (12, 8)]),
    ];
    let rows = expand(&tiny_config(), &axes).unwrap();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[1].1.model.k_proj, 12);
    assert!(expand(&tiny_config(), &[AblationAxis::Fusion(vec![])]).is_err());
}

#[test]
fn config_text_round_trips_and_rejects_unknown_keys() {
    let mut cfg = tiny_config();
    cfg.metric = MetricMode::Euclidean;
    cfg.weights.metric = 0.0;
    cfg.ridge = 0.25;
    let text = cfg.to_text();
    assert_eq!(TrainConfig::from_text(&text).unwrap(), cfg);
    let mut other = TrainConfig::default();
    assert!(matches!(other.set("learning_rate", "0.1"), Err(Error::Config(_))));
    assert!(matches!(other.set("epochs", "many"), Err(Error::Config(_))));
    other.apply_text("# comment\n\nepochs = 7\n").unwrap();
    assert_eq!(other.epochs, 7);
}
