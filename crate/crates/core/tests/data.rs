use std::collections::BTreeMap;

use biasguard::data::{
    dataset_from_bin, dataset_to_bin, load_features, load_features_with_manifest, make_splits,
    parse_csv, save_features, synth_gzsl, synth_gzsl_with_truth, to_csv_string, write_manifest,
    FeatureFormat, Split, SynthConfig,
};
use biasguard::diffcore::Tensor;
use biasguard::linalg::sym_eigen;
use biasguard::metric::batch_covariance;
use biasguard::Error;

fn small() -> SynthConfig {
    SynthConfig {
        n_classes: 5,
        n_unseen: 2,
        samples_per_class: 12,
        d_visual: 6,
        k_semantic: 3,
        ..SynthConfig::default()
    }
}

#[test]
fn synth_is_seed_deterministic() {
    let a = dataset_to_bin(&synth_gzsl(&small()).unwrap());
    assert_eq!(a, dataset_to_bin(&synth_gzsl(&small()).unwrap()));
    let other = SynthConfig { seed: 1, ..small() };
    assert_ne!(a, dataset_to_bin(&synth_gzsl(&other).unwrap()));
}

#[test]
fn bias_shift_moves_only_unseen_means_by_its_length() {
    let (_, plain) = synth_gzsl_with_truth(&SynthConfig { bias_shift: 0.0, ..small() }).unwrap();
    let (ds, shifted) = synth_gzsl_with_truth(&SynthConfig { bias_shift: 2.5, ..small() }).unwrap();
    for (c, mean) in &shifted {
        let gap: f64 = mean
            .iter()
            .zip(&plain[c])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if ds.is_seen(*c) {
            assert_eq!(gap, 0.0);
        } else {
            assert!((gap - 2.5).abs() < 1e-12);
        }
    }
}

#[test]
fn class_means_and_spread_follow_the_configuration() {
    let cfg = SynthConfig {
        n_classes: 2,
        n_unseen: 1,
        samples_per_class: 4000,
        d_visual: 4,
        k_semantic: 2,
        cluster_scale: 1.5,
        anisotropy: 3.0,
        seed: 9,
        ..SynthConfig::default()
    };
    let (ds, means) = synth_gzsl_with_truth(&cfg).unwrap();
    let mut residuals = Vec::new();
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for r in ds.records() {
        let e = sums.entry(r.label).or_insert((vec![0.0; 4], 0));
        e.0.iter_mut().zip(&r.visual).for_each(|(s, v)| *s += v);
        e.1 += 1;
        residuals.push(r.visual.iter().zip(&means[&r.label]).map(|(v, m)| v - m).collect::<Vec<_>>());
    }
    for (c, (s, n)) in &sums {
        for (sj, mj) in s.iter().zip(&means[c]) {
            // standard error at most 1.5 / sqrt(4000) ~ 0.024
            assert!((sj / *n as f64 - mj).abs() < 0.1);
        }
    }
    let cov = batch_covariance(&Tensor::from_rows(&residuals).unwrap()).unwrap();
    let eig = sym_eigen(&cov).unwrap();
    let (lo, hi) = eig
        .values
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    assert!((hi.sqrt() - 1.5).abs() < 0.1, "widest axis {}", hi.sqrt());
    assert!((lo.sqrt() - 0.5).abs() < 0.05, "narrowest axis {}", lo.sqrt());
}

#[test]
fn splits_are_stratified_and_keep_unseen_out_of_training() {
    let ds = synth_gzsl(&small()).unwrap();
    let (split, warnings) = make_splits(&ds, 0.25, 4).unwrap();
    assert!(warnings.is_empty());
    for c in ds.seen_classes() {
        let test = split.records().iter().filter(|r| r.label == *c && r.split == Split::Test).count();
        assert_eq!(test, 3);
    }
    assert!(split.train_records().all(|r| split.is_seen(r.label)));
    assert_eq!(make_splits(&ds, 0.25, 4).unwrap().0, split);
}

#[test]
fn csv_round_trip_is_exact() {
    let ds = synth_gzsl(&small()).unwrap();
    let text = to_csv_string(&ds).unwrap();
    assert_eq!(parse_csv(&text, None).unwrap(), ds);
}

#[test]
fn files_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_splits(&synth_gzsl(&small()).unwrap(), 0.2, 0).unwrap().0;
    for name in ["f.csv", "f.bin"] {
        let path = dir.path().join(name);
        let fmt = FeatureFormat::from_path(&path).unwrap();
        save_features(&ds, &path, fmt).unwrap();
        assert_eq!(load_features(&path, fmt).unwrap(), ds);
    }
    let manifest = dir.path().join("m.csv");
    write_manifest(&ds, &manifest).unwrap();
    let csv = dir.path().join("f.csv");
    let loaded = load_features_with_manifest(&csv, FeatureFormat::Csv, Some(&manifest)).unwrap();
    assert_eq!(loaded, ds);
    assert!(FeatureFormat::from_path(&dir.path().join("f.txt")).is_err());
}

#[test]
fn manifest_fixes_partition_for_classes_without_train_rows() {
    let text = "label,split,v0,s0\n0,train,1.0,0.5\n1,test,2.0,0.1\n";
    let inferred = parse_csv(text, None).unwrap();
    assert!(inferred.is_seen(0) && !inferred.is_seen(1));
    let flipped = parse_csv(text, Some("class_id,split\n0,seen\n1,seen\n")).unwrap();
    assert!(flipped.is_seen(1));
    match parse_csv(text, Some("0,seen\n1,unseen\n7,unseen\n")) {
        Err(Error::UnknownClass { class, .. }) => assert_eq!(class, 7),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_csv_is_reported_with_location() {
    let ragged = "label,split,v0,v1,s0\n0,train,1,2,3\n0,train,1,2\n";
    match parse_csv(ragged, None) {
        Err(Error::RowDimension { row, expected, found }) => assert_eq!((row, expected, found), (2, 5, 4)),
        other => panic!("{other:?}"),
    }
    let bad_number = "label,split,v0,s0\n0,train,x,1\n";
    assert!(matches!(parse_csv(bad_number, None), Err(Error::Parse { line: 2, .. })));
    let mismatch = "label,split,v0,s0\n0,train,1,1\n0,train,2,9\n";
    assert!(matches!(parse_csv(mismatch, None), Err(Error::SemanticMismatch { class: 0, .. })));
}

#[test]
fn corrupt_bin_is_rejected() {
    let bytes = dataset_to_bin(&synth_gzsl(&small()).unwrap());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(dataset_from_bin(&magic), Err(Error::Format(_))));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(dataset_from_bin(&version), Err(Error::Version { found: 9, .. })));
    assert!(matches!(dataset_from_bin(&bytes[..bytes.len() / 2]), Err(Error::Truncated(_))));
    assert!(matches!(dataset_from_bin(&bytes[..3]), Err(Error::Truncated(_))));
}
