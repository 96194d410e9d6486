use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GzslDataset, Split};
use crate::error::{contract, Result};

/// Non-fatal conditions noticed while tagging.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitWarning {
    /// No record ended up tagged train; training on the result will fail.
    EmptyTrainSplit,
}

/// Tags every unseen record test and splits each seen class into train and
/// test, `round(fraction * n)` records to test, clamped so both sides keep
/// at least one record.
pub fn make_splits(
    dataset: &GzslDataset,
    test_fraction_seen: f64,
    seed: u64,
) -> Result<(GzslDataset, Vec<SplitWarning>)> {
    if !(test_fraction_seen > 0.0 && test_fraction_seen < 1.0) {
        return Err(contract(format!(
            "test fraction must lie in (0, 1), got {test_fraction_seen}"
        )));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records().iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Test; dataset.len()];
    for (class, mut idx) in by_class {
        if !dataset.is_seen(class) {
            continue;
        }
        let n = idx.len();
        if n < 2 {
            return Err(contract(format!(
                "seen class {class} has {n} record(s); a split needs at least 2"
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = ((test_fraction_seen * n as f64).round() as usize).clamp(1, n - 1);
        for &i in &idx[n_test..] {
            splits[i] = Split::Train;
        }
    }
    let out = dataset.with_splits(&splits)?;
    let mut warnings = Vec::new();
    if out.train_records().next().is_none() {
        warnings.push(SplitWarning::EmptyTrainSplit);
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gzsl, SynthConfig};

    #[test]
    fn stratified_counts() {
        let ds = synth_gzsl(&SynthConfig::default()).unwrap();
        let (s, w) = make_splits(&ds, 0.2, 1).unwrap();
        assert!(w.is_empty());
        let test0 = s
            .records()
            .iter()
            .filter(|r| r.label == 0 && r.split == Split::Test)
            .count();
        assert_eq!(test0, 10);
        assert_eq!(s.train_records().count(), 7 * 40);
    }
}
