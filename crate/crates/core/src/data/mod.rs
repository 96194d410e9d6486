//! Feature datasets with a seen/unseen class partition: synthetic
//! generation, CSV/BIN ingestion and split tagging.

mod io;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

pub use io::{
    dataset_from_bin, dataset_to_bin, load_features, load_features_with_manifest, parse_csv,
    parse_manifest, save_features, to_csv_string, write_manifest, FeatureFormat, BIN_VERSION,
};
pub use split::{make_splits, SplitWarning};
pub use synth::{synth_gzsl, synth_gzsl_with_truth, SynthConfig};

use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub visual: Vec<f64>,
    pub semantic: Vec<f64>,
    pub label: u32,
    pub split: Split,
}

/// Records plus the disjoint seen/unseen class sets.
#[derive(Clone, Debug, PartialEq)]
pub struct GzslDataset {
    records: Vec<FeatureRecord>,
    seen: BTreeSet<u32>,
    unseen: BTreeSet<u32>,
    d_visual: usize,
    k_semantic: usize,
}

impl GzslDataset {
    /// Builds and validates a dataset; dimensions come from the first record.
    pub fn new(
        records: Vec<FeatureRecord>,
        seen: BTreeSet<u32>,
        unseen: BTreeSet<u32>,
    ) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| contract("dataset has no records"))?;
        let (d, k) = (first.visual.len(), first.semantic.len());
        let ds = Self {
            records,
            seen,
            unseen,
            d_visual: d,
            k_semantic: k,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks every dataset invariant. Row numbers in errors are 1-based
    /// record positions.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.seen.intersection(&self.unseen).next() {
            return Err(contract(format!("class {c} is both seen and unseen")));
        }
        let mut semantics: BTreeMap<u32, &[f64]> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let row = i + 1;
            if r.visual.len() != self.d_visual {
                return Err(Error::RowDimension {
                    row,
                    expected: self.d_visual,
                    found: r.visual.len(),
                });
            }
            if r.semantic.len() != self.k_semantic {
                return Err(Error::RowDimension {
                    row,
                    expected: self.k_semantic,
                    found: r.semantic.len(),
                });
            }
            if !r.visual.iter().chain(&r.semantic).all(|v| v.is_finite()) {
                return Err(contract(format!("record {row} holds a non-finite value")));
            }
            let is_seen = self.seen.contains(&r.label);
            if !is_seen && !self.unseen.contains(&r.label) {
                return Err(Error::UnknownClass {
                    class: r.label,
                    detail: format!("record {row} belongs to neither the seen nor the unseen set"),
                });
            }
            if r.split == Split::Train && !is_seen {
                return Err(contract(format!(
                    "record {row} of unseen class {} is tagged train",
                    r.label
                )));
            }
            match semantics.get(&r.label) {
                Some(s) if *s != r.semantic.as_slice() => {
                    return Err(Error::SemanticMismatch {
                        class: r.label,
                        row,
                    })
                }
                Some(_) => {}
                None => {
                    semantics.insert(r.label, &r.semantic);
                }
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn seen_classes(&self) -> &BTreeSet<u32> {
        &self.seen
    }

    pub fn unseen_classes(&self) -> &BTreeSet<u32> {
        &self.unseen
    }

    pub fn d_visual(&self) -> usize {
        self.d_visual
    }

    pub fn k_semantic(&self) -> usize {
        self.k_semantic
    }

    pub fn is_seen(&self, class: u32) -> bool {
        self.seen.contains(&class)
    }

    pub fn train_records(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.records.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test_records(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }

    /// One semantic vector per class present in the records.
    pub fn class_semantics(&self) -> BTreeMap<u32, Vec<f64>> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            out.entry(r.label).or_insert_with(|| r.semantic.clone());
        }
        out
    }

    /// Replaces split tags, re-validating the result.
    pub fn with_splits(&self, splits: &[Split]) -> Result<Self> {
        if splits.len() != self.records.len() {
            return Err(contract(format!(
                "{} split tags for {} records",
                splits.len(),
                self.records.len()
            )));
        }
        let mut out = self.clone();
        for (r, &s) in out.records.iter_mut().zip(splits) {
            r.split = s;
        }
        out.validate()?;
        Ok(out)
    }

    /// Same dataset with records reordered by `order` (a permutation).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut hit = vec![false; self.records.len()];
        if order.len() != hit.len() {
            return Err(contract("permutation length differs from record count"));
        }
        for &i in order {
            if i >= hit.len() || std::mem::replace(&mut hit[i], true) {
                return Err(contract("order is not a permutation"));
            }
        }
        let mut out = self.clone();
        out.records = order.iter().map(|&i| self.records[i].clone()).collect();
        Ok(out)
    }
}
