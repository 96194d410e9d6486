use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FeatureRecord, GzslDataset, Split};
use crate::error::{contract, Result};

/// Parameters of the projection-biased synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_unseen: usize,
    pub samples_per_class: usize,
    pub d_visual: usize,
    pub k_semantic: usize,
    /// Length of the offset added to every unseen class mean.
    pub bias_shift: f64,
    /// Standard deviation along the widest cluster axis.
    pub cluster_scale: f64,
    /// Ratio of the widest to the narrowest cluster axis.
    pub anisotropy: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_unseen: 3,
            samples_per_class: 50,
            d_visual: 64,
            k_semantic: 16,
            bias_shift: 2.0,
            cluster_scale: 1.0,
            anisotropy: 4.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(contract("synthetic data needs at least two classes"));
        }
        if self.n_unseen >= self.n_classes {
            return Err(contract(format!(
                "n_unseen ({}) must be below n_classes ({})",
                self.n_unseen, self.n_classes
            )));
        }
        if self.samples_per_class == 0 || self.d_visual == 0 || self.k_semantic == 0 {
            return Err(contract("sample count and feature widths must be positive"));
        }
        if !(self.bias_shift >= 0.0) || !self.bias_shift.is_finite() {
            return Err(contract("bias_shift must be finite and >= 0"));
        }
        if !(self.cluster_scale > 0.0) || !self.cluster_scale.is_finite() {
            return Err(contract("cluster_scale must be finite and > 0"));
        }
        if !(self.anisotropy >= 1.0) || !self.anisotropy.is_finite() {
            return Err(contract("anisotropy must be finite and >= 1"));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Columns of a random orthogonal matrix, by Gram-Schmidt on Gaussian draws.
fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Generates a dataset and also returns each class's true visual mean.
///
/// Classes `0..n_seen` are seen and tagged train; the last `n_unseen` ids are
/// unseen and tagged test. Every class parameter is drawn before any sample,
/// so changing `samples_per_class` leaves the class geometry unchanged.
pub fn synth_gzsl_with_truth(cfg: &SynthConfig) -> Result<(GzslDataset, BTreeMap<u32, Vec<f64>>)> {
    cfg.validate()?;
    let (d, k) = (cfg.d_visual, cfg.k_semantic);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let w_std = 1.0 / (k as f64).sqrt();
    let map: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..k).map(|_| normal(&mut rng) * w_std).collect())
        .collect();
    let rotation = random_rotation(d, &mut rng);
    let axis_scale: Vec<f64> = (0..d)
        .map(|i| {
            let t = if d > 1 { i as f64 / (d - 1) as f64 } else { 0.0 };
            cfg.cluster_scale * cfg.anisotropy.powf(-t)
        })
        .collect();
    let mut shift: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    shift.iter_mut().for_each(|v| *v *= cfg.bias_shift / norm);

    let n_seen = cfg.n_classes - cfg.n_unseen;
    let mut semantics = Vec::with_capacity(cfg.n_classes);
    let mut means = BTreeMap::new();
    for c in 0..cfg.n_classes {
        let s: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
        let mut mean: Vec<f64> = map
            .iter()
            .map(|row| row.iter().zip(&s).map(|(a, b)| a * b).sum())
            .collect();
        if c >= n_seen {
            mean.iter_mut().zip(&shift).for_each(|(m, o)| *m += o);
        }
        semantics.push(s);
        means.insert(c as u32, mean);
    }

    let mut records = Vec::with_capacity(cfg.n_classes * cfg.samples_per_class);
    for c in 0..cfg.n_classes {
        let label = c as u32;
        let mean = &means[&label];
        let split = if c < n_seen { Split::Train } else { Split::Test };
        for _ in 0..cfg.samples_per_class {
            let mut visual = mean.clone();
            for (axis, scale) in rotation.iter().zip(&axis_scale) {
                let a = normal(&mut rng) * scale;
                visual.iter_mut().zip(axis).for_each(|(v, u)| *v += a * u);
            }
            records.push(FeatureRecord {
                visual,
                semantic: semantics[c].clone(),
                label,
                split,
            });
        }
    }
    let seen: BTreeSet<u32> = (0..n_seen as u32).collect();
    let unseen: BTreeSet<u32> = (n_seen as u32..cfg.n_classes as u32).collect();
    Ok((GzslDataset::new(records, seen, unseen)?, means))
}

pub fn synth_gzsl(cfg: &SynthConfig) -> Result<GzslDataset> {
    synth_gzsl_with_truth(cfg).map(|(ds, _)| ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_counts() {
        let ds = synth_gzsl(&SynthConfig::default()).unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!(ds.train_records().count(), 350);
        assert_eq!(ds.seen_classes().len(), 7);
    }

    #[test]
    fn rejects_bad_counts() {
        let cfg = SynthConfig {
            n_unseen: 10,
            ..SynthConfig::default()
        };
        assert!(synth_gzsl(&cfg).is_err());
    }
}
