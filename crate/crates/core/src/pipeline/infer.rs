use std::collections::BTreeMap;

use super::config::Branches;
use super::train::check_dataset_dims;
use super::Checkpoint;
use crate::data::GzslDataset;
use crate::diffcore::{Tape, Tensor};
use crate::error::{contract, dimension, Result};
use crate::metric::{mahalanobis_sq, MetricMatrix};
use crate::model::{self, ModelParameters};

/// Projections compared at inference: one row per (query, candidate) pair
/// on the generated side, one row per query on the other.
#[derive(Clone, Debug)]
pub struct Prototypes {
    pub classes: Vec<u32>,
    /// `(queries * classes) x k_proj`, query-major.
    pub generated: Tensor<f64>,
    /// `queries x k_proj`.
    pub observed: Tensor<f64>,
}

impl Prototypes {
    pub fn candidate(&self, query: usize, class_pos: usize) -> &[f64] {
        self.generated.row_slice(query * self.classes.len() + class_pos)
    }

    pub fn query(&self, query: usize) -> &[f64] {
        self.observed.row_slice(query)
    }
}

/// `U`, `S`, `H` in percent plus per-class accuracies.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_class: BTreeMap<u32, f64>,
    pub u: f64,
    pub s: f64,
    pub h: f64,
}

/// `2us / (u + s)`, or 0 when `u + s = 0`.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s == 0.0 {
        0.0
    } else {
        2.0 * u * s / (u + s)
    }
}

fn semantics_matrix(semantics: &BTreeMap<u32, Vec<f64>>) -> Result<(Vec<u32>, Tensor<f64>)> {
    if semantics.is_empty() {
        return Err(contract("no candidate classes"));
    }
    let classes: Vec<u32> = semantics.keys().copied().collect();
    let rows: Vec<&[f64]> = semantics.values().map(Vec::as_slice).collect();
    Ok((classes, Tensor::from_rows(&rows)?))
}

/// Runs every query against every candidate through the deterministic
/// (zero-noise) generative path.
pub fn prototype_projections(
    params: &ModelParameters<f64>,
    branches: Branches,
    visuals: &Tensor<f64>,
    semantics: &BTreeMap<u32, Vec<f64>>,
) -> Result<Prototypes> {
    let cfg = params.config();
    let (classes, sem) = semantics_matrix(semantics)?;
    if visuals.cols() != cfg.d_visual {
        return Err(dimension(format!(
            "query has width {}, model expects {}",
            visuals.cols(),
            cfg.d_visual
        )));
    }
    if sem.cols() != cfg.k_semantic {
        return Err(dimension(format!(
            "class semantics have width {}, model expects {}",
            sem.cols(),
            cfg.k_semantic
        )));
    }
    let (q, c) = (visuals.rows(), classes.len());
    let rep_visual = Tensor::from_fn(q * c, cfg.d_visual, |r, j| visuals.at(r / c, j));
    let rep_sem = Tensor::from_fn(q * c, cfg.k_semantic, |r, j| sem.at(r % c, j));

    let mut tape = Tape::new();
    let pv = params.register(&mut tape, |_| false);
    let xb = tape.constant(rep_visual);
    let sb = tape.constant(rep_sem);
    let x = model::fuse(&mut tape, &pv, cfg, xb, sb)?;
    let zero = tape.constant(Tensor::zeros(q * c, cfg.d_latent));
    let lat = model::encode(&mut tape, &pv, cfg, x, zero)?;
    let fake = model::generate(&mut tape, &pv, lat.mu)?;
    let gen = model::project_a(&mut tape, &pv, fake)?;
    let raw = tape.constant(visuals.clone());
    let obs = match branches {
        Branches::AAndB => model::discriminate_b(&mut tape, &pv, raw)?,
        Branches::AOnly => model::project_a(&mut tape, &pv, raw)?,
    };
    Ok(Prototypes {
        classes,
        generated: tape.value(gen).clone(),
        observed: tape.value(obs).clone(),
    })
}

/// Nearest candidate per query under `metric`; ties go to the lowest class id.
pub fn nearest_classes(protos: &Prototypes, metric: &MetricMatrix<f64>) -> Result<Vec<u32>> {
    let q = protos.observed.rows();
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let y = protos.query(i);
        let mut best = (f64::INFINITY, protos.classes[0]);
        for (p, &class) in protos.classes.iter().enumerate() {
            let d = mahalanobis_sq(protos.candidate(i, p), y, metric)?;
            if d < best.0 {
                best = (d, class);
            }
        }
        out.push(best.1);
    }
    Ok(out)
}

pub fn classify_batch_with(
    params: &ModelParameters<f64>,
    metric: &MetricMatrix<f64>,
    branches: Branches,
    visuals: &Tensor<f64>,
    semantics: &BTreeMap<u32, Vec<f64>>,
) -> Result<Vec<u32>> {
    if metric.dim() != params.config().k_proj {
        return Err(dimension(format!(
            "metric is {}x{0}, projections have width {}",
            metric.dim(),
            params.config().k_proj
        )));
    }
    let protos = prototype_projections(params, branches, visuals, semantics)?;
    nearest_classes(&protos, metric)
}

/// Class whose prototype lies nearest the query under the checkpoint's metric.
pub fn classify(
    visual: &[f64],
    class_semantics: &BTreeMap<u32, Vec<f64>>,
    checkpoint: &Checkpoint,
) -> Result<u32> {
    let q = Tensor::row(visual.to_vec());
    let out = classify_batch_with(
        &checkpoint.params,
        &checkpoint.metric,
        checkpoint.config.branches,
        &q,
        class_semantics,
    )?;
    Ok(out[0])
}

/// Queries per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Per-class accuracy on the test split, averaged within seen classes (`S`)
/// and unseen classes (`U`). Every class of the dataset is a candidate.
pub fn evaluate(dataset: &GzslDataset, checkpoint: &Checkpoint) -> Result<EvalReport> {
    check_dataset_dims(&checkpoint.config, dataset)?;
    let semantics = dataset.class_semantics();
    let test: Vec<_> = dataset.test_records().collect();
    let mut hits: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for chunk in test.chunks(EVAL_CHUNK) {
        let rows: Vec<&[f64]> = chunk.iter().map(|r| r.visual.as_slice()).collect();
        let predicted = classify_batch_with(
            &checkpoint.params,
            &checkpoint.metric,
            checkpoint.config.branches,
            &Tensor::from_rows(&rows)?,
            &semantics,
        )?;
        for (r, p) in chunk.iter().zip(predicted) {
            let e = hits.entry(r.label).or_default();
            e.0 += usize::from(p == r.label);
            e.1 += 1;
        }
    }
    let per_class: BTreeMap<u32, f64> = hits
        .iter()
        .map(|(&c, &(ok, n))| (c, 100.0 * ok as f64 / n as f64))
        .collect();
    let side = |seen: bool| -> Result<f64> {
        let accs: Vec<f64> = per_class
            .iter()
            .filter(|(c, _)| dataset.is_seen(**c) == seen)
            .map(|(_, &a)| a)
            .collect();
        if accs.is_empty() {
            let which = if seen { "seen" } else { "unseen" };
            return Err(contract(format!(
                "test split has no {which} records; harmonic mean undefined"
            )));
        }
        Ok(accs.iter().sum::<f64>() / accs.len() as f64)
    };
    let s = side(true)?;
    let u = side(false)?;
    Ok(EvalReport {
        per_class,
        u,
        s,
        h: harmonic_mean(u, s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_examples() {
        assert!((harmonic_mean(62.1, 74.6) - 67.8).abs() < 0.05);
        assert_eq!(harmonic_mean(40.0, 40.0), 40.0);
        assert_eq!(harmonic_mean(0.0, 55.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }
}
