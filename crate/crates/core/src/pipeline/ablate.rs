use std::fmt::Write as _;
use std::sync::Mutex;

use super::config::{Branches, MetricMode, TrainConfig};
use super::infer::{evaluate, EvalReport};
use super::train::train;
use crate::data::GzslDataset;
use crate::error::{contract, Result};
use crate::model::FusionMode;

/// One ablation axis and the values it takes.
#[derive(Clone, Debug, PartialEq)]
pub enum AblationAxis {
    Metric(Vec<MetricMode>),
    Branches(Vec<Branches>),
    Fusion(Vec<FusionMode>),
    /// `(lambda_vae, lambda_mse, lambda_m)` triples.
    Lambda(Vec<(f64, f64, f64)>),
    /// `(k_proj, d_latent)` pairs.
    Dims(Vec<(usize, usize)>),
}

impl AblationAxis {
    fn len(&self) -> usize {
        match self {
            AblationAxis::Metric(v) => v.len(),
            AblationAxis::Branches(v) => v.len(),
            AblationAxis::Fusion(v) => v.len(),
            AblationAxis::Lambda(v) => v.len(),
            AblationAxis::Dims(v) => v.len(),
        }
    }

    /// Applies value `i` and returns its label fragment.
    fn apply(&self, i: usize, cfg: &mut TrainConfig) -> String {
        match self {
            AblationAxis::Metric(v) => {
                cfg.metric = v[i];
                format!("metric={}", v[i].as_str())
            }
            AblationAxis::Branches(v) => {
                cfg.branches = v[i];
                format!("branches={}", v[i].as_str())
            }
            AblationAxis::Fusion(v) => {
                cfg.model.fusion = v[i];
                format!("fusion={}", v[i].as_str())
            }
            AblationAxis::Lambda(v) => {
                let (a, b, c) = v[i];
                cfg.weights.vae = a;
                cfg.weights.mse = b;
                cfg.weights.metric = c;
                format!("lambda={a}:{b}:{c}")
            }
            AblationAxis::Dims(v) => {
                let (k_proj, d_latent) = v[i];
                let fusion = cfg.model.fusion;
                cfg.model = crate::model::ModelConfig::new(
                    cfg.model.d_visual,
                    cfg.model.k_semantic,
                    d_latent,
                    k_proj,
                )
                .with_fusion(fusion);
                format!("dims={k_proj}x{d_latent}")
            }
        }
    }
}

/// Baseline `(1, 1, 1)` followed by each weight set to 0.1, 0.5 and 0.8 in
/// turn with the other two at 1: ten rows.
pub fn lambda_grid() -> Vec<(f64, f64, f64)> {
    let mut out = vec![(1.0, 1.0, 1.0)];
    for pos in 0..3 {
        for v in [0.1, 0.5, 0.8] {
            let mut t = [1.0; 3];
            t[pos] = v;
            out.push((t[0], t[1], t[2]));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub config: TrainConfig,
    pub report: EvalReport,
}

/// Every configuration of the cartesian product of `axes` over `base`,
/// first axis slowest. A row with `A_ONLY` drops to the Euclidean metric
/// unless a metric axis explicitly pairs it with `MAHA`, which is rejected.
pub fn expand(base: &TrainConfig, axes: &[AblationAxis]) -> Result<Vec<(String, TrainConfig)>> {
    if axes.iter().any(|a| a.len() == 0) {
        return Err(contract("ablation axis with no values"));
    }
    let has_metric_axis = axes.iter().any(|a| matches!(a, AblationAxis::Metric(_)));
    let total: usize = axes.iter().map(AblationAxis::len).product();
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut picks = vec![0; axes.len()];
        for (p, a) in picks.iter_mut().zip(axes).rev() {
            *p = idx % a.len();
            idx /= a.len();
        }
        let mut cfg = base.clone();
        let labels: Vec<String> = axes
            .iter()
            .zip(&picks)
            .map(|(a, &i)| a.apply(i, &mut cfg))
            .collect();
        if cfg.branches == Branches::AOnly && cfg.metric == MetricMode::Mahalanobis {
            if has_metric_axis {
                return Err(contract(format!(
                    "invalid ablation row `{}`: A_ONLY cannot use the learned metric",
                    labels.join(";")
                )));
            }
            cfg.metric = MetricMode::Euclidean;
        }
        cfg.validate()?;
        let label = if labels.is_empty() {
            "base".to_string()
        } else {
            labels.join(";")
        };
        out.push((label, cfg));
    }
    Ok(out)
}

/// Trains and evaluates every configuration, running up to `threads` rows
/// at once. Rows come back in expansion order.
pub fn ablate(
    base: &TrainConfig,
    axes: &[AblationAxis],
    dataset: &GzslDataset,
    threads: usize,
) -> Result<Vec<AblationRow>> {
    let jobs = expand(base, axes)?;
    let run = |(label, cfg): &(String, TrainConfig)| -> Result<AblationRow> {
        let ck = train(cfg, dataset)?;
        Ok(AblationRow {
            label: label.clone(),
            config: cfg.clone(),
            report: evaluate(dataset, &ck)?,
        })
    };
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(run).collect();
    }
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<Result<AblationRow>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("job counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= jobs.len() {
                    break;
                }
                let r = run(&jobs[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

/// `config,U,S,H` table.
pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("config,U,S,H\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4}",
            r.label, r.report.u, r.report.s, r.report.h
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_grid_has_ten_rows() {
        let g = lambda_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[1], (0.1, 1.0, 1.0));
    }

    #[test]
    fn explicit_a_only_maha_is_rejected() {
        let axes = [
            AblationAxis::Metric(vec![MetricMode::Mahalanobis]),
            AblationAxis::Branches(vec![Branches::AOnly]),
        ];
        assert!(expand(&TrainConfig::default(), &axes).is_err());
        let axes = [AblationAxis::Branches(vec![Branches::AOnly, Branches::AAndB])];
        let rows = expand(&TrainConfig::default(), &axes).unwrap();
        assert_eq!(rows[0].1.metric, MetricMode::Euclidean);
        assert_eq!(rows[1].1.metric, MetricMode::Mahalanobis);
    }
}
