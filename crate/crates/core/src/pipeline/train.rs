use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{Branches, MetricMode, TrainConfig};
use super::Checkpoint;
use crate::data::{FeatureRecord, GzslDataset};
use crate::diffcore::{AdamConfig, AdamState, Axis, Tape, Tensor, Var};
use crate::error::{contract, dimension, Error, Result};
use crate::losses::{
    critic_graph, generator_graph, interpolate, metric_graph, mse_graph,
    penalty_from_gradients_graph, total_loss, vae_graph, LossBreakdown, LossWeights,
};
use crate::metric::{metric_from_projections, MetricMatrix};
use crate::model::{self, ModelParameters, ParamGroup};

type Params = ModelParameters<f64>;

/// Trains and returns the final checkpoint.
pub fn train(config: &TrainConfig, dataset: &GzslDataset) -> Result<Checkpoint> {
    train_traced(config, dataset).map(|(ck, _)| ck)
}

/// Like [`train`], also returning the loss breakdown of every batch.
///
/// A non-finite loss or a numerical failure aborts with
/// [`Error::TrainingAborted`], carrying the parameters as they were before the
/// failing batch.
pub fn train_traced(
    config: &TrainConfig,
    dataset: &GzslDataset,
) -> Result<(Checkpoint, Vec<LossBreakdown>)> {
    config.validate()?;
    check_dataset_dims(config, dataset)?;
    let train: Vec<&FeatureRecord> = dataset.train_records().collect();
    if train.is_empty() {
        return Err(contract("training split is empty"));
    }
    if train.len() < 2 {
        return Err(contract("training needs at least two train records"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Params::init(config.model, &mut rng)?;
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut opt = Optimizers {
        critic: AdamState::new(adam, params.group(ParamGroup::Critic)),
        joint: AdamState::new(adam, params.group(ParamGroup::Joint)),
    };
    let mut metric = MetricMatrix::identity(config.model.k_proj);
    let mut history = Vec::with_capacity(config.epochs);
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = [0.0; 5];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let (visual, semantic) = gather(&train, chunk)?;
            let before = params.clone();
            let abort = |cause: String, params: Params, metric: &MetricMatrix<f64>, history: &[LossBreakdown]| {
                Error::TrainingAborted {
                    epoch,
                    batch: b,
                    cause,
                    last_good: Box::new(Checkpoint {
                        params,
                        metric: metric.clone(),
                        config: config.clone(),
                        epoch,
                        history: history.to_vec(),
                    }),
                }
            };
            match train_batch(config, &mut params, &mut opt, &mut rng, &visual, &semantic) {
                Ok((loss, m)) if loss.total.is_finite() => {
                    metric = m;
                    for (s, v) in sum.iter_mut().zip(as_array(&loss)) {
                        *s += v;
                    }
                    batches += 1;
                    trace.push(loss);
                }
                Ok(_) => {
                    return Err(abort("non-finite total loss".into(), before, &metric, &history));
                }
                Err(e @ (Error::Numerical { .. } | Error::Cholesky { .. })) => {
                    return Err(abort(e.to_string(), before, &metric, &history));
                }
                Err(e) => return Err(e),
            }
        }
        let n = batches.max(1) as f64;
        history.push(LossBreakdown {
            l_wgan: sum[0] / n,
            l_vae: sum[1] / n,
            l_mse: sum[2] / n,
            l_m: sum[3] / n,
            total: sum[4] / n,
        });
    }

    Ok((
        Checkpoint {
            params,
            metric,
            config: config.clone(),
            epoch: config.epochs,
            history,
        },
        trace,
    ))
}

pub(crate) fn check_dataset_dims(config: &TrainConfig, dataset: &GzslDataset) -> Result<()> {
    let m = &config.model;
    if m.d_visual != dataset.d_visual() || m.k_semantic != dataset.k_semantic() {
        return Err(dimension(format!(
            "model expects visual/semantic widths {}/{}, data has {}/{}",
            m.d_visual,
            m.k_semantic,
            dataset.d_visual(),
            dataset.k_semantic()
        )));
    }
    Ok(())
}

fn as_array(l: &LossBreakdown) -> [f64; 5] {
    [l.l_wgan, l.l_vae, l.l_mse, l.l_m, l.total]
}

struct Optimizers {
    critic: AdamState<f64>,
    joint: AdamState<f64>,
}

fn gather(train: &[&FeatureRecord], idx: &[usize]) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let visual: Vec<&[f64]> = idx.iter().map(|&i| train[i].visual.as_slice()).collect();
    let semantic: Vec<&[f64]> = idx.iter().map(|&i| train[i].semantic.as_slice()).collect();
    Ok((Tensor::from_rows(&visual)?, Tensor::from_rows(&semantic)?))
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn group_grads(tape_grads: &crate::diffcore::Gradients<f64>, vars: &[Var]) -> Vec<Tensor<f64>> {
    vars.iter().map(|&v| tape_grads.wrt(v)).collect()
}

/// Sample covariance of the rows of `z`, recorded on the tape.
fn covariance_graph(tape: &mut Tape<f64>, z: Var) -> Result<Var> {
    let n = tape.value(z).rows();
    let mean = tape.mean_axis(z, Axis::Rows)?;
    let centered = tape.sub(z, mean)?;
    let ct = tape.transpose(centered)?;
    let c = tape.matmul(ct, centered)?;
    tape.scale(c, 1.0 / (n as f64 - 1.0))
}

fn critic_step(
    config: &TrainConfig,
    params: &mut Params,
    opt: &mut AdamState<f64>,
    rng: &mut ChaCha8Rng,
    real: &Tensor<f64>,
) -> Result<()> {
    let n = real.rows();
    let noise = normal_tensor(rng, n, config.model.d_latent);
    let fake = params.generate(&params.encode(real, &noise)?.z)?;
    let alphas: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mixed = interpolate(real, &fake, &alphas)?;

    let mut tape = Tape::new();
    let pv = params.register(&mut tape, |g| g == ParamGroup::Critic);
    let xr = tape.constant(real.clone());
    let xf = tape.constant(fake);
    let xm = tape.constant(mixed);
    let cr = model::critic(&mut tape, &pv, xr)?;
    let cf = model::critic(&mut tape, &pv, xf)?;
    let g = model::critic_input_gradient(&mut tape, &pv, xm)?;
    let gp = penalty_from_gradients_graph(&mut tape, g)?;
    let loss = critic_graph(&mut tape, cr, cf, gp, config.weights.gp)?;
    let grads = tape.backward(loss)?;
    let grads = group_grads(&grads, &pv.group(ParamGroup::Critic));
    opt.update(&mut params.group_mut(ParamGroup::Critic), &grads)
}

/// `n_critic` critic updates followed by one joint update. Returns the loss
/// breakdown measured in the joint forward pass and that pass's metric.
fn train_batch(
    config: &TrainConfig,
    params: &mut Params,
    opt: &mut Optimizers,
    rng: &mut ChaCha8Rng,
    visual: &Tensor<f64>,
    semantic: &Tensor<f64>,
) -> Result<(LossBreakdown, MetricMatrix<f64>)> {
    let fused = params.atf_fuse(visual, semantic)?;
    for _ in 0..config.weights.n_critic {
        critic_step(config, params, &mut opt.critic, rng, &fused)?;
    }

    let cfg = &config.model;
    let n = visual.rows();
    let noise = normal_tensor(rng, n, cfg.d_latent);
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, |g| g == ParamGroup::Joint);
    let xb = tape.constant(visual.clone());
    let sb = tape.constant(semantic.clone());
    let x = model::fuse(&mut tape, &pv, cfg, xb, sb)?;
    let nz = tape.constant(noise);
    let lat = model::encode(&mut tape, &pv, cfg, x, nz)?;
    let fake = model::generate(&mut tape, &pv, lat.z)?;
    let (proj_x, critic_fake) = model::discriminate_a(&mut tape, &pv, fake)?;

    let l_vae = vae_graph(&mut tape, lat.mu, lat.log_var, x, fake)?;
    let l_mse = mse_graph(&mut tape, x, fake)?;
    let l_gen = generator_graph(&mut tape, critic_fake)?;

    let k = cfg.k_proj;
    let (l_m, metric) = match config.branches {
        Branches::AOnly => (None, MetricMatrix::identity(k)),
        Branches::AAndB => {
            let proj_y = model::discriminate_b(&mut tape, &pv, xb)?;
            let (mv, metric) = match config.metric {
                MetricMode::Euclidean => {
                    let m = MetricMatrix::identity(k);
                    (tape.constant(m.matrix().clone()), m)
                }
                MetricMode::Mahalanobis if config.differentiate_metric => {
                    let z = tape.concat(&[proj_x, proj_y], Axis::Rows)?;
                    let cov = covariance_graph(&mut tape, z)?;
                    let mv = tape.sym_pinv(cov, config.ridge)?;
                    let m = MetricMatrix::from_matrix(tape.value(mv).clone(), config.ridge, 2 * n)?;
                    (mv, m)
                }
                MetricMode::Mahalanobis => {
                    let stacked = stack_rows(tape.value(proj_x), tape.value(proj_y))?;
                    let m = metric_from_projections(&stacked, config.ridge)?;
                    (tape.constant(m.matrix().clone()), m)
                }
            };
            (Some(metric_graph(&mut tape, proj_x, proj_y, mv)?), metric)
        }
    };

    let weights = LossWeights {
        metric: config.effective_metric_weight(),
        ..config.weights
    };
    let mut total = l_gen;
    for (term, w) in [(Some(l_vae), weights.vae), (Some(l_mse), weights.mse), (l_m, weights.metric)] {
        if let Some(t) = term {
            if w != 0.0 {
                let s = tape.scale(t, w)?;
                total = tape.add(total, s)?;
            }
        }
    }

    // the Wasserstein estimate mean(D(x)) - mean(D(x~)), real side detached
    let (_, critic_real) = params.discriminate_a(tape.value(x))?;
    let real_mean = critic_real.sum() / n as f64;
    let value = |v: Var| tape.value(v).item();
    let breakdown = total_loss(
        real_mean + value(l_gen)?,
        value(l_vae)?,
        value(l_mse)?,
        l_m.map(value).transpose()?.unwrap_or(0.0),
        &weights,
    );

    let grads = tape.backward(total)?;
    let grads = group_grads(&grads, &pv.group(ParamGroup::Joint));
    opt.joint.update(&mut params.group_mut(ParamGroup::Joint), &grads)?;
    Ok((breakdown, metric))
}

fn stack_rows(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
    let rows: Vec<&[f64]> = (0..a.rows())
        .map(|i| a.row_slice(i))
        .chain((0..b.rows()).map(|i| b.row_slice(i)))
        .collect();
    Tensor::from_rows(&rows)
}
