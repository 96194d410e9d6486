use std::f64::consts::E;

use biasguard::diffcore::{Tape, Tensor};
use biasguard::losses::{
    gradient_penalty, interpolate, mahalanobis_loss, mse_loss, penalty_from_gradients_graph,
    total_loss, vae_loss, wgan_losses, LossWeights,
};
use biasguard::metric::{mahalanobis_sq, MetricMatrix};
use biasguard::model::{self, FusionMode, Layer, ModelConfig, ModelParameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Literal double loop over ordered pairs.
fn metric_loss_oracle(x: &Tensor<f64>, y: &Tensor<f64>, m: &MetricMatrix<f64>) -> f64 {
    let n = x.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += mahalanobis_sq(x.row_slice(i), y.row_slice(j), m).unwrap()
                    - mahalanobis_sq(x.row_slice(i), x.row_slice(j), m).unwrap();
            }
        }
    }
    -s.max(1e-8).ln()
}

#[test]
fn metric_loss_expansion_matches_pairwise_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(2..9);
        let k = rng.random_range(1..5);
        let x = randn(&mut rng, n, k);
        let y = randn(&mut rng, n, k).map(|v| 3.0 * v + 1.0);
        let b = randn(&mut rng, k, k);
        let c = b.matmul(&b.transpose()).unwrap();
        let c = Tensor::from_fn(k, k, |i, j| if i <= j { c.at(i, j) } else { c.at(j, i) });
        let m = MetricMatrix::from_matrix(c, 0.0, 0).unwrap();
        let got = mahalanobis_loss(&x, &y, &m).unwrap();
        let want = metric_loss_oracle(&x, &y, &m);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn metric_loss_floors_collapsed_batches() {
    let x = Tensor::full(3, 2, 1.0);
    let m = MetricMatrix::identity(2);
    assert!((mahalanobis_loss(&x, &x, &m).unwrap() - -(1e-8f64).ln()).abs() < 1e-12);
}

#[test]
fn vae_loss_matches_closed_form() {
    let mu = Tensor::matrix(2, 1, vec![0.5, -1.0]).unwrap();
    let lv = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
    let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 0.0]).unwrap();
    let r = Tensor::matrix(2, 2, vec![1.5, 2.0, 0.0, -1.0]).unwrap();
    let kl = |m: f64, l: f64| 0.5 * (m * m + l.exp() - 1.0 - l);
    let want = 0.5 * ((kl(0.5, 0.0) + 0.5 * 0.25) + (kl(-1.0, 1.0) + 0.5 * 1.0));
    assert!((vae_loss(&mu, &lv, &x, &r).unwrap() - want).abs() < 1e-15);
    assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
    assert!((mse_loss(&x, &r).unwrap() - 1.25 / 4.0).abs() < 1e-15);
}

#[test]
fn wgan_and_total_are_linear_in_their_terms() {
    let (c, g) = wgan_losses(&[1.0f64, 3.0], &[0.5, -0.5], 0.2, 10.0).unwrap();
    assert!((c - (0.0 - 2.0 + 2.0)).abs() < 1e-15);
    assert_eq!(g, 0.0);
    let w = LossWeights {
        vae: 0.5,
        mse: 2.0,
        metric: 0.1,
        ..LossWeights::default()
    };
    let t = total_loss(1.0, 2.0, 3.0, 4.0, &w);
    assert!((t.total - (1.0 + 1.0 + 6.0 + 0.4)).abs() < 1e-15);
    let doubled = total_loss(2.0, 4.0, 6.0, 8.0, &w);
    assert!((doubled.total - 2.0 * t.total).abs() < 1e-12);
}

#[test]
fn analytic_critic_gradient_matches_backprop_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = ModelConfig::new(6, 3, 2, 4);
    let params = ModelParameters::init(cfg, &mut rng).unwrap();
    let real = randn(&mut rng, 7, 6);
    let fake = randn(&mut rng, 7, 6);
    let alphas: Vec<f64> = (0..7).map(|_| rng.random()).collect();

    let by_backprop = gradient_penalty(
        |tape, x| {
            let pv = params.register(tape, |_| false);
            model::critic(tape, &pv, x)
        },
        &real,
        &fake,
        &alphas,
    )
    .unwrap();

    let mixed = interpolate(&real, &fake, &alphas).unwrap();
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, |_| false);
    let x = tape.constant(mixed);
    let g = model::critic_input_gradient(&mut tape, &pv, x).unwrap();
    let p = penalty_from_gradients_graph(&mut tape, g).unwrap();
    let analytic = tape.value(p).item().unwrap();
    assert!((analytic - by_backprop).abs() < 1e-12, "{analytic} vs {by_backprop}");
}

#[test]
fn identity_fusion_passes_visual_through() {
    let cfg = ModelConfig::new(4, 3, 2, 2);
    let mut params = ModelParameters::zeros(cfg).unwrap();
    // softplus(ln(e - 1)) = 1 and a zero offset network
    *params.bias_mut(Layer::AlphaOut) = Tensor::full(1, 1, (E - 1.0).ln());
    let visual = Tensor::matrix(2, 4, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 2.0, -1.0]).unwrap();
    let semantic = Tensor::full(2, 3, 0.7);
    let fused = params.atf_fuse(&visual, &semantic).unwrap();
    for (a, b) in fused.data().iter().zip(visual.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    // a scale driven to zero leaves only the offset
    *params.bias_mut(Layer::AlphaOut) = Tensor::full(1, 1, -800.0);
    *params.bias_mut(Layer::ThetaOut) = Tensor::full(1, 4, 0.25);
    let fused = params.atf_fuse(&visual, &semantic).unwrap();
    assert!(fused.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
}

#[test]
fn concat_fusion_is_a_linear_map_of_both_inputs() {
    let cfg = ModelConfig::new(2, 1, 2, 2).with_fusion(FusionMode::Concat);
    let mut params = ModelParameters::zeros(cfg).unwrap();
    let w = params.weight_mut(Layer::Concat);
    assert_eq!(w.dims(), (3, 2));
    *w = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 10.0, -10.0]).unwrap();
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, |_| false);
    let v = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let s = tape.constant(Tensor::matrix(1, 1, vec![0.5]).unwrap());
    let x = model::fuse(&mut tape, &pv, &cfg, v, s).unwrap();
    assert_eq!(tape.value(x).data(), &[6.0, -3.0]);
}

#[test]
fn latent_sample_uses_reparameterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ModelParameters::init(ModelConfig::new(4, 2, 3, 2), &mut rng).unwrap();
    let x = randn(&mut rng, 5, 4);
    let noise = randn(&mut rng, 5, 3);
    let s = params.encode(&x, &noise).unwrap();
    for i in 0..15 {
        let want = s.mu.data()[i] + (0.5 * s.log_var.data()[i]).exp() * noise.data()[i];
        assert!((s.z.data()[i] - want).abs() < 1e-14);
    }
    let zero = params.encode(&x, &Tensor::zeros(5, 3)).unwrap();
    assert_eq!(zero.z, zero.mu);
}

#[test]
fn named_parameters_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ModelConfig::desk();
    let params = ModelParameters::init(cfg, &mut rng).unwrap();
    let named: Vec<(String, Tensor<f64>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let back = ModelParameters::from_named(cfg, named.clone()).unwrap();
    assert_eq!(back, params);
    assert!(ModelParameters::from_named(cfg, named[1..].to_vec()).is_err());
    let mut wrong = named;
    wrong[0].1 = Tensor::zeros(1, 1);
    assert!(ModelParameters::from_named(cfg, wrong).is_err());
}
