//! Loss terms and their weighted combination.
//!
//! Each term comes in two forms: a `*_graph` builder that records the loss on
//! a tape for training, and a plain function over tensors.

use crate::diffcore::{Axis, Tape, Tensor, Var};
use crate::error::{contract, dimension, Error, Result};
use crate::metric::MetricMatrix;
use crate::scalar::Real;

/// Floor applied to the argument of the log in the metric loss.
pub const METRIC_LOG_FLOOR: f64 = 1e-8;

/// Stabilizer inside the square root of the gradient-penalty norm.
const NORM_EPS: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub vae: f64,
    pub mse: f64,
    pub metric: f64,
    pub gp: f64,
    pub n_critic: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vae: 1.0,
            mse: 1.0,
            metric: 1.0,
            gp: 10.0,
            n_critic: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_vae", self.vae),
            ("lambda_mse", self.mse),
            ("lambda_m", self.metric),
            ("lambda_gp", self.gp),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        Ok(())
    }
}

/// The four loss components of one batch and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_wgan: f64,
    pub l_vae: f64,
    pub l_mse: f64,
    pub l_m: f64,
    pub total: f64,
}

/// `l_wgan + w.vae * l_vae + w.mse * l_mse + w.metric * l_m`.
pub fn total_loss(l_wgan: f64, l_vae: f64, l_mse: f64, l_m: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_wgan,
        l_vae,
        l_mse,
        l_m,
        total: l_wgan + w.vae * l_vae + w.mse * l_mse + w.metric * l_m,
    }
}

fn same_dims<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(dimension(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn frozen<T: Real>(tape: &mut Tape<T>, ts: &[&Tensor<T>]) -> Vec<Var> {
    ts.iter().map(|t| tape.constant((*t).clone())).collect()
}

/// Batch mean of `0.5 * sum(mu^2 + exp(lv) - 1 - lv) + 0.5 * |x - recon|^2`.
pub fn vae_graph<T: Real>(
    tape: &mut Tape<T>,
    mu: Var,
    log_var: Var,
    x: Var,
    recon: Var,
) -> Result<Var> {
    let n = T::lit(tape.value(x).rows() as f64);
    let mu2 = tape.square(mu)?;
    let ev = tape.exp(log_var)?;
    let a = tape.add(mu2, ev)?;
    let a = tape.sub(a, log_var)?;
    let a = tape.shift(a, -T::one())?;
    let kl = tape.sum(a)?;
    let r = tape.sub(x, recon)?;
    let r2 = tape.square(r)?;
    let rec = tape.sum(r2)?;
    let both = tape.add(kl, rec)?;
    tape.scale(both, T::lit(0.5) / n)
}

pub fn vae_loss<T: Real>(mu: &Tensor<T>, log_var: &Tensor<T>, x: &Tensor<T>, recon: &Tensor<T>) -> Result<T> {
    same_dims(mu, log_var, "vae_loss moments")?;
    same_dims(x, recon, "vae_loss reconstruction")?;
    if mu.rows() != x.rows() {
        return Err(dimension("vae_loss: latent and feature batches differ in length"));
    }
    let mut tape = Tape::new();
    let v = frozen(&mut tape, &[mu, log_var, x, recon]);
    let out = vae_graph(&mut tape, v[0], v[1], v[2], v[3])?;
    tape.value(out).item()
}

/// Mean of squared differences over batch and coordinates.
pub fn mse_graph<T: Real>(tape: &mut Tape<T>, x: Var, recon: Var) -> Result<Var> {
    let d = tape.sub(x, recon)?;
    let d2 = tape.square(d)?;
    tape.mean(d2)
}

pub fn mse_loss<T: Real>(x: &Tensor<T>, recon: &Tensor<T>) -> Result<T> {
    same_dims(x, recon, "mse_loss")?;
    let mut tape = Tape::new();
    let v = frozen(&mut tape, &[x, recon]);
    let out = mse_graph(&mut tape, v[0], v[1])?;
    tape.value(out).item()
}

/// `-mean(critic_fake)`.
pub fn generator_graph<T: Real>(tape: &mut Tape<T>, critic_fake: Var) -> Result<Var> {
    let m = tape.mean(critic_fake)?;
    tape.scale(m, -T::one())
}

/// `mean(critic_fake) - mean(critic_real) + lambda_gp * gp`.
pub fn critic_graph<T: Real>(
    tape: &mut Tape<T>,
    critic_real: Var,
    critic_fake: Var,
    gp: Var,
    lambda_gp: T,
) -> Result<Var> {
    let f = tape.mean(critic_fake)?;
    let r = tape.mean(critic_real)?;
    let d = tape.sub(f, r)?;
    let p = tape.scale(gp, lambda_gp)?;
    tape.add(d, p)
}

/// `(critic_loss, generator_loss)`.
pub fn wgan_losses<T: Real>(critic_real: &[T], critic_fake: &[T], gp: T, lambda_gp: T) -> Result<(T, T)> {
    if critic_real.is_empty() || critic_fake.is_empty() {
        return Err(contract("wgan_losses needs at least one critic output per side"));
    }
    let mean = |v: &[T]| v.iter().copied().sum::<T>() / T::lit(v.len() as f64);
    let fake = mean(critic_fake);
    Ok((fake - mean(critic_real) + lambda_gp * gp, -fake))
}

/// Mean of `(|g_i| - 1)^2` over the rows of `grad_rows`.
pub fn penalty_from_gradients_graph<T: Real>(tape: &mut Tape<T>, grad_rows: Var) -> Result<Var> {
    let g2 = tape.square(grad_rows)?;
    let s = tape.sum_axis(g2, Axis::Cols)?;
    let s = tape.shift(s, T::lit(NORM_EPS))?;
    // sqrt through exp/log keeps the primitive set closed
    let l = tape.log(s)?;
    let h = tape.scale(l, T::lit(0.5))?;
    let norm = tape.exp(h)?;
    let d = tape.shift(norm, -T::one())?;
    let d2 = tape.square(d)?;
    tape.mean(d2)
}

/// Interpolates `alpha_i * real_i + (1 - alpha_i) * fake_i` row by row.
pub fn interpolate<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, alphas: &[T]) -> Result<Tensor<T>> {
    same_dims(real, fake, "gradient penalty inputs")?;
    if alphas.len() != real.rows() {
        return Err(dimension(format!(
            "{} interpolation weights for {} rows",
            alphas.len(),
            real.rows()
        )));
    }
    if alphas.iter().any(|&a| !(a >= T::zero() && a <= T::one())) {
        return Err(contract("interpolation weights must lie in [0, 1]"));
    }
    let cols = real.cols();
    Ok(Tensor::from_fn(real.rows(), cols, |i, j| {
        let a = alphas[i];
        a * real.at(i, j) + (T::one() - a) * fake.at(i, j)
    }))
}

/// Penalty on the input-gradient norm of an arbitrary row-wise critic.
///
/// `critic` records a map from an `n x d` input to `n x 1` scores. Rows must
/// not interact, so the gradient of the summed scores holds every row's
/// input gradient.
pub fn gradient_penalty<T: Real, F>(
    critic: F,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    alphas: &[T],
) -> Result<T>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mixed = interpolate(real, fake, alphas)?;
    let mut tape = Tape::new();
    let x = tape.leaf(mixed);
    let scores = critic(&mut tape, x)?;
    if tape.value(scores).dims() != (real.rows(), 1) {
        return Err(dimension("critic must map each row to one score"));
    }
    let total = tape.sum(scores)?;
    let grads = tape.backward(total)?.wrt(x);
    let mut t2 = Tape::new();
    let g = t2.constant(grads);
    let p = penalty_from_gradients_graph(&mut t2, g)?;
    t2.value(p).item()
}

/// `sum_rows(x)` as a `1 x k` row.
fn row_total<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    tape.sum_axis(x, Axis::Rows)
}

/// The metric-loss argument `sum_{i != j} [d(X_i, Y_j) - d(X_i, X_j)]`.
///
/// Expanded through the quadratic form so it costs `O(N k^2)` instead of a
/// double loop: with `q(v) = v^T M v`, `sum_{i,j} d(A_i, B_j) = N sum q(A_i)
/// + N sum q(B_j) - 2 (sum A)^T M (sum B)` for symmetric `M`, and the diagonal
/// pairs are subtracted explicitly.
pub fn metric_sum_graph<T: Real>(tape: &mut Tape<T>, x: Var, y: Var, m: Var) -> Result<Var> {
    let (n, k) = tape.value(x).dims();
    if tape.value(y).dims() != (n, k) {
        return Err(dimension("metric loss: X and Y batches differ in shape"));
    }
    if n < 2 {
        return Err(contract("metric loss needs at least two rows per branch"));
    }
    if tape.value(m).dims() != (k, k) {
        return Err(dimension(format!(
            "metric is {:?}, projections have width {k}",
            tape.value(m).shape()
        )));
    }
    let nn = T::lit(n as f64);
    let qx = tape.quad_form(x, m)?;
    let qy = tape.quad_form(y, m)?;
    let sqx = tape.sum(qx)?;
    let sqy = tape.sum(qy)?;
    let sx = row_total(tape, x)?;
    let sy = row_total(tape, y)?;
    let sx_t = tape.transpose(sx)?;
    let sy_t = tape.transpose(sy)?;
    let msy = tape.matmul(m, sy_t)?;
    let cross_xy = tape.matmul(sx, msy)?;
    let msx = tape.matmul(m, sx_t)?;
    let cross_xx = tape.matmul(sx, msx)?;
    // all ordered X-Y pairs, minus i == j
    let qsum = tape.add(sqx, sqy)?;
    let a = tape.scale(qsum, nn)?;
    let b = tape.scale(cross_xy, T::lit(2.0))?;
    let all_xy = tape.sub(a, b)?;
    let diag = tape.sub(x, y)?;
    let qd = tape.quad_form(diag, m)?;
    let diag_xy = tape.sum(qd)?;
    let xy = tape.sub(all_xy, diag_xy)?;
    // all ordered X-X pairs; the diagonal contributes zero
    let c = tape.scale(sqx, T::lit(2.0) * nn)?;
    let d = tape.scale(cross_xx, T::lit(2.0))?;
    let xx = tape.sub(c, d)?;
    tape.sub(xy, xx)
}

/// `-log(max(sum, 1e-8))`, with zero gradient where the floor is active.
pub fn metric_graph<T: Real>(tape: &mut Tape<T>, x: Var, y: Var, m: Var) -> Result<Var> {
    let s = metric_sum_graph(tape, x, y, m)?;
    let floor = T::lit(METRIC_LOG_FLOOR);
    let arg = if tape.value(s).item()? > floor {
        s
    } else {
        tape.scalar(floor)
    };
    let l = tape.log(arg)?;
    tape.scale(l, -T::one())
}

pub fn mahalanobis_loss<T: Real>(x: &Tensor<T>, y: &Tensor<T>, metric: &MetricMatrix<T>) -> Result<T> {
    let mut tape = Tape::new();
    let v = frozen(&mut tape, &[x, y, metric.matrix()]);
    let out = metric_graph(&mut tape, v[0], v[1], v[2])?;
    tape.value(out).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn vae_examples() {
        let z = t(1, 1, &[0.]);
        assert_eq!(vae_loss(&z, &z, &z, &z).unwrap(), 0.0);
        assert!((vae_loss(&t(1, 1, &[1.]), &z, &z, &z).unwrap() - 0.5).abs() < 1e-15);
        assert!((vae_loss(&z, &z, &t(1, 1, &[2.]), &z).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn wgan_examples() {
        assert_eq!(wgan_losses(&[0.3, 0.3], &[0.3], 0.0, 10.0).unwrap().0, 0.0);
        assert_eq!(wgan_losses(&[1.0], &[0.0], 0.0, 10.0).unwrap(), (-1.0, 0.0));
        assert_eq!(wgan_losses(&[2.0], &[2.0], 0.5, 10.0).unwrap().0, 5.0);
    }

    #[test]
    fn penalty_examples() {
        let real = t(2, 1, &[0.3, -1.0]);
        let fake = t(2, 1, &[1.0, 2.0]);
        let al = [0.25, 0.75];
        let sum = |tape: &mut Tape<f64>, x: Var| tape.sum_axis(x, Axis::Cols);
        assert!(gradient_penalty(sum, &real, &fake, &al).unwrap().abs() < 1e-11);
        let twice = |tape: &mut Tape<f64>, x: Var| tape.scale(x, 2.0);
        assert!((gradient_penalty(twice, &real, &fake, &al).unwrap() - 1.0).abs() < 1e-11);
        let flat = |tape: &mut Tape<f64>, x: Var| tape.scale(x, 0.0);
        assert!((gradient_penalty(flat, &real, &fake, &al).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&t(1, 2, &[1., 1.]), &t(1, 2, &[0., 0.])).unwrap(), 1.0);
        assert_eq!(mse_loss(&t(1, 2, &[3., 0.]), &t(1, 2, &[0., 0.])).unwrap(), 4.5);
    }

    #[test]
    fn metric_loss_examples() {
        let id = MetricMatrix::identity(1);
        let x = t(2, 1, &[0., 0.]);
        let y = t(2, 1, &[1., 1.]);
        assert!((mahalanobis_loss(&x, &y, &id).unwrap() + 2f64.ln()).abs() < 1e-12);
        assert!((mahalanobis_loss(&x, &x, &id).unwrap() + 1e-8f64.ln()).abs() < 1e-9);
        let y = t(2, 1, &[2., 2.]);
        assert!((mahalanobis_loss(&x, &y, &id).unwrap() + 8f64.ln()).abs() < 1e-12);
        assert!(mahalanobis_loss(&t(1, 1, &[0.]), &t(1, 1, &[1.]), &id).is_err());
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1., 1., 1., 1., &w).total, 4.0);
        let w = LossWeights { vae: 0.5, ..w };
        assert_eq!(total_loss(2., 2., 2., 2., &w).total, 7.0);
    }
}
