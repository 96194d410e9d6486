//! Learned Mahalanobis metric.
//!
//! Branch-A and branch-B projections of a batch are stacked by rows, their
//! sample covariance is ridge-regularized and pseudo-inverted, and the result
//! `M` scores pairs with `(x - y)^T M (x - y)`. Because `M` is PSD it admits a
//! Cholesky factor `L`, and the same distance is `|L^T (x - y)|^2`.

use crate::codec::ByteReader;
use crate::diffcore::Tensor;
use crate::error::{contract, dimension, Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Default ridge added to the covariance before inversion.
pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Diagonal shifts tried in order by [`cholesky_factor`].
pub const CHOLESKY_SHIFTS: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Symmetric PSD metric together with the ridge used to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricMatrix<T> {
    matrix: Tensor<T>,
    ridge: T,
    source_batch_size: usize,
}

impl<T: Real> MetricMatrix<T> {
    /// Wraps an existing symmetric matrix.
    pub fn from_matrix(matrix: Tensor<T>, ridge: T, source_batch_size: usize) -> Result<Self> {
        let (r, c) = matrix.dims();
        if r != c {
            return Err(dimension(format!("metric must be square, got {r}x{c}")));
        }
        if linalg::asymmetry(&matrix) > T::lit(linalg::SYMMETRY_TOL) {
            return Err(contract("metric matrix is not symmetric"));
        }
        Ok(Self {
            matrix,
            ridge,
            source_batch_size,
        })
    }

    /// `M = I`: plain squared Euclidean distance.
    pub fn identity(k: usize) -> Self {
        Self {
            matrix: Tensor::identity(k),
            ridge: T::zero(),
            source_batch_size: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn ridge(&self) -> T {
        self.ridge
    }

    /// Number of stacked projection rows the covariance was estimated from.
    pub fn source_batch_size(&self) -> usize {
        self.source_batch_size
    }

    /// `c * M`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            matrix: self.matrix.scale(c),
            ridge: self.ridge,
            source_batch_size: self.source_batch_size,
        }
    }

    /// Serialized as `k` (u64), ridge, source batch size (u64), then the
    /// row-major entries, all little-endian with 64-bit floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let k = self.dim();
        let mut out = Vec::with_capacity(24 + 8 * k * k);
        out.extend_from_slice(&(k as u64).to_le_bytes());
        out.extend_from_slice(&self.ridge.as_f64().to_le_bytes());
        out.extend_from_slice(&(self.source_batch_size as u64).to_le_bytes());
        for v in self.matrix.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "metric section");
        let k_raw = r.u64()?;
        let ridge = r.f64()?;
        let source = r.u64()? as usize;
        let k = r.count(k_raw, 8)?;
        let data = r.f64s(k.checked_mul(k).ok_or_else(|| Error::Format("metric size overflow".into()))?)?;
        r.finish()?;
        let data = data.into_iter().map(T::lit).collect();
        Self::from_matrix(Tensor::matrix(k, k, data)?, T::lit(ridge), source)
    }
}

/// Lower-triangular factor of `M + shift * I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor<T> {
    pub lower: Tensor<T>,
    pub shift: T,
}

impl<T: Real> CholeskyFactor<T> {
    /// `|L^T (x - y)|^2`.
    pub fn distance_sq(&self, x: &[T], y: &[T]) -> Result<T> {
        let k = self.lower.rows();
        if x.len() != k || y.len() != k {
            return Err(dimension(format!(
                "cholesky distance of {}- and {}-vectors with factor of size {k}",
                x.len(),
                y.len()
            )));
        }
        let diff: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
        let mut acc = T::zero();
        // (L^T d)_j = sum_{i >= j} L_ij d_i
        for j in 0..k {
            let mut s = T::zero();
            for (i, &d) in diff.iter().enumerate().skip(j) {
                s = s + self.lower.at(i, j) * d;
            }
            acc = acc + s * s;
        }
        Ok(acc)
    }
}

/// Sample covariance of the rows of `stacked` (divisor `rows - 1`).
pub fn batch_covariance<T: Real>(stacked: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = stacked.dims();
    if n < 2 {
        return Err(contract(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let nt = T::lit(n as f64);
    let mean: Vec<T> = (0..k)
        .map(|j| (0..n).map(|i| stacked.at(i, j)).sum::<T>() / nt)
        .collect();
    let centered = Tensor::from_fn(n, k, |i, j| stacked.at(i, j) - mean[j]);
    let denom = T::lit((n - 1) as f64);
    let mut cov = centered.transpose().matmul(&centered)?.map(|v| v / denom);
    // exact symmetry regardless of summation order
    for i in 0..k {
        for j in (i + 1)..k {
            let v = cov.at(i, j);
            cov.data_mut()[j * k + i] = v;
        }
    }
    Ok(cov)
}

/// `[C + ridge I]^+`.
pub fn ridge_pseudo_inverse<T: Real>(cov: &Tensor<T>, ridge: T) -> Result<MetricMatrix<T>> {
    if ridge < T::zero() {
        return Err(contract("ridge must be non-negative"));
    }
    let m = linalg::ridge_pinv(cov, ridge)?;
    Ok(MetricMatrix {
        matrix: m,
        ridge,
        source_batch_size: 0,
    })
}

/// Metric from a `2N x k` stack of branch projections.
pub fn metric_from_projections<T: Real>(stacked: &Tensor<T>, ridge: T) -> Result<MetricMatrix<T>> {
    let cov = batch_covariance(stacked)?;
    let mut m = ridge_pseudo_inverse(&cov, ridge)?;
    m.source_batch_size = stacked.rows();
    Ok(m)
}

/// `(x - y)^T M (x - y)`.
pub fn mahalanobis_sq<T: Real>(x: &[T], y: &[T], metric: &MetricMatrix<T>) -> Result<T> {
    let k = metric.dim();
    if x.len() != k || y.len() != k {
        return Err(dimension(format!(
            "mahalanobis distance of {}- and {}-vectors under a {k}x{k} metric",
            x.len(),
            y.len()
        )));
    }
    let m = metric.matrix.data();
    let mut acc = T::zero();
    for i in 0..k {
        let di = x[i] - y[i];
        if di == T::zero() {
            continue;
        }
        let row = &m[i * k..(i + 1) * k];
        let mut s = T::zero();
        for j in 0..k {
            s = s + row[j] * (x[j] - y[j]);
        }
        acc = acc + di * s;
    }
    Ok(acc)
}

/// Cholesky factor of `M + shift I` with the smallest shift in
/// [`CHOLESKY_SHIFTS`] that succeeds.
pub fn cholesky_factor<T: Real>(metric: &MetricMatrix<T>) -> Result<CholeskyFactor<T>> {
    let k = metric.dim();
    for &shift in &CHOLESKY_SHIFTS {
        let s = T::lit(shift);
        let shifted = Tensor::from_fn(k, k, |i, j| {
            let v = metric.matrix.at(i, j);
            if i == j {
                v + s
            } else {
                v
            }
        });
        if let Some(lower) = linalg::cholesky_lower(&shifted)? {
            return Ok(CholeskyFactor { lower, shift: s });
        }
    }
    Err(Error::Cholesky {
        shift: *CHOLESKY_SHIFTS.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn covariance_of_two_opposite_rows() {
        let c = batch_covariance(&t(2, 2, &[1., 0., -1., 0.])).unwrap();
        assert_eq!(c.data(), &[2., 0., 0., 0.]);
    }

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let c = batch_covariance(&t(3, 2, &[1., 2., 1., 2., 1., 2.])).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariance_needs_two_rows() {
        assert!(matches!(
            batch_covariance(&t(1, 2, &[1., 2.])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn diagonal_ridge_inverse() {
        let m = ridge_pseudo_inverse(&t(2, 2, &[2., 0., 0., 0.]), 1e-3).unwrap();
        assert!((m.matrix().at(0, 0) - 1.0 / 2.001).abs() < 1e-12);
        assert!((m.matrix().at(0, 0) - 0.49975).abs() < 1e-6);
        assert!((m.matrix().at(1, 1) - 1000.0).abs() < 1e-9);
        assert_eq!(m.matrix().at(0, 1), 0.0);
    }

    #[test]
    fn identity_is_its_own_pseudo_inverse() {
        let m = ridge_pseudo_inverse(&Tensor::<f64>::identity(3), 0.0).unwrap();
        for (a, b) in m.matrix().data().iter().zip(Tensor::<f64>::identity(3).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_form_examples() {
        let id = MetricMatrix::<f64>::identity(2);
        assert_eq!(mahalanobis_sq(&[1., 0.], &[0., 0.], &id).unwrap(), 1.0);
        let d = MetricMatrix::from_matrix(t(2, 2, &[2., 0., 0., 1.]), 0.0, 0).unwrap();
        assert_eq!(mahalanobis_sq(&[1., 1.], &[0., 0.], &d).unwrap(), 3.0);
        assert_eq!(mahalanobis_sq(&[0.3, -4.], &[0.3, -4.], &d).unwrap(), 0.0);
        assert!(mahalanobis_sq(&[1.], &[0., 0.], &d).is_err());
    }

    #[test]
    fn cholesky_examples() {
        let f = cholesky_factor(&MetricMatrix::<f64>::identity(3)).unwrap();
        assert_eq!(f.shift, 0.0);
        assert_eq!(f.lower.data(), Tensor::<f64>::identity(3).data());
        let m = MetricMatrix::from_matrix(t(2, 2, &[4., 0., 0., 9.]), 0.0, 0).unwrap();
        let f = cholesky_factor(&m).unwrap();
        assert_eq!(f.lower.data(), &[2., 0., 0., 3.]);
    }

    #[test]
    fn cholesky_shifts_singular_psd() {
        let m = MetricMatrix::from_matrix(t(2, 2, &[1., 1., 1., 1.]), 0.0, 0).unwrap();
        let f = cholesky_factor(&m).unwrap();
        assert!(f.shift > 0.0);
    }

    #[test]
    fn cholesky_fails_on_indefinite() {
        let m = MetricMatrix::from_matrix(t(2, 2, &[1., 0., 0., -1.]), 0.0, 0).unwrap();
        assert!(matches!(cholesky_factor(&m), Err(Error::Cholesky { .. })));
    }

    #[test]
    fn metric_bytes_round_trip() {
        let m = MetricMatrix::from_matrix(t(2, 2, &[4., 0.5, 0.5, 9.]), 1e-3, 64).unwrap();
        let back = MetricMatrix::<f64>::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert!(MetricMatrix::<f64>::from_bytes(&m.to_bytes()[..30]).is_err());
    }
}
