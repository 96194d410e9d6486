//! Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition,
//! ridge pseudo-inverse and Cholesky factorization.

use crate::diffcore::Tensor;
use crate::error::{contract, dimension, Result};
use crate::scalar::Real;

/// Eigenvalues at or below this are treated as zero by the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Largest tolerated `|C - C^T|` entry for inputs declared symmetric.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Eigen-decomposition `A = V diag(values) V^T`; column `j` of `vectors` pairs with `values[j]`.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Tensor<T>,
}

pub fn asymmetry<T: Real>(a: &Tensor<T>) -> T {
    let n = a.rows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a.at(i, j) - a.at(j, i)).abs());
        }
    }
    worst
}

fn require_square<T: Real>(a: &Tensor<T>, what: &str) -> Result<usize> {
    let (r, c) = a.dims();
    if r != c {
        return Err(dimension(format!("{what}: matrix is {r}x{c}, expected square")));
    }
    Ok(r)
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn sym_eigen<T: Real>(a: &Tensor<T>) -> Result<SymEigen<T>> {
    let n = require_square(a, "sym_eigen")?;
    let mut m: Vec<T> = a.data().to_vec();
    let mut v = Tensor::<T>::identity(n).into_data();
    let idx = |i: usize, j: usize| i * n + j;

    let scale = m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let tol = T::epsilon() * T::epsilon() * scale * scale;

    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[idx(i, j)] * m[idx(i, j)];
            }
        }
        if off <= tol || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[idx(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[idx(p, p)];
                let aqq = m[idx(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[idx(k, p)];
                    let akq = m[idx(k, q)];
                    m[idx(k, p)] = c * akp - s * akq;
                    m[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[idx(p, k)];
                    let aqk = m[idx(q, k)];
                    m[idx(p, k)] = c * apk - s * aqk;
                    m[idx(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[idx(k, p)];
                    let vkq = v[idx(k, q)];
                    v[idx(k, p)] = c * vkp - s * vkq;
                    v[idx(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(SymEigen {
        values: (0..n).map(|i| m[idx(i, i)]).collect(),
        vectors: Tensor::matrix(n, n, v)?,
    })
}

/// `[C + ridge I]^+` through the symmetric eigendecomposition.
pub fn ridge_pinv<T: Real>(c: &Tensor<T>, ridge: T) -> Result<Tensor<T>> {
    let n = require_square(c, "ridge_pinv")?;
    let asym = asymmetry(c);
    if asym > T::lit(SYMMETRY_TOL) {
        return Err(contract(format!(
            "pseudo-inverse input is not symmetric (max deviation {:e})", asym.as_f64()
        )));
    }
    let half = T::lit(0.5);
    let a = Tensor::from_fn(n, n, |i, j| {
        let base = half * (c.at(i, j) + c.at(j, i));
        if i == j {
            base + ridge
        } else {
            base
        }
    });
    let eig = sym_eigen(&a)?;
    let cutoff = T::lit(PINV_CUTOFF);
    let inv: Vec<T> = eig
        .values
        .iter()
        .map(|&l| if l > cutoff { T::one() / l } else { T::zero() })
        .collect();
    let vecs = &eig.vectors;
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = T::zero();
            for (k, &w) in inv.iter().enumerate() {
                if w != T::zero() {
                    acc = acc + vecs.at(i, k) * w * vecs.at(j, k);
                }
            }
            out.data_mut()[i * n + j] = acc;
            out.data_mut()[j * n + i] = acc;
        }
    }
    Ok(out)
}

/// Lower-triangular `L` with `L L^T = A`, or `None` when a pivot is not positive.
pub fn cholesky_lower<T: Real>(a: &Tensor<T>) -> Result<Option<Tensor<T>>> {
    let n = require_square(a, "cholesky")?;
    let mut l = Tensor::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            d = d - l.at(j, k) * l.at(j, k);
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Ok(None);
        }
        let djj = d.sqrt();
        l.data_mut()[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s = s - l.at(i, k) * l.at(j, k);
            }
            l.data_mut()[i * n + j] = s / djj;
        }
    }
    Ok(Some(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_reconstructs_input() {
        let a = Tensor::<f64>::matrix(3, 3, vec![4., 1., 0.5, 1., 3., -0.2, 0.5, -0.2, 2.]).unwrap();
        let e = sym_eigen(&a).unwrap();
        let v = &e.vectors;
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| v.at(i, k) * e.values[k] * v.at(j, k)).sum();
                assert!((r - a.at(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pinv_zeroes_null_directions() {
        let c = Tensor::<f64>::matrix(2, 2, vec![2., 0., 0., 0.]).unwrap();
        let m = ridge_pinv(&c, 0.0).unwrap();
        assert!((m.at(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(m.at(1, 1), 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Tensor::<f64>::matrix(2, 2, vec![1., 2., 2., 1.]).unwrap();
        assert!(cholesky_lower(&a).unwrap().is_none());
    }

    #[test]
    fn asymmetric_pinv_is_contract_violation() {
        let c = Tensor::<f64>::matrix(2, 2, vec![1., 1e-6, 0., 1.]).unwrap();
        assert!(ridge_pinv(&c, 1e-3).is_err());
    }
}
