use super::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues, sorted descending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`, with its largest
    /// magnitude entry positive.
    pub vectors: Matrix,
    /// Number of Jacobi sweeps performed.
    pub sweeps: usize,
}

impl SymmetricEigen {
    /// Eigenvector `i` as an owned vector.
    pub fn vector(&self, i: usize) -> Vec<f64> {
        (0..self.vectors.rows()).map(|r| self.vectors.get(r, i)).collect()
    }
}

/// Cyclic Jacobi eigensolver.
///
/// The input is symmetrized as `(S + Sᵀ) / 2`. Sweeps stop once the
/// off-diagonal Frobenius norm falls below `1e-12 · ‖S‖_F`, or after 100
/// sweeps.
pub fn symmetric_eig(s: &Matrix) -> Result<SymmetricEigen> {
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::shape("symmetric_eig", format!("{}x{} is not square", s.rows(), s.cols())));
    }
    s.check_finite("symmetric_eig input")?;

    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (s.get(i, j) + s.get(j, i));
        }
    }
    let mut v = Matrix::identity(n).into_data();

    let total = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = OFF_DIAGONAL_TOLERANCE * total;
    let off_norm = |a: &[f64]| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[i * n + j] * a[i * n + j];
                }
            }
        }
        acc.sqrt()
    };

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && off_norm(&a) > threshold {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // A ← Jᵀ A J, rotating columns then rows p and q.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if off_norm(&a) > threshold {
        log::warn!("jacobi eigensolver stopped after {MAX_SWEEPS} sweeps with off-diagonal norm {:e}", off_norm(&a));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0.0f64;
        for r in 0..n {
            let x = v[r * n + src];
            if x.abs() > pivot.abs() {
                pivot = x;
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors.set(r, dst, sign * v[r * n + src]);
        }
    }

    Ok(SymmetricEigen { values, vectors, sweeps })
}
