//! Reduction of embeddings to a small fixed width, by PCA projection or by
//! average pooling of consecutive coordinates.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::container::{ContainerKind, TensorContainer};
use crate::error::{Error, Result};
use crate::numkit::{symmetric_eig, Matrix};

pub const DEFAULT_OUT_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMethod {
    Pca,
    Avgpool,
}

impl fmt::Display for ReduceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReduceMethod::Pca => "pca",
            ReduceMethod::Avgpool => "avgpool",
        })
    }
}

impl FromStr for ReduceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ReduceMethod::Pca),
            "avgpool" => Ok(ReduceMethod::Avgpool),
            other => Err(Error::invalid(format!("unknown reduction method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReduceConfig {
    pub method: ReduceMethod,
    pub out_dim: usize,
    pub renormalize_after: bool,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        ReduceConfig { method: ReduceMethod::Pca, out_dim: DEFAULT_OUT_DIM, renormalize_after: true }
    }
}

impl ReduceConfig {
    pub fn validate(&self, in_dim: usize) -> Result<()> {
        if self.out_dim == 0 || self.out_dim > in_dim {
            return Err(Error::invalid(format!("output width {} must lie in 1..={in_dim}", self.out_dim)));
        }
        if self.method == ReduceMethod::Avgpool && !in_dim.is_multiple_of(self.out_dim) {
            return Err(Error::invalid(format!("average pooling needs {} to divide {in_dim}", self.out_dim)));
        }
        Ok(())
    }
}

/// Fitted projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `out_dim × in_dim`, orthonormal rows, leading axis first.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    /// Divide each projected coordinate by the square root of its variance.
    pub whiten: bool,
}

impl PcaModel {
    pub fn in_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new(ContainerKind::Pca);
        c.push_vector("pca.mean", &self.mean);
        c.push_tensor("pca.components", &self.components);
        c.push_vector("pca.explained_variance", &self.explained_variance);
        c.push_scalar("pca.whiten", if self.whiten { 1.0 } else { 0.0 });
        c
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        if c.kind() != ContainerKind::Pca {
            return Err(Error::Format("container is not a PCA model".into()));
        }
        let components = c.tensor("pca.components")?.clone();
        let (k, d) = components.shape();
        Ok(PcaModel {
            mean: c.vector("pca.mean", d)?,
            components,
            explained_variance: c.vector("pca.explained_variance", k)?,
            whiten: c.scalar("pca.whiten")? != 0.0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PcaModel::from_container(&TensorContainer::load(path, ContainerKind::Pca)?)
    }
}

/// Sample covariance of the rows of `x` with divisor `N − 1`, and the
/// column means.
pub fn covariance(x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    if x.rows() < 2 {
        return Err(Error::invalid("covariance needs at least 2 rows"));
    }
    let mean = x.column_means();
    let centered = center(x, &mean);
    let cov = centered.transposed_matmul(&centered)?.scale(1.0 / (x.rows() - 1) as f64);
    Ok((cov, mean))
}

fn center(x: &Matrix, mean: &[f64]) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - mean[c])
}

/// Fits the top `out_dim` principal axes.
pub fn pca_fit(x: &Matrix, out_dim: usize) -> Result<PcaModel> {
    pca_fit_with(x, out_dim, false)
}

pub fn pca_fit_with(x: &Matrix, out_dim: usize, whiten: bool) -> Result<PcaModel> {
    if out_dim == 0 || out_dim > x.cols() {
        return Err(Error::invalid(format!("PCA width {out_dim} must lie in 1..={}", x.cols())));
    }
    if x.rows() <= out_dim {
        return Err(Error::invalid(format!("PCA to {out_dim} dims needs more than {out_dim} rows, got {}", x.rows())));
    }
    x.check_finite("PCA input")?;
    let (cov, mean) = covariance(x)?;
    let total: f64 = (0..cov.rows()).map(|i| cov.get(i, i)).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("PCA input has zero variance"));
    }
    let eig = symmetric_eig(&cov)?;
    let d = x.cols();
    let components = Matrix::from_fn(out_dim, d, |k, j| eig.vectors.get(j, k));
    // round-off can leave null-space eigenvalues a hair below zero
    let explained_variance: Vec<f64> = eig.values[..out_dim].iter().map(|&v| v.max(0.0)).collect();
    if whiten {
        let floor = 1e-12 * explained_variance[0];
        if let Some(k) = explained_variance.iter().position(|&v| v <= floor) {
            return Err(Error::invalid(format!("cannot whiten: component {k} has no variance")));
        }
    }
    Ok(PcaModel { mean, components, explained_variance, whiten })
}

/// `(x − mean)·componentsᵀ`, optionally whitened, then optionally row
/// L2-normalized.
pub fn pca_transform(model: &PcaModel, x: &Matrix, renormalize: bool) -> Result<Matrix> {
    if x.cols() != model.in_dim() {
        return Err(Error::shape(
            "pca_transform",
            format!("input has {} columns, model expects {}", x.cols(), model.in_dim()),
        ));
    }
    let mut y = center(x, &model.mean).matmul_transposed(&model.components)?;
    if model.whiten {
        let inv: Vec<f64> = model.explained_variance.iter().map(|v| 1.0 / v.sqrt()).collect();
        for r in 0..y.rows() {
            for (v, s) in y.row_mut(r).iter_mut().zip(&inv) {
                *v *= s;
            }
        }
    }
    if renormalize {
        y = y.l2_normalize_rows()?;
    }
    Ok(y)
}

/// Maps reduced coordinates back to the input space (no whitening undone).
pub fn pca_reconstruct(model: &PcaModel, y: &Matrix) -> Result<Matrix> {
    let mut x = y.matmul(&model.components)?;
    for r in 0..x.rows() {
        for (v, m) in x.row_mut(r).iter_mut().zip(&model.mean) {
            *v += m;
        }
    }
    Ok(x)
}

/// Output coordinate `j` is the mean of input coordinates
/// `[j·g, (j+1)·g)` with `g = in_dim / out_dim`.
pub fn avgpool_reduce(x: &Matrix, out_dim: usize, renormalize: bool) -> Result<Matrix> {
    ReduceConfig { method: ReduceMethod::Avgpool, out_dim, renormalize_after: renormalize }.validate(x.cols())?;
    let g = x.cols() / out_dim;
    let y = Matrix::from_fn(x.rows(), out_dim, |r, j| x.row(r)[j * g..(j + 1) * g].iter().sum::<f64>() / g as f64);
    if renormalize {
        y.l2_normalize_rows()
    } else {
        Ok(y)
    }
}

/// Applies `cfg`; `pca` is required for the PCA method.
pub fn reduce(x: &Matrix, cfg: &ReduceConfig, pca: Option<&PcaModel>) -> Result<Matrix> {
    cfg.validate(x.cols())?;
    match cfg.method {
        ReduceMethod::Avgpool => avgpool_reduce(x, cfg.out_dim, cfg.renormalize_after),
        ReduceMethod::Pca => {
            let model = pca.ok_or_else(|| Error::invalid("PCA reduction needs a fitted model"))?;
            if model.out_dim() != cfg.out_dim {
                return Err(Error::invalid(format!(
                    "PCA model emits {} dims, {} requested",
                    model.out_dim(),
                    cfg.out_dim
                )));
            }
            pca_transform(model, x, cfg.renormalize_after)
        }
    }
}
