use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream};

pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Trainable stand-in for the fine-tuned backbone layers: a square affine
/// map that starts as the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    /// `D_in × D_in`, applied as `x · Wᵀ`.
    pub weight: Matrix,
    /// `1 × D_in`.
    pub bias: Matrix,
}

impl Adapter {
    pub fn identity(dim: usize) -> Self {
        Adapter { weight: Matrix::identity(dim), bias: Matrix::zeros(1, dim) }
    }
}

/// Adapter → BatchNorm → Dropout → Linear.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub adapter: Option<Adapter>,
    /// `1 × D_in`
    pub bn_gamma: Matrix,
    /// `1 × D_in`
    pub bn_beta: Matrix,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub dropout_rate: f64,
    /// `D_emb × D_in`, applied as `x · Wᵀ`.
    pub fc_weight: Matrix,
    /// `1 × D_emb`
    pub fc_bias: Matrix,
}

impl HeadParams {
    /// Identity adapter (when requested), `γ = 1`, `β = 0`, running stats
    /// `(0, 1)`, FC weights `N(0, 0.01²)`, FC bias 0.
    pub fn init(d_in: usize, d_emb: usize, with_adapter: bool, rng: &mut RngStream) -> Self {
        let fc_weight = Matrix::from_fn(d_emb, d_in, |_, _| 0.01 * rng.gaussian());
        HeadParams {
            adapter: with_adapter.then(|| Adapter::identity(d_in)),
            bn_gamma: Matrix::filled(1, d_in, 1.0),
            bn_beta: Matrix::zeros(1, d_in),
            bn_running_mean: vec![0.0; d_in],
            bn_running_var: vec![1.0; d_in],
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            dropout_rate: DEFAULT_DROPOUT,
            fc_weight,
            fc_bias: Matrix::zeros(1, d_emb),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc_weight.cols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.fc_weight.rows()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let e = self.embedding_dim();
        let shape_ok = self.bn_gamma.shape() == (1, d)
            && self.bn_beta.shape() == (1, d)
            && self.bn_running_mean.len() == d
            && self.bn_running_var.len() == d
            && self.fc_bias.shape() == (1, e)
            && self.adapter.as_ref().is_none_or(|a| a.weight.shape() == (d, d) && a.bias.shape() == (1, d));
        if !shape_ok {
            return Err(Error::shape("HeadParams", "inconsistent parameter shapes"));
        }
        if !self.bn_running_var.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("BN running variance must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("BN eps must be > 0 and momentum in [0, 1]"));
        }
        Ok(())
    }

    /// Folds a train-mode batch's statistics into the running estimates:
    /// `r ← (1 − momentum)·r + momentum·batch`, with the unbiased variance.
    pub fn update_running_stats(&mut self, cache: &HeadCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let b = cache.input.rows() as f64;
        let m = self.bn_momentum;
        for j in 0..self.input_dim() {
            self.bn_running_mean[j] = (1.0 - m) * self.bn_running_mean[j] + m * cache.mean[j];
            let unbiased = cache.var[j] * b / (b - 1.0);
            self.bn_running_var[j] = (1.0 - m) * self.bn_running_var[j] + m * unbiased;
        }
    }
}

/// Intermediate values of one head forward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub mode: Mode,
    pub input: Matrix,
    pub adapter_out: Matrix,
    /// Per-feature mean used for normalization (batch or running).
    pub mean: Vec<f64>,
    /// Per-feature variance used for normalization (biased batch or running).
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// `(a − μ) / √(σ² + ε)`
    pub normalized: Matrix,
    /// Inverted-dropout multipliers (`0` or `1/(1−p)`); `None` when no dropout ran.
    pub mask: Option<Matrix>,
    /// FC input.
    pub dropped: Matrix,
    pub output: Matrix,
}

/// Inverted-dropout multipliers for a `rows × cols` activation, or `None`
/// when `p = 0`.
pub fn draw_dropout_mask(rng: &mut RngStream, rows: usize, cols: usize, p: f64) -> Result<Option<Matrix>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - p);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        // survive with probability 1 − p
        if rng.uniform() >= p {
            *v = keep;
        }
    }
    Ok(Some(m))
}

/// Head forward pass. In train mode a dropout mask is drawn from `rng` and
/// the running BN statistics are updated.
pub fn head_forward(
    params: &mut HeadParams,
    x: &Matrix,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Matrix, HeadCache)> {
    let mask = match mode {
        Mode::Train => draw_dropout_mask(rng, x.rows(), x.cols(), params.dropout_rate)?,
        Mode::Eval => None,
    };
    let (out, cache) = head_forward_with_mask(params, x, mode, mask)?;
    params.update_running_stats(&cache);
    Ok((out, cache))
}

/// Head forward pass with an explicit dropout mask, leaving `params`
/// untouched. `mask` is ignored in eval mode.
pub fn head_forward_with_mask(
    params: &HeadParams,
    x: &Matrix,
    mode: Mode,
    mask: Option<Matrix>,
) -> Result<(Matrix, HeadCache)> {
    params.validate()?;
    let d = params.input_dim();
    if x.cols() != d {
        return Err(Error::shape("head_forward", format!("input has {} columns, head expects {d}", x.cols())));
    }
    x.check_finite("head input")?;
    let b = x.rows();
    match mode {
        Mode::Train if b < 2 => {
            return Err(Error::invalid(format!("train-mode batch statistics need at least 2 rows, got {b}")))
        }
        Mode::Eval if b < 1 => return Err(Error::invalid("empty batch")),
        _ => {}
    }

    let adapter_out = match &params.adapter {
        Some(a) => {
            let mut out = x.matmul_transposed(&a.weight)?;
            add_row_bias(&mut out, a.bias.data());
            out
        }
        None => x.clone(),
    };

    let (mean, var) = match mode {
        Mode::Train => {
            let mean = adapter_out.column_means();
            let mut var = vec![0.0; d];
            for row in adapter_out.row_iter() {
                for j in 0..d {
                    var[j] += (row[j] - mean[j]).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= b as f64);
            (mean, var)
        }
        Mode::Eval => (params.bn_running_mean.clone(), params.bn_running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + params.bn_eps).sqrt()).collect();

    let mut normalized = Matrix::zeros(b, d);
    let mut bn_out = Matrix::zeros(b, d);
    let (gamma, beta) = (params.bn_gamma.data(), params.bn_beta.data());
    for r in 0..b {
        let a = adapter_out.row(r);
        for j in 0..d {
            let xh = (a[j] - mean[j]) * inv_std[j];
            normalized.set(r, j, xh);
            bn_out.set(r, j, gamma[j] * xh + beta[j]);
        }
    }

    let mask = if mode == Mode::Train { mask } else { None };
    let dropped = match &mask {
        Some(m) => {
            if m.shape() != (b, d) {
                return Err(Error::shape(
                    "head_forward",
                    format!("dropout mask {}x{} for a {b}x{d} batch", m.rows(), m.cols()),
                ));
            }
            bn_out.hadamard(m)?
        }
        None => bn_out,
    };

    let mut output = dropped.matmul_transposed(&params.fc_weight)?;
    add_row_bias(&mut output, params.fc_bias.data());
    output.check_finite("head output")?;

    let cache = HeadCache {
        mode,
        input: x.clone(),
        adapter_out,
        mean,
        var,
        inv_std,
        normalized,
        mask,
        dropped,
        output: output.clone(),
    };
    Ok((output, cache))
}

pub(crate) fn add_row_bias(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        m.row_mut(r).iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

/// Gradients of the head parameters.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub adapter_weight: Option<Matrix>,
    pub adapter_bias: Option<Matrix>,
    pub bn_gamma: Matrix,
    pub bn_beta: Matrix,
    pub fc_weight: Matrix,
    pub fc_bias: Matrix,
    /// Gradient with respect to the head input.
    pub input: Matrix,
}

/// Back-propagates `d_out` (gradient w.r.t. the head output) through the
/// recorded forward pass.
pub fn head_backward(params: &HeadParams, cache: &HeadCache, d_out: &Matrix) -> Result<HeadGradients> {
    let (b, d) = cache.normalized.shape();
    if d_out.shape() != (b, params.embedding_dim()) {
        return Err(Error::shape(
            "head_backward",
            format!("upstream gradient {}x{} for a {b}x{} output", d_out.rows(), d_out.cols(), params.embedding_dim()),
        ));
    }

    let fc_weight = d_out.transposed_matmul(&cache.dropped)?;
    let fc_bias = Matrix::row_vector(d_out.column_sums());
    let d_dropped = d_out.matmul(&params.fc_weight)?;
    let d_bn = match &cache.mask {
        Some(m) => d_dropped.hadamard(m)?,
        None => d_dropped,
    };

    let bn_gamma = Matrix::row_vector(d_bn.hadamard(&cache.normalized)?.column_sums());
    let bn_beta = Matrix::row_vector(d_bn.column_sums());

    let gamma = params.bn_gamma.data();
    let mut d_xhat = d_bn;
    for r in 0..b {
        d_xhat.row_mut(r).iter_mut().zip(gamma).for_each(|(v, g)| *v *= g);
    }

    let d_adapter_out = match cache.mode {
        Mode::Train => {
            let sum_dxhat = d_xhat.column_sums();
            let sum_dxhat_xhat = d_xhat.hadamard(&cache.normalized)?.column_sums();
            let bf = b as f64;
            Matrix::from_fn(b, d, |r, j| {
                cache.inv_std[j] / bf
                    * (bf * d_xhat.get(r, j) - sum_dxhat[j] - cache.normalized.get(r, j) * sum_dxhat_xhat[j])
            })
        }
        Mode::Eval => Matrix::from_fn(b, d, |r, j| d_xhat.get(r, j) * cache.inv_std[j]),
    };

    let (adapter_weight, adapter_bias, input) = match &params.adapter {
        Some(a) => (
            Some(d_adapter_out.transposed_matmul(&cache.input)?),
            Some(Matrix::row_vector(d_adapter_out.column_sums())),
            d_adapter_out.matmul(&a.weight)?,
        ),
        None => (None, None, d_adapter_out),
    };

    Ok(HeadGradients { adapter_weight, adapter_bias, bn_gamma, bn_beta, fc_weight, fc_bias, input })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gaussian())
    }

    #[test]
    fn eval_is_deterministic() {
        let mut rng = RngStream::new(1);
        let mut p = HeadParams::init(12, 6, true, &mut rng);
        let x = random(&mut rng, 4, 12);
        let (a, _) = head_forward(&mut p, &x, Mode::Eval, &mut rng).unwrap();
        let (b, _) = head_forward(&mut p, &x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_wiring_in_eval_mode() {
        let mut rng = RngStream::new(2);
        let mut p = HeadParams::init(10, 4, true, &mut rng);
        p.fc_weight = Matrix::from_fn(4, 10, |i, j| if i == j { 1.0 } else { 0.0 });
        p.bn_eps = 1e-300;
        let x = random(&mut rng, 3, 10);
        let (out, _) = head_forward(&mut p, &x, Mode::Eval, &mut rng).unwrap();
        for r in 0..3 {
            for j in 0..4 {
                assert!((out.get(r, j) - x.get(r, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_expectation_is_identity() {
        let mut rng = RngStream::new(3);
        let x = [0.5, -1.0, 2.0, 3.0, -0.25, 1.5, -2.0, 0.75];
        let draws = 10_000;
        let mut acc = [0.0; 8];
        for _ in 0..draws {
            let m = draw_dropout_mask(&mut rng, 1, 8, 0.2).unwrap().unwrap();
            for j in 0..8 {
                acc[j] += x[j] * m.get(0, j);
            }
        }
        let err: f64 = acc.iter().zip(&x).map(|(a, v)| (a / draws as f64 - v).powi(2)).sum();
        let norm: f64 = x.iter().map(|v| v * v).sum();
        assert!((err / norm).sqrt() < 0.01, "relative error {}", (err / norm).sqrt());
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut rng = RngStream::new(4);
        let mut p = HeadParams::init(3, 2, false, &mut rng);
        p.dropout_rate = 0.0;
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 5.0]]).unwrap();
        head_forward(&mut p, &x, Mode::Train, &mut rng).unwrap();
        // mean (2, 2, 4), unbiased var (2, 0, 2)
        let expect_mean = [0.2, 0.2, 0.4];
        let expect_var = [0.9 + 0.2, 0.9, 0.9 + 0.2];
        for j in 0..3 {
            assert!((p.bn_running_mean[j] - expect_mean[j]).abs() < 1e-12);
            assert!((p.bn_running_var[j] - expect_var[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let mut rng = RngStream::new(5);
        let mut p = HeadParams::init(3, 2, false, &mut rng);
        let x = Matrix::zeros(1, 3);
        assert!(head_forward(&mut p, &x, Mode::Train, &mut rng).is_err());
        assert!(head_forward(&mut p, &x, Mode::Eval, &mut rng).is_ok());
    }

    #[test]
    fn wrong_width_rejected() {
        let mut rng = RngStream::new(5);
        let mut p = HeadParams::init(3, 2, false, &mut rng);
        assert!(head_forward(&mut p, &Matrix::zeros(2, 4), Mode::Eval, &mut rng).is_err());
    }
}
