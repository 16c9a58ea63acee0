use std::f64::consts::PI;

use super::MarginSchedule;
use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix, RngStream};

pub const DEFAULT_SCALE: f64 = 30.0;
pub const DEFAULT_SUBCENTERS: usize = 3;
/// Cosines are clamped to `±(1 − COS_CLAMP)` before `arccos`.
pub const COS_CLAMP: f64 = 1e-7;

/// SubCenter ArcFace classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceParams {
    /// `(C·K) × D_emb`; row `c·K + k` is subcenter `k` of class `c`.
    pub subcenters: Matrix,
    pub k: usize,
    pub scale: f64,
    pub margins: MarginSchedule,
}

impl ArcFaceParams {
    /// Subcenter weights drawn from `N(0, 0.01²)`.
    pub fn init(margins: MarginSchedule, k: usize, d_emb: usize, scale: f64, rng: &mut RngStream) -> Self {
        let rows = margins.len() * k;
        ArcFaceParams { subcenters: Matrix::from_fn(rows, d_emb, |_, _| 0.01 * rng.gaussian()), k, scale, margins }
    }

    pub fn num_classes(&self) -> usize {
        self.margins.len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("at least one subcenter per class is required"));
        }
        if self.subcenters.rows() != self.num_classes() * self.k {
            return Err(Error::shape(
                "ArcFaceParams",
                format!(
                    "{} subcenter rows for {} classes × {} subcenters",
                    self.subcenters.rows(),
                    self.num_classes(),
                    self.k
                ),
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("scale {} must be positive", self.scale)));
        }
        Ok(())
    }
}

/// Margin-adjusted target cosine and its derivative with respect to the
/// pooled cosine.
///
/// With `θ = arccos(clamp(t))`, the primary branch returns `cos(θ + m)`;
/// when `t ≤ cos(π − m)` (so `θ + m` would pass `π`) it falls back to
/// `t − m·sin(m)`.
pub fn target_logit(t: f64, m: f64) -> (f64, f64, bool) {
    if t > (PI - m).cos() {
        let tc = t.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
        let theta = tc.acos();
        let value = (theta + m).cos();
        let clamped = tc != t;
        let deriv = if clamped { 0.0 } else { (theta + m).sin() / (1.0 - tc * tc).sqrt() };
        (value, deriv, true)
    } else {
        (t - m * m.sin(), 1.0, false)
    }
}

/// Intermediate values of one ArcFace forward pass.
#[derive(Debug, Clone)]
pub struct ArcFaceCache {
    pub labels: Vec<usize>,
    pub embedding_norms: Vec<f64>,
    /// Row-normalized embeddings.
    pub unit_embedding: Matrix,
    pub subcenter_norms: Vec<f64>,
    /// Row-normalized subcenters.
    pub unit_subcenters: Matrix,
    /// `B × C` max-pooled cosines.
    pub cosines: Matrix,
    /// `B × C` index of the winning subcenter.
    pub best_subcenter: Vec<usize>,
    pub target_theta: Vec<f64>,
    /// `d logit / d cos` for each sample's target class (before scaling).
    pub target_derivative: Vec<f64>,
    pub primary_branch: Vec<bool>,
    /// `B × C` softmax probabilities.
    pub probabilities: Matrix,
}

#[derive(Debug, Clone)]
pub struct ArcFaceOutput {
    pub loss: f64,
    /// `B × C`, already multiplied by the scale.
    pub logits: Matrix,
    pub cache: ArcFaceCache,
}

/// Mean softmax cross-entropy over scaled, margin-adjusted logits.
pub fn arcface_forward(embedding: &Matrix, labels: &[usize], af: &ArcFaceParams) -> Result<ArcFaceOutput> {
    af.validate()?;
    let (b, d) = embedding.shape();
    if d != af.subcenters.cols() {
        return Err(Error::shape(
            "arcface_forward",
            format!("embedding dim {d}, subcenter dim {}", af.subcenters.cols()),
        ));
    }
    if labels.len() != b {
        return Err(Error::shape("arcface_forward", format!("{} labels for {b} embeddings", labels.len())));
    }
    let c_total = af.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c_total) {
        return Err(Error::invalid(format!("label {bad} out of range for {c_total} classes")));
    }
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    embedding.check_finite("arcface embedding")?;

    let embedding_norms = embedding.row_norms();
    let unit_embedding = embedding.l2_normalize_rows()?;
    let subcenter_norms = af.subcenters.row_norms();
    let unit_subcenters = af.subcenters.l2_normalize_rows()?;
    let all_cos = unit_embedding.matmul_transposed(&unit_subcenters)?;

    let k = af.k;
    let mut cosines = Matrix::zeros(b, c_total);
    let mut best_subcenter = vec![0; b * c_total];
    for r in 0..b {
        let row = all_cos.row(r);
        for c in 0..c_total {
            let group = &row[c * k..(c + 1) * k];
            let (best, &v) =
                group
                    .iter()
                    .enumerate()
                    .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            cosines.set(r, c, v);
            best_subcenter[r * c_total + c] = best;
        }
    }

    let mut logits = cosines.clone();
    let mut target_theta = Vec::with_capacity(b);
    let mut target_derivative = Vec::with_capacity(b);
    let mut primary_branch = Vec::with_capacity(b);
    for (r, &y) in labels.iter().enumerate() {
        let t = cosines.get(r, y);
        let (value, deriv, primary) = target_logit(t, af.margins.margins[y]);
        logits.set(r, y, value);
        target_theta.push(t.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP).acos());
        target_derivative.push(deriv);
        primary_branch.push(primary);
    }
    let logits = logits.scale(af.scale);

    let mut probabilities = Matrix::zeros(b, c_total);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        for (p, v) in probabilities.row_mut(r).iter_mut().zip(row) {
            *p = (v - lse).exp();
        }
    }
    loss /= b as f64;

    Ok(ArcFaceOutput {
        loss,
        logits,
        cache: ArcFaceCache {
            labels: labels.to_vec(),
            embedding_norms,
            unit_embedding,
            subcenter_norms,
            unit_subcenters,
            cosines,
            best_subcenter,
            target_theta,
            target_derivative,
            primary_branch,
            probabilities,
        },
    })
}

/// Gradients of `loss_scale · loss` with respect to the raw embedding and
/// the raw subcenter weights.
pub fn arcface_backward(cache: &ArcFaceCache, af: &ArcFaceParams, loss_scale: f64) -> Result<(Matrix, Matrix)> {
    let (b, c_total) = cache.probabilities.shape();
    if cache.labels.len() != b || c_total != af.num_classes() {
        return Err(Error::shape("arcface_backward", "cache does not match the classifier".to_string()));
    }
    let d = cache.unit_embedding.cols();
    let k = af.k;
    let coef = loss_scale * af.scale / b as f64;

    let mut d_unit_emb = Matrix::zeros(b, d);
    let mut d_unit_w = Matrix::zeros(c_total * k, d);
    for r in 0..b {
        let y = cache.labels[r];
        let e_hat = cache.unit_embedding.row(r).to_vec();
        for c in 0..c_total {
            let mut g = coef * (cache.probabilities.get(r, c) - if c == y { 1.0 } else { 0.0 });
            if c == y {
                g *= cache.target_derivative[r];
            }
            if g == 0.0 {
                continue;
            }
            let w_row = c * k + cache.best_subcenter[r * c_total + c];
            let w_hat = cache.unit_subcenters.row(w_row);
            d_unit_emb.row_mut(r).iter_mut().zip(w_hat).for_each(|(o, w)| *o += g * w);
            d_unit_w.row_mut(w_row).iter_mut().zip(&e_hat).for_each(|(o, e)| *o += g * e);
        }
    }

    let d_emb = normalize_backward(&cache.unit_embedding, &cache.embedding_norms, &d_unit_emb);
    let d_w = normalize_backward(&cache.unit_subcenters, &cache.subcenter_norms, &d_unit_w);
    Ok((d_emb, d_w))
}

/// Back-propagates through `u = v / ‖v‖` row-wise:
/// `dv = (du − u (u·du)) / ‖v‖`.
fn normalize_backward(unit: &Matrix, norms: &[f64], d_unit: &Matrix) -> Matrix {
    let mut out = d_unit.clone();
    for r in 0..unit.rows() {
        let u = unit.row(r);
        let proj = dot(u, d_unit.row(r));
        let inv = 1.0 / norms[r];
        out.row_mut(r).iter_mut().zip(u).for_each(|(g, &ui)| *g = (*g - ui * proj) * inv);
    }
    out
}
