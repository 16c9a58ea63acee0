//! Embedding head and SubCenter ArcFace classifier with hand-written forward
//! and backward passes.
//!
//! The forward path is `adapter → BatchNorm → dropout → FC` producing the
//! embedding, followed by the ArcFace layer that turns the embedding into
//! margin-adjusted, scaled logits and a cross-entropy loss.

mod arcface;
mod checkpoint;
mod head;
mod margins;

use std::fmt;

pub use arcface::{
    arcface_backward, arcface_forward, target_logit, ArcFaceCache, ArcFaceOutput, ArcFaceParams, COS_CLAMP,
    DEFAULT_SCALE, DEFAULT_SUBCENTERS,
};
pub use head::{
    draw_dropout_mask, head_backward, head_forward, head_forward_with_mask, Adapter, HeadCache, HeadGradients,
    HeadParams, Mode, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM, DEFAULT_DROPOUT,
};
pub use margins::{
    compute_dynamic_margins, margin_for_count, MarginSchedule, DEFAULT_MARGIN_LAMBDA, DEFAULT_MARGIN_MAX,
    DEFAULT_MARGIN_MIN,
};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream};

/// Optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// The adapter standing in for the fine-tuned backbone blocks.
    Backbone,
    /// BN, FC and the ArcFace subcenters.
    Head,
}

/// Every trainable tensor of a [`MetricModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    AdapterWeight,
    AdapterBias,
    BnGamma,
    BnBeta,
    FcWeight,
    FcBias,
    Subcenters,
}

impl ParamId {
    pub const ALL: [ParamId; 7] = [
        ParamId::AdapterWeight,
        ParamId::AdapterBias,
        ParamId::BnGamma,
        ParamId::BnBeta,
        ParamId::FcWeight,
        ParamId::FcBias,
        ParamId::Subcenters,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::AdapterWeight => "adapter.weight",
            ParamId::AdapterBias => "adapter.bias",
            ParamId::BnGamma => "bn.gamma",
            ParamId::BnBeta => "bn.beta",
            ParamId::FcWeight => "fc.weight",
            ParamId::FcBias => "fc.bias",
            ParamId::Subcenters => "arcface.subcenters",
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            ParamId::AdapterWeight | ParamId::AdapterBias => ParamGroup::Backbone,
            _ => ParamGroup::Head,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture and loss hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub embedding_dim: usize,
    pub subcenters: usize,
    pub scale: f64,
    pub dropout: f64,
    pub with_adapter: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 1024,
            embedding_dim: 256,
            subcenters: DEFAULT_SUBCENTERS,
            scale: DEFAULT_SCALE,
            dropout: DEFAULT_DROPOUT,
            with_adapter: true,
        }
    }
}

/// Head, classifier and the class labels the classifier rows refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub head: HeadParams,
    pub arcface: ArcFaceParams,
    /// Class label of each classifier class, sorted.
    pub classes: Vec<String>,
}

const INIT_STREAM: u64 = 0x1001;

impl MetricModel {
    /// Fresh model: identity adapter, `γ = 1`, `β = 0`, FC and subcenter
    /// weights from `N(0, 0.01²)`, all drawn from a stream derived from
    /// `seed`.
    pub fn init(cfg: &ModelConfig, classes: Vec<String>, margins: MarginSchedule, seed: u64) -> Result<Self> {
        if classes.len() != margins.len() {
            return Err(Error::invalid(format!("{} classes but {} margins", classes.len(), margins.len())));
        }
        if cfg.input_dim == 0 || cfg.embedding_dim == 0 || cfg.subcenters == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        let mut rng = RngStream::derived(seed, INIT_STREAM);
        let mut head = HeadParams::init(cfg.input_dim, cfg.embedding_dim, cfg.with_adapter, &mut rng);
        head.dropout_rate = cfg.dropout;
        let arcface = ArcFaceParams::init(margins, cfg.subcenters, cfg.embedding_dim, cfg.scale, &mut rng);
        let model = MetricModel { head, arcface, classes };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.arcface.validate()?;
        if self.arcface.subcenters.cols() != self.head.embedding_dim() {
            return Err(Error::shape(
                "MetricModel",
                format!(
                    "head emits {} dims, classifier expects {}",
                    self.head.embedding_dim(),
                    self.arcface.subcenters.cols()
                ),
            ));
        }
        if self.classes.len() != self.arcface.num_classes() {
            return Err(Error::invalid("class labels do not match classifier rows"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.head.embedding_dim()
    }

    /// Trainable tensors present in this model, in [`ParamId::ALL`] order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        ParamId::ALL
            .into_iter()
            .filter(|id| self.head.adapter.is_some() || id.group() != ParamGroup::Backbone)
            .collect()
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        match id {
            ParamId::AdapterWeight => self.head.adapter.as_ref().map(|a| &a.weight),
            ParamId::AdapterBias => self.head.adapter.as_ref().map(|a| &a.bias),
            ParamId::BnGamma => Some(&self.head.bn_gamma),
            ParamId::BnBeta => Some(&self.head.bn_beta),
            ParamId::FcWeight => Some(&self.head.fc_weight),
            ParamId::FcBias => Some(&self.head.fc_bias),
            ParamId::Subcenters => Some(&self.arcface.subcenters),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        match id {
            ParamId::AdapterWeight => self.head.adapter.as_mut().map(|a| &mut a.weight),
            ParamId::AdapterBias => self.head.adapter.as_mut().map(|a| &mut a.bias),
            ParamId::BnGamma => Some(&mut self.head.bn_gamma),
            ParamId::BnBeta => Some(&mut self.head.bn_beta),
            ParamId::FcWeight => Some(&mut self.head.fc_weight),
            ParamId::FcBias => Some(&mut self.head.fc_bias),
            ParamId::Subcenters => Some(&mut self.arcface.subcenters),
        }
    }

    /// Loss of a batch with a fixed dropout mask, leaving the model untouched.
    pub fn loss_with_mask(
        &self,
        x: &Matrix,
        labels: &[usize],
        mode: Mode,
        mask: Option<Matrix>,
    ) -> Result<ForwardPass> {
        let (emb, head_cache) = head_forward_with_mask(&self.head, x, mode, mask)?;
        let arc = arcface_forward(&emb, labels, &self.arcface)?;
        Ok(ForwardPass { loss: arc.loss, logits: arc.logits, head: head_cache, arcface: arc.cache })
    }
}

/// Full forward pass: loss plus both caches.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss: f64,
    pub logits: Matrix,
    pub head: HeadCache,
    pub arcface: ArcFaceCache,
}

/// Gradient of every trainable tensor.
#[derive(Debug, Clone)]
pub struct Gradients {
    tensors: Vec<(ParamId, Matrix)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.tensors.iter().find(|(i, _)| *i == id).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.tensors.iter().map(|(i, m)| (*i, m))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.tensors.iter().map(|(i, _)| *i).collect()
    }

    pub fn from_tensors(tensors: Vec<(ParamId, Matrix)>) -> Self {
        Gradients { tensors }
    }
}

/// Exact gradients of `loss_scale · loss` for the recorded forward pass
/// (same dropout mask and batch statistics).
pub fn model_backward(pass: &ForwardPass, labels: &[usize], model: &MetricModel, loss_scale: f64) -> Result<Gradients> {
    if pass.arcface.labels != labels {
        return Err(Error::invalid("labels differ from those of the recorded forward pass"));
    }
    if pass.head.input.cols() != model.input_dim() || pass.head.output.cols() != model.embedding_dim() {
        return Err(Error::shape("model_backward", "cache does not match the model"));
    }
    let (d_emb, d_sub) = arcface_backward(&pass.arcface, &model.arcface, loss_scale)?;
    let hg = head_backward(&model.head, &pass.head, &d_emb)?;
    let mut tensors = Vec::with_capacity(7);
    if let (Some(w), Some(b)) = (hg.adapter_weight, hg.adapter_bias) {
        tensors.push((ParamId::AdapterWeight, w));
        tensors.push((ParamId::AdapterBias, b));
    }
    tensors.push((ParamId::BnGamma, hg.bn_gamma));
    tensors.push((ParamId::BnBeta, hg.bn_beta));
    tensors.push((ParamId::FcWeight, hg.fc_weight));
    tensors.push((ParamId::FcBias, hg.fc_bias));
    tensors.push((ParamId::Subcenters, d_sub));
    Ok(Gradients { tensors })
}

/// Inference embedding: eval-mode head followed by row L2-normalization.
pub fn embed(x: &Matrix, model: &MetricModel) -> Result<Matrix> {
    let (out, _) = head_forward_with_mask(&model.head, x, Mode::Eval, None)?;
    out.l2_normalize_rows()
}

#[cfg(test)]
mod tests;
