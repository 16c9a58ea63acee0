use std::path::Path;

use super::{Adapter, ArcFaceParams, HeadParams, MarginSchedule, MetricModel, ParamId};
use crate::container::{ContainerKind, TensorContainer};
use crate::error::{Error, Result};

impl MetricModel {
    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new(ContainerKind::Checkpoint);
        let h = &self.head;
        c.push_scalar("hp.input_dim", h.input_dim() as f64);
        c.push_scalar("hp.embedding_dim", h.embedding_dim() as f64);
        c.push_scalar("hp.classes", self.classes.len() as f64);
        c.push_scalar("hp.subcenters", self.arcface.k as f64);
        c.push_scalar("hp.scale", self.arcface.scale);
        c.push_scalar("hp.dropout", h.dropout_rate);
        c.push_scalar("hp.bn_eps", h.bn_eps);
        c.push_scalar("hp.bn_momentum", h.bn_momentum);
        c.push_scalar("hp.adapter", if h.adapter.is_some() { 1.0 } else { 0.0 });
        c.push_scalar("margin.min", self.arcface.margins.m_min);
        c.push_scalar("margin.max", self.arcface.margins.m_max);
        c.push_scalar("margin.lambda", self.arcface.margins.lambda);
        c.push_vector("margin.per_class", &self.arcface.margins.margins);
        c.push_text("classes", &self.classes.join("\n"));
        c.push_vector("bn.running_mean", &h.bn_running_mean);
        c.push_vector("bn.running_var", &h.bn_running_var);
        for id in self.param_ids() {
            c.push_tensor(id.name(), self.param(id).expect("listed parameter exists"));
        }
        c
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        if c.kind() != ContainerKind::Checkpoint {
            return Err(Error::Format("container is not a model checkpoint".into()));
        }
        let d = c.count("hp.input_dim")?;
        let e = c.count("hp.embedding_dim")?;
        let n_classes = c.count("hp.classes")?;
        let k = c.count("hp.subcenters")?;
        let classes: Vec<String> = match c.text("classes")? {
            "" => Vec::new(),
            t => t.split('\n').map(str::to_owned).collect(),
        };
        if classes.len() != n_classes {
            return Err(Error::Format(format!(
                "checkpoint lists {} class labels, header says {n_classes}",
                classes.len()
            )));
        }
        let adapter = if c.scalar("hp.adapter")? != 0.0 {
            Some(Adapter {
                weight: c.tensor_shaped(ParamId::AdapterWeight.name(), d, d)?,
                bias: c.tensor_shaped(ParamId::AdapterBias.name(), 1, d)?,
            })
        } else {
            None
        };
        let head = HeadParams {
            adapter,
            bn_gamma: c.tensor_shaped(ParamId::BnGamma.name(), 1, d)?,
            bn_beta: c.tensor_shaped(ParamId::BnBeta.name(), 1, d)?,
            bn_running_mean: c.vector("bn.running_mean", d)?,
            bn_running_var: c.vector("bn.running_var", d)?,
            bn_eps: c.scalar("hp.bn_eps")?,
            bn_momentum: c.scalar("hp.bn_momentum")?,
            dropout_rate: c.scalar("hp.dropout")?,
            fc_weight: c.tensor_shaped(ParamId::FcWeight.name(), e, d)?,
            fc_bias: c.tensor_shaped(ParamId::FcBias.name(), 1, e)?,
        };
        let arcface = ArcFaceParams {
            subcenters: c.tensor_shaped(ParamId::Subcenters.name(), n_classes * k, e)?,
            k,
            scale: c.scalar("hp.scale")?,
            margins: MarginSchedule {
                m_min: c.scalar("margin.min")?,
                m_max: c.scalar("margin.max")?,
                lambda: c.scalar("margin.lambda")?,
                margins: c.vector("margin.per_class", n_classes)?,
            },
        };
        let model = MetricModel { head, arcface, classes };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MetricModel::from_container(&TensorContainer::load(path, ContainerKind::Checkpoint)?)
    }
}
