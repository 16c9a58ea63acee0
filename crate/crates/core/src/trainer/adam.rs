use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metric_model::{Gradients, MetricModel, ParamGroup, ParamId};
use crate::numkit::Matrix;

/// Adam moment decay rates and denominator guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Learning rate of each parameter group.
pub type GroupRates = BTreeMap<ParamGroup, f64>;

/// First and second moment accumulators of every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub hyper: AdamHyper,
    moments: Vec<(ParamId, Matrix, Matrix)>,
}

impl AdamState {
    /// Zero moments shaped like the parameters of `model`.
    pub fn new(model: &MetricModel, hyper: AdamHyper) -> Self {
        let moments = model
            .param_ids()
            .into_iter()
            .map(|id| {
                let (r, c) = model.param(id).expect("listed parameter exists").shape();
                (id, Matrix::zeros(r, c), Matrix::zeros(r, c))
            })
            .collect();
        AdamState { t: 0, hyper, moments }
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&Matrix> {
        self.moments.iter().find(|(i, _, _)| *i == id).map(|(_, m, _)| m)
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&Matrix> {
        self.moments.iter().find(|(i, _, _)| *i == id).map(|(_, _, v)| v)
    }
}

/// Partition of the model's tensors by optimizer group. Fails unless every
/// tensor lands in exactly one group that has a learning rate.
pub fn audit_groups(model: &MetricModel, rates: &GroupRates) -> Result<BTreeMap<ParamGroup, Vec<ParamId>>> {
    let mut groups: BTreeMap<ParamGroup, Vec<ParamId>> = BTreeMap::new();
    let ids = model.param_ids();
    for &id in &ids {
        if !rates.contains_key(&id.group()) {
            return Err(Error::invalid(format!("no learning rate for group {:?} of {id}", id.group())));
        }
        groups.entry(id.group()).or_default().push(id);
    }
    let covered: usize = groups.values().map(Vec::len).sum();
    let mut unique = ids.clone();
    unique.dedup();
    if covered != ids.len() || unique.len() != ids.len() {
        return Err(Error::invalid("parameter groups do not partition the model"));
    }
    Ok(groups)
}

/// One bias-corrected Adam update. A group with rate 0 keeps its tensors
/// bit-identical while its moments still accumulate.
pub fn adam_step(model: &mut MetricModel, grads: &Gradients, state: &mut AdamState, rates: &GroupRates) -> Result<()> {
    audit_groups(model, rates)?;
    for (&g, &lr) in rates {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} of group {g:?}")));
        }
    }
    if grads.ids() != model.param_ids() {
        return Err(Error::invalid("gradients do not cover the model's parameters"));
    }
    if state.moments.iter().map(|(id, _, _)| *id).collect::<Vec<_>>() != model.param_ids() {
        return Err(Error::invalid("optimizer state belongs to a different model"));
    }
    for (id, g) in grads.iter() {
        let p = model.param(id).expect("listed parameter exists");
        if g.shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{id}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
            ));
        }
        if g.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("gradient of {id}")));
        }
    }

    state.t += 1;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let c1 = 1.0 - beta1.powf(state.t as f64);
    let c2 = 1.0 - beta2.powf(state.t as f64);
    for (id, m, v) in state.moments.iter_mut() {
        let g = grads.get(*id).expect("checked above");
        let lr = rates[&id.group()];
        let p = model.param_mut(*id).expect("checked above");
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
            if lr != 0.0 {
                pd[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
            }
        }
    }
    Ok(())
}
