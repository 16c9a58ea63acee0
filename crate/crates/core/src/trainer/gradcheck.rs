use crate::error::{Error, Result};
use crate::metric_model::{draw_dropout_mask, model_backward, MetricModel, Mode, ParamId};
use crate::numkit::{Matrix, RngStream};

const MASK_STREAM: u64 = 0x3001;
const COORD_STREAM: u64 = 0x3002;

/// Floor of the relative-error denominator. Tensors whose true gradient is
/// exactly zero (the adapter bias under batch statistics) would otherwise
/// be judged on central-difference round-off alone.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub id: ParamId,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0f64, f64::max)
    }

    /// `tensor,coords,max_rel_error` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("tensor,coords,max_rel_error\n");
        for t in &self.tensors {
            s.push_str(&format!("{},{},{:e}\n", t.id, t.coords_checked, t.max_rel_error));
        }
        s
    }
}

/// Central differences against the analytic gradient on up to `n_coords`
/// randomly chosen coordinates of every tensor, in train mode with one
/// dropout mask held fixed for all evaluations.
pub fn grad_check(
    model: &MetricModel,
    x: &Matrix,
    labels: &[usize],
    epsilon: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if x.rows() < 2 {
        return Err(Error::invalid("gradient check needs a batch of at least 2"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("step {epsilon} must be > 0")));
    }
    let mut mask_rng = RngStream::derived(seed, MASK_STREAM);
    let mask = draw_dropout_mask(&mut mask_rng, x.rows(), x.cols(), model.head.dropout_rate)?;
    let pass = model.loss_with_mask(x, labels, Mode::Train, mask.clone())?;
    let grads = model_backward(&pass, labels, model, 1.0)?;
    let mut coord_rng = RngStream::derived(seed, COORD_STREAM);

    let mut probe = model.clone();
    let mut tensors = Vec::new();
    for id in model.param_ids() {
        let analytic = grads.get(id).expect("every parameter has a gradient");
        let n = analytic.data().len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > n_coords {
            coord_rng.shuffle(&mut coords);
            coords.truncate(n_coords);
        }
        let mut worst = 0.0f64;
        for &i in &coords {
            let original = model.param(id).expect("listed").data()[i];
            probe.param_mut(id).expect("listed").data_mut()[i] = original + epsilon;
            let lp = probe.loss_with_mask(x, labels, Mode::Train, mask.clone())?.loss;
            probe.param_mut(id).expect("listed").data_mut()[i] = original - epsilon;
            let lm = probe.loss_with_mask(x, labels, Mode::Train, mask.clone())?.loss;
            probe.param_mut(id).expect("listed").data_mut()[i] = original;
            let numeric = (lp - lm) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        tensors.push(TensorCheck { id, coords_checked: coords.len(), max_rel_error: worst });
    }
    Ok(GradCheckReport { epsilon, tensors })
}
