//! Two-phase training of the embedding head with Adam and per-group
//! learning rates, plus a finite-difference gradient check.
//!
//! Phase one trains the head with the adapter group at rate 0; phase two
//! trains everything, the adapter at a much smaller rate. One optimizer
//! state spans both phases.

mod adam;
mod gradcheck;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

pub use adam::{adam_step, audit_groups, AdamHyper, AdamState, GroupRates};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck, REL_ERR_FLOOR};

use crate::datastore::{ClassStats, DatasetManifest, FeatureBank, Split};
use crate::error::{Error, Result};
use crate::metric_model::{
    compute_dynamic_margins, draw_dropout_mask, model_backward, MetricModel, Mode, ModelConfig, ParamGroup,
    DEFAULT_MARGIN_LAMBDA, DEFAULT_MARGIN_MAX, DEFAULT_MARGIN_MIN,
};
use crate::numkit::{Matrix, RngStream};

const SHUFFLE_STREAM: u64 = 0x2001;
const DROPOUT_STREAM: u64 = 0x2002;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_head_only: usize,
    pub epochs_joint: usize,
    pub lr_head: f64,
    pub lr_backbone_group: f64,
    pub adam: AdamHyper,
    pub seed: u64,
    pub shuffle: bool,
    /// Architecture; `input_dim` is taken from the feature bank.
    pub model: ModelConfig,
    pub margin_min: f64,
    pub margin_max: f64,
    pub margin_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs_head_only: 5,
            epochs_joint: 4,
            lr_head: 1e-4,
            lr_backbone_group: 1e-7,
            adam: AdamHyper::default(),
            seed: 0,
            shuffle: true,
            model: ModelConfig::default(),
            margin_min: DEFAULT_MARGIN_MIN,
            margin_max: DEFAULT_MARGIN_MAX,
            margin_lambda: DEFAULT_MARGIN_LAMBDA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch size {} < 2", self.batch_size)));
        }
        for (name, lr) in [("lr_head", self.lr_head), ("lr_backbone_group", self.lr_backbone_group)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} = {lr} must be > 0")));
            }
        }
        let h = self.adam;
        if !(0.0..1.0).contains(&h.beta1) || !(0.0..1.0).contains(&h.beta2) || !(h.eps > 0.0) {
            return Err(Error::invalid("Adam needs β1, β2 in [0, 1) and ε > 0"));
        }
        Ok(())
    }

    fn rates(&self, phase: Phase) -> GroupRates {
        let backbone = match phase {
            Phase::Head => 0.0,
            Phase::Joint => self.lr_backbone_group,
        };
        BTreeMap::from([(ParamGroup::Backbone, backbone), (ParamGroup::Head, self.lr_head)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Adapter frozen.
    Head,
    Joint,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Head => "head",
            Phase::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted across both phases.
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Set by whoever persists the model.
    pub checkpoint: Option<PathBuf>,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,phase,mean_loss,seconds";

impl TrainReport {
    pub fn mean_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// Header plus one `epoch,phase,mean_loss,seconds` line per epoch.
    pub fn epoch_log(&self) -> String {
        let mut s = format!("{EPOCH_LOG_HEADER}\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.phase, e.mean_loss, e.seconds));
        }
        s
    }
}

/// Training rows gathered from a bank, with class indices into the sorted
/// training classes.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    pub stats: ClassStats,
}

/// Collects the train side of `split`. Every id must be in both the bank and
/// the manifest, and every class needs at least 2 samples.
pub fn training_set(bank: &FeatureBank, manifest: &DatasetManifest, split: &Split) -> Result<TrainingSet> {
    if split.train.is_empty() {
        return Err(Error::invalid("the training split is empty"));
    }
    let positions = bank.id_positions();
    let mut rows = Vec::with_capacity(split.train.len());
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut row_classes = Vec::with_capacity(split.train.len());
    for id in &split.train {
        let &pos = positions
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("training id {id:?} is not in the feature bank")))?;
        let entry =
            manifest.get(id).ok_or_else(|| Error::Data(format!("training id {id:?} is not in the manifest")))?;
        rows.push(pos);
        row_classes.push(entry.class_label.as_str());
        *counts.entry(entry.class_label.clone()).or_insert(0) += 1;
    }
    if let Some((c, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Data(format!("training class {c:?} has {n} sample(s), needs 2")));
    }
    let classes: Vec<String> = counts.keys().cloned().collect();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels = row_classes.iter().map(|c| index[c]).collect();
    let x = Matrix::from_fn(rows.len(), bank.dim(), |r, c| bank.vector(rows[r])[c] as f64);
    Ok(TrainingSet { x, labels, classes, stats: ClassStats::from_counts(counts)? })
}

/// The model training starts from: margins from the training class counts,
/// weights from `cfg.seed`.
pub fn init_model(set: &TrainingSet, cfg: &TrainConfig) -> Result<MetricModel> {
    let margins = compute_dynamic_margins(&set.stats, cfg.margin_min, cfg.margin_max, cfg.margin_lambda)?;
    let model_cfg = ModelConfig { input_dim: set.x.cols(), ..cfg.model.clone() };
    MetricModel::init(&model_cfg, set.classes.clone(), margins, cfg.seed)
}

/// Runs the two-phase schedule on the train side of `split`.
pub fn train(
    bank: &FeatureBank,
    manifest: &DatasetManifest,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<(MetricModel, TrainReport)> {
    cfg.validate()?;
    let set = training_set(bank, manifest, split)?;
    let model = init_model(&set, cfg)?;
    fit(model, &set.x, &set.labels, cfg)
}

/// Runs the two-phase schedule from a given model.
pub fn fit(
    mut model: MetricModel,
    x: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(MetricModel, TrainReport)> {
    cfg.validate()?;
    if x.rows() != labels.len() || x.rows() < 2 {
        return Err(Error::invalid("training needs at least 2 labelled rows"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= model.classes.len()) {
        return Err(Error::invalid(format!("label {l} outside the model's {} classes", model.classes.len())));
    }
    audit_groups(&model, &cfg.rates(Phase::Joint))?;

    let mut state = AdamState::new(&model, cfg.adam);
    let mut shuffle_rng = RngStream::derived(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = RngStream::derived(cfg.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut report = TrainReport::default();

    let phases = std::iter::repeat_n(Phase::Head, cfg.epochs_head_only)
        .chain(std::iter::repeat_n(Phase::Joint, cfg.epochs_joint));
    for (e, phase) in phases.enumerate() {
        let start = Instant::now();
        let rates = cfg.rates(phase);
        if cfg.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = x.select_rows(chunk);
            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mask = draw_dropout_mask(&mut dropout_rng, xb.rows(), xb.cols(), model.head.dropout_rate)?;
            let pass = model.loss_with_mask(&xb, &lb, Mode::Train, mask)?;
            if !pass.loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {}", e + 1)));
            }
            let grads = model_backward(&pass, &lb, &model, 1.0)?;
            model.head.update_running_stats(&pass.head);
            adam_step(&mut model, &grads, &mut state, &rates)?;
            total += pass.loss;
            batches += 1;
        }
        let record = EpochRecord {
            epoch: e + 1,
            phase,
            mean_loss: total / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} ({}) mean loss {:.6} in {:.2}s",
            record.epoch,
            record.phase,
            record.mean_loss,
            record.seconds
        );
        report.epochs.push(record);
    }
    Ok((model, report))
}
