use std::io::Write;
use std::path::{Path, PathBuf};

use gue_core::datastore::{
    class_stats, filter_min_samples, split_unseen_classes, synth_dataset, CountLaw, NoiseModel, SynthConfig,
};
use gue_core::metric_model::{compute_dynamic_margins, embed as embed_rows};
use gue_core::reduce::{pca_fit_with, reduce as reduce_rows};
use gue_core::retrieval::{build_index, evaluate as evaluate_index};
use gue_core::trainer::{grad_check, init_model, train as train_model, training_set};
use gue_core::{
    DatasetManifest, EvalConfig, FeatureBank, MetricModel, ModelConfig, PcaModel, ReduceConfig, ReduceMethod,
    RngStream, Split, TrainConfig,
};

use crate::args::*;
use crate::run_manifest::write_run_manifests;
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs a loader, naming the file in any error.
fn load<'a, T>(path: &'a Path, f: impl FnOnce(&'a Path) -> gue_core::Result<T>) -> Result<T, CliError> {
    f(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes `text` to `out`, or to standard output.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Bank rows for every manifest id, in manifest order.
fn bank_for_manifest(bank: &FeatureBank, manifest: &DatasetManifest) -> Result<FeatureBank, CliError> {
    Ok(bank.select(&manifest.ids())?)
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let counts = match a.per_class {
        Some(n) => CountLaw::Fixed(n as usize),
        None => {
            if a.count_min == 0 || a.count_min > a.count_max {
                return Err(usage(format!(
                    "--count-min {} / --count-max {} must satisfy 1 ≤ min ≤ max",
                    a.count_min, a.count_max
                )));
            }
            CountLaw::Uniform { min: a.count_min, max: a.count_max }
        }
    };
    if a.verticals == 0 {
        return Err(usage("--verticals must be at least 1"));
    }
    let noise =
        if a.rho == 0.0 { NoiseModel::Isotropic } else { NoiseModel::BlockCorrelated { block: a.block, rho: a.rho } };
    let cfg = SynthConfig {
        n_verticals: a.verticals,
        noise,
        center_rank: a.center_rank,
        ..SynthConfig::new(a.classes as usize, counts, a.dim as usize, a.sigma, a.seed)
    };
    let (bank, manifest) = synth_dataset(&cfg)?;
    let manifest_out = a.manifest_out.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    bank.save(&a.out)?;
    manifest.save(&manifest_out)?;
    log::info!("wrote {} records of dim {} to {}", bank.len(), bank.dim(), a.out.display());
    write_run_manifests("synth", a, Some(a.seed), &[], &[&a.out, &manifest_out])
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(usage(format!("--val-fraction {} outside [0, 1)", a.val_fraction)));
    }
    let bank = load(&a.bank, FeatureBank::load)?;
    let manifest = filter_min_samples(&load(&a.manifest, DatasetManifest::load)?, a.min_samples);
    if manifest.is_empty() {
        return Err(CliError::Runtime(format!("no class has at least {} samples", a.min_samples)));
    }
    let split = if a.val_fraction == 0.0 {
        Split { train: manifest.ids(), validation: Vec::new(), validation_classes: Vec::new(), seed: a.seed }
    } else {
        split_unseen_classes(&manifest, a.val_fraction, a.seed)?
    };
    log::info!(
        "{} training and {} validation records ({} validation classes)",
        split.train.len(),
        split.validation.len(),
        split.validation_classes.len()
    );
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        epochs_head_only: a.epochs_head,
        epochs_joint: a.epochs_joint,
        lr_head: a.lr_head,
        lr_backbone_group: a.lr_backbone,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        model: ModelConfig {
            input_dim: bank.dim(),
            embedding_dim: a.embedding_dim,
            subcenters: a.subcenters,
            scale: a.scale,
            dropout: a.dropout,
            with_adapter: !a.no_adapter,
        },
        margin_min: a.margin_min,
        margin_max: a.margin_max,
        margin_lambda: a.margin_lambda,
        ..TrainConfig::default()
    };
    let (model, mut report) = train_model(&bank, &manifest, &split, &cfg)?;
    model.save(&a.out)?;
    report.checkpoint = Some(a.out.clone());
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log"));
    std::fs::write(&log_path, report.epoch_log())?;
    let val_path = a.val_manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".val.csv"));
    manifest.subset(&split.validation).save(&val_path)?;
    write_run_manifests("train", a, Some(a.seed), &[&a.bank, &a.manifest], &[&a.out, &log_path, &val_path])
}

pub fn embed(a: &EmbedArgs) -> Result<(), CliError> {
    let model = load(&a.checkpoint, MetricModel::load)?;
    let bank = load(&a.bank, FeatureBank::load)?;
    let emb = embed_rows(&bank.to_matrix(), &model)?;
    FeatureBank::from_matrix(bank.ids().to_vec(), &emb)?.save(&a.out)?;
    log::info!("embedded {} records to {} dims", bank.len(), emb.cols());
    write_run_manifests("embed", a, None, &[&a.checkpoint, &a.bank], &[&a.out])
}

pub fn fit_reduce(a: &FitReduceArgs) -> Result<(), CliError> {
    let mut bank = load(&a.fit_bank, FeatureBank::load)?;
    let mut inputs: Vec<&Path> = vec![&a.fit_bank];
    if let Some(m) = &a.fit_manifest {
        bank = bank_for_manifest(&bank, &load(m, DatasetManifest::load)?)?;
        inputs.push(m);
    }
    if a.out_dim == 0 || a.out_dim > bank.dim() {
        return Err(usage(format!("--out-dim {} must lie in 1..={}", a.out_dim, bank.dim())));
    }
    let model = pca_fit_with(&bank.to_matrix(), a.out_dim, a.whiten)?;
    model.save(&a.out)?;
    log::info!(
        "PCA {} → {} on {} records, leading variance {:.6}",
        model.in_dim(),
        model.out_dim(),
        bank.len(),
        model.explained_variance[0]
    );
    write_run_manifests("fit-reduce", a, None, &inputs, &[&a.out])
}

pub fn reduce(a: &ReduceArgs) -> Result<(), CliError> {
    let bank = load(&a.bank, FeatureBank::load)?;
    let cfg = ReduceConfig {
        method: match a.method {
            MethodArg::Pca => ReduceMethod::Pca,
            MethodArg::Avgpool => ReduceMethod::Avgpool,
        },
        out_dim: a.out_dim,
        renormalize_after: !a.no_renormalize,
    };
    cfg.validate(bank.dim()).map_err(|e| usage(e.to_string()))?;
    let mut inputs: Vec<&Path> = vec![&a.bank];
    let pca = match (cfg.method, &a.pca) {
        (ReduceMethod::Pca, None) => return Err(usage("--method pca needs --pca <model>")),
        (ReduceMethod::Pca, Some(p)) => {
            inputs.push(p);
            Some(load(p, PcaModel::load)?)
        }
        (ReduceMethod::Avgpool, _) => None,
    };
    let y = reduce_rows(&bank.to_matrix(), &cfg, pca.as_ref())?;
    FeatureBank::from_matrix(bank.ids().to_vec(), &y)?.save(&a.out)?;
    log::info!("reduced {} records {} → {} ({})", bank.len(), bank.dim(), y.cols(), cfg.method);
    write_run_manifests("reduce", a, None, &inputs, &[&a.out])
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let manifest = load(&a.manifest, DatasetManifest::load)?;
    let bank = load(&a.bank, FeatureBank::load)?;
    let index = build_index(&bank_for_manifest(&bank, &manifest)?, &manifest)?;
    let mut inputs: Vec<&Path> = vec![&a.bank, &a.manifest];
    let queries = if a.query_bank.is_some() || a.query_manifest.is_some() {
        let qm = match &a.query_manifest {
            Some(p) => {
                inputs.push(p);
                load(p, DatasetManifest::load)?
            }
            None => manifest.clone(),
        };
        let qb = match &a.query_bank {
            Some(p) => {
                inputs.push(p);
                load(p, FeatureBank::load)?
            }
            None => bank.clone(),
        };
        build_index(&bank_for_manifest(&qb, &qm)?, &qm)?
    } else {
        index.clone()
    };
    let cfg = EvalConfig { k: a.k as usize, precision_k: a.precision_k as usize, exclude_self: !a.keep_self };
    let report = evaluate_index(&index, &queries, &cfg)?;
    log::info!(
        "mAP@{} {:.6} over {} queries ({} skipped)",
        cfg.k,
        report.map,
        report.queries.len(),
        report.skipped.len()
    );
    emit(a.out.as_deref(), &report.to_text())?;
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(p) = &a.out {
        outputs.push(p);
    }
    if let Some(p) = &a.json {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(p, text)?;
        outputs.push(p);
    }
    if let Some(p) = &a.per_query {
        std::fs::write(p, report.per_query_text())?;
        outputs.push(p);
    }
    write_run_manifests("evaluate", a, None, &inputs, &outputs)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    if a.batch_size < 2 {
        return Err(usage("--batch-size must be at least 2"));
    }
    let bank = load(&a.bank, FeatureBank::load)?;
    let manifest = load(&a.manifest, DatasetManifest::load)?;
    let all = Split { train: manifest.ids(), validation: Vec::new(), validation_classes: Vec::new(), seed: a.seed };
    let set = training_set(&bank, &manifest, &all)?;
    let mut inputs: Vec<&Path> = vec![&a.bank, &a.manifest];
    let model = match &a.checkpoint {
        Some(p) => {
            inputs.push(p);
            let m = load(p, MetricModel::load)?;
            if m.classes != set.classes {
                return Err(CliError::Runtime("checkpoint classes differ from the manifest's classes".into()));
            }
            m
        }
        None => {
            let cfg = TrainConfig {
                seed: a.seed,
                model: ModelConfig { embedding_dim: a.embedding_dim, ..ModelConfig::default() },
                ..TrainConfig::default()
            };
            init_model(&set, &cfg)?
        }
    };
    let mut rows: Vec<usize> = (0..set.x.rows()).collect();
    RngStream::new(a.seed).shuffle(&mut rows);
    rows.truncate(a.batch_size);
    let labels: Vec<usize> = rows.iter().map(|&r| set.labels[r]).collect();
    let report = grad_check(&model, &set.x.select_rows(&rows), &labels, a.epsilon, a.coords, a.seed)?;
    emit(a.out.as_deref(), &report.to_text())?;
    match &a.out {
        Some(p) => write_run_manifests("gradcheck", a, Some(a.seed), &inputs, &[p]),
        None => Ok(()),
    }
}

pub fn margins(a: &MarginsArgs) -> Result<(), CliError> {
    let manifest = load(&a.manifest, DatasetManifest::load)?;
    let stats = class_stats(&manifest)?;
    let schedule = compute_dynamic_margins(&stats, a.margin_min, a.margin_max, a.margin_lambda)
        .map_err(|e| usage(e.to_string()))?;
    let mut rows: Vec<(&String, usize, f64)> =
        stats.counts.iter().zip(&schedule.margins).map(|((c, &n), &m)| (c, n, m)).collect();
    rows.sort_by(|x, y| x.1.cmp(&y.1).then(x.0.cmp(y.0)));
    let mut text = String::from("class,count,margin\n");
    for (c, n, m) in rows {
        text.push_str(&format!("{c},{n},{m}\n"));
    }
    emit(a.out.as_deref(), &text)?;
    match &a.out {
        Some(p) => write_run_manifests("margins", a, None, &[&a.manifest], &[p]),
        None => Ok(()),
    }
}
