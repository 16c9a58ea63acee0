use super::{DatasetManifest, FeatureBank, ManifestEntry};
use crate::error::{Error, Result};
use crate::numkit::{norm2, RngStream};

/// How many samples each synthetic class receives.
#[derive(Debug, Clone, PartialEq)]
pub enum CountLaw {
    Fixed(usize),
    PerClass(Vec<usize>),
    /// Uniform integer in `min..=max`, drawn per class.
    Uniform {
        min: usize,
        max: usize,
    },
}

/// Within-class noise around each center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// `σ · N(0, I)`.
    Isotropic,
    /// Consecutive blocks of `block` coordinates share a common factor:
    /// covariance per block is `σ² ((1 − ρ) I + ρ 11ᵀ)`.
    BlockCorrelated { block: usize, rho: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub counts: CountLaw,
    pub dim: usize,
    pub sigma_within: f64,
    pub n_verticals: usize,
    pub noise: NoiseModel,
    /// When set, class centers are drawn inside a random subspace of this
    /// dimension instead of the full space.
    pub center_rank: Option<usize>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_classes: usize, counts: CountLaw, dim: usize, sigma_within: f64, seed: u64) -> Self {
        SynthConfig {
            n_classes,
            counts,
            dim,
            sigma_within,
            n_verticals: 4,
            noise: NoiseModel::Isotropic,
            center_rank: None,
            seed,
        }
    }
}

const CENTER_STREAM: u64 = 1;
const COUNT_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

pub fn class_label(c: usize) -> String {
    format!("c{c:04}")
}

/// Gaussian clusters around random unit-norm centers.
///
/// Class `c` is labelled `c{c:04}`, its records `c{c:04}_{i:04}`, and it
/// belongs to vertical `v{c mod n_verticals}`. Records are emitted class by
/// class.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(FeatureBank, DatasetManifest)> {
    if cfg.n_classes < 2 {
        return Err(Error::invalid(format!("synthetic data needs at least 2 classes, got {}", cfg.n_classes)));
    }
    if cfg.dim < 2 {
        return Err(Error::invalid(format!("dimension {} < 2", cfg.dim)));
    }
    if !(cfg.sigma_within > 0.0 && cfg.sigma_within.is_finite()) {
        return Err(Error::invalid(format!("within-class spread {} must be positive", cfg.sigma_within)));
    }
    if cfg.n_verticals == 0 {
        return Err(Error::invalid("at least one vertical is required"));
    }
    if let Some(r) = cfg.center_rank {
        if r == 0 || r > cfg.dim {
            return Err(Error::invalid(format!("center rank {r} outside 1..={}", cfg.dim)));
        }
    }
    if let NoiseModel::BlockCorrelated { block, rho } = cfg.noise {
        if block == 0 || !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!(
                "block-correlated noise needs block ≥ 1 and ρ in [0, 1], got {block}, {rho}"
            )));
        }
    }

    let counts = resolve_counts(cfg)?;
    let centers = draw_centers(cfg);

    let mut noise_rng = RngStream::derived(cfg.seed, NOISE_STREAM);
    let total: usize = counts.iter().sum();
    let mut ids = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * cfg.dim);
    let mut entries = Vec::with_capacity(total);
    let mut sample = vec![0.0; cfg.dim];
    for (c, (&n, center)) in counts.iter().zip(&centers).enumerate() {
        let label = class_label(c);
        let vertical = format!("v{}", c % cfg.n_verticals);
        for i in 0..n {
            draw_noise(&mut noise_rng, cfg, &mut sample);
            let id = format!("{label}_{i:04}");
            data.extend(center.iter().zip(&sample).map(|(&m, &z)| (m + cfg.sigma_within * z) as f32));
            entries.push(ManifestEntry::new(id.clone(), label.clone(), vertical.clone()));
            ids.push(id);
        }
    }
    Ok((FeatureBank::new(cfg.dim, ids, data)?, DatasetManifest::new(entries)?))
}

fn resolve_counts(cfg: &SynthConfig) -> Result<Vec<usize>> {
    let counts = match &cfg.counts {
        CountLaw::Fixed(n) => vec![*n; cfg.n_classes],
        CountLaw::PerClass(v) => {
            if v.len() != cfg.n_classes {
                return Err(Error::invalid(format!("{} per-class counts for {} classes", v.len(), cfg.n_classes)));
            }
            v.clone()
        }
        CountLaw::Uniform { min, max } => {
            if min > max {
                return Err(Error::invalid(format!("count range {min}..={max} is empty")));
            }
            let mut rng = RngStream::derived(cfg.seed, COUNT_STREAM);
            (0..cfg.n_classes).map(|_| min + rng.below(max - min + 1)).collect()
        }
    };
    if counts.contains(&0) {
        return Err(Error::invalid("every class needs at least one sample"));
    }
    Ok(counts)
}

fn draw_centers(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = RngStream::derived(cfg.seed, CENTER_STREAM);
    let basis = cfg.center_rank.map(|r| orthonormal_basis(&mut rng, r, cfg.dim));
    (0..cfg.n_classes)
        .map(|_| loop {
            let v: Vec<f64> = match &basis {
                None => (0..cfg.dim).map(|_| rng.gaussian()).collect(),
                Some(b) => {
                    let coef: Vec<f64> = (0..b.len()).map(|_| rng.gaussian()).collect();
                    (0..cfg.dim).map(|j| b.iter().zip(&coef).map(|(row, c)| row[j] * c).sum()).collect()
                }
            };
            let n = norm2(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// `rank` orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn orthonormal_basis(rng: &mut RngStream, rank: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn draw_noise(rng: &mut RngStream, cfg: &SynthConfig, out: &mut [f64]) {
    match cfg.noise {
        NoiseModel::Isotropic => out.iter_mut().for_each(|z| *z = rng.gaussian()),
        NoiseModel::BlockCorrelated { block, rho } => {
            let (shared_w, own_w) = (rho.sqrt(), (1.0 - rho).sqrt());
            for chunk in out.chunks_mut(block) {
                let shared = rng.gaussian();
                chunk.iter_mut().for_each(|z| *z = shared_w * shared + own_w * rng.gaussian());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::class_stats;

    #[test]
    fn tiny_spread_collapses_to_centers() {
        let cfg = SynthConfig::new(3, CountLaw::Fixed(4), 8, 1e-15, 7);
        let (bank, m) = synth_dataset(&cfg).unwrap();
        let x = bank.to_matrix();
        for c in 0..3 {
            let first = x.row(c * 4).to_vec();
            assert!((norm2(&first) - 1.0).abs() < 1e-6);
            for i in 1..4 {
                let row = x.row(c * 4 + i);
                assert!(row.iter().zip(&first).all(|(a, b)| (a - b).abs() < 1e-7));
                assert_eq!(m.entries()[c * 4 + i].class_label, class_label(c));
            }
        }
    }

    #[test]
    fn fixed_counts_give_equal_stats() {
        let cfg = SynthConfig::new(6, CountLaw::Fixed(5), 4, 0.1, 1);
        let (_, m) = synth_dataset(&cfg).unwrap();
        let s = class_stats(&m).unwrap();
        assert_eq!((s.n_min, s.n_max), (5, 5));
    }

    #[test]
    fn nearest_center_accuracy() {
        let cfg = SynthConfig::new(20, CountLaw::Fixed(10), 64, 0.05, 3);
        let (bank, m) = synth_dataset(&cfg).unwrap();
        let centers = draw_centers(&cfg);
        let x = bank.to_matrix();
        let correct = (0..x.rows())
            .filter(|&r| {
                let row = x.row(r);
                let best = (0..centers.len())
                    .min_by(|&a, &b| {
                        let da: f64 = row.iter().zip(&centers[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = row.iter().zip(&centers[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                m.entries()[r].class_label == class_label(best)
            })
            .count();
        assert!(correct as f64 / x.rows() as f64 >= 0.99);
    }

    #[test]
    fn verticals_round_robin_and_non_empty() {
        let mut cfg = SynthConfig::new(7, CountLaw::Fixed(2), 4, 0.1, 1);
        cfg.n_verticals = 3;
        let (_, m) = synth_dataset(&cfg).unwrap();
        let verticals: std::collections::BTreeSet<&str> = m.entries().iter().map(|e| e.vertical.as_str()).collect();
        assert_eq!(verticals.len(), 3);
        assert_eq!(m.entries()[2 * 4].vertical, "v1");
    }

    #[test]
    fn deterministic_and_uniform_counts_in_range() {
        let cfg = SynthConfig::new(30, CountLaw::Uniform { min: 5, max: 45 }, 8, 0.3, 11);
        let (b1, m1) = synth_dataset(&cfg).unwrap();
        let (b2, m2) = synth_dataset(&cfg).unwrap();
        assert_eq!(b1.to_bytes(), b2.to_bytes());
        assert_eq!(m1, m2);
        let s = class_stats(&m1).unwrap();
        assert!(s.n_min >= 5 && s.n_max <= 45);
    }

    #[test]
    fn low_rank_centers_span_subspace() {
        let mut cfg = SynthConfig::new(10, CountLaw::Fixed(1), 16, 1e-12, 2);
        cfg.center_rank = Some(3);
        let x = synth_dataset(&cfg).unwrap().0.to_matrix();
        let gram = x.transposed_matmul(&x).unwrap();
        let e = crate::numkit::symmetric_eig(&gram).unwrap();
        assert!(e.values[2] > 1e-3);
        assert!(e.values[3].abs() < 1e-6);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(synth_dataset(&SynthConfig::new(1, CountLaw::Fixed(3), 4, 0.1, 0)).is_err());
        assert!(synth_dataset(&SynthConfig::new(3, CountLaw::Fixed(3), 1, 0.1, 0)).is_err());
        assert!(synth_dataset(&SynthConfig::new(3, CountLaw::Fixed(3), 4, 0.0, 0)).is_err());
        assert!(synth_dataset(&SynthConfig::new(3, CountLaw::Fixed(0), 4, 0.1, 0)).is_err());
        assert!(synth_dataset(&SynthConfig::new(3, CountLaw::PerClass(vec![1, 2]), 4, 0.1, 0)).is_err());
    }
}
