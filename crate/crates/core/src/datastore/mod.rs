//! Feature banks, dataset manifests, class statistics, unseen-class splits
//! and synthetic clustered datasets.

mod bank;
mod manifest;
mod split;
mod synth;

pub(crate) use bank::ByteReader;
pub use bank::{FeatureBank, BANK_VERSION, HEADER_LEN, MAGIC};
pub use manifest::{
    class_stats, filter_min_samples, is_valid_id, ClassStats, DatasetManifest, ManifestEntry, MANIFEST_HEADER,
};
pub use split::{split_unseen_classes, validation_class_count, Split};
pub use synth::{class_label, synth_dataset, CountLaw, NoiseModel, SynthConfig};

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn manifest_strategy() -> impl Strategy<Value = DatasetManifest> {
        proptest::collection::vec(0usize..8, 1..80).prop_map(|labels| {
            DatasetManifest::new(
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, c)| ManifestEntry::new(format!("id{i}"), format!("k{c}"), format!("v{}", c % 3)))
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn bank_round_trip_is_lossless(values in proptest::collection::vec(-1e30f32..1e30, 0..60)) {
            let dim = 3;
            let n = values.len() / dim;
            let data = values[..n * dim].to_vec();
            let ids = (0..n).map(|i| format!("r{i}")).collect();
            let bank = FeatureBank::new(dim, ids, data).unwrap();
            let back = FeatureBank::from_bytes(&bank.to_bytes()).unwrap();
            prop_assert!(bank.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(bank.ids(), back.ids());
        }

        #[test]
        fn filter_is_idempotent(m in manifest_strategy(), min in 1usize..6) {
            let once = filter_min_samples(&m, min);
            prop_assert_eq!(filter_min_samples(&once, min), once);
        }

        #[test]
        fn split_is_class_disjoint_partition(m in manifest_strategy(), frac in 0.05f64..0.95, seed in any::<u64>()) {
            prop_assume!(m.classes().len() >= 2);
            let n_val = validation_class_count(frac, m.classes().len());
            prop_assume!(n_val >= 1 && n_val < m.classes().len());
            let s = split_unseen_classes(&m, frac, seed).unwrap();
            let tr: std::collections::HashSet<_> = m.subset(&s.train).classes().into_iter().collect();
            let va: std::collections::HashSet<_> = m.subset(&s.validation).classes().into_iter().collect();
            prop_assert!(tr.is_disjoint(&va));
            prop_assert_eq!(va.len(), n_val);
            let mut all: Vec<_> = s.train.iter().chain(&s.validation).cloned().collect();
            all.sort();
            let mut ids = m.ids();
            ids.sort();
            prop_assert_eq!(all, ids);
        }
    }
}
