use std::collections::HashSet;

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::numkit::RngStream;

/// Train/validation partition with no class on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub validation_classes: Vec<String>,
    pub seed: u64,
}

/// Number of validation classes for a fraction, `⌈fraction · n⌉`, with a
/// small slack so that e.g. `0.7 · 10` rounds to 7 rather than 8.
pub fn validation_class_count(fraction: f64, n_classes: usize) -> usize {
    ((fraction * n_classes as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Assigns whole classes to the validation side.
///
/// Classes are sorted, shuffled with `seed`, and the first
/// `⌈fraction · #classes⌉` go to validation. Ids keep manifest order on both
/// sides.
pub fn split_unseen_classes(manifest: &DatasetManifest, val_class_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_class_fraction > 0.0 && val_class_fraction < 1.0) {
        return Err(Error::invalid(format!("validation class fraction {val_class_fraction} must lie in (0, 1)")));
    }
    let mut classes = manifest.classes();
    if classes.len() < 2 {
        return Err(Error::invalid(format!("an unseen-class split needs at least 2 classes, found {}", classes.len())));
    }
    let n_val = validation_class_count(val_class_fraction, classes.len());
    if n_val == 0 || n_val >= classes.len() {
        return Err(Error::invalid(format!(
            "fraction {val_class_fraction} of {} classes leaves one side empty",
            classes.len()
        )));
    }
    RngStream::new(seed).shuffle(&mut classes);
    let mut validation_classes: Vec<String> = classes[..n_val].to_vec();
    validation_classes.sort();
    let val_set: HashSet<&str> = validation_classes.iter().map(String::as_str).collect();

    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for e in manifest.entries() {
        if val_set.contains(e.class_label.as_str()) {
            validation.push(e.id.clone());
        } else {
            train.push(e.id.clone());
        }
    }
    Ok(Split { train, validation, validation_classes, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::ManifestEntry;

    fn manifest(n_classes: usize, per_class: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..per_class {
            for c in 0..n_classes {
                entries.push(ManifestEntry::new(format!("c{c}_{i}"), format!("c{c}"), "v"));
            }
        }
        DatasetManifest::new(entries).unwrap()
    }

    fn classes_of(m: &DatasetManifest, ids: &[String]) -> HashSet<String> {
        m.subset(ids).classes().into_iter().collect()
    }

    #[test]
    fn ten_classes_fifth_to_validation() {
        let m = manifest(10, 4);
        let s = split_unseen_classes(&m, 0.2, 3).unwrap();
        assert_eq!(s.validation_classes.len(), 2);
        let (tr, va) = (classes_of(&m, &s.train), classes_of(&m, &s.validation));
        assert!(tr.is_disjoint(&va));
        assert_eq!(va.len(), 2);
        assert_eq!(s.validation.len(), 8);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = manifest(12, 3);
        assert_eq!(split_unseen_classes(&m, 0.3, 99).unwrap(), split_unseen_classes(&m, 0.3, 99).unwrap());
    }

    #[test]
    fn half_of_four_classes() {
        let m = manifest(4, 5);
        let s = split_unseen_classes(&m, 0.5, 1).unwrap();
        let (tr, va) = (classes_of(&m, &s.train), classes_of(&m, &s.validation));
        assert_eq!((tr.len(), va.len()), (2, 2));
        let mut all: Vec<String> = s.train.iter().chain(&s.validation).cloned().collect();
        all.sort();
        let mut expect = m.ids();
        expect.sort();
        assert_eq!(all, expect);
    }

    #[test]
    fn rejects_single_class_and_bad_fraction() {
        assert!(split_unseen_classes(&manifest(1, 5), 0.5, 0).is_err());
        assert!(split_unseen_classes(&manifest(5, 2), 0.0, 0).is_err());
        assert!(split_unseen_classes(&manifest(5, 2), 1.0, 0).is_err());
        assert!(split_unseen_classes(&manifest(2, 2), 0.9, 0).is_err());
    }

    #[test]
    fn class_count_rounding() {
        assert_eq!(validation_class_count(0.7, 10), 7);
        assert_eq!(validation_class_count(0.2, 10), 2);
        assert_eq!(validation_class_count(0.25, 10), 3);
        assert_eq!(validation_class_count(0.5, 40), 20);
    }
}
