use std::collections::BTreeMap;

use super::manifest::{DatasetManifest, Splits};
use super::DatasetError;

/// Stratified train/validation split.
///
/// The validation total is `floor(n * fraction)`, clamped to `1..=n-1`. It is
/// shared among classes by largest remainder of `total * n_c / n`, so each
/// class gets within one sample of its proportional share. Within a class the
/// first samples in manifest (shuffled) order go to validation.
pub fn split_manifest(m: &DatasetManifest, validation_fraction: f64) -> Result<DatasetManifest, DatasetError> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "validation fraction {validation_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = m.samples.len();
    if n < 2 {
        return Err(DatasetError::Split(format!("{n} samples cannot populate both splits")));
    }
    let total = ((n as f64 * validation_fraction).floor() as usize).clamp(1, n - 1);

    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, s) in m.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }

    // Largest-remainder apportionment of `total` across classes.
    let mut quota: Vec<(u8, usize, f64)> = by_class
        .iter()
        .map(|(&c, idx)| {
            let exact = total as f64 * idx.len() as f64 / n as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = total - quota.iter().map(|q| q.1).sum::<usize>();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].2.partial_cmp(&quota[a].2).unwrap().then(quota[a].0.cmp(&quota[b].0)));
    for &k in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        let class_size = by_class[&quota[k].0].len();
        if quota[k].1 < class_size {
            quota[k].1 += 1;
            remaining -= 1;
        }
    }

    let mut validation = Vec::with_capacity(total);
    for (c, count, _) in &quota {
        validation.extend(by_class[c].iter().take(*count).copied());
    }
    validation.sort_unstable();
    let mut is_val = vec![false; n];
    for &i in &validation {
        is_val[i] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| !is_val[i]).collect();
    if train.is_empty() || validation.is_empty() {
        return Err(DatasetError::Split("split left one side empty".into()));
    }

    let mut out = m.clone();
    out.splits = Splits { train, validation };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Origin, SampleEntry, Skipped, MANIFEST_VERSION, SHUFFLE_ALGORITHM};
    use proptest::prelude::*;

    fn manifest(labels: &[u8]) -> DatasetManifest {
        let samples: Vec<SampleEntry> = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| SampleEntry { path: format!("x/{i}.png"), label, origin: Origin::Natural })
            .collect();
        let mut class_counts = BTreeMap::new();
        for &l in labels {
            *class_counts.entry(l).or_insert(0) += 1;
        }
        DatasetManifest {
            version: MANIFEST_VERSION,
            seed: 0,
            shuffle: SHUFFLE_ALGORITHM.into(),
            root: ".".into(),
            categories: vec!["a".into(), "b".into()],
            splits: Splits { train: (0..labels.len()).collect(), validation: vec![] },
            samples,
            class_counts,
            skipped: Skipped::default(),
        }
    }

    fn val_count(m: &DatasetManifest, class: u8) -> usize {
        m.validation_entries().filter(|s| s.label == class).count()
    }

    #[test]
    fn balanced_hundred_at_twenty_percent() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let s = split_manifest(&manifest(&labels), 0.2).unwrap();
        assert_eq!(s.splits.train.len(), 80);
        assert_eq!(s.splits.validation.len(), 20);
        assert_eq!(val_count(&s, 0), 10);
        assert_eq!(val_count(&s, 1), 10);
        s.check().unwrap();
    }

    #[test]
    fn three_samples_keep_one_for_validation() {
        let s = split_manifest(&manifest(&[0, 1, 0]), 0.33).unwrap();
        assert_eq!(s.splits.train.len(), 2);
        assert_eq!(s.splits.validation.len(), 1);
    }

    #[test]
    fn unbalanced_hundred_and_one() {
        let mut labels = vec![0u8; 51];
        labels.extend(vec![1u8; 50]);
        let s = split_manifest(&manifest(&labels), 0.2).unwrap();
        // Oracle: enumerate the assignment and compare with the proportional share.
        let v0 = val_count(&s, 0) as f64;
        let v1 = val_count(&s, 1) as f64;
        assert!((v0 - 10.2).abs() <= 1.0, "{v0}");
        assert!((v1 - 10.0).abs() <= 1.0, "{v1}");
    }

    #[test]
    fn rejects_bad_fraction_and_tiny_sets() {
        assert!(split_manifest(&manifest(&[0, 1]), 0.0).is_err());
        assert!(split_manifest(&manifest(&[0, 1]), 1.0).is_err());
        assert!(split_manifest(&manifest(&[0]), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn stratified_within_one_over_total(labels in proptest::collection::vec(0u8..2, 2..300), f in 0.05f64..0.95) {
            let m = manifest(&labels);
            let s = split_manifest(&m, f).unwrap();
            s.check().unwrap();
            let vt = s.splits.validation.len() as f64;
            for c in 0..2u8 {
                let prior = labels.iter().filter(|&&l| l == c).count() as f64 / labels.len() as f64;
                let share = val_count(&s, c) as f64 / vt;
                prop_assert!((share - prior).abs() <= 1.0 / vt + 1e-12);
            }
        }
    }
}
