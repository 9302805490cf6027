//! Dataset partitioning.

use rand::seq::SliceRandom;

use super::{DataError, LabeledWindowSet};

/// How to partition a set. Partitions are disjoint and exhaustive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Per-class shuffled allocation into train/test (and optionally
    /// validation) fractions.
    RandomStratified {
        train_fraction: f64,
        val_fraction: Option<f64>,
        seed: u64,
    },
    /// All windows of one subject become the test set.
    LeaveOneSubjectOut { test_subject: u32 },
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: LabeledWindowSet,
    pub test: LabeledWindowSet,
    pub val: Option<LabeledWindowSet>,
}

pub fn split(set: &LabeledWindowSet, spec: &SplitSpec) -> Result<SplitResult, DataError> {
    match *spec {
        SplitSpec::RandomStratified {
            train_fraction,
            val_fraction,
            seed,
        } => {
            let fraction_ok = |v: f64| v.is_finite() && v > 0.0;
            if !(fraction_ok(train_fraction) && train_fraction < 1.0)
                || val_fraction.is_some_and(|v| !(fraction_ok(v) && v + train_fraction < 1.0))
            {
                return Err(DataError::BadFractions);
            }
            let labels = set.labels();
            let mut rng = crate::rng::derived(seed, "split");
            let mut train_idx = Vec::new();
            let mut val_idx = Vec::new();
            let mut test_idx = Vec::new();
            for class in 0..set.class_count() {
                let mut idx: Vec<usize> =
                    (0..set.len()).filter(|&i| labels[i] == class).collect();
                idx.shuffle(&mut rng);
                let n = idx.len();
                let n_train = ((n as f64 * train_fraction).round() as usize).min(n);
                let n_val = val_fraction
                    .map(|v| ((n as f64 * v).round() as usize).min(n - n_train))
                    .unwrap_or(0);
                train_idx.extend_from_slice(&idx[..n_train]);
                val_idx.extend_from_slice(&idx[n_train..n_train + n_val]);
                test_idx.extend_from_slice(&idx[n_train + n_val..]);
            }
            train_idx.sort_unstable();
            val_idx.sort_unstable();
            test_idx.sort_unstable();
            Ok(SplitResult {
                train: set.subset(&train_idx),
                test: set.subset(&test_idx),
                val: val_fraction.map(|_| set.subset(&val_idx)),
            })
        }
        SplitSpec::LeaveOneSubjectOut { test_subject } => {
            let subjects = set.subjects().ok_or(DataError::NoSubjects)?;
            if !subjects.contains(&test_subject) {
                return Err(DataError::UnknownSubject(test_subject));
            }
            let test_idx: Vec<usize> = (0..set.len())
                .filter(|&i| subjects[i] == test_subject)
                .collect();
            let train_idx: Vec<usize> = (0..set.len())
                .filter(|&i| subjects[i] != test_subject)
                .collect();
            Ok(SplitResult {
                train: set.subset(&train_idx),
                test: set.subset(&test_idx),
                val: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tda::SignalWindow;

    fn toy_set(n_per_class: usize, classes: usize, subjects: Option<Vec<u32>>) -> LabeledWindowSet {
        let mut windows = Vec::new();
        for c in 0..classes {
            for i in 0..n_per_class {
                windows.push(
                    SignalWindow::new(1, 2, vec![c as f64, i as f64], Some(c)).unwrap(),
                );
            }
        }
        LabeledWindowSet::new(windows, classes, subjects, 0).unwrap()
    }

    #[test]
    fn stratified_is_disjoint_and_exhaustive() {
        let set = toy_set(20, 3, None);
        let spec = SplitSpec::RandomStratified {
            train_fraction: 0.75,
            val_fraction: None,
            seed: 4,
        };
        let out = split(&set, &spec).unwrap();
        assert_eq!(out.train.len() + out.test.len(), set.len());
        assert_eq!(out.train.len(), 45);
        // Window multiset is preserved.
        let mut all: Vec<_> = out
            .train
            .windows()
            .iter()
            .chain(out.test.windows())
            .map(|w| w.values().to_vec())
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut orig: Vec<_> = set.windows().iter().map(|w| w.values().to_vec()).collect();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, orig);
    }

    #[test]
    fn same_seed_same_split() {
        let set = toy_set(10, 2, None);
        let spec = SplitSpec::RandomStratified {
            train_fraction: 0.6,
            val_fraction: Some(0.2),
            seed: 11,
        };
        let a = split(&set, &spec).unwrap();
        let b = split(&set, &spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.val.unwrap(), b.val.unwrap());
    }

    #[test]
    fn leave_one_subject_out() {
        let subjects = vec![0, 0, 1, 1, 0, 1, 2, 2, 2, 0, 1, 2];
        let set = toy_set(6, 2, Some(subjects.clone()));
        let out = split(
            &set,
            &SplitSpec::LeaveOneSubjectOut { test_subject: 1 },
        )
        .unwrap();
        assert_eq!(out.test.len(), subjects.iter().filter(|&&s| s == 1).count());
        assert!(out.test.subjects().unwrap().iter().all(|&s| s == 1));
        assert!(out.train.subjects().unwrap().iter().all(|&s| s != 1));
        assert!(matches!(
            split(&set, &SplitSpec::LeaveOneSubjectOut { test_subject: 9 }),
            Err(DataError::UnknownSubject(9))
        ));
        let no_subj = toy_set(3, 2, None);
        assert!(matches!(
            split(&no_subj, &SplitSpec::LeaveOneSubjectOut { test_subject: 0 }),
            Err(DataError::NoSubjects)
        ));
    }
}
