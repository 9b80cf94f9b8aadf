use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::recording::{Label, ParcelTimeSeries};
use crate::error::{Error, Result};
use crate::seed;

/// Subject-level partition; every session of a subject lands in one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CohortSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl CohortSplit {
    pub fn part_of(&self, subject: &str) -> Option<Part> {
        let has = |v: &[String]| v.iter().any(|s| s == subject);
        if has(&self.train) {
            Some(Part::Train)
        } else if has(&self.val) {
            Some(Part::Val)
        } else if has(&self.test) {
            Some(Part::Test)
        } else {
            None
        }
    }

    /// Recordings whose subject is in `part`, in input order.
    pub fn select<'a>(&self, recordings: &'a [ParcelTimeSeries], part: Part) -> Vec<&'a ParcelTimeSeries> {
        let set: BTreeSet<&str> = match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
        .iter()
        .map(String::as_str)
        .collect();
        recordings
            .iter()
            .filter(|r| set.contains(r.subject_id.as_str()))
            .collect()
    }

    pub fn is_disjoint(&self) -> bool {
        let a: BTreeSet<_> = self.train.iter().collect();
        let b: BTreeSet<_> = self.val.iter().collect();
        let c: BTreeSet<_> = self.test.iter().collect();
        a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c)
    }
}

/// `(train, val, test)` sizes for `n` subjects; val and test get at least one.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let total = ratios.0 + ratios.1 + ratios.2;
    let val = ((ratios.1 / total * n as f64).round() as usize).max(1);
    let test = ((ratios.2 / total * n as f64).round() as usize).max(1);
    (n - val - test, val, test)
}

fn distinct_subjects(recordings: &[ParcelTimeSeries]) -> Vec<String> {
    let set: BTreeSet<&str> = recordings.iter().map(|r| r.subject_id.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// Shuffles distinct subjects with `seed` and cuts them by `ratios`.
pub fn split_subjects(
    recordings: &[ParcelTimeSeries],
    ratios: (f64, f64, f64),
    seed_value: u64,
) -> Result<CohortSplit> {
    let mut subjects = distinct_subjects(recordings);
    if subjects.len() < 3 {
        return Err(Error::Invalid(format!(
            "{} subjects cannot fill train/val/test splits",
            subjects.len()
        )));
    }
    subjects.shuffle(&mut seed::rng(seed_value, "split", 0));
    let (n_train, n_val, _) = split_sizes(subjects.len(), ratios);
    let test = subjects.split_off(n_train + n_val);
    let val = subjects.split_off(n_train);
    Ok(CohortSplit {
        train: subjects,
        val,
        test,
        seed: seed_value,
    })
}

/// Like [`split_subjects`], but splits each label group separately (a
/// subject's group is the label of its earliest session) so every class
/// reaches validation and test.
pub fn split_subjects_stratified(
    recordings: &[ParcelTimeSeries],
    ratios: (f64, f64, f64),
    seed_value: u64,
) -> Result<CohortSplit> {
    let mut first: BTreeMap<&str, (u32, Label)> = BTreeMap::new();
    for r in recordings {
        let e = first.entry(r.subject_id.as_str()).or_insert((r.session_index, r.label));
        if r.session_index < e.0 {
            *e = (r.session_index, r.label);
        }
    }
    let mut groups: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for (s, (_, l)) in first {
        groups.entry(l).or_default().push(s.to_string());
    }
    let mut out = CohortSplit {
        train: vec![],
        val: vec![],
        test: vec![],
        seed: seed_value,
    };
    for (gi, (label, mut subjects)) in groups.into_iter().enumerate() {
        if subjects.len() < 3 {
            return Err(Error::Invalid(format!(
                "label {label} has {} subjects; stratified split needs 3",
                subjects.len()
            )));
        }
        subjects.shuffle(&mut seed::rng(seed_value, "split-stratified", gi as u64));
        let (n_train, n_val, _) = split_sizes(subjects.len(), ratios);
        out.test.extend(subjects.split_off(n_train + n_val));
        out.val.extend(subjects.split_off(n_train));
        out.train.extend(subjects);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use netmae_autograd::Tensor;

    fn cohort(subjects: usize, sessions: u32) -> Vec<ParcelTimeSeries> {
        let mut v = Vec::new();
        for s in 0..subjects {
            for k in 0..sessions {
                let label = Label::CLASSES[s % 3];
                v.push(ParcelTimeSeries::new(format!("s{s:02}"), k, label, None, Tensor::zeros(&[2, 2])).unwrap());
            }
        }
        v
    }

    #[test]
    fn ten_subjects_split_eight_one_one() {
        let split = split_subjects(&cohort(10, 1), (0.8, 0.1, 0.1), 4).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (8, 1, 1));
        assert!(split.is_disjoint());
    }

    #[test]
    fn all_sessions_follow_their_subject() {
        let recs = cohort(10, 5);
        let split = split_subjects(&recs, (0.8, 0.1, 0.1), 11).unwrap();
        let mut counted = 0;
        for part in [Part::Train, Part::Val, Part::Test] {
            let chosen = split.select(&recs, part);
            counted += chosen.len();
            assert!(chosen.iter().all(|r| split.part_of(&r.subject_id) == Some(part)));
        }
        assert_eq!(counted, recs.len());
        let sub = &split.test[0];
        assert_eq!(recs.iter().filter(|r| &r.subject_id == sub).count(), 5);
    }

    #[test]
    fn same_seed_same_split() {
        let recs = cohort(30, 1);
        assert_eq!(
            split_subjects(&recs, (0.8, 0.1, 0.1), 2).unwrap(),
            split_subjects(&recs, (0.8, 0.1, 0.1), 2).unwrap()
        );
    }

    #[test]
    fn too_few_subjects() {
        assert!(split_subjects(&cohort(2, 3), (0.8, 0.1, 0.1), 0).is_err());
    }

    #[test]
    fn stratified_split_covers_every_class() {
        let recs = cohort(60, 2);
        let split = split_subjects_stratified(&recs, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (48, 6, 6));
        assert!(split.is_disjoint());
        for part in [Part::Val, Part::Test] {
            let labels: BTreeSet<Label> = split.select(&recs, part).iter().map(|r| r.label).collect();
            assert_eq!(labels.len(), 3);
        }
    }
}
