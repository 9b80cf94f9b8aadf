use std::collections::BTreeMap;

use rayon::prelude::*;

use super::stats::{mean, sample_variance, welch_t, WelchResult};
use crate::data::{Label, PreparedRecording};
use crate::error::Result;
use crate::model::ModelState;

#[derive(Clone, Debug, PartialEq)]
pub struct NormRow {
    pub subject: String,
    pub session: u32,
    pub age: Option<f64>,
    pub label: Label,
    pub norm: f64,
}

/// Embedding norm per recording (mean over its segments), sorted by
/// `(subject, session)`.
pub fn norm_trajectories(state: &ModelState, recordings: &[PreparedRecording]) -> Result<Vec<NormRow>> {
    let mut rows: Vec<NormRow> = recordings
        .par_iter()
        .map(|r| {
            let norms = r
                .segments
                .iter()
                .map(|g| state.embedding_summary(g).map(|(_, n)| n))
                .collect::<Result<Vec<_>>>()?;
            Ok(NormRow {
                subject: r.subject_id.clone(),
                session: r.session_index,
                age: r.age_years,
                label: r.label,
                norm: mean(&norms),
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.subject.cmp(&b.subject).then(a.session.cmp(&b.session)));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub label: Label,
    pub mean: f64,
    /// Sample standard deviation; `NaN` for a single recording.
    pub sd: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairTest {
    pub a: Label,
    pub b: Label,
    pub welch: WelchResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub groups: Vec<GroupSummary>,
    /// Every label pair where both groups have `n ≥ 2`.
    pub tests: Vec<PairTest>,
}

pub fn group_stats(rows: &[NormRow]) -> Result<GroupStats> {
    let mut by: BTreeMap<Label, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.label).or_default().push(r.norm);
    }
    let groups = by
        .iter()
        .map(|(&label, v)| GroupSummary {
            label,
            mean: mean(v),
            sd: if v.len() > 1 {
                sample_variance(v).sqrt()
            } else {
                f64::NAN
            },
            n: v.len(),
        })
        .collect();
    let labels: Vec<&Label> = by.keys().collect();
    let mut tests = Vec::new();
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            let (va, vb) = (&by[*a], &by[*b]);
            if va.len() >= 2 && vb.len() >= 2 {
                tests.push(PairTest {
                    a: **a,
                    b: **b,
                    welch: welch_t(va, vb)?,
                });
            }
        }
    }
    Ok(GroupStats { groups, tests })
}
