use rayon::prelude::*;

use super::atlas::NetworkAtlas;
use super::recording::{Label, ParcelTimeSeries};
use super::tokens::{sample_segments, tokenize, SegmentSpec, TokenGrid};
use crate::error::Result;
use crate::seed;

/// A recording reduced to its tokenized segments.
#[derive(Clone, Debug)]
pub struct PreparedRecording {
    pub subject_id: String,
    pub session_index: u32,
    pub label: Label,
    pub age_years: Option<f64>,
    pub segments: Vec<TokenGrid>,
}

impl PreparedRecording {
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.session_index)
    }
}

/// Aligns, samples and tokenizes one recording. Segment offsets come from a
/// stream keyed by `(seed, subject/session)`, so they do not depend on which
/// other recordings are prepared alongside it.
pub fn prepare_recording(
    rec: &ParcelTimeSeries,
    atlas: &NetworkAtlas,
    spec: &SegmentSpec,
    seed_value: u64,
) -> Result<PreparedRecording> {
    let aligned = atlas.align(&rec.values)?;
    let mut rng = seed::rng(seed_value, "segments", seed::key(&rec.key()));
    let segments = sample_segments(&aligned, spec, &mut rng)?
        .iter()
        .map(|s| tokenize(&s.values, spec, atlas))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedRecording {
        subject_id: rec.subject_id.clone(),
        session_index: rec.session_index,
        label: rec.label,
        age_years: rec.age_years,
        segments,
    })
}

/// Prepares every recording, skipping (with a warning on stderr) those that
/// are shorter than one segment.
pub fn prepare_all<'a, I>(
    recordings: I,
    atlas: &NetworkAtlas,
    spec: &SegmentSpec,
    seed_value: u64,
) -> Result<Vec<PreparedRecording>>
where
    I: IntoIterator<Item = &'a ParcelTimeSeries>,
{
    let recs: Vec<&ParcelTimeSeries> = recordings.into_iter().collect();
    let prepared: Vec<Option<PreparedRecording>> = recs
        .par_iter()
        .map(|r| {
            if r.timepoints() < spec.length {
                eprintln!(
                    "warning: skipping {} ({} timepoints < segment length {})",
                    r.key(),
                    r.timepoints(),
                    spec.length
                );
                return Ok(None);
            }
            prepare_recording(r, atlas, spec, seed_value).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(prepared.into_iter().flatten().collect())
}
