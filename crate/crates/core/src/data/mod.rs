//! Recording and atlas ingestion, network-aligned tokenization, masking and
//! subject-level splits.

pub mod atlas;
pub mod dataset;
pub mod mask;
pub mod recording;
pub mod split;
pub mod tokens;

pub use atlas::NetworkAtlas;
pub use dataset::{prepare_all, prepare_recording, PreparedRecording};
pub use mask::{make_mask_plan, make_random_mask_plan, mean_network_mask_size, MaskPlan};
pub use recording::{
    load_manifest, load_recording, read_manifest, save_recording, write_manifest, Label, ParcelTimeSeries,
};
pub use split::{split_subjects, split_subjects_stratified, CohortSplit, Part};
pub use tokens::{sample_segments, tokenize, untokenize, zscore_columns, Segment, SegmentSpec, TokenGrid};
