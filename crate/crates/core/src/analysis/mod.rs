//! Attention-derived contribution profiles, embedding-norm statistics and
//! classification metrics.

mod contrib;
mod metrics;
mod norms;
mod report;
mod stats;

pub use contrib::{
    collect_contributions, contribution_delta, contribution_profile, rank_heads, ranked_cells, token_networks,
    ContributionAccumulator, ContributionProfile, HeadScore,
};
pub use metrics::{classification_metrics, roc_auc, ClassificationReport, CLASS_COUNT};
pub use norms::{group_stats, norm_trajectories, GroupStats, GroupSummary, NormRow, PairTest};
pub use report::{
    describe_delta, format_classification, format_group_stats, read_matrix_csv, read_norms_csv, write_classification,
    write_contributions_csv, write_delta_csv, write_group_stats, write_matrix_csv, write_norms_csv, NORMS_HEADER,
};
pub use stats::{
    ln_gamma, mean, pearson, regularized_beta, sample_variance, student_t_two_sided, welch_t, WelchResult,
};
