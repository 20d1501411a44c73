//! Clustering agreement, event-level sorting scores, the unit-sampling
//! evaluation protocol, domain-shift ablation statistics and paired
//! significance testing.

mod agreement;
mod matching;
mod protocol;
mod wilcoxon;

pub use agreement::{adjusted_rand_index, silhouette_score};
pub use matching::{
    match_events, score_sorting, score_sorting_with_snr, scores_from_counts, MatchCounts, MeanSem, Scores,
    SortingReport, UnitScore,
};
pub use protocol::{ablation_report, protocol_ari, AblationReport, ProtocolResult};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult, EXACT_LIMIT};
