//! Validation statistics.

pub mod compare;
pub mod correlation;
pub mod ks;
pub mod overlap;
pub mod ranks;

pub use compare::{compare_true_vs_null, NullData, NullMode, ReplicateComparison, ValidationExport};
pub use correlation::{correlation_ranking, CorrelationMode, CorrelationRanking, CorrelationRow};
pub use ks::{ks_exact_two_sample, KsMethod, KsResult};
pub use overlap::{binomial, expert_overlap_prob, OverlapProbability};
pub use ranks::{rank_compare_table, RankRow, RankTable};
