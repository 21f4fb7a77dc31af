//! Evaluation metrics for predicted belief trajectories.

mod cluster;
mod dtw;
mod report;
mod stats;
mod structure;

pub use cluster::{adjusted_rand_index, cluster_trajectories, kmeans, zscore_columns, Clustering};
pub use dtw::{dtw, dtw_avg};
pub use report::{ratings_to_unit, MetricsReport};
pub use stats::{average_ranks, belief_change_groups, cohens_d, cohens_d_groups, spearman};
pub use structure::{pairwise_structure_score, per_belief_spearman, StructureScore};
