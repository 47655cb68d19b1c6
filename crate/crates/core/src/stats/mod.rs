//! Cohort statistics: descriptives, Wilson intervals, exact Mann-Whitney,
//! aligned-rank permutation ANOVA, KDE curves, condition slices, and the
//! report bundle that serializes all of it.

pub mod anova;
pub mod dataset;
pub mod descriptive;
pub mod kde;
pub mod mwu;
pub mod report;
pub mod slices;
pub mod wilson;

pub use anova::{rank_permutation_anova, EffectId, EffectResult, EffectsTable, PermutationMode};
pub use dataset::{CohortDataset, CohortObservation, Group, CENSORED_IMPUTED_S};
pub use descriptive::{descriptive_summary, DescriptiveSummary};
pub use kde::{kde_curve, silverman_bandwidth};
pub use mwu::{mann_whitney_test, MwuMode, MwuResult};
pub use report::{emit_report, ReportBundle, ReportFormat};
pub use slices::{condition_slice_tests, subset_comparison, ConditionSliceRow, SubsetRow};
pub use wilson::{wilson_interval, IntervalEstimate};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    /// Input violates a mathematical precondition (empty sample, k > n, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// The dataset cannot support the requested analysis (degenerate factor,
    /// missing group, empty design cell, ...).
    #[error("design error: {0}")]
    Design(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
